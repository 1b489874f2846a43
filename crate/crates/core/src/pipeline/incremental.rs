//! Incremental activation maintenance: after an insertion, only the
//! dirty nodes are recomputed layer by layer, and the result matches a
//! full forward pass.

use crate::error::{Error, Result};
use crate::graph::{DirtySet, EventGraph};
use crate::nn::{relu, SplineKernel};
use crate::pipeline::model::{conv_edges, gnn_forward, HybridModel};

/// Post-ReLU activations per layer per node, tagged with the graph
/// version they were computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub version: u64,
    /// layers[l][node]
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl ActivationCache {
    pub fn empty(depth: usize) -> Self {
        ActivationCache { version: 0, layers: vec![Vec::new(); depth] }
    }

    /// Full forward pass over the whole graph; resets the cache.
    pub fn full_forward(model: &HybridModel, graph: &EventGraph) -> Result<Self> {
        let edges = conv_edges(graph);
        let fwd = gnn_forward(&model.gnn, graph.features(), &edges)?;
        let mut layers = Vec::with_capacity(fwd.layer_caches.len());
        for (_, pre) in &fwd.layer_caches {
            layers.push(pre.iter().map(|row| relu(row)).collect());
        }
        Ok(ActivationCache { version: graph.version(), layers })
    }

    /// Final-layer activations.
    pub fn output(&self) -> &[Vec<f64>] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn recompute_rows(
    kernel: &SplineKernel,
    inputs: &[Vec<f64>],
    graph: &EventGraph,
    nodes: impl Iterator<Item = usize>,
    out: &mut Vec<Vec<f64>>,
) {
    let residual = HybridModel::layer_residual(kernel);
    out.resize(graph.len(), Vec::new());
    for v in nodes {
        let mut acc = kernel.self_weight.matvec(&inputs[v]);
        for e in graph.in_edges(v) {
            let w = kernel.weight_at(e.feat);
            let msg = w.matvec(&inputs[e.src as usize]);
            for (a, m) in acc.iter_mut().zip(&msg) {
                *a += m;
            }
        }
        if residual {
            for (a, b) in acc.iter_mut().zip(&inputs[v]) {
                *a += b;
            }
        }
        out[v] = relu(&acc);
    }
}

/// Refresh cached activations for the nodes named by a dirty set. The
/// cache must be exactly one insertion behind the dirty set's version.
pub fn step_incremental(
    layers: &[SplineKernel],
    graph: &EventGraph,
    dirty: &DirtySet,
    cache: &mut ActivationCache,
) -> Result<()> {
    if dirty.per_layer.len() != layers.len() {
        return Err(Error::invalid(format!(
            "dirty set depth {} != layer count {}",
            dirty.per_layer.len(),
            layers.len()
        )));
    }
    if cache.version + 1 != dirty.version || graph.version() != dirty.version {
        return Err(Error::State(format!(
            "stale activation cache: cache version {}, dirty set version {}, graph version {}",
            cache.version,
            dirty.version,
            graph.version()
        )));
    }

    for (l, kernel) in layers.iter().enumerate() {
        let nodes = dirty.per_layer[l].iter().map(|&v| v as usize);
        if l == 0 {
            let inputs = graph.features();
            recompute_rows(kernel, inputs, graph, nodes, &mut cache.layers[0]);
        } else {
            let (head, tail) = cache.layers.split_at_mut(l);
            recompute_rows(kernel, &head[l - 1], graph, nodes, &mut tail[0]);
        }
    }
    cache.version = dirty.version;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use crate::graph::GraphConfig;
    use crate::pipeline::model::{fuse_node_feature_at, ModelConfig};
    use crate::pipeline::FeatureMap;
    use rand::Rng;
    use rand::SeedableRng;

    fn setup() -> (HybridModel, GraphConfig, FeatureMap) {
        let model = HybridModel::new(ModelConfig {
            gnn_hidden: 4,
            extractor_channels: [2, 2],
            seed: 11,
            ..ModelConfig::default()
        })
        .unwrap();
        let cfg = GraphConfig { radius: 0.12, beta: 1e-6, max_neighbors: 8, width: 16, height: 16 };
        let fmap = FeatureMap::zeros(4, 4, 2);
        (model, cfg, fmap)
    }

    #[test]
    fn incremental_matches_full_forward() {
        let (model, cfg, fmap) = setup();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut graph = EventGraph::with_window(cfg, (0, 100_000)).unwrap();
        let mut cache = ActivationCache::empty(model.cfg.gnn_layers);
        let mut t = 0u64;
        for _ in 0..60 {
            t += rng.gen_range(0..3000);
            let ev = Event {
                x: rng.gen_range(0..16),
                y: rng.gen_range(0..16),
                t,
                p: if rng.gen::<bool>() { 1 } else { -1 },
            };
            let dirty = graph.insert_event(ev, model.cfg.gnn_layers).unwrap();
            let newest = graph.len() - 1;
            fuse_node_feature_at(&mut graph, newest, &fmap);
            step_incremental(&model.gnn, &graph, &dirty, &mut cache).unwrap();
        }
        let full = ActivationCache::full_forward(&model, &graph).unwrap();
        assert_eq!(cache.layers.len(), full.layers.len());
        for (a, b) in cache.layers.iter().zip(&full.layers) {
            assert_eq!(a.len(), b.len());
            for (ra, rb) in a.iter().zip(b) {
                for (x, y) in ra.iter().zip(rb) {
                    assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn stale_cache_is_a_state_error() {
        let (model, cfg, fmap) = setup();
        let mut graph = EventGraph::with_window(cfg, (0, 1000)).unwrap();
        let mut cache = ActivationCache::empty(model.cfg.gnn_layers);
        let d1 = graph.insert_event(Event { x: 1, y: 1, t: 10, p: 1 }, model.cfg.gnn_layers).unwrap();
        fuse_node_feature_at(&mut graph, 0, &fmap);
        step_incremental(&model.gnn, &graph, &d1, &mut cache).unwrap();
        let _d2 = graph.insert_event(Event { x: 2, y: 1, t: 20, p: 1 }, model.cfg.gnn_layers).unwrap();
        fuse_node_feature_at(&mut graph, 1, &fmap);
        let d3 = graph.insert_event(Event { x: 3, y: 1, t: 30, p: 1 }, model.cfg.gnn_layers).unwrap();
        fuse_node_feature_at(&mut graph, 2, &fmap);
        // Skipped d2: the cache is two versions behind.
        match step_incremental(&model.gnn, &graph, &d3, &mut cache) {
            Err(Error::State(_)) => {}
            other => panic!("expected state error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dirty_set_noop() {
        let (model, cfg, _) = setup();
        let graph = EventGraph::with_window(cfg, (0, 1000)).unwrap();
        let mut cache = ActivationCache::empty(model.cfg.gnn_layers);
        let dirty = DirtySet { version: 1, per_layer: vec![Default::default(); model.cfg.gnn_layers] };
        // Version mismatch against an empty graph is the stale-state path.
        assert!(step_incremental(&model.gnn, &graph, &dirty, &mut cache).is_err());
    }
}
