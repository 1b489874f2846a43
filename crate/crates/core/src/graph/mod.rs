//! The spatiotemporal event graph.
//!
//! Events become nodes with normalized spatial coordinates (u/W, y/H) and
//! scaled timestamps β·t. Each new node connects to up to `max_neighbors`
//! earlier nodes within a Euclidean radius in (x̂, ŷ, t̂); edges point from
//! earlier to later, carry the 2-D feature ½(n_src − n_dst) + ½, and never
//! change once created, so appending events only dirties a local
//! neighborhood of the insertion point.

mod grid;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use grid::SpatialGrid;

/// Connectivity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Connection radius in normalized units.
    pub radius: f64,
    /// Timestamp scale: t̂ = beta * t_us.
    pub beta: f64,
    /// In-degree cap per node.
    pub max_neighbors: usize,
    pub width: u16,
    pub height: u16,
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if self.max_neighbors == 0 {
            return Err(Error::invalid("max_neighbors must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("sensor dimensions must be positive"));
        }
        Ok(())
    }
}

/// Eq. of the edge feature: componentwise ½(n_j − n_i) + ½ for target i
/// and source j, always inside [0,1]² for normalized inputs.
pub fn edge_feature(pos_i: [f64; 2], pos_j: [f64; 2]) -> [f64; 2] {
    [
        0.5 * (pos_j[0] - pos_i[0]) + 0.5,
        0.5 * (pos_j[1] - pos_i[1]) + 0.5,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub x: u16,
    pub y: u16,
    pub t_us: u64,
    pub polarity: i8,
    /// (x/W, y/H).
    pub pos: [f64; 2],
    /// beta * t_us.
    pub t_scaled: f64,
}

/// Directed edge src -> dst with the aggregation feature used at dst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: u32,
    pub feat: [f64; 2],
}

/// Per-layer sets of node indices whose cached activations must be
/// refreshed after an insertion: layer l holds every node within l hops
/// of the inserted node along reversed edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DirtySet {
    /// Graph version after the insertion this set belongs to.
    pub version: u64,
    pub per_layer: Vec<BTreeSet<u32>>,
}

#[derive(Debug, Clone)]
pub struct EventGraph {
    cfg: GraphConfig,
    window_us: (u64, u64),
    nodes: Vec<GraphNode>,
    /// In-edges per destination node, sorted by source index.
    in_edges: Vec<Vec<GraphEdge>>,
    /// Current input features per node; starts as (polarity, window
    /// offset) and grows when image features are fused in.
    features: Vec<Vec<f64>>,
    grid: SpatialGrid,
    version: u64,
}

impl EventGraph {
    /// An empty graph covering the half-open event window (t0, t1].
    pub fn with_window(cfg: GraphConfig, window_us: (u64, u64)) -> Result<Self> {
        cfg.validate()?;
        Ok(EventGraph {
            cfg,
            window_us,
            nodes: Vec::new(),
            in_edges: Vec::new(),
            features: Vec::new(),
            grid: SpatialGrid::new(cfg.radius),
            version: 0,
        })
    }

    pub fn cfg(&self) -> &GraphConfig {
        &self.cfg
    }

    pub fn window_us(&self) -> (u64, u64) {
        self.window_us
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn in_edges(&self, node: usize) -> &[GraphEdge] {
        &self.in_edges[node]
    }

    pub fn edge_count(&self) -> usize {
        self.in_edges.iter().map(Vec::len).sum()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Replace a node's input feature vector (used by feature fusion).
    pub fn set_feature(&mut self, node: usize, feat: Vec<f64>) {
        self.features[node] = feat;
    }

    fn time_offset(&self, t_us: u64) -> f64 {
        let (t0, t1) = self.window_us;
        if t1 > t0 {
            ((t_us.saturating_sub(t0)) as f64 / (t1 - t0) as f64).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// The node's intrinsic input feature: (polarity, window offset).
    pub fn base_feature(&self, node: usize) -> [f64; 2] {
        let n = &self.nodes[node];
        [n.polarity as f64, self.time_offset(n.t_us)]
    }

    /// Append one event, computing its in-edges and the dirty sets for
    /// `depth` layers. The timestamp must not precede existing nodes.
    pub fn insert_event(&mut self, ev: Event, depth: usize) -> Result<DirtySet> {
        if ev.x >= self.cfg.width || ev.y >= self.cfg.height {
            return Err(Error::invalid(format!(
                "event at ({}, {}) outside sensor {}x{}",
                ev.x, ev.y, self.cfg.width, self.cfg.height
            )));
        }
        if ev.p != 1 && ev.p != -1 {
            return Err(Error::invalid(format!("event polarity {}", ev.p)));
        }
        if let Some(last) = self.nodes.last() {
            if ev.t < last.t_us {
                return Err(Error::invalid(format!(
                    "out-of-order insertion: t={} after t={}",
                    ev.t, last.t_us
                )));
            }
        }

        let node = GraphNode {
            x: ev.x,
            y: ev.y,
            t_us: ev.t,
            polarity: ev.p,
            pos: [
                ev.x as f64 / self.cfg.width as f64,
                ev.y as f64 / self.cfg.height as f64,
            ],
            t_scaled: self.cfg.beta * ev.t as f64,
        };
        let p3 = [node.pos[0], node.pos[1], node.t_scaled];

        let mut cand = Vec::new();
        self.grid.candidates(p3, &mut cand);
        let r2 = self.cfg.radius * self.cfg.radius;
        // (distance², candidate index), filtered to the radius ball.
        let mut within: Vec<(f64, u32)> = Vec::with_capacity(cand.len());
        for &c in &cand {
            let o = &self.nodes[c as usize];
            let dx = o.pos[0] - node.pos[0];
            let dy = o.pos[1] - node.pos[1];
            let dz = o.t_scaled - node.t_scaled;
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 <= r2 {
                within.push((d2, c));
            }
        }
        // Nearest first; ties prefer the larger timestamp, then the lower
        // index.
        within.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| {
                    let ta = self.nodes[a.1 as usize].t_us;
                    let tb = self.nodes[b.1 as usize].t_us;
                    tb.cmp(&ta)
                })
                .then_with(|| a.1.cmp(&b.1))
        });
        within.truncate(self.cfg.max_neighbors);

        let new_idx = self.nodes.len() as u32;
        let mut edges: Vec<GraphEdge> = within
            .iter()
            .map(|&(_, src)| GraphEdge {
                src,
                feat: edge_feature(node.pos, self.nodes[src as usize].pos),
            })
            .collect();
        edges.sort_by_key(|e| e.src);

        let t_off = self.time_offset(ev.t);
        self.features.push(vec![ev.p as f64, t_off]);
        self.nodes.push(node);
        self.in_edges.push(edges);
        self.grid.insert(p3, new_idx);
        self.version += 1;

        // Dirty sets: hop expansion from the new node along reversed edges.
        let mut per_layer = Vec::with_capacity(depth);
        let mut frontier: BTreeSet<u32> = BTreeSet::new();
        frontier.insert(new_idx);
        let mut acc = frontier.clone();
        for _ in 0..depth {
            let mut next = BTreeSet::new();
            for &v in &frontier {
                for e in &self.in_edges[v as usize] {
                    if acc.insert(e.src) {
                        next.insert(e.src);
                    }
                }
            }
            per_layer.push(acc.clone());
            frontier = next;
        }
        Ok(DirtySet { version: self.version, per_layer })
    }

    /// Rectangle/time crop: the induced subgraph on nodes with pixel
    /// position in [x0, x1) x [y0, y1) and timestamp in [t0, t1). Node
    /// features and edge features are copied unchanged.
    pub fn crop(&self, x0: u16, y0: u16, x1: u16, y1: u16, t0: u64, t1: u64) -> EventGraph {
        let mut keep = Vec::new();
        let mut remap = vec![u32::MAX; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.x >= x0 && n.x < x1 && n.y >= y0 && n.y < y1 && n.t_us >= t0 && n.t_us < t1 {
                remap[i] = keep.len() as u32;
                keep.push(i);
            }
        }
        let mut out = EventGraph::with_window(self.cfg, self.window_us).unwrap();
        for &i in &keep {
            let n = self.nodes[i];
            out.grid.insert([n.pos[0], n.pos[1], n.t_scaled], out.nodes.len() as u32);
            out.nodes.push(n);
            out.features.push(self.features[i].clone());
            let edges: Vec<GraphEdge> = self.in_edges[i]
                .iter()
                .filter(|e| remap[e.src as usize] != u32::MAX)
                .map(|e| GraphEdge { src: remap[e.src as usize], feat: e.feat })
                .collect();
            out.in_edges.push(edges);
        }
        out.version = 1;
        out
    }

    /// Directional voxel pooling: bin nodes on (x̂, ŷ, position in the
    /// graph's time span), keep one node per non-empty voxel placed at its
    /// latest member with feature-wise max features, then rebuild edges
    /// among survivors with the usual earlier-to-later radius rule.
    pub fn voxel_pool(&self, nx: usize, ny: usize, nt: usize) -> Result<EventGraph> {
        if nx == 0 || ny == 0 || nt == 0 {
            return Err(Error::invalid("voxel grid dims must be at least 1"));
        }
        let mut out = EventGraph::with_window(self.cfg, self.window_us)?;
        if self.nodes.is_empty() {
            return Ok(out);
        }
        let t_min = self.nodes.first().unwrap().t_us;
        let t_max = self.nodes.last().unwrap().t_us;
        let span = (t_max - t_min) as f64;
        let bin = |v: f64, n: usize| ((v * n as f64) as usize).min(n - 1);

        let mut voxels: std::collections::BTreeMap<(usize, usize, usize), Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let bx = bin(n.pos[0], nx);
            let by = bin(n.pos[1], ny);
            let bt = if span > 0.0 {
                bin((n.t_us - t_min) as f64 / span, nt)
            } else {
                0
            };
            voxels.entry((bx, by, bt)).or_default().push(i);
        }

        // Representative per voxel: the member with the largest
        // (timestamp, index); features are the member-wise max.
        let mut reps: Vec<(GraphNode, Vec<f64>)> = Vec::with_capacity(voxels.len());
        for members in voxels.values() {
            let rep = *members
                .iter()
                .max_by_key(|&&i| (self.nodes[i].t_us, i))
                .unwrap();
            let mut feat = self.features[rep].clone();
            for &m in members {
                for (f, v) in feat.iter_mut().zip(&self.features[m]) {
                    if *v > *f {
                        *f = *v;
                    }
                }
            }
            reps.push((self.nodes[rep], feat));
        }
        reps.sort_by_key(|(n, _)| (n.t_us, n.y, n.x));

        for (node, feat) in reps {
            let ev = Event { x: node.x, y: node.y, t: node.t_us, p: node.polarity };
            out.insert_event(ev, 0)?;
            let idx = out.len() - 1;
            out.features[idx] = feat;
        }
        Ok(out)
    }

    /// Debug dump for oracle cross-checks; not a stable format.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .in_edges
            .iter()
            .enumerate()
            .flat_map(|(dst, es)| {
                es.iter().map(move |e| {
                    serde_json::json!({ "src": e.src, "dst": dst, "feat": e.feat })
                })
            })
            .collect();
        serde_json::json!({
            "window_us": [self.window_us.0, self.window_us.1],
            "nodes": self.nodes,
            "features": self.features,
            "edges": edges,
        })
    }
}

/// Build a graph over a full stream; the window defaults to the stream's
/// time extent.
pub fn build_graph(stream: &EventStream, cfg: GraphConfig) -> Result<EventGraph> {
    let window = match (stream.events.first(), stream.events.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (0, 0),
    };
    build_graph_in_window(stream, cfg, window)
}

/// Build a graph from events taken to lie in the given window (used for
/// per-frame packets, where the window is the inter-frame interval).
pub fn build_graph_in_window(
    stream: &EventStream,
    cfg: GraphConfig,
    window_us: (u64, u64),
) -> Result<EventGraph> {
    stream.validate()?;
    let mut g = EventGraph::with_window(cfg, window_us)?;
    for &ev in &stream.events {
        g.insert_event(ev, 0)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GraphConfig {
        GraphConfig {
            radius: 0.1,
            beta: 1e-5,
            max_neighbors: 16,
            width: 10,
            height: 10,
        }
    }

    fn stream_of(events: Vec<Event>) -> EventStream {
        let mut s = EventStream::new(10, 10);
        s.events = events;
        s.sort();
        s
    }

    #[test]
    fn empty_stream_empty_graph() {
        let g = build_graph(&stream_of(vec![]), cfg()).unwrap();
        assert_eq!(g.len(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn same_pixel_pair_gets_midpoint_feature() {
        let s = stream_of(vec![
            Event { x: 5, y: 5, t: 100, p: 1 },
            Event { x: 5, y: 5, t: 200, p: -1 },
        ]);
        let g = build_graph(&s, cfg()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edge_count(), 1);
        let e = &g.in_edges(1)[0];
        assert_eq!(e.src, 0);
        assert_eq!(e.feat, [0.5, 0.5]);
    }

    #[test]
    fn edge_feature_examples() {
        assert_eq!(edge_feature([0.3, 0.7], [0.3, 0.7]), [0.5, 0.5]);
        assert_eq!(edge_feature([0.0, 0.0], [1.0, 1.0]), [1.0, 1.0]);
        let f = edge_feature([0.2, 0.4], [0.4, 0.8]);
        assert!((f[0] - 0.6).abs() < 1e-15);
        assert!((f[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn insert_far_node_is_isolated() {
        let mut g = EventGraph::with_window(cfg(), (0, 1000)).unwrap();
        g.insert_event(Event { x: 0, y: 0, t: 0, p: 1 }, 3).unwrap();
        let dirty = g.insert_event(Event { x: 9, y: 9, t: 1000, p: 1 }, 3).unwrap();
        assert_eq!(g.edge_count(), 0);
        for layer in &dirty.per_layer {
            assert_eq!(layer.iter().copied().collect::<Vec<_>>(), vec![1]);
        }
    }

    #[test]
    fn insert_into_empty_graph() {
        let mut g = EventGraph::with_window(cfg(), (0, 1000)).unwrap();
        let dirty = g.insert_event(Event { x: 3, y: 3, t: 10, p: 1 }, 4).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(dirty.per_layer.len(), 4);
        for layer in &dirty.per_layer {
            assert_eq!(layer.len(), 1);
        }
    }

    #[test]
    fn out_of_order_insert_rejected() {
        let mut g = EventGraph::with_window(cfg(), (0, 1000)).unwrap();
        g.insert_event(Event { x: 0, y: 0, t: 100, p: 1 }, 1).unwrap();
        assert!(g.insert_event(Event { x: 0, y: 0, t: 50, p: 1 }, 1).is_err());
    }

    #[test]
    fn degree_cap_respected() {
        // 20 events at the same pixel within the radius: the last node may
        // keep only max_neighbors in-edges.
        let mut c = cfg();
        c.max_neighbors = 4;
        let events: Vec<Event> = (0..20)
            .map(|i| Event { x: 5, y: 5, t: i as u64, p: 1 })
            .collect();
        let g = build_graph(&stream_of(events), c).unwrap();
        for i in 0..g.len() {
            assert!(g.in_edges(i).len() <= 4);
        }
        // Ties on distance prefer larger timestamps: node 19 keeps 15..18.
        let srcs: Vec<u32> = g.in_edges(19).iter().map(|e| e.src).collect();
        assert_eq!(srcs, vec![15, 16, 17, 18]);
    }

    #[test]
    fn causality_all_edges_backward_in_time() {
        let events: Vec<Event> = (0..50)
            .map(|i| Event {
                x: (i * 3 % 10) as u16,
                y: (i * 7 % 10) as u16,
                t: (i * 13) as u64,
                p: if i % 2 == 0 { 1 } else { -1 },
            })
            .collect();
        let g = build_graph(&stream_of(events), cfg()).unwrap();
        for dst in 0..g.len() {
            for e in g.in_edges(dst) {
                assert!(g.nodes()[e.src as usize].t_us <= g.nodes()[dst].t_us);
                assert!((e.src as usize) < dst);
            }
        }
    }

    #[test]
    fn crop_full_window_preserves_graph() {
        let events: Vec<Event> = (0..30)
            .map(|i| Event { x: (i % 10) as u16, y: (i / 3) as u16, t: i as u64 * 10, p: 1 })
            .collect();
        let g = build_graph(&stream_of(events), cfg()).unwrap();
        let c = g.crop(0, 0, 10, 10, 0, u64::MAX);
        assert_eq!(c.len(), g.len());
        assert_eq!(c.edge_count(), g.edge_count());
        for i in 0..g.len() {
            assert_eq!(c.nodes()[i], g.nodes()[i]);
            assert_eq!(c.in_edges(i), g.in_edges(i));
        }
    }

    #[test]
    fn crop_empty_region() {
        let s = stream_of(vec![Event { x: 1, y: 1, t: 5, p: 1 }]);
        let g = build_graph(&s, cfg()).unwrap();
        let c = g.crop(5, 5, 9, 9, 0, u64::MAX);
        assert_eq!(c.len(), 0);
    }

    #[test]
    fn voxel_pool_single_node_identity() {
        let s = stream_of(vec![Event { x: 2, y: 3, t: 7, p: -1 }]);
        let g = build_graph(&s, cfg()).unwrap();
        let p = g.voxel_pool(4, 4, 4).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.nodes()[0], g.nodes()[0]);
        assert_eq!(p.features()[0], g.features()[0]);
    }

    #[test]
    fn voxel_pool_total_keeps_latest() {
        let events: Vec<Event> = (0..10)
            .map(|i| Event { x: i as u16, y: 0, t: i as u64 * 100, p: 1 })
            .collect();
        let g = build_graph(&stream_of(events), cfg()).unwrap();
        let p = g.voxel_pool(1, 1, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.nodes()[0].t_us, 900);
        assert_eq!(p.nodes()[0].x, 9);
    }

    #[test]
    fn dirty_sets_grow_with_depth() {
        // Chain of events stepping just within the radius so each node
        // links only to its predecessor.
        let mut c = cfg();
        c.radius = 0.11;
        c.max_neighbors = 1;
        let mut g = EventGraph::with_window(c, (0, 1000)).unwrap();
        for i in 0..5u16 {
            g.insert_event(Event { x: i, y: 0, t: i as u64, p: 1 }, 4).unwrap();
        }
        let dirty = g.insert_event(Event { x: 5, y: 0, t: 5, p: 1 }, 4).unwrap();
        let sizes: Vec<usize> = dirty.per_layer.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![2, 3, 4, 5]);
        assert!(dirty.per_layer[0].contains(&5) && dirty.per_layer[0].contains(&4));
    }
}
