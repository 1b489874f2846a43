//! The hybrid model: spline-conv GNN stack, feature fusion, object
//! feature extraction, dual GRUs, attention heads, and the classifier,
//! plus weight-file persistence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EventGraph, GraphConfig};
use crate::nn::init;
use crate::nn::{
    linear_forward, relu, AttentionParams, ConvEdge, GruParams, LinearCache, LinearParams,
    SplineConvCache, SplineKernel, Tensor,
};
use crate::pipeline::features::{FeatureMap, ToyExtractor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Graph connection radius in normalized units.
    pub radius: f64,
    pub max_neighbors: usize,
    /// Timestamp scale; None maps the scenario duration onto [0,1].
    pub beta: Option<f64>,
    pub gnn_layers: usize,
    pub gnn_hidden: usize,
    pub spline_grid: usize,
    pub extractor_channels: [usize; 2],
    /// When false the image branch is replaced by a zero feature map.
    pub use_rgb: bool,
    /// One spline stack for frame-level and object-level processing;
    /// false gives the object path its own stack.
    pub share_gnn: bool,
    pub bbox_hidden: usize,
    pub obj_hidden: usize,
    pub obj_feat_dim: usize,
    /// Frames an absent object keeps its recurrent state.
    pub absent_ttl: u64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            radius: 0.03,
            max_neighbors: 16,
            beta: None,
            gnn_layers: 4,
            gnn_hidden: 8,
            spline_grid: 3,
            extractor_channels: [4, 4],
            use_rgb: true,
            share_gnn: true,
            bbox_hidden: 16,
            obj_hidden: 16,
            obj_feat_dim: 16,
            absent_ttl: 30,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Node input dimension after fusion: (polarity, window offset) plus
    /// the image feature channels.
    pub fn node_input_dim(&self) -> usize {
        2 + self.extractor_channels[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.gnn_layers == 0 {
            return Err(Error::invalid("gnn_layers must be >= 1"));
        }
        if self.spline_grid < 2 {
            return Err(Error::invalid("spline_grid must be >= 2"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        Ok(())
    }

    pub fn graph_config(&self, width: u16, height: u16, duration_us: u64) -> GraphConfig {
        GraphConfig {
            radius: self.radius,
            beta: self.beta.unwrap_or(1.0 / duration_us.max(1) as f64),
            max_neighbors: self.max_neighbors,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub cfg: ModelConfig,
    pub extractor: ToyExtractor,
    /// Frame-level spline stack (also the object stack when shared).
    pub gnn: Vec<SplineKernel>,
    /// Separate object-level stack when `share_gnn` is off.
    pub gnn_object: Option<Vec<SplineKernel>>,
    pub obj_fc: LinearParams,
    pub gru_bbox: GruParams,
    pub gru_obj: GruParams,
    pub attn_bbox: AttentionParams,
    pub attn_obj: AttentionParams,
    pub classifier: LinearParams,
}

fn seeded_stack(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Vec<SplineKernel> {
    let mut layers = Vec::with_capacity(cfg.gnn_layers);
    for i in 0..cfg.gnn_layers {
        let in_dim = if i == 0 { cfg.node_input_dim() } else { cfg.gnn_hidden };
        layers.push(init::seeded_kernel(rng, cfg.spline_grid, in_dim, cfg.gnn_hidden));
    }
    layers
}

impl HybridModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let extractor = ToyExtractor::seeded(cfg.seed, cfg.extractor_channels);
        let gnn = seeded_stack(&mut rng, &cfg);
        let gnn_object = if cfg.share_gnn {
            None
        } else {
            Some(seeded_stack(&mut rng, &cfg))
        };
        let g_dim = 2 * cfg.extractor_channels[1];
        let obj_fc = init::seeded_linear(&mut rng, cfg.obj_feat_dim, cfg.gnn_hidden + g_dim);
        let gru_bbox = init::seeded_gru(&mut rng, 4, cfg.bbox_hidden);
        let gru_obj = init::seeded_gru(&mut rng, cfg.obj_feat_dim, cfg.obj_hidden);
        let attn_bbox = init::seeded_attention(&mut rng, cfg.bbox_hidden);
        let attn_obj = init::seeded_attention(&mut rng, cfg.obj_hidden);
        let classifier = init::seeded_linear(&mut rng, 2, cfg.bbox_hidden + cfg.obj_hidden);
        Ok(HybridModel {
            cfg,
            extractor,
            gnn,
            gnn_object,
            obj_fc,
            gru_bbox,
            gru_obj,
            attn_bbox,
            attn_obj,
            classifier,
        })
    }

    /// The stack used for object-level feature extraction.
    pub fn object_stack(&self) -> &[SplineKernel] {
        self.gnn_object.as_deref().unwrap_or(&self.gnn)
    }

    /// Residual layers are those whose in/out dims match (all but the
    /// first at default configs).
    pub fn layer_residual(kernel: &SplineKernel) -> bool {
        kernel.in_dim == kernel.out_dim
    }
}

/// Append the bilinearly sampled image feature to every node's base
/// feature (polarity, window offset). Idempotent: features are rebuilt
/// from node fields each call.
pub fn fuse_node_features(graph: &mut EventGraph, fmap: &FeatureMap) -> Result<()> {
    fmap.validate()?;
    for i in 0..graph.len() {
        let node = graph.nodes()[i];
        let base = graph.base_feature(i);
        let mut feat = Vec::with_capacity(2 + fmap.channels);
        feat.extend_from_slice(&base);
        feat.extend_from_slice(&fmap.sample(node.pos));
        graph.set_feature(i, feat);
    }
    Ok(())
}

/// Fuse a single freshly inserted node (incremental path).
pub fn fuse_node_feature_at(graph: &mut EventGraph, node: usize, fmap: &FeatureMap) {
    let pos = graph.nodes()[node].pos;
    let base = graph.base_feature(node);
    let mut feat = Vec::with_capacity(2 + fmap.channels);
    feat.extend_from_slice(&base);
    feat.extend_from_slice(&fmap.sample(pos));
    graph.set_feature(node, feat);
}

/// Flat edge list in the convolution's (src, dst, feat) form.
pub fn conv_edges(graph: &EventGraph) -> Vec<ConvEdge> {
    let mut edges = Vec::with_capacity(graph.edge_count());
    for dst in 0..graph.len() {
        for e in graph.in_edges(dst) {
            edges.push(ConvEdge { src: e.src, dst: dst as u32, feat: e.feat });
        }
    }
    edges
}

/// Forward state of a spline stack over one graph: per layer the conv
/// cache and pre-activation rows, plus the final post-ReLU rows.
#[derive(Debug, Clone)]
pub struct GnnForward {
    pub layer_caches: Vec<(SplineConvCache, Vec<Vec<f64>>)>,
    pub output: Vec<Vec<f64>>,
}

pub fn gnn_forward(layers: &[SplineKernel], inputs: &[Vec<f64>], edges: &[ConvEdge]) -> Result<GnnForward> {
    let mut cur: Vec<Vec<f64>> = inputs.to_vec();
    let mut layer_caches = Vec::with_capacity(layers.len());
    for kernel in layers {
        let residual = HybridModel::layer_residual(kernel);
        let (pre, cache) = crate::nn::spline_conv_forward(kernel, &cur, edges, residual)?;
        cur = pre.iter().map(|row| relu(row)).collect();
        layer_caches.push((cache, pre));
    }
    Ok(GnnForward { layer_caches, output: cur })
}

/// Backward through a spline stack: ReLU masks between layers, conv
/// backward per layer, kernel gradients accumulated per layer.
pub fn gnn_backward(
    layers: &[SplineKernel],
    fwd: &GnnForward,
    edges: &[ConvEdge],
    d_output: Vec<Vec<f64>>,
    grads: &mut [crate::nn::SplineKernelGrads],
) {
    let mut d_cur = d_output;
    for (l, kernel) in layers.iter().enumerate().rev() {
        let (cache, pre) = &fwd.layer_caches[l];
        let d_pre: Vec<Vec<f64>> = pre
            .iter()
            .zip(&d_cur)
            .map(|(p, g)| crate::nn::relu_backward(p, g))
            .collect();
        d_cur = crate::nn::spline_conv_backward(kernel, cache, edges, &d_pre, &mut grads[l]);
    }
}

/// Feature-wise max readout; per-channel argmax indices are kept for the
/// backward pass. Empty graphs read out as zero.
pub fn max_readout(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut out = vec![0.0; dim];
    let mut arg = vec![None; dim];
    for (i, row) in rows.iter().enumerate() {
        for c in 0..dim {
            if arg[c].is_none() || row[c] > out[c] {
                out[c] = row[c];
                arg[c] = Some(i);
            }
        }
    }
    if rows.is_empty() {
        return (vec![0.0; dim], arg);
    }
    (out, arg)
}

/// Everything cached while computing one object feature, enough to run
/// the backward pass during training.
#[derive(Debug, Clone)]
pub struct ObjectFeatureCache {
    pub edges: Vec<ConvEdge>,
    pub gnn: GnnForward,
    pub readout_arg: Vec<Option<usize>>,
    pub g_vec: Vec<f64>,
    pub fc_cache: LinearCache,
    pub fc_pre: Vec<f64>,
}

/// A detection with both pixel-rect and normalized-center forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: u32,
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl ObjectBox {
    pub fn from_pixels(b: &crate::event::scenario::BBox, width: u16, height: u16) -> Self {
        let w = (b.x_max - b.x_min) as f64 / width as f64;
        let h = (b.y_max - b.y_min) as f64 / height as f64;
        ObjectBox {
            id: b.object_id,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
            cx: (b.x_min + b.x_max) as f64 / 2.0 / width as f64,
            cy: (b.y_min + b.y_max) as f64 / 2.0 / height as f64,
            w,
            h,
        }
    }

    /// GRU input b_{t,i}: normalized center and size.
    pub fn feature(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn norm_rect(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

/// Object-level feature f_{t,i}: max-readout of the GNN over the cropped
/// event graph, concatenated with center-sampled and box-averaged image
/// features, reduced through the object FC with ReLU.
pub fn object_feature(
    model: &HybridModel,
    graph: &EventGraph,
    obox: &ObjectBox,
    fmap: &FeatureMap,
) -> Result<(Vec<f64>, ObjectFeatureCache)> {
    let (t0, t1) = graph.window_us();
    let crop = graph.crop(obox.x_min, obox.y_min, obox.x_max, obox.y_max, t0, t1.saturating_add(1));
    let edges = conv_edges(&crop);
    let gnn = gnn_forward(model.object_stack(), crop.features(), &edges)?;
    let (o_vec, readout_arg) = max_readout(&gnn.output, model.cfg.gnn_hidden);

    let center = fmap.sample([obox.cx, obox.cy]);
    let pooled = fmap.box_mean(obox.norm_rect());
    let mut g_vec = center;
    g_vec.extend_from_slice(&pooled);

    let mut p_vec = o_vec;
    p_vec.extend_from_slice(&g_vec);
    let (fc_pre, fc_cache) = linear_forward(&model.obj_fc, &p_vec)?;
    let f_vec = relu(&fc_pre);
    Ok((
        f_vec,
        ObjectFeatureCache { edges, gnn, readout_arg, g_vec, fc_cache, fc_pre },
    ))
}

// ---------------------------------------------------------------------------
// Persistence.
// ---------------------------------------------------------------------------

fn insert_gru(map: &mut BTreeMap<String, Tensor>, prefix: &str, p: &GruParams) {
    map.insert(format!("{prefix}.w_z"), p.w_z.clone());
    map.insert(format!("{prefix}.u_z"), p.u_z.clone());
    map.insert(format!("{prefix}.b_z"), p.b_z.clone());
    map.insert(format!("{prefix}.w_r"), p.w_r.clone());
    map.insert(format!("{prefix}.u_r"), p.u_r.clone());
    map.insert(format!("{prefix}.b_r"), p.b_r.clone());
    map.insert(format!("{prefix}.w_h"), p.w_h.clone());
    map.insert(format!("{prefix}.u_h"), p.u_h.clone());
    map.insert(format!("{prefix}.b_h"), p.b_h.clone());
}

fn insert_stack(map: &mut BTreeMap<String, Tensor>, prefix: &str, stack: &[SplineKernel]) {
    for (i, k) in stack.iter().enumerate() {
        for (j, c) in k.control.iter().enumerate() {
            map.insert(format!("{prefix}.{i}.control.{j}"), c.clone());
        }
        map.insert(format!("{prefix}.{i}.self_weight"), k.self_weight.clone());
    }
}

impl HybridModel {
    pub fn to_tensor_map(&self) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        map.insert("extractor.conv1.weight".into(), self.extractor.conv1.weight.clone());
        map.insert("extractor.conv1.bias".into(), self.extractor.conv1.bias.clone());
        map.insert("extractor.conv2.weight".into(), self.extractor.conv2.weight.clone());
        map.insert("extractor.conv2.bias".into(), self.extractor.conv2.bias.clone());
        insert_stack(&mut map, "gnn", &self.gnn);
        if let Some(obj) = &self.gnn_object {
            insert_stack(&mut map, "gnn_obj", obj);
        }
        map.insert("obj_fc.weight".into(), self.obj_fc.weight.clone());
        map.insert("obj_fc.bias".into(), self.obj_fc.bias.clone());
        insert_gru(&mut map, "gru_bbox", &self.gru_bbox);
        insert_gru(&mut map, "gru_obj", &self.gru_obj);
        map.insert("attn_bbox.w".into(), self.attn_bbox.w.clone());
        map.insert("attn_obj.w".into(), self.attn_obj.w.clone());
        map.insert("classifier.weight".into(), self.classifier.weight.clone());
        map.insert("classifier.bias".into(), self.classifier.bias.clone());
        map
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.cfg)?;
        crate::nn::io::write_container(path, &self.to_tensor_map(), meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = crate::nn::io::read_container(path)?;
        let cfg: ModelConfig = serde_json::from_value(meta)?;
        let mut model = HybridModel::new(cfg)?;

        let take = |tensors: &BTreeMap<String, Tensor>, name: &str, target: &mut Tensor| -> Result<()> {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))?;
            if t.shape() != target.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.into(),
                    expected: target.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *target = t.clone();
            Ok(())
        };

        take(&tensors, "extractor.conv1.weight", &mut model.extractor.conv1.weight)?;
        take(&tensors, "extractor.conv1.bias", &mut model.extractor.conv1.bias)?;
        take(&tensors, "extractor.conv2.weight", &mut model.extractor.conv2.weight)?;
        take(&tensors, "extractor.conv2.bias", &mut model.extractor.conv2.bias)?;
        for (prefix, stack) in [("gnn", Some(&mut model.gnn)), ("gnn_obj", model.gnn_object.as_mut())] {
            if let Some(stack) = stack {
                for (i, k) in stack.iter_mut().enumerate() {
                    for (j, c) in k.control.iter_mut().enumerate() {
                        take(&tensors, &format!("{prefix}.{i}.control.{j}"), c)?;
                    }
                    take(&tensors, &format!("{prefix}.{i}.self_weight"), &mut k.self_weight)?;
                }
            }
        }
        take(&tensors, "obj_fc.weight", &mut model.obj_fc.weight)?;
        take(&tensors, "obj_fc.bias", &mut model.obj_fc.bias)?;
        for (prefix, gru) in [("gru_bbox", &mut model.gru_bbox), ("gru_obj", &mut model.gru_obj)] {
            take(&tensors, &format!("{prefix}.w_z"), &mut gru.w_z)?;
            take(&tensors, &format!("{prefix}.u_z"), &mut gru.u_z)?;
            take(&tensors, &format!("{prefix}.b_z"), &mut gru.b_z)?;
            take(&tensors, &format!("{prefix}.w_r"), &mut gru.w_r)?;
            take(&tensors, &format!("{prefix}.u_r"), &mut gru.u_r)?;
            take(&tensors, &format!("{prefix}.b_r"), &mut gru.b_r)?;
            take(&tensors, &format!("{prefix}.w_h"), &mut gru.w_h)?;
            take(&tensors, &format!("{prefix}.u_h"), &mut gru.u_h)?;
            take(&tensors, &format!("{prefix}.b_h"), &mut gru.b_h)?;
        }
        take(&tensors, "attn_bbox.w", &mut model.attn_bbox.w)?;
        take(&tensors, "attn_obj.w", &mut model.attn_obj.w)?;
        take(&tensors, "classifier.weight", &mut model.classifier.weight)?;
        take(&tensors, "classifier.bias", &mut model.classifier.bias)?;
        Ok(model)
    }
}
