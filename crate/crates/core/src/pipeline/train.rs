//! Desk-scale training: weighted cross-entropy on every detection,
//! backpropagation through time across the GRU chains, attention, the
//! object FC, and the spline stack, with Adam on the head and AdamW on
//! the GNN.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, adamw_step, attention, attention_backward, gru_backward, gru_step, linear_backward,
    linear_forward, relu_backward, weighted_cross_entropy, weighted_cross_entropy_backward,
    AdamConfig, AdamState, AttentionCache, AttentionGrads, GruCache, GruGrads, LinearCache,
    LinearGrads, SplineKernelGrads, Tensor,
};
use crate::pipeline::model::{
    gnn_backward, object_feature, HybridModel, ObjectFeatureCache,
};
use crate::pipeline::run::{build_window_graph, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate for the GRU/attention/classifier head.
    pub lr_head: f64,
    /// AdamW learning rate for the spline stack.
    pub lr_gnn: f64,
    pub weight_decay: f64,
    /// (negative, positive).
    pub class_weights: [f64; 2],
    /// Multiply learning rates by this factor after `plateau_patience`
    /// epochs without improvement.
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            lr_head: 1e-3,
            lr_gnn: 2e-4,
            weight_decay: 0.01,
            class_weights: [0.27, 1.0],
            plateau_factor: 0.5,
            plateau_patience: 3,
            seed: 0,
            threads: 1,
        }
    }
}

/// Gradients for every trainable tensor (the extractor stays fixed).
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub gnn: Vec<SplineKernelGrads>,
    pub gnn_object: Option<Vec<SplineKernelGrads>>,
    pub obj_fc: LinearGrads,
    pub gru_bbox: GruGrads,
    pub gru_obj: GruGrads,
    pub attn_bbox: AttentionGrads,
    pub attn_obj: AttentionGrads,
    pub classifier: LinearGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &HybridModel) -> Self {
        ModelGrads {
            gnn: model.gnn.iter().map(SplineKernelGrads::zeros_like).collect(),
            gnn_object: model
                .gnn_object
                .as_ref()
                .map(|s| s.iter().map(SplineKernelGrads::zeros_like).collect()),
            obj_fc: LinearGrads::zeros_like(&model.obj_fc),
            gru_bbox: GruGrads::zeros_like(&model.gru_bbox),
            gru_obj: GruGrads::zeros_like(&model.gru_obj),
            attn_bbox: AttentionGrads::zeros_like(&model.attn_bbox),
            attn_obj: AttentionGrads::zeros_like(&model.attn_obj),
            classifier: LinearGrads::zeros_like(&model.classifier),
        }
    }

    /// The stack gradients the object path accumulates into.
    fn object_stack_mut(&mut self) -> &mut Vec<SplineKernelGrads> {
        if self.gnn_object.is_some() {
            self.gnn_object.as_mut().unwrap()
        } else {
            &mut self.gnn
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamGroup {
    Gnn,
    Head,
}

fn for_each_param(
    model: &mut HybridModel,
    grads: &ModelGrads,
    mut f: impl FnMut(ParamGroup, &mut Tensor, &Tensor),
) {
    for (k, g) in model.gnn.iter_mut().zip(&grads.gnn) {
        for (c, gc) in k.control.iter_mut().zip(&g.control) {
            f(ParamGroup::Gnn, c, gc);
        }
        f(ParamGroup::Gnn, &mut k.self_weight, &g.self_weight);
    }
    if let (Some(stack), Some(gs)) = (model.gnn_object.as_mut(), grads.gnn_object.as_ref()) {
        for (k, g) in stack.iter_mut().zip(gs) {
            for (c, gc) in k.control.iter_mut().zip(&g.control) {
                f(ParamGroup::Gnn, c, gc);
            }
            f(ParamGroup::Gnn, &mut k.self_weight, &g.self_weight);
        }
    }
    f(ParamGroup::Head, &mut model.obj_fc.weight, &grads.obj_fc.weight);
    f(ParamGroup::Head, &mut model.obj_fc.bias, &grads.obj_fc.bias);
    for (p, g) in [
        (&mut model.gru_bbox, &grads.gru_bbox),
        (&mut model.gru_obj, &grads.gru_obj),
    ] {
        f(ParamGroup::Head, &mut p.w_z, &g.w_z);
        f(ParamGroup::Head, &mut p.u_z, &g.u_z);
        f(ParamGroup::Head, &mut p.b_z, &g.b_z);
        f(ParamGroup::Head, &mut p.w_r, &g.w_r);
        f(ParamGroup::Head, &mut p.u_r, &g.u_r);
        f(ParamGroup::Head, &mut p.b_r, &g.b_r);
        f(ParamGroup::Head, &mut p.w_h, &g.w_h);
        f(ParamGroup::Head, &mut p.u_h, &g.u_h);
        f(ParamGroup::Head, &mut p.b_h, &g.b_h);
    }
    f(ParamGroup::Head, &mut model.attn_bbox.w, &grads.attn_bbox.w);
    f(ParamGroup::Head, &mut model.attn_obj.w, &grads.attn_obj.w);
    f(ParamGroup::Head, &mut model.classifier.weight, &grads.classifier.weight);
    f(ParamGroup::Head, &mut model.classifier.bias, &grads.classifier.bias);
}

fn add_grads(acc: &mut ModelGrads, other: &ModelGrads) {
    fn add_stack(a: &mut [SplineKernelGrads], b: &[SplineKernelGrads]) {
        for (x, y) in a.iter_mut().zip(b) {
            for (c, gc) in x.control.iter_mut().zip(&y.control) {
                c.add_scaled(gc, 1.0);
            }
            x.self_weight.add_scaled(&y.self_weight, 1.0);
        }
    }
    add_stack(&mut acc.gnn, &other.gnn);
    if let (Some(a), Some(b)) = (acc.gnn_object.as_mut(), other.gnn_object.as_ref()) {
        add_stack(a, b);
    }
    acc.obj_fc.weight.add_scaled(&other.obj_fc.weight, 1.0);
    acc.obj_fc.bias.add_scaled(&other.obj_fc.bias, 1.0);
    for (x, y) in [
        (&mut acc.gru_bbox, &other.gru_bbox),
        (&mut acc.gru_obj, &other.gru_obj),
    ] {
        x.w_z.add_scaled(&y.w_z, 1.0);
        x.u_z.add_scaled(&y.u_z, 1.0);
        x.b_z.add_scaled(&y.b_z, 1.0);
        x.w_r.add_scaled(&y.w_r, 1.0);
        x.u_r.add_scaled(&y.u_r, 1.0);
        x.b_r.add_scaled(&y.b_r, 1.0);
        x.w_h.add_scaled(&y.w_h, 1.0);
        x.u_h.add_scaled(&y.u_h, 1.0);
        x.b_h.add_scaled(&y.b_h, 1.0);
    }
    acc.attn_bbox.w.add_scaled(&other.attn_bbox.w, 1.0);
    acc.attn_obj.w.add_scaled(&other.attn_obj.w, 1.0);
    acc.classifier.weight.add_scaled(&other.classifier.weight, 1.0);
    acc.classifier.bias.add_scaled(&other.classifier.bias, 1.0);
}

fn scale_grads(g: &mut ModelGrads, k: f64) {
    fn scale_stack(s: &mut [SplineKernelGrads], k: f64) {
        for x in s {
            for c in &mut x.control {
                c.scale(k);
            }
            x.self_weight.scale(k);
        }
    }
    scale_stack(&mut g.gnn, k);
    if let Some(s) = g.gnn_object.as_mut() {
        scale_stack(s, k);
    }
    g.obj_fc.weight.scale(k);
    g.obj_fc.bias.scale(k);
    for x in [&mut g.gru_bbox, &mut g.gru_obj] {
        x.w_z.scale(k);
        x.u_z.scale(k);
        x.b_z.scale(k);
        x.w_r.scale(k);
        x.u_r.scale(k);
        x.b_r.scale(k);
        x.w_h.scale(k);
        x.u_h.scale(k);
        x.b_h.scale(k);
    }
    g.attn_bbox.w.scale(k);
    g.attn_obj.w.scale(k);
    g.classifier.weight.scale(k);
    g.classifier.bias.scale(k);
}

struct ObjTape {
    id: u32,
    ofc: ObjectFeatureCache,
    gru_b: GruCache,
    gru_f: GruCache,
    /// Whether the pre-step hidden state came from live recurrent state
    /// (true) or a fresh zero vector (false): gradient flows back in
    /// time only in the former case.
    had_prev: bool,
    label: usize,
    probs: Vec<f64>,
    cls_cache: LinearCache,
    loss: f64,
}

struct FrameTape {
    objs: Vec<ObjTape>,
    attn_b: AttentionCache,
    attn_f: AttentionCache,
}

/// Forward and backward over one scenario; returns the summed loss, the
/// number of scored object-frames, and unscaled gradients.
pub fn forward_backward_scenario(
    model: &HybridModel,
    scenario: &Scenario,
    class_weights: &[f64; 2],
) -> Result<(f64, usize, ModelGrads)> {
    let bh = model.cfg.bbox_hidden;
    let gh = model.cfg.gnn_hidden;
    let zero_b = vec![0.0; bh];
    let zero_f = vec![0.0; model.cfg.obj_hidden];

    // ---- Forward, recording tapes -------------------------------------
    let mut state: BTreeMap<u32, (Vec<f64>, Vec<f64>, u64)> = BTreeMap::new();
    let mut tapes: Vec<FrameTape> = Vec::with_capacity(scenario.packets.len());
    let mut loss_sum = 0.0;
    let mut count = 0usize;

    for packet in &scenario.packets {
        packet.validate()?;
        let graph = build_window_graph(&scenario.graph_cfg, packet)?;
        let mut boxes: Vec<&crate::pipeline::model::ObjectBox> = packet.boxes.iter().collect();
        boxes.sort_by_key(|b| b.id);

        let mut objs = Vec::with_capacity(boxes.len());
        let mut h_b_rows = Vec::with_capacity(boxes.len());
        let mut h_f_rows = Vec::with_capacity(boxes.len());
        for b in &boxes {
            let (f_vec, ofc) = object_feature(model, &graph, b, &packet.fmap)?;
            let (had_prev, prev_b, prev_f) = match state.get(&b.id) {
                Some((hb, hf, _)) => (true, hb.clone(), hf.clone()),
                None => (false, zero_b.clone(), zero_f.clone()),
            };
            let (h_b, gru_b) = gru_step(&model.gru_bbox, &b.feature(), &prev_b)?;
            let (h_f, gru_f) = gru_step(&model.gru_obj, &f_vec, &prev_f)?;
            state.insert(b.id, (h_b.clone(), h_f.clone(), packet.frame_idx));
            h_b_rows.push(h_b);
            h_f_rows.push(h_f);
            let label = scenario
                .labels
                .object_labels
                .get(&b.id)
                .and_then(|v| v.get(packet.frame_idx as usize))
                .map_or(0usize, |&l| l as usize);
            objs.push(ObjTape {
                id: b.id,
                ofc,
                gru_b,
                gru_f,
                had_prev,
                label,
                probs: Vec::new(),
                cls_cache: LinearCache { input: Vec::new() },
                loss: 0.0,
            });
        }

        let (_, weighted_b, attn_b) = attention(&model.attn_bbox, &h_b_rows)?;
        let (_, weighted_f, attn_f) = attention(&model.attn_obj, &h_f_rows)?;
        for (i, obj) in objs.iter_mut().enumerate() {
            let mut unified = weighted_b[i].clone();
            unified.extend_from_slice(&weighted_f[i]);
            let (logits, cls_cache) = linear_forward(&model.classifier, &unified)?;
            let (loss, probs) = weighted_cross_entropy(&logits, obj.label, class_weights)?;
            loss_sum += loss;
            count += 1;
            obj.loss = loss;
            obj.probs = probs;
            obj.cls_cache = cls_cache;
        }

        let ttl = model.cfg.absent_ttl;
        let now = packet.frame_idx;
        state.retain(|_, (_, _, seen)| now.saturating_sub(*seen) <= ttl);
        tapes.push(FrameTape { objs, attn_b, attn_f });
    }

    // ---- Backward ------------------------------------------------------
    let mut grads = ModelGrads::zeros_like(model);
    let mut carry_b: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut carry_f: BTreeMap<u32, Vec<f64>> = BTreeMap::new();

    for tape in tapes.iter().rev() {
        let n = tape.objs.len();
        if n == 0 {
            continue;
        }
        let mut d_weighted_b = Vec::with_capacity(n);
        let mut d_weighted_f = Vec::with_capacity(n);
        for obj in &tape.objs {
            let dlogits =
                weighted_cross_entropy_backward(&obj.probs, obj.label, class_weights, 1.0);
            let d_unified =
                linear_backward(&model.classifier, &obj.cls_cache, &dlogits, &mut grads.classifier);
            d_weighted_b.push(d_unified[..bh].to_vec());
            d_weighted_f.push(d_unified[bh..].to_vec());
        }
        let d_hb = attention_backward(&model.attn_bbox, &tape.attn_b, &d_weighted_b, &mut grads.attn_bbox);
        let d_hf = attention_backward(&model.attn_obj, &tape.attn_f, &d_weighted_f, &mut grads.attn_obj);

        for (i, obj) in tape.objs.iter().enumerate() {
            let mut dh_b = d_hb[i].clone();
            if let Some(c) = carry_b.remove(&obj.id) {
                for (a, b) in dh_b.iter_mut().zip(&c) {
                    *a += b;
                }
            }
            let (_dx_b, dh_prev_b) = gru_backward(&model.gru_bbox, &obj.gru_b, &dh_b, &mut grads.gru_bbox);
            if obj.had_prev {
                carry_b.insert(obj.id, dh_prev_b);
            }

            let mut dh_f = d_hf[i].clone();
            if let Some(c) = carry_f.remove(&obj.id) {
                for (a, b) in dh_f.iter_mut().zip(&c) {
                    *a += b;
                }
            }
            let (dx_f, dh_prev_f) = gru_backward(&model.gru_obj, &obj.gru_f, &dh_f, &mut grads.gru_obj);
            if obj.had_prev {
                carry_f.insert(obj.id, dh_prev_f);
            }

            // Object feature path: θ0 + ReLU, then the GNN readout.
            let d_fc_pre = relu_backward(&obj.ofc.fc_pre, &dx_f);
            let dp = linear_backward(&model.obj_fc, &obj.ofc.fc_cache, &d_fc_pre, &mut grads.obj_fc);
            let d_o = &dp[..gh];
            let n_nodes = obj.ofc.gnn.output.len();
            if n_nodes > 0 {
                let mut d_out = vec![vec![0.0; gh]; n_nodes];
                for (c, arg) in obj.ofc.readout_arg.iter().enumerate() {
                    if let Some(v) = arg {
                        d_out[*v][c] += d_o[c];
                    }
                }
                gnn_backward(
                    model.object_stack(),
                    &obj.ofc.gnn,
                    &obj.ofc.edges,
                    d_out,
                    grads.object_stack_mut(),
                );
            }
        }
    }
    Ok((loss_sum, count, grads))
}

/// Adam/AdamW state for every trainable tensor, in the fixed
/// `for_each_param` enumeration order.
pub struct ModelOptimizer {
    states: Vec<AdamState>,
    pub lr_head: f64,
    pub lr_gnn: f64,
    weight_decay: f64,
}

impl ModelOptimizer {
    pub fn new(model: &HybridModel, cfg: &TrainConfig) -> Self {
        let zero = ModelGrads::zeros_like(model);
        let mut states = Vec::new();
        let mut probe = model.clone();
        for_each_param(&mut probe, &zero, |_, p, _| {
            states.push(AdamState::zeros_like(p));
        });
        ModelOptimizer {
            states,
            lr_head: cfg.lr_head,
            lr_gnn: cfg.lr_gnn,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut HybridModel, grads: &ModelGrads) {
        let head = AdamConfig::new(self.lr_head);
        let gnn = AdamConfig::with_decay(self.lr_gnn, self.weight_decay);
        let states = &mut self.states;
        let mut idx = 0;
        for_each_param(model, grads, |group, p, g| {
            match group {
                ParamGroup::Head => adam_step(&head, p, g, &mut states[idx]),
                ParamGroup::Gnn => adamw_step(&gnn, p, g, &mut states[idx]),
            }
            idx += 1;
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Train in place. Deterministic for a fixed seed at any thread count:
/// scenario gradients are reduced in index order.
pub fn train(model: &mut HybridModel, scenarios: &[Scenario], cfg: &TrainConfig) -> Result<TrainReport> {
    if scenarios.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let mut opt = ModelOptimizer::new(model, cfg);
    let mut report = TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs) };
    let mut best = f64::INFINITY;
    let mut stall = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scenarios.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5de3);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let results: Result<Vec<(f64, usize, ModelGrads)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| forward_backward_scenario(model, &scenarios[i], &cfg.class_weights))
                    .collect()
            });
            let results = results?;
            let mut total = ModelGrads::zeros_like(model);
            let mut loss = 0.0;
            let mut count = 0usize;
            for (l, c, g) in &results {
                loss += l;
                count += c;
                add_grads(&mut total, g);
            }
            if count == 0 {
                continue;
            }
            scale_grads(&mut total, 1.0 / count as f64);
            opt.step(model, &total);
            epoch_loss += loss;
            epoch_count += count;
        }

        let mean = if epoch_count > 0 { epoch_loss / epoch_count as f64 } else { 0.0 };
        report.epoch_losses.push(mean);
        if mean < best - 1e-12 {
            best = mean;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.plateau_patience {
                opt.lr_head *= cfg.plateau_factor;
                opt.lr_gnn *= cfg.plateau_factor;
                stall = 0;
            }
        }
    }
    Ok(report)
}
