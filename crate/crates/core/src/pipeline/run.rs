//! Frame-by-frame scoring: per-object recurrent state, attention across
//! the objects of a frame, and the softmax risk head, in batch or
//! incremental (event-by-event) graph mode.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::scenario::LabelSet;
use crate::event::Event;
use crate::graph::{build_graph_in_window, EventGraph, GraphConfig};
use crate::nn::{attention, gru_step, linear_forward, softmax};
use crate::pipeline::features::FeatureMap;
use crate::pipeline::incremental::{step_incremental, ActivationCache};
use crate::pipeline::model::{
    fuse_node_feature_at, fuse_node_features, object_feature, HybridModel, ObjectBox,
};

/// Everything one frame contributes to scoring: the event window, the
/// image feature map, and the detections.
#[derive(Debug, Clone)]
pub struct FramePacket {
    pub frame_idx: u64,
    pub t_us: u64,
    /// Half-open window (t_prev, t_now] the events fall in.
    pub window_us: (u64, u64),
    pub events: Vec<Event>,
    pub fmap: FeatureMap,
    pub boxes: Vec<ObjectBox>,
}

impl FramePacket {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.window_us;
        for e in &self.events {
            if !(e.t > t0 && e.t <= t1) {
                return Err(Error::invalid(format!(
                    "event at t={} outside window ({t0}, {t1}]",
                    e.t
                )));
            }
        }
        for b in &self.boxes {
            for v in b.feature() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "object {} bbox feature {v} outside [0,1]",
                        b.id
                    )));
                }
            }
        }
        let mut ids: Vec<u32> = self.boxes.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.boxes.len() {
            return Err(Error::invalid("duplicate object ids in packet"));
        }
        Ok(())
    }
}

/// A scenario ready for scoring or training.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph_cfg: GraphConfig,
    pub packets: Vec<FramePacket>,
    pub labels: LabelSet,
}

/// Per-object recurrent state.
#[derive(Debug, Clone, Default)]
pub struct ObjectState {
    entries: BTreeMap<u32, ObjectEntry>,
}

#[derive(Debug, Clone)]
struct ObjectEntry {
    h_bbox: Vec<f64>,
    h_obj: Vec<f64>,
    last_seen: u64,
}

impl ObjectState {
    pub fn new() -> Self {
        ObjectState::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hidden(&self, id: u32) -> Option<(&[f64], &[f64])> {
        self.entries.get(&id).map(|e| (e.h_bbox.as_slice(), e.h_obj.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: u64,
    pub t_us: u64,
    pub objects: BTreeMap<u32, f64>,
    pub frame_score: f64,
    pub infer_us: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskTimeline {
    pub frames: Vec<FrameScore>,
}

impl RiskTimeline {
    pub fn frame_scores(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.frame_score).collect()
    }

    pub fn frame_times_us(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.t_us).collect()
    }

    pub fn mean_infer_us(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.infer_us as f64).sum::<f64>() / self.frames.len() as f64
    }
}

/// Risk scores for the detected objects of one already-built window
/// graph; updates the recurrent state in place.
pub fn score_packet(
    model: &HybridModel,
    state: &mut ObjectState,
    packet: &FramePacket,
    graph: &EventGraph,
) -> Result<BTreeMap<u32, f64>> {
    let mut boxes: Vec<&ObjectBox> = packet.boxes.iter().collect();
    boxes.sort_by_key(|b| b.id);

    let zero_b = vec![0.0; model.cfg.bbox_hidden];
    let zero_f = vec![0.0; model.cfg.obj_hidden];

    let mut h_b_rows = Vec::with_capacity(boxes.len());
    let mut h_f_rows = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let (f_vec, _) = object_feature(model, graph, b, &packet.fmap)?;
        let (prev_b, prev_f) = match state.entries.get(&b.id) {
            Some(e) => (e.h_bbox.clone(), e.h_obj.clone()),
            None => (zero_b.clone(), zero_f.clone()),
        };
        let (h_b, _) = gru_step(&model.gru_bbox, &b.feature(), &prev_b)?;
        let (h_f, _) = gru_step(&model.gru_obj, &f_vec, &prev_f)?;
        state.entries.insert(
            b.id,
            ObjectEntry { h_bbox: h_b.clone(), h_obj: h_f.clone(), last_seen: packet.frame_idx },
        );
        h_b_rows.push(h_b);
        h_f_rows.push(h_f);
    }

    let (_, weighted_b, _) = attention(&model.attn_bbox, &h_b_rows)?;
    let (_, weighted_f, _) = attention(&model.attn_obj, &h_f_rows)?;

    let mut scores = BTreeMap::new();
    for (i, b) in boxes.iter().enumerate() {
        let mut unified = weighted_b[i].clone();
        unified.extend_from_slice(&weighted_f[i]);
        let (logits, _) = linear_forward(&model.classifier, &unified)?;
        let probs = softmax(&logits)?;
        scores.insert(b.id, probs[1]);
    }

    // Expire long-absent tracks.
    let ttl = model.cfg.absent_ttl;
    let now = packet.frame_idx;
    state.entries.retain(|_, e| now.saturating_sub(e.last_seen) <= ttl);

    Ok(scores)
}

/// One observation step over a fresh window graph built from the
/// packet's events (the batch path).
pub fn step(
    model: &HybridModel,
    graph_cfg: &GraphConfig,
    state: &mut ObjectState,
    packet: &FramePacket,
) -> Result<BTreeMap<u32, f64>> {
    packet.validate()?;
    let graph = build_window_graph(graph_cfg, packet)?;
    score_packet(model, state, packet, &graph)
}

/// Build and fuse the window graph for a packet in one shot.
pub fn build_window_graph(
    graph_cfg: &GraphConfig,
    packet: &FramePacket,
) -> Result<EventGraph> {
    let mut stream = crate::event::EventStream::new(graph_cfg.width, graph_cfg.height);
    stream.events = packet.events.clone();
    let mut graph = build_graph_in_window(&stream, *graph_cfg, packet.window_us)?;
    fuse_node_features(&mut graph, &packet.fmap)?;
    Ok(graph)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Event-by-event insertion with incremental activation refresh
    /// instead of batch graph builds.
    pub incremental: bool,
    /// Record wall-clock inference times (non-deterministic output).
    pub measure_timing: bool,
}

/// Fold [`step`] over a scenario's packets. Packets must be in time
/// order. The per-frame aggregate is the max over object scores, zero
/// when no objects are present.
pub fn run_sequence(model: &HybridModel, scenario: &Scenario, opts: &RunOptions) -> Result<RiskTimeline> {
    let mut prev_t: Option<u64> = None;
    for p in &scenario.packets {
        if let Some(t) = prev_t {
            if p.t_us <= t {
                return Err(Error::invalid(format!(
                    "packets out of order: t={} after {}",
                    p.t_us, t
                )));
            }
        }
        prev_t = Some(p.t_us);
        p.validate()?;
    }

    let mut state = ObjectState::new();
    let mut timeline = RiskTimeline::default();
    let depth = model.cfg.gnn_layers;
    for packet in &scenario.packets {
        let started = Instant::now();
        let scores = if opts.incremental {
            let mut graph = EventGraph::with_window(scenario.graph_cfg, packet.window_us)?;
            let mut cache = ActivationCache::empty(model.cfg.gnn_layers);
            for &ev in &packet.events {
                let dirty = graph.insert_event(ev, depth)?;
                let newest = graph.len() - 1;
                fuse_node_feature_at(&mut graph, newest, &packet.fmap);
                step_incremental(&model.gnn, &graph, &dirty, &mut cache)?;
            }
            score_packet(model, &mut state, packet, &graph)?
        } else {
            let graph = build_window_graph(&scenario.graph_cfg, packet)?;
            score_packet(model, &mut state, packet, &graph)?
        };
        let infer_us = if opts.measure_timing {
            started.elapsed().as_micros() as u64
        } else {
            0
        };
        let frame_score = scores.values().cloned().fold(0.0, f64::max);
        timeline.frames.push(FrameScore {
            frame: packet.frame_idx,
            t_us: packet.t_us,
            objects: scores,
            frame_score,
            infer_us,
        });
    }
    Ok(timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::ModelConfig;

    fn tiny_model() -> HybridModel {
        HybridModel::new(ModelConfig {
            gnn_hidden: 4,
            bbox_hidden: 4,
            obj_hidden: 4,
            obj_feat_dim: 4,
            extractor_channels: [2, 2],
            seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn graph_cfg() -> GraphConfig {
        GraphConfig { radius: 0.05, beta: 1e-6, max_neighbors: 16, width: 32, height: 24 }
    }

    fn packet(frame_idx: u64, t_us: u64, events: Vec<Event>, boxes: Vec<ObjectBox>) -> FramePacket {
        FramePacket {
            frame_idx,
            t_us,
            window_us: (t_us.saturating_sub(50_000), t_us),
            events,
            fmap: FeatureMap::zeros(6, 8, 2),
            boxes,
        }
    }

    fn obox(id: u32) -> ObjectBox {
        ObjectBox::from_pixels(
            &crate::event::scenario::BBox { object_id: id, x_min: 2, y_min: 2, x_max: 10, y_max: 8 },
            32,
            24,
        )
    }

    #[test]
    fn zero_objects_empty_scores() {
        let model = tiny_model();
        let mut state = ObjectState::new();
        let p = packet(0, 50_000, vec![], vec![]);
        let scores = step(&model, &graph_cfg(), &mut state, &p).unwrap();
        assert!(scores.is_empty());
        assert!(state.is_empty());
    }

    #[test]
    fn zero_classifier_gives_half() {
        let mut model = tiny_model();
        model.classifier.weight.fill(0.0);
        model.classifier.bias.fill(0.0);
        let mut state = ObjectState::new();
        let p = packet(0, 50_000, vec![], vec![obox(1)]);
        let scores = step(&model, &graph_cfg(), &mut state, &p).unwrap();
        assert_eq!(scores[&1], 0.5);
    }

    #[test]
    fn replay_with_reset_state_is_deterministic() {
        let model = tiny_model();
        let events = vec![
            Event { x: 4, y: 4, t: 10_000, p: 1 },
            Event { x: 5, y: 4, t: 20_000, p: -1 },
            Event { x: 5, y: 5, t: 30_000, p: 1 },
        ];
        let run = || {
            let mut state = ObjectState::new();
            let p1 = packet(0, 50_000, events.clone(), vec![obox(1), obox(2)]);
            let s1 = step(&model, &graph_cfg(), &mut state, &p1).unwrap();
            let p2 = packet(1, 100_000, vec![], vec![obox(1)]);
            let s2 = step(&model, &graph_cfg(), &mut state, &p2).unwrap();
            (s1, s2)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn absent_objects_keep_state_and_expire() {
        let model = tiny_model();
        let mut state = ObjectState::new();
        let p0 = packet(0, 50_000, vec![], vec![obox(7)]);
        step(&model, &graph_cfg(), &mut state, &p0).unwrap();
        assert!(state.hidden(7).is_some());
        // Object absent but within the TTL: state retained.
        let p1 = packet(10, 550_000, vec![], vec![]);
        step(&model, &graph_cfg(), &mut state, &p1).unwrap();
        assert!(state.hidden(7).is_some());
        // Past the TTL: dropped.
        let p2 = packet(40, 2_050_000, vec![], vec![]);
        step(&model, &graph_cfg(), &mut state, &p2).unwrap();
        assert!(state.hidden(7).is_none());
    }

    #[test]
    fn out_of_order_packets_rejected() {
        let model = tiny_model();
        let scenario = Scenario {
            name: "t".into(),
            graph_cfg: graph_cfg(),
            packets: vec![packet(0, 100_000, vec![], vec![]), packet(1, 50_000, vec![], vec![])],
            labels: LabelSet {
                onset_us: None,
                accident_us: None,
                frame_labels: vec![0, 0],
                object_labels: Default::default(),
            },
        };
        assert!(run_sequence(&model, &scenario, &RunOptions::default()).is_err());
    }

    #[test]
    fn empty_sequence_empty_timeline() {
        let model = tiny_model();
        let scenario = Scenario {
            name: "t".into(),
            graph_cfg: graph_cfg(),
            packets: vec![],
            labels: LabelSet {
                onset_us: None,
                accident_us: None,
                frame_labels: vec![],
                object_labels: Default::default(),
            },
        };
        let tl = run_sequence(&model, &scenario, &RunOptions::default()).unwrap();
        assert!(tl.frames.is_empty());
    }
}
