//! Assembly of scorable scenarios from raw inputs, and the bridge from
//! risk timelines to the metric suite's per-scenario outcomes.

use crate::error::Result;
use crate::event::scenario::{BBoxTracks, LabelSet};
use crate::event::{EventStream, FrameSequence};
use crate::metrics::ScenarioOutcome;
use crate::pipeline::features::FeatureMap;
use crate::pipeline::model::{HybridModel, ObjectBox};
use crate::pipeline::run::{FramePacket, RiskTimeline, Scenario};

/// Build per-frame packets: each frame carries the events of the
/// inter-frame window (t_prev, t_now], its feature map, and detections.
pub fn assemble_scenario(
    model: &HybridModel,
    name: &str,
    frames: &FrameSequence,
    stream: &EventStream,
    tracks: &BBoxTracks,
    labels: LabelSet,
) -> Result<Scenario> {
    frames.validate()?;
    stream.validate()?;
    let duration = frames.frames.last().map(|f| f.t_us).unwrap_or(0).max(1);
    let graph_cfg = model.cfg.graph_config(frames.width, frames.height, duration);

    let zero_dims = (
        (frames.height as usize).div_ceil(2).div_ceil(2),
        (frames.width as usize).div_ceil(2).div_ceil(2),
        model.extractor.out_channels(),
    );

    let mut packets = Vec::with_capacity(frames.frames.len());
    let mut prev_t = 0u64;
    for (k, frame) in frames.frames.iter().enumerate() {
        let window = (prev_t, frame.t_us);
        let fmap = if model.cfg.use_rgb {
            model.extractor.extract(&frame.pixels, frames.width, frames.height)
        } else {
            FeatureMap::zeros(zero_dims.0, zero_dims.1, zero_dims.2)
        };
        let boxes: Vec<ObjectBox> = tracks
            .boxes
            .get(k)
            .map(|bs| {
                bs.iter()
                    .map(|b| ObjectBox::from_pixels(b, frames.width, frames.height))
                    .collect()
            })
            .unwrap_or_default();
        packets.push(FramePacket {
            frame_idx: k as u64,
            t_us: frame.t_us,
            window_us: window,
            events: stream.window(window.0, window.1).to_vec(),
            fmap,
            boxes,
        });
        prev_t = frame.t_us;
    }
    Ok(Scenario { name: name.to_string(), graph_cfg, packets, labels })
}

/// Collapse a timeline plus its ground truth into the inputs of mTTA and
/// mResponse.
pub fn outcome_from_timeline(timeline: &RiskTimeline, labels: &LabelSet) -> ScenarioOutcome {
    let risky = labels.risky_object();
    ScenarioOutcome {
        frame_times_us: timeline.frame_times_us(),
        frame_scores: timeline.frame_scores(),
        risky_scores: timeline
            .frames
            .iter()
            .map(|f| risky.and_then(|id| f.objects.get(&id).copied()))
            .collect(),
        onset_us: labels.onset_us,
        accident_us: labels.accident_us,
        mean_infer_us: timeline.mean_infer_us(),
    }
}

/// Object-level (score, label) pairs pooled from one scenario.
pub fn object_scored_set(timeline: &RiskTimeline, labels: &LabelSet, out: &mut crate::metrics::ScoredSet) {
    for frame in &timeline.frames {
        for (&id, &score) in &frame.objects {
            let label = labels
                .object_labels
                .get(&id)
                .and_then(|v| v.get(frame.frame as usize))
                .copied()
                .unwrap_or(0);
            out.push(score, label);
        }
    }
}

/// Frame-level scores aligned with frame labels.
pub fn frame_scored(timeline: &RiskTimeline, labels: &LabelSet) -> (Vec<f64>, Vec<u8>) {
    let scores = timeline.frame_scores();
    let labels_vec: Vec<u8> = timeline
        .frames
        .iter()
        .map(|f| labels.frame_labels.get(f.frame as usize).copied().unwrap_or(0))
        .collect();
    (scores, labels_vec)
}
