//! Synthetic scenario generation: rectangles on waypoint trajectories over
//! a uniform background, rendered to frames with exact bounding boxes and
//! ground-truth risk labels.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Frame, FrameSequence};

/// A point on an object's center path. Segments between waypoints are
/// traversed at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_us: u64,
    pub x: f64,
    pub y: f64,
}

/// A rectangular moving object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub width: u16,
    pub height: u16,
    pub intensity: u8,
    pub waypoints: Vec<Waypoint>,
}

/// Which object misbehaves and when.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub object_id: u32,
    pub onset_us: u64,
    pub collision_us: u64,
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub width: u16,
    pub height: u16,
    pub background: u8,
    pub fps: f64,
    pub duration_us: u64,
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub anomaly: Option<AnomalySpec>,
}

/// One detection: pixel rectangle, half-open on the max edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub object_id: u32,
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
}

/// Per-frame detections for every rendered object.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BBoxTracks {
    /// boxes[frame_idx] lists the objects visible in that frame.
    pub boxes: Vec<Vec<BBox>>,
}

/// Ground truth labels for one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    /// Timestamp of the first positively-labeled frame, if any.
    pub onset_us: Option<u64>,
    /// Collision/accident timestamp, if any.
    pub accident_us: Option<u64>,
    pub frame_labels: Vec<u8>,
    pub object_labels: BTreeMap<u32, Vec<u8>>,
}

impl LabelSet {
    /// The object carrying positive labels, if any.
    pub fn risky_object(&self) -> Option<u32> {
        self.object_labels
            .iter()
            .find(|(_, v)| v.iter().any(|&l| l != 0))
            .map(|(&id, _)| id)
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_us == 0 {
            return Err(Error::invalid("zero-duration scenario"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::invalid("duplicate object ids"));
        }
        for o in &self.objects {
            if o.waypoints.is_empty() {
                return Err(Error::invalid(format!("object {} has no waypoints", o.id)));
            }
            if o.waypoints.windows(2).any(|w| w[1].t_us < w[0].t_us) {
                return Err(Error::invalid(format!("object {} waypoints out of order", o.id)));
            }
        }
        if let Some(a) = &self.anomaly {
            if !self.objects.iter().any(|o| o.id == a.object_id) {
                return Err(Error::invalid("anomaly references unknown object"));
            }
            if !(a.onset_us < a.collision_us && a.collision_us <= self.duration_us) {
                return Err(Error::invalid(
                    "anomaly requires onset < collision <= duration",
                ));
            }
        }
        Ok(())
    }

    pub fn frame_interval_us(&self) -> u64 {
        (1e6 / self.fps).round() as u64
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_us / self.frame_interval_us()) as usize + 1
    }
}

fn position_at(waypoints: &[Waypoint], t_us: u64) -> (f64, f64) {
    let first = waypoints.first().unwrap();
    let last = waypoints.last().unwrap();
    if t_us <= first.t_us {
        return (first.x, first.y);
    }
    if t_us >= last.t_us {
        return (last.x, last.y);
    }
    for w in waypoints.windows(2) {
        if t_us >= w[0].t_us && t_us <= w[1].t_us {
            let span = (w[1].t_us - w[0].t_us) as f64;
            if span == 0.0 {
                return (w[1].x, w[1].y);
            }
            let a = (t_us - w[0].t_us) as f64 / span;
            return (w[0].x + a * (w[1].x - w[0].x), w[0].y + a * (w[1].y - w[0].y));
        }
    }
    (last.x, last.y)
}

/// Clip a centered rectangle to the scene; None when fully outside.
fn clipped_rect(cx: f64, cy: f64, w: u16, h: u16, scene_w: u16, scene_h: u16) -> Option<(u16, u16, u16, u16)> {
    let left = (cx - w as f64 / 2.0).round() as i64;
    let top = (cy - h as f64 / 2.0).round() as i64;
    let right = left + w as i64;
    let bottom = top + h as i64;
    let x0 = left.max(0);
    let y0 = top.max(0);
    let x1 = right.min(scene_w as i64);
    let y1 = bottom.min(scene_h as i64);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some((x0 as u16, y0 as u16, x1 as u16, y1 as u16))
}

/// Render a scenario to frames, boxes, and labels. Deterministic: the
/// spec fully determines the output (the seed only shapes presets).
pub fn synth_scenario(spec: &ScenarioSpec) -> Result<(FrameSequence, BBoxTracks, LabelSet)> {
    spec.validate()?;
    let dt = spec.frame_interval_us();
    let n_frames = spec.frame_count();
    let w = spec.width as usize;
    let h = spec.height as usize;

    let mut frames = Vec::with_capacity(n_frames);
    let mut tracks = BBoxTracks { boxes: vec![Vec::new(); n_frames] };

    for k in 0..n_frames {
        let t_us = k as u64 * dt;
        let mut pixels = vec![spec.background; w * h];
        for obj in &spec.objects {
            let (cx, cy) = position_at(&obj.waypoints, t_us);
            if let Some((x0, y0, x1, y1)) = clipped_rect(cx, cy, obj.width, obj.height, spec.width, spec.height) {
                for y in y0..y1 {
                    let row = y as usize * w;
                    for x in x0..x1 {
                        pixels[row + x as usize] = obj.intensity;
                    }
                }
                tracks.boxes[k].push(BBox {
                    object_id: obj.id,
                    x_min: x0,
                    y_min: y0,
                    x_max: x1,
                    y_max: y1,
                });
            }
        }
        frames.push(Frame { t_us, pixels });
    }

    let mut frame_labels = vec![0u8; n_frames];
    let mut object_labels: BTreeMap<u32, Vec<u8>> = spec
        .objects
        .iter()
        .map(|o| (o.id, vec![0u8; n_frames]))
        .collect();
    let mut onset_us = None;
    let mut accident_us = None;
    if let Some(a) = &spec.anomaly {
        accident_us = Some(a.collision_us);
        for k in 0..n_frames {
            let t_us = k as u64 * dt;
            if t_us >= a.onset_us {
                if onset_us.is_none() {
                    onset_us = Some(t_us);
                }
                frame_labels[k] = 1;
                object_labels.get_mut(&a.object_id).unwrap()[k] = 1;
            }
        }
    }

    let seq = FrameSequence {
        width: spec.width,
        height: spec.height,
        fps: spec.fps,
        frames,
    };
    let labels = LabelSet {
        onset_us,
        accident_us,
        frame_labels,
        object_labels,
    };
    Ok((seq, tracks, labels))
}

/// Built-in scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Constant-velocity traffic, no anomaly.
    Normal,
    /// A neighboring vehicle veers into the ego lane at onset.
    LaneMerge,
    /// An object dashes into view from the edge at high speed.
    RushOut,
    /// An approaching vehicle turns across the ego path at onset.
    Oncoming,
}

impl Preset {
    pub fn all() -> [Preset; 4] {
        [Preset::Normal, Preset::LaneMerge, Preset::RushOut, Preset::Oncoming]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Normal => "normal",
            Preset::LaneMerge => "lane-merge",
            Preset::RushOut => "rush-out",
            Preset::Oncoming => "oncoming",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        match name {
            "normal" => Some(Preset::Normal),
            "lane-merge" => Some(Preset::LaneMerge),
            "rush-out" => Some(Preset::RushOut),
            "oncoming" => Some(Preset::Oncoming),
            _ => None,
        }
    }
}

const SCENE_W: u16 = 64;
const SCENE_H: u16 = 48;
const DURATION_US: u64 = 2_500_000;
const FPS: f64 = 20.0;
const BACKGROUND: u8 = 64;

/// Build a randomized spec for a preset. Same (preset, seed) pairs yield
/// identical specs.
pub fn preset_spec(preset: Preset, seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ preset as u64);
    let dur_s = DURATION_US as f64 / 1e6;
    let jitter = |rng: &mut ChaCha8Rng, v: f64, rel: f64| v * (1.0 + rel * (rng.gen::<f64>() * 2.0 - 1.0));

    // A steadily cruising vehicle present in every preset.
    let cruise_y = 30.0 + rng.gen_range(-2.0..2.0);
    let cruise_speed = jitter(&mut rng, 11.0, 0.2);
    let cruise_x0 = rng.gen_range(4.0..10.0);
    let cruiser = ObjectSpec {
        id: 1,
        width: 9,
        height: 6,
        intensity: 190,
        waypoints: vec![
            Waypoint { t_us: 0, x: cruise_x0, y: cruise_y },
            Waypoint { t_us: DURATION_US, x: cruise_x0 + cruise_speed * dur_s, y: cruise_y },
        ],
    };

    let onset_us = (DURATION_US as f64 * rng.gen_range(0.40..0.60)) as u64;
    let onset_s = onset_us as f64 / 1e6;

    let (objects, anomaly) = match preset {
        Preset::Normal => {
            let y2 = 12.0 + rng.gen_range(-2.0..2.0);
            let speed2 = jitter(&mut rng, 10.0, 0.2);
            let x2 = rng.gen_range(48.0..56.0);
            let second = ObjectSpec {
                id: 2,
                width: 8,
                height: 6,
                intensity: 150,
                waypoints: vec![
                    Waypoint { t_us: 0, x: x2, y: y2 },
                    Waypoint { t_us: DURATION_US, x: x2 - speed2 * dur_s, y: y2 },
                ],
            };
            (vec![cruiser, second], None)
        }
        Preset::LaneMerge => {
            let y0 = 12.0 + rng.gen_range(-2.0..2.0);
            let speed = jitter(&mut rng, 10.0, 0.2);
            let x0 = rng.gen_range(6.0..12.0);
            let x_at_onset = x0 + speed * onset_s;
            // After onset: sharp diagonal cut toward the ego lane, 2.5x speed.
            let merge_speed = speed * 2.5;
            let remain_s = dur_s - onset_s;
            let merger = ObjectSpec {
                id: 2,
                width: 8,
                height: 6,
                intensity: 150,
                waypoints: vec![
                    Waypoint { t_us: 0, x: x0, y: y0 },
                    Waypoint { t_us: onset_us, x: x_at_onset, y: y0 },
                    Waypoint {
                        t_us: DURATION_US,
                        x: x_at_onset + merge_speed * remain_s,
                        y: 38.0 + rng.gen_range(-1.0..1.0),
                    },
                ],
            };
            (
                vec![cruiser, merger],
                Some(AnomalySpec { object_id: 2, onset_us, collision_us: DURATION_US }),
            )
        }
        Preset::RushOut => {
            let y = 22.0 + rng.gen_range(-3.0..3.0);
            let dash_speed = jitter(&mut rng, 42.0, 0.15);
            let remain_s = dur_s - onset_s;
            let runner = ObjectSpec {
                id: 2,
                width: 6,
                height: 7,
                intensity: 225,
                waypoints: vec![
                    Waypoint { t_us: 0, x: -8.0, y },
                    Waypoint { t_us: onset_us, x: -3.0, y },
                    Waypoint { t_us: DURATION_US, x: -3.0 + dash_speed * remain_s, y },
                ],
            };
            (
                vec![cruiser, runner],
                Some(AnomalySpec { object_id: 2, onset_us, collision_us: DURATION_US }),
            )
        }
        Preset::Oncoming => {
            let y0 = 10.0 + rng.gen_range(-2.0..2.0);
            let approach = jitter(&mut rng, 9.0, 0.2);
            let x0 = rng.gen_range(50.0..58.0);
            let x_at_onset = x0 - approach * onset_s;
            let swerve = ObjectSpec {
                id: 2,
                width: 8,
                height: 6,
                intensity: 120,
                waypoints: vec![
                    Waypoint { t_us: 0, x: x0, y: y0 },
                    Waypoint { t_us: onset_us, x: x_at_onset, y: y0 },
                    Waypoint {
                        t_us: DURATION_US,
                        x: x_at_onset - approach * 2.6 * (dur_s - onset_s),
                        y: 34.0 + rng.gen_range(-1.0..1.0),
                    },
                ],
            };
            (
                vec![cruiser, swerve],
                Some(AnomalySpec { object_id: 2, onset_us, collision_us: DURATION_US }),
            )
        }
    };

    ScenarioSpec {
        width: SCENE_W,
        height: SCENE_H,
        background: BACKGROUND,
        fps: FPS,
        duration_us: DURATION_US,
        seed,
        objects,
        anomaly,
    }
}
