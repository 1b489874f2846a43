//! Frame-to-event conversion.
//!
//! Emulates a contrast-threshold sensor: per pixel, a reference level
//! tracks the last emission point, and a change whose magnitude strictly
//! exceeds the threshold emits one event per full threshold step, with
//! event times linearly interpolated inside the frame interval.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, FrameSequence};

/// Intensity domain the threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum IntensityDomain {
    /// log(1 + L); scale-invariant contrast, the default.
    #[default]
    Log,
    /// Raw intensity L.
    Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvertOptions {
    pub threshold: f64,
    pub refractory_us: u64,
    pub domain: IntensityDomain,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            threshold: 0.2,
            refractory_us: 0,
            domain: IntensityDomain::Log,
        }
    }
}

fn level(value: u8, domain: IntensityDomain) -> f64 {
    match domain {
        IntensityDomain::Log => (1.0 + value as f64).ln(),
        IntensityDomain::Linear => value as f64,
    }
}

/// Number of events emitted for a deviation `delta` from the reference
/// level: the largest k with k*threshold < |delta|, except that a
/// deviation landing exactly on a rung also fires when k >= 2 (a change
/// of exactly one threshold stays below the strict trigger). The
/// division only seeds the search; comparisons use multiplication so
/// boundary cases are decided consistently everywhere.
fn crossings(delta: f64, threshold: f64) -> u64 {
    let mag = delta.abs();
    let fires = |k: u64| {
        let rung = k as f64 * threshold;
        rung < mag || (rung == mag && k >= 2)
    };
    let mut n = (mag / threshold).floor() as u64;
    while n >= 1 && !fires(n) {
        n -= 1;
    }
    while fires(n + 1) {
        n += 1;
    }
    n
}

/// Convert frames to events with the default log-intensity trigger.
pub fn frames_to_events(
    frames: &FrameSequence,
    threshold: f64,
    refractory_us: u64,
) -> Result<EventStream> {
    frames_to_events_with(
        frames,
        ConvertOptions {
            threshold,
            refractory_us,
            domain: IntensityDomain::Log,
        },
    )
}

pub fn frames_to_events_with(frames: &FrameSequence, opts: ConvertOptions) -> Result<EventStream> {
    if !(opts.threshold > 0.0) {
        return Err(Error::invalid("threshold must be positive"));
    }
    if frames.frames.is_empty() {
        return Err(Error::invalid("empty frame sequence"));
    }
    if frames.frames.len() < 2 {
        return Err(Error::invalid("need at least two frames"));
    }
    frames.validate()?;

    let w = frames.width as usize;
    let h = frames.height as usize;
    let first = &frames.frames[0];
    let mut reference: Vec<f64> = first.pixels.iter().map(|&v| level(v, opts.domain)).collect();
    let mut prev_level: Vec<f64> = reference.clone();
    let mut last_emit: Vec<Option<u64>> = vec![None; w * h];
    let mut prev_t = first.t_us;

    let mut out = EventStream::new(frames.width, frames.height);
    for frame in &frames.frames[1..] {
        let t1 = frame.t_us;
        for (idx, &raw) in frame.pixels.iter().enumerate() {
            let cur = level(raw, opts.domain);
            let delta = cur - reference[idx];
            let n = crossings(delta, opts.threshold);
            if n > 0 {
                let sign = if delta > 0.0 { 1.0 } else { -1.0 };
                let p: i8 = if delta > 0.0 { 1 } else { -1 };
                let v0 = prev_level[idx];
                let x = (idx % w) as u16;
                let y = (idx / w) as u16;
                for i in 1..=n {
                    let lvl = reference[idx] + sign * i as f64 * opts.threshold;
                    // v0 may trail the reference by up to one threshold, so
                    // the crossing fraction stays within [0, 1].
                    let frac = ((lvl - v0) / (cur - v0)).clamp(0.0, 1.0);
                    let t = prev_t + (frac * (t1 - prev_t) as f64).round() as u64;
                    let keep = match last_emit[idx] {
                        Some(last) => t - last >= opts.refractory_us,
                        None => true,
                    };
                    if keep {
                        out.events.push(Event { x, y, t, p });
                        last_emit[idx] = Some(t);
                    }
                }
                reference[idx] += sign * n as f64 * opts.threshold;
            }
            prev_level[idx] = cur;
        }
        prev_t = t1;
    }

    out.sort();
    Ok(out)
}

/// Inject uniform background noise: Poisson-timed events at random pixels
/// with random polarity, merged into the stream in canonical order.
pub fn add_noise(stream: &mut EventStream, rate_hz: f64, seed: u64) {
    if !(rate_hz > 0.0) || stream.events.is_empty() {
        return;
    }
    let t_start = stream.events.first().unwrap().t;
    let t_end = stream.events.last().unwrap().t;
    if t_end <= t_start {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = t_start as f64;
    loop {
        let gap_s: f64 = -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / rate_hz;
        t += gap_s * 1e6;
        if t >= t_end as f64 {
            break;
        }
        stream.events.push(Event {
            x: rng.gen_range(0..stream.width),
            y: rng.gen_range(0..stream.height),
            t: t as u64,
            p: if rng.gen::<bool>() { 1 } else { -1 },
        });
    }
    stream.sort();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Frame;

    fn seq(width: u16, height: u16, frames: Vec<(u64, Vec<u8>)>) -> FrameSequence {
        let dt = if frames.len() >= 2 {
            (frames[1].0 - frames[0].0) as f64
        } else {
            50_000.0
        };
        FrameSequence {
            width,
            height,
            fps: 1e6 / dt,
            frames: frames
                .into_iter()
                .map(|(t_us, pixels)| Frame { t_us, pixels })
                .collect(),
        }
    }

    #[test]
    fn constant_pixel_emits_nothing() {
        let fs = seq(1, 1, vec![(0, vec![100]), (50_000, vec![100]), (100_000, vec![100])]);
        let s = frames_to_events(&fs, 0.1, 0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn exact_double_threshold_emits_two_events() {
        // Choose the threshold as exactly half the log step so the rise is
        // exactly two thresholds; halving is exact in binary floating point.
        let lo = 50u8;
        let hi = 200u8;
        let delta = (1.0 + hi as f64).ln() - (1.0 + lo as f64).ln();
        let c = delta / 2.0;
        let fs = seq(1, 1, vec![(0, vec![lo]), (100_000, vec![hi])]);
        let s = frames_to_events(&fs, c, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events.iter().all(|e| e.p == 1));
        // Crossings at half and full step of the linear ramp.
        assert_eq!(s.events[0].t, 50_000);
        assert_eq!(s.events[1].t, 100_000);
    }

    #[test]
    fn exact_threshold_is_strict() {
        let lo = 50u8;
        let hi = 200u8;
        let c = (1.0 + hi as f64).ln() - (1.0 + lo as f64).ln();
        let fs = seq(1, 1, vec![(0, vec![lo]), (50_000, vec![hi])]);
        let s = frames_to_events(&fs, c, 0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn empty_sequence_is_invalid() {
        let fs = seq(1, 1, vec![]);
        assert!(frames_to_events(&fs, 0.1, 0).is_err());
    }

    #[test]
    fn negative_change_gives_negative_polarity() {
        let fs = seq(1, 1, vec![(0, vec![200]), (50_000, vec![20])]);
        let s = frames_to_events(&fs, 0.3, 0).unwrap();
        assert!(!s.is_empty());
        assert!(s.events.iter().all(|e| e.p == -1));
    }

    #[test]
    fn refractory_drops_close_events() {
        let lo = 10u8;
        let hi = 250u8;
        let fs = seq(1, 1, vec![(0, vec![lo]), (100_000, vec![hi])]);
        let unconstrained = frames_to_events(&fs, 0.2, 0).unwrap();
        assert!(unconstrained.len() > 2);
        let sparse = frames_to_events(&fs, 0.2, 1_000_000).unwrap();
        assert_eq!(sparse.len(), 1);
    }

    #[test]
    fn accumulation_across_frames() {
        // Each step rises by ~0.6 thresholds; the drift accumulates and
        // crosses once every second frame.
        let vals = [100u8, 110, 121, 133, 146];
        let frames: Vec<(u64, Vec<u8>)> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as u64 * 50_000, vec![v]))
            .collect();
        let fs = seq(1, 1, frames);
        let total: f64 = (1.0 + 146f64).ln() - (1.0 + 100f64).ln();
        let c = total / 2.5;
        let s = frames_to_events(&fs, c, 0).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn output_sorted_by_t_y_x() {
        let fs = seq(
            3,
            2,
            vec![
                (0, vec![10, 200, 60, 90, 10, 240]),
                (50_000, vec![240, 10, 90, 60, 200, 10]),
            ],
        );
        let s = frames_to_events(&fs, 0.25, 0).unwrap();
        assert!(!s.is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn noise_keeps_order_and_bounds() {
        let fs = seq(4, 4, vec![(0, vec![10; 16]), (50_000, vec![200; 16]), (100_000, vec![10; 16])]);
        let mut s = frames_to_events(&fs, 0.3, 0).unwrap();
        let before = s.len();
        add_noise(&mut s, 2000.0, 7);
        assert!(s.len() > before);
        s.validate().unwrap();
    }
}
