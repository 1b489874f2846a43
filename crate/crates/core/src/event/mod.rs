//! Event and frame data types plus the conversions between them.
//!
//! An [`Event`] is a single polarity change at a pixel; an [`EventStream`]
//! is an ordered sequence of events with known sensor dimensions. Frames
//! are dense grayscale snapshots; [`convert::frames_to_events`] turns a
//! frame sequence into the event stream a contrast-threshold sensor would
//! have produced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod convert;
pub mod io;
pub mod scenario;

pub use convert::{frames_to_events, frames_to_events_with, ConvertOptions, IntensityDomain};
pub use scenario::{synth_scenario, AnomalySpec, BBox, BBoxTracks, LabelSet, ObjectSpec, Preset, ScenarioSpec, Waypoint};

/// A single polarity change: pixel column `x`, row `y`, timestamp `t`
/// in microseconds, polarity `p` in {-1, +1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: i8,
}

impl Event {
    /// Lexicographic stream order: (t, y, x).
    pub fn stream_key(&self) -> (u64, u16, u16) {
        (self.t, self.y, self.x)
    }
}

/// An ordered event sequence with sensor dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sort into canonical (t, y, x) order.
    pub fn sort(&mut self) {
        self.events.sort_by_key(Event::stream_key);
    }

    /// Checks bounds, polarity values, and (t, y, x) ordering.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<(u64, u16, u16)> = None;
        for ev in &self.events {
            if ev.x >= self.width || ev.y >= self.height {
                return Err(Error::invalid(format!(
                    "event at ({}, {}) outside sensor {}x{}",
                    ev.x, ev.y, self.width, self.height
                )));
            }
            if ev.p != 1 && ev.p != -1 {
                return Err(Error::invalid(format!("event polarity {}", ev.p)));
            }
            if let Some(p) = prev {
                if ev.stream_key() < p {
                    return Err(Error::invalid(format!(
                        "event stream not sorted at t={} after t={}",
                        ev.t, p.0
                    )));
                }
            }
            prev = Some(ev.stream_key());
        }
        Ok(())
    }

    /// Events with `t_lo < t <= t_hi`, relying on stream order.
    pub fn window(&self, t_lo: u64, t_hi: u64) -> &[Event] {
        let start = self.events.partition_point(|e| e.t <= t_lo);
        let end = self.events.partition_point(|e| e.t <= t_hi);
        &self.events[start..end]
    }
}

/// A grayscale frame: timestamp plus a row-major intensity grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub t_us: u64,
    pub pixels: Vec<u8>,
}

/// An ordered sequence of same-sized grayscale frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub width: u16,
    pub height: u16,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn pixel(&self, frame: usize, x: u16, y: u16) -> u8 {
        self.frames[frame].pixels[y as usize * self.width as usize + x as usize]
    }

    /// Checks grid sizes, strictly increasing timestamps, and that the
    /// nominal fps matches the observed frame spacing within 1%.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        let expect = self.width as usize * self.height as usize;
        for (i, f) in self.frames.iter().enumerate() {
            if f.pixels.len() != expect {
                return Err(Error::invalid(format!(
                    "frame {} has {} pixels, expected {}",
                    i,
                    f.pixels.len(),
                    expect
                )));
            }
        }
        for w in self.frames.windows(2) {
            if w[1].t_us <= w[0].t_us {
                return Err(Error::invalid(format!(
                    "frame timestamps not strictly increasing: {} after {}",
                    w[1].t_us, w[0].t_us
                )));
            }
            let dt = (w[1].t_us - w[0].t_us) as f64;
            let nominal = 1e6 / self.fps;
            if (dt - nominal).abs() > 0.01 * nominal {
                return Err(Error::invalid(format!(
                    "frame spacing {}us inconsistent with fps {}",
                    dt, self.fps
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_window_bounds() {
        let mut s = EventStream::new(4, 4);
        for t in [10u64, 20, 20, 30, 40] {
            s.events.push(Event { x: 0, y: 0, t, p: 1 });
        }
        assert_eq!(s.window(10, 30).len(), 3);
        assert_eq!(s.window(0, 10).len(), 1);
        assert_eq!(s.window(40, 50).len(), 0);
    }

    #[test]
    fn validate_rejects_out_of_bounds() {
        let mut s = EventStream::new(4, 4);
        s.events.push(Event { x: 4, y: 0, t: 0, p: 1 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn validate_rejects_unsorted() {
        let mut s = EventStream::new(4, 4);
        s.events.push(Event { x: 0, y: 0, t: 10, p: 1 });
        s.events.push(Event { x: 0, y: 0, t: 5, p: 1 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn frame_fps_consistency() {
        let fs = FrameSequence {
            width: 2,
            height: 2,
            fps: 20.0,
            frames: vec![
                Frame { t_us: 0, pixels: vec![0; 4] },
                Frame { t_us: 50_000, pixels: vec![0; 4] },
                Frame { t_us: 100_000, pixels: vec![0; 4] },
            ],
        };
        assert!(fs.validate().is_ok());
        let mut bad = fs.clone();
        bad.frames[2].t_us = 90_000;
        assert!(bad.validate().is_err());
    }
}
