//! On-disk formats: the EVT1 binary event file, binary PGM frames with a
//! JSON-lines manifest, bounding-box CSV, and the labels JSON document.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::scenario::{BBox, BBoxTracks, LabelSet};
use crate::event::{Event, EventStream, Frame, FrameSequence};

const EVT_MAGIC: [u8; 4] = *b"EVT1";
const EVT_HEADER_LEN: u64 = 12;
const EVT_RECORD_LEN: u64 = 14;

/// Write an event stream: magic "EVT1", u16 W, u16 H, u32 count, then
/// per event u16 x, u16 y, i8 p, pad byte, u64 t, all little-endian.
pub fn write_events(stream: &EventStream, path: &Path) -> Result<()> {
    stream.validate().map_err(|e| Error::invalid(format!("refusing to write: {e}")))?;
    let mut buf = Vec::with_capacity(EVT_HEADER_LEN as usize + stream.len() * EVT_RECORD_LEN as usize);
    buf.extend_from_slice(&EVT_MAGIC);
    buf.extend_from_slice(&stream.width.to_le_bytes());
    buf.extend_from_slice(&stream.height.to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for ev in &stream.events {
        buf.extend_from_slice(&ev.x.to_le_bytes());
        buf.extend_from_slice(&ev.y.to_le_bytes());
        buf.push(ev.p as u8);
        buf.push(0);
        buf.extend_from_slice(&ev.t.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path)?;
    parse_events(&bytes)
}

pub fn parse_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { offset: bytes.len() as u64, context: "header magic".into() });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != EVT_MAGIC {
        return Err(Error::BadMagic { offset: 0, expected: EVT_MAGIC, found: magic });
    }
    if bytes.len() < EVT_HEADER_LEN as usize {
        return Err(Error::Truncated { offset: bytes.len() as u64, context: "header".into() });
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;

    let mut stream = EventStream::new(width, height);
    stream.events.reserve(count);
    let mut prev_t: Option<u64> = None;
    for i in 0..count {
        let off = EVT_HEADER_LEN + i as u64 * EVT_RECORD_LEN;
        let end = off + EVT_RECORD_LEN;
        if bytes.len() < end as usize {
            return Err(Error::Truncated { offset: off, context: format!("event record {i}") });
        }
        let rec = &bytes[off as usize..end as usize];
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let p = rec[4] as i8;
        let t = u64::from_le_bytes(rec[6..14].try_into().unwrap());
        if x >= width || y >= height {
            return Err(Error::OutOfBounds { offset: off, x, y, width, height });
        }
        if p != 1 && p != -1 {
            return Err(Error::BadPolarity { offset: off, value: p });
        }
        if let Some(prev) = prev_t {
            if t < prev {
                return Err(Error::NonMonotoneTimestamp { offset: off, t, prev });
            }
        }
        prev_t = Some(t);
        stream.events.push(Event { x, y, t, p });
    }
    Ok(stream)
}

// ---------------------------------------------------------------------------
// Frames: binary PGM files plus a JSON-lines manifest.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    path: String,
    t_us: u64,
}

/// Write frames as `frames/frame_#####.pgm` plus `frames.jsonl` under `dir`.
pub fn write_frames(seq: &FrameSequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir)?;
    let manifest_path = dir.join("frames.jsonl");
    let mut manifest = BufWriter::new(fs::File::create(&manifest_path)?);
    for (i, frame) in seq.frames.iter().enumerate() {
        let rel = format!("frames/frame_{i:05}.pgm");
        let mut buf = Vec::with_capacity(frame.pixels.len() + 32);
        buf.extend_from_slice(format!("P5\n{} {}\n255\n", seq.width, seq.height).as_bytes());
        buf.extend_from_slice(&frame.pixels);
        fs::write(dir.join(&rel), buf)?;
        let line = ManifestLine { path: rel, t_us: frame.t_us };
        writeln!(manifest, "{}", serde_json::to_string(&line)?)?;
    }
    manifest.flush()?;
    Ok(())
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(u16, u16, Vec<u8>)> {
    let err = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    if !bytes.starts_with(b"P5") {
        return Err(err("not a binary PGM"));
    }
    // Read three whitespace-separated tokens after the magic, then a single
    // whitespace byte, then raw data.
    let mut pos = 2usize;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("bad header"))?);
    }
    pos += 1; // single whitespace separating header and data
    let width: u16 = tokens[0].parse().map_err(|_| err("bad width"))?;
    let height: u16 = tokens[1].parse().map_err(|_| err("bad height"))?;
    let maxval: u32 = tokens[2].parse().map_err(|_| err("bad maxval"))?;
    if maxval != 255 {
        return Err(err("only maxval 255 supported"));
    }
    let n = width as usize * height as usize;
    if bytes.len() < pos + n {
        return Err(err("truncated pixel data"));
    }
    Ok((width, height, bytes[pos..pos + n].to_vec()))
}

/// Read frames written by [`write_frames`]; fps is inferred from the
/// first frame interval.
pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let manifest_path = dir.join("frames.jsonl");
    let text = fs::read_to_string(&manifest_path)?;
    let mut frames = Vec::new();
    let mut dims: Option<(u16, u16)> = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(line)?;
        let full: PathBuf = dir.join(&entry.path);
        let bytes = fs::read(&full)?;
        let (w, h, pixels) = parse_pgm(&bytes, &full)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::invalid(format!("frame {} has mismatched dimensions", entry.path)))
            }
            _ => {}
        }
        frames.push(Frame { t_us: entry.t_us, pixels });
    }
    let (width, height) = dims.ok_or_else(|| Error::invalid("empty frame manifest"))?;
    let fps = if frames.len() >= 2 {
        1e6 / (frames[1].t_us - frames[0].t_us) as f64
    } else {
        return Err(Error::invalid("need at least two frames"));
    };
    let seq = FrameSequence { width, height, fps, frames };
    seq.validate()?;
    Ok(seq)
}

// ---------------------------------------------------------------------------
// Bounding boxes: CSV with half-open max edges.
// ---------------------------------------------------------------------------

pub fn write_boxes(tracks: &BBoxTracks, path: &Path) -> Result<()> {
    let mut out = String::from("frame_idx,object_id,x_min,y_min,x_max,y_max\n");
    for (k, boxes) in tracks.boxes.iter().enumerate() {
        for b in boxes {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k, b.object_id, b.x_min, b.y_min, b.x_max, b.y_max
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_boxes(path: &Path, n_frames: usize) -> Result<BBoxTracks> {
    let text = fs::read_to_string(path)?;
    let mut tracks = BBoxTracks { boxes: vec![Vec::new(); n_frames] };
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "frame_idx,object_id,x_min,y_min,x_max,y_max" {
                return Err(Error::invalid(format!("unexpected CSV header: {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::invalid(format!("line {}: expected 6 fields", lineno + 1)));
        }
        let parse = |s: &str| -> Result<u64> {
            s.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("line {}: bad number {s}", lineno + 1)))
        };
        let frame_idx = parse(fields[0])? as usize;
        if frame_idx >= n_frames {
            return Err(Error::invalid(format!("line {}: frame {frame_idx} out of range", lineno + 1)));
        }
        tracks.boxes[frame_idx].push(BBox {
            object_id: parse(fields[1])? as u32,
            x_min: parse(fields[2])? as u16,
            y_min: parse(fields[3])? as u16,
            x_max: parse(fields[4])? as u16,
            y_max: parse(fields[5])? as u16,
        });
    }
    Ok(tracks)
}

pub fn write_labels(labels: &LabelSet, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(labels)?)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
