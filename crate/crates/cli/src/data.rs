//! Scenario directory layout shared by the commands:
//!
//! ```text
//! <scenario>/
//!   frames/frame_00000.pgm ...
//!   frames.jsonl
//!   events.evt
//!   boxes.csv
//!   labels.json
//!   scenario.json
//! ```
//!
//! A data root is either one scenario directory or a directory of
//! `scenario_*` subdirectories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use evrisk_core::event::io as evio;
use evrisk_core::pipeline::{assemble_scenario, HybridModel, RiskTimeline, Scenario};

pub fn is_scenario_dir(dir: &Path) -> bool {
    dir.join("frames.jsonl").is_file()
        && dir.join("events.evt").is_file()
        && dir.join("boxes.csv").is_file()
        && dir.join("labels.json").is_file()
}

/// Scenario directories under a root, sorted by name for determinism.
pub fn scenario_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if is_scenario_dir(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() && is_scenario_dir(&path) {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenarios found under {}", root.display());
    }
    Ok(dirs)
}

pub fn scenario_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

pub fn load_scenario(model: &HybridModel, dir: &Path) -> anyhow::Result<Scenario> {
    let frames = evio::read_frames(dir)?;
    let stream = evio::read_events(&dir.join("events.evt"))?;
    let tracks = evio::read_boxes(&dir.join("boxes.csv"), frames.frames.len())?;
    let labels = evio::read_labels(&dir.join("labels.json"))?;
    Ok(assemble_scenario(model, &scenario_name(dir), &frames, &stream, &tracks, labels)?)
}

/// One JSON object per frame.
pub fn write_scores_jsonl(timeline: &RiskTimeline, path: &Path) -> anyhow::Result<()> {
    let mut out = String::new();
    for frame in &timeline.frames {
        out.push_str(&serde_json::to_string(frame)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scores_jsonl(path: &Path) -> anyhow::Result<RiskTimeline> {
    let text = std::fs::read_to_string(path)?;
    let mut timeline = RiskTimeline::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        timeline.frames.push(serde_json::from_str(line)?);
    }
    Ok(timeline)
}
