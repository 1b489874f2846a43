//! `synth`: generate labeled scenarios (frames, events, boxes, labels).

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use evrisk_core::event::convert::{add_noise, frames_to_events_with, ConvertOptions};
use evrisk_core::event::io as evio;
use evrisk_core::event::scenario::{preset_spec, synth_scenario, Preset};
use evrisk_core::event::IntensityDomain;

use crate::config::ToolConfig;
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Preset name (normal, lane-merge, rush-out, oncoming) or `mixed`.
    #[arg(long, default_value = "mixed")]
    pub preset: String,
    /// Number of scenarios; with more than one, `scenario_###`
    /// subdirectories are created.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Contrast threshold for the frame-to-event conversion.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub refractory_us: Option<u64>,
    /// Trigger on linear intensity instead of log(1 + L).
    #[arg(long)]
    pub linear: bool,
    /// Background noise event rate (Hz) injected after conversion.
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

fn emit_scenario(
    preset: Preset,
    seed: u64,
    opts: ConvertOptions,
    noise_rate: f64,
    dir: &Path,
    manifest: &mut ManifestBuilder,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = preset_spec(preset, seed);
    let (frames, tracks, labels) = synth_scenario(&spec)?;
    let mut stream = frames_to_events_with(&frames, opts)?;
    if noise_rate > 0.0 {
        add_noise(&mut stream, noise_rate, seed ^ 0x6e01_5e);
    }

    evio::write_frames(&frames, dir)?;
    evio::write_events(&stream, &dir.join("events.evt"))?;
    evio::write_boxes(&tracks, &dir.join("boxes.csv"))?;
    evio::write_labels(&labels, &dir.join("labels.json"))?;
    std::fs::write(dir.join("scenario.json"), serde_json::to_vec_pretty(&spec)?)?;

    manifest.output(&dir.join("events.evt"));
    manifest.output(&dir.join("boxes.csv"));
    manifest.output(&dir.join("labels.json"));
    manifest.output(&dir.join("scenario.json"));
    manifest.output(&dir.join("frames.jsonl"));
    Ok(())
}

pub fn run(args: &SynthArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    let presets: Vec<Preset> = if args.preset == "mixed" {
        Preset::all().to_vec()
    } else {
        vec![Preset::from_name(&args.preset)
            .ok_or_else(|| AppError::Usage(format!("unknown preset: {}", args.preset)))?]
    };
    if args.count == 0 {
        return Err(AppError::Usage("--count must be at least 1".into()));
    }
    let opts = ConvertOptions {
        threshold: args.threshold.unwrap_or(cfg.convert.threshold),
        refractory_us: args.refractory_us.unwrap_or(cfg.convert.refractory_us),
        domain: if args.linear {
            IntensityDomain::Linear
        } else {
            cfg.convert.domain
        },
    };
    let noise = args.noise_rate.unwrap_or(cfg.convert.noise_rate_hz);

    std::fs::create_dir_all(&args.out)
        .map_err(|e| AppError::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let mut manifest = ManifestBuilder::new("synth", seed, threads, serde_json::to_value(cfg).unwrap());

    if args.count == 1 {
        emit_scenario(presets[0], seed, opts, noise, &args.out, &mut manifest)?;
    } else {
        for i in 0..args.count {
            let preset = presets[i % presets.len()];
            let dir = args.out.join(format!("scenario_{i:03}"));
            emit_scenario(preset, seed + i as u64, opts, noise, &dir, &mut manifest)?;
        }
    }
    manifest.write(&args.out)?;
    log::info!("synthesized {} scenario(s) under {}", args.count, args.out.display());
    Ok(())
}
