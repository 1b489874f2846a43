//! `convert`: frames on disk to an event file.

use std::path::PathBuf;

use clap::Args;

use evrisk_core::event::convert::{add_noise, frames_to_events_with, ConvertOptions};
use evrisk_core::event::io as evio;
use evrisk_core::event::IntensityDomain;

use crate::config::ToolConfig;
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory holding frames.jsonl and the PGM files.
    #[arg(long)]
    pub frames: PathBuf,
    /// Output event file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub refractory_us: Option<u64>,
    #[arg(long)]
    pub linear: bool,
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

pub fn run(args: &ConvertArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    let opts = ConvertOptions {
        threshold: args.threshold.unwrap_or(cfg.convert.threshold),
        refractory_us: args.refractory_us.unwrap_or(cfg.convert.refractory_us),
        domain: if args.linear {
            IntensityDomain::Linear
        } else {
            cfg.convert.domain
        },
    };
    let frames = evio::read_frames(&args.frames)?;
    let mut stream = frames_to_events_with(&frames, opts)?;
    let noise = args.noise_rate.unwrap_or(cfg.convert.noise_rate_hz);
    if noise > 0.0 {
        add_noise(&mut stream, noise, seed ^ 0x6e01_5e);
    }
    evio::write_events(&stream, &args.out)?;

    let mut manifest = ManifestBuilder::new("convert", seed, threads, serde_json::to_value(cfg).unwrap());
    manifest.input(&args.frames);
    manifest.output(&args.out);
    let dir = args.out.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    manifest.write(&dir)?;
    log::info!("wrote {} events to {}", stream.len(), args.out.display());
    Ok(())
}
