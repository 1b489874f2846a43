//! `infer`: score scenarios with a trained model, in batch or
//! incremental mode.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use evrisk_core::pipeline::{run_sequence, HybridModel, RunOptions};

use crate::config::ToolConfig;
use crate::data::{load_scenario, scenario_dirs, scenario_name, write_scores_jsonl};
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Batch,
    Incremental,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Scenario directory or a directory of scenarios.
    #[arg(long)]
    pub data: PathBuf,
    /// Output scores file (single scenario) or directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Batch)]
    pub mode: Mode,
    /// Record wall-clock per-frame inference times. Off by default so
    /// repeated runs are byte-identical.
    #[arg(long)]
    pub measure_latency: bool,
}

pub fn run(args: &InferArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    let model = HybridModel::load(&args.model)?;
    let dirs = scenario_dirs(&args.data).map_err(|e| AppError::Data(e.to_string()))?;
    let opts = RunOptions {
        incremental: args.mode == Mode::Incremental,
        measure_timing: args.measure_latency,
    };

    let multi = dirs.len() > 1;
    if multi {
        std::fs::create_dir_all(&args.out)?;
    } else if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }

    let mut manifest = ManifestBuilder::new("infer", seed, threads, serde_json::to_value(cfg).unwrap());
    manifest.input(&args.model);
    manifest.input(&args.data);

    for dir in &dirs {
        let scenario = load_scenario(&model, dir).map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
        let timeline = run_sequence(&model, &scenario, &opts)?;
        let out_path = if multi {
            args.out.join(format!("{}.scores.jsonl", scenario_name(dir)))
        } else {
            args.out.clone()
        };
        write_scores_jsonl(&timeline, &out_path)?;
        manifest.output(&out_path);
    }

    let manifest_dir: &Path = if multi {
        &args.out
    } else {
        args.out.parent().unwrap_or(Path::new("."))
    };
    manifest.write(manifest_dir)?;
    log::info!("scored {} scenario(s) into {}", dirs.len(), args.out.display());
    Ok(())
}
