//! `train`: fit the hybrid model on a directory of scenarios.

use std::path::PathBuf;

use clap::Args;

use evrisk_core::pipeline::{train, HybridModel};

use crate::config::ToolConfig;
use crate::data::{load_scenario, scenario_dirs};
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scenario directory or a directory of scenarios.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV path (default: loss.csv beside the model).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    #[arg(long)]
    pub lr_gnn: Option<f64>,
    /// Drop the image branch (zero feature maps).
    #[arg(long)]
    pub no_rgb: bool,
}

pub fn run(args: &TrainArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    if args.no_rgb {
        model_cfg.use_rgb = false;
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    train_cfg.threads = threads;
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = args.lr_head {
        train_cfg.lr_head = lr;
    }
    if let Some(lr) = args.lr_gnn {
        train_cfg.lr_gnn = lr;
    }

    let mut model = HybridModel::new(model_cfg)?;
    let dirs = scenario_dirs(&args.data).map_err(|e| AppError::Data(e.to_string()))?;
    let mut scenarios = Vec::with_capacity(dirs.len());
    for d in &dirs {
        scenarios.push(load_scenario(&model, d).map_err(|e| AppError::Data(format!("{}: {e}", d.display())))?);
    }

    let report = if train_cfg.epochs == 0 {
        evrisk_core::pipeline::TrainReport { epoch_losses: Vec::new() }
    } else {
        train(&mut model, &scenarios, &train_cfg)?
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    model.save(&args.out)?;
    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.out.parent().unwrap_or(std::path::Path::new(".")).join("loss.csv"));
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(&loss_path, csv)?;

    let mut manifest = ManifestBuilder::new(
        "train",
        seed,
        threads,
        serde_json::json!({ "tool": cfg, "effective_train": train_cfg }),
    );
    manifest.input(&args.data);
    manifest.output(&args.out);
    manifest.output(&loss_path);
    let dir = args.out.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    manifest.write(&dir)?;
    log::info!(
        "trained on {} scenarios for {} epochs; model at {}",
        scenarios.len(),
        report.epoch_losses.len(),
        args.out.display()
    );
    Ok(())
}
