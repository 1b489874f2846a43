//! `eval`: the full metric suite over scored scenarios, with curve CSV
//! exports and a self-check against the brute-force metric oracles.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use evrisk_core::event::io::read_labels;
use evrisk_core::event::scenario::LabelSet;
use evrisk_core::metrics::{
    auc_frame, average_precision, mresponse, mtta, pr_points, roc_auc, roc_points, ScoredSet,
};
use evrisk_core::oracle::{average_precision_scan, roc_auc_pairwise};
use evrisk_core::pipeline::{frame_scored, object_scored_set, outcome_from_timeline, RiskTimeline};

use crate::config::ToolConfig;
use crate::data::{read_scores_jsonl, scenario_dirs, scenario_name};
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores file (single scenario) or directory of `*.scores.jsonl`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Matching scenario directory or directory of scenarios (labels).
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the mean per-frame inference time (microseconds) used in
    /// the response-time metric; by default it is read from the scores.
    #[arg(long)]
    pub inference_us: Option<f64>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum MetricValue {
    Value(f64),
    Error { error: String },
}

fn metric(r: Result<f64, evrisk_core::Error>, warnings: &mut Vec<String>, name: &str) -> MetricValue {
    match r {
        Ok(v) => MetricValue::Value(v),
        Err(e) => {
            let msg = e.to_string();
            log::warn!("{name}: {msg}");
            warnings.push(format!("{name}: {msg}"));
            MetricValue::Error { error: msg }
        }
    }
}

#[derive(Debug, Serialize)]
struct ScenarioBreakdown {
    frames: usize,
    positive: bool,
    onset_us: Option<u64>,
    accident_us: Option<u64>,
    max_frame_score: f64,
    detected_at_theta: bool,
    mean_infer_us: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    auc: MetricValue,
    average_precision: MetricValue,
    auc_frame: MetricValue,
    mtta_s: MetricValue,
    mresponse_s: MetricValue,
    config: evrisk_core::metrics::EvalConfig,
    conventions: serde_json::Value,
    scenarios: BTreeMap<String, ScenarioBreakdown>,
    oracle_check: String,
    warnings: Vec<String>,
}

fn write_curve(path: &std::path::Path, header: &str, points: &[(f64, f64)]) -> anyhow::Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (a, b) in points {
        out.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn run(args: &EvalArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    cfg.eval.validate()?;
    // Pair scores with labels by scenario id.
    let mut pairs: Vec<(String, RiskTimeline, LabelSet)> = Vec::new();
    if args.scores.is_file() {
        let dirs = scenario_dirs(&args.data).map_err(|e| AppError::Data(e.to_string()))?;
        if dirs.len() != 1 {
            return Err(AppError::Data(
                "a single scores file needs a single scenario directory".into(),
            ));
        }
        let timeline = read_scores_jsonl(&args.scores).map_err(|e| AppError::Data(e.to_string()))?;
        let labels = read_labels(&dirs[0].join("labels.json"))?;
        pairs.push((scenario_name(&dirs[0]), timeline, labels));
    } else {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.scores)
            .map_err(|e| AppError::Data(format!("{}: {e}", args.scores.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".scores.jsonl")))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(AppError::Data(format!("no *.scores.jsonl under {}", args.scores.display())));
        }
        for path in entries {
            let name = path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .trim_end_matches(".scores.jsonl")
                .to_string();
            let label_path = args.data.join(&name).join("labels.json");
            if !label_path.is_file() {
                return Err(AppError::Data(format!(
                    "scenario id mismatch: scores for `{name}` but no {}",
                    label_path.display()
                )));
            }
            let timeline = read_scores_jsonl(&path).map_err(|e| AppError::Data(e.to_string()))?;
            pairs.push((name, timeline, read_labels(&label_path)?));
        }
    }

    let mut warnings = Vec::new();
    let mut object_set = ScoredSet::default();
    let mut frame_sets = Vec::new();
    let mut outcomes = Vec::new();
    let mut scenarios = BTreeMap::new();
    for (name, timeline, labels) in &pairs {
        object_scored_set(timeline, labels, &mut object_set);
        frame_sets.push(frame_scored(timeline, labels));
        let mut outcome = outcome_from_timeline(timeline, labels);
        if let Some(us) = args.inference_us {
            outcome.mean_infer_us = us;
        }
        let max_score = outcome.frame_scores.iter().cloned().fold(0.0, f64::max);
        scenarios.insert(
            name.clone(),
            ScenarioBreakdown {
                frames: timeline.frames.len(),
                positive: outcome.is_positive(),
                onset_us: outcome.onset_us,
                accident_us: outcome.accident_us,
                max_frame_score: max_score,
                detected_at_theta: max_score > cfg.eval.detect_threshold,
                mean_infer_us: outcome.mean_infer_us,
            },
        );
        outcomes.push(outcome);
    }

    // Cross-check the ranking metrics against the O(n²) oracles when the
    // pooled set is small enough to afford it.
    let oracle_check = if object_set.items.len() <= 5000 {
        let mut ok = true;
        if let Ok(auc) = roc_auc(&object_set) {
            ok &= (auc - roc_auc_pairwise(&object_set)).abs() <= 1e-12;
        }
        if let Ok(ap) = average_precision(&object_set) {
            ok &= (ap - average_precision_scan(&object_set)).abs() <= 1e-12;
        }
        if ok { "verified" } else { "FAILED" }
    } else {
        "skipped (too large)"
    };
    if oracle_check == "FAILED" {
        return Err(AppError::Internal("metric oracle cross-check failed".into()));
    }

    let report = Report {
        auc: metric(roc_auc(&object_set), &mut warnings, "auc"),
        average_precision: metric(average_precision(&object_set), &mut warnings, "average_precision"),
        auc_frame: metric(auc_frame(&frame_sets), &mut warnings, "auc_frame"),
        mtta_s: metric(mtta(&outcomes, cfg.eval.mtta_threshold), &mut warnings, "mtta"),
        mresponse_s: metric(mresponse(&outcomes, &cfg.eval), &mut warnings, "mresponse"),
        config: cfg.eval.clone(),
        conventions: serde_json::json!({
            "frame_score": "max over object scores, 0 when no objects",
            "miss_penalty": "scenario end minus occurrence, plus inference time",
            "detect_inequality": "strict (score > threshold)",
            "response_thresholds_n": cfg.eval.response_thresholds.len(),
        }),
        scenarios,
        oracle_check: oracle_check.to_string(),
        warnings: warnings.clone(),
    };

    std::fs::create_dir_all(&args.out)?;
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_vec_pretty(&report)?)?;
    write_curve(&args.out.join("roc.csv"), "fpr,tpr", &roc_points(&object_set))?;
    write_curve(&args.out.join("pr.csv"), "recall,precision", &pr_points(&object_set))?;
    let mut pooled_frames = ScoredSet::default();
    for (scores, labels) in &frame_sets {
        for (s, l) in scores.iter().zip(labels) {
            pooled_frames.push(*s, *l);
        }
    }
    write_curve(&args.out.join("roc_frame.csv"), "fpr,tpr", &roc_points(&pooled_frames))?;

    let mut manifest = ManifestBuilder::new("eval", seed, threads, serde_json::to_value(cfg).unwrap());
    manifest.input(&args.scores);
    manifest.input(&args.data);
    manifest.output(&report_path);
    manifest.write(&args.out)?;
    if !warnings.is_empty() {
        log::warn!("eval completed with {} warning(s)", warnings.len());
    }
    log::info!("report at {}", report_path.display());
    Ok(())
}
