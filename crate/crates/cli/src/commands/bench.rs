//! `bench`: throughput, single-event update latency, incremental vs
//! full-recompute speedup, and an analytic FLOPs-per-event estimate.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use evrisk_core::event::{Event, EventStream};
use evrisk_core::graph::{build_graph_in_window, DirtySet, EventGraph};
use evrisk_core::pipeline::{
    fuse_node_feature_at, fuse_node_features, step_incremental, ActivationCache, FeatureMap,
    HybridModel, ModelConfig,
};

use crate::config::ToolConfig;
use crate::data::scenario_dirs;
use crate::manifest::ManifestBuilder;
use crate::AppError;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trained model; a seeded default model is used when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use a scenario's events instead of a synthetic stream.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic stream size when no scenario is given.
    #[arg(long, default_value_t = 12_000)]
    pub nodes: usize,
    /// Timed single-event insertions.
    #[arg(long, default_value_t = 100)]
    pub inserts: usize,
    /// Events per timed insertion.
    #[arg(long, default_value_t = 1)]
    pub events_per_insert: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    no_data: bool,
    nodes: usize,
    edges: usize,
    threads: usize,
    build_events_per_sec: f64,
    incremental_updates_per_sec: f64,
    latency_us: LatencyStats,
    full_recompute_us: f64,
    speedup_incremental_vs_full: f64,
    flops_per_event: f64,
    events_per_insert: usize,
}

#[derive(Debug, Default, Serialize)]
struct LatencyStats {
    p50: f64,
    p95: f64,
    p99: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Analytic FLOP count for refreshing one dirty set with the exact
/// spline path: per recomputed node, each in-edge costs four control
/// matrix blends plus a matvec, plus the self matvec, the residual add,
/// the ReLU, and the basis evaluation.
fn dirty_flops(model: &HybridModel, graph: &EventGraph, dirty: &DirtySet) -> f64 {
    let mut flops = 0.0;
    for (l, kernel) in model.gnn.iter().enumerate() {
        let per_matrix = 2.0 * (kernel.in_dim * kernel.out_dim) as f64;
        for &v in &dirty.per_layer[l] {
            let deg = graph.in_edges(v as usize).len() as f64;
            flops += deg * (4.0 * per_matrix + per_matrix + 12.0);
            flops += per_matrix;
            flops += 2.0 * kernel.out_dim as f64;
        }
    }
    flops
}

fn synthetic_stream(n: usize, width: u16, height: u16, seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = EventStream::new(width, height);
    let mut t = 0u64;
    for _ in 0..n {
        t += rng.gen_range(1..200);
        stream.events.push(Event {
            x: rng.gen_range(0..width),
            y: rng.gen_range(0..height),
            t,
            p: if rng.gen::<bool>() { 1 } else { -1 },
        });
    }
    stream
}

pub fn run(args: &BenchArgs, cfg: &ToolConfig, seed: u64, threads: usize) -> Result<(), AppError> {
    let model = match &args.model {
        Some(p) => HybridModel::load(p)?,
        None => HybridModel::new(ModelConfig { seed, ..cfg.model.clone() })?,
    };

    let (width, height) = (240u16, 180u16);
    let stream = match &args.data {
        Some(dir) => {
            let dirs = scenario_dirs(dir).map_err(|e| AppError::Data(e.to_string()))?;
            evrisk_core::event::io::read_events(&dirs[0].join("events.evt"))?
        }
        None => synthetic_stream(args.nodes, width, height, seed ^ 0xbe9c),
    };

    let out_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    if stream.is_empty() {
        let report = BenchReport {
            no_data: true,
            nodes: 0,
            edges: 0,
            threads,
            build_events_per_sec: 0.0,
            incremental_updates_per_sec: 0.0,
            latency_us: LatencyStats::default(),
            full_recompute_us: 0.0,
            speedup_incremental_vs_full: 0.0,
            flops_per_event: 0.0,
            events_per_insert: args.events_per_insert,
        };
        std::fs::write(&args.out, serde_json::to_vec_pretty(&report)?)?;
        log::warn!("bench ran with no events");
        let mut manifest = ManifestBuilder::new("bench", seed, threads, serde_json::to_value(cfg).unwrap());
        manifest.output(&args.out);
        manifest.write(&out_dir)?;
        return Ok(());
    }

    let t_last = stream.events.last().unwrap().t;
    let window = (0u64, t_last + 1_000_000);
    let graph_cfg = evrisk_core::graph::GraphConfig {
        radius: cfg.model.radius,
        beta: 1.0 / window.1 as f64,
        max_neighbors: cfg.model.max_neighbors,
        width: stream.width,
        height: stream.height,
    };
    let fmap = FeatureMap::zeros(
        (stream.height as usize).div_ceil(4).max(1),
        (stream.width as usize).div_ceil(4).max(1),
        model.cfg.extractor_channels[1],
    );

    // Baseline graph build throughput.
    let t0 = Instant::now();
    let mut graph = build_graph_in_window(&stream, graph_cfg, window)?;
    let build_s = t0.elapsed().as_secs_f64();
    fuse_node_features(&mut graph, &fmap)?;
    let mut cache = ActivationCache::full_forward(&model, &graph)?;

    // Timed single-event (or small-batch) incremental updates.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e);
    let depth = model.cfg.gnn_layers;
    let mut latencies = Vec::with_capacity(args.inserts);
    let mut total_flops = 0.0;
    let mut t = t_last;
    for _ in 0..args.inserts {
        let started = Instant::now();
        for _ in 0..args.events_per_insert.max(1) {
            t += rng.gen_range(1..100);
            let ev = Event {
                x: rng.gen_range(0..stream.width),
                y: rng.gen_range(0..stream.height),
                t,
                p: if rng.gen::<bool>() { 1 } else { -1 },
            };
            let dirty = graph.insert_event(ev, depth)?;
            let newest = graph.len() - 1;
            fuse_node_feature_at(&mut graph, newest, &fmap);
            step_incremental(&model.gnn, &graph, &dirty, &mut cache)?;
            total_flops += dirty_flops(&model, &graph, &dirty);
        }
        latencies.push(started.elapsed().as_secs_f64() * 1e6);
    }
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let inc_median_us = percentile(&latencies, 0.5);

    // Full recomputation reference on the final graph.
    let full_reps = 5;
    let mut full_times = Vec::with_capacity(full_reps);
    for _ in 0..full_reps {
        let started = Instant::now();
        let _ = ActivationCache::full_forward(&model, &graph)?;
        full_times.push(started.elapsed().as_secs_f64() * 1e6);
    }
    full_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let full_median_us = percentile(&full_times, 0.5);

    let inserted = args.inserts * args.events_per_insert.max(1);
    let report = BenchReport {
        no_data: false,
        nodes: graph.len(),
        edges: graph.edge_count(),
        threads,
        build_events_per_sec: stream.len() as f64 / build_s,
        incremental_updates_per_sec: inserted as f64
            / (latencies.iter().sum::<f64>() / 1e6),
        latency_us: LatencyStats {
            p50: inc_median_us,
            p95: percentile(&latencies, 0.95),
            p99: percentile(&latencies, 0.99),
        },
        full_recompute_us: full_median_us,
        speedup_incremental_vs_full: full_median_us / inc_median_us.max(1e-9),
        flops_per_event: total_flops / inserted as f64,
        events_per_insert: args.events_per_insert,
    };
    std::fs::write(&args.out, serde_json::to_vec_pretty(&report)?)?;

    let mut manifest = ManifestBuilder::new("bench", seed, threads, serde_json::to_value(cfg).unwrap());
    manifest.output(&args.out);
    manifest.write(&out_dir)?;
    log::info!(
        "bench: {} nodes, p50 update {:.1}us, full {:.1}us, speedup {:.1}x",
        report.nodes,
        report.latency_us.p50,
        report.full_recompute_us,
        report.speedup_incremental_vs_full
    );
    Ok(())
}
