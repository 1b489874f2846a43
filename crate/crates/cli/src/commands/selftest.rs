//! `selftest`: run the oracle suites in-process and report one line per
//! suite; any failure exits with the internal-invariant code.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evrisk_core::event::scenario::{preset_spec, synth_scenario, Preset};
use evrisk_core::event::{frames_to_events, Event, EventStream};
use evrisk_core::graph::{build_graph, GraphConfig};
use evrisk_core::metrics::{average_precision, roc_auc, ScoredSet};
use evrisk_core::nn::{
    build_lut, gru_backward, gru_step, lut_forward, spline_conv_backward, spline_conv_forward,
    ConvEdge, GruGrads, SplineKernelGrads,
};
use evrisk_core::oracle;
use evrisk_core::pipeline::{run_sequence, HybridModel, ModelConfig, RunOptions};

use crate::AppError;

struct Suite {
    failures: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("selftest {name}: PASS");
        } else {
            println!("selftest {name}: FAIL ({detail})");
            self.failures.push(name.to_string());
        }
    }
}

fn graph_suite(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0001);
    let mut ok = true;
    let mut detail = String::new();
    for case in 0..20 {
        let (w, h) = (32u16, 24u16);
        let mut stream = EventStream::new(w, h);
        for _ in 0..rng.gen_range(0..120) {
            stream.events.push(Event {
                x: rng.gen_range(0..w),
                y: rng.gen_range(0..h),
                t: rng.gen_range(0..50_000),
                p: if rng.gen::<bool>() { 1 } else { -1 },
            });
        }
        stream.sort();
        let cfg = GraphConfig {
            radius: rng.gen_range(0.03..0.2),
            beta: 1e-5,
            max_neighbors: 16,
            width: w,
            height: h,
        };
        let g = build_graph(&stream, cfg).unwrap();
        let want = oracle::graph_brute_force(&stream, &cfg);
        let mut have = Vec::new();
        for dst in 0..g.len() {
            for e in g.in_edges(dst) {
                have.push((e.src as usize, dst, e.feat));
            }
        }
        if have != want {
            ok = false;
            detail = format!("case {case}: {} vs {} edges", have.len(), want.len());
            break;
        }
    }
    s.check("graph-brute-force", ok, detail);
}

fn metrics_suite(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0002);
    let mut ok = true;
    let mut detail = String::new();
    let mut done = 0;
    while done < 200 {
        let n = rng.gen_range(2..=50);
        let mut set = ScoredSet::default();
        for _ in 0..n {
            set.push(rng.gen_range(0..=20) as f64 / 20.0, rng.gen_range(0..2u8));
        }
        let pos = set.items.iter().filter(|(_, l)| *l == 1).count();
        if pos == 0 || pos == n {
            continue;
        }
        let auc = roc_auc(&set).unwrap();
        let ap = average_precision(&set).unwrap();
        if (auc - oracle::roc_auc_pairwise(&set)).abs() > 1e-12
            || (ap - oracle::average_precision_scan(&set)).abs() > 1e-12
        {
            ok = false;
            detail = format!("instance {done}");
            break;
        }
        done += 1;
    }
    s.check("metrics-brute-force", ok, detail);
}

fn converter_suite(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0003);
    let mut ok = true;
    let mut detail = String::new();
    'outer: for case in 0..30 {
        let (w, h) = (rng.gen_range(2..12u16), rng.gen_range(2..12u16));
        let n = rng.gen_range(2..10usize);
        let frames = evrisk_core::event::FrameSequence {
            width: w,
            height: h,
            fps: 20.0,
            frames: (0..n)
                .map(|k| evrisk_core::event::Frame {
                    t_us: k as u64 * 50_000,
                    pixels: (0..w as usize * h as usize).map(|_| rng.gen()).collect(),
                })
                .collect(),
        };
        let c = rng.gen_range(0.05..1.0);
        let stream = frames_to_events(&frames, c, 0).unwrap();
        for y in 0..h {
            for x in 0..w {
                let levels: Vec<f64> = (0..n)
                    .map(|k| (1.0 + frames.pixel(k, x, y) as f64).ln())
                    .collect();
                let want = oracle::pixel_event_count(&levels, c);
                let have = stream.events.iter().filter(|e| e.x == x && e.y == y).count();
                if have != want {
                    ok = false;
                    detail = format!("case {case} pixel ({x},{y})");
                    break 'outer;
                }
            }
        }
    }
    s.check("converter-pixel-oracle", ok, detail);
}

fn gradient_suite(s: &mut Suite) {
    let mut ok = true;
    let mut detail = String::new();
    for seed in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0004 + seed);
        // Spline conv parameter gradients.
        let kernel = evrisk_core::nn::init::seeded_kernel(&mut rng, 3, 3, 3);
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut edges = Vec::new();
        for dst in 1..6 {
            edges.push(ConvEdge {
                src: rng.gen_range(0..dst) as u32,
                dst: dst as u32,
                feat: [rng.gen(), rng.gen()],
            });
        }
        let proj: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (_, cache) = spline_conv_forward(&kernel, &inputs, &edges, true).unwrap();
        let mut grads = SplineKernelGrads::zeros_like(&kernel);
        let _ = spline_conv_backward(&kernel, &cache, &edges, &proj, &mut grads);
        // Finite differences on the first control matrix only (spot check).
        let mut theta: Vec<f64> = kernel.control[0].data().to_vec();
        let loss = |t: &[f64]| {
            let mut k2 = kernel.clone();
            k2.control[0] = evrisk_core::nn::Tensor::from_vec(&[3, 3], t.to_vec()).unwrap();
            let (out, _) = spline_conv_forward(&k2, &inputs, &edges, true).unwrap();
            out.iter()
                .zip(&proj)
                .map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let numeric = oracle::finite_diff_grad(loss, &theta, 1e-5);
        let err = oracle::max_rel_err(grads.control[0].data(), &numeric, 1e-8);
        if err > 1e-4 {
            ok = false;
            detail = format!("spline seed {seed}: err {err}");
            break;
        }
        theta.clear();

        // GRU gradients, input side.
        let p = evrisk_core::nn::init::seeded_gru(&mut rng, 3, 4);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hh: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pr: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = gru_step(&p, &x, &hh).unwrap();
        let mut gg = GruGrads::zeros_like(&p);
        let (dx, _) = gru_backward(&p, &cache, &pr, &mut gg);
        let loss = |t: &[f64]| {
            let (h2, _) = gru_step(&p, t, &hh).unwrap();
            h2.iter().zip(&pr).map(|(a, b)| a * b).sum()
        };
        let numeric = oracle::finite_diff_grad(loss, &x, 1e-5);
        let err = oracle::max_rel_err(&dx, &numeric, 1e-8);
        if err > 1e-4 {
            ok = false;
            detail = format!("gru seed {seed}: err {err}");
            break;
        }
    }
    s.check("gradient-spot-check", ok, detail);
}

fn lut_suite(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0005);
    let kernel = evrisk_core::nn::init::seeded_kernel(&mut rng, 3, 4, 4);
    let inputs: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut edges = Vec::new();
    for dst in 1..20 {
        edges.push(ConvEdge {
            src: rng.gen_range(0..dst) as u32,
            dst: dst as u32,
            feat: [rng.gen(), rng.gen()],
        });
    }
    let exact = spline_conv_forward(&kernel, &inputs, &edges, true).unwrap().0;
    let mut prev = f64::INFINITY;
    let mut ok = true;
    let mut detail = String::new();
    for bins in [16usize, 32, 64, 128] {
        let lut = build_lut(&kernel, bins).unwrap();
        let approx = lut_forward(&kernel, &lut, &inputs, &edges, true).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in exact.iter().zip(&approx) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        if worst > prev {
            ok = false;
            detail = format!("error rose at {bins} bins");
            break;
        }
        prev = worst;
    }
    s.check("lut-refinement", ok, detail);
}

fn dual_mode_suite(s: &mut Suite) {
    let model = HybridModel::new(ModelConfig {
        gnn_hidden: 6,
        bbox_hidden: 8,
        obj_hidden: 8,
        obj_feat_dim: 8,
        extractor_channels: [3, 3],
        seed: 5,
        ..ModelConfig::default()
    })
    .unwrap();
    let spec = preset_spec(Preset::LaneMerge, 3);
    let (frames, tracks, labels) = synth_scenario(&spec).unwrap();
    let stream = frames_to_events(&frames, 0.2, 0).unwrap();
    let scenario =
        evrisk_core::pipeline::assemble_scenario(&model, "selftest", &frames, &stream, &tracks, labels).unwrap();
    let batch = run_sequence(&model, &scenario, &RunOptions::default()).unwrap();
    let inc = run_sequence(&model, &scenario, &RunOptions { incremental: true, measure_timing: false }).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for (a, b) in batch.frames.iter().zip(&inc.frames) {
        if (a.frame_score - b.frame_score).abs() > 1e-9 {
            ok = false;
            detail = format!("frame {}", a.frame);
            break;
        }
    }
    s.check("dual-mode-equivalence", ok, detail);
}

pub fn run() -> Result<(), AppError> {
    let mut suite = Suite { failures: Vec::new() };
    graph_suite(&mut suite);
    metrics_suite(&mut suite);
    converter_suite(&mut suite);
    gradient_suite(&mut suite);
    lut_suite(&mut suite);
    dual_mode_suite(&mut suite);
    if suite.failures.is_empty() {
        println!("selftest: all suites passed");
        Ok(())
    } else {
        Err(AppError::Internal(format!(
            "selftest failures: {}",
            suite.failures.join(", ")
        )))
    }
}
