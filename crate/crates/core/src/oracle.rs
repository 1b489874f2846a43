//! Brute-force reference implementations used to cross-check the fast
//! paths. Everything here is written independently of the code it
//! validates: naive loops, no shared helpers, no spatial indexes.

use std::collections::BTreeSet;

use crate::event::EventStream;
use crate::graph::GraphConfig;
use crate::metrics::ScoredSet;

/// Count events a contrast-threshold pixel would emit for a sampled
/// scalar level series, by walking the level ladder step by step: a
/// crossing fires when it lies strictly inside the step's travel, or at
/// its far end when more than one threshold was crossed.
pub fn pixel_event_count(levels: &[f64], threshold: f64) -> usize {
    let mut reference = levels[0];
    let mut count = 0usize;
    for &cur in &levels[1..] {
        let delta = cur - reference;
        let mag = delta.abs();
        let mut fired = 0u64;
        loop {
            let next = (fired + 1) as f64 * threshold;
            let crosses = next < mag || (next == mag && fired + 1 >= 2);
            if !crosses {
                break;
            }
            fired += 1;
        }
        if fired > 0 {
            reference += delta.signum() * fired as f64 * threshold;
            count += fired as usize;
        }
    }
    count
}

/// One brute-force edge: (src, dst, feature).
pub type BruteEdge = (usize, usize, [f64; 2]);

/// O(n²) reference graph construction: for every node, scan all earlier
/// nodes, keep those within the radius, order by (distance, newer
/// timestamp, lower index), cap, and emit features ½(src − dst) + ½.
pub fn graph_brute_force(stream: &EventStream, cfg: &GraphConfig) -> Vec<BruteEdge> {
    let n = stream.events.len();
    let pos: Vec<[f64; 3]> = stream
        .events
        .iter()
        .map(|e| {
            [
                e.x as f64 / cfg.width as f64,
                e.y as f64 / cfg.height as f64,
                cfg.beta * e.t as f64,
            ]
        })
        .collect();
    let mut edges = Vec::new();
    for dst in 0..n {
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for src in 0..dst {
            let dx = pos[src][0] - pos[dst][0];
            let dy = pos[src][1] - pos[dst][1];
            let dz = pos[src][2] - pos[dst][2];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 <= cfg.radius * cfg.radius {
                cand.push((d2, src));
            }
        }
        cand.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| stream.events[b.1].t.cmp(&stream.events[a.1].t))
                .then_with(|| a.1.cmp(&b.1))
        });
        cand.truncate(cfg.max_neighbors);
        let mut picked: Vec<usize> = cand.into_iter().map(|(_, i)| i).collect();
        picked.sort_unstable();
        for src in picked {
            let feat = [
                0.5 * (pos[src][0] - pos[dst][0]) + 0.5,
                0.5 * (pos[src][1] - pos[dst][1]) + 0.5,
            ];
            edges.push((src, dst, feat));
        }
    }
    edges
}

/// Reference dirty sets: breadth-first expansion from `start` following
/// edges backwards (dst -> src), one layer per hop.
pub fn dirty_bfs(edges: &[(usize, usize)], start: usize, depth: usize) -> Vec<BTreeSet<usize>> {
    let mut acc: BTreeSet<usize> = BTreeSet::new();
    acc.insert(start);
    let mut frontier = vec![start];
    let mut out = Vec::with_capacity(depth);
    for _ in 0..depth {
        let mut next = Vec::new();
        for &v in &frontier {
            for &(src, dst) in edges {
                if dst == v && acc.insert(src) {
                    next.push(src);
                }
            }
        }
        out.push(acc.clone());
        frontier = next;
    }
    out
}

/// Histogram count of non-empty voxels for pooled-graph size checks.
pub fn voxel_count(points: &[([f64; 2], u64)], nx: usize, ny: usize, nt: usize) -> usize {
    if points.is_empty() {
        return 0;
    }
    let t_min = points.iter().map(|p| p.1).min().unwrap();
    let t_max = points.iter().map(|p| p.1).max().unwrap();
    let mut filled = BTreeSet::new();
    for (pos, t) in points {
        let bx = ((pos[0] * nx as f64) as usize).min(nx - 1);
        let by = ((pos[1] * ny as f64) as usize).min(ny - 1);
        let bt = if t_max > t_min {
            ((((t - t_min) as f64 / (t_max - t_min) as f64) * nt as f64) as usize).min(nt - 1)
        } else {
            0
        };
        filled.insert((bx, by, bt));
    }
    filled.len()
}

/// Exhaustive pairwise Mann-Whitney statistic.
pub fn roc_auc_pairwise(set: &ScoredSet) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(sp, lp) in &set.items {
        if lp == 0 {
            continue;
        }
        for &(sn, ln) in &set.items {
            if ln != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// O(n²) rank-scan average precision: for every distinct score, count
/// positives and totals at-or-above it by full passes, and accumulate
/// precision × recall increments in descending score order.
pub fn average_precision_scan(set: &ScoredSet) -> f64 {
    let total_pos = set.items.iter().filter(|(_, l)| *l != 0).count() as f64;
    let mut distinct: Vec<f64> = set.items.iter().map(|(s, _)| *s).collect();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0.0;
    for &s in &distinct {
        let tp = set
            .items
            .iter()
            .filter(|(v, l)| *v >= s && *l != 0)
            .count() as f64;
        let at_or_above = set.items.iter().filter(|(v, _)| *v >= s).count() as f64;
        if tp > prev_tp {
            ap += (tp / at_or_above) * ((tp - prev_tp) / total_pos);
        }
        prev_tp = tp;
    }
    ap
}

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        g[i] = (hi - lo) / (2.0 * eps);
    }
    g
}

/// Worst relative disagreement with denominators floored to avoid
/// blowing up near-zero gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
