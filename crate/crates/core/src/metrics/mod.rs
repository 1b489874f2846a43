//! Evaluation mathematics: ranking metrics over scored sets plus the
//! timing-aware scenario metrics (mTTA, mResponse) built on detection
//! delays and inference time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds and rates shared across the metric suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Threshold grid for mResponse.
    pub response_thresholds: Vec<f64>,
    /// Score threshold s̄ for mTTA.
    pub mtta_threshold: f64,
    /// Detection threshold θ.
    pub detect_threshold: f64,
    pub fps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            response_thresholds: (1..10).map(|i| i as f64 / 10.0).collect(),
            mtta_threshold: 0.5,
            detect_threshold: 0.5,
            fps: 20.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.response_thresholds.is_empty() {
            return Err(Error::invalid("empty threshold list"));
        }
        for w in self.response_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("thresholds must be strictly increasing"));
            }
        }
        for &t in &self.response_thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("threshold {t} outside (0,1)")));
            }
        }
        Ok(())
    }
}

/// Scored binary items at object or frame granularity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    /// (score, label)
    pub items: Vec<(f64, u8)>,
}

impl ScoredSet {
    pub fn push(&mut self, score: f64, label: u8) {
        self.items.push((score, label));
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|(_, l)| *l != 0).count();
        (pos, self.items.len() - pos)
    }
}

/// Mann-Whitney AUC: P(score_pos > score_neg) + ½ P(tie), via average
/// ranks so ties are exact.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.counts();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "roc_auc needs both classes (pos={pos}, neg={neg})"
        )));
    }
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| set.items[a].0.partial_cmp(&set.items[b].0).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.items[order[j + 1]].0 == set.items[order[i]].0 {
            j += 1;
        }
        // Average rank of the tie group (ranks are 1-based).
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if set.items[idx].1 != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64);
    Ok(auc)
}

/// Step-interpolated average precision with equal scores treated as one
/// group: AP = Σ_g precision-after-group × recall-increment-of-group.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let (pos, _) = set.counts();
    if pos == 0 {
        return Err(Error::UndefinedMetric("average_precision needs >= 1 positive".into()));
    }
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| set.items[b].0.partial_cmp(&set.items[a].0).unwrap());
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.items[order[j + 1]].0 == set.items[order[i]].0 {
            j += 1;
        }
        let group_pos = order[i..=j]
            .iter()
            .filter(|&&idx| set.items[idx].1 != 0)
            .count();
        tp += group_pos;
        seen += j - i + 1;
        if group_pos > 0 {
            let precision = tp as f64 / seen as f64;
            let recall_inc = group_pos as f64 / pos as f64;
            ap += precision * recall_inc;
        }
        i = j + 1;
    }
    Ok(ap)
}

/// ROC curve points (fpr, tpr) per distinct threshold, for CSV export.
pub fn roc_points(set: &ScoredSet) -> Vec<(f64, f64)> {
    let (pos, neg) = set.counts();
    if pos == 0 || neg == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| set.items[b].0.partial_cmp(&set.items[a].0).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.items[order[j + 1]].0 == set.items[order[i]].0 {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if set.items[idx].1 != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j + 1;
    }
    points
}

/// Precision-recall curve points (recall, precision) per distinct score.
pub fn pr_points(set: &ScoredSet) -> Vec<(f64, f64)> {
    let (pos, _) = set.counts();
    if pos == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| set.items[b].0.partial_cmp(&set.items[a].0).unwrap());
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.items[order[j + 1]].0 == set.items[order[i]].0 {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&idx| set.items[idx].1 != 0).count();
        seen += j - i + 1;
        points.push((tp as f64 / pos as f64, tp as f64 / seen as f64));
        i = j + 1;
    }
    points
}

/// Everything the timing metrics need to know about one scenario run.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOutcome {
    pub frame_times_us: Vec<u64>,
    /// Per-frame aggregate score (max over objects; 0 when none).
    pub frame_scores: Vec<f64>,
    /// Per-frame score of the true risky object, where present.
    pub risky_scores: Vec<Option<f64>>,
    /// First positively-labeled frame time (T_occurrence).
    pub onset_us: Option<u64>,
    pub accident_us: Option<u64>,
    /// Mean per-frame model inference time.
    pub mean_infer_us: f64,
}

impl ScenarioOutcome {
    pub fn is_positive(&self) -> bool {
        self.onset_us.is_some()
    }

    fn end_us(&self) -> u64 {
        self.frame_times_us.last().copied().unwrap_or(0)
    }
}

/// Frame-level ROC area, pooled across scenarios.
pub fn auc_frame(outcomes: &[(Vec<f64>, Vec<u8>)]) -> Result<f64> {
    let mut pooled = ScoredSet::default();
    for (scores, labels) in outcomes {
        for (s, l) in scores.iter().zip(labels) {
            pooled.push(*s, *l);
        }
    }
    roc_auc(&pooled)
}

/// Mean time-to-accident in seconds: lead time between the risky
/// object's score first exceeding `s_bar` and the accident, clamped at
/// zero, averaged over positive scenarios.
pub fn mtta(outcomes: &[ScenarioOutcome], s_bar: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for o in outcomes {
        if !o.is_positive() {
            continue;
        }
        let accident = o.accident_us.ok_or_else(|| {
            Error::invalid("positive scenario without accident timestamp")
        })?;
        n += 1;
        let first = o
            .frame_times_us
            .iter()
            .zip(&o.risky_scores)
            .find(|(_, s)| matches!(s, Some(v) if *v > s_bar))
            .map(|(t, _)| *t);
        if let Some(t) = first {
            if t < accident {
                total += (accident - t) as f64 / 1e6;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("mtta needs at least one positive scenario".into()));
    }
    Ok(total / n as f64)
}

/// Detection delay plus inference time, averaged over a threshold grid
/// and over positive scenarios. A scenario never detected at a threshold
/// contributes the full remaining duration as penalty.
pub fn mresponse(outcomes: &[ScenarioOutcome], cfg: &EvalConfig) -> Result<f64> {
    cfg.validate()?;
    let positives: Vec<&ScenarioOutcome> = outcomes.iter().filter(|o| o.is_positive()).collect();
    if positives.is_empty() {
        return Err(Error::UndefinedMetric("mresponse needs at least one positive scenario".into()));
    }
    let mut sum_over_thresholds = 0.0;
    for &theta in &cfg.response_thresholds {
        let mut scenario_sum = 0.0;
        for o in &positives {
            let onset = o.onset_us.unwrap() as f64 / 1e6;
            let infer_s = o.mean_infer_us / 1e6;
            let first = o
                .frame_times_us
                .iter()
                .zip(&o.frame_scores)
                .find(|(_, &s)| s > theta)
                .map(|(t, _)| *t);
            let delay = match first {
                Some(t) => t as f64 / 1e6 - onset,
                None => o.end_us() as f64 / 1e6 - onset,
            };
            scenario_sum += delay + infer_s;
        }
        sum_over_thresholds += scenario_sum / positives.len() as f64;
    }
    Ok(sum_over_thresholds / cfg.response_thresholds.len() as f64)
}

/// Â_t = 1 iff the frame score strictly exceeds θ.
pub fn detect(frame_scores: &[f64], theta: f64) -> Vec<u8> {
    frame_scores.iter().map(|&s| u8::from(s > theta)).collect()
}
