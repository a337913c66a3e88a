//! minADE, minFDE, miss rate and a simplified mAP at fixed horizons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Point2};
use crate::scene::AgentType;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub seconds: f64,
    /// Number of future steps covered, so the endpoint is step `steps - 1`.
    pub steps: usize,
    pub miss_threshold: f64,
}

impl Horizon {
    pub fn label(&self) -> String {
        format!("{}s", self.seconds)
    }
}

/// The 3, 5 and 8 second horizons that fit in `future_steps` steps of `dt`.
pub fn standard_horizons(future_steps: usize, dt: f64) -> Vec<Horizon> {
    [(3.0, 2.0), (5.0, 3.6), (8.0, 6.0)]
        .into_iter()
        .map(|(seconds, miss_threshold)| Horizon {
            seconds,
            steps: (seconds / dt).round() as usize,
            miss_threshold,
        })
        .filter(|h| h.steps >= 1 && h.steps <= future_steps)
        .collect()
}

/// Predicted modes and ground truth of one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub agent_type: AgentType,
    pub modes: Vec<Vec<Point2>>,
    pub probabilities: Vec<f64>,
    pub gt: Vec<Point2>,
    pub valid: Vec<bool>,
}

fn valid_steps(valid: &[bool], steps: usize) -> impl Iterator<Item = usize> + '_ {
    (0..steps.min(valid.len())).filter(move |&s| valid[s])
}

/// Mean position error over the valid steps of the first `steps`.
pub fn ade(mode: &[Point2], gt: &[Point2], valid: &[bool], steps: usize) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for s in valid_steps(valid, steps) {
        sum += distance(mode[s], gt[s]);
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn min_ade(modes: &[Vec<Point2>], gt: &[Point2], valid: &[bool], steps: usize) -> Option<f64> {
    modes.iter().filter_map(|m| ade(m, gt, valid, steps)).reduce(f64::min)
}

/// Smallest endpoint error at step `steps - 1`; `None` when that step has
/// no valid ground truth.
pub fn min_fde(modes: &[Vec<Point2>], gt: &[Point2], valid: &[bool], steps: usize) -> Option<f64> {
    let e = steps.checked_sub(1)?;
    if !valid.get(e).copied().unwrap_or(false) {
        return None;
    }
    modes.iter().map(|m| distance(m[e], gt[e])).reduce(f64::min)
}

/// Fraction of evaluable targets whose every mode misses the endpoint by
/// more than `threshold`.
pub fn miss_rate(samples: &[&EvalSample], steps: usize, threshold: f64) -> Option<f64> {
    let mut n = 0usize;
    let mut misses = 0usize;
    for s in samples {
        if let Some(fde) = min_fde(&s.modes, &s.gt, &s.valid, steps) {
            n += 1;
            if fde > threshold {
                misses += 1;
            }
        }
    }
    (n > 0).then(|| misses as f64 / n as f64)
}

/// Area under the interpolated precision-recall curve of a ranked list of
/// true-positive flags, with recall relative to `positives` targets.
pub fn interpolated_ap(ranked: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (i, &hit) in ranked.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut next_recall = points.last().map_or(0.0, |p| p.0);
    for &(recall, precision) in points.iter().rev() {
        ap += (next_recall - recall) * envelope;
        envelope = envelope.max(precision);
        next_recall = recall;
    }
    ap + next_recall * envelope
}

/// Pools every mode of every sample, ranks by probability (ties by sample
/// then mode index) and scores each as a true positive when its endpoint is
/// within `threshold` and its target has not matched yet.
pub fn average_precision(samples: &[&EvalSample], steps: usize, threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("average precision of an empty batch"));
    }
    let e = steps - 1;
    let mut pooled = Vec::new();
    let mut positives = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.probabilities.len() != s.modes.len() {
            return Err(Error::contract("every mode needs a probability"));
        }
        if !s.valid.get(e).copied().unwrap_or(false) {
            continue;
        }
        positives += 1;
        for (m, p) in s.probabilities.iter().enumerate() {
            pooled.push((*p, i, m));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = vec![false; samples.len()];
    let ranked: Vec<bool> = pooled
        .iter()
        .map(|&(_, i, m)| {
            let s = samples[i];
            let hit = !matched[i] && distance(s.modes[m][e], s.gt[e]) <= threshold;
            matched[i] |= hit;
            hit
        })
        .collect();
    Ok(interpolated_ap(&ranked, positives))
}

/// Mean AP over the agent types present in `samples`.
pub fn simplified_map(samples: &[EvalSample], steps: usize, threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("mAP of an empty batch"));
    }
    let mut aps = Vec::new();
    for t in AgentType::ALL {
        let group: Vec<&EvalSample> = samples.iter().filter(|s| s.agent_type == t).collect();
        if !group.is_empty() {
            aps.push(average_precision(&group, steps, threshold)?);
        }
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "MR")]
    pub miss_rate: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

impl MetricSet {
    fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let sum = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        MetricSet {
            min_ade: sum(|m| m.min_ade),
            min_fde: sum(|m| m.min_fde),
            miss_rate: sum(|m| m.miss_rate),
            map: sum(|m| m.map),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub targets: usize,
    /// Keyed by horizon label ("3s", ...).
    pub horizons: BTreeMap<String, MetricSet>,
    pub average: MetricSet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub targets: usize,
    pub per_type: BTreeMap<AgentType, TypeReport>,
    /// Mean over types, per horizon.
    pub per_horizon: BTreeMap<String, MetricSet>,
    /// Mean over types and horizons.
    pub average: MetricSet,
}

fn type_metrics(group: &[&EvalSample], h: &Horizon) -> Result<MetricSet> {
    let (mut ade_sum, mut fde_sum, mut n_ade, mut n_fde) = (0.0, 0.0, 0usize, 0usize);
    for s in group {
        if let Some(v) = min_ade(&s.modes, &s.gt, &s.valid, h.steps) {
            ade_sum += v;
            n_ade += 1;
        }
        if let Some(v) = min_fde(&s.modes, &s.gt, &s.valid, h.steps) {
            fde_sum += v;
            n_fde += 1;
        }
    }
    Ok(MetricSet {
        min_ade: ade_sum / n_ade.max(1) as f64,
        min_fde: fde_sum / n_fde.max(1) as f64,
        miss_rate: miss_rate(group, h.steps, h.miss_threshold).unwrap_or(0.0),
        map: average_precision(group, h.steps, h.miss_threshold)?,
    })
}

impl EvalReport {
    pub fn evaluate(samples: &[EvalSample], horizons: &[Horizon]) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::contract("evaluation needs at least one target"));
        }
        if horizons.is_empty() {
            return Err(Error::contract("no evaluation horizon fits the prediction length"));
        }
        let mut per_type = BTreeMap::new();
        for t in AgentType::ALL {
            let group: Vec<&EvalSample> = samples.iter().filter(|s| s.agent_type == t).collect();
            if group.is_empty() {
                continue;
            }
            let mut report = TypeReport {
                targets: group.len(),
                ..TypeReport::default()
            };
            for h in horizons {
                report.horizons.insert(h.label(), type_metrics(&group, h)?);
            }
            report.average = MetricSet::mean(&report.horizons.values().copied().collect::<Vec<_>>());
            per_type.insert(t, report);
        }
        let mut per_horizon = BTreeMap::new();
        for h in horizons {
            let sets: Vec<MetricSet> = per_type.values().map(|r| r.horizons[&h.label()]).collect();
            per_horizon.insert(h.label(), MetricSet::mean(&sets));
        }
        let type_averages: Vec<MetricSet> = per_type.values().map(|r| r.average).collect();
        Ok(EvalReport {
            targets: samples.len(),
            per_type,
            per_horizon,
            average: MetricSet::mean(&type_averages),
        })
    }

    /// Mean over horizons of the mean-over-types mAP.
    pub fn map(&self) -> f64 {
        self.average.map
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}", "type", "horizon", "minADE", "minFDE", "MR", "mAP");
        let mut row = |name: &str, h: &str, m: &MetricSet| {
            let _ = writeln!(
                out,
                "{name:<12} {h:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                m.min_ade, m.min_fde, m.miss_rate, m.map
            );
        };
        for (t, r) in &self.per_type {
            for (h, m) in &r.horizons {
                row(t.name(), h, m);
            }
            row(t.name(), "avg", &r.average);
        }
        for (h, m) in &self.per_horizon {
            row("all", h, m);
        }
        row("all", "avg", &self.average);
        out
    }
}
