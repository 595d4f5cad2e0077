//! Statistics separating scores of correct and incorrect candidates.

use serde::{Deserialize, Serialize};

use super::{rescale, MetricRange};
use crate::error::{Error, Result};

fn non_empty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput(format!("{what} scores are empty")));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean rescaled correct score minus mean rescaled incorrect score, ×100.
pub fn n_delta(correct: &[f64], incorrect: &[f64], range: &MetricRange) -> Result<f64> {
    non_empty(correct, "correct")?;
    non_empty(incorrect, "incorrect")?;
    let rc: Vec<f64> = correct.iter().map(|&s| rescale(s, range)).collect();
    let ri: Vec<f64> = incorrect.iter().map(|&s| rescale(s, range)).collect();
    Ok(100.0 * (mean(&rc) - mean(&ri)))
}

fn class_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Macro-F1 ×100 of the rule "rescaled score > 0.5 means correct", with
/// every correct score a positive instance and every incorrect score a
/// negative one.
pub fn macro_f1_midpoint(correct: &[f64], incorrect: &[f64], range: &MetricRange) -> Result<f64> {
    non_empty(correct, "correct")?;
    non_empty(incorrect, "incorrect")?;
    let positive = |s: f64| rescale(s, range) > 0.5;
    let tp = correct.iter().filter(|&&s| positive(s)).count();
    let fn_ = correct.len() - tp;
    let fp = incorrect.iter().filter(|&&s| positive(s)).count();
    let tn = incorrect.len() - fp;
    Ok(100.0 * (class_f1(tp, fp, fn_) + class_f1(tn, fn_, fp)) / 2.0)
}

/// Thresholds 0.00, 0.05, ..., 1.00.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Percentage of gaps strictly above each threshold.
pub fn threshold_curve(gaps: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    non_empty(gaps, "gap")?;
    let n = gaps.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| (t, 100.0 * gaps.iter().filter(|&&g| g > t).count() as f64 / n))
        .collect())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// First Wasserstein distance between two empirical distributions, as the
/// integral of the absolute CDF difference.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, "first sample")?;
    non_empty(b, "second sample")?;
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            tensor: "scores".into(),
            detail: "Wasserstein distance needs finite samples".into(),
        });
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut x = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        x = next;
    }
    Ok(total)
}

/// Separation of one metric's correct and incorrect scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub metric: String,
    pub pairs: usize,
    /// Mean raw correct score, in percent of the metric's native unit.
    pub mean_correct: f64,
    /// Mean raw incorrect score, in percent of the metric's native unit.
    pub mean_incorrect: f64,
    pub n_delta: f64,
    pub macro_f1: f64,
    /// W1 between rescaled correct and incorrect scores, ×100.
    pub wasserstein: f64,
    /// `(threshold, percentage of pairs whose rescaled gap exceeds it)`.
    pub threshold_curve: Vec<(f64, f64)>,
}

/// All separation statistics for paired scores.
pub fn separation_report(
    correct: &[f64],
    incorrect: &[f64],
    range: &MetricRange,
) -> Result<SeparationReport> {
    if correct.len() != incorrect.len() {
        return Err(Error::Shape(format!(
            "{} correct scores but {} incorrect scores",
            correct.len(),
            incorrect.len()
        )));
    }
    let n_delta = n_delta(correct, incorrect, range)?;
    let rc: Vec<f64> = correct.iter().map(|&s| rescale(s, range)).collect();
    let ri: Vec<f64> = incorrect.iter().map(|&s| rescale(s, range)).collect();
    let gaps: Vec<f64> = rc.iter().zip(&ri).map(|(c, i)| c - i).collect();
    let unit = range.kind.percent_factor();
    Ok(SeparationReport {
        metric: range.name.clone(),
        pairs: correct.len(),
        mean_correct: unit * mean(correct),
        mean_incorrect: unit * mean(incorrect),
        n_delta,
        macro_f1: macro_f1_midpoint(correct, incorrect, range)?,
        wasserstein: 100.0 * wasserstein_1d(&rc, &ri)?,
        threshold_curve: threshold_curve(&gaps, &default_threshold_grid())?,
    })
}
