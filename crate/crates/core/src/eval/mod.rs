//! Separation and human-agreement statistics, plus lexical baselines.
//!
//! Metric scores are compared on a common [0, 1] scale: each metric declares
//! its native range and [`rescale`] maps it affinely.

mod agreement;
mod lexical;
mod separation;
mod table;

pub use agreement::{agreement_report, ccc, dcg, dcg_gain, rank_at_1, Agreement};
pub use lexical::{lcs_len, lexical_tokens, rouge_l_f1, rouge_n_f1};
pub use separation::{
    default_threshold_grid, macro_f1_midpoint, n_delta, separation_report, threshold_curve,
    wasserstein_1d, SeparationReport,
};
pub use table::{Role, ScoreRow, ScoreTable};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeKind {
    /// Native range [-1, 1].
    CosineLike,
    /// Native range [0, 1].
    Unit,
    /// Native range [0, 100].
    Percent,
}

impl RangeKind {
    /// Factor turning a raw score into percent of the native unit.
    pub fn percent_factor(self) -> f64 {
        match self {
            RangeKind::CosineLike | RangeKind::Unit => 100.0,
            RangeKind::Percent => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRange {
    pub name: String,
    pub kind: RangeKind,
}

impl MetricRange {
    pub fn new(name: impl Into<String>, kind: RangeKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Maps a raw score onto [0, 1] by its declared range. Out-of-range values
/// are mapped by the same affine rule, not clamped.
pub fn rescale(score: f64, range: &MetricRange) -> f64 {
    match range.kind {
        RangeKind::CosineLike => (score + 1.0) / 2.0,
        RangeKind::Unit => score,
        RangeKind::Percent => score / 100.0,
    }
}

/// Ranges of the metrics computed here: `matcha` is a cosine, ROUGE
/// variants are unit F1 scores.
pub fn builtin_range(name: &str) -> Option<MetricRange> {
    let kind = match name {
        "matcha" => RangeKind::CosineLike,
        "rouge1" | "rouge2" | "rougeL" => RangeKind::Unit,
        _ => return None,
    };
    Some(MetricRange::new(name, kind))
}

/// Ranges for `metrics`, taking declared kinds first and built-in ones
/// otherwise. Every undeclared unknown metric is reported.
pub fn resolve_ranges(
    metrics: &[String],
    declared: &BTreeMap<String, RangeKind>,
) -> Result<Vec<MetricRange>> {
    let mut missing = Vec::new();
    let ranges: Vec<MetricRange> = metrics
        .iter()
        .filter_map(|m| match declared.get(m) {
            Some(&kind) => Some(MetricRange::new(m.clone(), kind)),
            None => builtin_range(m).or_else(|| {
                missing.push(format!("metric {m:?} needs a declared range"));
                None
            }),
        })
        .collect();
    if missing.is_empty() {
        Ok(ranges)
    } else {
        Err(Error::Schema(missing))
    }
}

/// Separation for every metric that scores pairs, and agreement over the
/// rated rows when any exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub separation: BTreeMap<String, SeparationReport>,
    pub agreement: Option<BTreeMap<String, Agreement>>,
}

pub fn evaluate(table: &ScoreTable, metrics: &[MetricRange]) -> Result<EvaluationReport> {
    let mut separation = BTreeMap::new();
    for m in metrics {
        match table.pairs(&m.name) {
            Ok((c, i)) => {
                separation.insert(m.name.clone(), separation_report(&c, &i, m)?);
            }
            Err(Error::EmptyInput(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let rated = table.rated();
    let agreement = if rated.is_empty() {
        None
    } else {
        Some(agreement_report(&rated, metrics)?)
    };
    if separation.is_empty() && agreement.is_none() {
        return Err(Error::EmptyInput(
            "table has neither scored pairs nor human ratings".into(),
        ));
    }
    Ok(EvaluationReport {
        separation,
        agreement,
    })
}

/// Threshold curves as CSV with columns `metric,threshold,percentage`.
pub fn threshold_curves_csv(reports: &BTreeMap<String, SeparationReport>) -> String {
    let mut out = String::from("metric,threshold,percentage\n");
    for (name, r) in reports {
        for (t, p) in &r.threshold_curve {
            writeln!(out, "{name},{t:.2},{p}").expect("writing to a string");
        }
    }
    out
}
