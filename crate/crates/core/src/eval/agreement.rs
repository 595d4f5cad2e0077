//! Agreement between metric scores and human ratings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::table::{ScoreRow, ScoreTable};
use super::{rescale, MetricRange};
use crate::error::{Error, Result};

/// Concordance correlation coefficient with population moments.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "CCC needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("CCC needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let denom = vx + vy + (mx - my).powi(2);
    if vx == 0.0 && vy == 0.0 {
        return Err(Error::InvalidArgument(
            "CCC is undefined when both inputs are constant".into(),
        ));
    }
    Ok(2.0 * cov / denom)
}

/// `|rescaled metric − rescaled human|` for each metric on one row.
fn distances(row: &ScoreRow, metrics: &[MetricRange]) -> Result<Vec<f64>> {
    let human = row
        .human_rescaled()
        .ok_or_else(|| Error::InvalidArgument(format!("row {:?} has no human score", row.id)))?;
    metrics
        .iter()
        .map(|m| {
            let s = row.correct.get(&m.name).ok_or_else(|| {
                Error::Integrity(format!("row {:?} has no {:?} score", row.id, m.name))
            })?;
            Ok((rescale(*s, m) - human).abs())
        })
        .collect()
}

fn check_inputs(table: &ScoreTable, metrics: &[MetricRange]) -> Result<()> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput("no metrics to compare".into()));
    }
    if table.is_empty() {
        return Err(Error::EmptyInput("score table has no rows".into()));
    }
    Ok(())
}

/// Percentage of rows on which each metric is closest to the human rating.
/// Every metric tied for closest is credited.
pub fn rank_at_1(table: &ScoreTable, metrics: &[MetricRange]) -> Result<BTreeMap<String, f64>> {
    check_inputs(table, metrics)?;
    let mut credit = vec![0usize; metrics.len()];
    for row in table.rows() {
        let d = distances(row, metrics)?;
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        for (c, &v) in credit.iter_mut().zip(&d) {
            if v == best {
                *c += 1;
            }
        }
    }
    let n = table.len() as f64;
    Ok(metrics
        .iter()
        .zip(credit)
        .map(|(m, c)| (m.name.clone(), 100.0 * c as f64 / n))
        .collect())
}

/// Gain of 1-based rank `r` among `m` metrics: `100·(m − r + 1)/(m·log2(r + 1))`.
pub fn dcg_gain(rank: usize, m: usize) -> f64 {
    100.0 * (m - rank + 1) as f64 / (m as f64 * ((rank + 1) as f64).log2())
}

/// Mean rank-discounted gain per metric, ranking by closeness to the human
/// rating with ties broken by metric name.
pub fn dcg(table: &ScoreTable, metrics: &[MetricRange]) -> Result<BTreeMap<String, f64>> {
    check_inputs(table, metrics)?;
    let m = metrics.len();
    let mut total = vec![0.0; m];
    for row in table.rows() {
        let d = distances(row, metrics)?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then_with(|| metrics[a].name.cmp(&metrics[b].name)));
        for (pos, &k) in order.iter().enumerate() {
            total[k] += dcg_gain(pos + 1, m);
        }
    }
    let n = table.len() as f64;
    Ok(metrics
        .iter()
        .zip(total)
        .map(|(mr, t)| (mr.name.clone(), t / n))
        .collect())
}

/// Per-metric agreement with human ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub rank_at_1: f64,
    pub dcg: f64,
    /// CCC ×100 of rescaled scores against rescaled ratings; absent when
    /// undefined.
    pub ccc: Option<f64>,
}

/// Rank@1, DCG and CCC for every metric over a table of rated rows.
pub fn agreement_report(
    table: &ScoreTable,
    metrics: &[MetricRange],
) -> Result<BTreeMap<String, Agreement>> {
    let r1 = rank_at_1(table, metrics)?;
    let g = dcg(table, metrics)?;
    let human: Vec<f64> = table
        .rows()
        .iter()
        .map(|r| r.human_rescaled().expect("checked by rank_at_1"))
        .collect();
    metrics
        .iter()
        .map(|m| {
            let scores: Vec<f64> = table
                .rows()
                .iter()
                .map(|r| rescale(r.correct[&m.name], m))
                .collect();
            let c = match ccc(&scores, &human) {
                Ok(v) => Some(100.0 * v),
                Err(Error::InvalidArgument(_)) | Err(Error::EmptyInput(_)) => None,
                Err(e) => return Err(e),
            };
            Ok((
                m.name.clone(),
                Agreement {
                    rank_at_1: r1[&m.name],
                    dcg: g[&m.name],
                    ccc: c,
                },
            ))
        })
        .collect()
}
