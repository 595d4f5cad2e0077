//! Per-record metric scores for correct and incorrect candidates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::lexical::{rouge_l_f1, rouge_n_f1};
use crate::data::Record;
use crate::error::{Error, Result};

/// Which candidate of a record a score belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub human_score: Option<f64>,
    /// Native `(min, max)` of the human rating; `None` means already in [0, 1].
    pub rating_scale: Option<(f64, f64)>,
    pub correct: BTreeMap<String, f64>,
    pub incorrect: BTreeMap<String, f64>,
}

impl ScoreRow {
    pub fn scores(&self, role: Role) -> &BTreeMap<String, f64> {
        match role {
            Role::Correct => &self.correct,
            Role::Incorrect => &self.incorrect,
        }
    }

    /// Human rating mapped linearly to [0, 1].
    pub fn human_rescaled(&self) -> Option<f64> {
        let h = self.human_score?;
        Some(match self.rating_scale {
            Some((lo, hi)) => (h - lo) / (hi - lo),
            None => h,
        })
    }
}

/// One line of an external score file.
#[derive(Debug, Clone, Deserialize)]
struct ExternalScore {
    id: String,
    metric: String,
    score: f64,
    #[serde(default)]
    role: Role,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// One row per record, carrying its human rating. `rating_scale` maps a
    /// dataset name to its native rating range.
    pub fn from_records<F>(records: &[Record], rating_scale: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<(f64, f64)>,
    {
        let mut table = Self::new();
        for r in records {
            if table.index.contains_key(&r.id) {
                return Err(Error::Integrity(format!("duplicate record id {:?}", r.id)));
            }
            let row = table.row_mut(&r.id);
            row.human_score = r.human_score;
            row.rating_scale = rating_scale(&r.dataset);
        }
        Ok(table)
    }

    fn row_mut(&mut self, id: &str) -> &mut ScoreRow {
        let next = self.rows.len();
        let idx = *self.index.entry(id.to_string()).or_insert(next);
        if idx == next {
            self.rows.push(ScoreRow {
                id: id.to_string(),
                ..ScoreRow::default()
            });
        }
        &mut self.rows[idx]
    }

    /// Records one raw score; the row is created on first use.
    pub fn insert(&mut self, id: &str, metric: &str, role: Role, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Numeric {
                tensor: format!("{metric} score of {id}"),
                detail: format!("{score} is not finite"),
            });
        }
        let row = self.row_mut(id);
        let slot = match role {
            Role::Correct => &mut row.correct,
            Role::Incorrect => &mut row.incorrect,
        };
        if slot.contains_key(metric) {
            return Err(Error::Integrity(format!(
                "row {id:?} already has a {role:?} score for {metric:?}"
            )));
        }
        slot.insert(metric.to_string(), score);
        Ok(())
    }

    /// Merges `{"id", "metric", "score", "role"?}` lines; `role` defaults to
    /// the correct candidate. Every bad line is reported.
    pub fn ingest_jsonl(&mut self, text: &str) -> Result<usize> {
        let mut problems = Vec::new();
        let mut added = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<ExternalScore>(line)
                .map_err(|e| e.to_string())
                .and_then(|s| {
                    self.insert(&s.id, &s.metric, s.role, s.score)
                        .map_err(|e| e.to_string())
                });
            match outcome {
                Ok(()) => added += 1,
                Err(e) => problems.push(format!("line {}: {e}", i + 1)),
            }
        }
        if problems.is_empty() {
            Ok(added)
        } else {
            Err(Error::Schema(problems))
        }
    }

    /// ROUGE-1, ROUGE-2 and ROUGE-L F1 of each record's candidates.
    pub fn add_lexical(&mut self, records: &[Record]) -> Result<()> {
        for r in records {
            let mut put = |role, cand: &str| -> Result<()> {
                self.insert(&r.id, "rouge1", role, rouge_n_f1(&r.reference, cand, 1))?;
                self.insert(&r.id, "rouge2", role, rouge_n_f1(&r.reference, cand, 2))?;
                self.insert(&r.id, "rougeL", role, rouge_l_f1(&r.reference, cand))
            };
            put(Role::Correct, &r.correct)?;
            if let Some(inc) = &r.incorrect {
                put(Role::Incorrect, inc)?;
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn row(&self, id: &str) -> Option<&ScoreRow> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every metric name with at least one score.
    pub fn metrics(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .flat_map(|r| r.correct.keys().chain(r.incorrect.keys()))
            .cloned()
            .collect()
    }

    /// Rows with a human rating.
    pub fn rated(&self) -> ScoreTable {
        let mut t = ScoreTable::new();
        for row in self.rows.iter().filter(|r| r.human_score.is_some()) {
            t.index.insert(row.id.clone(), t.rows.len());
            t.rows.push(row.clone());
        }
        t
    }

    /// Matched `(correct, incorrect)` raw scores of a metric over rows that
    /// score both candidates. Rows without any incorrect score are skipped;
    /// a paired row scoring only one candidate is an error.
    pub fn pairs(&self, metric: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut correct = Vec::new();
        let mut incorrect = Vec::new();
        for row in &self.rows {
            match (row.correct.get(metric), row.incorrect.get(metric)) {
                (Some(&c), Some(&i)) => {
                    correct.push(c);
                    incorrect.push(i);
                }
                (None, None) => {}
                (Some(_), None) if row.incorrect.is_empty() => {}
                _ => {
                    return Err(Error::Integrity(format!(
                        "row {:?} scores only one candidate with {metric:?}",
                        row.id
                    )))
                }
            }
        }
        if correct.is_empty() {
            return Err(Error::EmptyInput(format!("no scored pairs for {metric:?}")));
        }
        Ok((correct, incorrect))
    }
}
