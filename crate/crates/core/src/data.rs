//! Corpus ingestion and triplet construction.
//!
//! One JSONL schema serves both training and evaluation:
//!
//! ```json
//! {"reference": "...", "correct": "...", "incorrect": "..." | null,
//!  "dataset": "...", "human_score": 3.5 | null, "id": "..." | null}
//! ```
//!
//! Records without an `incorrect` text receive a random negative drawn from
//! the correct texts of other records in the same dataset.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attempts at drawing a usable random negative before giving up.
pub const REROLL_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub dataset: String,
    pub reference: String,
    pub correct: String,
    pub incorrect: Option<String>,
    pub human_score: Option<f64>,
}

#[derive(Deserialize)]
struct RawRecord {
    reference: Option<String>,
    correct: Option<String>,
    #[serde(default)]
    incorrect: Option<String>,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    human_score: Option<f64>,
    #[serde(default)]
    id: Option<String>,
}

/// A record whose incorrect candidate is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    pub dataset: String,
    pub reference: String,
    pub correct: String,
    pub incorrect: String,
    pub human_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub has_contrastive: bool,
    #[serde(default)]
    pub rating_scale: Option<(f64, f64)>,
    #[serde(default)]
    pub sample_cap: Option<usize>,
}

/// Parses JSONL text. Records missing `dataset` take `default_dataset`;
/// records missing `id` get `<default_dataset>:<line>`. Schema problems are
/// collected across all lines unless `fail_fast` is set.
pub fn parse_jsonl(text: &str, default_dataset: &str, fail_fast: bool) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, lineno, default_dataset) {
            Ok(r) => records.push(r),
            Err(msg) => {
                problems.push(format!("line {lineno}: {msg}"));
                if fail_fast {
                    break;
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(records)
    } else {
        Err(Error::Schema(problems))
    }
}

fn parse_line(line: &str, lineno: usize, default_dataset: &str) -> std::result::Result<Record, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let reference = raw.reference.ok_or("missing \"reference\"")?;
    let correct = raw.correct.ok_or("missing \"correct\"")?;
    if reference.trim().is_empty() {
        return Err("\"reference\" is empty".into());
    }
    if correct.trim().is_empty() {
        return Err("\"correct\" is empty".into());
    }
    if let Some(s) = raw.human_score {
        if !s.is_finite() {
            return Err("\"human_score\" is not finite".into());
        }
    }
    let incorrect = raw.incorrect.filter(|s| !s.trim().is_empty());
    if let Some(inc) = &incorrect {
        if inc == &correct || inc == &reference {
            return Err("\"incorrect\" repeats the correct or reference text".into());
        }
    }
    let dataset = raw.dataset.unwrap_or_else(|| default_dataset.to_string());
    Ok(Record {
        id: raw.id.unwrap_or_else(|| format!("{default_dataset}:{lineno}")),
        dataset,
        reference,
        correct,
        incorrect,
        human_score: raw.human_score,
    })
}

/// Loads a JSONL file; the file stem is the default dataset name.
pub fn load_jsonl(path: impl AsRef<Path>, fail_fast: bool) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_jsonl(&text, &stem, fail_fast)
}

/// Checks human scores against a dataset's rating scale.
pub fn check_rating_scale(records: &[Record], scale: Option<(f64, f64)>) -> Result<()> {
    let Some((lo, hi)) = scale else {
        return Ok(());
    };
    let problems: Vec<String> = records
        .iter()
        .filter_map(|r| {
            r.human_score
                .filter(|&s| s < lo || s > hi)
                .map(|s| format!("record {}: human_score {s} outside [{lo}, {hi}]", r.id))
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema(problems))
    }
}

/// Reads a registry: a JSON list of manifests. Relative paths resolve
/// against the registry's directory.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifests: Vec<DatasetManifest> = serde_json::from_str(&text).map_err(|e| {
        Error::format(
            path.display().to_string(),
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for m in &mut manifests {
        if m.path.is_relative() {
            m.path = base.join(&m.path);
        }
    }
    validate_registry(&manifests)?;
    Ok(manifests)
}

pub fn validate_registry(manifests: &[DatasetManifest]) -> Result<()> {
    let mut problems = Vec::new();
    let mut names = HashSet::new();
    for m in manifests {
        if !names.insert(m.name.as_str()) {
            problems.push(format!("dataset name {:?} appears twice", m.name));
        }
        if m.sample_cap == Some(0) {
            problems.push(format!("dataset {:?}: sample_cap must be at least 1", m.name));
        }
        if let Some((lo, hi)) = m.rating_scale {
            if !(lo < hi) {
                problems.push(format!("dataset {:?}: rating_scale min must be below max", m.name));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema(problems))
    }
}

/// Builds a registry for a directory: `registry.json` if present, otherwise
/// one dataset per `*.jsonl` file (sorted by name), marked contrastive when
/// every record carries an incorrect candidate.
pub fn discover_datasets(dir: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    let dir = dir.as_ref();
    let registry = dir.join("registry.json");
    if registry.is_file() {
        return load_registry(registry);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    let mut manifests = Vec::with_capacity(paths.len());
    for path in paths {
        let records = load_jsonl(&path, false)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        manifests.push(DatasetManifest {
            name,
            has_contrastive: !records.is_empty() && records.iter().all(|r| r.incorrect.is_some()),
            path,
            rating_scale: None,
            sample_cap: None,
        });
    }
    Ok(manifests)
}

/// Loads one dataset's records, forcing its name onto every record and
/// applying its sample cap.
pub fn load_dataset<R: Rng + ?Sized>(manifest: &DatasetManifest, rng: &mut R) -> Result<Vec<Record>> {
    let mut records = load_jsonl(&manifest.path, false)?;
    for r in &mut records {
        r.dataset = manifest.name.clone();
    }
    check_rating_scale(&records, manifest.rating_scale)?;
    if let Some(cap) = manifest.sample_cap {
        records = cap_and_shuffle(records, cap, rng);
    }
    Ok(records)
}

/// Completes every record into a triplet. Records with an incorrect text
/// pass through untouched; the rest get the correct text of a uniformly
/// drawn other record, redrawn while it equals the record's own correct or
/// reference text.
pub fn make_triplets<R: Rng + ?Sized>(records: &[Record], rng: &mut R) -> Result<Vec<Triplet>> {
    let needs_negative = records.iter().any(|r| r.incorrect.is_none());
    if needs_negative && records.len() < 2 {
        return Err(Error::InsufficientCorpus(
            "random negatives need at least two records".into(),
        ));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let incorrect = match &r.incorrect {
                Some(text) => text.clone(),
                None => random_negative(records, i, rng)?,
            };
            Ok(Triplet {
                id: r.id.clone(),
                dataset: r.dataset.clone(),
                reference: r.reference.clone(),
                correct: r.correct.clone(),
                incorrect,
                human_score: r.human_score,
            })
        })
        .collect()
}

fn random_negative<R: Rng + ?Sized>(records: &[Record], own: usize, rng: &mut R) -> Result<String> {
    let me = &records[own];
    for _ in 0..REROLL_LIMIT {
        // uniform over the other n - 1 records
        let mut j = rng.random_range(0..records.len() - 1);
        if j >= own {
            j += 1;
        }
        let text = &records[j].correct;
        if text != &me.correct && text != &me.reference {
            return Ok(text.clone());
        }
    }
    Err(Error::InsufficientCorpus(format!(
        "no usable random negative for record {} after {REROLL_LIMIT} draws",
        me.id
    )))
}

/// Uniform sample of `min(cap, n)` records without replacement.
pub fn cap_and_shuffle<T, R: Rng + ?Sized>(mut records: Vec<T>, cap: usize, rng: &mut R) -> Vec<T> {
    records.shuffle(rng);
    records.truncate(cap);
    records
}
