//! Command implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use matcha::attribution::{integrated_gradients, AttributionResult, Direction};
use matcha::checkpoint::{embedding_from, load_checkpoint, load_container, save_checkpoint, write_atomic};
use matcha::data::{discover_datasets, load_dataset, load_registry, make_triplets, DatasetManifest, Record};
use matcha::eval::{evaluate, resolve_ranges, threshold_curves_csv, EvaluationReport, Role, ScoreTable};
use matcha::model::{score, ModelParams};
use matcha::synth::synth_records;
use matcha::tokenizer::{Tokenizer, Vocabulary, WordTokenizer};
use matcha::training::{encode_triplets, train_with, EpochReport, TrainingSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{
    AttributeArgs, DirectionArg, EvaluateArgs, ScoreArgs, SynthArgs, TokenizeArgs, TokenizerArgs,
    TrainArgs,
};
use crate::config::TrainSettings;
use crate::output::{emit_json, write_json, ConfigError, Provenance};

/// Word vocabulary saved beside a checkpoint trained without GPT-2 files.
pub fn vocab_sidecar(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.as_os_str().to_owned();
    name.push(".vocab.json");
    PathBuf::from(name)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn tokenize(args: &TokenizeArgs) -> anyhow::Result<()> {
    let vocab = Vocabulary::load(&args.vocab, &args.merges)?;
    let seq = vocab.encode(&args.text, args.max_len)?;
    let ids: Vec<String> = seq.ids().iter().map(u32::to_string).collect();
    println!("{}", ids.join(" "));
    Ok(())
}

/// The checkpoint and its tokenizer, after checking every path up front.
fn load_model(ckpt: &Path, tok: &TokenizerArgs) -> anyhow::Result<(ModelParams, Box<dyn Tokenizer>)> {
    let mut problems = Vec::new();
    if !ckpt.is_file() {
        problems.push(format!("checkpoint {} does not exist", ckpt.display()));
    }
    match (&tok.vocab, &tok.merges) {
        (Some(v), Some(m)) => {
            for p in [v, m] {
                if !p.is_file() {
                    problems.push(format!("{} does not exist", p.display()));
                }
            }
        }
        (None, None) => {
            let sidecar = vocab_sidecar(ckpt);
            if ckpt.is_file() && !sidecar.is_file() {
                problems.push(format!(
                    "no word vocabulary at {}; pass --vocab and --merges for GPT-2 checkpoints",
                    sidecar.display()
                ));
            }
        }
        _ => problems.push("--vocab and --merges must be given together".into()),
    }
    if !problems.is_empty() {
        return Err(ConfigError(problems).into());
    }
    let params = load_checkpoint(ckpt)?;
    let tokenizer: Box<dyn Tokenizer> = match (&tok.vocab, &tok.merges) {
        (Some(v), Some(m)) => Box::new(Vocabulary::load(v, m)?),
        _ => Box::new(WordTokenizer::load(vocab_sidecar(ckpt))?),
    };
    if tokenizer.vocab_size() != params.vocab_size() {
        return Err(matcha::Error::Integrity(format!(
            "tokenizer has {} tokens but the checkpoint embeds {}",
            tokenizer.vocab_size(),
            params.vocab_size()
        ))
        .into());
    }
    Ok((params, tokenizer))
}

/// Datasets named by a directory, a registry JSON file or one JSONL file.
fn manifests(data: &Path) -> anyhow::Result<Vec<DatasetManifest>> {
    if data.is_dir() {
        return Ok(discover_datasets(data)?);
    }
    if data.extension().is_some_and(|e| e == "json") {
        return Ok(load_registry(data)?);
    }
    let name = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let records = matcha::data::load_jsonl(data, false)?;
    Ok(vec![DatasetManifest {
        name,
        path: data.to_path_buf(),
        has_contrastive: !records.is_empty() && records.iter().all(|r| r.incorrect.is_some()),
        rating_scale: None,
        sample_cap: None,
    }])
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    name: String,
    has_contrastive: bool,
    triplets: usize,
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    provenance: Provenance,
    config: &'a TrainSettings,
    tokenizer: &'static str,
    vocab_size: usize,
    datasets: Vec<DatasetSummary>,
    epochs: Vec<EpochReport>,
    optimizer_steps: u64,
}

pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let settings = TrainSettings::resolve(args)?;
    let data = settings.data.as_deref().expect("validated");
    let out = settings.out.as_deref().expect("validated");
    let seed = settings.train.seed;
    let provenance = Provenance::new("train", &settings, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut loaded = Vec::new();
    for m in manifests(data)? {
        let records = load_dataset(&m, &mut rng)?;
        // negatives are drawn within a dataset only
        let triplets = make_triplets(&records, &mut rng)
            .with_context(|| format!("dataset {}", m.name))?;
        loaded.push((m, triplets));
    }

    let (tokenizer, kind): (Box<dyn Tokenizer>, &'static str) = match (&settings.vocab, &settings.merges) {
        (Some(v), Some(m)) => (Box::new(Vocabulary::load(v, m)?), "gpt2_bpe"),
        _ => {
            let words = WordTokenizer::from_corpus(loaded.iter().flat_map(|(_, ts)| {
                ts.iter()
                    .flat_map(|t| [t.reference.as_str(), t.correct.as_str(), t.incorrect.as_str()])
            }));
            write_atomic(vocab_sidecar(out), words.to_json().as_bytes())?;
            (Box::new(words), "word")
        }
    };

    let imported = match &settings.embedding {
        Some(path) => Some(embedding_from(&load_container(path)?)?),
        None => None,
    };
    let hyper = settings.hyper(imported.as_ref().map(|e| e.ncols()));
    let params = match imported {
        Some(table) => {
            if table.nrows() != tokenizer.vocab_size() {
                return Err(matcha::Error::Integrity(format!(
                    "imported embedding has {} rows but the tokenizer has {} tokens",
                    table.nrows(),
                    tokenizer.vocab_size()
                ))
                .into());
            }
            ModelParams::init_with_embedding(hyper, table, &mut rng)?
        }
        None => ModelParams::init(hyper, tokenizer.vocab_size(), seed)?,
    };

    let mut sets = Vec::with_capacity(loaded.len());
    for (m, triplets) in &loaded {
        sets.push(TrainingSet {
            name: m.name.clone(),
            has_contrastive: m.has_contrastive,
            triplets: encode_triplets(tokenizer.as_ref(), triplets, hyper.max_len)?,
        });
    }

    let log_path = with_suffix(out, ".train.jsonl");
    let mut log = String::new();
    let (params, report) = train_with(&settings.train, &sets, params, |epoch, snapshot| {
        let line = serde_json::to_string(epoch).expect("epoch report serializes");
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
        write_atomic(&log_path, log.as_bytes())?;
        save_checkpoint(snapshot, out)
    })?;
    save_checkpoint(&params, out)?;

    let summary = TrainSummary {
        provenance,
        config: &settings,
        tokenizer: kind,
        vocab_size: tokenizer.vocab_size(),
        datasets: sets
            .iter()
            .map(|s| DatasetSummary {
                name: s.name.clone(),
                has_contrastive: s.has_contrastive,
                triplets: s.triplets.len(),
            })
            .collect(),
        epochs: report.epochs,
        optimizer_steps: report.optimizer_steps,
    };
    write_json(&with_suffix(out, ".report.json"), &summary)
}

#[derive(Debug, Serialize)]
struct ScoreOutput<'a> {
    provenance: Provenance,
    reference: &'a str,
    candidate: &'a str,
    score: f64,
}

pub fn score_cmd(args: &ScoreArgs) -> anyhow::Result<()> {
    let (params, tokenizer) = load_model(&args.ckpt, &args.tokenizer)?;
    let s = score(&params, tokenizer.as_ref(), &args.reference, &args.cand)?;
    if args.json {
        let out = ScoreOutput {
            provenance: Provenance::new("score", args, 0),
            reference: &args.reference,
            candidate: &args.cand,
            score: s,
        };
        emit_json(None, &out)
    } else {
        println!("{:?}", (s * 1e6).round() / 1e6);
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    provenance: Provenance,
    rows: usize,
    metrics: Vec<String>,
    #[serde(flatten)]
    report: EvaluationReport,
}

/// Records, their per-dataset rating scales, and a score table with the
/// lexical baselines filled in.
fn score_table(args: &EvaluateArgs) -> anyhow::Result<(Vec<Record>, ScoreTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut records = Vec::new();
    let mut scales = BTreeMap::new();
    for mut m in manifests(&args.data)? {
        if m.rating_scale.is_none() {
            m.rating_scale = args.rating_scale;
        }
        scales.insert(m.name.clone(), m.rating_scale);
        records.extend(load_dataset(&m, &mut rng)?);
    }
    let mut table = ScoreTable::from_records(&records, |d| scales.get(d).copied().flatten())?;
    table.add_lexical(&records)?;
    Ok((records, table))
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> anyhow::Result<()> {
    let mut problems = Vec::new();
    for p in std::iter::once(&args.data).chain(&args.scores) {
        if !p.exists() {
            problems.push(format!("{} does not exist", p.display()));
        }
    }
    let mut declared = BTreeMap::new();
    for (name, kind) in &args.ranges {
        match serde_json::from_value(serde_json::Value::String(kind.clone())) {
            Ok(k) => {
                declared.insert(name.clone(), k);
            }
            Err(_) => problems.push(format!(
                "range of {name:?}: unknown kind {kind:?}; expected cosine_like, unit or percent"
            )),
        }
    }
    if !problems.is_empty() {
        return Err(ConfigError(problems).into());
    }

    let (records, mut table) = score_table(args)?;
    if let Some(ckpt) = &args.ckpt {
        let (params, tokenizer) = load_model(ckpt, &args.tokenizer)?;
        for r in &records {
            let s = score(&params, tokenizer.as_ref(), &r.reference, &r.correct)?;
            table.insert(&r.id, "matcha", Role::Correct, s)?;
            if let Some(inc) = &r.incorrect {
                let s = score(&params, tokenizer.as_ref(), &r.reference, inc)?;
                table.insert(&r.id, "matcha", Role::Incorrect, s)?;
            }
        }
    }
    for path in &args.scores {
        let text = fs::read_to_string(path).map_err(|e| matcha::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        table
            .ingest_jsonl(&text)
            .with_context(|| format!("scores in {}", path.display()))?;
    }

    let metrics: Vec<String> = match &args.metrics {
        Some(m) => m.clone(),
        None => table.metrics().into_iter().collect(),
    };
    let ranges = resolve_ranges(&metrics, &declared)?;
    let report = evaluate(&table, &ranges)?;
    if let Some(path) = &args.curves {
        write_atomic(path, threshold_curves_csv(&report.separation).as_bytes())?;
    }
    let out = EvaluateOutput {
        provenance: Provenance::new("evaluate", args, args.seed),
        rows: table.len(),
        metrics,
        report,
    };
    emit_json(args.out.as_deref(), &out)
}

#[derive(Debug, Serialize)]
struct AttributionRow {
    candidate: String,
    #[serde(flatten)]
    result: AttributionResult,
}

#[derive(Debug, Serialize)]
struct AttributeOutput<'a> {
    provenance: Provenance,
    reference: &'a str,
    rows: Vec<AttributionRow>,
}

pub fn attribute(args: &AttributeArgs) -> anyhow::Result<()> {
    let (params, tokenizer) = load_model(&args.ckpt, &args.tokenizer)?;
    let directions: &[Direction] = match args.direction {
        DirectionArg::Both => &Direction::BOTH,
        DirectionArg::TowardCandidate => &[Direction::TowardCandidate],
        DirectionArg::TowardReference => &[Direction::TowardReference],
    };
    let mut rows = Vec::new();
    for cand in &args.cand {
        for &direction in directions {
            let result = integrated_gradients(
                &params,
                tokenizer.as_ref(),
                &args.reference,
                cand,
                direction,
                args.steps,
                args.baseline,
            )?;
            rows.push(AttributionRow {
                candidate: cand.clone(),
                result,
            });
        }
    }
    let out = AttributeOutput {
        provenance: Provenance::new("attribute", args, 0),
        reference: &args.reference,
        rows,
    };
    emit_json(args.out.as_deref(), &out)
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in synth_records(args.count, args.seed, &args.dataset) {
        text.push_str(&serde_json::to_string(&r)?);
        text.push('\n');
    }
    write_atomic(&args.out, text.as_bytes())?;
    Ok(())
}
