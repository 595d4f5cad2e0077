//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use matcha::attribution::{
    integrated_gradients, integrated_gradients_fn, BaselineKind, Direction, ScoreFunction,
};
use matcha::checkpoint::{load_checkpoint, save_checkpoint, Container};
use matcha::data::{make_triplets, Record, Triplet};
use matcha::eval::{
    ccc, dcg, macro_f1_midpoint, n_delta, rouge_l_f1, rouge_n_f1, separation_report,
    wasserstein_1d, MetricRange, RangeKind, Role, ScoreTable,
};
use matcha::model::{represent, score, Hyperparams, ModelParams};
use matcha::synth::synth_records;
use matcha::tokenizer::{
    bytes_to_unicode, pretokenize, TokenSequence, Tokenizer, Vocabulary, WordTokenizer,
};
use matcha::training::{
    backward, batch_loss, encode_triplets, item_outcomes, train, AdamConfig, BatchSchedule,
    EncodedTriplet, OptimizerState, SchedulePlan, ScheduleStrategy, TrainConfig, TrainingSet,
    TripletBatch,
};
use matcha::Error;
use ndarray::{Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || {
        format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn cosine_range() -> MetricRange {
    MetricRange::new("matcha", RangeKind::CosineLike)
}

/// Scores around `center` with a zero-mean spread of ±`spread`.
fn centered_scores(center: f64, spread: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    raw.iter().map(|v| center + v - mean).collect()
}

fn n_delta_reproduction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let correct = centered_scores(0.7114, 0.08, 600, &mut rng);
    let incorrect = centered_scores(0.0124, 0.08, 600, &mut rng);
    let r = separation_report(&correct, &incorrect, &cosine_range()).map_err(|e| e.to_string())?;
    let fields = [
        ("mean_correct", r.mean_correct, 71.14),
        ("mean_incorrect", r.mean_incorrect, 1.24),
        ("n_delta", r.n_delta, 34.95),
        ("wasserstein", r.wasserstein, 34.95),
    ];
    for (name, got, want) in fields {
        check((got - want).abs() <= 0.01, || format!("{name} = {got:.4}, expected {want}"))?;
    }
    let mnli = n_delta(&[0.6477], &[-0.0976], &cosine_range()).map_err(|e| e.to_string())?;
    check((mnli - 37.27).abs() <= 0.01, || format!("second row N∆ = {mnli:.4}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("N∆ = {:.4}, W1 = {:.4}", r.n_delta, r.wasserstein))
}

fn degenerate_macro_f1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let correct: Vec<f64> = (0..300).map(|_| rng.random_range(0.05..0.95)).collect();
    let incorrect: Vec<f64> = (0..300).map(|_| rng.random_range(0.05..0.95)).collect();
    let f = macro_f1_midpoint(&correct, &incorrect, &cosine_range()).map_err(|e| e.to_string())?;
    check((f - 33.33).abs() <= 0.01, || format!("macro-F1 = {f:.4}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("macro-F1 = {f:.4}"))
}

/// W1 as the integral of `|Q_a(u) − Q_b(u)|` over quantile levels, with the
/// breakpoints `i/n` and `j/m` merged in exact integer arithmetic.
fn quantile_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j) = (0u64, 0u64);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // next breakpoint is min((i+1)/n, (j+1)/m)
        let (lhs, rhs) = ((i + 1) * m, (j + 1) * n);
        let level = lhs.min(rhs) as f64 / (n * m) as f64;
        total += (a[i as usize] - b[j as usize]).abs() * (level - prev);
        prev = level;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    total
}

fn wasserstein_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=500);
        let m = if trial % 2 == 0 { n } else { rng.random_range(1..=500) };
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..1.5)).collect();
        let w = wasserstein_1d(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((w - quantile_w1(&a, &b)).abs());
    }
    check(worst <= 1e-9, || format!("max deviation from oracle {worst:e}"))?;
    let mut dom_worst: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.random_range(1..=300);
        let (a, b): (Vec<f64>, Vec<f64>) = if trial % 2 == 0 {
            // separated supports
            let m = rng.random_range(1..=300);
            (
                (0..n).map(|_| rng.random_range(0.5..1.0)).collect(),
                (0..m).map(|_| rng.random_range(0.0..0.5)).collect(),
            )
        } else {
            // overlapping supports, quantile-wise dominated
            let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            b.sort_by(f64::total_cmp);
            let a = b.iter().map(|v| v + rng.random_range(0.0..0.3)).collect();
            b.shuffle(&mut rng);
            (a, b)
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let w = wasserstein_1d(&a, &b).map_err(|e| e.to_string())?;
        dom_worst = dom_worst.max((w - (mean(&a) - mean(&b)).abs()).abs());
    }
    check(dom_worst <= 1e-9, || format!("dominance identity off by {dom_worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("oracle gap {worst:.1e}, dominance gap {dom_worst:.1e}"))
}

fn random_fd_case(rng: &mut ChaCha8Rng) -> (ModelParams, TripletBatch) {
    let dim = rng.random_range(1..=8);
    let contexts = rng.random_range(1..=4);
    let vocab = 12;
    let hyper = Hyperparams {
        dim,
        contexts,
        max_len: 6,
        margin: *[0.5, 1.0, 2.5].choose(rng).unwrap(),
    };
    let mut p = ModelParams::zeros(hyper, vocab);
    p.embedding.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.proj_weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.proj_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.conversion.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let mut doc = || {
        let len = rng.random_range(1..=6);
        let ids = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
        TokenSequence::new(ids, vocab).unwrap()
    };
    let mut items = Vec::new();
    for _ in 0..4 {
        items.push(EncodedTriplet {
            reference: doc(),
            correct: doc(),
            incorrect: doc(),
        });
    }
    items.truncate(rng.random_range(1..=4));
    (
        p,
        TripletBatch {
            items,
            source_dataset: "fd".into(),
        },
    )
}

/// Analytic gradient of every parameter, flattened in the order used by
/// [`perturb`].
fn parameter_gradients(p: &ModelParams, g: &matcha::training::Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for ((r, c), _) in p.embedding.indexed_iter() {
        out.push(g.embedding.get(&(r as u32)).map_or(0.0, |row| row[c]));
    }
    out.extend(g.proj_weight.iter());
    out.extend(g.proj_bias.iter());
    out.extend(g.conversion.iter());
    out
}

fn perturb(p: &ModelParams, k: usize, delta: f64) -> ModelParams {
    let mut q = p.clone();
    let mut k = k;
    let sizes = [q.embedding.len(), q.proj_weight.len(), q.proj_bias.len()];
    if k < sizes[0] {
        q.embedding.as_slice_mut().unwrap()[k] += delta;
        return q;
    }
    k -= sizes[0];
    if k < sizes[1] {
        q.proj_weight.as_slice_mut().unwrap()[k] += delta;
        return q;
    }
    k -= sizes[1];
    if k < sizes[2] {
        q.proj_bias.as_slice_mut().unwrap()[k] += delta;
        return q;
    }
    k -= sizes[2];
    q.conversion.as_slice_mut().unwrap()[k] += delta;
    q
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut configs, mut worst, mut checked) = (0, 0.0f64, 0usize);
    while configs < 25 {
        let (p, batch) = random_fd_case(&mut rng);
        let Ok(outcomes) = item_outcomes(&p, &batch) else {
            continue;
        };
        let m = p.hyper.margin;
        if outcomes.iter().any(|o| (m + o.sim_incorrect - o.sim_correct).abs() < 1e-3) {
            continue;
        }
        let near_zero = batch.items.iter().any(|t| {
            [&t.reference, &t.correct, &t.incorrect]
                .iter()
                .any(|d| represent(&p, d).map_or(true, |r| r.norm() <= 1e-2))
        });
        if near_zero {
            continue;
        }
        let (_, g) = backward(&p, &batch, true).map_err(|e| e.to_string())?;
        let analytic = parameter_gradients(&p, &g);
        let h = 1e-4;
        for (k, &a) in analytic.iter().enumerate() {
            let central = |h: f64| -> Result<f64, String> {
                let up = batch_loss(&perturb(&p, k, h), &batch).map_err(|e| e.to_string())?;
                let down = batch_loss(&perturb(&p, k, -h), &batch).map_err(|e| e.to_string())?;
                Ok((up - down) / (2.0 * h))
            };
            let fd = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            checked += 1;
        }
        configs += 1;
    }
    check(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("{configs} configurations, {checked} entries, worst relative error {worst:.1e}"))
}

struct DeskModel {
    params: ModelParams,
    tokenizer: WordTokenizer,
    held_out: Vec<Triplet>,
    train_time: Duration,
}

fn desk_model() -> &'static DeskModel {
    static MODEL: OnceLock<DeskModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let start = Instant::now();
        let records = synth_records(2000, 42, "synthetic");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let triplets = make_triplets(&records, &mut rng).unwrap();
        let (train_split, held_out) = triplets.split_at(1600);
        let tokenizer = WordTokenizer::from_corpus(
            train_split
                .iter()
                .flat_map(|t| [t.reference.as_str(), t.correct.as_str(), t.incorrect.as_str()]),
        );
        let hyper = Hyperparams {
            dim: 64,
            max_len: 64,
            ..Hyperparams::default()
        };
        let sets = [TrainingSet {
            name: "synthetic".into(),
            has_contrastive: true,
            triplets: encode_triplets(&tokenizer, train_split, hyper.max_len).unwrap(),
        }];
        let config = TrainConfig {
            epochs: 5,
            batch_size: 32,
            grad_accum_steps: 1,
            ..TrainConfig::default()
        };
        let init = ModelParams::init(hyper, tokenizer.vocab_size(), config.seed).unwrap();
        let (params, _) = train(&config, &sets, init).unwrap();
        DeskModel {
            params,
            tokenizer,
            held_out: held_out.to_vec(),
            train_time: start.elapsed(),
        }
    })
}

fn desk_training() -> Outcome {
    let model = desk_model();
    let mut table = ScoreTable::new();
    let mut satisfied = 0;
    for t in &model.held_out {
        let sc = score(&model.params, &model.tokenizer, &t.reference, &t.correct)
            .map_err(|e| e.to_string())?;
        let si = score(&model.params, &model.tokenizer, &t.reference, &t.incorrect)
            .map_err(|e| e.to_string())?;
        if sc - si >= 0.5 * model.params.hyper.margin {
            satisfied += 1;
        }
        let put = |table: &mut ScoreTable, metric: &str, role, v| table.insert(&t.id, metric, role, v);
        put(&mut table, "matcha", Role::Correct, sc).map_err(|e| e.to_string())?;
        put(&mut table, "matcha", Role::Incorrect, si).map_err(|e| e.to_string())?;
        put(&mut table, "rouge1", Role::Correct, rouge_n_f1(&t.reference, &t.correct, 1))
            .map_err(|e| e.to_string())?;
        put(&mut table, "rouge1", Role::Incorrect, rouge_n_f1(&t.reference, &t.incorrect, 1))
            .map_err(|e| e.to_string())?;
    }
    let nd = |metric: &str, kind| -> Result<f64, String> {
        let (c, i) = table.pairs(metric).map_err(|e| e.to_string())?;
        n_delta(&c, &i, &MetricRange::new(metric, kind)).map_err(|e| e.to_string())
    };
    let matcha_nd = nd("matcha", RangeKind::CosineLike)?;
    let rouge_nd = nd("rouge1", RangeKind::Unit)?;
    let rate = 100.0 * satisfied as f64 / model.held_out.len() as f64;
    let summary = format!(
        "held-out N∆ {matcha_nd:.2} vs ROUGE-1 N∆ {rouge_nd:.2}, margin satisfied {rate:.1}%, trained in {:.0}s",
        model.train_time.as_secs_f64()
    );
    check(matcha_nd > 0.0 && matcha_nd >= 2.0 * rouge_nd, || summary.clone())?;
    check(rate >= 80.0, || summary.clone())?;
    within(model.train_time, Duration::from_secs(600))?;
    Ok(summary)
}

fn single_batch_overfit() -> Outcome {
    let start = Instant::now();
    let records = synth_records(16, 3, "overfit");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let triplets = make_triplets(&records, &mut rng).map_err(|e| e.to_string())?;
    let tokenizer = WordTokenizer::from_corpus(
        triplets
            .iter()
            .flat_map(|t| [t.reference.as_str(), t.correct.as_str(), t.incorrect.as_str()]),
    );
    let batch = TripletBatch {
        items: encode_triplets(&tokenizer, &triplets, 64).map_err(|e| e.to_string())?,
        source_dataset: "overfit".into(),
    };
    let hyper = Hyperparams {
        dim: 48,
        max_len: 64,
        ..Hyperparams::default()
    };
    let mut params = ModelParams::init(hyper, tokenizer.vocab_size(), 42).map_err(|e| e.to_string())?;
    let adam = AdamConfig {
        lr: 2.5e-4,
        ..AdamConfig::default()
    };
    let mut optim = OptimizerState::new(adam, &params, true).map_err(|e| e.to_string())?;
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (loss, grads) = backward(&params, &batch, true).map_err(|e| e.to_string())?;
        losses.push(loss);
        optim.step(&mut params, &grads).map_err(|e| e.to_string())?;
    }
    losses.push(batch_loss(&params, &batch).map_err(|e| e.to_string())?);
    let (first, last) = (losses[0], *losses.last().unwrap());
    let rises: Vec<usize> = (1..losses.len()).filter(|&k| losses[k] > losses[k - 1]).collect();
    check(rises.is_empty(), || format!("loss rose after steps {rises:?}"))?;
    check(last < 0.1 * first, || format!("loss {first:.4} -> {last:.4}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("loss {first:.4} -> {last:.4} over 50 steps"))
}

struct LinearScore {
    coef: Array2<f64>,
}

impl ScoreFunction for LinearScore {
    fn score(&self, x: ArrayView2<f64>) -> matcha::Result<f64> {
        Ok((&self.coef * &x).sum())
    }

    fn gradient(&self, _x: ArrayView2<f64>) -> matcha::Result<Array2<f64>> {
        Ok(self.coef.clone())
    }
}

fn ig_completeness() -> Outcome {
    let model = desk_model();
    let start = Instant::now();
    // worst residual-to-bound ratio per baseline over the same 50 pairs
    let mut ratios = Vec::new();
    let mut failures = Vec::new();
    for baseline in [BaselineKind::Zero, BaselineKind::MeanEmbedding] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let t = model.held_out.choose(&mut rng).unwrap();
            let cand = if rng.random_bool(0.5) { &t.correct } else { &t.incorrect };
            let direction = *Direction::BOTH.choose(&mut rng).unwrap();
            let a = integrated_gradients(
                &model.params,
                &model.tokenizer,
                &t.reference,
                cand,
                direction,
                256,
                baseline,
            )
            .map_err(|e| e.to_string())?;
            let bound = 1e-3 * (a.score - a.baseline_score).abs() + 1e-6;
            if baseline == BaselineKind::Zero && a.completeness_residual > bound {
                failures.push(format!(
                    "{} {}: residual {:.2e} > bound {bound:.2e}",
                    t.id,
                    direction.name(),
                    a.completeness_residual
                ));
            }
            worst = worst.max(a.completeness_residual / bound);
        }
        ratios.push(worst);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_linear: f64 = 0.0;
    for _ in 0..20 {
        let (l, d) = (rng.random_range(1..8), rng.random_range(1..8));
        let draw = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((l, d), |_| rng.random_range(-2.0..2.0));
        let f = LinearScore { coef: draw(&mut rng) };
        let (x, x0) = (draw(&mut rng), draw(&mut rng));
        let ig = integrated_gradients_fn(&f, x.view(), x0.view(), 8).map_err(|e| e.to_string())?;
        let exact = &f.coef * &(&x - &x0);
        for (a, b) in ig.iter().zip(exact.iter()) {
            worst_linear = worst_linear.max((a - b).abs());
        }
    }
    let summary = format!(
        "worst residual/bound {:.3} with zero baseline, {:.3} with mean-embedding baseline; linear IG exact to {worst_linear:.0e}",
        ratios[0], ratios[1]
    );
    check(failures.is_empty(), || format!("{}; {summary}", failures.join(", ")))?;
    check(worst_linear <= 1e-12, || format!("linear IG off by {worst_linear:e}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(summary)
}

#[derive(Deserialize)]
struct RougeCase {
    reference: String,
    candidate: String,
    kind: String,
    overlap: usize,
    candidate_count: usize,
    reference_count: usize,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn f1_from_counts(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 || cand == 0 || reference == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn direct_ccc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx = x.iter().map(|v| v * v).sum::<f64>();
    let syy = y.iter().map(|v| v * v).sum::<f64>();
    let sxy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let (mx, my) = (sx / n, sy / n);
    let (vx, vy, cov) = (sxx / n - mx * mx, syy / n - my * my, sxy / n - mx * my);
    2.0 * cov / (vx + vy + (mx - my).powi(2))
}

fn lexical_and_agreement_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut vectors = vec![(vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0])];
    while vectors.len() < 100 {
        let n = rng.random_range(2..50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.random_range(-1.0..2.0)).collect();
        vectors.push((x, y));
    }
    for (x, y) in &vectors {
        let v = ccc(x, y).map_err(|e| e.to_string())?;
        worst = worst.max((v - direct_ccc(x, y)).abs());
    }
    check(worst <= 1e-9, || format!("CCC off by {worst:e}"))?;
    let first = ccc(&vectors[0].0, &vectors[0].1).map_err(|e| e.to_string())?;
    check((first - 0.5714).abs() < 1e-4, || format!("(1,2,3)/(2,3,4) gives {first}"))?;

    let text = std::fs::read_to_string(fixture("rouge_cases.json")).map_err(|e| e.to_string())?;
    let cases: Vec<RougeCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    check(cases.len() == 20, || format!("{} ROUGE cases", cases.len()))?;
    for c in &cases {
        let got = match c.kind.as_str() {
            "L" => rouge_l_f1(&c.reference, &c.candidate),
            n => rouge_n_f1(&c.reference, &c.candidate, n.parse().unwrap()),
        };
        let want = f1_from_counts(c.overlap, c.candidate_count, c.reference_count);
        check(got == want, || {
            format!("ROUGE-{} of {:?} vs {:?}: {got} != {want}", c.kind, c.reference, c.candidate)
        })?;
    }

    let names: Vec<String> = (1..=9).map(|k| format!("metric{k}")).collect();
    let ranges: Vec<MetricRange> = names.iter().map(|n| MetricRange::new(n, RangeKind::Unit)).collect();
    let records: Vec<Record> = (0..12)
        .map(|i| Record {
            id: format!("row{i}"),
            dataset: "rated".into(),
            reference: "r".into(),
            correct: "c".into(),
            incorrect: None,
            human_score: Some(rng.random_range(1.0..5.0)),
        })
        .collect();
    let mut table = ScoreTable::from_records(&records, |_| Some((1.0, 5.0))).map_err(|e| e.to_string())?;
    for row in &records {
        let human = (row.human_score.unwrap() - 1.0) / 4.0;
        // metric k sits k-1 hundredths away from the rating, so metric1 is
        // always closest and metric9 always furthest
        for (k, name) in names.iter().enumerate() {
            let sign = if human > 0.5 { -1.0 } else { 1.0 };
            table
                .insert(&row.id, name, Role::Correct, human + sign * 0.01 * k as f64)
                .map_err(|e| e.to_string())?;
        }
    }
    let g = dcg(&table, &ranges).map_err(|e| e.to_string())?;
    let last = 100.0 / 9.0 / 10f64.log2();
    check((g["metric1"] - 100.0).abs() <= 1e-6, || format!("rank-1 DCG {}", g["metric1"]))?;
    check((g["metric9"] - last).abs() <= 1e-6, || format!("rank-9 DCG {}", g["metric9"]))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "CCC worst {worst:.1e}; 20 ROUGE cases exact; DCG {:.2}/{:.4}",
        g["metric1"], g["metric9"]
    ))
}

/// Vocabulary holding the 256 byte symbols and a handful of merges.
fn byte_level_vocab() -> Vocabulary {
    let enc = bytes_to_unicode();
    let mut entries: Vec<(String, u32)> =
        enc.iter().enumerate().map(|(i, c)| (c.to_string(), i as u32)).collect();
    let merges = [("t", "h"), ("th", "e"), ("Ġ", "the"), ("i", "n"), ("Ġ", "a"), ("e", "r")];
    for (l, r) in merges {
        let id = entries.len() as u32;
        entries.push((format!("{l}{r}"), id));
    }
    let merges = merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect();
    Vocabulary::from_parts(entries, merges).unwrap()
}

fn random_utf8(rng: &mut ChaCha8Rng) -> String {
    const POOLS: &[&[char]] = &[
        &['a', 'b', 'Z', '0', '9', ' ', ' ', '\n', '\t', '.', '\'', '-', '!'],
        &['é', 'ß', 'ø', 'Ω', 'ж', 'λ'],
        &['中', '文', '日', '本', '한'],
        &['😀', '🚀', '🎉', '\u{200d}', '\u{fe0f}'],
    ];
    let target = rng.random_range(1..=200);
    let mut s = String::new();
    loop {
        let pool = POOLS[rng.random_range(0..POOLS.len())];
        let c = pool[rng.random_range(0..pool.len())];
        if s.len() + c.len_utf8() > target {
            break;
        }
        s.push(c);
    }
    if s.is_empty() {
        s.push('x');
    }
    s
}

/// Leftmost single merge of the lowest-ranked adjacent pair, repeated
/// until no pair is mergeable.
fn naive_bpe(vocab: &Vocabulary, ranks: &HashMap<(String, String), usize>, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for piece in pretokenize(text) {
        let mut symbols: Vec<String> = vocab
            .encode_bytes(piece.as_bytes())
            .chars()
            .map(String::from)
            .collect();
        loop {
            let best = (0..symbols.len().saturating_sub(1))
                .filter_map(|i| {
                    ranks
                        .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        ids.extend(symbols.iter().map(|s| vocab.token_id(s).expect("symbol in vocabulary")));
    }
    ids
}

#[derive(Deserialize)]
struct ReferenceEncoding {
    text: String,
    ids: Vec<u32>,
}

fn tokenizer_round_trip() -> Outcome {
    let start = Instant::now();
    let gpt2 = std::env::var_os("MATCHA_GPT2_DIR").map(PathBuf::from);
    let vocab = match &gpt2 {
        Some(dir) => Vocabulary::load(dir.join("encoder.json"), dir.join("vocab.bpe"))
            .map_err(|e| e.to_string())?,
        None => byte_level_vocab(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let s = random_utf8(&mut rng);
        let seq = vocab.encode(&s, 1024).map_err(|e| e.to_string())?;
        let back = vocab.decode(&seq).map_err(|e| e.to_string())?;
        check(back == s, || format!("round trip changed {s:?} into {back:?}"))?;
    }
    let Some(_) = gpt2 else {
        within(start.elapsed(), Duration::from_secs(30))?;
        return Ok("1000 round trips on a byte-level vocabulary; merge oracle skipped because MATCHA_GPT2_DIR is unset".into());
    };
    let ranks: HashMap<(String, String), usize> = vocab
        .merges()
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    let text = std::fs::read_to_string(fixture("gpt2_reference_ids.json")).map_err(|e| e.to_string())?;
    let cases: Vec<ReferenceEncoding> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    check(cases.len() == 50, || format!("{} fixture sentences", cases.len()))?;
    for c in &cases {
        let got = vocab.encode(&c.text, 4096).map_err(|e| e.to_string())?;
        let oracle = naive_bpe(&vocab, &ranks, &c.text);
        check(got.ids() == oracle.as_slice(), || format!("oracle disagrees on {:?}", c.text))?;
        check(got.ids() == c.ids.as_slice(), || format!("reference ids differ on {:?}", c.text))?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok("1000 round trips on the GPT-2 vocabulary; 50 sentences match the merge oracle".into())
}

fn toy_set(name: &str, size: usize, contrastive: bool) -> TrainingSet {
    let seq = |i: usize| TokenSequence::new(vec![i as u32], size).unwrap();
    TrainingSet {
        name: name.into(),
        has_contrastive: contrastive,
        triplets: (0..size)
            .map(|i| EncodedTriplet {
                reference: seq(i),
                correct: seq(i),
                incorrect: seq(i),
            })
            .collect(),
    }
}

fn schedule_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..300 {
        let k = rng.random_range(2..=5);
        let sets: Vec<TrainingSet> = (0..k)
            .map(|d| toy_set(&format!("d{d}"), rng.random_range(1..=20), true))
            .collect();
        let batch = rng.random_range(1..=4);
        let mut remaining: HashMap<String, usize> =
            sets.iter().map(|s| (s.name.clone(), s.triplets.len().div_ceil(batch))).collect();
        let plan = SchedulePlan::new(ScheduleStrategy::Interleaved, &sets, &[]).map_err(|e| e.to_string())?;
        let mut order_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let drawn: Vec<String> = BatchSchedule::new(&sets, &plan, batch, &mut order_rng)
            .map_err(|e| e.to_string())?
            .map(|b| b.source_dataset)
            .collect();
        for (pos, name) in drawn.iter().enumerate() {
            if pos > 0 && drawn[pos - 1] == *name {
                let others_left = remaining.iter().any(|(n, &r)| n != name && r > 0);
                check(!others_left, || format!("{name} drawn twice while others remained"))?;
            }
            *remaining.get_mut(name).unwrap() -= 1;
        }
        check(remaining.values().all(|&r| r == 0), || "batches left undrawn".into())?;

        let plan = SchedulePlan::new(ScheduleStrategy::Sequential, &sets, &[]).map_err(|e| e.to_string())?;
        let drawn: Vec<String> = BatchSchedule::new(&sets, &plan, batch, &mut order_rng)
            .map_err(|e| e.to_string())?
            .map(|b| b.source_dataset)
            .collect();
        let mut expected = Vec::new();
        for s in &sets {
            expected.extend(std::iter::repeat_n(s.name.clone(), s.triplets.len().div_ceil(batch)));
        }
        check(drawn == expected, || "sequential order violated".into())?;
    }

    let records = synth_records(120, 11, "repro");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let triplets = make_triplets(&records, &mut rng).map_err(|e| e.to_string())?;
    let tokenizer = WordTokenizer::from_corpus(
        triplets
            .iter()
            .flat_map(|t| [t.reference.as_str(), t.correct.as_str(), t.incorrect.as_str()]),
    );
    let (a, b) = triplets.split_at(70);
    let sets = [
        TrainingSet {
            name: "a".into(),
            has_contrastive: true,
            triplets: encode_triplets(&tokenizer, a, 32).map_err(|e| e.to_string())?,
        },
        TrainingSet {
            name: "b".into(),
            has_contrastive: false,
            triplets: encode_triplets(&tokenizer, b, 32).map_err(|e| e.to_string())?,
        },
    ];
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        grad_accum_steps: 2,
        ..TrainConfig::default()
    };
    let hyper = Hyperparams {
        dim: 16,
        contexts: 4,
        max_len: 32,
        margin: 1.0,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut blobs = Vec::new();
    for run in 0..2 {
        let init = ModelParams::init(hyper, tokenizer.vocab_size(), 42).map_err(|e| e.to_string())?;
        let (params, _) = train(&config, &sets, init).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("run{run}.ckpt"));
        save_checkpoint(&params, &path).map_err(|e| e.to_string())?;
        blobs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    check(blobs[0] == blobs[1], || "seed-42 checkpoints differ".into())?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("300 random layouts; seed-42 checkpoints identical ({} bytes)", blobs[0].len()))
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let hyper = Hyperparams {
        dim: rng.random_range(1..=12),
        contexts: rng.random_range(1..=5),
        max_len: rng.random_range(1..=600),
        margin: rng.random_range(0.1f32..3.0) as f64,
    };
    let vocab = rng.random_range(1..=40);
    let mut p = ModelParams::init(hyper, vocab, rng.random()).unwrap();
    p.proj_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    // the container stores f32
    for t in [&mut p.embedding, &mut p.proj_weight, &mut p.conversion] {
        t.mapv_inplace(|v| v as f32 as f64);
    }
    p.proj_bias.mapv_inplace(|v| v as f32 as f64);
    p
}

fn decode(bytes: &[u8]) -> matcha::Result<ModelParams> {
    ModelParams::try_from(&Container::from_bytes(bytes)?)
}

fn checkpoint_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for trial in 0..20 {
        let params = random_params(&mut rng);
        let path = dir.path().join(format!("t{trial}.ckpt"));
        save_checkpoint(&params, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        check(back == params, || format!("trial {trial}: round trip changed the parameters"))?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;

        let mut bad_magic = bytes.clone();
        bad_magic[rng.random_range(0..4)] ^= 0x20;
        check(matches!(Container::from_bytes(&bad_magic), Err(Error::Format { .. })), || {
            format!("trial {trial}: corrupt magic accepted")
        })?;

        let mut bad_version = bytes.clone();
        bad_version[4] = bad_version[4].wrapping_add(1);
        check(decode(&bad_version).is_err(), || {
            format!("trial {trial}: wrong version accepted")
        })?;

        let cut = rng.random_range(0..bytes.len());
        check(decode(&bytes[..cut]).is_err(), || {
            format!("trial {trial}: truncation at {cut} accepted")
        })?;

        let mut container = Container::from_bytes(&bytes).map_err(|e| e.to_string())?;
        match rng.random_range(0..3) {
            0 => container.manifest.dim += 1,
            1 => container.manifest.contexts += 1,
            _ => container.manifest.vocab_size += 1,
        }
        check(matches!(decode(&container.to_bytes()), Err(Error::Integrity(_))), || {
            format!("trial {trial}: manifest/tensor mismatch accepted")
        })?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok("20 bit-exact round trips; every injected corruption rejected".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("N∆ arithmetic reproduction", n_delta_reproduction),
        ("degenerate macro-F1 signature", degenerate_macro_f1),
        ("Wasserstein oracle equivalence", wasserstein_oracle),
        ("gradient correctness", gradient_check),
        ("desk-scale training separation", desk_training),
        ("single-batch overfit", single_batch_overfit),
        ("IG completeness", ig_completeness),
        ("CCC/ROUGE/DCG oracles", lexical_and_agreement_oracles),
        ("tokenizer round-trip", tokenizer_round_trip),
        ("schedule properties", schedule_properties),
        ("checkpoint round-trip", checkpoint_round_trip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("criterion {:>2} {name}: PASS ({detail}; {secs:.2}s)", k + 1),
            Err(detail) => {
                failures += 1;
                format!("criterion {:>2} {name}: FAIL ({detail}; {secs:.2}s)", k + 1)
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
