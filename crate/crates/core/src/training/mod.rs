//! Contrastive training.
//!
//! The objective is the mean hinge `max(0, m + sim(R, I) - sim(R, C))` over
//! triplets. Gradients are computed exactly by hand (the model is a fixed
//! linear graph followed by two cosines), accumulated over several
//! micro-batches, and applied with Adam.

mod loss;
mod optim;
mod schedule;

pub use loss::{
    backward, batch_loss, item_outcomes, margin_loss, EncodedTriplet, Gradients, ItemOutcome,
    TripletBatch,
};
pub use optim::{AdamConfig, OptimizerState};
pub use schedule::{BatchSchedule, SchedulePlan, ScheduleStrategy, TrainingSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub seed: u64,
    pub schedule: ScheduleStrategy,
    /// Learning-rate decay factor applied once per epoch.
    pub gamma: f64,
    pub train_embeddings: bool,
    /// Dataset names in difficulty order, for the curriculum schedule.
    pub curriculum: Vec<String>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 15,
            batch_size: 128,
            grad_accum_steps: 8,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            margin: 1.0,
            seed: 42,
            schedule: ScheduleStrategy::Interleaved,
            gamma: adam.gamma,
            train_embeddings: true,
            curriculum: Vec::new(),
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            gamma: self.gamma,
        }
    }

    /// Every problem with the configuration, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.grad_accum_steps == 0 {
            problems.push("grad_accum_steps must be at least 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            problems.push(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("beta1 and beta2 must lie in [0, 1)".to_string());
        }
        if !(self.epsilon > 0.0) {
            problems.push("epsilon must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub optimizer_steps: u64,
}

impl TrainReport {
    /// One JSON object per epoch, newline separated.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("report serializes") + "\n")
            .collect()
    }
}

/// Sums item-weighted micro-batch gradients so the applied gradient is that
/// of the mean loss over the union of the micro-batches.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    sum: Gradients,
    items: usize,
    micro_batches: usize,
}

impl GradAccumulator {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            sum: Gradients::zeros(params),
            items: 0,
            micro_batches: 0,
        }
    }

    /// Adds the mean gradient of a micro-batch of `items` triplets.
    pub fn add(&mut self, grads: &Gradients, items: usize) {
        self.sum.add_scaled(grads, items as f64);
        self.items += items;
        self.micro_batches += 1;
    }

    pub fn micro_batches(&self) -> usize {
        self.micro_batches
    }

    /// The averaged gradient; resets the accumulator.
    pub fn take(&mut self) -> Option<Gradients> {
        if self.items == 0 {
            return None;
        }
        let fresh = Gradients::zeros_like(&self.sum);
        let mut g = std::mem::replace(&mut self.sum, fresh);
        g.scale(1.0 / self.items as f64);
        self.items = 0;
        self.micro_batches = 0;
        Some(g)
    }
}

impl Gradients {
    fn zeros_like(other: &Gradients) -> Self {
        Self {
            embedding: Default::default(),
            proj_weight: ndarray::Array2::zeros(other.proj_weight.raw_dim()),
            proj_bias: ndarray::Array1::zeros(other.proj_bias.raw_dim()),
            conversion: ndarray::Array2::zeros(other.conversion.raw_dim()),
        }
    }
}

/// Tokenizes triplets for training.
pub fn encode_triplets(
    tokenizer: &dyn Tokenizer,
    triplets: &[Triplet],
    max_len: usize,
) -> Result<Vec<EncodedTriplet>> {
    triplets
        .iter()
        .map(|t| {
            let enc = |text: &str, role: &str| {
                tokenizer.encode(text, max_len).map_err(|e| match e {
                    Error::EmptyInput(m) => Error::EmptyInput(format!("{} {role}: {m}", t.id)),
                    other => other,
                })
            };
            Ok(EncodedTriplet {
                reference: enc(&t.reference, "reference")?,
                correct: enc(&t.correct, "correct")?,
                incorrect: enc(&t.incorrect, "incorrect")?,
            })
        })
        .collect()
}

/// Trains `params` in place. `on_epoch` runs after each epoch with a
/// consistent snapshot of the parameters; an error from it aborts training.
pub fn train_with<F>(
    config: &TrainConfig,
    sets: &[TrainingSet],
    mut params: ModelParams,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(&EpochReport, &ModelParams) -> Result<()>,
{
    config.validate()?;
    params.validate()?;
    if sets.iter().all(|s| s.triplets.is_empty()) {
        return Err(Error::InsufficientCorpus("no triplets to train on".into()));
    }
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((params, report));
    }
    params.hyper.margin = config.margin;
    let plan = SchedulePlan::new(config.schedule, sets, &config.curriculum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optim = OptimizerState::new(config.adam(), &params, config.train_embeddings)?;
    let mut acc = GradAccumulator::new(&params);

    for epoch in 0..config.epochs {
        optim.set_epoch(epoch);
        let schedule = BatchSchedule::new(sets, &plan, config.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in schedule {
            let (loss, grads) = backward(&params, &batch, config.train_embeddings)?;
            loss_sum += loss;
            batches += 1;
            acc.add(&grads, batch.items.len());
            if acc.micro_batches() == config.grad_accum_steps {
                let g = acc.take().expect("accumulated at least one batch");
                optim.step(&mut params, &g)?;
            }
        }
        // a partial accumulation window still updates before the epoch ends
        if let Some(g) = acc.take() {
            optim.step(&mut params, &g)?;
        }
        params.validate()?;
        let line = EpochReport {
            epoch,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            lr: optim.effective_lr(),
            batches,
        };
        on_epoch(&line, &params)?;
        report.epochs.push(line);
    }
    report.optimizer_steps = optim.step_count;
    Ok((params, report))
}

/// [`train_with`] without an epoch callback.
pub fn train(
    config: &TrainConfig,
    sets: &[TrainingSet],
    params: ModelParams,
) -> Result<(ModelParams, TrainReport)> {
    train_with(config, sets, params, |_, _| Ok(()))
}
