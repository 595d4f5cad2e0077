//! Hinge loss over cosine similarities and its exact gradient.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{cosine_grad, cosine_raw, forward, Forward, ModelParams};
use crate::tokenizer::TokenSequence;

/// One tokenized (reference, correct, incorrect) triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTriplet {
    pub reference: TokenSequence,
    pub correct: TokenSequence,
    pub incorrect: TokenSequence,
}

/// Triplets drawn from a single dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub items: Vec<EncodedTriplet>,
    pub source_dataset: String,
}

/// `max(0, m + sim_i - sim_c)`.
pub fn margin_loss(sim_c: f64, sim_i: f64, margin: f64) -> f64 {
    (margin + sim_i - sim_c).max(0.0)
}

/// Gradient of a scalar loss with respect to every parameter tensor. The
/// embedding gradient is sparse: only rows of tokens seen in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: BTreeMap<u32, Array1<f64>>,
    pub proj_weight: Array2<f64>,
    pub proj_bias: Array1<f64>,
    pub conversion: Array2<f64>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Self {
            embedding: BTreeMap::new(),
            proj_weight: Array2::zeros(params.proj_weight.raw_dim()),
            proj_bias: Array1::zeros(params.proj_bias.raw_dim()),
            conversion: Array2::zeros(params.conversion.raw_dim()),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (&id, row) in &other.embedding {
            let dim = row.len();
            self.embedding
                .entry(id)
                .or_insert_with(|| Array1::zeros(dim))
                .scaled_add(scale, row);
        }
        self.proj_weight.scaled_add(scale, &other.proj_weight);
        self.proj_bias.scaled_add(scale, &other.proj_bias);
        self.conversion.scaled_add(scale, &other.conversion);
    }

    pub fn scale(&mut self, s: f64) {
        for row in self.embedding.values_mut() {
            *row *= s;
        }
        self.proj_weight *= s;
        self.proj_bias *= s;
        self.conversion *= s;
    }

    /// Largest absolute entry over all tensors.
    pub fn max_abs(&self) -> f64 {
        let m = |it: &mut dyn Iterator<Item = &f64>| it.fold(0.0f64, |a, &v| a.max(v.abs()));
        let emb = self
            .embedding
            .values()
            .map(|r| m(&mut r.iter()))
            .fold(0.0, f64::max);
        emb.max(m(&mut self.proj_weight.iter()))
            .max(m(&mut self.proj_bias.iter()))
            .max(m(&mut self.conversion.iter()))
    }

    pub fn check_finite(&self) -> Result<()> {
        let bad = |name: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Numeric {
                    tensor: name.into(),
                    detail: "gradient has a non-finite entry".into(),
                })
            }
        };
        bad(
            "embedding",
            self.embedding.values().all(|r| r.iter().all(|v| v.is_finite())),
        )?;
        bad("proj_weight", self.proj_weight.iter().all(|v| v.is_finite()))?;
        bad("proj_bias", self.proj_bias.iter().all(|v| v.is_finite()))?;
        bad("conversion", self.conversion.iter().all(|v| v.is_finite()))
    }
}

/// Per-item similarities and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemOutcome {
    pub sim_correct: f64,
    pub sim_incorrect: f64,
    pub loss: f64,
}

struct ItemForward {
    r: Forward,
    c: Forward,
    i: Forward,
    outcome: ItemOutcome,
}

fn item_forward(params: &ModelParams, item: &EncodedTriplet) -> Result<ItemForward> {
    let r = forward(params, &item.reference)?;
    let c = forward(params, &item.correct)?;
    let i = forward(params, &item.incorrect)?;
    let sim_correct = cosine_raw(r.h.view(), c.h.view())?;
    let sim_incorrect = cosine_raw(r.h.view(), i.h.view())?;
    Ok(ItemForward {
        outcome: ItemOutcome {
            sim_correct,
            sim_incorrect,
            loss: margin_loss(sim_correct, sim_incorrect, params.hyper.margin),
        },
        r,
        c,
        i,
    })
}

fn with_item_context(e: Error, idx: usize, batch: &TripletBatch) -> Error {
    match e {
        Error::DegenerateRepresentation(msg) => Error::DegenerateRepresentation(format!(
            "batch item {idx} from dataset {:?}: {msg}",
            batch.source_dataset
        )),
        other => other,
    }
}

/// Similarities and hinge loss of every item.
pub fn item_outcomes(params: &ModelParams, batch: &TripletBatch) -> Result<Vec<ItemOutcome>> {
    batch
        .items
        .iter()
        .enumerate()
        .map(|(idx, item)| {
            item_forward(params, item)
                .map(|f| f.outcome)
                .map_err(|e| with_item_context(e, idx, batch))
        })
        .collect()
}

/// Mean hinge loss over the batch.
pub fn batch_loss(params: &ModelParams, batch: &TripletBatch) -> Result<f64> {
    if batch.items.is_empty() {
        return Err(Error::EmptyInput("batch has no items".into()));
    }
    let outcomes = item_outcomes(params, batch)?;
    Ok(outcomes.iter().map(|o| o.loss).sum::<f64>() / outcomes.len() as f64)
}

/// Parameter gradients of one batch before the projection gradient is
/// expanded. Every context block of the projection receives the same
/// gradient, so only one `D × D` block and one bias block are summed.
struct HeadAccumulator {
    /// Mean of the `N_c` projection blocks.
    mean_block: Array2<f64>,
    block: Array2<f64>,
    bias_block: Array1<f64>,
    conversion: Array2<f64>,
    embedding: BTreeMap<u32, Array1<f64>>,
}

impl HeadAccumulator {
    fn new(params: &ModelParams) -> Self {
        let (d, nc) = (params.dim(), params.contexts());
        let blocks = params
            .proj_weight
            .to_shape((nc, d, d))
            .expect("projection is N_c·D × D");
        Self {
            mean_block: blocks.mean_axis(Axis(0)).expect("at least one context"),
            block: Array2::zeros((d, d)),
            bias_block: Array1::zeros(d),
            conversion: Array2::zeros((d, d)),
            embedding: BTreeMap::new(),
        }
    }

    /// Pushes `∂loss/∂h` of one document back through the head.
    fn add_document(
        &mut self,
        params: &ModelParams,
        fwd: &Forward,
        seq: &TokenSequence,
        dh: &Array1<f64>,
        train_embeddings: bool,
    ) {
        // h = pooled · W
        let pooled = fwd.pooled.view().insert_axis(Axis(1));
        self.conversion += &pooled.dot(&dh.view().insert_axis(Axis(0)));
        let dpooled = params.conversion.dot(dh);
        // pooled = mean over context blocks i of (P_i · ē + b_i)
        self.bias_block += &dpooled;
        let col = dpooled.view().insert_axis(Axis(1));
        self.block += &col.dot(&fwd.mean_embedding.view().insert_axis(Axis(0)));
        if train_embeddings {
            // ē = mean of the token rows
            let dmean = self.mean_block.t().dot(&dpooled) / seq.len() as f64;
            for &id in seq.ids() {
                self.embedding
                    .entry(id)
                    .or_insert_with(|| Array1::zeros(dmean.len()))
                    .scaled_add(1.0, &dmean);
            }
        }
    }

    fn finish(self, params: &ModelParams) -> Gradients {
        let (d, nc) = (params.dim(), params.contexts());
        let block = self.block / nc as f64;
        let bias = self.bias_block / nc as f64;
        let mut grads = Gradients::zeros(params);
        for i in 0..nc {
            grads
                .proj_weight
                .slice_mut(s![i * d..(i + 1) * d, ..])
                .assign(&block);
            grads.proj_bias.slice_mut(s![i * d..(i + 1) * d]).assign(&bias);
        }
        grads.conversion = self.conversion;
        grads.embedding = self.embedding;
        grads
    }
}

/// Mean batch loss and its gradient. Items whose hinge is inactive
/// (loss exactly zero) contribute nothing.
pub fn backward(
    params: &ModelParams,
    batch: &TripletBatch,
    train_embeddings: bool,
) -> Result<(f64, Gradients)> {
    if batch.items.is_empty() {
        return Err(Error::EmptyInput("batch has no items".into()));
    }
    let n = batch.items.len() as f64;
    let mut acc = HeadAccumulator::new(params);
    let mut total = 0.0;
    for (idx, item) in batch.items.iter().enumerate() {
        let f = item_forward(params, item).map_err(|e| with_item_context(e, idx, batch))?;
        total += f.outcome.loss;
        if f.outcome.loss <= 0.0 {
            continue;
        }
        // ∂loss/∂sim_c = -1/n, ∂loss/∂sim_i = +1/n
        let (hr, hc, hi) = (f.r.h.view(), f.c.h.view(), f.i.h.view());
        let dh_r = (cosine_grad(hr, hi) - cosine_grad(hr, hc)) / n;
        let dh_c = cosine_grad(hc, hr) * (-1.0 / n);
        let dh_i = cosine_grad(hi, hr) / n;
        acc.add_document(params, &f.r, &item.reference, &dh_r, train_embeddings);
        acc.add_document(params, &f.c, &item.correct, &dh_c, train_embeddings);
        acc.add_document(params, &f.i, &item.incorrect, &dh_i, train_embeddings);
    }
    let grads = acc.finish(params);
    grads.check_finite()?;
    Ok((total / n, grads))
}
