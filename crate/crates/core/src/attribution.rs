//! Integrated-Gradients token attribution of the similarity score.
//!
//! One document's token embeddings are moved along a straight line from a
//! baseline to their actual values while the other document's
//! representation stays fixed. The gradient of the raw cosine score is
//! averaged over midpoint Riemann nodes `α_k = (k + ½)/steps` and multiplied
//! by `x − x′`; summing over embedding dimensions gives one attribution per
//! token.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cosine_grad, cosine_raw, embed, represent, ModelParams};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_STEPS: usize = 64;
pub const MIN_STEPS: usize = 8;

/// A differentiable score of an `L × D` input matrix.
pub trait ScoreFunction {
    fn score(&self, x: ArrayView2<f64>) -> Result<f64>;

    /// `∂score/∂x`, shaped like `x`.
    fn gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Score at the baseline. Functions singular there return their limit
    /// along the path.
    fn baseline_score(&self, baseline: ArrayView2<f64>, _input: ArrayView2<f64>) -> Result<f64> {
        self.score(baseline)
    }
}

/// Per-element Integrated Gradients `(x − x′) ⊙ mean_k ∇f(x′ + α_k (x − x′))`.
pub fn integrated_gradients_fn<F: ScoreFunction + ?Sized>(
    f: &F,
    input: ArrayView2<f64>,
    baseline: ArrayView2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if input.raw_dim() != baseline.raw_dim() {
        return Err(Error::Shape("baseline must match the input shape".into()));
    }
    let delta = &input - &baseline;
    let mut mean_grad = Array2::zeros(input.raw_dim());
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(mean_grad);
    }
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let point = &baseline + &(&delta * alpha);
        mean_grad += &f.gradient(point.view())?;
    }
    Ok(delta * &(mean_grad / steps as f64))
}

/// Which document's tokens are attributed; the other is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Attribute the candidate's tokens.
    TowardCandidate,
    /// Attribute the reference's tokens.
    TowardReference,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::TowardCandidate, Direction::TowardReference];

    pub fn name(self) -> &'static str {
        match self {
            Direction::TowardCandidate => "toward_candidate",
            Direction::TowardReference => "toward_reference",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// All-zero embeddings.
    #[default]
    Zero,
    /// Every token replaced by the mean row of the embedding table.
    MeanEmbedding,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Zero => "zero",
            BaselineKind::MeanEmbedding => "mean_embedding",
        }
    }

    fn matrix(self, params: &ModelParams, len: usize) -> Array2<f64> {
        match self {
            BaselineKind::Zero => Array2::zeros((len, params.dim())),
            BaselineKind::MeanEmbedding => {
                let mean = params
                    .embedding
                    .mean_axis(Axis(0))
                    .expect("embedding table has rows");
                mean.broadcast((len, params.dim()))
                    .expect("row broadcasts")
                    .to_owned()
            }
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [BaselineKind::Zero, BaselineKind::MeanEmbedding]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown baseline {s:?}; expected zero or mean_embedding"
                ))
            })
    }
}

/// The model's cosine score as a function of one document's token
/// embeddings, against a fixed representation of the other document.
///
/// The head collapses to `h = A·ē + c` in the mean embedding `ē`, with
/// `A = Wᵀ P̄` and `c = Wᵀ b̄` for the block means `P̄` and `b̄`.
pub struct ModelScore {
    linear: Array2<f64>,
    offset: Array1<f64>,
    other: Array1<f64>,
}

impl ModelScore {
    pub fn new(params: &ModelParams, other: Array1<f64>) -> Self {
        let (d, nc) = (params.dim(), params.contexts());
        let mut mean_block = Array2::<f64>::zeros((d, d));
        let mut mean_bias = Array1::<f64>::zeros(d);
        for i in 0..nc {
            mean_block += &params.proj_weight.slice(s![i * d..(i + 1) * d, ..]);
            mean_bias += &params.proj_bias.slice(s![i * d..(i + 1) * d]);
        }
        let wt = params.conversion.t();
        Self {
            linear: wt.dot(&mean_block) / nc as f64,
            offset: wt.dot(&mean_bias) / nc as f64,
            other,
        }
    }

    fn h(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let d = self.linear.ncols();
        if x.ncols() != d || x.nrows() == 0 {
            return Err(Error::Shape(format!(
                "expected a non-empty L × {d} matrix, got {:?}",
                x.shape()
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("rows present");
        Ok(self.linear.dot(&mean) + &self.offset)
    }
}

fn degenerate_path(e: Error) -> Error {
    match e {
        Error::DegenerateRepresentation(m) => Error::Numeric {
            tensor: "attribution path".into(),
            detail: format!("{m}; try a different baseline"),
        },
        other => other,
    }
}

impl ScoreFunction for ModelScore {
    fn score(&self, x: ArrayView2<f64>) -> Result<f64> {
        cosine_raw(self.h(x)?.view(), self.other.view())
    }

    fn gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.h(x)?;
        if h.dot(&h) == 0.0 {
            return Err(degenerate_path(Error::DegenerateRepresentation(
                "pooled vector has zero norm on the interpolation path".into(),
            )));
        }
        let dh = cosine_grad(h.view(), self.other.view());
        let row = self.linear.t().dot(&dh) / x.nrows() as f64;
        Ok(row
            .broadcast(x.raw_dim())
            .expect("row broadcasts")
            .to_owned())
    }

    /// `h` is affine in the path parameter, so a zero-norm `h` at the
    /// baseline is replaced by the limit along the path.
    fn baseline_score(&self, baseline: ArrayView2<f64>, input: ArrayView2<f64>) -> Result<f64> {
        let hb = self.h(baseline)?;
        if hb.dot(&hb) > 0.0 {
            return cosine_raw(hb.view(), self.other.view());
        }
        let toward = self.h(input)?;
        cosine_raw(toward.view(), self.other.view()).map_err(degenerate_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub token: String,
    pub attribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub direction: Direction,
    pub per_token: Vec<TokenAttribution>,
    /// Sum of the per-token attributions.
    pub total: f64,
    pub score: f64,
    pub baseline_score: f64,
    /// `|total − (score − baseline_score)|`.
    pub completeness_residual: f64,
    pub steps: usize,
}

/// Attributes the score of `(reference, candidate)` to the tokens of the
/// document picked by `direction`.
pub fn integrated_gradients(
    params: &ModelParams,
    tokenizer: &dyn Tokenizer,
    reference: &str,
    candidate: &str,
    direction: Direction,
    steps: usize,
    baseline: BaselineKind,
) -> Result<AttributionResult> {
    if steps < MIN_STEPS {
        return Err(Error::InvalidArgument(format!(
            "steps must be at least {MIN_STEPS}, got {steps}"
        )));
    }
    let max_len = params.hyper.max_len;
    let ref_seq = tokenizer.encode(reference, max_len)?;
    let cand_seq = tokenizer.encode(candidate, max_len)?;
    let (target, fixed) = match direction {
        Direction::TowardCandidate => (&cand_seq, &ref_seq),
        Direction::TowardReference => (&ref_seq, &cand_seq),
    };
    let other = represent(params, fixed)?.0;
    if other.dot(&other) == 0.0 {
        return Err(Error::DegenerateRepresentation(
            "the fixed document has a zero-norm representation".into(),
        ));
    }
    let f = ModelScore::new(params, other);
    let x = embed(params, target)?;
    let x0 = baseline.matrix(params, target.len());
    let ig = integrated_gradients_fn(&f, x.view(), x0.view(), steps)?;
    let per_dim = ig.sum_axis(Axis(1));
    let per_token: Vec<TokenAttribution> = target
        .ids()
        .iter()
        .zip(per_dim.iter())
        .map(|(&id, &a)| TokenAttribution {
            token: tokenizer.display_token(id),
            attribution: a,
        })
        .collect();
    let total = per_token.iter().map(|t| t.attribution).sum::<f64>();
    let score = f.score(x.view())?;
    let baseline_score = if x == x0 {
        score
    } else {
        f.baseline_score(x0.view(), x.view())?
    };
    Ok(AttributionResult {
        direction,
        per_token,
        total,
        score,
        baseline_score,
        completeness_residual: (total - (score - baseline_score)).abs(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionGap {
    pub mean_correct: f64,
    pub mean_incorrect: f64,
    pub gap: f64,
}

/// Mean total attribution toward the correct and the incorrect candidate
/// over `(reference, correct, incorrect)` triples, ×100, and their gap.
pub fn attribution_gap(
    params: &ModelParams,
    tokenizer: &dyn Tokenizer,
    triples: &[(String, String, String)],
    steps: usize,
    baseline: BaselineKind,
) -> Result<AttributionGap> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("no pairs to attribute".into()));
    }
    let total = |r: &str, c: &str| {
        integrated_gradients(params, tokenizer, r, c, Direction::TowardCandidate, steps, baseline)
            .map(|a| a.total)
    };
    let mut sc = 0.0;
    let mut si = 0.0;
    for (r, c, i) in triples {
        sc += total(r, c)?;
        si += total(r, i)?;
    }
    let n = triples.len() as f64;
    let (mean_correct, mean_incorrect) = (100.0 * sc / n, 100.0 * si / n);
    Ok(AttributionGap {
        mean_correct,
        mean_incorrect,
        gap: mean_correct - mean_incorrect,
    })
}
