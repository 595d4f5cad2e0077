//! The scoring network.
//!
//! A document of `L` tokens is embedded (`L × D`), every token embedding is
//! projected by one affine layer into `N_c` context vectors (`N_c × L × D`),
//! each context vector is multiplied by a square conversion matrix over its
//! last axis, and the result is mean-pooled over both the context and token
//! axes into a single `D`-vector. Two documents are compared by the cosine of
//! their pooled vectors.
//!
//! Every stage after the lookup is linear, so pooling commutes with the
//! projection and the conversion. [`represent`] exploits this and pools the
//! token embeddings first; the staged functions ([`embed`], [`project`],
//! [`convert`], [`pool`]) materialize the intermediate tensors and serve as
//! the reference composition.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSequence, Tokenizer, DEFAULT_MAX_LEN};

/// Number of context vectors per token used by default.
pub const DEFAULT_CONTEXTS: usize = 16;
/// Embedding width of GPT-2 small.
pub const GPT2_DIM: usize = 768;
/// Vocabulary size of GPT-2.
pub const GPT2_VOCAB_SIZE: usize = 50257;
/// Standard deviation of freshly initialized embedding rows (GPT-2's own
/// initializer range).
pub const EMBEDDING_INIT_STD: f64 = 0.02;

/// Shape and loss hyperparameters stored alongside the tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Embedding width `D`.
    pub dim: usize,
    /// Context vectors per token, `N_c`.
    pub contexts: usize,
    pub max_len: usize,
    /// Hinge margin `m`.
    pub margin: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            dim: GPT2_DIM,
            contexts: DEFAULT_CONTEXTS,
            max_len: DEFAULT_MAX_LEN,
            margin: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("D must be at least 1".to_string());
        }
        if self.contexts == 0 {
            problems.push("N_c must be at least 1".to_string());
        }
        if self.max_len == 0 {
            problems.push("max_len must be at least 1".to_string());
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            problems.push(format!("margin must be positive, got {}", self.margin));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    /// `vocab_size × D` token embedding table.
    pub embedding: Array2<f64>,
    /// `(N_c·D) × D` projection weight.
    pub proj_weight: Array2<f64>,
    /// `N_c·D` projection bias.
    pub proj_bias: Array1<f64>,
    /// `D × D` conversion matrix.
    pub conversion: Array2<f64>,
}

/// Draws an `f32` and widens it, so freshly initialized parameters survive
/// the 32-bit checkpoint format unchanged.
fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    let u: f32 = rng.random_range(-bound as f32..=bound as f32);
    f64::from(u)
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || uniform(rng, bound))
}

impl ModelParams {
    /// Fresh parameters: a random embedding table with standard deviation
    /// [`EMBEDDING_INIT_STD`], Glorot-uniform projection and conversion
    /// weights, zero bias.
    pub fn init(hyper: Hyperparams, vocab_size: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // uniform on [-a, a] has standard deviation a / sqrt(3)
        let emb_bound = EMBEDDING_INIT_STD * 3f64.sqrt();
        let embedding =
            Array2::from_shape_simple_fn((vocab_size, hyper.dim), || uniform(&mut rng, emb_bound));
        Self::init_with_embedding(hyper, embedding, &mut rng)
    }

    /// Fresh head parameters on top of an existing (e.g. imported GPT-2)
    /// embedding table.
    pub fn init_with_embedding(
        hyper: Hyperparams,
        embedding: Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let (d, nc) = (hyper.dim, hyper.contexts);
        if embedding.ncols() != d {
            return Err(Error::Shape(format!(
                "embedding table has {} columns, expected D = {d}",
                embedding.ncols()
            )));
        }
        let proj_weight = glorot(nc * d, d, rng);
        let conversion = glorot(d, d, rng);
        Ok(Self {
            hyper,
            embedding,
            proj_weight,
            proj_bias: Array1::zeros(nc * d),
            conversion,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(hyper: Hyperparams, vocab_size: usize) -> Self {
        let (d, nc) = (hyper.dim, hyper.contexts);
        Self {
            hyper,
            embedding: Array2::zeros((vocab_size, d)),
            proj_weight: Array2::zeros((nc * d, d)),
            proj_bias: Array1::zeros(nc * d),
            conversion: Array2::zeros((d, d)),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    pub fn contexts(&self) -> usize {
        self.hyper.contexts
    }

    /// Checks tensor shapes against the hyperparameters and that every entry
    /// is finite.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let (d, nc) = (self.hyper.dim, self.hyper.contexts);
        let checks: [(&str, Vec<usize>, Vec<usize>); 4] = [
            ("embedding", self.embedding.shape().to_vec(), vec![self.vocab_size(), d]),
            ("proj_weight", self.proj_weight.shape().to_vec(), vec![nc * d, d]),
            ("proj_bias", self.proj_bias.shape().to_vec(), vec![nc * d]),
            ("conversion", self.conversion.shape().to_vec(), vec![d, d]),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!("{name} has shape {got:?}, expected {want:?}")));
            }
        }
        for (name, all_finite) in [
            ("embedding", self.embedding.iter().all(|v| v.is_finite())),
            ("proj_weight", self.proj_weight.iter().all(|v| v.is_finite())),
            ("proj_bias", self.proj_bias.iter().all(|v| v.is_finite())),
            ("conversion", self.conversion.iter().all(|v| v.is_finite())),
        ] {
            if !all_finite {
                return Err(Error::Numeric {
                    tensor: name.into(),
                    detail: "contains a non-finite entry".into(),
                });
            }
        }
        Ok(())
    }
}

/// `N_c × L × D` context tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTensor(pub Array3<f64>);

impl ContextTensor {
    pub fn contexts(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[2]
    }
}

/// Pooled document vector `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocRepresentation(pub Array1<f64>);

impl DocRepresentation {
    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }
}

/// Looks up the embedding row of every token.
pub fn embed(params: &ModelParams, seq: &TokenSequence) -> Result<Array2<f64>> {
    let vocab_size = params.vocab_size();
    let mut out = Array2::zeros((seq.len(), params.dim()));
    for (row, &id) in out.outer_iter_mut().zip(seq.ids()) {
        if id as usize >= vocab_size {
            return Err(Error::Range {
                id: id as usize,
                vocab_size,
            });
        }
        let mut row = row;
        row.assign(&params.embedding.row(id as usize));
    }
    Ok(out)
}

/// Affine projection of each token embedding into `N_c` context vectors.
pub fn project(params: &ModelParams, embeddings: &Array2<f64>) -> Result<ContextTensor> {
    let (d, nc) = (params.dim(), params.contexts());
    if embeddings.ncols() != d {
        return Err(Error::Shape(format!(
            "embeddings have {} columns, expected D = {d}",
            embeddings.ncols()
        )));
    }
    let len = embeddings.nrows();
    // L × (N_c·D), one affine output per token
    let projected = embeddings.dot(&params.proj_weight.t()) + &params.proj_bias;
    let mut s = Array3::zeros((nc, len, d));
    for i in 0..nc {
        s.slice_mut(s![i, .., ..])
            .assign(&projected.slice(s![.., i * d..(i + 1) * d]));
    }
    Ok(ContextTensor(s))
}

/// Multiplies every context vector (as a row vector) by `w`.
pub fn convert(s: &ContextTensor, w: &Array2<f64>) -> Result<ContextTensor> {
    let d = s.dim();
    if w.shape() != [d, d] {
        return Err(Error::Shape(format!(
            "conversion matrix has shape {:?}, expected [{d}, {d}]",
            w.shape()
        )));
    }
    let (nc, len) = (s.contexts(), s.len());
    let flat = s
        .0
        .to_shape((nc * len, d))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = flat.dot(w);
    let out = out
        .into_shape_with_order((nc, len, d))
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(ContextTensor(out))
}

/// Mean over the context and token axes.
pub fn pool(s: &ContextTensor) -> Result<DocRepresentation> {
    if s.is_empty() || s.contexts() == 0 {
        return Err(Error::EmptyInput("cannot pool a zero-length document".into()));
    }
    let count = (s.contexts() * s.len()) as f64;
    let sum = s.0.sum_axis(Axis(0)).sum_axis(Axis(0));
    Ok(DocRepresentation(sum / count))
}

/// Mean over the context axis and the unmasked token positions of a padded
/// tensor; `mask[j]` is true for real tokens.
pub fn pool_masked(s: &ContextTensor, mask: &[bool]) -> Result<DocRepresentation> {
    if mask.len() != s.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} positions",
            mask.len(),
            s.len()
        )));
    }
    let real = mask.iter().filter(|&&m| m).count();
    if real == 0 || s.contexts() == 0 {
        return Err(Error::EmptyInput("no unmasked positions to pool".into()));
    }
    let mut sum = Array1::zeros(s.dim());
    for i in 0..s.contexts() {
        for (j, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            sum += &s.0.slice(s![i, j, ..]);
        }
    }
    Ok(DocRepresentation(sum / (s.contexts() * real) as f64))
}

/// Intermediate values of the factorized forward pass, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Mean token embedding.
    pub mean_embedding: Array1<f64>,
    /// Pooled context vector before conversion.
    pub pooled: Array1<f64>,
    /// Document representation `pooled · W`.
    pub h: Array1<f64>,
}

/// Mean token embedding of a sequence.
pub fn mean_embedding(params: &ModelParams, seq: &TokenSequence) -> Result<Array1<f64>> {
    let vocab_size = params.vocab_size();
    let mut sum = Array1::zeros(params.dim());
    for &id in seq.ids() {
        if id as usize >= vocab_size {
            return Err(Error::Range {
                id: id as usize,
                vocab_size,
            });
        }
        sum += &params.embedding.row(id as usize);
    }
    Ok(sum / seq.len() as f64)
}

/// Runs the head on an already pooled token embedding.
pub fn forward_from_mean(params: &ModelParams, mean: ArrayView1<f64>) -> Forward {
    let (d, nc) = (params.dim(), params.contexts());
    let projected = params.proj_weight.dot(&mean) + &params.proj_bias;
    let pooled = projected
        .to_shape((nc, d))
        .expect("projection output is N_c·D")
        .sum_axis(Axis(0))
        / nc as f64;
    let h = pooled.dot(&params.conversion);
    Forward {
        mean_embedding: mean.to_owned(),
        pooled,
        h,
    }
}

/// Factorized forward pass.
pub fn forward(params: &ModelParams, seq: &TokenSequence) -> Result<Forward> {
    let mean = mean_embedding(params, seq)?;
    Ok(forward_from_mean(params, mean.view()))
}

/// Pooled representation of one document; equal (up to rounding) to
/// `pool(convert(project(embed(seq)), W))`.
pub fn represent(params: &ModelParams, seq: &TokenSequence) -> Result<DocRepresentation> {
    forward(params, seq).map(|f| DocRepresentation(f.h))
}

/// Representations of several documents through one padded tensor with a
/// padding mask, following the staged path.
pub fn represent_batch(
    params: &ModelParams,
    seqs: &[TokenSequence],
) -> Result<Vec<DocRepresentation>> {
    let max_len = seqs.iter().map(TokenSequence::len).max().unwrap_or(0);
    seqs.iter()
        .map(|seq| {
            let mut e = Array2::zeros((max_len, params.dim()));
            e.slice_mut(s![..seq.len(), ..]).assign(&embed(params, seq)?);
            let mask: Vec<bool> = (0..max_len).map(|j| j < seq.len()).collect();
            let staged = convert(&project(params, &e)?, &params.conversion)?;
            pool_masked(&staged, &mask)
        })
        .collect()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &DocRepresentation, b: &DocRepresentation) -> Result<f64> {
    cosine_raw(a.0.view(), b.0.view())
}

pub(crate) fn cosine_raw(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateRepresentation(
            "document representation has zero norm".into(),
        ));
    }
    let c = a.dot(&b) / (na * nb);
    if !c.is_finite() {
        return Err(Error::Numeric {
            tensor: "representation".into(),
            detail: format!("cosine evaluated to {c}"),
        });
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// `∂cos(a, b)/∂a`.
pub(crate) fn cosine_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    let cos = a.dot(&b) / (na * nb);
    &b / (na * nb) - &a * (cos / (na * na))
}

/// Similarity of a candidate to a reference under fixed parameters.
pub fn score(
    params: &ModelParams,
    tokenizer: &dyn Tokenizer,
    reference: &str,
    candidate: &str,
) -> Result<f64> {
    let max_len = params.hyper.max_len;
    let r = represent(params, &tokenizer.encode(reference, max_len)?)?;
    let c = represent(params, &tokenizer.encode(candidate, max_len)?)?;
    cosine(&r, &c)
}
