//! Adam with decoupled weight decay and a per-epoch exponential learning
//! rate schedule.

use ndarray::{Array1, Array2, ArrayViewMut1, Zip};
use serde::{Deserialize, Serialize};

use super::loss::Gradients;
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Per-epoch learning-rate decay factor in (0, 1].
    pub gamma: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.05,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    embedding: Option<Array2<f64>>,
    proj_weight: Array2<f64>,
    proj_bias: Array1<f64>,
    conversion: Array2<f64>,
}

impl Moments {
    fn zeros(params: &ModelParams, with_embedding: bool) -> Self {
        Self {
            embedding: with_embedding.then(|| Array2::zeros(params.embedding.raw_dim())),
            proj_weight: Array2::zeros(params.proj_weight.raw_dim()),
            proj_bias: Array1::zeros(params.proj_bias.raw_dim()),
            conversion: Array2::zeros(params.conversion.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub epoch: usize,
    first: Moments,
    second: Moments,
}

struct StepScalars {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    decay: f64,
    bias1: f64,
    bias2: f64,
}

impl StepScalars {
    #[inline]
    fn update(&self, theta: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.bias1;
        let v_hat = *v / self.bias2;
        *theta -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.decay * *theta);
    }
}

impl OptimizerState {
    /// Zeroed moments shaped like `params`. Embedding moments are only kept
    /// when the embedding table is trained.
    pub fn new(config: AdamConfig, params: &ModelParams, train_embeddings: bool) -> Result<Self> {
        if !(config.gamma > 0.0 && config.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr decay must lie in (0, 1], got {}",
                config.gamma
            )));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step_count: 0,
            epoch: 0,
            first: Moments::zeros(params, train_embeddings),
            second: Moments::zeros(params, train_embeddings),
        })
    }

    pub fn trains_embeddings(&self) -> bool {
        self.first.embedding.is_some()
    }

    /// `lr · γ^epoch`.
    pub fn effective_lr(&self) -> f64 {
        self.config.lr * self.config.gamma.powi(self.epoch as i32)
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// One bias-corrected Adam update of every trained tensor, with the
    /// weight decay applied directly to the parameters.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        let shape_err = |name: &str| Error::Shape(format!("{name} gradient does not match its parameter"));
        if grads.proj_weight.raw_dim() != params.proj_weight.raw_dim()
            || self.first.proj_weight.raw_dim() != params.proj_weight.raw_dim()
        {
            return Err(shape_err("proj_weight"));
        }
        if grads.proj_bias.raw_dim() != params.proj_bias.raw_dim()
            || self.first.proj_bias.raw_dim() != params.proj_bias.raw_dim()
        {
            return Err(shape_err("proj_bias"));
        }
        if grads.conversion.raw_dim() != params.conversion.raw_dim()
            || self.first.conversion.raw_dim() != params.conversion.raw_dim()
        {
            return Err(shape_err("conversion"));
        }
        let (vocab, dim) = params.embedding.dim();
        if grads
            .embedding
            .iter()
            .any(|(&id, row)| id as usize >= vocab || row.len() != dim)
        {
            return Err(shape_err("embedding"));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let s = StepScalars {
            lr: self.effective_lr(),
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.epsilon,
            decay: c.weight_decay,
            bias1: 1.0 - c.beta1.powi(t),
            bias2: 1.0 - c.beta2.powi(t),
        };

        Zip::from(&mut params.proj_weight)
            .and(&mut self.first.proj_weight)
            .and(&mut self.second.proj_weight)
            .and(&grads.proj_weight)
            .for_each(|p, m, v, &g| s.update(p, m, v, g));
        Zip::from(&mut params.proj_bias)
            .and(&mut self.first.proj_bias)
            .and(&mut self.second.proj_bias)
            .and(&grads.proj_bias)
            .for_each(|p, m, v, &g| s.update(p, m, v, g));
        Zip::from(&mut params.conversion)
            .and(&mut self.first.conversion)
            .and(&mut self.second.conversion)
            .and(&grads.conversion)
            .for_each(|p, m, v, &g| s.update(p, m, v, g));

        if let (Some(m1), Some(m2)) = (&mut self.first.embedding, &mut self.second.embedding) {
            let zero = Array1::zeros(dim);
            for (id, ((p_row, m_row), v_row)) in params
                .embedding
                .outer_iter_mut()
                .zip(m1.outer_iter_mut())
                .zip(m2.outer_iter_mut())
                .enumerate()
            {
                // rows absent from the batch see a zero gradient
                let g = grads.embedding.get(&(id as u32)).unwrap_or(&zero);
                update_row(&s, p_row, m_row, v_row, g);
            }
        }
        Ok(())
    }
}

fn update_row(
    s: &StepScalars,
    p: ArrayViewMut1<f64>,
    m: ArrayViewMut1<f64>,
    v: ArrayViewMut1<f64>,
    g: &Array1<f64>,
) {
    Zip::from(p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| s.update(p, m, v, g));
}
