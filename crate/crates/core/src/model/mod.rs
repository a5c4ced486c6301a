//! Differentiable binary classifiers.
//!
//! A [`Model`] maps a feature vector to a logit `f(x; θ)`. The positive-class
//! probability is `σ(f)` and the per-sample loss is binary cross-entropy.
//! Per-sample gradients and Hessian-vector products are computed analytically.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use train::{train_erm, BatchSize, TrainConfig, TrainOutcome};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Logistic,
    /// One tanh hidden layer followed by a linear logit.
    Mlp {
        hidden: usize,
    },
}

impl Architecture {
    pub const DEFAULT_MLP: Architecture = Architecture::Mlp { hidden: 64 };

    pub fn num_params(&self, input_dim: usize) -> usize {
        match *self {
            Architecture::Logistic => input_dim + 1,
            Architecture::Mlp { hidden } => hidden * (input_dim + 2) + 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Logistic => "logistic",
            Architecture::Mlp { .. } => "mlp",
        }
    }
}

/// Which second-order object a Hessian-vector product applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Curvature {
    /// The true Hessian of the loss.
    Exact,
    /// `p(1-p) ∇f ∇fᵀ`, positive semidefinite. Identical to `Exact` for
    /// logistic regression.
    #[default]
    GaussNewton,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: Architecture,
    input_dim: usize,
    params: ParameterVector,
}

impl Model {
    /// Fresh model. Logistic regression starts at zero; MLP weights are drawn
    /// from scaled normals seeded by `seed`.
    pub fn init(arch: Architecture, input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let params = match arch {
            Architecture::Logistic => vec![0.0; input_dim + 1],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Config("MLP hidden width must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w1 = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
                let w2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid std");
                let mut p = Vec::with_capacity(arch.num_params(input_dim));
                p.extend((0..hidden * input_dim).map(|_| w1.sample(&mut rng)));
                p.extend(std::iter::repeat_n(0.0, hidden));
                p.extend((0..hidden).map(|_| w2.sample(&mut rng)));
                p.push(0.0);
                p
            }
        };
        Ok(Self {
            arch,
            input_dim,
            params: params.into(),
        })
    }

    pub fn with_params(arch: Architecture, input_dim: usize, params: impl Into<ParameterVector>) -> Result<Self> {
        let params = params.into();
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::Config("MLP hidden width must be positive".into()));
        }
        let expected = arch.num_params(input_dim);
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: params.len(),
                context: "parameter vector",
            });
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(Self {
            arch,
            input_dim,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    /// Copy of the model with different parameters of the same length.
    pub fn with_new_params(&self, params: impl Into<ParameterVector>) -> Self {
        let params = params.into();
        assert_eq!(params.len(), self.params.len(), "parameter length changed");
        Self {
            arch: self.arch,
            input_dim: self.input_dim,
            params,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                actual: x.len(),
                context: "feature vector",
            });
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                actual: data.dim(),
                context: "dataset feature dimension",
            });
        }
        Ok(())
    }

    fn check_vector(&self, v: &[f64], context: &'static str) -> Result<()> {
        if v.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                actual: v.len(),
                context,
            });
        }
        Ok(())
    }

    /// The raw score `f(x; θ)`; unchecked.
    pub(crate) fn logit_unchecked(&self, x: &[f64]) -> f64 {
        match self.arch {
            Architecture::Logistic => {
                let d = self.input_dim;
                linalg::dot(&self.params[..d], x) + self.params[d]
            }
            Architecture::Mlp { hidden } => {
                let layout = MlpLayout::new(self.input_dim, hidden);
                let p = &self.params;
                let mut f = p[layout.b2];
                for k in 0..hidden {
                    let row = &p[layout.w1 + k * self.input_dim..][..self.input_dim];
                    let h = (linalg::dot(row, x) + p[layout.b1 + k]).tanh();
                    f += p[layout.w2 + k] * h;
                }
                f
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.logit_unchecked(x))
    }

    /// Adds `scale * ∇_θ f(x)` into `out` and returns `f(x)`.
    pub(crate) fn accumulate_logit_grad(&self, x: &[f64], scale: f64, out: &mut [f64]) -> f64 {
        match self.arch {
            Architecture::Logistic => {
                let d = self.input_dim;
                linalg::axpy(scale, x, &mut out[..d]);
                out[d] += scale;
                self.logit_unchecked(x)
            }
            Architecture::Mlp { hidden } => {
                let d = self.input_dim;
                let layout = MlpLayout::new(d, hidden);
                let p = &self.params;
                let mut f = p[layout.b2];
                for k in 0..hidden {
                    let row = &p[layout.w1 + k * d..][..d];
                    let h = (linalg::dot(row, x) + p[layout.b1 + k]).tanh();
                    f += p[layout.w2 + k] * h;
                    let back = scale * p[layout.w2 + k] * (1.0 - h * h);
                    linalg::axpy(back, x, &mut out[layout.w1 + k * d..][..d]);
                    out[layout.b1 + k] += back;
                    out[layout.w2 + k] += scale * h;
                }
                out[layout.b2] += scale;
                f
            }
        }
    }

    /// `∇_θ f(x)`.
    pub fn logit_grad(&self, x: &[f64]) -> Result<ParameterVector> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_logit_grad(x, 1.0, &mut g);
        Ok(g.into())
    }

    /// Adds `scale * (∇²_θ f(x)) v` into `out`. Zero for logistic regression.
    fn accumulate_logit_hvp(&self, x: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let Architecture::Mlp { hidden } = self.arch else {
            return;
        };
        let d = self.input_dim;
        let layout = MlpLayout::new(d, hidden);
        let p = &self.params;
        for k in 0..hidden {
            let row = &p[layout.w1 + k * d..][..d];
            let h = (linalg::dot(row, x) + p[layout.b1 + k]).tanh();
            let dh = 1.0 - h * h;
            // Directional derivative of the pre-activation along v.
            let r_a = linalg::dot(&v[layout.w1 + k * d..][..d], x) + v[layout.b1 + k];
            let r_h = dh * r_a;
            let w2 = p[layout.w2 + k];
            let r_back = v[layout.w2 + k] * dh - 2.0 * w2 * h * r_h;
            linalg::axpy(scale * r_back, x, &mut out[layout.w1 + k * d..][..d]);
            out[layout.b1 + k] += scale * r_back;
            out[layout.w2 + k] += scale * r_h;
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Hard decision; a probability of exactly 0.5 maps to label 1.
    pub fn classify(&self, x: &[f64]) -> Result<u8> {
        self.predict_proba(x).map(|p| u8::from(p >= 0.5))
    }

    pub(crate) fn classify_unchecked(&self, x: &[f64]) -> u8 {
        u8::from(sigmoid(self.logit_unchecked(x)) >= 0.5)
    }

    pub fn loss(&self, z: &Sample) -> Result<f64> {
        self.check_input(&z.features)?;
        Ok(self.loss_unchecked(z))
    }

    pub(crate) fn loss_unchecked(&self, z: &Sample) -> f64 {
        bce(sigmoid(self.logit_unchecked(&z.features)), z.label)
    }

    /// Adds `weight * ∇ℓ(z)` into `out`, returns `ℓ(z)`.
    ///
    /// The gradient is `(σ(f) − y) ∇f`, the derivative of the unclamped
    /// cross-entropy; it agrees with the clamped loss wherever the clamp is
    /// inactive.
    pub(crate) fn accumulate_grad(&self, z: &Sample, weight: f64, out: &mut [f64]) -> f64 {
        // Logit first so the residual is known before back-propagating.
        let f = self.logit_unchecked(&z.features);
        let p = sigmoid(f);
        let residual = p - f64::from(z.label);
        if weight != 0.0 {
            self.accumulate_logit_grad(&z.features, weight * residual, out);
        }
        bce(p, z.label)
    }

    pub fn grad(&self, z: &Sample) -> Result<ParameterVector> {
        self.check_input(&z.features)?;
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_grad(z, 1.0, &mut g);
        Ok(g.into())
    }

    /// Adds `weight * ∇²ℓ(z) v` (or its Gauss-Newton part) into `out`.
    pub(crate) fn accumulate_sample_hvp(
        &self,
        z: &Sample,
        v: &[f64],
        weight: f64,
        curvature: Curvature,
        out: &mut [f64],
    ) {
        let mut jac = vec![0.0; self.num_params()];
        let f = self.accumulate_logit_grad(&z.features, 1.0, &mut jac);
        let p = sigmoid(f);
        let jv = linalg::dot(&jac, v);
        linalg::axpy(weight * p * (1.0 - p) * jv, &jac, out);
        if curvature == Curvature::Exact {
            let residual = p - f64::from(z.label);
            self.accumulate_logit_hvp(&z.features, v, weight * residual, out);
        }
    }

    fn check_weights(&self, data: &Dataset, weights: &[f64]) -> Result<()> {
        self.check_data(data)?;
        if weights.len() != data.len() {
            return Err(Error::Shape {
                expected: data.len(),
                actual: weights.len(),
                context: "sample weights",
            });
        }
        Ok(())
    }

    /// `Σ wᵢ ℓ(zᵢ)`.
    pub fn weighted_loss(&self, data: &Dataset, weights: &[f64]) -> Result<f64> {
        self.check_weights(data, weights)?;
        Ok(data
            .samples()
            .iter()
            .zip(weights)
            .map(|(z, w)| w * self.loss_unchecked(z))
            .sum())
    }

    /// Mean loss over a dataset.
    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        if data.is_empty() {
            return Err(Error::UndefinedMetric("mean loss of an empty dataset".into()));
        }
        let total: f64 = data.samples().iter().map(|z| self.loss_unchecked(z)).sum();
        Ok(total / data.len() as f64)
    }

    /// `(Σ wᵢ ℓ(zᵢ), Σ wᵢ ∇ℓ(zᵢ))`.
    pub fn weighted_loss_grad(&self, data: &Dataset, weights: &[f64]) -> Result<(f64, ParameterVector)> {
        self.check_weights(data, weights)?;
        let mut g = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        for (z, &w) in data.samples().iter().zip(weights) {
            loss += w * self.accumulate_grad(z, w, &mut g);
        }
        Ok((loss, g.into()))
    }

    /// Gradient of the mean loss over a dataset.
    pub fn mean_grad(&self, data: &Dataset) -> Result<ParameterVector> {
        if data.is_empty() {
            return Err(Error::UndefinedMetric("mean gradient of an empty dataset".into()));
        }
        let w = vec![1.0 / data.len() as f64; data.len()];
        Ok(self.weighted_loss_grad(data, &w)?.1)
    }

    /// Per-sample loss gradients, in row order.
    pub fn sample_grads(&self, data: &Dataset) -> Result<Vec<ParameterVector>> {
        self.check_data(data)?;
        Ok(data
            .samples()
            .iter()
            .map(|z| {
                let mut g = vec![0.0; self.num_params()];
                self.accumulate_grad(z, 1.0, &mut g);
                g.into()
            })
            .collect())
    }

    /// `Σ wᵢ ∇²ℓ(zᵢ) v`, the exact Hessian-vector product of the weighted
    /// objective. For the MLP the second-order term is the directional
    /// derivative of the back-propagated gradient along `v`.
    pub fn hvp(&self, data: &Dataset, weights: &[f64], v: &[f64]) -> Result<ParameterVector> {
        self.curvature_vp(data, weights, v, Curvature::Exact)
    }

    /// Gauss-Newton-vector product `Σ wᵢ pᵢ(1−pᵢ) ∇fᵢ ∇fᵢᵀ v`.
    pub fn ggn_vp(&self, data: &Dataset, weights: &[f64], v: &[f64]) -> Result<ParameterVector> {
        self.curvature_vp(data, weights, v, Curvature::GaussNewton)
    }

    pub fn curvature_vp(
        &self,
        data: &Dataset,
        weights: &[f64],
        v: &[f64],
        curvature: Curvature,
    ) -> Result<ParameterVector> {
        self.check_weights(data, weights)?;
        self.check_vector(v, "Hessian-vector product direction")?;
        let mut out = vec![0.0; self.num_params()];
        for (z, &w) in data.samples().iter().zip(weights) {
            if w != 0.0 {
                self.accumulate_sample_hvp(z, v, w, curvature, &mut out);
            }
        }
        Ok(out.into())
    }
}

#[derive(Debug, Clone, Copy)]
struct MlpLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl MlpLayout {
    fn new(input_dim: usize, hidden: usize) -> Self {
        let w1 = 0;
        let b1 = hidden * input_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        Self { w1, b1, w2, b2 }
    }
}
