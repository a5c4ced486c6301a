use super::Model;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Datasets up to this size train full-batch under [`BatchSize::Auto`].
pub const FULL_BATCH_LIMIT: usize = 10_000;
pub const DEFAULT_MINI_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Full,
    Mini(usize),
    /// Full batch for small datasets, mini-batches of 256 otherwise.
    #[default]
    Auto,
}

impl BatchSize {
    fn resolve(self, n: usize) -> Option<usize> {
        match self {
            BatchSize::Full => None,
            BatchSize::Mini(b) => Some(b.clamp(1, n.max(1))),
            BatchSize::Auto if n <= FULL_BATCH_LIMIT => None,
            BatchSize::Auto => Some(DEFAULT_MINI_BATCH),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    /// Seeds mini-batch shuffling only; initialisation is the caller's.
    pub seed: u64,
    /// Stop once the full-objective gradient norm drops to this value.
    pub convergence_tol: f64,
    /// Coefficient of `½‖θ‖²` added to the weighted loss.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 2000,
            batch_size: BatchSize::Auto,
            seed: 0,
            convergence_tol: 1e-6,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence tolerance must be nonnegative".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config("l2 coefficient must be nonnegative".into()));
        }
        if let BatchSize::Mini(0) = self.batch_size {
            return Err(Error::Config("mini-batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: Model,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub epochs_run: usize,
    /// Full objective recorded at the start of every epoch.
    pub loss_trajectory: Vec<f64>,
}

/// Full objective `Σ wᵢ ℓᵢ + ½ l2 ‖θ‖²` and its gradient.
fn objective(model: &Model, data: &Dataset, weights: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
    let (mut loss, grad) = model.weighted_loss_grad(data, weights)?;
    let mut grad = grad.into_inner();
    if l2 > 0.0 {
        loss += 0.5 * l2 * linalg::dot(model.params(), model.params());
        linalg::axpy(l2, model.params(), &mut grad);
    }
    Ok((loss, grad))
}

/// Minimises the weighted empirical risk `Σ wᵢ ℓ(zᵢ; θ)` by gradient descent
/// starting from `init`.
///
/// Mini-batch steps use the unbiased estimate `(n/|B|) Σ_{i∈B} wᵢ ∇ℓᵢ`.
/// Identical inputs give bitwise identical outputs.
pub fn train_erm(init: &Model, data: &Dataset, weights: &[f64], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    init.check_data(data)?;
    if weights.len() != data.len() {
        return Err(Error::Shape {
            expected: data.len(),
            actual: weights.len(),
            context: "sample weights",
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config("sample weights must be finite and nonnegative".into()));
    }

    let n = data.len();
    let batch = config.batch_size.resolve(n);
    let mut model = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trajectory = Vec::with_capacity(config.epochs.min(100_000));
    let mut converged = false;
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        let (loss, grad) = objective(&model, data, weights, config.l2)?;
        let params_finite = model.params().iter().all(|p| p.is_finite());
        if !params_finite || !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        trajectory.push(loss);
        if linalg::norm(&grad) <= config.convergence_tol {
            converged = true;
            break;
        }
        match batch {
            None => linalg::axpy(-config.learning_rate, &grad, model.params_mut()),
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    let scale = n as f64 / chunk.len() as f64;
                    let mut g = vec![0.0; model.num_params()];
                    for &i in chunk {
                        model.accumulate_grad(data.sample(i), scale * weights[i], &mut g);
                    }
                    if config.l2 > 0.0 {
                        linalg::axpy(config.l2, model.params(), &mut g);
                    }
                    linalg::axpy(-config.learning_rate, &g, model.params_mut());
                }
            }
        }
        epochs_run = epoch + 1;
    }

    let (loss, grad) = objective(&model, data, weights, config.l2)?;
    if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { epoch: epochs_run });
    }
    let final_grad_norm = linalg::norm(&grad);
    converged |= final_grad_norm <= config.convergence_tol;
    Ok(TrainOutcome {
        model,
        final_grad_norm,
        converged,
        epochs_run,
        loss_trajectory: trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cells, CellCounts, FeatureSpec, Sample};
    use crate::model::Architecture;

    fn data(seed: u64) -> Dataset {
        generate_cells(&CellCounts([[60, 40], [30, 50]]), &FeatureSpec::standard(4), seed).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn logistic_converges_and_decreases() {
        let d = data(1);
        let init = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let cfg = TrainConfig {
            convergence_tol: 1e-8,
            epochs: 20_000,
            ..TrainConfig::default()
        };
        let out = train_erm(&init, &d, &uniform(d.len()), &cfg).unwrap();
        assert!(out.converged);
        assert!(out.final_grad_norm <= 1e-8);
        assert!(out.loss_trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn deterministic_mini_batch() {
        let d = data(2);
        let init = Model::init(Architecture::Mlp { hidden: 8 }, 4, 3).unwrap();
        let cfg = TrainConfig {
            batch_size: BatchSize::Mini(32),
            epochs: 30,
            learning_rate: 0.1,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_erm(&init, &d, &uniform(d.len()), &cfg).unwrap();
        let b = train_erm(&init, &d, &uniform(d.len()), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_sample_is_ignored() {
        let d = data(3);
        let n = d.len();
        let mut w = uniform(n);
        w[0] = 0.0;
        let init = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let with = train_erm(&init, &d, &w, &cfg).unwrap();
        let kept: Vec<usize> = (1..n).collect();
        let without = train_erm(&init, &d.subset(&kept), &w[1..], &cfg).unwrap();
        let diff = linalg::norm(&linalg::sub(with.model.params(), without.model.params()));
        assert!(diff <= 1e-12, "{diff}");
    }

    #[test]
    fn divergence_is_reported() {
        let samples = vec![Sample::new(vec![1e200], 1), Sample::new(vec![-1e200], 0)];
        let d = Dataset::new(1, samples, None).unwrap();
        let init = Model::with_params(Architecture::Logistic, 1, vec![0.0, 0.0]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 10,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_erm(&init, &d, &[0.5, 0.5], &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn bad_inputs() {
        let d = data(4);
        let init = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train_erm(&init, &d, &[1.0], &cfg), Err(Error::Shape { .. })));
        let mut w = uniform(d.len());
        w[3] = -1.0;
        assert!(matches!(train_erm(&init, &d, &w, &cfg), Err(Error::Config(_))));
        let wrong = Model::init(Architecture::Logistic, 3, 0).unwrap();
        assert!(train_erm(&wrong, &d, &uniform(d.len()), &cfg).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = data(5);
        let init = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_erm(&init, &d, &uniform(d.len()), &cfg).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.epochs_run, 0);
    }
}
