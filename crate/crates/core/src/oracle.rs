//! Brute-force validators for the approximations used by the pipeline.
//!
//! Everything here is slow on purpose: leave-one-out retraining, dense
//! inverses, finite differences and direct evaluation of the group-rate
//! algebra. Reports derive [`Serialize`] so tests and tools can consume them
//! as JSON.

use crate::data::{sizes_equal, BiasKind, CellCounts, Dataset, GroupClassStats, RATE_TOLERANCE};
use crate::error::{Error, Result, StageContext};
use crate::influence::{ExplicitInverse, ModelHessian, Solver, DEFAULT_DAMPING};
use crate::linalg;
use crate::metrics::{
    accuracy_difference_from_rates, average_odds_difference, equal_opportunity_difference, GroupRates,
};
use crate::model::{train_erm, Architecture, BatchSize, Curvature, Model, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Absolute slack allowed when checking an inequality between floats.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// Serialises any oracle report as pretty JSON.
pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_json<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(report)? + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Leave-one-out retraining

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooConfig {
    /// Used for the full fit and for every retrain. Forced to full batch.
    /// The default `l2` equals the solver damping, which makes `H + δI` the
    /// exact Hessian of the trained objective and keeps separable data
    /// from having no minimiser.
    pub train: TrainConfig,
    pub solver: Solver,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 0.5,
                epochs: 200_000,
                batch_size: BatchSize::Full,
                seed: 0,
                convergence_tol: 1e-10,
                l2: DEFAULT_DAMPING,
            },
            solver: Solver::explicit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub sample_index: usize,
    /// `−ℐ_loss(zᵢ, test) / n`.
    pub predicted_delta: f64,
    /// Test loss after retraining without `zᵢ`, minus the full-data test loss.
    pub actual_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub results: Vec<LooResult>,
    /// `None` with fewer than two samples or zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub full_fit_grad_norm: f64,
    pub retrains_converged: usize,
}

fn correlation(f: fn(&[f64], &[f64]) -> f64, x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let r = f(x, y);
    r.is_finite().then_some(r)
}

/// Compares influence predictions of the mean test-loss change against exact
/// leave-one-out retraining for the first `k` training samples.
///
/// Logistic regression only. The full fit starts from zeros; each retrain
/// gives sample `i` weight 0 and every other sample `1/n`, and is warm-started
/// at the full-data optimum.
pub fn loo_influence_check(train: &Dataset, test: &Dataset, cfg: &LooConfig, k: usize) -> Result<LooReport> {
    let n = train.len();
    if k > n {
        return Err(Error::Config(format!("asked for {k} leave-one-out samples out of {n}")));
    }
    if test.is_empty() {
        return Err(Error::Config("leave-one-out check needs a nonempty test set".into()));
    }
    cfg.solver.validate()?;
    let train_cfg = TrainConfig {
        batch_size: BatchSize::Full,
        ..cfg.train.clone()
    };
    let init = Model::init(Architecture::Logistic, train.dim(), 0)?;
    let uniform = vec![1.0 / n as f64; n];
    let full = train_erm(&init, train, &uniform, &train_cfg).stage("leave-one-out full fit")?;
    let theta = full.model;
    let base_loss = theta.mean_loss(test)?;

    let g_test = theta.mean_grad(test)?;
    let op = ModelHessian::new(&theta, train, Curvature::Exact);
    let u = cfg.solver.solve(&op, &g_test)?.vector;

    let outcomes: Vec<(LooResult, bool)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut w = uniform.clone();
            w[i] = 0.0;
            let retrained = train_erm(&theta, train, &w, &train_cfg).stage("leave-one-out retrain")?;
            let grad = theta.grad(train.sample(i))?;
            Ok((
                LooResult {
                    sample_index: i,
                    predicted_delta: linalg::dot(&u, &grad) / n as f64,
                    actual_delta: retrained.model.mean_loss(test)? - base_loss,
                },
                retrained.converged,
            ))
        })
        .collect::<Result<_>>()?;

    let results: Vec<LooResult> = outcomes.iter().map(|(r, _)| *r).collect();
    let predicted: Vec<f64> = results.iter().map(|r| r.predicted_delta).collect();
    let actual: Vec<f64> = results.iter().map(|r| r.actual_delta).collect();
    Ok(LooReport {
        pearson: correlation(linalg::pearson, &predicted, &actual),
        spearman: correlation(linalg::spearman, &predicted, &actual),
        full_fit_grad_norm: full.final_grad_norm,
        retrains_converged: outcomes.iter().filter(|(_, c)| *c).count(),
        results,
    })
}

// ---------------------------------------------------------------------------
// Group-rate algebra

/// Assigns group/class statistics to the bias structure whose accuracy bound
/// applies.
///
/// `α ≈ β` gives group size discrepancy when the classes are balanced and
/// class size discrepancy otherwise; `α + β ≈ 1` gives group distribution
/// shift. When both hold, the first reading wins.
pub fn classify_stats(stats: &GroupClassStats) -> Result<BiasKind> {
    let (a, b) = (stats.alpha, stats.beta);
    if (a - b).abs() <= RATE_TOLERANCE {
        let [c0, c1] = stats.class_sizes;
        return Ok(if sizes_equal(c0, c1) {
            BiasKind::GroupSizeDiscrepancy
        } else {
            BiasKind::ClassSizeDiscrepancy
        });
    }
    if (a + b - 1.0).abs() <= RATE_TOLERANCE {
        return Ok(BiasKind::GroupDistributionShift);
    }
    Err(Error::Scenario(format!(
        "alpha={a:.4}, beta={b:.4} match no bias structure (need alpha = beta or alpha + beta = 1)"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub kind: BiasKind,
    pub alpha: f64,
    pub beta: f64,
    pub tpr: [f64; 2],
    pub tnr: [f64; 2],
    /// Accuracy difference through the `α`, `β` rewriting.
    pub ad: f64,
    pub aod: f64,
    pub eod: f64,
    /// Case-specific upper bound on `ad` for exact `α`, `β` structure.
    pub bound: f64,
    /// Extra allowance for `α`, `β` off the exact structure by up to the
    /// scenario tolerance; zero when the structure is exact.
    pub slack: f64,
    pub bound_holds: bool,
    /// Group distribution shift only: the bound without its third term,
    /// valid when the cross rates it compares are equal.
    pub tightened_bound: Option<f64>,
    pub premise_holds: Option<bool>,
    pub tightened_holds: Option<bool>,
    /// Both TPR and TNR equal across groups.
    pub equalized: bool,
    /// When equalized: AOD and EOD vanish and AD is within the bound.
    pub equalized_consistent: Option<bool>,
}

/// Evaluates the accuracy-difference bound implied by equalized rates for
/// the bias structure of `stats`.
pub fn proposition_check(stats: &GroupClassStats, rates: &GroupRates) -> Result<PropositionReport> {
    let kind = classify_stats(stats)?;
    let (a, b) = (stats.alpha, stats.beta);
    let tpr = [rates.tpr(0)?, rates.tpr(1)?];
    let tnr = [rates.tnr(0)?, rates.tnr(1)?];
    let ad = accuracy_difference_from_rates(rates)?;
    let aod = average_odds_difference(rates)?;
    let eod = equal_opportunity_difference(rates)?;
    let dt = (tpr[0] - tpr[1]).abs();
    let dn = (tnr[0] - tnr[1]).abs();
    let cross1 = (tpr[1] - tnr[1]).abs();

    let (bound, slack, tightened, premise) = match kind {
        BiasKind::GroupSizeDiscrepancy | BiasKind::ClassSizeDiscrepancy => {
            (a * dt + (1.0 - a) * dn, (a - b).abs() * cross1, None, None)
        }
        BiasKind::GroupDistributionShift => {
            let m = a.min(1.0 - a);
            let x = if a <= b {
                (tpr[1] - tnr[0]).abs()
            } else {
                (tpr[0] - tnr[1]).abs()
            };
            let head = m * dt + m * dn;
            (
                head + (1.0 - 2.0 * m) * x,
                (1.0 - a - b).abs() * cross1,
                Some(head),
                Some(x <= BOUND_TOLERANCE),
            )
        }
    };
    let within = |bnd: f64| ad <= bnd + slack + BOUND_TOLERANCE;
    let equalized = tpr[0] == tpr[1] && tnr[0] == tnr[1];
    Ok(PropositionReport {
        kind,
        alpha: a,
        beta: b,
        tpr,
        tnr,
        ad,
        aod,
        eod,
        bound,
        slack,
        bound_holds: within(bound),
        tightened_bound: tightened,
        premise_holds: premise,
        tightened_holds: tightened.zip(premise).map(|(t, p)| !p || within(t)),
        equalized,
        equalized_consistent: equalized.then(|| aod == 0.0 && eod == 0.0 && within(bound)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropositionTrials {
    pub kind: BiasKind,
    pub trials: usize,
    pub bound_violations: usize,
    /// Trials drawn under the cross-rate premise (group distribution shift).
    pub premise_trials: usize,
    pub tightened_violations: usize,
}

fn random_cells(kind: BiasKind, rng: &mut ChaCha8Rng) -> CellCounts {
    match kind {
        BiasKind::GroupSizeDiscrepancy => {
            let per_class = rng.random_range(20..2000);
            let minority = rng.random_range(1..per_class / 2);
            CellCounts([[per_class - minority, minority], [per_class - minority, minority]])
        }
        BiasKind::GroupDistributionShift => {
            let per_class = rng.random_range(20..2000);
            // Keep α and β clearly apart so the structure is unambiguous.
            let majority = rng.random_range(per_class * 11 / 20 + 1..per_class);
            let minority = per_class - majority;
            if rng.random_bool(0.5) {
                CellCounts([[majority, minority], [minority, majority]])
            } else {
                CellCounts([[minority, majority], [majority, minority]])
            }
        }
        BiasKind::ClassSizeDiscrepancy => {
            let half0 = rng.random_range(10..500);
            let ratio = rng.random_range(2..6);
            let half1 = half0 * ratio;
            if rng.random_bool(0.5) {
                CellCounts([[half0, half0], [half1, half1]])
            } else {
                CellCounts([[half1, half1], [half0, half0]])
            }
        }
    }
}

/// Draws random exact-structure statistics and uniform rates, counting bound
/// violations. For group distribution shift, every other trial also imposes
/// the cross-rate premise and checks the tightened bound.
pub fn proposition_trials(kind: BiasKind, trials: usize, seed: u64) -> Result<PropositionTrials> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PropositionTrials {
        kind,
        trials,
        bound_violations: 0,
        premise_trials: 0,
        tightened_violations: 0,
    };
    for t in 0..trials {
        let cells = random_cells(kind, &mut rng);
        let stats = GroupClassStats::from_cells(&cells)?;
        let mut tpr: [f64; 2] = [rng.random(), rng.random()];
        let mut tnr: [f64; 2] = [rng.random(), rng.random()];
        let premise = kind == BiasKind::GroupDistributionShift && t % 2 == 1;
        if premise {
            if stats.alpha <= stats.beta {
                tnr[0] = tpr[1];
            } else {
                tpr[0] = tnr[1];
            }
        }
        let report = proposition_check(&stats, &GroupRates::from_values(tpr, tnr, cells)?)?;
        if report.kind != kind {
            return Err(Error::Scenario(format!(
                "drew {kind} statistics classified as {}",
                report.kind
            )));
        }
        out.bound_violations += usize::from(!report.bound_holds);
        if premise {
            out.premise_trials += 1;
            out.tightened_violations += usize::from(report.tightened_holds != Some(true));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// First-order test-loss diagnostic

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBoundDiagnostic {
    /// `‖ε‖₂`.
    pub eps_norm: f64,
    /// `‖∇θ L_test(θ*)‖₂`.
    pub test_grad_norm: f64,
    /// Empirical `γ = n · maxᵢ ‖H⁻¹ ∇ℓ(zᵢ)‖₂`.
    pub param_influence_norm_bound: f64,
    /// `∇L_testᵀ Δθ` with `Δθ = −H⁻¹ Σᵢ εᵢ ∇ℓ(zᵢ)`.
    pub predicted_loss_change: f64,
    /// `L_test(fair) − L_test(erm)`.
    pub actual_loss_change: f64,
    /// `‖Δθ‖₂`.
    pub param_shift_norm: f64,
    /// `‖∇L_test‖ · ‖Δθ‖`, an exact upper bound on the predicted change.
    pub cauchy_schwarz_bound: f64,
    /// `‖∇L_test‖ · γ · ‖ε‖₂ / √n`, which dominates the Cauchy-Schwarz bound.
    pub gamma_bound: f64,
    pub inequality_holds: bool,
}

/// Compares the first-order prediction of the test-loss change caused by
/// reweighting with `eps` against the two trained models.
///
/// Uses a dense factorisation of `H + δI` on `train` at the ERM parameters.
pub fn accuracy_bound_diagnostic(
    erm: &Model,
    fair: &Model,
    train: &Dataset,
    test: &Dataset,
    eps: &[f64],
    damping: f64,
    curvature: Curvature,
) -> Result<AccuracyBoundDiagnostic> {
    if erm.architecture() != fair.architecture() || erm.input_dim() != fair.input_dim() {
        return Err(Error::Config(
            "diagnostic needs two models of the same architecture".into(),
        ));
    }
    erm.check_data(train)?;
    if eps.len() != train.len() {
        return Err(Error::Shape {
            expected: train.len(),
            actual: eps.len(),
            context: "epsilon vector",
        });
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("diagnostic needs nonempty train and test sets".into()));
    }
    let n = train.len() as f64;
    let op = ModelHessian::new(erm, train, curvature);
    let inverse = ExplicitInverse::factorize(&op, damping)?;
    let grads = erm.sample_grads(train)?;
    let max_norm = grads
        .par_iter()
        .map(|g| inverse.solve(g).map(|x| linalg::norm(&x.vector)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut weighted = vec![0.0; erm.num_params()];
    for (g, &e) in grads.iter().zip(eps) {
        linalg::axpy(e, g, &mut weighted);
    }
    let mut shift = inverse.solve(&weighted)?.vector;
    linalg::scale(-1.0, &mut shift);

    let g_test = erm.mean_grad(test)?;
    let predicted = linalg::dot(&g_test, &shift);
    let test_grad_norm = g_test.norm();
    let param_shift_norm = linalg::norm(&shift);
    let eps_norm = linalg::norm(eps);
    let gamma = n * max_norm;
    let cauchy_schwarz_bound = test_grad_norm * param_shift_norm;
    let gamma_bound = test_grad_norm * gamma * eps_norm / n.sqrt();
    let slack = BOUND_TOLERANCE * (1.0 + cauchy_schwarz_bound);
    Ok(AccuracyBoundDiagnostic {
        eps_norm,
        test_grad_norm,
        param_influence_norm_bound: gamma,
        predicted_loss_change: predicted,
        actual_loss_change: fair.mean_loss(test)? - erm.mean_loss(test)?,
        param_shift_norm,
        cauchy_schwarz_bound,
        gamma_bound,
        inequality_holds: predicted.abs() <= cauchy_schwarz_bound + slack
            && cauchy_schwarz_bound <= gamma_bound * (1.0 + 1e-9) + slack,
    })
}

// ---------------------------------------------------------------------------
// Finite differences

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteDifferenceConfig {
    /// Random parameter points, each the model's parameters plus
    /// `perturbation · N(0, I)`.
    pub points: usize,
    pub perturbation: f64,
    pub grad_step: f64,
    pub hvp_step: f64,
    pub grad_tolerance: f64,
    pub hvp_tolerance: f64,
    pub seed: u64,
}

impl Default for FiniteDifferenceConfig {
    fn default() -> Self {
        Self {
            points: 10,
            perturbation: 0.5,
            grad_step: 1e-5,
            hvp_step: 1e-4,
            grad_tolerance: 1e-5,
            hvp_tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceReport {
    pub architecture: Architecture,
    pub num_params: usize,
    pub points: usize,
    pub max_grad_rel_err: f64,
    pub max_hvp_rel_err: f64,
    pub grad_passed: bool,
    pub hvp_passed: bool,
}

impl FiniteDifferenceReport {
    pub fn passed(&self) -> bool {
        self.grad_passed && self.hvp_passed
    }
}

/// Checks the analytic mean-loss gradient and exact Hessian-vector product
/// against central differences at random parameter points.
pub fn finite_difference_suite(
    model: &Model,
    data: &Dataset,
    cfg: &FiniteDifferenceConfig,
) -> Result<FiniteDifferenceReport> {
    model.check_data(data)?;
    if data.is_empty() {
        return Err(Error::Config("finite differences need a nonempty dataset".into()));
    }
    let p = model.num_params();
    let n = data.len();
    let uniform = vec![1.0 / n as f64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let mut max_grad: f64 = 0.0;
    let mut max_hvp: f64 = 0.0;
    for _ in 0..cfg.points {
        let mut theta = model.params().to_vec();
        linalg::axpy(cfg.perturbation, &normal(p), &mut theta);
        let at = model.with_new_params(theta.clone());
        let analytic = at.mean_grad(data)?;
        let numeric: Vec<f64> = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += cfg.grad_step;
                minus[j] -= cfg.grad_step;
                let lp = model.with_new_params(plus).mean_loss(data)?;
                let lm = model.with_new_params(minus).mean_loss(data)?;
                Ok((lp - lm) / (2.0 * cfg.grad_step))
            })
            .collect::<Result<_>>()?;
        max_grad = max_grad.max(linalg::relative_error(&numeric, &analytic));

        let v = normal(p);
        let hv = at.hvp(data, &uniform, &v)?;
        let mut plus = theta.clone();
        let mut minus = theta;
        linalg::axpy(cfg.hvp_step, &v, &mut plus);
        linalg::axpy(-cfg.hvp_step, &v, &mut minus);
        let gp = model.with_new_params(plus).mean_grad(data)?;
        let gm = model.with_new_params(minus).mean_grad(data)?;
        let mut fd = linalg::sub(&gp, &gm);
        linalg::scale(1.0 / (2.0 * cfg.hvp_step), &mut fd);
        max_hvp = max_hvp.max(linalg::relative_error(&fd, &hv));
    }
    Ok(FiniteDifferenceReport {
        architecture: model.architecture(),
        num_params: p,
        points: cfg.points,
        max_grad_rel_err: max_grad,
        max_hvp_rel_err: max_hvp,
        grad_passed: max_grad <= cfg.grad_tolerance,
        hvp_passed: max_hvp <= cfg.hvp_tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cells, FeatureSpec};

    fn rates(tpr: [f64; 2], tnr: [f64; 2], cells: CellCounts) -> GroupRates {
        GroupRates::from_values(tpr, tnr, cells).unwrap()
    }

    #[test]
    fn worked_bias_one_example_is_tight() {
        // Equal groups, three positives in ten for both.
        let cells = CellCounts([[70, 70], [30, 30]]);
        let stats = GroupClassStats::from_cells(&cells).unwrap();
        let r = proposition_check(&stats, &rates([0.9, 0.8], [0.85, 0.85], cells)).unwrap();
        assert!((r.ad - 0.03).abs() < 1e-12);
        assert!((r.bound - 0.03).abs() < 1e-12);
        assert!(r.bound_holds);
        assert_eq!(r.slack, 0.0);
    }

    #[test]
    fn all_rates_equal_give_zero_metrics() {
        for cells in [
            CellCounts([[50, 10], [50, 10]]),
            CellCounts([[85, 15], [15, 85]]),
            CellCounts([[20, 20], [80, 80]]),
        ] {
            let stats = GroupClassStats::from_cells(&cells).unwrap();
            let r = proposition_check(&stats, &rates([0.7; 2], [0.7; 2], cells)).unwrap();
            assert_eq!((r.ad, r.aod, r.eod), (0.0, 0.0, 0.0));
            assert_eq!(r.equalized_consistent, Some(true));
        }
    }

    #[test]
    fn classification() {
        let stats = |c| GroupClassStats::from_cells(&CellCounts(c)).unwrap();
        assert_eq!(
            classify_stats(&stats([[85, 15], [85, 15]])).unwrap(),
            BiasKind::GroupSizeDiscrepancy
        );
        assert_eq!(
            classify_stats(&stats([[85, 15], [15, 85]])).unwrap(),
            BiasKind::GroupDistributionShift
        );
        assert_eq!(
            classify_stats(&stats([[20, 20], [80, 80]])).unwrap(),
            BiasKind::ClassSizeDiscrepancy
        );
        assert!(matches!(
            classify_stats(&stats([[50, 10], [20, 40]])),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn distribution_shift_bound_uses_the_right_cross_term() {
        let cells = CellCounts([[15, 85], [85, 15]]);
        let stats = GroupClassStats::from_cells(&cells).unwrap();
        assert!(stats.alpha > stats.beta);
        let r = proposition_check(&stats, &rates([0.9, 0.6], [0.7, 0.8], cells)).unwrap();
        let m = 0.15;
        let expected = m * 0.3 + m * 0.1 + (1.0 - 2.0 * m) * (0.9f64 - 0.8).abs();
        assert!((r.bound - expected).abs() < 1e-12);
        assert!(r.bound_holds);
    }

    #[test]
    fn random_trials_never_violate() {
        for kind in BiasKind::ALL {
            let t = proposition_trials(kind, 300, 7).unwrap();
            assert_eq!(t.bound_violations, 0, "{kind}");
            assert_eq!(t.tightened_violations, 0, "{kind}");
        }
    }

    fn small_problem(seed: u64) -> (Dataset, Dataset) {
        let spec = FeatureSpec::standard(4);
        (
            generate_cells(&CellCounts([[15, 10], [10, 15]]), &spec, seed).unwrap(),
            generate_cells(&CellCounts([[20, 20], [20, 20]]), &spec, seed + 1).unwrap(),
        )
    }

    #[test]
    fn loo_with_zero_samples_is_empty() {
        let (train, test) = small_problem(1);
        let r = loo_influence_check(&train, &test, &LooConfig::default(), 0).unwrap();
        assert!(r.results.is_empty());
        assert_eq!(r.pearson, None);
        assert!(matches!(
            loo_influence_check(&train, &test, &LooConfig::default(), train.len() + 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loo_tracks_influence_on_a_small_problem() {
        let (train, test) = small_problem(2);
        let r = loo_influence_check(&train, &test, &LooConfig::default(), train.len()).unwrap();
        assert_eq!(r.retrains_converged, train.len());
        assert!(r.pearson.unwrap() > 0.9, "{:?}", r.pearson);
    }

    #[test]
    fn diagnostic_with_zero_eps_predicts_nothing() {
        let (train, test) = small_problem(3);
        let m = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let eps = vec![0.0; train.len()];
        let d = accuracy_bound_diagnostic(&m, &m, &train, &test, &eps, 0.01, Curvature::Exact).unwrap();
        assert_eq!(d.predicted_loss_change, 0.0);
        assert_eq!(d.actual_loss_change, 0.0);
        assert!(d.inequality_holds);
    }

    #[test]
    fn finite_differences_pass_for_both_architectures() {
        let (train, _) = small_problem(4);
        for arch in [Architecture::Logistic, Architecture::Mlp { hidden: 6 }] {
            let m = Model::init(arch, 4, 1).unwrap();
            let r = finite_difference_suite(&m, &train, &FiniteDifferenceConfig::default()).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn reports_serialise() {
        let cells = CellCounts([[70, 70], [30, 30]]);
        let stats = GroupClassStats::from_cells(&cells).unwrap();
        let r = proposition_check(&stats, &rates([0.9, 0.8], [0.85, 0.85], cells)).unwrap();
        let json = to_json(&r).unwrap();
        let back: PropositionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
