//! The two-stage reweighting pipeline.
//!
//! 1. Train a classifier by plain empirical risk minimisation.
//! 2. Compute per-sample influence coefficients on the soft TPR and TNR gaps
//!    of the annotated validation set.
//! 3. Solve for the weight perturbation `ε*`.
//! 4. Retrain with weights `max(0, 1/n + ε*ᵢ)`.

use crate::data::{subsample_validation, Dataset};
use crate::error::{Error, Result, StageContext};
use crate::influence::{influence_coefficients, InfluenceCoefficients, Solver};
use crate::linalg;
use crate::metrics::{metric_discrepancy, FairnessReport, RateKind, SoftMetricConfig};
use crate::model::{train_erm, Architecture, Curvature, Model, TrainConfig, TrainOutcome};
use crate::reweight::{apply_weights, EpsilonProblem, EpsilonVector, WeightPolicy, WeightVector, DEFAULT_LAMBDA};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairIfConfig {
    pub architecture: Architecture,
    /// Stage-one training; its seed also initialises the stage-one model.
    pub stage1: TrainConfig,
    /// Stage-two training; its seed also initialises the stage-two model
    /// unless `warm_start` is set.
    pub stage2: TrainConfig,
    /// Start stage two from the stage-one parameters.
    pub warm_start: bool,
    pub solver: Solver,
    pub curvature: Curvature,
    pub soft: SoftMetricConfig,
    pub lambda: f64,
    pub weight_policy: WeightPolicy,
    /// Weights of the TPR and TNR gap terms in the ε objective.
    pub channel_weights: [f64; 2],
    /// Length of the up- and down-weighted sample lists in the report.
    pub top_k: usize,
}

impl Default for FairIfConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Logistic,
            stage1: TrainConfig::default(),
            stage2: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            warm_start: false,
            solver: Solver::default(),
            curvature: Curvature::default(),
            soft: SoftMetricConfig::default(),
            lambda: DEFAULT_LAMBDA,
            weight_policy: WeightPolicy::default(),
            channel_weights: [1.0, 1.0],
            top_k: 10,
        }
    }
}

impl FairIfConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.soft.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.channel_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("channel weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Fairness of one model on each available split. Splits without group
/// attributes have no report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReports {
    pub train: Option<FairnessReport>,
    pub val: FairnessReport,
    pub test: Option<FairnessReport>,
}

impl SplitReports {
    pub fn evaluate(model: &Model, train: &Dataset, val: &Dataset, test: Option<&Dataset>) -> Result<Self> {
        Ok(Self {
            train: train
                .has_groups()
                .then(|| FairnessReport::evaluate(model, train))
                .transpose()?,
            val: FairnessReport::evaluate(model, val)?,
            test: test.map(|t| FairnessReport::evaluate(model, t)).transpose()?,
        })
    }

    /// The test report when available, otherwise the validation report.
    pub fn headline(&self) -> &FairnessReport {
        self.test.as_ref().unwrap_or(&self.val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2_norm: f64,
    /// Samples whose effective weight was clamped to zero.
    pub clamped: usize,
}

impl EpsilonStats {
    fn new(eps: &[f64], weights: &WeightVector) -> Self {
        Self {
            min: eps.iter().copied().fold(f64::INFINITY, f64::min),
            max: eps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: linalg::mean(eps),
            l2_norm: linalg::norm(eps),
            clamped: weights.zero_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub index: usize,
    pub epsilon: f64,
    pub weight: f64,
}

/// The `k` largest positive and the `k` most negative perturbations, each
/// sorted by `|ε|` descending; ties keep index order.
pub fn extreme_weights(eps: &[f64], weights: &[f64], k: usize) -> (Vec<WeightedSample>, Vec<WeightedSample>) {
    let entry = |i: usize| WeightedSample {
        index: i,
        epsilon: eps[i],
        weight: weights[i],
    };
    let mut up: Vec<usize> = (0..eps.len()).filter(|&i| eps[i] > 0.0).collect();
    let mut down: Vec<usize> = (0..eps.len()).filter(|&i| eps[i] < 0.0).collect();
    up.sort_by(|&a, &b| eps[b].abs().total_cmp(&eps[a].abs()).then(a.cmp(&b)));
    down.sort_by(|&a, &b| eps[b].abs().total_cmp(&eps[a].abs()).then(a.cmp(&b)));
    (
        up.into_iter().take(k).map(entry).collect(),
        down.into_iter().take(k).map(entry).collect(),
    )
}

/// Wall-clock seconds per stage. Excluded from determinism comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stage1: f64,
    pub influence: f64,
    pub solve: f64,
    pub stage2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub erm: SplitReports,
    pub fairif: SplitReports,
    pub lambda: f64,
    /// Soft gaps `F(group 0) − F(group 1)` of the stage-one model on the
    /// validation set, TPR then TNR.
    pub gaps: [f64; 2],
    /// First-order prediction of the gaps after reweighting.
    pub predicted_residuals: [f64; 2],
    /// Soft gaps of the stage-two model on the validation set.
    pub stage2_gaps: [f64; 2],
    pub objective_value: f64,
    pub epsilon_stats: EpsilonStats,
    pub top_upweighted: Vec<WeightedSample>,
    pub top_downweighted: Vec<WeightedSample>,
    pub stage1_converged: bool,
    pub stage2_converged: bool,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

impl RunReport {
    /// Copy with timings zeroed, for bitwise comparisons between runs.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub const TABLE_HEADER: &'static str = "arm,accuracy,acc_group0,acc_group1,ad,aod,eod,tpr0,tpr1,tnr0,tnr1";

    /// One CSV line per arm using the headline split.
    pub fn table_rows(&self) -> [String; 2] {
        [
            table_row("erm", self.erm.headline()),
            table_row("fairif", self.fairif.headline()),
        ]
    }
}

/// A [`RunReport::TABLE_HEADER`] line for one arm.
pub fn table_row(arm: &str, r: &FairnessReport) -> String {
    format!(
        "{arm},{},{},{},{},{},{},{},{},{},{}",
        r.accuracy, r.acc_group0, r.acc_group1, r.ad, r.aod, r.eod, r.tpr0, r.tpr1, r.tnr0, r.tnr1
    )
}

/// Everything a FairIF run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FairIfOutcome {
    pub erm_model: Model,
    pub fair_model: Model,
    pub coefficients: InfluenceCoefficients,
    pub epsilon: EpsilonVector,
    pub weights: WeightVector,
    pub report: RunReport,
}

fn check_inputs(train: &Dataset, val: &Dataset, test: Option<&Dataset>) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if !val.has_groups() {
        return Err(Error::Config("validation set needs group attributes".into()));
    }
    for (name, d) in [("validation", Some(val)), ("test", test)] {
        if let Some(d) = d {
            if d.dim() != train.dim() {
                return Err(Error::Config(format!(
                    "{name} set has {} features, training set has {}",
                    d.dim(),
                    train.dim()
                )));
            }
        }
    }
    if test.is_some_and(|t| !t.has_groups()) {
        return Err(Error::Config("test set needs group attributes".into()));
    }
    Ok(())
}

/// Stage one alone: plain ERM with uniform weights `1/n`.
pub fn train_stage_one(train: &Dataset, cfg: &FairIfConfig) -> Result<TrainOutcome> {
    let init = Model::init(cfg.architecture, train.dim(), cfg.stage1.seed)?;
    train_erm(&init, train, WeightVector::uniform(train.len()).as_slice(), &cfg.stage1)
}

/// Runs both stages and reports on every split.
pub fn fairif_train(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &FairIfConfig,
) -> Result<FairIfOutcome> {
    cfg.validate()?;
    check_inputs(train, val, test)?;
    let start = Instant::now();
    let stage1 = train_stage_one(train, cfg).stage("stage one")?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut out = fairif_from_stage_one(&stage1, train, val, test, cfg)?;
    out.report.timings.stage1 = elapsed;
    out.report.timings.total += elapsed;
    Ok(out)
}

/// Stages two onward, reusing a stage-one result.
pub fn fairif_from_stage_one(
    stage1: &TrainOutcome,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &FairIfConfig,
) -> Result<FairIfOutcome> {
    cfg.validate()?;
    check_inputs(train, val, test)?;
    let mut warnings = Vec::new();
    let mut timings = Timings::default();
    let erm_model = stage1.model.clone();
    if !stage1.converged {
        warnings.push(format!(
            "stage one stopped after {} epochs with gradient norm {:.3e}",
            stage1.epochs_run, stage1.final_grad_norm
        ));
    }

    let t = Instant::now();
    let coefficients =
        influence_coefficients(&erm_model, train, val, &cfg.soft, &cfg.solver, cfg.curvature).stage("influence")?;
    timings.influence = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let problem = EpsilonProblem::from_coefficients(&coefficients, cfg.channel_weights);
    let epsilon = problem.solve(cfg.lambda).stage("reweight")?;
    let predicted_residuals = problem.residuals(&epsilon.eps);
    let weights = apply_weights(&epsilon.eps, cfg.weight_policy).stage("reweight")?;
    timings.solve = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let init = if cfg.warm_start {
        erm_model.clone()
    } else {
        Model::init(cfg.architecture, train.dim(), cfg.stage2.seed).stage("stage two")?
    };
    let stage2 = train_erm(&init, train, weights.as_slice(), &cfg.stage2).stage("stage two")?;
    timings.stage2 = t.elapsed().as_secs_f64();
    if !stage2.converged {
        warnings.push(format!(
            "stage two stopped after {} epochs with gradient norm {:.3e}",
            stage2.epochs_run, stage2.final_grad_norm
        ));
    }
    let fair_model = stage2.model;

    let erm = SplitReports::evaluate(&erm_model, train, val, test).stage("evaluation")?;
    let fairif = SplitReports::evaluate(&fair_model, train, val, test).stage("evaluation")?;
    let mut stage2_gaps = [0.0; 2];
    for (k, which) in RateKind::BOTH.into_iter().enumerate() {
        stage2_gaps[k] = metric_discrepancy(&fair_model, val, which, &cfg.soft).stage("evaluation")?;
    }
    let (top_upweighted, top_downweighted) = extreme_weights(&epsilon.eps, weights.as_slice(), cfg.top_k);
    timings.total = timings.influence + timings.solve + timings.stage2;

    let report = RunReport {
        schema: REPORT_SCHEMA,
        erm,
        fairif,
        lambda: epsilon.lambda,
        gaps: [coefficients.a_tpr, coefficients.a_tnr],
        predicted_residuals,
        stage2_gaps,
        objective_value: epsilon.objective_value,
        epsilon_stats: EpsilonStats::new(&epsilon.eps, &weights),
        top_upweighted,
        top_downweighted,
        stage1_converged: stage1.converged,
        stage2_converged: stage2.converged,
        warnings,
        timings,
    };
    Ok(FairIfOutcome {
        erm_model,
        fair_model,
        coefficients,
        epsilon,
        weights,
        report,
    })
}

/// Fairness report of a model on annotated data.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<FairnessReport> {
    FairnessReport::evaluate(model, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub fraction: f64,
    pub val_size: usize,
    /// `None` when the subsample emptied a (label, group) cell.
    pub report: Option<RunReport>,
    pub warnings: Vec<String>,
}

/// Reruns stages two onward on seeded per-cell subsamples of the
/// validation set. Stage one is shared, since it never sees validation data.
/// Fractions run in parallel; results keep the input order.
pub fn validation_size_sweep(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &FairIfConfig,
    fractions: &[f64],
    subsample_seed: u64,
) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    check_inputs(train, val, test)?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("sweep fraction {f} is outside (0, 1]")));
    }
    let stage1 = train_stage_one(train, cfg).stage("stage one")?;
    fractions
        .par_iter()
        .map(|&fraction| {
            let sub = subsample_validation(val, fraction, subsample_seed)?;
            let val_size = sub.data.len();
            if sub.emptied_cell() {
                return Ok(SweepEntry {
                    fraction,
                    val_size,
                    report: None,
                    warnings: sub.warnings,
                });
            }
            let out = fairif_from_stage_one(&stage1, train, &sub.data, test, cfg)?;
            Ok(SweepEntry {
                fraction,
                val_size,
                report: Some(out.report),
                warnings: sub.warnings,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, BiasKind, BiasScenario, FeatureSpec};

    fn splits(seed: u64) -> [Dataset; 3] {
        let s = BiasScenario::standard(BiasKind::GroupSizeDiscrepancy, 1200, FeatureSpec::standard(6), seed);
        split(&generate_synthetic(&s).unwrap(), [0.6, 0.2, 0.2], seed).unwrap()
    }

    #[test]
    fn extreme_weights_sorted_by_magnitude() {
        let eps = [0.1, -0.3, 0.2, 0.0, -0.05, 0.2];
        let w = [0.0; 6];
        let (up, down) = extreme_weights(&eps, &w, 2);
        assert_eq!(up.iter().map(|s| s.index).collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(down.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 4]);
        assert!(extreme_weights(&eps, &w, 0).0.is_empty());
        assert_eq!(extreme_weights(&eps, &w, 100).0.len(), 3);
    }

    #[test]
    fn validation_needs_groups() {
        let [train, val, _] = splits(1);
        let err = fairif_train(&train, &val.without_groups(), None, &FairIfConfig::default()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn run_is_deterministic_and_train_groups_are_optional() {
        let [train, val, test] = splits(2);
        let cfg = FairIfConfig::default();
        let a = fairif_train(&train.without_groups(), &val, Some(&test), &cfg).unwrap();
        let b = fairif_train(&train.without_groups(), &val, Some(&test), &cfg).unwrap();
        assert_eq!(a.report.without_timings(), b.report.without_timings());
        assert_eq!(a.fair_model, b.fair_model);
        assert!(a.report.erm.train.is_none());
        assert_eq!(a.report.schema, 1);
        let json = serde_json::to_value(&a.report).unwrap();
        assert_eq!(json["schema"], 1);
    }

    #[test]
    fn huge_lambda_recovers_erm_retrain() {
        let [train, val, _] = splits(3);
        let cfg = FairIfConfig {
            lambda: 1e30,
            ..FairIfConfig::default()
        };
        let out = fairif_train(&train, &val, None, &cfg).unwrap();
        let init = Model::init(cfg.architecture, train.dim(), cfg.stage2.seed).unwrap();
        let plain = train_erm(
            &init,
            &train,
            WeightVector::uniform(train.len()).as_slice(),
            &cfg.stage2,
        )
        .unwrap();
        assert_eq!(out.weights, WeightVector::uniform(train.len()));
        assert_eq!(out.fair_model, plain.model);
    }

    #[test]
    fn sweep_at_full_fraction_matches_single_run() {
        let [train, val, test] = splits(4);
        let cfg = FairIfConfig::default();
        let single = fairif_train(&train, &val, Some(&test), &cfg).unwrap();
        let sweep = validation_size_sweep(&train, &val, Some(&test), &cfg, &[1.0], 0).unwrap();
        assert_eq!(sweep.len(), 1);
        let report = sweep[0].report.as_ref().unwrap();
        assert_eq!(report.without_timings(), single.report.without_timings());
        assert!(validation_size_sweep(&train, &val, None, &cfg, &[0.0], 0).is_err());
    }

    #[test]
    fn sweep_skips_emptied_cells() {
        let [train, val, _] = splits(5);
        let sweep = validation_size_sweep(&train, &val, None, &FairIfConfig::default(), &[0.01], 0).unwrap();
        assert!(sweep[0].report.is_none());
        assert!(!sweep[0].warnings.is_empty());
    }
}
