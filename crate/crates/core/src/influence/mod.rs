//! Influence functions.
//!
//! Up-weighting a training sample `zᵢ` by `ε` moves the empirical risk
//! minimiser by approximately `−ε H⁻¹ ∇ℓ(zᵢ)`, where `H` is the Hessian of
//! the mean training loss. Every quantity here is built on that first-order
//! estimate and on inverse-Hessian-vector products from [`Solver`].

mod operator;
mod solvers;

pub use operator::{dense_matrix, DenseOperator, HessianOperator, ModelHessian};
pub use solvers::{
    cg, lissa, spectral_norm_estimate, CgConfig, ExplicitInverse, InverseHvpResult, LissaConfig, SolveMethod, Solver,
    DEFAULT_DAMPING, LISSA_BLOWUP,
};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{discrepancy_and_grad, RateKind, SoftMetricConfig};
use crate::model::{Curvature, Model, ParameterVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn hessian<'a>(model: &'a Model, data: &'a Dataset, curvature: Curvature) -> Result<ModelHessian<'a>> {
    model.check_data(data)?;
    if data.is_empty() {
        return Err(Error::Config("influence needs a nonempty training set".into()));
    }
    Ok(ModelHessian::new(model, data, curvature))
}

/// `ℐ_param(z) = −H⁻¹ ∇ℓ(z)`: the parameter change per unit of up-weighting.
pub fn influence_on_params(
    model: &Model,
    data: &Dataset,
    z: &Sample,
    solver: &Solver,
    curvature: Curvature,
) -> Result<ParameterVector> {
    let op = hessian(model, data, curvature)?;
    let g = model.grad(z)?;
    let mut x = solver.solve(&op, &g)?.vector;
    linalg::scale(-1.0, &mut x);
    Ok(x.into())
}

/// `ℐ_loss(zᵢ, z) = −∇ℓ(z)ᵀ H⁻¹ ∇ℓ(zᵢ)`: the change of the loss on `z_test`
/// per unit of up-weighting `z_i`.
pub fn influence_on_loss(
    model: &Model,
    data: &Dataset,
    z_i: &Sample,
    z_test: &Sample,
    solver: &Solver,
    curvature: Curvature,
) -> Result<f64> {
    let g_test = model.grad(z_test)?;
    if g_test.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let p = influence_on_params(model, data, z_i, solver, curvature)?;
    Ok(linalg::dot(&g_test, &p))
}

/// Per-sample loss gradients, computed in parallel and kept in row order.
pub(crate) fn par_sample_grads(model: &Model, data: &Dataset) -> Vec<Vec<f64>> {
    data.samples()
        .par_iter()
        .map(|z| {
            let mut g = vec![0.0; model.num_params()];
            model.accumulate_grad(z, 1.0, &mut g);
            g
        })
        .collect()
}

/// First-order model of how per-sample weight changes move the two soft
/// rate gaps on the validation set: gap after reweighting by `ε` is
/// approximately `a + cᵀε` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceCoefficients {
    pub a_tpr: f64,
    pub a_tnr: f64,
    pub c_tpr: Vec<f64>,
    pub c_tnr: Vec<f64>,
    /// `‖∇ℓ(zᵢ)‖₂` per training sample.
    pub grad_norms: Vec<f64>,
    /// Relative residuals of the two inverse-HVP solves.
    pub solve_residuals: [f64; 2],
}

impl InfluenceCoefficients {
    pub fn len(&self) -> usize {
        self.c_tpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_tpr.is_empty()
    }

    pub fn gap(&self, which: RateKind) -> f64 {
        match which {
            RateKind::Tpr => self.a_tpr,
            RateKind::Tnr => self.a_tnr,
        }
    }

    pub fn coefficients(&self, which: RateKind) -> &[f64] {
        match which {
            RateKind::Tpr => &self.c_tpr,
            RateKind::Tnr => &self.c_tnr,
        }
    }

    /// Writes `index,c_tpr,c_tnr,grad_norm` with the gaps as leading
    /// `# key=value` comments.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "# a_tpr={:?}", self.a_tpr).map_err(io)?;
        writeln!(out, "# a_tnr={:?}", self.a_tnr).map_err(io)?;
        writeln!(out, "index,c_tpr,c_tnr,grad_norm").map_err(io)?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{i},{:?},{:?},{:?}",
                self.c_tpr[i], self.c_tnr[i], self.grad_norms[i]
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let comments = crate::reweight::parse_comments(&text)?;
        let get = |k: &str| {
            comments
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Format(format!("{}: missing `# {k}=` line", path.display())))
        };
        let (a_tpr, a_tnr) = (get("a_tpr")?, get("a_tnr")?);
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut out = Self {
            a_tpr,
            a_tnr,
            c_tpr: Vec::new(),
            c_tnr: Vec::new(),
            grad_norms: Vec::new(),
            solve_residuals: [f64::NAN; 2],
        };
        for (row, rec) in reader.deserialize::<(usize, f64, f64, f64)>().enumerate() {
            let (index, c_tpr, c_tnr, norm) = rec.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            if index != row {
                return Err(Error::Parse {
                    row,
                    message: format!("index {index} out of sequence"),
                });
            }
            out.c_tpr.push(c_tpr);
            out.c_tnr.push(c_tnr);
            out.grad_norms.push(norm);
        }
        Ok(out)
    }
}

/// Influence coefficients of every training sample on both soft rate gaps.
///
/// Uses the adjoint form: one solve `u = H⁻¹(ḡ₁ − ḡ₀)` per channel, then
/// `cᵢ = uᵀ ∇ℓ(zᵢ)`. The training set needs no group attributes.
pub fn influence_coefficients(
    model: &Model,
    train: &Dataset,
    val: &Dataset,
    soft: &SoftMetricConfig,
    solver: &Solver,
    curvature: Curvature,
) -> Result<InfluenceCoefficients> {
    let op = hessian(model, train, curvature)?;
    model.check_data(val)?;
    let mut gaps = [0.0; 2];
    let mut rhs = Vec::with_capacity(2);
    for (k, which) in RateKind::BOTH.into_iter().enumerate() {
        let (gap, grad) = discrepancy_and_grad(model, val, which, soft)?;
        gaps[k] = gap;
        // The gap's gradient is ḡ₀ − ḡ₁; the adjoint vector needs its negation.
        rhs.push(grad.iter().map(|x| -x).collect::<Vec<f64>>());
    }
    let solves = solver.solve_many(&op, &rhs)?;
    let grads = par_sample_grads(model, train);
    let dots = |u: &[f64]| grads.par_iter().map(|g| linalg::dot(u, g)).collect::<Vec<f64>>();
    Ok(InfluenceCoefficients {
        a_tpr: gaps[0],
        a_tnr: gaps[1],
        c_tpr: dots(&solves[0].vector),
        c_tnr: dots(&solves[1].vector),
        grad_norms: grads.par_iter().map(|g| linalg::norm(g)).collect(),
        solve_residuals: [solves[0].residual, solves[1].residual],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cells, CellCounts, FeatureSpec};
    use crate::model::{train_erm, Architecture, TrainConfig};

    fn fitted(seed: u64) -> (Model, Dataset, Dataset) {
        let spec = FeatureSpec::standard(4);
        let train = generate_cells(&CellCounts([[40, 30], [25, 35]]), &spec, seed).unwrap();
        let val = generate_cells(&CellCounts([[20, 15], [12, 18]]), &spec, seed + 100).unwrap();
        let init = Model::init(Architecture::Logistic, 4, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 5000,
            convergence_tol: 1e-9,
            ..TrainConfig::default()
        };
        let w = vec![1.0 / train.len() as f64; train.len()];
        let model = train_erm(&init, &train, &w, &cfg).unwrap().model;
        (model, train, val)
    }

    #[test]
    fn adjoint_matches_per_sample_route() {
        let (model, train, val) = fitted(1);
        let solver = Solver::explicit();
        let soft = SoftMetricConfig::default();
        let coeffs = influence_coefficients(&model, &train, &val, &soft, &solver, Curvature::Exact).unwrap();
        let (_, g_tpr) = discrepancy_and_grad(&model, &val, RateKind::Tpr, &soft).unwrap();
        for i in [0, 7, 50, train.len() - 1] {
            let p = influence_on_params(&model, &train, train.sample(i), &solver, Curvature::Exact).unwrap();
            // Up-weighting moves the gap by ∇gapᵀ ℐ_param.
            let direct = linalg::dot(&g_tpr, &p);
            assert!((direct - coeffs.c_tpr[i]).abs() <= 1e-6 * direct.abs().max(1e-12));
        }
    }

    #[test]
    fn zero_gradient_means_zero_influence() {
        let (_, train, _) = fitted(2);
        // σ(1000) rounds to exactly 1, so a positive sample has zero gradient.
        let saturated = Model::with_params(Architecture::Logistic, 4, vec![0.0, 0.0, 0.0, 0.0, 1e3]).unwrap();
        let z = Sample::new(vec![0.3; 4], 1);
        let p = influence_on_params(&saturated, &train, &z, &Solver::explicit(), Curvature::Exact).unwrap();
        assert_eq!(p.norm(), 0.0);
        let l = influence_on_loss(
            &saturated,
            &train,
            train.sample(0),
            &z,
            &Solver::explicit(),
            Curvature::Exact,
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn self_influence_is_nonpositive() {
        let (model, train, _) = fitted(3);
        for i in 0..5 {
            let z = train.sample(i);
            let v = influence_on_loss(&model, &train, z, z, &Solver::explicit(), Curvature::Exact).unwrap();
            // −gᵀ(H+δI)⁻¹g ≤ 0: up-weighting a sample lowers its own loss.
            assert!(v <= 0.0);
        }
    }

    #[test]
    fn coefficients_csv_round_trip() {
        let (model, train, val) = fitted(4);
        let c = influence_coefficients(
            &model,
            &train,
            &val,
            &SoftMetricConfig::default(),
            &Solver::default(),
            Curvature::GaussNewton,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coef.csv");
        c.write_csv(&path).unwrap();
        let back = InfluenceCoefficients::read_csv(&path).unwrap();
        assert_eq!(back.c_tpr, c.c_tpr);
        assert_eq!(back.c_tnr, c.c_tnr);
        assert_eq!(back.grad_norms, c.grad_norms);
        assert_eq!((back.a_tpr, back.a_tnr), (c.a_tpr, c.a_tnr));
    }

    #[test]
    fn duplicate_sample_same_coefficient() {
        let (model, train, val) = fitted(5);
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.push(3);
        let dup = train.subset(&idx);
        let c = influence_coefficients(
            &model,
            &dup,
            &val,
            &SoftMetricConfig::default(),
            &Solver::explicit(),
            Curvature::Exact,
        )
        .unwrap();
        assert_eq!(c.c_tpr[3], c.c_tpr[dup.len() - 1]);
        assert_eq!(c.c_tnr[3], c.c_tnr[dup.len() - 1]);
    }
}
