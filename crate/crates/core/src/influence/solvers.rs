use super::operator::{dense_matrix, HessianOperator};
use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DAMPING: f64 = 0.01;
/// LiSSA iterates larger than this multiple of `‖v‖` count as divergence.
pub const LISSA_BLOWUP: f64 = 1e6;
const POWER_ITERATIONS: usize = 20;
const AUTO_SCALE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LissaConfig {
    pub depth: usize,
    pub repeats: usize,
    pub batch_size: usize,
    pub damping: f64,
    /// `None` picks 1.5 times a power-method estimate of `‖H + damping·I‖₂`.
    pub scale: Option<f64>,
    pub seed: u64,
}

impl Default for LissaConfig {
    fn default() -> Self {
        Self {
            depth: 1000,
            repeats: 4,
            batch_size: 16,
            damping: DEFAULT_DAMPING,
            scale: None,
            seed: 0,
        }
    }
}

impl LissaConfig {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "LiSSA depth, repeats and batch size must be positive".into(),
            ));
        }
        check_damping(self.damping)?;
        if let Some(s) = self.scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("LiSSA scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    pub damping: f64,
    /// Target relative residual `‖(H + δI)x − v‖ / ‖v‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            damping: DEFAULT_DAMPING,
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

fn check_damping(d: f64) -> Result<()> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::Config(format!("damping must be nonnegative, got {d}")));
    }
    Ok(())
}

/// Strategy for computing `(H + δI)⁻¹ v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum Solver {
    Lissa(LissaConfig),
    Cg(CgConfig),
    /// Dense Cholesky factorisation; practical only for small parameter counts.
    Explicit {
        damping: f64,
    },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Cg(CgConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Lissa,
    Cg,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseHvpResult {
    pub vector: Vec<f64>,
    pub method: SolveMethod,
    /// Relative residual `‖(H + δI)x − v‖ / ‖v‖`; zero when `v = 0`.
    pub residual: f64,
}

impl Solver {
    pub fn explicit() -> Self {
        Solver::Explicit {
            damping: DEFAULT_DAMPING,
        }
    }

    pub fn damping(&self) -> f64 {
        match self {
            Solver::Lissa(c) => c.damping,
            Solver::Cg(c) => c.damping,
            Solver::Explicit { damping } => *damping,
        }
    }

    pub fn method(&self) -> SolveMethod {
        match self {
            Solver::Lissa(_) => SolveMethod::Lissa,
            Solver::Cg(_) => SolveMethod::Cg,
            Solver::Explicit { .. } => SolveMethod::Explicit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Solver::Lissa(c) => c.validate(),
            Solver::Cg(c) => {
                check_damping(c.damping)?;
                if !(c.tol.is_finite() && c.tol > 0.0) || c.max_iter == 0 {
                    return Err(Error::Config("CG needs a positive tolerance and iteration cap".into()));
                }
                Ok(())
            }
            Solver::Explicit { damping } => check_damping(*damping),
        }
    }

    pub fn solve(&self, op: &dyn HessianOperator, v: &[f64]) -> Result<InverseHvpResult> {
        self.validate()?;
        check_len(op, v)?;
        match self {
            Solver::Lissa(c) => lissa(op, v, c),
            Solver::Cg(c) => cg(op, v, c),
            Solver::Explicit { damping } => ExplicitInverse::factorize(op, *damping)?.solve(v),
        }
    }

    /// Solves several right-hand sides, factorising once for the explicit
    /// method.
    pub fn solve_many(&self, op: &dyn HessianOperator, vs: &[Vec<f64>]) -> Result<Vec<InverseHvpResult>> {
        self.validate()?;
        if let Solver::Explicit { damping } = self {
            let inv = ExplicitInverse::factorize(op, *damping)?;
            return vs.iter().map(|v| inv.solve(v)).collect();
        }
        vs.iter().map(|v| self.solve(op, v)).collect()
    }
}

fn check_len(op: &dyn HessianOperator, v: &[f64]) -> Result<()> {
    if v.len() != op.dim() {
        return Err(Error::Shape {
            expected: op.dim(),
            actual: v.len(),
            context: "inverse-HVP right-hand side",
        });
    }
    Ok(())
}

fn relative_residual(op: &dyn HessianOperator, damping: f64, x: &[f64], v: &[f64]) -> f64 {
    let vn = linalg::norm(v);
    if vn == 0.0 {
        return linalg::norm(x);
    }
    let mut hx = op.apply(x);
    linalg::axpy(damping, x, &mut hx);
    linalg::norm(&linalg::sub(&hx, v)) / vn
}

/// Power-method estimate of `‖H + damping·I‖₂` for a symmetric PSD `H`.
pub fn spectral_norm_estimate(op: &dyn HessianOperator, damping: f64, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let n = linalg::norm(&x);
        if n == 0.0 {
            break;
        }
        linalg::scale(1.0 / n, &mut x);
        let mut y = op.apply(&x);
        linalg::axpy(damping, &x, &mut y);
        estimate = linalg::norm(&y);
        x = y;
    }
    estimate
}

/// Stochastic Neumann-series estimate of `(H + δI)⁻¹ v`.
///
/// Each repeat runs `x ← v + x − (H_B + δI) x / scale` for `depth` steps with
/// an independently sampled batch `H_B` per step; the mean of the repeats is
/// divided by `scale`. The scale must exceed `‖H + δI‖₂` for the recursion
/// to contract.
pub fn lissa(op: &dyn HessianOperator, v: &[f64], cfg: &LissaConfig) -> Result<InverseHvpResult> {
    cfg.validate()?;
    check_len(op, v)?;
    let p = op.dim();
    let vn = linalg::norm(v);
    if vn == 0.0 {
        return Ok(InverseHvpResult {
            vector: vec![0.0; p],
            method: SolveMethod::Lissa,
            residual: 0.0,
        });
    }
    let scale = cfg.scale.unwrap_or_else(|| {
        let est = spectral_norm_estimate(op, cfg.damping, POWER_ITERATIONS, cfg.seed);
        if est > 0.0 {
            AUTO_SCALE_FACTOR * est
        } else {
            1.0
        }
    });

    let n = op.num_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch = vec![0usize; cfg.batch_size];
    let mut sum = vec![0.0; p];
    for _ in 0..cfg.repeats {
        let mut x = v.to_vec();
        for step in 0..cfg.depth {
            batch.iter_mut().for_each(|b| *b = rng.random_range(0..n));
            let mut hx = op.apply_batch(&batch, &x);
            linalg::axpy(cfg.damping, &x, &mut hx);
            for k in 0..p {
                x[k] = v[k] + x[k] - hx[k] / scale;
            }
            let ratio = linalg::norm(&x) / vn;
            if !ratio.is_finite() || ratio > LISSA_BLOWUP {
                return Err(Error::SolverDivergence { step, ratio });
            }
        }
        linalg::axpy(1.0, &x, &mut sum);
    }
    linalg::scale(1.0 / (cfg.repeats as f64 * scale), &mut sum);
    let residual = relative_residual(op, cfg.damping, &sum, v);
    Ok(InverseHvpResult {
        vector: sum,
        method: SolveMethod::Lissa,
        residual,
    })
}

/// Conjugate gradients on `(H + δI) x = v`.
pub fn cg(op: &dyn HessianOperator, v: &[f64], cfg: &CgConfig) -> Result<InverseHvpResult> {
    check_len(op, v)?;
    let p = op.dim();
    let vn = linalg::norm(v);
    let mut x = vec![0.0; p];
    if vn == 0.0 {
        return Ok(InverseHvpResult {
            vector: x,
            method: SolveMethod::Cg,
            residual: 0.0,
        });
    }
    let apply = |d: &[f64]| {
        let mut out = op.apply(d);
        linalg::axpy(cfg.damping, d, &mut out);
        out
    };
    let mut r = v.to_vec();
    let mut d = r.clone();
    let mut rr = linalg::dot(&r, &r);
    for _ in 0..cfg.max_iter {
        if rr.sqrt() <= cfg.tol * vn {
            break;
        }
        let ad = apply(&d);
        let curvature = linalg::dot(&d, &ad);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rr / curvature;
        linalg::axpy(alpha, &d, &mut x);
        linalg::axpy(-alpha, &ad, &mut r);
        let rr_next = linalg::dot(&r, &r);
        let beta = rr_next / rr;
        for k in 0..p {
            d[k] = r[k] + beta * d[k];
        }
        rr = rr_next;
    }
    // Recompute the true residual rather than trusting the recurrence.
    let residual = relative_residual(op, cfg.damping, &x, v);
    if residual > cfg.tol && rr.sqrt() > cfg.tol * vn {
        return Err(Error::Convergence {
            iterations: cfg.max_iter,
            residual,
        });
    }
    Ok(InverseHvpResult {
        vector: x,
        method: SolveMethod::Cg,
        residual,
    })
}

/// Cholesky factorisation of the dense matrix `H + δI`.
#[derive(Debug, Clone)]
pub struct ExplicitInverse {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ExplicitInverse {
    pub fn factorize(op: &dyn HessianOperator, damping: f64) -> Result<Self> {
        check_damping(damping)?;
        Self::from_matrix(dense_matrix(op, damping))
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { matrix, chol })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The factorised matrix `H + δI`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn solve(&self, v: &[f64]) -> Result<InverseHvpResult> {
        if v.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                actual: v.len(),
                context: "inverse-HVP right-hand side",
            });
        }
        let b = DVector::from_column_slice(v);
        let x = self.chol.solve(&b);
        let vn = b.norm();
        let residual = if vn == 0.0 {
            0.0
        } else {
            (&self.matrix * &x - &b).norm() / vn
        };
        Ok(InverseHvpResult {
            vector: x.as_slice().to_vec(),
            method: SolveMethod::Explicit,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::DenseOperator;

    fn lissa_cfg(depth: usize, scale: f64, damping: f64) -> LissaConfig {
        LissaConfig {
            depth,
            repeats: 1,
            batch_size: 1,
            damping,
            scale: Some(scale),
            seed: 0,
        }
    }

    #[test]
    fn lissa_identity_returns_v() {
        let op = DenseOperator::identity_scaled(3, 1.0);
        let v = [1.0, -2.0, 0.5];
        let r = lissa(&op, &v, &lissa_cfg(1, 1.0, 0.0)).unwrap();
        assert_eq!(r.vector, v);
    }

    #[test]
    fn lissa_half_identity_doubles() {
        let op = DenseOperator::identity_scaled(3, 0.5);
        let v = [1.0, -2.0, 0.5];
        let r = lissa(&op, &v, &lissa_cfg(40, 1.0, 0.0)).unwrap();
        let want: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        assert!(linalg::relative_error(&r.vector, &want) <= 1e-6);
    }

    #[test]
    fn lissa_with_damping_and_auto_scale() {
        let op = DenseOperator::diagonal(&[3.0, 1.0, 0.2]);
        let v = [1.0, 1.0, 1.0];
        let cfg = LissaConfig {
            depth: 400,
            repeats: 1,
            batch_size: 1,
            damping: 0.05,
            scale: None,
            seed: 1,
        };
        let r = lissa(&op, &v, &cfg).unwrap();
        let want = [1.0 / 3.05, 1.0 / 1.05, 1.0 / 0.25];
        assert!(linalg::relative_error(&r.vector, &want) <= 1e-6);
    }

    #[test]
    fn lissa_reports_divergence() {
        let op = DenseOperator::identity_scaled(2, 10.0);
        let err = lissa(&op, &[1.0, 0.0], &lissa_cfg(100, 1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::SolverDivergence { .. }));
    }

    #[test]
    fn cg_diagonal_and_zero() {
        let op = DenseOperator::diagonal(&[1.0, 2.0, 4.0]);
        let cfg = CgConfig {
            damping: 0.0,
            ..CgConfig::default()
        };
        let r = cg(&op, &[1.0, 1.0, 1.0], &cfg).unwrap();
        assert!(linalg::relative_error(&r.vector, &[1.0, 0.5, 0.25]) <= 1e-12);
        assert_eq!(cg(&op, &[0.0; 3], &cfg).unwrap().vector, vec![0.0; 3]);
    }

    #[test]
    fn cg_iteration_cap() {
        let op = DenseOperator::diagonal(&[1.0, 10.0, 100.0, 1000.0]);
        let cfg = CgConfig {
            damping: 0.0,
            tol: 1e-14,
            max_iter: 1,
        };
        assert!(matches!(cg(&op, &[1.0; 4], &cfg), Err(Error::Convergence { .. })));
    }

    #[test]
    fn explicit_rejects_indefinite() {
        let op = DenseOperator::diagonal(&[1.0, -1.0]);
        assert!(matches!(
            ExplicitInverse::factorize(&op, 0.0),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(ExplicitInverse::factorize(&op, 2.0).is_ok());
    }

    #[test]
    fn explicit_is_symmetric_in_bilinear_form() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = ExplicitInverse::factorize(&DenseOperator(m), 0.01).unwrap();
        let g = [1.0, -2.0, 0.3];
        let w = [0.7, 0.1, -1.1];
        let a = linalg::dot(&g, &inv.solve(&w).unwrap().vector);
        let b = linalg::dot(&w, &inv.solve(&g).unwrap().vector);
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn solver_config_validation() {
        let bad = Solver::Lissa(LissaConfig {
            depth: 0,
            ..LissaConfig::default()
        });
        assert!(bad.validate().is_err());
        assert!(Solver::Explicit { damping: -1.0 }.validate().is_err());
        assert!(Solver::default().validate().is_ok());
        let op = DenseOperator::identity_scaled(2, 1.0);
        assert!(matches!(Solver::default().solve(&op, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn solver_serde_tagging() {
        let json = serde_json::to_value(Solver::explicit()).unwrap();
        assert_eq!(json["method"], "explicit");
        let parsed: Solver = serde_json::from_str(r#"{"method":"cg","tol":1e-8}"#).unwrap();
        assert!(matches!(parsed, Solver::Cg(CgConfig { tol, .. }) if tol == 1e-8));
    }
}
