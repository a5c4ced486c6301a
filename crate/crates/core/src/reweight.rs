//! Weight perturbations that close the predicted rate gaps.
//!
//! Given gaps `a_k` and influence coefficients `c_k` for the two channels
//! (TPR and TNR), the perturbation `ε` minimises
//!
//! ```text
//! Σ_k w_k (a_k + c_kᵀ ε)² + λ ‖ε‖²
//! ```
//!
//! The minimiser lives in the span of the two coefficient vectors, so it is
//! found from a 2×2 system instead of an `n × n` one.

use crate::error::{Error, Result};
use crate::influence::InfluenceCoefficients;
use crate::linalg;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonVector {
    pub eps: Vec<f64>,
    pub lambda: f64,
    pub objective_value: f64,
}

impl EpsilonVector {
    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.eps)
    }
}

/// The two-channel least-squares problem.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonProblem<'a> {
    pub a: [f64; 2],
    pub c: [&'a [f64]; 2],
    /// Per-channel weights `w_k`; `[1, 1]` weighs both gaps equally.
    pub channel_weights: [f64; 2],
}

impl<'a> EpsilonProblem<'a> {
    pub fn new(a_tpr: f64, c_tpr: &'a [f64], a_tnr: f64, c_tnr: &'a [f64]) -> Self {
        Self {
            a: [a_tpr, a_tnr],
            c: [c_tpr, c_tnr],
            channel_weights: [1.0, 1.0],
        }
    }

    pub fn from_coefficients(coeffs: &'a InfluenceCoefficients, channel_weights: [f64; 2]) -> Self {
        Self {
            a: [coeffs.a_tpr, coeffs.a_tnr],
            c: [&coeffs.c_tpr, &coeffs.c_tnr],
            channel_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.c[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.c[0].is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.c[0].len() != self.c[1].len() {
            return Err(Error::Shape {
                expected: self.c[0].len(),
                actual: self.c[1].len(),
                context: "TNR coefficient vector",
            });
        }
        if self.channel_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("channel weights must be finite and nonnegative".into()));
        }
        let finite = self.a.iter().chain(self.c[0]).chain(self.c[1]).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("gaps and coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Predicted gaps after reweighting, `a_k + c_kᵀ ε`.
    pub fn residuals(&self, eps: &[f64]) -> [f64; 2] {
        [
            self.a[0] + linalg::dot(self.c[0], eps),
            self.a[1] + linalg::dot(self.c[1], eps),
        ]
    }

    pub fn objective(&self, eps: &[f64], lambda: f64) -> f64 {
        let r = self.residuals(eps);
        self.channel_weights[0] * r[0] * r[0] + self.channel_weights[1] * r[1] * r[1] + lambda * linalg::dot(eps, eps)
    }

    /// Exact minimiser `ε* = −C̃ᵀ (C̃C̃ᵀ + λI₂)⁻¹ ã`, where row `k` of `C̃` is
    /// `√w_k c_k` and `ã_k = √w_k a_k`.
    pub fn solve(&self, lambda: f64) -> Result<EpsilonVector> {
        self.validate()?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive (the unregularised problem is underdetermined), got {lambda}"
            )));
        }
        let s = self.channel_weights.map(f64::sqrt);
        let [c0, c1] = self.c;
        let g00 = s[0] * s[0] * linalg::dot(c0, c0) + lambda;
        let g01 = s[0] * s[1] * linalg::dot(c0, c1);
        let g11 = s[1] * s[1] * linalg::dot(c1, c1) + lambda;
        let a = [s[0] * self.a[0], s[1] * self.a[1]];
        let det = g00 * g11 - g01 * g01;
        let y0 = (g11 * a[0] - g01 * a[1]) / det;
        let y1 = (g00 * a[1] - g01 * a[0]) / det;
        let eps: Vec<f64> = c0
            .iter()
            .zip(c1)
            .map(|(x0, x1)| -(s[0] * x0 * y0 + s[1] * x1 * y1))
            .collect();
        let objective_value = self.objective(&eps, lambda);
        Ok(EpsilonVector {
            eps,
            lambda,
            objective_value,
        })
    }
}

/// Equal-weight solve of `(a_tpr + c_tprᵀε)² + (a_tnr + c_tnrᵀε)² + λ‖ε‖²`.
pub fn solve_epsilon(a_tpr: f64, c_tpr: &[f64], a_tnr: f64, c_tnr: &[f64], lambda: f64) -> Result<EpsilonVector> {
    EpsilonProblem::new(a_tpr, c_tpr, a_tnr, c_tnr).solve(lambda)
}

/// `(a_tpr + c_tprᵀε, a_tnr + c_tnrᵀε)`.
pub fn residual_discrepancy(eps: &[f64], a_tpr: f64, c_tpr: &[f64], a_tnr: f64, c_tnr: &[f64]) -> [f64; 2] {
    EpsilonProblem::new(a_tpr, c_tpr, a_tnr, c_tnr).residuals(eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    /// `wᵢ = max(0, 1/n + εᵢ)`.
    #[default]
    Clamp,
    /// As `Clamp`, then rescaled to sum to one.
    ClampRenormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&w| w == 0.0).count()
    }
}

/// Effective training weights `1/n + εᵢ` under `policy`.
pub fn apply_weights(eps: &[f64], policy: WeightPolicy) -> Result<WeightVector> {
    let n = eps.len();
    if n == 0 {
        return Err(Error::DegenerateWeights);
    }
    let base = 1.0 / n as f64;
    let mut w: Vec<f64> = eps.iter().map(|e| (base + e).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    if policy == WeightPolicy::ClampRenormalize {
        w.iter_mut().for_each(|x| *x /= total);
    }
    Ok(WeightVector(w))
}

/// Parses leading `# key=value` lines with numeric values.
pub(crate) fn parse_comments(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .map(|l| {
            let (k, v) = l
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("comment line `#{l}` is not key=value")))?;
            let v = v
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("comment `{k}` has a non-numeric value")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Weight file contents: the perturbation and the weights it induced.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub lambda: f64,
    pub objective_value: f64,
    pub epsilon: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightFile {
    pub fn new(eps: &EpsilonVector, weights: &WeightVector) -> Self {
        Self {
            lambda: eps.lambda,
            objective_value: eps.objective_value,
            epsilon: eps.eps.clone(),
            weights: weights.as_slice().to_vec(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "# n={}", self.epsilon.len()).map_err(io)?;
        writeln!(out, "# lambda={:?}", self.lambda).map_err(io)?;
        writeln!(out, "# objective_value={:?}", self.objective_value).map_err(io)?;
        writeln!(out, "index,epsilon,weight").map_err(io)?;
        for (i, (e, w)) in self.epsilon.iter().zip(&self.weights).enumerate() {
            writeln!(out, "{i},{e:?},{w:?}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let comments = parse_comments(&text)?;
        let get = |k: &str| {
            comments
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Format(format!("{}: missing `# {k}=` line", path.display())))
        };
        let n = get("n")?;
        let mut out = Self {
            lambda: get("lambda")?,
            objective_value: get("objective_value")?,
            epsilon: Vec::new(),
            weights: Vec::new(),
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        for (row, rec) in reader.deserialize::<(usize, f64, f64)>().enumerate() {
            let (index, e, w) = rec.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            if index != row {
                return Err(Error::Parse {
                    row,
                    message: format!("index {index} out of sequence"),
                });
            }
            out.epsilon.push(e);
            out.weights.push(w);
        }
        if out.epsilon.len() as f64 != n {
            return Err(Error::Format(format!(
                "{}: header declares n={n} but {} rows follow",
                path.display(),
                out.epsilon.len()
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, seed: u64) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c2 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (rng.random_range(-0.5..0.5), c1, rng.random_range(-0.5..0.5), c2)
    }

    /// Normal equations `(CᵀC + λI) ε = −Cᵀa` solved densely.
    fn dense_ridge(a1: f64, c1: &[f64], a2: f64, c2: &[f64], lambda: f64) -> Vec<f64> {
        let n = c1.len();
        let mut c = DMatrix::zeros(2, n);
        c.set_row(0, &DVector::from_column_slice(c1).transpose());
        c.set_row(1, &DVector::from_column_slice(c2).transpose());
        let lhs = c.transpose() * &c + DMatrix::identity(n, n) * lambda;
        let rhs = -(c.transpose() * DVector::from_vec(vec![a1, a2]));
        lhs.cholesky().unwrap().solve(&rhs).as_slice().to_vec()
    }

    #[test]
    fn zero_gaps_give_zero_epsilon() {
        let e = solve_epsilon(0.0, &[1.0, 2.0], 0.0, &[3.0, -1.0], 0.1).unwrap();
        assert_eq!(e.eps, vec![0.0, 0.0]);
        assert_eq!(e.objective_value, 0.0);
    }

    #[test]
    fn scalar_case() {
        let e = solve_epsilon(1.0, &[2.0], 0.0, &[0.0], 4.0).unwrap();
        assert!((e.eps[0] + 0.25).abs() < 1e-15);
        assert!((e.objective_value - (0.25 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_normal_equations() {
        let (a1, c1, a2, c2) = random_instance(50, 3);
        let e = solve_epsilon(a1, &c1, a2, &c2, 0.1).unwrap();
        let dense = dense_ridge(a1, &c1, a2, &c2, 0.1);
        assert!(linalg::relative_error(&e.eps, &dense) <= 1e-9);
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(matches!(
            solve_epsilon(1.0, &[1.0], 1.0, &[1.0], 0.0),
            Err(Error::Config(_))
        ));
        assert!(solve_epsilon(1.0, &[1.0], 1.0, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn lambda_limits() {
        let (a1, c1, a2, c2) = random_instance(20, 9);
        let tiny = solve_epsilon(a1, &c1, a2, &c2, 1e-8).unwrap();
        let r = residual_discrepancy(&tiny.eps, a1, &c1, a2, &c2);
        assert!(r[0].abs() <= 1e-4 * a1.abs() && r[1].abs() <= 1e-4 * a2.abs());
        let c_norm2 = linalg::dot(&c1, &c1) + linalg::dot(&c2, &c2);
        let huge = solve_epsilon(a1, &c1, a2, &c2, 1e8 * c_norm2).unwrap();
        let r = residual_discrepancy(&huge.eps, a1, &c1, a2, &c2);
        assert!((r[0] - a1).abs() <= 1e-4 && (r[1] - a2).abs() <= 1e-4);
        assert_eq!(residual_discrepancy(&[0.0; 20], a1, &c1, a2, &c2), [a1, a2]);
    }

    #[test]
    fn channel_weights_reweight_the_gaps() {
        let (a1, c1, a2, c2) = random_instance(10, 4);
        let mut p = EpsilonProblem::new(a1, &c1, a2, &c2);
        p.channel_weights = [1.0, 0.0];
        let only_tpr = p.solve(0.1).unwrap();
        let single = solve_epsilon(a1, &c1, 0.0, &[0.0; 10], 0.1).unwrap();
        assert!(linalg::relative_error(&only_tpr.eps, &single.eps) <= 1e-12);
    }

    #[test]
    fn weights_from_epsilon() {
        assert_eq!(
            apply_weights(&[0.0; 4], WeightPolicy::Clamp).unwrap().as_slice(),
            &[0.25; 4]
        );
        let eps = [-0.5, 0.0, 0.0, 0.0];
        let w = apply_weights(&eps, WeightPolicy::Clamp).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.25, 0.25, 0.25]);
        assert_eq!(w.zero_count(), 1);
        let w = apply_weights(&eps, WeightPolicy::ClampRenormalize).unwrap();
        for (x, y) in w.as_slice().iter().zip([0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            apply_weights(&[-1.0, -1.0], WeightPolicy::Clamp),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn weight_file_round_trip() {
        let e = solve_epsilon(0.3, &[0.1, -0.2, 0.5], -0.1, &[0.4, 0.4, -0.3], 0.1).unwrap();
        let w = apply_weights(&e.eps, WeightPolicy::Clamp).unwrap();
        let f = WeightFile::new(&e, &w);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        f.write(&path).unwrap();
        assert_eq!(WeightFile::read(&path).unwrap(), f);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# n=3\n# lambda=0.1\n# objective_value="));
        assert!(text.contains("\nindex,epsilon,weight\n"));
    }

    proptest! {
        #[test]
        fn objective_never_exceeds_zero_perturbation(seed in 0u64..1000, n in 1usize..40, lambda in 1e-4f64..10.0) {
            let (a1, c1, a2, c2) = random_instance(n, seed);
            let e = solve_epsilon(a1, &c1, a2, &c2, lambda).unwrap();
            prop_assert!(e.objective_value <= a1 * a1 + a2 * a2 + 1e-15);
            prop_assert!(e.eps.iter().all(|x| x.is_finite()));
        }

        #[test]
        fn minimiser_is_locally_optimal(seed in 0u64..200) {
            let (a1, c1, a2, c2) = random_instance(30, seed);
            let p = EpsilonProblem::new(a1, &c1, a2, &c2);
            let e = p.solve(0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for _ in 0..100 {
                let dir: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
                let scale = 1e-3 / linalg::norm(&dir);
                let moved: Vec<f64> = e.eps.iter().zip(&dir).map(|(x, d)| x + scale * d).collect();
                prop_assert!(p.objective(&moved, 0.1) >= e.objective_value);
            }
        }

        #[test]
        fn norm_shrinks_with_lambda(seed in 0u64..500) {
            let (a1, c1, a2, c2) = random_instance(25, seed);
            let norms: Vec<f64> = [1e-3, 1e-2, 0.1, 1.0, 10.0]
                .iter()
                .map(|&l| solve_epsilon(a1, &c1, a2, &c2, l).unwrap().norm())
                .collect();
            prop_assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }
}
