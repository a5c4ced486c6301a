use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{sigmoid, Model, ParameterVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Tpr,
    Tnr,
}

impl RateKind {
    pub const BOTH: [RateKind; 2] = [RateKind::Tpr, RateKind::Tnr];

    /// The label whose samples the rate averages over.
    pub fn label(self) -> u8 {
        match self {
            RateKind::Tpr => 1,
            RateKind::Tnr => 0,
        }
    }

    fn sign(self) -> f64 {
        match self {
            RateKind::Tpr => 1.0,
            RateKind::Tnr => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SoftNoise {
    #[default]
    Off,
    /// Logistic noise (the difference of two Gumbel draws) added to every
    /// logit. Draws follow the slice's row order.
    Gumbel { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftMetricConfig {
    pub temperature: f64,
    pub noise: SoftNoise,
}

impl Default for SoftMetricConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            noise: SoftNoise::Off,
        }
    }
}

impl SoftMetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "soft-metric temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn noise_source(&self, stream: u64) -> Option<ChaCha8Rng> {
        match self.noise {
            SoftNoise::Off => None,
            SoftNoise::Gumbel { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                Some(rng)
            }
        }
    }
}

fn logistic_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    (u / (1.0 - u)).ln()
}

/// Value and (optionally) gradient of a soft rate over the samples of
/// `which.label()` in `samples`.
fn soft_rate<'a>(
    model: &Model,
    samples: impl Iterator<Item = &'a Sample>,
    which: RateKind,
    cfg: &SoftMetricConfig,
    stream: u64,
    with_grad: bool,
) -> Result<(f64, Option<ParameterVector>)> {
    cfg.validate()?;
    let mut noise = cfg.noise_source(stream);
    let tau = cfg.temperature;
    let mut grad = with_grad.then(|| vec![0.0; model.num_params()]);
    let mut total = 0.0;
    let mut count = 0usize;
    for z in samples.filter(|z| z.label == which.label()) {
        if z.features.len() != model.input_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                actual: z.features.len(),
                context: "feature vector",
            });
        }
        let eta = noise.as_mut().map_or(0.0, logistic_draw);
        let f = model.logit_unchecked(&z.features);
        let s = sigmoid(which.sign() * (f + eta) / tau);
        total += s;
        count += 1;
        if let Some(g) = grad.as_mut() {
            model.accumulate_logit_grad(&z.features, which.sign() * s * (1.0 - s) / tau, g);
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(format!(
            "soft {which:?} over a slice with no label-{} samples",
            which.label()
        )));
    }
    let inv = 1.0 / count as f64;
    let grad = grad.map(|mut g| {
        g.iter_mut().for_each(|x| *x *= inv);
        ParameterVector::from(g)
    });
    Ok((total * inv, grad))
}

/// Mean of `σ(f/τ)` over the positive samples of `data`, or of `σ(−f/τ)`
/// over the negatives.
pub fn soft_metric(model: &Model, data: &Dataset, which: RateKind, cfg: &SoftMetricConfig) -> Result<f64> {
    soft_rate(model, data.samples().iter(), which, cfg, 0, false).map(|r| r.0)
}

pub fn soft_tpr(model: &Model, data: &Dataset, cfg: &SoftMetricConfig) -> Result<f64> {
    soft_metric(model, data, RateKind::Tpr, cfg)
}

pub fn soft_tnr(model: &Model, data: &Dataset, cfg: &SoftMetricConfig) -> Result<f64> {
    soft_metric(model, data, RateKind::Tnr, cfg)
}

/// `∇_θ` of [`soft_metric`], averaged over the slice.
pub fn soft_metric_grad(
    model: &Model,
    data: &Dataset,
    which: RateKind,
    cfg: &SoftMetricConfig,
) -> Result<ParameterVector> {
    let (_, g) = soft_rate(model, data.samples().iter(), which, cfg, 0, true)?;
    Ok(g.expect("gradient requested"))
}

fn group_slice(val: &Dataset, group: u8) -> Result<impl Iterator<Item = &Sample>> {
    let groups = val
        .groups()
        .ok_or_else(|| Error::Config("validation data needs group attributes".into()))?;
    Ok(val
        .samples()
        .iter()
        .zip(groups)
        .filter(move |(_, &g)| g == group)
        .map(|(z, _)| z))
}

/// Signed gap `F(group 0) − F(group 1)` of a soft rate on annotated data.
/// With noise on, each group draws from its own stream.
pub fn metric_discrepancy(model: &Model, val: &Dataset, which: RateKind, cfg: &SoftMetricConfig) -> Result<f64> {
    let f0 = soft_rate(model, group_slice(val, 0)?, which, cfg, 0, false)?.0;
    let f1 = soft_rate(model, group_slice(val, 1)?, which, cfg, 1, false)?.0;
    Ok(f0 - f1)
}

/// The gap of [`metric_discrepancy`] together with its parameter gradient
/// `ḡ₀ − ḡ₁`, where `ḡ_g` is the gradient of the soft rate averaged over the
/// relevant samples of group `g`.
pub fn discrepancy_and_grad(
    model: &Model,
    val: &Dataset,
    which: RateKind,
    cfg: &SoftMetricConfig,
) -> Result<(f64, ParameterVector)> {
    let (f0, g0) = soft_rate(model, group_slice(val, 0)?, which, cfg, 0, true)?;
    let (f1, g1) = soft_rate(model, group_slice(val, 1)?, which, cfg, 1, true)?;
    let (g0, g1) = (g0.expect("gradient requested"), g1.expect("gradient requested"));
    let diff: Vec<f64> = g0.iter().zip(g1.iter()).map(|(a, b)| a - b).collect();
    Ok((f0 - f1, diff.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cells, CellCounts, FeatureSpec};
    use crate::linalg;
    use crate::model::Architecture;

    fn cfg(tau: f64) -> SoftMetricConfig {
        SoftMetricConfig {
            temperature: tau,
            noise: SoftNoise::Off,
        }
    }

    fn slope(w: f64) -> Model {
        Model::with_params(Architecture::Logistic, 1, vec![w, 0.0]).unwrap()
    }

    fn one_d(rows: &[(f64, u8)]) -> Dataset {
        Dataset::new(1, rows.iter().map(|&(x, y)| Sample::new(vec![x], y)).collect(), None).unwrap()
    }

    #[test]
    fn zero_logits_give_one_half() {
        let d = one_d(&[(1.0, 1), (2.0, 1), (-4.0, 0)]);
        for tau in [0.01, 1.0, 50.0] {
            assert_eq!(soft_tpr(&slope(0.0), &d, &cfg(tau)).unwrap(), 0.5);
            assert_eq!(soft_tnr(&slope(0.0), &d, &cfg(tau)).unwrap(), 0.5);
        }
    }

    #[test]
    fn single_positive_at_tau_ln3() {
        let tau = 0.1;
        let d = one_d(&[(tau * 3f64.ln(), 1)]);
        assert!((soft_tpr(&slope(1.0), &d, &cfg(tau)).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn small_tau_approaches_hard_rate() {
        let d = one_d(&[(0.5, 1), (-0.3, 1), (0.2, 1), (1.5, 1), (-0.4, 0), (0.8, 0)]);
        let soft = soft_tpr(&slope(1.0), &d, &cfg(0.01)).unwrap();
        assert!((soft - 0.75).abs() <= 0.01);
        let soft = soft_tnr(&slope(1.0), &d, &cfg(0.01)).unwrap();
        assert!((soft - 0.5).abs() <= 0.01);
    }

    #[test]
    fn empty_slice_and_bad_tau() {
        let d = one_d(&[(1.0, 1)]);
        assert!(matches!(
            soft_tnr(&slope(1.0), &d, &cfg(0.1)),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(soft_tpr(&slope(1.0), &d, &cfg(0.0)), Err(Error::Config(_))));
    }

    fn fd_grad(model: &Model, d: &Dataset, which: RateKind, c: &SoftMetricConfig) -> Vec<f64> {
        let h = 1e-6;
        (0..model.num_params())
            .map(|k| {
                let mut p = model.params().to_vec();
                p[k] += h;
                let up = soft_metric(&model.with_new_params(p.clone()), d, which, c).unwrap();
                p[k] -= 2.0 * h;
                let down = soft_metric(&model.with_new_params(p), d, which, c).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = generate_cells(&CellCounts([[15, 10], [12, 9]]), &FeatureSpec::standard(3), 8).unwrap();
        let c = cfg(1.0);
        for model in [
            Model::with_params(Architecture::Logistic, 3, vec![0.2, -0.1, 0.3, 0.05]).unwrap(),
            Model::init(Architecture::Mlp { hidden: 4 }, 3, 2).unwrap(),
        ] {
            for which in RateKind::BOTH {
                let g = soft_metric_grad(&model, &d, which, &c).unwrap();
                let fd = fd_grad(&model, &d, which, &c);
                assert!(linalg::relative_error(&g, &fd) <= 1e-4, "{which:?}");
            }
        }
    }

    #[test]
    fn large_tau_flattens_gradient() {
        let d = generate_cells(&CellCounts([[5, 5], [5, 5]]), &FeatureSpec::standard(2), 1).unwrap();
        let m = Model::with_params(Architecture::Logistic, 2, vec![0.5, -0.5, 0.1]).unwrap();
        let g1 = soft_metric_grad(&m, &d, RateKind::Tpr, &cfg(1.0)).unwrap();
        let big = soft_metric_grad(&m, &d, RateKind::Tpr, &cfg(1e6)).unwrap();
        assert!(big.norm() <= 1e-4 * g1.norm());
    }

    #[test]
    fn duplicated_slice_same_gradient() {
        let d = generate_cells(&CellCounts([[6, 4], [7, 3]]), &FeatureSpec::standard(2), 3).unwrap();
        let idx: Vec<usize> = (0..d.len()).chain(0..d.len()).collect();
        let twice = d.subset(&idx);
        let m = Model::with_params(Architecture::Logistic, 2, vec![0.5, -0.5, 0.1]).unwrap();
        let a = soft_metric_grad(&m, &d, RateKind::Tnr, &cfg(0.3)).unwrap();
        let b = soft_metric_grad(&m, &twice, RateKind::Tnr, &cfg(0.3)).unwrap();
        assert!(linalg::relative_error(&a, &b) <= 1e-14);
    }

    #[test]
    fn discrepancy_sign_and_antisymmetry() {
        let d = generate_cells(&CellCounts([[20, 20], [20, 20]]), &FeatureSpec::standard(2), 4).unwrap();
        let m = Model::with_params(Architecture::Logistic, 2, vec![0.7, 0.4, -0.2]).unwrap();
        let c = cfg(0.5);
        let gap = metric_discrepancy(&m, &d, RateKind::Tpr, &c).unwrap();
        let swapped = Dataset::new(
            d.dim(),
            d.samples().to_vec(),
            Some(d.groups().unwrap().iter().map(|g| 1 - g).collect()),
        )
        .unwrap();
        let flipped = metric_discrepancy(&m, &swapped, RateKind::Tpr, &c).unwrap();
        assert_eq!(gap, -flipped);
        let (value, _) = discrepancy_and_grad(&m, &d, RateKind::Tpr, &c).unwrap();
        assert_eq!(value, gap);
    }

    #[test]
    fn mirrored_groups_have_zero_gap() {
        let rows = [(0.4, 1), (-0.2, 0), (1.3, 1), (0.9, 0)];
        let mut samples = Vec::new();
        let mut groups = Vec::new();
        for g in 0..2 {
            for &(x, y) in &rows {
                samples.push(Sample::new(vec![x], y));
                groups.push(g);
            }
        }
        let d = Dataset::new(1, samples, Some(groups)).unwrap();
        for which in RateKind::BOTH {
            assert_eq!(metric_discrepancy(&slope(1.3), &d, which, &cfg(0.1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let d = one_d(&[(0.1, 1), (0.2, 1), (-0.3, 1)]);
        let noisy = SoftMetricConfig {
            temperature: 0.1,
            noise: SoftNoise::Gumbel { seed: 5 },
        };
        let a = soft_tpr(&slope(1.0), &d, &noisy).unwrap();
        assert_eq!(a, soft_tpr(&slope(1.0), &d, &noisy).unwrap());
        assert_ne!(a, soft_tpr(&slope(1.0), &d, &cfg(0.1)).unwrap());
        assert!((0.0..=1.0).contains(&a));
    }
}
