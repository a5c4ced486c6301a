//! Bias-controlled synthetic data.
//!
//! Each (label, group) cell is a Gaussian cluster with its own mean and a
//! shared isotropic scale. The three bias kinds differ only in the cell
//! count table.

use super::{CellCounts, Dataset, GroupClassStats, Sample};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Relative tolerance when two sizes are required to be equal.
pub const SIZE_TOLERANCE: f64 = 0.05;
/// Absolute tolerance on class-conditional proportions.
pub const RATE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    GroupSizeDiscrepancy,
    GroupDistributionShift,
    ClassSizeDiscrepancy,
}

impl BiasKind {
    pub const ALL: [BiasKind; 3] = [
        BiasKind::GroupSizeDiscrepancy,
        BiasKind::GroupDistributionShift,
        BiasKind::ClassSizeDiscrepancy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BiasKind::GroupSizeDiscrepancy => "group_size_discrepancy",
            BiasKind::GroupDistributionShift => "group_distribution_shift",
            BiasKind::ClassSizeDiscrepancy => "class_size_discrepancy",
        }
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match normalized.as_str() {
            "groupsizediscrepancy" => Ok(BiasKind::GroupSizeDiscrepancy),
            "groupdistributionshift" => Ok(BiasKind::GroupDistributionShift),
            "classsizediscrepancy" => Ok(BiasKind::ClassSizeDiscrepancy),
            _ => Err(Error::Scenario(format!("unknown bias kind {s:?}"))),
        }
    }
}

/// Geometry of the default Gaussian clusters.
///
/// Class means sit at `±class_separation / 2` along coordinate 0. Group 1
/// gets `group_offset` on coordinate 1 so group membership is learnable,
/// both of its clusters move by `group1_shift` along coordinate 0, and its
/// class axis is rotated by `group1_rotation_deg` towards coordinate 2 and
/// scaled by `group1_signal`. A boundary fitted mostly to group 0 therefore
/// misplaces group 1's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterLayout {
    pub class_separation: f64,
    pub group_offset: f64,
    /// Displacement of both group-1 clusters along coordinate 0.
    pub group1_shift: f64,
    pub group1_rotation_deg: f64,
    pub group1_signal: f64,
    pub noise_scale: f64,
}

impl Default for ClusterLayout {
    fn default() -> Self {
        Self {
            class_separation: 3.0,
            group_offset: 3.0,
            group1_shift: -1.5,
            group1_rotation_deg: 0.0,
            group1_signal: 1.0,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Cluster means indexed `[label][group]`.
    pub means: [[Vec<f64>; 2]; 2],
    /// Standard deviation of the isotropic noise.
    pub scale: f64,
}

impl FeatureSpec {
    pub fn with_layout(dim: usize, layout: &ClusterLayout) -> Self {
        let half = layout.class_separation / 2.0;
        let theta = layout.group1_rotation_deg.to_radians();
        let mean = |label: u8, group: u8| {
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let mut m = vec![0.0; dim];
            if group == 0 {
                m[0] = sign * half;
            } else {
                let amp = sign * half * layout.group1_signal;
                m[0] = amp * theta.cos() + layout.group1_shift;
                if dim > 2 {
                    m[2] = amp * theta.sin();
                }
                if dim > 1 {
                    m[1] = layout.group_offset;
                }
            }
            m
        };
        Self {
            means: [[mean(0, 0), mean(0, 1)], [mean(1, 0), mean(1, 1)]],
            scale: layout.noise_scale,
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self::with_layout(dim, &ClusterLayout::default())
    }

    pub fn dim(&self) -> usize {
        self.means[0][0].len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Scenario("feature dimension must be positive".into()));
        }
        if self.means.iter().flatten().any(|m| m.len() != d) {
            return Err(Error::Scenario("cluster means differ in dimension".into()));
        }
        if self.means.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Scenario("cluster means must be finite".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Scenario("noise scale must be positive".into()));
        }
        for g in 0..2 {
            if self.means[0][g] == self.means[1][g] {
                return Err(Error::Scenario(format!(
                    "class means coincide in group {g}; labels would be unlearnable"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScenario {
    pub kind: BiasKind,
    pub cells: CellCounts,
    pub features: FeatureSpec,
    pub seed: u64,
}

fn round(x: f64) -> usize {
    x.round().max(0.0) as usize
}

impl BiasScenario {
    /// Both classes have `per_class` samples; `minority_fraction` of each
    /// class belongs to group 1.
    pub fn group_size_discrepancy(per_class: usize, minority_fraction: f64, features: FeatureSpec, seed: u64) -> Self {
        let minority = round(per_class as f64 * minority_fraction);
        let majority = per_class - minority;
        Self {
            kind: BiasKind::GroupSizeDiscrepancy,
            cells: CellCounts([[majority, minority], [majority, minority]]),
            features,
            seed,
        }
    }

    /// Both classes have `per_class` samples; `majority_fraction` of class 0
    /// is in group 0 and the same fraction of class 1 is in group 1.
    pub fn group_distribution_shift(
        per_class: usize,
        majority_fraction: f64,
        features: FeatureSpec,
        seed: u64,
    ) -> Self {
        let major = round(per_class as f64 * majority_fraction);
        let minor = per_class - major;
        Self {
            kind: BiasKind::GroupDistributionShift,
            cells: CellCounts([[major, minor], [minor, major]]),
            features,
            seed,
        }
    }

    /// Class 1 has `class1_ratio` times as many samples as class 0; every
    /// class is split evenly between the groups.
    pub fn class_size_discrepancy(class0_size: usize, class1_ratio: f64, features: FeatureSpec, seed: u64) -> Self {
        let c0 = class0_size / 2;
        let c1 = round(class0_size as f64 * class1_ratio / 2.0);
        Self {
            kind: BiasKind::ClassSizeDiscrepancy,
            cells: CellCounts([[c0, c0], [c1, c1]]),
            features,
            seed,
        }
    }

    /// Builder for a kind at a total sample budget with the bias strengths
    /// used throughout the test-suite (15% minority, 85/15 shift, 1:4 classes).
    pub fn standard(kind: BiasKind, total: usize, features: FeatureSpec, seed: u64) -> Self {
        match kind {
            BiasKind::GroupSizeDiscrepancy => Self::group_size_discrepancy(total / 2, 0.15, features, seed),
            BiasKind::GroupDistributionShift => Self::group_distribution_shift(total / 2, 0.85, features, seed),
            BiasKind::ClassSizeDiscrepancy => {
                Self::class_size_discrepancy(round(total as f64 * 0.8), 0.25, features, seed)
            }
        }
    }

    pub fn stats(&self) -> Result<GroupClassStats> {
        GroupClassStats::from_cells(&self.cells)
    }
}

pub(crate) fn sizes_equal(a: usize, b: usize) -> bool {
    let hi = a.max(b) as f64;
    hi == 0.0 || (a as f64 - b as f64).abs() <= SIZE_TOLERANCE * hi
}

/// Checks the structural constraints of the scenario's declared bias kind.
pub fn validate_scenario(s: BiasScenario) -> Result<BiasScenario> {
    s.features.check()?;
    let classes = s.cells.class_sizes();
    let groups = s.cells.group_sizes();
    let stats =
        GroupClassStats::from_cells(&s.cells).map_err(|_| Error::Scenario("both groups must be nonempty".into()))?;
    let violation = |what: String| Err(Error::Scenario(format!("{}: {what}", s.kind)));

    let same_distribution = (stats.alpha - stats.beta).abs() <= RATE_TOLERANCE;
    match s.kind {
        BiasKind::GroupSizeDiscrepancy => {
            if !sizes_equal(classes[0], classes[1]) {
                return violation(format!("class sizes {classes:?} must be equal"));
            }
            if !same_distribution {
                return violation(format!(
                    "per-group class distributions must match (alpha={:.4}, beta={:.4})",
                    stats.alpha, stats.beta
                ));
            }
        }
        BiasKind::GroupDistributionShift => {
            if !sizes_equal(groups[0], groups[1]) {
                return violation(format!("group sizes {groups:?} must be equal"));
            }
            if !sizes_equal(classes[0], classes[1]) {
                return violation(format!("class sizes {classes:?} must be equal"));
            }
            if (stats.alpha + stats.beta - 1.0).abs() > RATE_TOLERANCE {
                return violation(format!(
                    "alpha must equal 1 - beta (alpha={:.4}, beta={:.4})",
                    stats.alpha, stats.beta
                ));
            }
        }
        BiasKind::ClassSizeDiscrepancy => {
            if !sizes_equal(groups[0], groups[1]) {
                return violation(format!("group sizes {groups:?} must be equal"));
            }
            if !same_distribution {
                return violation(format!(
                    "per-group class distributions must match (alpha={:.4}, beta={:.4})",
                    stats.alpha, stats.beta
                ));
            }
            if sizes_equal(classes[0], classes[1]) {
                return violation(format!("class sizes {classes:?} must differ"));
            }
        }
    }
    Ok(s)
}

/// Draws exactly `cells[(y, s)]` samples from each cluster, then shuffles
/// the rows. Deterministic in `seed`.
pub fn generate_cells(cells: &CellCounts, features: &FeatureSpec, seed: u64) -> Result<Dataset> {
    features.check()?;
    let dim = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(Sample, u8)> = Vec::with_capacity(cells.total());
    for label in 0..2u8 {
        for group in 0..2u8 {
            let mean = &features.means[label as usize][group as usize];
            for _ in 0..cells.get(label, group) {
                let x: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + features.scale * z
                    })
                    .collect();
                rows.push((Sample::new(x, label), group));
            }
        }
    }
    rows.shuffle(&mut rng);
    let (samples, groups): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Dataset::new(dim, samples, Some(groups))
}

pub fn generate_synthetic(s: &BiasScenario) -> Result<Dataset> {
    let s = validate_scenario(s.clone())?;
    generate_cells(&s.cells, &s.features, s.seed)
}

/// Flat `key = value` scenario description, as read by the CLI.
///
/// Required keys: `kind`, `count_y0_s0`, `count_y0_s1`, `count_y1_s0`,
/// `count_y1_s1`, `seed`, `dim`. Optional: the [`ClusterLayout`] fields and
/// `train_fraction`, `val_fraction`, `test_fraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: BiasScenario,
    pub layout: ClusterLayout,
    pub fractions: [f64; 3],
}

impl ScenarioFile {
    pub fn new(scenario: BiasScenario, layout: ClusterLayout) -> Self {
        Self {
            scenario,
            layout,
            fractions: [0.6, 0.2, 0.2],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut counts: [[Option<usize>; 2]; 2] = [[None; 2]; 2];
        let mut seed = None;
        let mut dim = None;
        let mut layout = ClusterLayout::default();
        let mut fractions = [0.6, 0.2, 0.2];

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Scenario(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Scenario(format!("key `{key}`: {what} (got {value:?})"));
            let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
            let int = || value.parse::<u64>().map_err(|_| bad("expected a nonnegative integer"));

            match key {
                "kind" => kind = Some(value.parse::<BiasKind>().map_err(|_| bad("unknown bias kind"))?),
                "seed" => seed = Some(int()?),
                "dim" => dim = Some(int()? as usize),
                "class_separation" => layout.class_separation = float()?,
                "group_offset" => layout.group_offset = float()?,
                "group1_shift" => layout.group1_shift = float()?,
                "group1_rotation_deg" => layout.group1_rotation_deg = float()?,
                "group1_signal" => layout.group1_signal = float()?,
                "noise_scale" => layout.noise_scale = float()?,
                "train_fraction" => fractions[0] = float()?,
                "val_fraction" => fractions[1] = float()?,
                "test_fraction" => fractions[2] = float()?,
                _ => {
                    let cell = key
                        .strip_prefix("count_y")
                        .and_then(|rest| rest.split_once("_s"))
                        .and_then(|(y, s)| Some((y.parse::<usize>().ok()?, s.parse::<usize>().ok()?)))
                        .filter(|&(y, s)| y < 2 && s < 2);
                    match cell {
                        Some((y, s)) => counts[y][s] = Some(int()? as usize),
                        None => return Err(Error::Scenario(format!("unknown key `{key}`"))),
                    }
                }
            }
        }

        let missing = |k: &str| Error::Scenario(format!("missing key `{k}`"));
        let mut cells = [[0usize; 2]; 2];
        for y in 0..2 {
            for s in 0..2 {
                cells[y][s] = counts[y][s].ok_or_else(|| missing(&format!("count_y{y}_s{s}")))?;
            }
        }
        let dim = dim.ok_or_else(|| missing("dim"))?;
        if dim == 0 {
            return Err(Error::Scenario("key `dim`: must be positive".into()));
        }
        Ok(Self {
            scenario: BiasScenario {
                kind: kind.ok_or_else(|| missing("kind"))?,
                cells: CellCounts(cells),
                features: FeatureSpec::with_layout(dim, &layout),
                seed: seed.ok_or_else(|| missing("seed"))?,
            },
            layout,
            fractions,
        })
    }

    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let l = &self.layout;
        let mut out = format!("kind = {}\n", s.kind);
        for y in 0..2u8 {
            for g in 0..2u8 {
                out += &format!("count_y{y}_s{g} = {}\n", s.cells.get(y, g));
            }
        }
        out += &format!("seed = {}\ndim = {}\n", s.seed, s.features.dim());
        out += &format!(
            "class_separation = {:?}\ngroup_offset = {:?}\ngroup1_shift = {:?}\ngroup1_rotation_deg = {:?}\ngroup1_signal = {:?}\nnoise_scale = {:?}\n",
            l.class_separation,
            l.group_offset,
            l.group1_shift,
            l.group1_rotation_deg,
            l.group1_signal,
            l.noise_scale
        );
        out += &format!(
            "train_fraction = {:?}\nval_fraction = {:?}\ntest_fraction = {:?}\n",
            self.fractions[0], self.fractions[1], self.fractions[2]
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(kind: BiasKind, cells: [[usize; 2]; 2]) -> BiasScenario {
        BiasScenario {
            kind,
            cells: CellCounts(cells),
            features: FeatureSpec::standard(4),
            seed: 1,
        }
    }

    #[test]
    fn ci_mnist_tables_validate() {
        use BiasKind::*;
        assert!(validate_scenario(scenario(GroupSizeDiscrepancy, [[30245, 5337], [29257, 5161]])).is_ok());
        assert!(validate_scenario(scenario(GroupDistributionShift, [[30245, 5337], [5163, 29255]])).is_ok());
        assert!(validate_scenario(scenario(ClassSizeDiscrepancy, [[17791, 17791], [4303, 4303]])).is_ok());
        // The published table row, unequal by two in the last cell.
        assert!(validate_scenario(scenario(ClassSizeDiscrepancy, [[17791, 17791], [4303, 4301]])).is_ok());
    }

    #[test]
    fn structural_violations_are_rejected() {
        use BiasKind::*;
        let err = validate_scenario(scenario(ClassSizeDiscrepancy, [[17791, 8000], [4303, 4303]])).unwrap_err();
        assert!(err.to_string().contains("group sizes"), "{err}");
        assert!(validate_scenario(scenario(GroupSizeDiscrepancy, [[30245, 5337], [5163, 29255]])).is_err());
        assert!(validate_scenario(scenario(GroupDistributionShift, [[30245, 5337], [29257, 5161]])).is_err());
        assert!(validate_scenario(scenario(ClassSizeDiscrepancy, [[100, 100], [100, 100]])).is_err());
        assert!(validate_scenario(scenario(GroupSizeDiscrepancy, [[10, 0], [10, 0]])).is_err());
    }

    #[test]
    fn generated_counts_match_table() {
        let s = BiasScenario::group_size_discrepancy(1000, 0.15, FeatureSpec::standard(5), 3);
        let d = generate_synthetic(&s).unwrap();
        assert_eq!(d.cell_counts().unwrap(), s.cells);
        let cells = d.cell_counts().unwrap();
        for y in 0..2 {
            let class = cells.class_sizes()[y] as f64;
            assert_eq!(cells.get(y as u8, 1) as f64 / class, 0.15);
        }
    }

    #[test]
    fn distribution_shift_alpha_beta() {
        let s = BiasScenario::group_distribution_shift(1000, 0.85, FeatureSpec::standard(5), 3);
        let stats = validate_scenario(s).unwrap().stats().unwrap();
        assert!((stats.alpha - 0.15).abs() < 1e-12);
        assert!((stats.beta - 0.85).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = BiasScenario::standard(BiasKind::ClassSizeDiscrepancy, 500, FeatureSpec::standard(6), 9);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 10;
        assert_ne!(generate_synthetic(&other).unwrap(), a);
    }

    #[test]
    fn scenario_file_round_trip_and_errors() {
        let s = BiasScenario::standard(BiasKind::GroupSizeDiscrepancy, 400, FeatureSpec::standard(3), 5);
        let file = ScenarioFile::new(s, ClusterLayout::default());
        let parsed = ScenarioFile::parse(&file.to_text()).unwrap();
        assert_eq!(parsed, file);

        let err = ScenarioFile::parse("kind = group_size_discrepancy\ncount_y9_s0 = 3\n").unwrap_err();
        assert!(err.to_string().contains("count_y9_s0"), "{err}");
        let err = ScenarioFile::parse("seed = abc\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let err = ScenarioFile::parse("kind = group_size_discrepancy\n").unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn coincident_class_means_rejected() {
        let mut s = scenario(BiasKind::GroupSizeDiscrepancy, [[10, 2], [10, 2]]);
        s.features.means[1][0] = s.features.means[0][0].clone();
        assert!(validate_scenario(s).is_err());
    }
}
