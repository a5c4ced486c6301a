use crate::CliError;
use fairweight::data::{generate_synthetic, load_csv_auto, split, validate_scenario, ScenarioFile};
use fairweight::influence::Solver;
use fairweight::metrics::SoftNoise;
use fairweight::model::{BatchSize, TrainConfig};
use fairweight::{Architecture, Curvature, Dataset, FairIfConfig, SoftMetricConfig, WeightPolicy};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "FAIRWEIGHT_SEED";

/// Offsets added to the base seed for each consumer of randomness.
pub mod seed_offset {
    pub const STAGE1: u64 = 0;
    pub const STAGE2: u64 = 1;
    pub const LISSA: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
}

/// A run described by one TOML file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub fairif: FairIfSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Either a scenario file, or train and validation CSVs with an optional
/// test CSV.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub scenario: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// MLP width; 64 when omitted.
    pub hidden: Option<usize>,
    pub curvature: Curvature,
}

impl ModelSection {
    pub fn architecture(&self) -> Result<Architecture, CliError> {
        match (self.kind, self.hidden) {
            (ModelKind::Logistic, Some(_)) => {
                Err(CliError::Config("`model.hidden` only applies to kind = \"mlp\"".into()))
            }
            (ModelKind::Logistic, None) => Ok(Architecture::Logistic),
            (ModelKind::Mlp, Some(hidden)) => Ok(Architecture::Mlp { hidden }),
            (ModelKind::Mlp, None) => Ok(Architecture::DEFAULT_MLP),
        }
    }
}

/// Training settings shared by both stages. Seeds are derived, not set here.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub convergence_tol: f64,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            convergence_tol: t.convergence_tol,
            l2: t.l2,
        }
    }
}

impl TrainSection {
    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            convergence_tol: self.convergence_tol,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairIfSection {
    pub lambda: f64,
    pub warm_start: bool,
    pub weight_policy: WeightPolicy,
    pub channel_weights: [f64; 2],
    pub top_k: usize,
    pub temperature: f64,
    /// Logistic noise in the soft rates.
    pub noise: bool,
    pub solver: Solver,
}

impl Default for FairIfSection {
    fn default() -> Self {
        let f = FairIfConfig::default();
        Self {
            lambda: f.lambda,
            warm_start: f.warm_start,
            weight_policy: f.weight_policy,
            channel_weights: f.channel_weights,
            top_k: f.top_k,
            temperature: f.soft.temperature,
            noise: false,
            solver: f.solver,
        }
    }
}

/// Parses `FAIRWEIGHT_SEED` when set.
pub fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not a nonnegative integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, resolves paths, applies the seed override and checks that
    /// every referenced input exists.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = resolve(base, &cfg.output_dir);
        let d = &mut cfg.data;
        for p in [&mut d.scenario, &mut d.train, &mut d.val, &mut d.test]
            .into_iter()
            .flatten()
        {
            *p = resolve(base, p);
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let d = &self.data;
        match (&d.scenario, &d.train, &d.val) {
            (Some(_), None, None) if d.test.is_none() => {}
            (Some(_), _, _) => {
                return Err(CliError::Config(
                    "`data.scenario` cannot be combined with CSV paths".into(),
                ))
            }
            (None, Some(_), Some(_)) => {}
            (None, _, _) => {
                return Err(CliError::Config(
                    "`data` needs `scenario`, or both `train` and `val`".into(),
                ))
            }
        }
        for p in [&d.scenario, &d.train, &d.val, &d.test].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        self.model.architecture()?;
        Ok(())
    }

    pub fn derived_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn fairif_config(&self) -> Result<FairIfConfig, CliError> {
        let f = &self.fairif;
        let mut solver = f.solver;
        if let Solver::Lissa(c) = &mut solver {
            c.seed = self.derived_seed(seed_offset::LISSA);
        }
        let noise = if f.noise {
            SoftNoise::Gumbel {
                seed: self.derived_seed(seed_offset::NOISE),
            }
        } else {
            SoftNoise::Off
        };
        Ok(FairIfConfig {
            architecture: self.model.architecture()?,
            stage1: self.train.with_seed(self.derived_seed(seed_offset::STAGE1)),
            stage2: self.train.with_seed(self.derived_seed(seed_offset::STAGE2)),
            warm_start: f.warm_start,
            solver,
            curvature: self.model.curvature,
            soft: SoftMetricConfig {
                temperature: f.temperature,
                noise,
            },
            lambda: f.lambda,
            weight_policy: f.weight_policy,
            channel_weights: f.channel_weights,
            top_k: f.top_k,
        })
    }

    /// Train, validation and optional test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset, Option<Dataset>), CliError> {
        let d = &self.data;
        if let Some(path) = &d.scenario {
            let [train, val, test] = scenario_splits(path)?;
            return Ok((train, val, Some(test)));
        }
        let load = |p: &PathBuf| load_csv_auto(p).map_err(CliError::from);
        let train = load(d.train.as_ref().expect("checked at load"))?;
        let val = load(d.val.as_ref().expect("checked at load"))?;
        let test = d.test.as_ref().map(load).transpose()?;
        Ok((train, val, test))
    }
}

/// Generates a scenario file's dataset and splits it with the scenario seed.
pub fn scenario_splits(path: &Path) -> Result<[Dataset; 3], CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file = ScenarioFile::parse(&text)?;
    let scenario = validate_scenario(file.scenario)?;
    let data = generate_synthetic(&scenario)?;
    Ok(split(&data, file.fractions, scenario.seed)?)
}
