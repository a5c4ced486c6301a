use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("inverse-HVP iterate diverged at step {step} (norm ratio {ratio:.3e}); increase scale or damping")]
    SolverDivergence { step: usize, ratio: f64 },

    #[error("matrix is not positive definite; add damping")]
    NotPositiveDefinite,

    #[error("all sample weights were clamped to zero")]
    DegenerateWeights,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad inputs (files, schemas, configs) rather
    /// than by a failure while computing.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Scenario(_)
            | Error::Config(_)
            | Error::Shape { .. }
            | Error::Checkpoint(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
