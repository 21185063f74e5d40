use std::path::PathBuf;

/// Errors raised across the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate an operation's preconditions (shapes, ranges, orderings).
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure inside an iterative solver.
    #[error("solver error in {stage}: {message}")]
    Solver { stage: String, message: String },

    /// Training diverged or produced non-finite values.
    #[error("training error at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; the stage name is attached for reporting.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn solver(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Solver {
            stage: stage.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
