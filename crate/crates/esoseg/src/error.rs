use std::fmt;
use std::path::{Path, PathBuf};

/// Pipeline stage a core error is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    FitPriors,
    Train,
    Preprocess,
    Predict,
    Centerline,
    CtPrior,
    Weights,
    RandomWalker,
    Closing,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Phantom => "phantom",
            Stage::FitPriors => "fit-priors",
            Stage::Train => "train",
            Stage::Preprocess => "preprocess",
            Stage::Predict => "predict",
            Stage::Centerline => "centerline",
            Stage::CtPrior => "ct-prior",
            Stage::Weights => "weights",
            Stage::RandomWalker => "random-walker",
            Stage::Closing => "closing",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{stage}: {source}")]
    Core {
        stage: Stage,
        #[source]
        source: esoseg_core::Error,
    },
}

impl CliError {
    pub fn core(stage: Stage, source: esoseg_core::Error) -> Self {
        CliError::Core { stage, source }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 1 usage or configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use esoseg_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Core { source, .. } => match source {
                E::Config(_) => 1,
                E::NonFiniteGradient(_) | E::SingularSystem | E::NotConverged { .. } => 3,
                _ => 2,
            },
        }
    }
}
