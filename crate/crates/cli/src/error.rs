use std::path::PathBuf;

use affectmix::dataset::DatasetError;
use affectmix::evaluation::EvaluationError;
use affectmix::stratification::StratificationError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    ConfigSyntax(String),
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("stage `{stage}` has not been run for this configuration ({reason}); run `affectmix {stage}` first")]
    MissingPriorStage { stage: String, reason: String },
    #[error("artifact {path} does not match its manifest")]
    CorruptArtifact { path: PathBuf },
    #[error("invalid input data: {0}")]
    InvalidData(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// `1` for anything detected before computation starts, `2` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigRead { .. }
            | CliError::ConfigSyntax(_)
            | CliError::ConfigInvalid { .. }
            | CliError::MissingPriorStage { .. }
            | CliError::CorruptArtifact { .. }
            | CliError::InvalidData(_) => 1,
            CliError::Io { .. } | CliError::Runtime(_) => 2,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { path, source } => CliError::Io {
                context: format!("reading {}", path.display()),
                source,
            },
            other => CliError::InvalidData(other.to_string()),
        }
    }
}

impl From<StratificationError> for CliError {
    fn from(e: StratificationError) -> Self {
        match e {
            StratificationError::Io(source) => CliError::Io {
                context: "cluster or fold file".into(),
                source,
            },
            other => CliError::InvalidData(other.to_string()),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::InvalidSettings(reason) => CliError::ConfigInvalid {
                field: "cv".into(),
                reason,
            },
            EvaluationError::InvalidCorpus { .. } | EvaluationError::Dataset(_) | EvaluationError::Format(_) => {
                CliError::InvalidData(e.to_string())
            }
            EvaluationError::Io(source) => CliError::Io {
                context: "report".into(),
                source,
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}
