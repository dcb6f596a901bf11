use shs_core::classical::ClassicalError;
use shs_core::eval::EvalError;
use shs_core::geometry::GeometryError;
use shs_core::model::ModelError;
use shs_core::training::TrainError;
use thiserror::Error;

/// Failures mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Algorithm(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Algorithm(_) => 5,
        }
    }

    /// Wraps an error raised while reading or writing `path`.
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            GeometryError::DegeneratePatch(_) => CliError::Algorithm(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ClassicalError> for CliError {
    fn from(e: ClassicalError) -> Self {
        match e {
            ClassicalError::Geometry(g) => g.into(),
            ClassicalError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Algorithm(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Checkpoint(_) => CliError::Io(e.to_string()),
            ModelError::Geometry(g) => g.into(),
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Algorithm(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) => CliError::Io(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::MissingNormals(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Geometry(g) => g.into(),
            _ => CliError::Algorithm(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}
