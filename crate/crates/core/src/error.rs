use thiserror::Error;

use crate::config::ConfigError;
use crate::metrics::MetricError;
use crate::optimizer::OptimizerError;
use crate::providers::ProviderError;
use crate::session::SessionError;
use crate::synthgen::SynthError;

/// Any engine failure. [`Error::name`] is the stable error name reported by
/// the CLI and the service.
#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::Provider(e) => e.name(),
            Error::Config(e) => e.name(),
            Error::Synth(e) => e.name(),
            Error::Metric(e) => e.name(),
            Error::Optimizer(e) => e.name(),
            Error::Session(e) => e.name(),
        }
    }

    /// True for errors caused by the caller's input rather than by a
    /// provider, the store or the engine.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.name(),
            "InvalidConfig"
                | "SchemaError"
                | "SplitError"
                | "DatasetFormatError"
                | "BudgetTooSmall"
                | "OffsetOutOfRange"
                | "UnknownTarget"
                | "SelectionMismatch"
                | "LengthMismatch"
                | "EmptyExampleSet"
                | "EmptyValidationSet"
                | "DuplicateKey"
                | "NothingToJudge"
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
