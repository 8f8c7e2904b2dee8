use std::fmt;

use solgraph::config::ConfigError;
use solgraph::data::DataError;
use solgraph::featurize::container::ContainerError;
use solgraph::interpret::InterpretError;
use solgraph::model::{CheckpointError, ModelError};
use solgraph::smiles::SmilesError;
use solgraph::train::TrainError;

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Usage(String),
    /// Exit 2.
    Data(String),
    /// Exit 3.
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<SmilesError> for Failure {
    fn from(e: SmilesError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ContainerError> for Failure {
    fn from(e: ContainerError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Config(c) => Failure::Data(format!("checkpoint config: {c}")),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyGraph(_) | ModelError::EmptyBatch | ModelError::InputWidth { .. } => {
                Failure::Data(e.to_string())
            }
            ModelError::Autodiff(_) => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Config(c) => c.into(),
            TrainError::Model(m) => m.into(),
            TrainError::EmptySplit | TrainError::TooFewFolds(_) => Failure::Data(e.to_string()),
            TrainError::Metrics(_) | TrainError::NonFiniteLoss { .. } | TrainError::NoSuccessfulTrial => {
                Failure::Numeric(e.to_string())
            }
        }
    }
}

impl From<InterpretError> for Failure {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::Model(m) => m.into(),
            InterpretError::EmptyInput => Failure::Data(e.to_string()),
            InterpretError::InvalidOption(m) => Failure::Usage(m),
            InterpretError::DegenerateSamples | InterpretError::Singular => Failure::Numeric(e.to_string()),
        }
    }
}
