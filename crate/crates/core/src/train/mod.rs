//! Training loop, regression metrics, cross-validation and hyperparameter search.

mod cv;
mod evaluate;
mod metrics;
mod optimizer;
mod search;
mod trainer;

pub use cv::{cross_validate, CvReport, FoldResult};
pub use evaluate::{error_histogram, evaluate, Evaluation, HistogramBin, PredictionRow, HISTOGRAM_BIN_WIDTH};
pub use metrics::{mean_std, r2, rmse, Metrics, MetricsError};
pub use optimizer::Adam;
pub use search::{search_hparams, SearchOptions, SearchResult, SearchSpace, TrialRecord};
pub use trainer::{train_one, EpochRecord, TrainAudit, TrainHistory, TrainOutcome};

use thiserror::Error;

use crate::config::{ConfigError, KvDoc};
use crate::data::DataError;
use crate::model::{ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training and validation sets must be non-empty")]
    EmptySplit,
    #[error("cross-validation needs at least 3 folds, got {0}")]
    TooFewFolds(usize),
    #[error("every search trial failed")]
    NoSuccessfulTrial,
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 5e-4,
            batch_size: 32,
            epochs: 300,
            patience: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 5] = ["train.lr", "train.batch_size", "train.epochs", "train.patience", "train.seed"];

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(ConfigError::Invalid("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        self.model.write_kv(doc);
        doc.set("train.lr", self.lr);
        doc.set("train.batch_size", self.batch_size);
        doc.set("train.epochs", self.epochs);
        doc.set("train.patience", self.patience);
        doc.set("train.seed", self.seed);
    }

    pub fn read_kv(&mut self, doc: &KvDoc) -> Result<(), ConfigError> {
        self.model.read_kv(doc)?;
        doc.read_into("train.lr", &mut self.lr)?;
        doc.read_into("train.batch_size", &mut self.batch_size)?;
        doc.read_into("train.epochs", &mut self.epochs)?;
        doc.read_into("train.patience", &mut self.patience)?;
        doc.read_into("train.seed", &mut self.seed)?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        self.write_kv(&mut doc);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            lr: 3.3e-4,
            batch_size: 48,
            seed: 5,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        back.read_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
