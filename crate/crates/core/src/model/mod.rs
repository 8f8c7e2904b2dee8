//! The solubility regressor: GCN -> Transformer encoder -> LSTM -> mean pooling -> MLP.

mod batch;
pub mod checkpoint;
mod forward;
mod params;

pub use batch::Batch;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use forward::{
    attention, gcn_forward, lstm_forward, pool_and_head, predict, transformer_block, transformer_encode, yzs_forward,
    Mode,
};
pub use params::{init_params, LayerWeights, ModelParams, ModelWeights};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::config::{ConfigError, KvDoc};
use crate::featurize::layout::NODE_DIM;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("graph {0} has no atoms")]
    EmptyGraph(usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("node features have {found} columns, model expects {expected}")]
    InputWidth { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub transformer_depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub lstm_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: NODE_DIM,
            hidden_dim: 128,
            transformer_depth: 6,
            heads: 8,
            mlp_dim: 256,
            dropout: 0.2519,
            lstm_hidden: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 8] = [
        "model.in_dim",
        "model.hidden_dim",
        "model.transformer_depth",
        "model.heads",
        "model.mlp_dim",
        "model.dropout",
        "model.lstm_hidden",
        "model.seed",
    ];

    pub fn validate(&self) -> Result<(), ConfigError> {
        let extents = [
            ("in_dim", self.in_dim),
            ("hidden_dim", self.hidden_dim),
            ("transformer_depth", self.transformer_depth),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(ConfigError::Invalid(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("model.in_dim", self.in_dim);
        doc.set("model.hidden_dim", self.hidden_dim);
        doc.set("model.transformer_depth", self.transformer_depth);
        doc.set("model.heads", self.heads);
        doc.set("model.mlp_dim", self.mlp_dim);
        doc.set("model.dropout", self.dropout);
        doc.set("model.lstm_hidden", self.lstm_hidden);
        doc.set("model.seed", self.seed);
    }

    /// Overlay `model.*` keys from `doc`. Setting `hidden_dim` alone also moves
    /// `lstm_hidden` unless that key is given explicitly.
    pub fn read_kv(&mut self, doc: &KvDoc) -> Result<(), ConfigError> {
        doc.read_into("model.in_dim", &mut self.in_dim)?;
        let lstm_follows = self.lstm_hidden == self.hidden_dim;
        doc.read_into("model.hidden_dim", &mut self.hidden_dim)?;
        if lstm_follows {
            self.lstm_hidden = self.hidden_dim;
        }
        doc.read_into("model.transformer_depth", &mut self.transformer_depth)?;
        doc.read_into("model.heads", &mut self.heads)?;
        doc.read_into("model.mlp_dim", &mut self.mlp_dim)?;
        doc.read_into("model.dropout", &mut self.dropout)?;
        doc.read_into("model.lstm_hidden", &mut self.lstm_hidden)?;
        doc.read_into("model.seed", &mut self.seed)?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
    }

    #[test]
    fn invalid_configs() {
        let bad = ModelConfig {
            hidden_dim: 92,
            heads: 8,
            lstm_hidden: 92,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig {
            hidden_dim: 96,
            lstm_hidden: 64,
            dropout: 0.31,
            seed: 17,
            ..Default::default()
        };
        let mut doc = KvDoc::new();
        c.write_kv(&mut doc);
        let mut back = ModelConfig::default();
        back.read_kv(&doc).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn lstm_hidden_follows_hidden_dim() {
        let mut c = ModelConfig::default();
        c.read_kv(&KvDoc::parse("model.hidden_dim=96").unwrap()).unwrap();
        assert_eq!(c.lstm_hidden, 96);
    }
}
