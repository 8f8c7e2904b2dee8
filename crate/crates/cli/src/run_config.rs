use std::path::Path;

use solgraph::config::{ConfigError, KvDoc};
use solgraph::model::ModelConfig;
use solgraph::train::TrainConfig;

use crate::error::Failure;

pub const EXTRA_KEYS: [&str; 5] = ["cv.k", "search.trials", "search.test_folds", "local.samples", "local.top_k"];

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub k: usize,
    pub trials: usize,
    pub test_folds: Vec<usize>,
    pub local_samples: usize,
    pub local_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            k: 10,
            trials: 200,
            test_folds: vec![0],
            local_samples: 500,
            local_top_k: 15,
        }
    }
}

pub fn known_keys() -> Vec<&'static str> {
    ModelConfig::KEYS
        .iter()
        .chain(&TrainConfig::KEYS)
        .chain(&EXTRA_KEYS)
        .copied()
        .collect()
}

fn parse_folds(text: &str) -> Result<Vec<usize>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| ConfigError::BadValue {
                key: "search.test_folds".into(),
                value: text.to_string(),
            })
        })
        .collect()
}

impl RunConfig {
    /// Defaults, then the config file, then command-line overrides.
    pub fn resolve(file: Option<&Path>, overrides: &KvDoc) -> Result<RunConfig, Failure> {
        let known = known_keys();
        let mut doc = KvDoc::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let from_file = KvDoc::parse(&text)?;
            from_file.reject_unknown(&known)?;
            doc.merge(&from_file);
        }
        overrides.reject_unknown(&known)?;
        doc.merge(overrides);

        let mut run = RunConfig::default();
        run.train.read_kv(&doc)?;
        run.train.validate()?;
        doc.read_into("cv.k", &mut run.k)?;
        doc.read_into("search.trials", &mut run.trials)?;
        doc.read_into("local.samples", &mut run.local_samples)?;
        doc.read_into("local.top_k", &mut run.local_top_k)?;
        if let Some(text) = doc.get("search.test_folds") {
            run.test_folds = parse_folds(text)?;
        }
        if run.k < 3 {
            return Err(ConfigError::Invalid(format!("cv.k must be at least 3, got {}", run.k)).into());
        }
        if run.trials == 0 || run.test_folds.is_empty() {
            return Err(ConfigError::Invalid("search needs at least one trial and one test fold".into()).into());
        }
        Ok(run)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = self.train.to_kv();
        doc.set("cv.k", self.k);
        doc.set("search.trials", self.trials);
        let folds: Vec<String> = self.test_folds.iter().map(usize::to_string).collect();
        doc.set("search.test_folds", folds.join(","));
        doc.set("local.samples", self.local_samples);
        doc.set("local.top_k", self.local_top_k);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_doc_round_trips() {
        let mut o = KvDoc::new();
        o.set("model.hidden_dim", 64);
        o.set("search.test_folds", "0,3");
        let run = RunConfig::resolve(None, &o).unwrap();
        assert_eq!(run.train.model.lstm_hidden, 64);
        let again = RunConfig::resolve(None, &run.to_kv()).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn unknown_keys_fail() {
        let mut o = KvDoc::new();
        o.set("model.hiden_dim", 64);
        assert!(matches!(RunConfig::resolve(None, &o), Err(Failure::Usage(_))));
    }
}
