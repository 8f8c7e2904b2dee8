use rayon::prelude::*;

use crate::autodiff::RngStream;
use crate::data::{Dataset, FoldPlan};

use super::{cross_validate, TrainConfig, TrainError};

/// Search ranges: `uniform` pairs, `(low, high, step)` quantized ranges and choice lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub dim: (usize, usize, usize),
    pub dropout: (f64, f64),
    pub depth: Vec<usize>,
    pub heads: Vec<usize>,
    pub batch_size: (usize, usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (0.0003, 0.0007),
            dim: (92, 128, 2),
            dropout: (0.25, 0.35),
            depth: vec![2, 4, 6, 8, 12],
            heads: vec![4, 8, 12, 16],
            batch_size: (24, 72, 8),
        }
    }
}

/// `round(U(low, high) / step) * step`.
fn quniform(rng: &mut RngStream, (low, high, step): (usize, usize, usize)) -> usize {
    let u = rng.uniform_in(low as f64, high as f64);
    ((u / step as f64).round() as usize) * step
}

impl SearchSpace {
    /// Draw one configuration on top of `base`. `(dim, heads)` pairs are redrawn
    /// until `dim` splits evenly into heads.
    pub fn sample(&self, rng: &mut RngStream, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.lr = rng.uniform_in(self.lr.0, self.lr.1);
        c.model.dropout = rng.uniform_in(self.dropout.0, self.dropout.1);
        c.model.transformer_depth = self.depth[rng.below(self.depth.len())];
        c.batch_size = quniform(rng, self.batch_size);
        loop {
            let dim = quniform(rng, self.dim);
            let heads = self.heads[rng.below(self.heads.len())];
            if dim.is_multiple_of(heads) {
                c.model.hidden_dim = dim;
                c.model.lstm_hidden = dim;
                c.model.heads = heads;
                break;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrainConfig,
    /// `(mean RMSE, mean R2)` over the scored folds, or the failure message.
    pub outcome: Result<(f64, f64), String>,
}

impl TrialRecord {
    pub const CSV_HEADER: &'static str = "trial,lr,dim,dropout,depth,heads,batch_size,mean_rmse,mean_r2,status";

    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let (rmse, r2, status) = match &self.outcome {
            Ok((rmse, r2)) => (rmse.to_string(), r2.to_string(), "ok".to_string()),
            Err(e) => (String::new(), String::new(), format!("\"failed: {}\"", e.replace('"', "'"))),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            c.lr,
            c.model.hidden_dim,
            c.model.dropout,
            c.model.transformer_depth,
            c.model.heads,
            c.batch_size,
            rmse,
            r2,
            status
        )
    }
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub trials: usize,
    /// Folds scored in each trial's abbreviated cross-validation.
    pub test_folds: Vec<usize>,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            trials: 200,
            test_folds: vec![0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Random search. Every configuration is drawn up front from the seed, trials run
/// in parallel, and `on_trial` sees each record as it finishes. A failed trial is
/// recorded and skipped.
pub fn search_hparams(
    data: &Dataset,
    plan: &FoldPlan,
    base: &TrainConfig,
    space: &SearchSpace,
    options: &SearchOptions,
    on_trial: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<SearchResult, TrainError> {
    let mut rng = RngStream::with_stream(options.seed, 0x5EA7C4);
    let configs: Vec<TrainConfig> = (0..options.trials).map(|_| space.sample(&mut rng, base)).collect();
    let trials: Vec<TrialRecord> = configs
        .into_par_iter()
        .enumerate()
        .map(|(trial, config)| {
            let outcome = cross_validate(data, plan, &config, Some(&options.test_folds))
                .map(|r| (r.mean_rmse, r.mean_r2))
                .map_err(|e| e.to_string())
                .and_then(|(rmse, r2)| {
                    if rmse.is_finite() {
                        Ok((rmse, r2))
                    } else {
                        Err("non-finite RMSE".to_string())
                    }
                });
            let record = TrialRecord { trial, config, outcome };
            on_trial(&record);
            record
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok().map(|(rmse, _)| (t, *rmse)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial.cmp(&b.0.trial)))
        .ok_or(TrainError::NoSuccessfulTrial)?
        .0;
    Ok(SearchResult {
        best: best.config.clone(),
        best_trial: best.trial,
        trials,
    })
}
