use rayon::prelude::*;

use crate::data::{Dataset, FoldPlan};

use super::trainer::{predict_raw, train_one, TrainAudit, TrainHistory};
use super::{mean_std, Metrics, TrainConfig, TrainError};

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    /// Fold used for early stopping in this iteration.
    pub val_fold: usize,
    pub metrics: Metrics,
    pub history: TrainHistory,
    pub audit: TrainAudit,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

impl CvReport {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let (mean_r2, std_r2) = mean_std(folds.iter().map(|f| f.metrics.r2));
        let (mean_rmse, std_rmse) = mean_std(folds.iter().map(|f| f.metrics.rmse));
        CvReport {
            folds,
            mean_r2,
            std_r2,
            mean_rmse,
            std_rmse,
        }
    }
}

/// For each test fold `i`: early-stop on fold `(i + 1) mod k`, take gradient
/// steps on the remaining folds, and score fold `i` in log S units.
///
/// `test_folds` restricts which folds are scored (all when `None`). Folds run
/// in parallel on the current rayon pool. Aggregates are means over folds.
pub fn cross_validate(
    data: &Dataset,
    plan: &FoldPlan,
    config: &TrainConfig,
    test_folds: Option<&[usize]>,
) -> Result<CvReport, TrainError> {
    plan.validate(data.len())?;
    let k = plan.k();
    if k < 3 {
        return Err(TrainError::TooFewFolds(k));
    }
    let selected: Vec<usize> = match test_folds {
        Some(f) => f.iter().copied().filter(|&i| i < k).collect(),
        None => (0..k).collect(),
    };
    let results: Result<Vec<FoldResult>, TrainError> = selected
        .par_iter()
        .map(|&fold| {
            let val_fold = (fold + 1) % k;
            let train = plan.indices_excluding(&[fold, val_fold]);
            let fold_config = TrainConfig {
                seed: config.seed.wrapping_mul(1_000_003).wrapping_add(fold as u64),
                ..config.clone()
            };
            let outcome = train_one(&fold_config, data, &train, &plan.folds[val_fold])?;
            let test = &plan.folds[fold];
            let ckpt = &outcome.checkpoint;
            let y_hat = predict_raw(&ckpt.params, &ckpt.config, &ckpt.scaler, data, test)?;
            let y: Vec<f64> = test.iter().map(|&i| data.records[i].log_s).collect();
            Ok(FoldResult {
                fold,
                val_fold,
                metrics: Metrics::compute(&y, &y_hat)?,
                history: outcome.history,
                audit: outcome.audit,
            })
        })
        .collect();
    Ok(CvReport::from_folds(results?))
}
