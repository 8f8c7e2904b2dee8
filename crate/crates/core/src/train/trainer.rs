use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::autodiff::{Matrix, RngStream, Tape};
use crate::data::{Dataset, LabelScaler};
use crate::featurize::MoleculeGraph;
use crate::model::{init_params, predict, yzs_forward, Batch, Checkpoint, Mode, ModelParams};

use super::{rmse, TrainConfig, TrainError};

/// Indices (into the dataset) that influenced a training run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainAudit {
    pub gradient_indices: BTreeSet<usize>,
    pub scaler_indices: BTreeSet<usize>,
    pub validation_indices: BTreeSet<usize>,
}

impl TrainAudit {
    /// True when none of `indices` touched a gradient step or the scaler fit.
    pub fn untouched(&self, indices: &[usize]) -> bool {
        indices
            .iter()
            .all(|i| !self.gradient_indices.contains(i) && !self.scaler_indices.contains(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean MSE over the epoch's batches, normalized label space.
    pub train_loss: f64,
    /// Validation RMSE in log S units.
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub stopped_early: bool,
    pub wall_time: Duration,
}

impl TrainHistory {
    /// Per-epoch rows, omitting wall time, for equality checks across runs.
    pub fn records(&self) -> &[EpochRecord] {
        &self.epochs
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub audit: TrainAudit,
}

/// Prediction chunk size used for validation passes.
pub(crate) const EVAL_CHUNK: usize = 64;

/// De-normalized predictions for `indices`.
pub(crate) fn predict_raw(
    params: &ModelParams,
    ckpt_config: &crate::model::ModelConfig,
    scaler: &LabelScaler,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let graphs: Vec<&MoleculeGraph> = indices.iter().map(|&i| &data.records[i].graph).collect();
    let z = predict(params, ckpt_config, &graphs, EVAL_CHUNK)?;
    Ok(z.into_iter().map(|v| scaler.invert(v)).collect())
}

/// Fit on `train`, early-stop on `val`, return the best-epoch weights.
///
/// Labels are z-scored with statistics from `train` only; the loss is MSE on
/// those normalized labels and updates use Adam.
pub fn train_one(config: &TrainConfig, data: &Dataset, train: &[usize], val: &[usize]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let start = Instant::now();
    let mut audit = TrainAudit::default();
    let train_labels: Vec<f64> = train.iter().map(|&i| data.records[i].log_s).collect();
    audit.scaler_indices.extend(train.iter().copied());
    let scaler = LabelScaler::fit(&train_labels)?;
    audit.validation_indices.extend(val.iter().copied());
    let val_labels: Vec<f64> = val.iter().map(|&i| data.records[i].log_s).collect();

    let model = &config.model;
    let mut params = init_params(model);
    let mut adam = super::Adam::new(&params, config.lr);
    let root = RngStream::new(config.seed);
    let mut shuffle_rng = root.split(1);
    let mut dropout_rng = root.split(2);

    let mut order = train.to_vec();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let graphs: Vec<&MoleculeGraph> = chunk.iter().map(|&i| &data.records[i].graph).collect();
            let batch = Batch::from_graphs(&graphs)?;
            let targets: Vec<f32> = chunk.iter().map(|&i| scaler.apply(data.records[i].log_s) as f32).collect();
            audit.gradient_indices.extend(chunk.iter().copied());

            let mut tape = Tape::<f32>::new();
            let w = params.bind(&mut tape);
            let pred = yzs_forward(&mut tape, &batch, &w, model, &mut Mode::Train(&mut dropout_rng))?;
            let target = tape.constant(Matrix::from_vec(chunk.len(), 1, targets));
            let loss = tape.mse(pred, target)?;
            let loss_value = tape.value(loss).get(0, 0) as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            let mut grads = tape.backward(loss)?;
            let g = w.map(|v| grads.take_or_zeros(*v, tape.shape(*v)));
            if !g.all_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut params, &g);
            loss_sum += loss_value;
            batches += 1;
        }

        let val_pred = predict_raw(&params, model, &scaler, data, val)?;
        let val_rmse = rmse(&val_labels, &val_pred)?;
        if !val_rmse.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: batches });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_rmse,
        });
        if val_rmse < best.1 {
            best = (params.clone(), val_rmse, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (params, best_val_rmse, best_epoch) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: model.clone(),
            scaler,
            params,
        },
        history: TrainHistory {
            epochs,
            best_epoch,
            best_val_rmse,
            stopped_early,
            wall_time: start.elapsed(),
        },
        audit,
    })
}
