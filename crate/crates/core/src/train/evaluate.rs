use std::io::Write;

use crate::data::Dataset;
use crate::model::Checkpoint;

use super::trainer::predict_raw;
use super::{Metrics, TrainError};

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub smiles: String,
    pub y: f64,
    pub y_hat: f64,
    /// `y_hat - y`.
    pub error: f64,
}

/// Half-open bin `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<PredictionRow>,
    pub metrics: Metrics,
    pub mean_error: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Bins of fixed `width` aligned to multiples of `width`, spanning all values.
pub fn error_histogram(errors: &[f64], width: f64) -> Vec<HistogramBin> {
    let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (min / width).floor() as i64;
    let last = (max / width).floor() as i64;
    let mut bins: Vec<HistogramBin> = (first..=last)
        .map(|i| HistogramBin {
            low: i as f64 * width,
            high: (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for e in finite {
        let i = ((e / width).floor() as i64 - first) as usize;
        bins[i].count += 1;
    }
    bins
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<Evaluation, TrainError> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let y_hat = predict_raw(&checkpoint.params, &checkpoint.config, &checkpoint.scaler, data, &indices)?;
    let y = data.labels();
    let metrics = Metrics::compute(&y, &y_hat)?;
    let rows: Vec<PredictionRow> = data
        .records
        .iter()
        .zip(&y_hat)
        .map(|(r, &p)| PredictionRow {
            smiles: r.smiles.clone(),
            y: r.log_s,
            y_hat: p,
            error: p - r.log_s,
        })
        .collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(Evaluation {
        histogram: error_histogram(&errors, HISTOGRAM_BIN_WIDTH),
        rows,
        metrics,
        mean_error,
    })
}

impl Evaluation {
    /// `smiles,y,y_hat,error`.
    pub fn write_predictions<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["smiles", "y", "y_hat", "error"])?;
        for r in &self.rows {
            w.write_record([r.smiles.clone(), r.y.to_string(), r.y_hat.to_string(), r.error.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `bin_low,bin_high,count`.
    pub fn write_histogram<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "count"])?;
        for b in &self.histogram {
            w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
