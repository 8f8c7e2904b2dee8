use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{RngStream, Scalar, Tape, Var};
use crate::featurize::MoleculeGraph;

use super::{Batch, LayerWeights, ModelConfig, ModelError, ModelParams, ModelWeights};

/// Training mode draws dropout masks from the stream; evaluation is deterministic.
pub enum Mode<'a> {
    Train(&'a mut RngStream),
    Eval,
}

impl Mode<'_> {
    fn dropout<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, p: f64) -> Result<Var, ModelError> {
        Ok(match self {
            Mode::Train(rng) => tape.dropout(x, p, true, rng)?,
            Mode::Eval => x,
        })
    }
}

/// `ReLU(Â X W + b)` with the per-graph normalized adjacency `Â`.
pub fn gcn_forward<T: Scalar>(tape: &mut Tape<T>, batch: &Batch, weights: &ModelWeights<Var>) -> Result<Var, ModelError> {
    let expected = tape.shape(weights.gcn_weight).0;
    if batch.features.cols() != expected {
        return Err(ModelError::InputWidth {
            expected,
            found: batch.features.cols(),
        });
    }
    let x = tape.constant(batch.features.cast());
    let adj = Arc::new(batch.normalized_adjacency());
    let ax = tape.sparse_matmul(adj, x)?;
    let h = tape.matmul(ax, weights.gcn_weight)?;
    let h = tape.add(h, weights.gcn_bias)?;
    Ok(tape.relu(h)?)
}

/// Multi-head `softmax(Q K^T / sqrt(d_k)) V`; rows only attend within their own block.
pub fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    blocks: Arc<[Range<usize>]>,
    heads: usize,
) -> Result<Var, ModelError> {
    Ok(tape.block_attention(q, k, v, blocks, heads)?)
}

/// `X' = X + MSA(LN(X))`, `out = X' + FF(LN(X'))`.
pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    layer: &LayerWeights<Var>,
    blocks: Arc<[Range<usize>]>,
    heads: usize,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let n = tape.layer_norm(x, layer.ln1_gamma, layer.ln1_beta)?;
    let q = tape.matmul(n, layer.wq)?;
    let k = tape.matmul(n, layer.wk)?;
    let v = tape.matmul(n, layer.wv)?;
    let a = attention(tape, q, k, v, blocks, heads)?;
    let a = tape.matmul(a, layer.wo)?;
    let a = mode.dropout(tape, a, dropout)?;
    let x = tape.add(x, a)?;

    let n = tape.layer_norm(x, layer.ln2_gamma, layer.ln2_beta)?;
    let f = tape.matmul(n, layer.ff1)?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, layer.ff2)?;
    let f = mode.dropout(tape, f, dropout)?;
    Ok(tape.add(x, f)?)
}

pub fn transformer_encode<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    batch: &Batch,
    weights: &ModelWeights<Var>,
    config: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let blocks = batch.blocks();
    let mut h = x;
    for layer in &weights.layers {
        h = transformer_block(tape, h, layer, blocks.clone(), config.heads, config.dropout, mode)?;
    }
    Ok(h)
}

/// Single-layer LSTM run over each graph's atoms in order, zero initial state.
///
/// Graphs are visited longest first so the graphs still running at step `t`
/// always form a prefix of that order. Output rows are in node order.
pub fn lstm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    batch: &Batch,
    weights: &ModelWeights<Var>,
) -> Result<Var, ModelError> {
    let l = tape.shape(weights.lstm_recurrent).0;
    let counts = batch.node_counts();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]));
    let max_len = counts[order[0]];

    let xw = tape.matmul(x, weights.lstm_input)?;
    let xw = tape.add(xw, weights.lstm_bias)?;

    let mut outputs = Vec::with_capacity(max_len);
    let mut packed_row = vec![0usize; batch.num_nodes()];
    let mut row = 0;
    let mut state: Option<(Var, Var)> = None;
    for t in 0..max_len {
        let active = order.iter().take_while(|&&g| counts[g] > t).count();
        let rows: Vec<usize> = order[..active].iter().map(|&g| batch.offsets[g] + t).collect();
        for &r in &rows {
            packed_row[r] = row;
            row += 1;
        }
        let xt = tape.gather_rows(xw, &rows)?;
        let prefix: Vec<usize> = (0..active).collect();
        let (gates, c_prev) = match state {
            None => (xt, None),
            Some((h, c)) => {
                let (h, c) = if tape.shape(h).0 > active {
                    (tape.gather_rows(h, &prefix)?, tape.gather_rows(c, &prefix)?)
                } else {
                    (h, c)
                };
                let rec = tape.matmul(h, weights.lstm_recurrent)?;
                (tape.add(xt, rec)?, Some(c))
            }
        };
        let i = tape.slice_cols(gates, 0..l)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(gates, l..2 * l)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(gates, 2 * l..3 * l)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(gates, 3 * l..4 * l)?;
        let o = tape.sigmoid(o)?;
        let ig = tape.mul(i, g)?;
        let c = match c_prev {
            None => ig,
            Some(c_prev) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        outputs.push(h);
        state = Some((h, c));
    }
    let packed = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_rows(&outputs)?
    };
    Ok(tape.gather_rows(packed, &packed_row)?)
}

/// Per-graph mean of node states, then `W2 ReLU(W1 p + b1) + b2`; one row per graph.
pub fn pool_and_head<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    batch: &Batch,
    weights: &ModelWeights<Var>,
) -> Result<Var, ModelError> {
    if let Some(g) = batch.node_counts().iter().position(|&c| c == 0) {
        return Err(ModelError::EmptyGraph(g));
    }
    let pooled = tape.segment_mean(h, batch.graph_id.clone(), batch.num_graphs())?;
    let z = tape.matmul(pooled, weights.head_w1)?;
    let z = tape.add(z, weights.head_b1)?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, weights.head_w2)?;
    Ok(tape.add(z, weights.head_b2)?)
}

/// Full model; returns a `num_graphs x 1` column of normalized predictions.
pub fn yzs_forward<T: Scalar>(
    tape: &mut Tape<T>,
    batch: &Batch,
    weights: &ModelWeights<Var>,
    config: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let h = gcn_forward(tape, batch, weights)?;
    let h = transformer_encode(tape, h, batch, weights, config, mode)?;
    let h = lstm_forward(tape, h, batch, weights)?;
    pool_and_head(tape, h, batch, weights)
}

/// Evaluation-mode predictions (normalized label space), computed in parallel chunks.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    graphs: &[&MoleculeGraph],
    chunk: usize,
) -> Result<Vec<f64>, ModelError> {
    let results: Result<Vec<Vec<f64>>, ModelError> = graphs
        .par_chunks(chunk.max(1))
        .map(|part| {
            let batch = Batch::from_graphs(part)?;
            predict_batch(params, config, &batch)
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

pub(crate) fn predict_batch(params: &ModelParams, config: &ModelConfig, batch: &Batch) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::<f32>::new();
    let w = params.bind_constant(&mut tape);
    let out = yzs_forward(&mut tape, batch, &w, config, &mut Mode::Eval)?;
    Ok(tape.value(out).as_slice().iter().map(|&v| v as f64).collect())
}
