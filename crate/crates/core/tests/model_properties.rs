use std::sync::Arc;

use proptest::prelude::*;
use solgraph::autodiff::check::check_gradients;
use solgraph::autodiff::{Matrix, RngStream, Tape, Var};
use solgraph::featurize::{featurize_smiles, MoleculeGraph};
use solgraph::model::{
    attention, gcn_forward, init_params, lstm_forward, pool_and_head, transformer_block, transformer_encode,
    yzs_forward, Batch, ModelConfig, ModelParams, ModelWeights, Mode,
};

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        heads: 2,
        transformer_depth: 2,
        mlp_dim: 6,
        lstm_hidden: 5,
        dropout: 0.3,
        seed: 11,
        ..Default::default()
    }
}

fn graph(s: &str) -> MoleculeGraph {
    featurize_smiles(s, Some(0.0)).unwrap()
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = RngStream::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
}

fn forward_f64(params: &ModelParams, config: &ModelConfig, graphs: &[&MoleculeGraph]) -> Vec<f64> {
    let batch = Batch::from_graphs(graphs).unwrap();
    let mut tape = Tape::<f64>::new();
    let w = params.cast::<f64>().bind_constant(&mut tape);
    let out = yzs_forward(&mut tape, &batch, &w, config, &mut Mode::Eval).unwrap();
    tape.value(out).as_slice().to_vec()
}

/// Reorder atoms of `g` so that new atom `i` is old atom `perm[i]`.
fn permute(g: &MoleculeGraph, perm: &[usize]) -> MoleculeGraph {
    let mut inverse = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let rows: Vec<Vec<f32>> = perm.iter().map(|&old| g.node_features.row(old).to_vec()).collect();
    MoleculeGraph {
        node_features: Matrix::from_rows(&rows),
        edge_index: [
            g.edge_index[0].iter().map(|&i| inverse[i]).collect(),
            g.edge_index[1].iter().map(|&i| inverse[i]).collect(),
        ],
        ..g.clone()
    }
}

#[test]
fn gcn_single_atom_identity_weight() {
    let config = ModelConfig {
        hidden_dim: 92,
        lstm_hidden: 92,
        heads: 4,
        ..small_config()
    };
    let mut params = init_params(&config).cast::<f64>();
    params.gcn_weight = Matrix::identity(92);
    params.gcn_bias = random(1, 92, 3);
    let g = graph("[NH4+]");
    let batch = Batch::from_graphs(&[&g]).unwrap();
    let mut tape = Tape::new();
    let w = params.bind_constant(&mut tape);
    let h = gcn_forward(&mut tape, &batch, &w).unwrap();
    for c in 0..92 {
        let x = g.node_features.get(0, c) as f64 + params.gcn_bias.get(0, c);
        assert_eq!(tape.value(h).get(0, c), x.max(0.0));
    }
}

#[test]
fn gcn_benzene_rows_identical() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    let g = graph("c1ccccc1");
    let batch = Batch::from_graphs(&[&g]).unwrap();
    let mut tape = Tape::new();
    let w = params.bind_constant(&mut tape);
    let h = gcn_forward(&mut tape, &batch, &w).unwrap();
    let first = tape.value(h).row(0).to_vec();
    for r in 1..6 {
        assert_eq!(tape.value(h).row(r), first.as_slice());
    }
}

#[test]
fn gcn_permutation_equivariance() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    let g = graph("CC(=O)Nc1ccc(O)cc1");
    let n = g.num_atoms();
    let mut rng = RngStream::new(5);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let pg = permute(&g, &perm);
        let run = |g: &MoleculeGraph| {
            let batch = Batch::from_graphs(&[g]).unwrap();
            let mut tape = Tape::new();
            let w = params.bind_constant(&mut tape);
            let h = gcn_forward(&mut tape, &batch, &w).unwrap();
            tape.value(h).clone()
        };
        let (a, b) = (run(&g), run(&pg));
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..config.hidden_dim {
                assert!((b.get(new, c) - a.get(old, c)).abs() <= 1e-6);
            }
        }
    }
}

fn run_attention(q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>, blocks: Vec<std::ops::Range<usize>>, heads: usize) -> (Matrix<f64>, Vec<Matrix<f64>>) {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = attention(&mut tape, qv, kv, vv, Arc::from(blocks), heads).unwrap();
    (tape.value(out).clone(), tape.attention_weights(out).unwrap().to_vec())
}

#[test]
fn attention_single_row_returns_v() {
    let v = random(1, 4, 1);
    let (out, _) = run_attention(&random(1, 4, 2), &random(1, 4, 3), &v, vec![0..1], 2);
    assert_eq!(out, v);
}

#[test]
fn attention_zero_query_averages_v_per_graph() {
    let v = random(5, 4, 4);
    let (out, probs) = run_attention(&Matrix::zeros(5, 4), &random(5, 4, 5), &v, vec![0..2, 2..5], 2);
    for (rows, r) in [(0..2, 0), (0..2, 1), (2..5, 2), (2..5, 4)] {
        for c in 0..4 {
            let mean = rows.clone().map(|i| v.get(i, c)).sum::<f64>() / rows.len() as f64;
            assert!((out.get(r, c) - mean).abs() < 1e-12);
        }
    }
    assert!(probs.iter().all(|p| p.as_slice().iter().all(|&w| (w - 1.0 / p.cols() as f64).abs() < 1e-12)));
}

#[test]
fn attention_masking_matches_separate_graphs() {
    let (q, k, v) = (random(7, 6, 6), random(7, 6, 7), random(7, 6, 8));
    let (joint, _) = run_attention(&q, &k, &v, vec![0..3, 3..7], 3);
    let take = |m: &Matrix<f64>, rows: std::ops::Range<usize>| {
        Matrix::from_rows(&rows.map(|r| m.row(r).to_vec()).collect::<Vec<_>>())
    };
    for rows in [0..3, 3..7] {
        let (alone, _) = run_attention(&take(&q, rows.clone()), &take(&k, rows.clone()), &take(&v, rows.clone()), vec![0..rows.len()], 3);
        for (i, r) in rows.enumerate() {
            assert_eq!(joint.row(r), alone.row(i));
        }
    }
}

#[test]
fn transformer_zero_weights_is_identity_and_preserves_shape() {
    let config = small_config();
    let mut params = init_params(&config).cast::<f64>();
    for l in &mut params.layers {
        for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.ff1, &mut l.ff2] {
            *m = Matrix::zeros(m.rows(), m.cols());
        }
    }
    for n in [1, 4, 9] {
        let x = random(n, 8, n as u64);
        let mut tape = Tape::new();
        let w = params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let y = transformer_block(&mut tape, xv, &w.layers[0], Arc::from(vec![0..n]), 2, 0.0, &mut Mode::Eval).unwrap();
        assert_eq!(tape.value(y), &x);
    }
}

#[test]
fn encoder_depth_changes_output() {
    let g = graph("CCN(CC)CC");
    let batch = Batch::from_graphs(&[&g]).unwrap();
    let x = random(batch.num_nodes(), 8, 12);
    let run = |depth: usize| {
        let config = ModelConfig { transformer_depth: depth, ..small_config() };
        let mut params = init_params(&ModelConfig { transformer_depth: 6, ..small_config() }).cast::<f64>();
        params.layers.truncate(depth);
        let mut tape = Tape::new();
        let w = params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let y = transformer_encode(&mut tape, xv, &batch, &w, &config, &mut Mode::Eval).unwrap();
        let shape = tape.shape(y);
        (tape.value(y).clone(), shape)
    };
    let (five, s5) = run(5);
    let (six, s6) = run(6);
    assert_eq!(s5, s6);
    assert!(five.as_slice().iter().zip(six.as_slice()).any(|(a, b)| (a - b).abs() > 1e-6));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_zero_weights_give_zero_states() {
    let config = small_config();
    let mut params = init_params(&config).cast::<f64>();
    params.lstm_input = Matrix::zeros(8, 20);
    params.lstm_recurrent = Matrix::zeros(5, 20);
    params.lstm_bias = Matrix::zeros(1, 20);
    let g = graph("CCCCO");
    let batch = Batch::from_graphs(&[&g]).unwrap();
    let mut tape = Tape::new();
    let w = params.bind_constant(&mut tape);
    let x = tape.constant(random(5, 8, 1));
    let h = lstm_forward(&mut tape, x, &batch, &w).unwrap();
    assert!(tape.value(h).as_slice().iter().all(|&v| v == 0.0));
}

/// Straight-line gate equations for a whole sequence, zero initial state.
fn reference_lstm(x: &Matrix<f64>, wi: &Matrix<f64>, wh: &Matrix<f64>, b: &Matrix<f64>) -> Vec<Vec<f64>> {
    let l = wh.rows();
    let mut h = vec![0.0; l];
    let mut c = vec![0.0; l];
    let mut out = Vec::new();
    for t in 0..x.rows() {
        let mut z = b.row(0).to_vec();
        for (j, zj) in z.iter_mut().enumerate() {
            for k in 0..x.cols() {
                *zj += x.get(t, k) * wi.get(k, j);
            }
            for k in 0..l {
                *zj += h[k] * wh.get(k, j);
            }
        }
        for j in 0..l {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[l + j]);
            let g = z[2 * l + j].tanh();
            let o = sigmoid(z[3 * l + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

#[test]
fn lstm_matches_gate_equations() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    for smiles in ["C", "CCO", "c1ccncc1"] {
        let g = graph(smiles);
        let batch = Batch::from_graphs(&[&g]).unwrap();
        let x = random(g.num_atoms(), 8, 77);
        let mut tape = Tape::new();
        let w = params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let h = lstm_forward(&mut tape, xv, &batch, &w).unwrap();
        let expect = reference_lstm(&x, &params.lstm_input, &params.lstm_recurrent, &params.lstm_bias);
        for (t, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((tape.value(h).get(t, j) - v).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn lstm_batch_split_is_independent() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    let graphs = [graph("CCO"), graph("c1ccccc1CC(=O)O"), graph("N")];
    let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
    let batch = Batch::from_graphs(&refs).unwrap();
    let x = random(batch.num_nodes(), 8, 3);
    let mut tape = Tape::new();
    let w = params.bind_constant(&mut tape);
    let xv = tape.constant(x.clone());
    let joint = lstm_forward(&mut tape, xv, &batch, &w).unwrap();
    let joint = tape.value(joint).clone();
    for (gi, g) in graphs.iter().enumerate() {
        let single = Batch::from_graphs(&[g]).unwrap();
        let rows: Vec<Vec<f64>> = (batch.offsets[gi]..batch.offsets[gi + 1]).map(|r| x.row(r).to_vec()).collect();
        let mut tape = Tape::new();
        let w = params.bind_constant(&mut tape);
        let xv = tape.constant(Matrix::from_rows(&rows));
        let alone = lstm_forward(&mut tape, xv, &single, &w).unwrap();
        for (i, r) in (batch.offsets[gi]..batch.offsets[gi + 1]).enumerate() {
            for c in 0..5 {
                assert!((joint.get(r, c) - tape.value(alone).get(i, c)).abs() <= 1e-6);
            }
        }
    }
}

fn head_reference(p: &[f64], w: &ModelWeights<Matrix<f64>>) -> f64 {
    let mut out = w.head_b2.get(0, 0);
    for j in 0..w.head_w1.cols() {
        let mut z = w.head_b1.get(0, j);
        for (k, pk) in p.iter().enumerate() {
            z += pk * w.head_w1.get(k, j);
        }
        out += z.max(0.0) * w.head_w2.get(j, 0);
    }
    out
}

#[test]
fn pooling_single_atom_and_constant_states() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    let graphs = [graph("O"), graph("CCCC")];
    let batch = Batch::from_graphs(&[&graphs[0], &graphs[1]]).unwrap();
    let mut h = random(5, 5, 9);
    for r in 1..5 {
        h.row_mut(r).copy_from_slice(&[0.25, -0.5, 1.0, 0.0, 2.0]);
    }
    let mut tape = Tape::new();
    let w = params.bind_constant(&mut tape);
    let hv = tape.constant(h.clone());
    let out = pool_and_head(&mut tape, hv, &batch, &w).unwrap();
    assert_eq!(tape.shape(out), (2, 1));
    let expect0 = head_reference(h.row(0), &params);
    let expect1 = head_reference(&[0.25, -0.5, 1.0, 0.0, 2.0], &params);
    assert!((tape.value(out).get(0, 0) - expect0).abs() < 1e-12);
    assert!((tape.value(out).get(1, 0) - expect1).abs() < 1e-12);
}

#[test]
fn whole_model_batch_locality() {
    let config = small_config();
    let params = init_params(&config);
    let graphs = [graph("CC(=O)Oc1ccccc1C(=O)O"), graph("O"), graph("c1ccncc1"), graph("CCCCCCCC")];
    let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
    let joint = forward_f64(&params, &config, &refs);
    for (i, g) in graphs.iter().enumerate() {
        let alone = forward_f64(&params, &config, &[g]);
        assert!((joint[i] - alone[0]).abs() <= 1e-6);
    }
}

#[test]
fn eval_deterministic_and_train_seeded() {
    let config = small_config();
    let params = init_params(&config);
    let graphs = [graph("CCO"), graph("c1ccccc1O")];
    let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
    assert_eq!(forward_f64(&params, &config, &refs), forward_f64(&params, &config, &refs));

    let batch = Batch::from_graphs(&refs).unwrap();
    let train = |seed: u64| {
        let mut tape = Tape::<f32>::new();
        let w = params.bind(&mut tape);
        let mut rng = RngStream::new(seed);
        let out = yzs_forward(&mut tape, &batch, &w, &config, &mut Mode::Train(&mut rng)).unwrap();
        tape.value(out).clone()
    };
    assert_eq!(train(3), train(3));
    assert_ne!(train(3), train(4));
}

#[test]
fn full_model_gradient_check_three_atoms() {
    let config = small_config();
    let params = init_params(&config).cast::<f64>();
    let g = graph("CCO");
    let batch = Batch::from_graphs(&[&g]).unwrap();
    let inputs: Vec<Matrix<f64>> = params.iter().cloned().collect();
    for train in [false, true] {
        let report = check_gradients(&inputs, |tape, vars: &[Var]| {
            let w = ModelWeights::from_ordered(config.transformer_depth, vars.iter().copied()).unwrap();
            let mut rng = RngStream::new(99);
            let mut mode = if train { Mode::Train(&mut rng) } else { Mode::Eval };
            let pred = yzs_forward(tape, &batch, &w, &config, &mut mode).map_err(|e| match e {
                solgraph::model::ModelError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let target = tape.constant(Matrix::scalar(0.7));
            tape.mse(pred, target)
        })
        .unwrap();
        assert!(report.passed(), "train={train}: max error {}", report.max_error());
    }
}

#[test]
fn default_config_predictions_finite() {
    let config = ModelConfig::default();
    let params = init_params(&config);
    let graphs = [graph("CC(C)Cc1ccc(cc1)C(C)C(=O)O"), graph("[Na+]")];
    let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
    let preds = solgraph::model::predict(&params, &config, &refs, 8).unwrap();
    assert_eq!(preds.len(), 2);
    assert!(preds.iter().all(|p| p.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_rows_are_stochastic(seed in 0u64..1000, sizes in proptest::collection::vec(1usize..6, 1..4)) {
        let n: usize = sizes.iter().sum();
        let mut blocks = Vec::new();
        let mut start = 0;
        for s in &sizes {
            blocks.push(start..start + s);
            start += s;
        }
        let (_, probs) = run_attention(&random(n, 4, seed).map(|v| v * 10.0), &random(n, 4, seed + 1), &random(n, 4, seed + 2), blocks, 2);
        for p in probs {
            for r in 0..p.rows() {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}
