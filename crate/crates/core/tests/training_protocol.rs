use proptest::prelude::*;
use solgraph::data::{kfold, read_csv, ColumnSpec, Dataset, FoldPlan};
use solgraph::featurize::MoleculeGraph;
use solgraph::model::{predict, ModelConfig};
use solgraph::train::{
    cross_validate, evaluate, r2, rmse, search_hparams, train_one, SearchOptions, SearchSpace, TrainConfig,
};

fn toy() -> Dataset {
    read_csv(
        include_str!("fixtures/toy_logs.csv").as_bytes(),
        "toy_logs",
        &ColumnSpec::default(),
    )
    .unwrap()
}

fn tiny(epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            hidden_dim: 16,
            heads: 2,
            transformer_depth: 1,
            mlp_dim: 16,
            lstm_hidden: 16,
            seed: 2,
            ..Default::default()
        },
        lr: 2e-3,
        batch_size: 8,
        epochs,
        patience,
        seed: 9,
    }
}

fn raw_predictions(out: &solgraph::train::TrainOutcome, data: &Dataset, idx: &[usize]) -> Vec<f64> {
    let c = &out.checkpoint;
    let graphs: Vec<&MoleculeGraph> = idx.iter().map(|&i| &data.records[i].graph).collect();
    predict(&c.params, &c.config, &graphs, 64)
        .unwrap()
        .into_iter()
        .map(|z| c.scaler.invert(z))
        .collect()
}

proptest! {
    #[test]
    fn metrics_match_literal_formulas(pairs in prop::collection::vec((-12.0f64..3.0, -12.0f64..3.0), 2..64)) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let n = y.len() as f64;
        let sse: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let mean = y.iter().sum::<f64>() / n;
        let sst: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
        prop_assert!((rmse(&y, &p).unwrap() - (sse / n).sqrt()).abs() <= 1e-12);
        let expected = 1.0 - sse / sst;
        prop_assert!((r2(&y, &p).unwrap() - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert!(r2(&y, &p).unwrap() <= 1.0);
    }
}

#[test]
fn ten_singleton_folds() {
    let data = toy().subset(&(0..10).collect::<Vec<_>>());
    let plan = kfold(10, 10, 1).unwrap();
    assert!(plan.folds.iter().all(|f| f.len() == 1));
    let report = cross_validate(&data, &plan, &tiny(2, 2), None).unwrap();
    assert_eq!(report.folds.len(), 10);
    for f in &report.folds {
        assert_eq!(f.metrics.n, 1);
        assert!(f.metrics.r2.is_nan());
        assert!(f.metrics.rmse.is_finite());
    }
    let mean = report.folds.iter().map(|f| f.metrics.rmse).sum::<f64>() / 10.0;
    assert!((report.mean_rmse - mean).abs() <= 1e-12);
    assert!(report.mean_r2.is_nan());
}

#[test]
fn fold_membership_follows_record_content() {
    let data = toy();
    let plan = kfold(data.len(), 5, 4).unwrap();
    let order: Vec<usize> = (0..data.len()).rev().collect();
    let shuffled = data.subset(&order);
    let mut position = vec![0; data.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let remapped = FoldPlan {
        folds: plan.folds.iter().map(|f| f.iter().map(|&i| position[i]).collect()).collect(),
    };
    for (a, b) in plan.folds.iter().zip(&remapped.folds) {
        let mut x: Vec<&str> = a.iter().map(|&i| data.records[i].smiles.as_str()).collect();
        let mut y: Vec<&str> = b.iter().map(|&i| shuffled.records[i].smiles.as_str()).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }
}

#[test]
fn best_weights_reproduce_best_validation_rmse() {
    let data = toy();
    let idx: Vec<usize> = (0..data.len()).collect();
    let (val, train) = idx.split_at(8);
    let out = train_one(&tiny(40, 5), &data, train, val).unwrap();
    let h = &out.history;
    let min = h.epochs.iter().map(|e| e.val_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch].val_rmse, min);
    assert_eq!(h.best_val_rmse, min);
    let y: Vec<f64> = val.iter().map(|&i| data.records[i].log_s).collect();
    let again = rmse(&y, &raw_predictions(&out, &data, val)).unwrap();
    assert!((again - h.best_val_rmse).abs() <= 1e-6);
    assert!(out.audit.untouched(val));
}

#[test]
fn patience_one_stops_only_on_plateau() {
    let data = toy();
    let idx: Vec<usize> = (0..12).collect();
    let out = train_one(&tiny(200, 1), &data, &idx, &idx).unwrap();
    let v: Vec<f64> = out.history.epochs.iter().map(|e| e.val_rmse).collect();
    for w in v[..v.len() - 1].windows(2) {
        assert!(w[1] < w[0], "stopped late: {v:?}");
    }
    if out.history.stopped_early {
        assert!(v[v.len() - 1] >= v[v.len() - 2]);
    } else {
        assert_eq!(v.len(), 200);
    }
}

#[test]
fn seeded_history_is_identical() {
    let data = toy();
    let idx: Vec<usize> = (0..data.len()).collect();
    let a = train_one(&tiny(6, 6), &data, &idx[6..], &idx[..6]).unwrap();
    let b = train_one(&tiny(6, 6), &data, &idx[6..], &idx[..6]).unwrap();
    assert_eq!(a.history.records(), b.history.records());
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = train_one(&TrainConfig { seed: 10, ..tiny(6, 6) }, &data, &idx[6..], &idx[..6]).unwrap();
    assert_ne!(a.history.records(), c.history.records());
}

#[test]
fn evaluation_identities() {
    let data = toy();
    let idx: Vec<usize> = (0..data.len()).collect();
    let out = train_one(&tiny(4, 4), &data, &idx[6..], &idx[..6]).unwrap();
    let ev = evaluate(&out.checkpoint, &data).unwrap();
    assert_eq!(ev.rows.len(), data.len());
    assert_eq!(ev.histogram.iter().map(|b| b.count).sum::<usize>(), data.len());
    let mean = ev.rows.iter().map(|r| r.error).sum::<f64>() / ev.rows.len() as f64;
    assert!((ev.mean_error - mean).abs() <= 1e-12);
    for r in &ev.rows {
        assert_eq!(r.error, r.y_hat - r.y);
    }
    assert!(ev.metrics.rmse >= 0.0 && ev.metrics.r2 <= 1.0);
}

#[test]
fn single_trial_search_is_one_cross_validation() {
    let data = toy();
    let plan = kfold(data.len(), 4, 0).unwrap();
    let base = tiny(1, 1);
    let options = SearchOptions {
        trials: 1,
        test_folds: vec![2],
        seed: 5,
    };
    let result = search_hparams(&data, &plan, &base, &SearchSpace::default(), &options, &|_| {}).unwrap();
    assert_eq!(result.trials.len(), 1);
    assert_eq!(result.best_trial, 0);
    let direct = cross_validate(&data, &plan, &result.best, Some(&[2])).unwrap();
    assert_eq!(result.trials[0].outcome.as_ref().unwrap().0, direct.mean_rmse);
}
