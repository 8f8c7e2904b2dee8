use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use solgraph::data::{kfold, load_csv, load_fold_plan, write_rejects, ColumnSpec, Dataset, FoldPlan};
use solgraph::featurize::container::{write_edge_csv, write_features, write_node_csv};
use solgraph::featurize::{featurize_smiles, MoleculeGraph};
use solgraph::interpret::{local_explain, zeroing_importance, LocalOptions, ReportMeta};
use solgraph::io::{write_atomic, write_string_atomic};
use solgraph::model::{load_checkpoint, predict, save_checkpoint, Checkpoint};
use solgraph::smiles;
use solgraph::train::{cross_validate, evaluate, search_hparams, train_one, Metrics, SearchOptions, SearchSpace, TrialRecord};

use crate::error::Failure;
use crate::run_config::RunConfig;
use crate::{Command, DataArgs, RunArgs};

pub fn run(command: Command) -> Result<String, Failure> {
    match command {
        Command::Parse { smiles, input } => parse(&collect_smiles(smiles, input.as_deref())?),
        Command::Featurize { data, run } => featurize(&data, &run),
        Command::Train {
            data,
            run,
            folds,
            test_fold,
        } => train(&data, &run, folds.as_deref(), test_fold),
        Command::Cv { data, run, folds } => cv(&data, &run, folds.as_deref()),
        Command::Search {
            data,
            run,
            folds,
            trials,
        } => search(&data, &run, folds.as_deref(), trials),
        Command::Predict {
            checkpoint,
            smiles,
            input,
            out,
        } => predict_cmd(&checkpoint, &collect_smiles(smiles, input.as_deref())?, out.as_deref()),
        Command::Evaluate { checkpoint, data, run } => evaluate_cmd(&checkpoint, &data, &run),
        Command::ExplainZeroing { checkpoint, data, run } => explain_zeroing(&checkpoint, &data, &run),
        Command::ExplainLocal {
            checkpoint,
            smiles,
            run,
            samples,
            top_k,
        } => explain_local(&checkpoint, &smiles, &run, samples, top_k),
    }
}

fn collect_smiles(mut list: Vec<String>, input: Option<&Path>) -> Result<Vec<String>, Failure> {
    if let Some(path) = input {
        let text = fs::read_to_string(path)?;
        list.extend(
            text.lines()
                .filter_map(|l| l.split_whitespace().next())
                .map(str::to_string),
        );
    }
    if list.is_empty() {
        return Err(Failure::Usage("no SMILES given".into()));
    }
    Ok(list)
}

struct Prepared {
    config: RunConfig,
    out: PathBuf,
}

/// Resolve the config, create the output directory and echo the resolved config into it.
fn prepare(run: &RunArgs, extra: &solgraph::config::KvDoc) -> Result<Prepared, Failure> {
    let mut overrides = run.overrides()?;
    overrides.merge(extra);
    let config = RunConfig::resolve(run.config.as_deref(), &overrides)?;
    fs::create_dir_all(&run.out)?;
    write_string_atomic(&run.out.join("config.kv"), &config.to_kv().to_string())?;
    Ok(Prepared {
        config,
        out: run.out.clone(),
    })
}

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    let spec = ColumnSpec {
        smiles: args.smiles_col.clone(),
        inchikey: args.inchikey_col.clone(),
        label: args.label_col.clone(),
    };
    Ok(load_csv(&args.data, &spec)?)
}

fn save_csv(path: &Path, f: impl FnOnce(&mut dyn Write) -> csv::Result<()>) -> Result<(), Failure> {
    write_atomic(path, |w| f(w).map_err(Failure::from))
}

fn save_rejects(out: &Path, data: &Dataset) -> Result<(), Failure> {
    save_csv(&out.join("rejects.csv"), |w| write_rejects(w, &data.rejects))
}

fn fold_plan(folds: Option<&Path>, data: &Dataset, config: &RunConfig) -> Result<FoldPlan, Failure> {
    Ok(match folds {
        Some(p) => load_fold_plan(p, data.len())?,
        None => kfold(data.len(), config.k, config.train.seed)?,
    })
}

fn save_plan(out: &Path, plan: &FoldPlan) -> Result<(), Failure> {
    write_atomic(&out.join("folds.csv"), |w| plan.write(w).map_err(Failure::from))
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse(list: &[String]) -> Result<String, Failure> {
    let mut text = String::new();
    for (i, s) in list.iter().enumerate() {
        let mol = smiles::parse(s)?;
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&format!("smiles {s}\n{mol}"));
    }
    Ok(text.trim_end().to_string())
}

fn featurize(data_args: &DataArgs, run: &RunArgs) -> Result<String, Failure> {
    let p = prepare(run, &Default::default())?;
    let data = load_data(data_args)?;
    let graphs: Vec<MoleculeGraph> = data.records.iter().map(|r| r.graph.clone()).collect();
    write_atomic(&p.out.join("features.bin"), |w| write_features(w, &graphs).map_err(Failure::from))?;
    save_csv(&p.out.join("nodes.csv"), |w| write_node_csv(w, &graphs))?;
    save_csv(&p.out.join("edges.csv"), |w| write_edge_csv(w, &graphs))?;
    save_rejects(&p.out, &data)?;
    Ok(format!(
        "featurize: {} molecules, {} rejected, {} duplicates -> {}",
        data.len(),
        data.rejects.len(),
        data.duplicates.len(),
        p.out.display()
    ))
}

fn train(data_args: &DataArgs, run: &RunArgs, folds: Option<&Path>, test_fold: Option<usize>) -> Result<String, Failure> {
    let p = prepare(run, &Default::default())?;
    let data = load_data(data_args)?;
    save_rejects(&p.out, &data)?;
    let plan = fold_plan(folds, &data, &p.config)?;
    save_plan(&p.out, &plan)?;
    let k = plan.k();
    let (val_fold, held_out) = match test_fold {
        Some(t) if t >= k => return Err(Failure::Usage(format!("test fold {t} out of range for {k} folds"))),
        Some(t) => ((t + 1) % k, vec![t]),
        None => (0, vec![]),
    };
    let val = plan.folds[val_fold].clone();
    let mut exclude = held_out.clone();
    exclude.push(val_fold);
    let train_idx = plan.indices_excluding(&exclude);
    let outcome = train_one(&p.config.train, &data, &train_idx, &val)?;
    save_checkpoint(&p.out.join("model.ckpt"), &outcome.checkpoint)?;
    save_csv(&p.out.join("history.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["epoch", "train_loss", "val_rmse"])?;
        for e in &outcome.history.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_rmse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut summary = format!(
        "train: {} epochs, best epoch {}, val rmse {:.4}",
        outcome.history.epochs.len(),
        outcome.history.best_epoch,
        outcome.history.best_val_rmse
    );
    if let Some(&t) = held_out.first() {
        let test = data.subset(&plan.folds[t]);
        let ev = evaluate(&outcome.checkpoint, &test)?;
        write_metrics(&p.out, &[("test", &ev.metrics, ev.mean_error)])?;
        summary.push_str(&format!(", test fold {t} r2 {:.4} rmse {:.4}", ev.metrics.r2, ev.metrics.rmse));
    }
    summary.push_str(&format!(" -> {}", p.out.display()));
    Ok(summary)
}

fn write_metrics(out: &Path, rows: &[(&str, &Metrics, f64)]) -> Result<(), Failure> {
    save_csv(&out.join("metrics.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["split", "n", "r2", "rmse", "mean_error"])?;
        for (name, m, me) in rows {
            w.write_record([name.to_string(), m.n.to_string(), fmt_metric(m.r2), m.rmse.to_string(), me.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cv(data_args: &DataArgs, run: &RunArgs, folds: Option<&Path>) -> Result<String, Failure> {
    let p = prepare(run, &Default::default())?;
    let data = load_data(data_args)?;
    save_rejects(&p.out, &data)?;
    let plan = fold_plan(folds, &data, &p.config)?;
    save_plan(&p.out, &plan)?;
    let report = cross_validate(&data, &plan, &p.config.train, None)?;
    save_csv(&p.out.join("cv_folds.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["fold", "val_fold", "n", "r2", "rmse", "best_epoch", "epochs", "leak_free"])?;
        for f in &report.folds {
            let leak_free = f.audit.untouched(&plan.folds[f.fold]);
            w.write_record([
                f.fold.to_string(),
                f.val_fold.to_string(),
                f.metrics.n.to_string(),
                fmt_metric(f.metrics.r2),
                f.metrics.rmse.to_string(),
                f.history.best_epoch.to_string(),
                f.history.epochs.len().to_string(),
                leak_free.to_string(),
            ])?;
        }
        for (name, r2, rmse) in [("mean", report.mean_r2, report.mean_rmse), ("std", report.std_r2, report.std_rmse)] {
            w.write_record([name, "", "", &fmt_metric(r2), &fmt_metric(rmse), "", "", ""])?;
        }
        w.flush()?;
        Ok(())
    })?;
    save_csv(&p.out.join("cv_history.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["fold", "epoch", "train_loss", "val_rmse"])?;
        for f in &report.folds {
            for e in &f.history.epochs {
                w.write_record([
                    f.fold.to_string(),
                    e.epoch.to_string(),
                    e.train_loss.to_string(),
                    e.val_rmse.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(format!(
        "cv: {} folds, r2 {:.4} ± {:.4}, rmse {:.4} ± {:.4} -> {}",
        report.folds.len(),
        report.mean_r2,
        report.std_r2,
        report.mean_rmse,
        report.std_rmse,
        p.out.display()
    ))
}

fn search(data_args: &DataArgs, run: &RunArgs, folds: Option<&Path>, trials: Option<usize>) -> Result<String, Failure> {
    let mut extra = solgraph::config::KvDoc::new();
    if let Some(t) = trials {
        extra.set("search.trials", t);
    }
    let p = prepare(run, &extra)?;
    let data = load_data(data_args)?;
    save_rejects(&p.out, &data)?;
    let plan = fold_plan(folds, &data, &p.config)?;
    save_plan(&p.out, &plan)?;
    let options = SearchOptions {
        trials: p.config.trials,
        test_folds: p.config.test_folds.clone(),
        seed: p.config.train.seed,
    };
    let progress = |t: &TrialRecord| {
        eprintln!("trial {}: {}", t.trial, t.csv_row());
    };
    let result = search_hparams(&data, &plan, &p.config.train, &SearchSpace::default(), &options, &progress)?;
    save_csv(&p.out.join("trials.csv"), |w| {
        writeln!(w, "{}", TrialRecord::CSV_HEADER)?;
        for t in &result.trials {
            writeln!(w, "{}", t.csv_row())?;
        }
        Ok(())
    })?;
    let best = RunConfig {
        train: result.best.clone(),
        ..p.config.clone()
    };
    write_string_atomic(&p.out.join("best.kv"), &best.to_kv().to_string())?;
    let score = result.trials[result.best_trial].outcome.as_ref().map(|s| s.0).unwrap_or(f64::NAN);
    Ok(format!(
        "search: {} trials, best trial {} rmse {:.4} -> {}",
        result.trials.len(),
        result.best_trial,
        score,
        p.out.join("best.kv").display()
    ))
}

fn predict_cmd(checkpoint: &Path, list: &[String], out: Option<&Path>) -> Result<String, Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let graphs = list
        .iter()
        .map(|s| featurize_smiles(s, None))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
    let preds: Vec<f64> = predict(&ckpt.params, &ckpt.config, &refs, 64)?
        .into_iter()
        .map(|z| ckpt.scaler.invert(z))
        .collect();
    if preds.iter().any(|v| !v.is_finite()) {
        return Err(Failure::Numeric("non-finite prediction".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_string_atomic(&dir.join("config.kv"), &ckpt.config_doc().to_string())?;
        save_csv(&dir.join("predictions.csv"), |w| {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["smiles", "log_s"])?;
            for (s, v) in list.iter().zip(&preds) {
                w.write_record([s.as_str(), &v.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    let lines: Vec<String> = list.iter().zip(&preds).map(|(s, v)| format!("{s},{v:.4}")).collect();
    Ok(lines.join("\n"))
}

fn checkpoint_and_data(checkpoint: &Path, data_args: &DataArgs) -> Result<(Checkpoint, Dataset), Failure> {
    Ok((load_checkpoint(checkpoint)?, load_data(data_args)?))
}

fn evaluate_cmd(checkpoint: &Path, data_args: &DataArgs, run: &RunArgs) -> Result<String, Failure> {
    let p = prepare(run, &Default::default())?;
    let (ckpt, data) = checkpoint_and_data(checkpoint, data_args)?;
    save_rejects(&p.out, &data)?;
    let ev = evaluate(&ckpt, &data)?;
    save_csv(&p.out.join("predictions.csv"), |w| ev.write_predictions(w))?;
    save_csv(&p.out.join("histogram.csv"), |w| ev.write_histogram(w))?;
    write_metrics(&p.out, &[(data.name.as_str(), &ev.metrics, ev.mean_error)])?;
    Ok(format!(
        "evaluate: n {} r2 {:.4} rmse {:.4} -> {}",
        ev.metrics.n,
        ev.metrics.r2,
        ev.metrics.rmse,
        p.out.display()
    ))
}

fn write_meta(out: &Path, meta: &ReportMeta) -> Result<(), Failure> {
    let mut doc = solgraph::config::KvDoc::new();
    doc.set("dataset", &meta.dataset);
    doc.set("checkpoint", &meta.checkpoint);
    doc.set("seed", meta.seed);
    write_string_atomic(&out.join("meta.kv"), &doc.to_string())?;
    Ok(())
}

fn explain_zeroing(checkpoint: &Path, data_args: &DataArgs, run: &RunArgs) -> Result<String, Failure> {
    let p = prepare(run, &Default::default())?;
    let (ckpt, data) = checkpoint_and_data(checkpoint, data_args)?;
    let meta = ReportMeta {
        dataset: data.name.clone(),
        checkpoint: ckpt.fingerprint(),
        seed: p.config.train.seed,
    };
    let report = zeroing_importance(&ckpt, &data.graphs(), meta)?;
    save_csv(&p.out.join("zeroing.csv"), |w| report.write_csv(w))?;
    save_csv(&p.out.join("zeroing_bars.csv"), |w| report.write_bars(w))?;
    save_csv(&p.out.join("zeroing_columns.csv"), |w| report.write_columns(w))?;
    write_meta(&p.out, &report.meta)?;
    let top = report
        .entries
        .first()
        .map(|e| format!("{} {:.4}", e.feature, e.score))
        .unwrap_or_default();
    Ok(format!(
        "explain-zeroing: {} molecules, top group {top} -> {}",
        data.len(),
        p.out.display()
    ))
}

fn explain_local(
    checkpoint: &Path,
    smiles_text: &str,
    run: &RunArgs,
    samples: Option<usize>,
    top_k: Option<usize>,
) -> Result<String, Failure> {
    let mut extra = solgraph::config::KvDoc::new();
    if let Some(n) = samples {
        extra.set("local.samples", n);
    }
    if let Some(k) = top_k {
        extra.set("local.top_k", k);
    }
    let p = prepare(run, &extra)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let graph = featurize_smiles(smiles_text, None)?;
    let options = LocalOptions {
        n_samples: p.config.local_samples,
        top_k: p.config.local_top_k,
        seed: p.config.train.seed,
        ..Default::default()
    };
    let exp = local_explain(&ckpt, &graph, &options)?;
    save_csv(&p.out.join("local.csv"), |w| exp.write_csv(w))?;
    save_csv(&p.out.join("local_bars.csv"), |w| exp.write_bars(w))?;
    write_meta(
        &p.out,
        &ReportMeta {
            dataset: smiles_text.to_string(),
            checkpoint: ckpt.fingerprint(),
            seed: options.seed,
        },
    )?;
    let top = exp
        .entries
        .first()
        .map(|e| format!("{} {:+.4}", e.condition, e.weight))
        .unwrap_or_default();
    Ok(format!(
        "explain-local: {smiles_text} predicted {:.4}, top condition {top} -> {}",
        exp.prediction,
        p.out.display()
    ))
}
