//! `solgraph` command-line front end.

mod commands;
mod error;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use solgraph::config::KvDoc;

use error::Failure;

#[derive(Debug, Parser)]
#[command(name = "solgraph", version, about = "Aqueous solubility (log S) prediction from SMILES")]
pub struct Cli {
    /// Worker threads for parallel folds, trials and prediction (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the perceived molecule: one atom per line, one bond per line.
    Parse {
        /// SMILES to parse (repeatable).
        #[arg(long, required_unless_present = "input")]
        smiles: Vec<String>,
        /// File with one SMILES per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Featurize a dataset into a SOLGRAPH-FEAT container plus CSV audit exports.
    Featurize {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train one model; early stopping on one fold of the plan.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Fold-plan CSV (`index,fold`); generated from the seed when absent.
        #[arg(long)]
        folds: Option<PathBuf>,
        /// Hold this fold out for testing; early stopping uses the next fold.
        #[arg(long)]
        test_fold: Option<usize>,
    },
    /// Cross-validate: per-fold metrics plus mean and standard deviation.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Fold-plan CSV (`index,fold`); generated from the seed when absent.
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Random hyperparameter search scored by abbreviated cross-validation.
    Search {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        folds: Option<PathBuf>,
        /// Number of trials (config key `search.trials`).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Predict log S for SMILES with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// SMILES to predict (repeatable).
        #[arg(long, required_unless_present = "input")]
        smiles: Vec<String>,
        /// File with one SMILES per line.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Also write predictions.csv and the resolved config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a labelled dataset: metrics, predictions, error histogram.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Feature-group importance by zeroing each node column (MAPD).
    ExplainZeroing {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Local linear surrogate explanation for one molecule.
    ExplainLocal {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        smiles: String,
        #[command(flatten)]
        run: RunArgs,
        /// Perturbation samples (config key `local.samples`, at least 50).
        #[arg(long)]
        samples: Option<usize>,
        /// Conditions to report (config key `local.top_k`).
        #[arg(long)]
        top_k: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// SMILES column (auto-detected when absent).
    #[arg(long)]
    pub smiles_col: Option<String>,
    /// Label column (auto-detected when absent).
    #[arg(long)]
    pub label_col: Option<String>,
    /// InChIKey column used for de-duplication (auto-detected when absent).
    #[arg(long)]
    pub inchikey_col: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. `--set model.hidden_dim=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for initialization, shuffling, dropout, fold plans and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl RunArgs {
    pub fn overrides(&self) -> Result<KvDoc, Failure> {
        let mut doc = KvDoc::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
            doc.set(k.trim(), v.trim());
        }
        if let Some(s) = self.seed {
            doc.set("model.seed", s);
            doc.set("train.seed", s);
        }
        if let Some(v) = self.epochs {
            doc.set("train.epochs", v);
        }
        if let Some(v) = self.lr {
            doc.set("train.lr", v);
        }
        if let Some(v) = self.batch_size {
            doc.set("train.batch_size", v);
        }
        if let Some(v) = self.patience {
            doc.set("train.patience", v);
        }
        Ok(doc)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("usage error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
