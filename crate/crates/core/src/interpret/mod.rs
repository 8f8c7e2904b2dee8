//! Feature importance: exhaustive column zeroing (MAPD) and a local linear surrogate.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::RngStream;
use crate::featurize::layout;
use crate::featurize::{node_feature_names, MoleculeGraph};
use crate::model::{predict, Checkpoint, ModelError};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("all perturbation samples are identical")]
    DegenerateSamples,
    #[error("no molecules to explain")]
    EmptyInput,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("surrogate fit failed: singular system")]
    Singular,
}

/// Anything that maps molecule graphs to one prediction each.
pub trait GraphRegressor: Sync {
    fn predict(&self, graphs: &[&MoleculeGraph]) -> Result<Vec<f64>, InterpretError>;
}

/// Trained model; predictions are in log S units.
impl GraphRegressor for Checkpoint {
    fn predict(&self, graphs: &[&MoleculeGraph]) -> Result<Vec<f64>, InterpretError> {
        let z = predict(&self.params, &self.config, graphs, 64)?;
        Ok(z.into_iter().map(|v| self.scaler.invert(v)).collect())
    }
}

/// Contiguous columns of the node vector that describe one atom property.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroup {
    pub name: &'static str,
    pub span: Range<usize>,
}

pub fn feature_groups() -> Vec<FeatureGroup> {
    let g = |name, span| FeatureGroup { name, span };
    vec![
        g("Symbol", layout::ELEMENT),
        g("Degree", layout::DEGREE),
        g("FormalCharge", layout::FORMAL_CHARGE..layout::FORMAL_CHARGE + 1),
        g("Electrons", layout::RADICALS..layout::RADICALS + 1),
        g("Hybridization", layout::HYBRIDIZATION),
        g("Aromatic", layout::AROMATIC..layout::AROMATIC + 1),
        g("Hydrogen", layout::HYDROGENS),
        g("Chirality", layout::CHIRAL..layout::CHIRAL + 1),
        g("ChiralityType", layout::PARITY),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mapd,
    Local,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mapd => "MAPD",
            Method::Local => "LOCAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEntry {
    pub feature: String,
    pub score: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMeta {
    pub dataset: String,
    pub checkpoint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Groups other than Symbol, by descending |score|.
    pub entries: Vec<ImportanceEntry>,
    /// Symbol group average followed by each element column, by descending |score|.
    pub symbol_entries: Vec<ImportanceEntry>,
    /// MAPD of every node column, in column order.
    pub column_scores: Vec<f64>,
    pub meta: ReportMeta,
}

fn rank(entries: &mut [ImportanceEntry]) {
    entries.sort_by(|a, b| b.score.abs().total_cmp(&a.score.abs()).then_with(|| a.feature.cmp(&b.feature)));
}

fn zero_column(graph: &MoleculeGraph, col: usize) -> MoleculeGraph {
    let mut g = graph.clone();
    for r in 0..g.node_features.rows() {
        g.node_features.set(r, col, 0.0);
    }
    g
}

impl ImportanceReport {
    pub fn score(&self, feature: &str) -> Option<f64> {
        self.entries
            .iter()
            .chain(&self.symbol_entries)
            .find(|e| e.feature == feature)
            .map(|e| e.score)
    }

    /// `section,feature,score,sign,method`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "feature", "score", "sign", "method"])?;
        for (section, list) in [("groups", &self.entries), ("symbol", &self.symbol_entries)] {
            for e in list {
                let sign = if e.score < 0.0 { "-" } else { "+" };
                w.write_record([section, &e.feature, &e.score.to_string(), sign, e.method.name()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `feature,signed_score` for every group (Symbol included) and element column.
    pub fn write_bars<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "signed_score"])?;
        for e in self.entries.iter().chain(&self.symbol_entries) {
            w.write_record([e.feature.as_str(), &e.score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `column,feature,mapd` for every node column.
    pub fn write_columns<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["column", "feature", "mapd"])?;
        for ((c, name), s) in node_feature_names().iter().enumerate().zip(&self.column_scores) {
            w.write_record([c.to_string().as_str(), name, &s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean absolute prediction change when each node column is zeroed on every
/// atom, averaged within each feature group.
///
/// Every column is zeroed on its own (no sampling), so the result is
/// deterministic and does not depend on record order.
pub fn zeroing_importance(
    model: &dyn GraphRegressor,
    graphs: &[&MoleculeGraph],
    meta: ReportMeta,
) -> Result<ImportanceReport, InterpretError> {
    if graphs.is_empty() {
        return Err(InterpretError::EmptyInput);
    }
    let width = graphs[0].node_features.cols();
    let base = model.predict(graphs)?;
    let mut column_scores = vec![0.0; width];
    for (col, score) in column_scores.iter_mut().enumerate() {
        let zeroed: Vec<MoleculeGraph> = graphs.iter().map(|g| zero_column(g, col)).collect();
        let refs: Vec<&MoleculeGraph> = zeroed.iter().collect();
        let preds = model.predict(&refs)?;
        *score = preds.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum::<f64>() / graphs.len() as f64;
    }
    let group_score = |span: &Range<usize>| column_scores[span.clone()].iter().sum::<f64>() / span.len() as f64;

    let mut entries = Vec::new();
    let mut symbol_entries = Vec::new();
    let names = node_feature_names();
    for group in feature_groups() {
        let entry = ImportanceEntry {
            feature: group.name.to_string(),
            score: group_score(&group.span),
            method: Method::Mapd,
        };
        if group.name == "Symbol" {
            symbol_entries.push(entry);
            for col in group.span {
                symbol_entries.push(ImportanceEntry {
                    feature: names[col].clone(),
                    score: column_scores[col],
                    method: Method::Mapd,
                });
            }
        } else {
            entries.push(entry);
        }
    }
    rank(&mut entries);
    rank(&mut symbol_entries[1..]);
    Ok(ImportanceReport {
        entries,
        symbol_entries,
        column_scores,
        meta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptions {
    pub n_samples: usize,
    pub top_k: usize,
    /// Probability of switching each condition off.
    pub p_off: f64,
    pub kernel_width: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            n_samples: 500,
            top_k: 15,
            p_off: 0.5,
            kernel_width: 0.25,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEntry {
    pub condition: String,
    /// Node column switched off with this condition.
    pub column: usize,
    /// Positive values raise the predicted solubility.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalExplanation {
    pub smiles: String,
    pub prediction: f64,
    pub intercept: f64,
    /// Top `top_k` conditions by descending |weight|.
    pub entries: Vec<LocalEntry>,
    /// Every condition, in column order.
    pub all: Vec<LocalEntry>,
}

impl LocalExplanation {
    /// `feature,score,sign`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "score", "sign"])?;
        for e in &self.entries {
            let sign = if e.weight < 0.0 { "-" } else { "+" };
            w.write_record([e.condition.as_str(), &e.weight.to_string(), sign])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `feature,signed_score` for horizontal bar charts.
    pub fn write_bars<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "signed_score"])?;
        for e in &self.entries {
            w.write_record([e.condition.as_str(), &e.weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn condition_name(col: usize, names: &[String]) -> String {
    let n = &names[col];
    if let Some(sym) = n.strip_prefix("symbol_") {
        format!("has {sym}")
    } else {
        n.clone()
    }
}

/// Weighted ridge regression with an unpenalized intercept. Returns `(intercept, coefficients)`.
fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<(f64, Vec<f64>), InterpretError> {
    let m = x[0].len();
    let p = m + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let full: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            b[i] += wi * full[i] * yi;
            for j in 0..p {
                a[(i, j)] += wi * full[i] * full[j];
            }
        }
    }
    for i in 1..p {
        a[(i, i)] += lambda;
    }
    let theta = a.lu().solve(&b).ok_or(InterpretError::Singular)?;
    Ok((theta[0], theta.iter().skip(1).copied().collect()))
}

/// Local surrogate for one molecule.
///
/// Conditions are the node columns that are non-zero somewhere in the molecule
/// (element present, aromatic atoms, each degree / H-count bucket, charge,
/// hybridization state, ...). Each sample switches conditions off independently,
/// which zeroes that column on every atom; samples are weighted by
/// `exp(-d^2 / width^2)` with `d` the fraction of conditions switched off. The
/// unperturbed molecule is always sample zero.
pub fn local_explain(
    model: &dyn GraphRegressor,
    graph: &MoleculeGraph,
    options: &LocalOptions,
) -> Result<LocalExplanation, InterpretError> {
    if options.n_samples < 50 {
        return Err(InterpretError::InvalidOption(format!(
            "n_samples must be at least 50, got {}",
            options.n_samples
        )));
    }
    if !(options.p_off > 0.0 && options.p_off < 1.0) || !(options.kernel_width > 0.0) || options.ridge < 0.0 {
        return Err(InterpretError::InvalidOption("p_off, kernel width or ridge out of range".into()));
    }
    let width = graph.node_features.cols();
    let columns: Vec<usize> = (0..width)
        .filter(|&c| (0..graph.num_atoms()).any(|r| graph.node_features.get(r, c) != 0.0))
        .collect();
    let m = columns.len();
    let mut rng = RngStream::with_stream(options.seed, 0x11AE);
    let mut samples: Vec<Vec<f64>> = vec![vec![1.0; m]];
    while samples.len() < options.n_samples {
        samples.push((0..m).map(|_| if rng.uniform() < options.p_off { 0.0 } else { 1.0 }).collect());
    }
    if samples.iter().all(|s| s == &samples[0]) {
        return Err(InterpretError::DegenerateSamples);
    }
    let perturbed: Vec<MoleculeGraph> = samples
        .iter()
        .map(|z| {
            let mut g = graph.clone();
            for (&col, &on) in columns.iter().zip(z) {
                if on == 0.0 {
                    for r in 0..g.num_atoms() {
                        g.node_features.set(r, col, 0.0);
                    }
                }
            }
            g
        })
        .collect();
    let refs: Vec<&MoleculeGraph> = perturbed.iter().collect();
    let y = model.predict(&refs)?;
    let weights: Vec<f64> = samples
        .iter()
        .map(|z| {
            let d = z.iter().filter(|&&v| v == 0.0).count() as f64 / m as f64;
            (-(d * d) / (options.kernel_width * options.kernel_width)).exp()
        })
        .collect();
    let (intercept, coef) = weighted_ridge(&samples, &y, &weights, options.ridge)?;
    let names = node_feature_names();
    let all: Vec<LocalEntry> = columns
        .iter()
        .zip(&coef)
        .map(|(&col, &w)| LocalEntry {
            condition: condition_name(col, &names),
            column: col,
            weight: w,
        })
        .collect();
    let mut entries = all.clone();
    entries.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()).then(a.column.cmp(&b.column)));
    entries.truncate(options.top_k);
    Ok(LocalExplanation {
        smiles: graph.source_smiles.clone(),
        prediction: y[0],
        intercept,
        entries,
        all,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::layout::NODE_DIM;

    #[test]
    fn groups_tile_the_node_vector() {
        let mut covered = vec![false; NODE_DIM];
        for g in feature_groups() {
            for c in g.span {
                assert!(!covered[c]);
                covered[c] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let y: Vec<f64> = x.iter().map(|r| 0.5 + 2.0 * r[0] - 3.0 * r[1]).collect();
        let (b, w) = weighted_ridge(&x, &y, &[1.0; 4], 0.0).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        assert!((w[0] - 2.0).abs() < 1e-12 && (w[1] + 3.0).abs() < 1e-12);
    }
}
