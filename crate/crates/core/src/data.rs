//! Solubility CSV ingestion, label scaling and k-fold plans.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::RngStream;
use crate::featurize::{build_graph, MoleculeGraph};
use crate::smiles;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no column matching {0}")]
    MissingColumn(String),
    #[error("dataset has no usable records")]
    EmptyDataset,
    #[error("labels have zero variance")]
    DegenerateLabels,
    #[error("{n} records cannot be split into {k} folds")]
    TooFewRecords { n: usize, k: usize },
    #[error("invalid fold plan: {0}")]
    InvalidFoldPlan(String),
}

/// Column names to look for; `None` means auto-detect.
#[derive(Debug, Clone, Default)]
pub struct ColumnSpec {
    pub smiles: Option<String>,
    pub inchikey: Option<String>,
    pub label: Option<String>,
}

const SMILES_NAMES: &[&str] = &["smiles", "canonical_smiles", "smi"];
const INCHIKEY_NAMES: &[&str] = &["inchikey", "inchi_key", "inchi key"];
const LABEL_NAMES: &[&str] = &["logs", "log s", "log_s", "logs (mol/l)", "solubility", "y", "label"];

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub inchikey: Option<String>,
    pub log_s: f64,
    pub graph: MoleculeGraph,
}

/// A row that could not be used, with its 1-based data row number.
#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub row: usize,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Duplicate {
    pub row: usize,
    pub inchikey: String,
    pub first_row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<Record>,
    pub rejects: Vec<Reject>,
    pub duplicates: Vec<Duplicate>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_s).collect()
    }

    pub fn graphs(&self) -> Vec<&MoleculeGraph> {
        self.records.iter().map(|r| &r.graph).collect()
    }

    /// Build from in-memory `(smiles, log S)` pairs; unparseable entries become rejects.
    pub fn from_pairs(name: &str, pairs: &[(&str, f64)]) -> Result<Self, DataError> {
        let mut records = Vec::new();
        let mut rejects = Vec::new();
        for (i, (s, y)) in pairs.iter().enumerate() {
            match make_record(s, None, *y) {
                Ok(r) => records.push(r),
                Err(reason) => rejects.push(Reject {
                    row: i + 1,
                    smiles: s.to_string(),
                    reason,
                }),
            }
        }
        if records.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Ok(Dataset {
            name: name.to_string(),
            records,
            rejects,
            duplicates: Vec::new(),
        })
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            rejects: Vec::new(),
            duplicates: Vec::new(),
        }
    }
}

fn make_record(smiles_text: &str, inchikey: Option<String>, log_s: f64) -> Result<Record, String> {
    if !log_s.is_finite() {
        return Err(format!("non-finite label {log_s}"));
    }
    let molecule = smiles::parse(smiles_text).map_err(|e| e.to_string())?;
    Ok(Record {
        smiles: smiles_text.to_string(),
        inchikey,
        log_s,
        graph: build_graph(&molecule, smiles_text, Some(log_s)),
    })
}

fn find_column(headers: &csv::StringRecord, wanted: Option<&str>, defaults: &[&str]) -> Option<usize> {
    let norm = |s: &str| s.trim().to_ascii_lowercase();
    match wanted {
        Some(w) => headers.iter().position(|h| norm(h) == norm(w)),
        None => defaults
            .iter()
            .find_map(|d| headers.iter().position(|h| norm(h) == *d)),
    }
}

pub fn load_csv(path: &Path, columns: &ColumnSpec) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, columns)
}

/// Parse a dataset from CSV text. The InChIKey column is optional.
pub fn read_csv<R: Read>(input: R, name: &str, columns: &ColumnSpec) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let smiles_col = find_column(&headers, columns.smiles.as_deref(), SMILES_NAMES)
        .ok_or_else(|| DataError::MissingColumn(columns.smiles.clone().unwrap_or_else(|| "SMILES".into())))?;
    let label_col = find_column(&headers, columns.label.as_deref(), LABEL_NAMES)
        .ok_or_else(|| DataError::MissingColumn(columns.label.clone().unwrap_or_else(|| "logS".into())))?;
    let key_col = find_column(&headers, columns.inchikey.as_deref(), INCHIKEY_NAMES);
    if columns.inchikey.is_some() && key_col.is_none() {
        return Err(DataError::MissingColumn(columns.inchikey.clone().unwrap_or_default()));
    }

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut duplicates = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |c: usize| row.get(c).map(str::trim).unwrap_or("");
        let smiles_text = field(smiles_col).to_string();
        let label_text = field(label_col);
        if smiles_text.is_empty() || label_text.is_empty() {
            rejects.push(Reject {
                row: row_no,
                smiles: smiles_text,
                reason: "missing field".into(),
            });
            continue;
        }
        let Ok(log_s) = label_text.parse::<f64>() else {
            rejects.push(Reject {
                row: row_no,
                smiles: smiles_text,
                reason: format!("unparseable label {label_text:?}"),
            });
            continue;
        };
        let key = key_col.map(|c| field(c).to_string()).filter(|k| !k.is_empty());
        if let Some(k) = &key {
            if let Some(&first) = seen.get(k) {
                duplicates.push(Duplicate {
                    row: row_no,
                    inchikey: k.clone(),
                    first_row: first,
                });
                continue;
            }
        }
        match make_record(&smiles_text, key.clone(), log_s) {
            Ok(r) => {
                if let Some(k) = key {
                    seen.insert(k, row_no);
                }
                records.push(r);
            }
            Err(reason) => rejects.push(Reject {
                row: row_no,
                smiles: smiles_text,
                reason,
            }),
        }
    }
    if records.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(Dataset {
        name: name.to_string(),
        records,
        rejects,
        duplicates,
    })
}

/// Rejects report: `row,smiles,reason`.
pub fn write_rejects<W: Write>(out: W, rejects: &[Reject]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "smiles", "reason"])?;
    for r in rejects {
        w.write_record([r.row.to_string(), r.smiles.clone(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// z-score transform of labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    /// Population mean and standard deviation of `labels`.
    pub fn fit(labels: &[f64]) -> Result<Self, DataError> {
        if labels.len() < 2 {
            return Err(DataError::DegenerateLabels);
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(DataError::DegenerateLabels);
        }
        Ok(LabelScaler { mean, std })
    }

    pub fn identity() -> Self {
        LabelScaler { mean: 0.0, std: 1.0 }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n_records(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Check that the folds are non-empty, disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n];
        for (f, fold) in self.folds.iter().enumerate() {
            if fold.is_empty() {
                return Err(DataError::InvalidFoldPlan(format!("fold {f} is empty")));
            }
            for &i in fold {
                if i >= n {
                    return Err(DataError::InvalidFoldPlan(format!("index {i} out of range for {n} records")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(DataError::InvalidFoldPlan(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DataError::InvalidFoldPlan(format!("index {missing} has no fold")));
        }
        Ok(())
    }

    /// Indices of every fold except those listed in `exclude`, ascending.
    pub fn indices_excluding(&self, exclude: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| !exclude.contains(f))
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// `index,fold` lines, ordered by index.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut rows: Vec<(usize, usize)> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(f, fold)| fold.iter().map(move |&i| (i, f)))
            .collect();
        rows.sort_unstable();
        for (i, f) in rows {
            writeln!(out, "{i},{f}")?;
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n`, then round-robin assignment to `k` folds.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    if k == 0 || n < k {
        return Err(DataError::TooFewRecords { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (p, i) in order.into_iter().enumerate() {
        folds[p % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds })
}

/// Read `index,fold` lines. A non-numeric first line is treated as a header.
pub fn read_fold_plan<R: Read>(input: R, n_records: usize) -> Result<FoldPlan, DataError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
        match parsed {
            Some(p) => pairs.push(p),
            None if i == 0 => continue,
            None => return Err(DataError::InvalidFoldPlan(format!("line {}: {line:?}", i + 1))),
        }
    }
    let k = pairs.iter().map(|&(_, f)| f + 1).max().unwrap_or(0);
    let mut folds = vec![Vec::new(); k];
    for (i, f) in pairs {
        folds[f].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    let plan = FoldPlan { folds };
    plan.validate(n_records)?;
    Ok(plan)
}

pub fn load_fold_plan(path: &Path, n_records: usize) -> Result<FoldPlan, DataError> {
    read_fold_plan(std::fs::File::open(path)?, n_records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "SMILES,InChIKey,logS\nCCO,KEY1,1.1\nc1ccccc1,KEY2,-1.64\nCC(=O)O,KEY3,1.22\n";

    #[test]
    fn loads_toy_csv() {
        let d = read_csv(TOY.as_bytes(), "toy", &ColumnSpec::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.records[1].smiles, "c1ccccc1");
        assert_eq!(d.records[1].inchikey.as_deref(), Some("KEY2"));
        assert_eq!(d.labels(), vec![1.1, -1.64, 1.22]);
    }

    #[test]
    fn malformed_smiles_is_rejected_not_dropped() {
        let text = "smiles,logs\nCCO,1\nC1CC,2\nCC,3\n";
        let d = read_csv(text.as_bytes(), "t", &ColumnSpec::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.rejects.len(), 1);
        assert_eq!(d.rejects[0].row, 2);
        assert!(!d.rejects[0].reason.is_empty());
    }

    #[test]
    fn duplicate_inchikey_keeps_first() {
        let text = "SMILES,InChIKey,logS\nCCO,K,1\nOCC,K,2\n";
        let d = read_csv(text.as_bytes(), "t", &ColumnSpec::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.duplicates, vec![Duplicate { row: 2, inchikey: "K".into(), first_row: 1 }]);
    }

    #[test]
    fn column_errors() {
        let r = read_csv("name,logS\nx,1\n".as_bytes(), "t", &ColumnSpec::default());
        assert!(matches!(r, Err(DataError::MissingColumn(_))));
        let r = read_csv("smiles,logS\n".as_bytes(), "t", &ColumnSpec::default());
        assert!(matches!(r, Err(DataError::EmptyDataset)));
        let spec = ColumnSpec {
            label: Some("target".into()),
            ..Default::default()
        };
        let d = read_csv("Smiles,Target\nC,1\n".as_bytes(), "t", &spec).unwrap();
        assert_eq!(d.labels(), vec![1.0]);
    }

    #[test]
    fn scaler_hand_arithmetic() {
        let s = LabelScaler::fit(&[-2.0, -4.0]).unwrap();
        assert_eq!((s.mean, s.std), (-3.0, 1.0));
        assert_eq!(s.apply(-2.0), 1.0);
        assert_eq!(s.apply(-4.0), -1.0);
        assert!(matches!(LabelScaler::fit(&[1.0, 1.0]), Err(DataError::DegenerateLabels)));
    }

    #[test]
    fn kfold_sizes() {
        let p = kfold(10, 10, 0).unwrap();
        assert!(p.folds.iter().all(|f| f.len() == 1));
        let p = kfold(25, 10, 3).unwrap();
        let mut sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 2, 3, 3, 3, 3, 3]);
        p.validate(25).unwrap();
        assert_eq!(p, kfold(25, 10, 3).unwrap());
        assert!(matches!(kfold(5, 10, 0), Err(DataError::TooFewRecords { n: 5, k: 10 })));
    }

    #[test]
    fn fold_plan_file_round_trip() {
        let p = kfold(23, 4, 9).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(read_fold_plan(buf.as_slice(), 23).unwrap(), p);
        let with_header = format!("index,fold\n{}", String::from_utf8(buf).unwrap());
        assert_eq!(read_fold_plan(with_header.as_bytes(), 23).unwrap(), p);
        assert!(read_fold_plan("0,0\n1,0\n".as_bytes(), 3).is_err());
        assert!(read_fold_plan("0,0\n0,1\n".as_bytes(), 1).is_err());
    }
}
