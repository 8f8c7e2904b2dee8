//! `SOLGRAPH-FEAT v1` binary container and the audit CSV export.
//!
//! Layout after the header line `SOLGRAPH-FEAT v1\n` (all integers little-endian):
//!
//! ```text
//! u32 molecule count
//! per molecule:
//!   u32 N (atoms), u32 E (bonds)
//!   u32 smiles byte length, smiles bytes (UTF-8)
//!   u8 has_label, f64 label (NaN when absent)
//!   N*92 f32   node features, row-major
//!   2*2E u32   edge index, sources then targets
//!   2E*10 f32  edge features, row-major
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::layout::{EDGE_DIM, NODE_DIM};
use super::{edge_feature_names, node_feature_names, MoleculeGraph};
use crate::autodiff::Matrix;

pub const FEATURE_HEADER: &str = "SOLGRAPH-FEAT v1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad header, expected {FEATURE_HEADER:?}")]
    BadHeader,
    #[error("corrupt container: {0}")]
    Corrupt(String),
}

pub fn write_features<W: Write>(mut out: W, graphs: &[MoleculeGraph]) -> io::Result<()> {
    out.write_all(FEATURE_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    out.write_all(&(graphs.len() as u32).to_le_bytes())?;
    for g in graphs {
        out.write_all(&(g.num_atoms() as u32).to_le_bytes())?;
        out.write_all(&(g.num_bonds() as u32).to_le_bytes())?;
        out.write_all(&(g.source_smiles.len() as u32).to_le_bytes())?;
        out.write_all(g.source_smiles.as_bytes())?;
        out.write_all(&[u8::from(g.label.is_some())])?;
        out.write_all(&g.label.unwrap_or(f64::NAN).to_le_bytes())?;
        for v in g.node_features.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        for row in &g.edge_index {
            for &i in row {
                out.write_all(&(i as u32).to_le_bytes())?;
            }
        }
        for v in g.edge_features.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_features<R: Read>(mut input: R) -> Result<Vec<MoleculeGraph>, ContainerError> {
    let mut header = vec![0u8; FEATURE_HEADER.len() + 1];
    input.read_exact(&mut header)?;
    if &header[..FEATURE_HEADER.len()] != FEATURE_HEADER.as_bytes() || header[FEATURE_HEADER.len()] != b'\n' {
        return Err(ContainerError::BadHeader);
    }
    let count = read_u32(&mut input)? as usize;
    let mut graphs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = read_u32(&mut input)? as usize;
        let e = read_u32(&mut input)? as usize;
        let len = read_u32(&mut input)? as usize;
        let mut smiles = vec![0u8; len];
        input.read_exact(&mut smiles)?;
        let smiles = String::from_utf8(smiles).map_err(|_| ContainerError::Corrupt("smiles is not UTF-8".into()))?;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let mut label = [0u8; 8];
        input.read_exact(&mut label)?;
        let label = (flag[0] == 1).then(|| f64::from_le_bytes(label));
        let nodes = read_f32s(&mut input, n * NODE_DIM)?;
        let mut index = [Vec::with_capacity(2 * e), Vec::with_capacity(2 * e)];
        for row in index.iter_mut() {
            for _ in 0..2 * e {
                let i = read_u32(&mut input)? as usize;
                if i >= n {
                    return Err(ContainerError::Corrupt(format!("edge endpoint {i} out of range for {n} atoms")));
                }
                row.push(i);
            }
        }
        let edges = read_f32s(&mut input, 2 * e * EDGE_DIM)?;
        graphs.push(MoleculeGraph {
            node_features: Matrix::from_vec(n, NODE_DIM, nodes),
            edge_index: index,
            edge_features: Matrix::from_vec(2 * e, EDGE_DIM, edges),
            source_smiles: smiles,
            label,
        });
    }
    Ok(graphs)
}

/// Node rows as CSV: `molecule,atom,<92 named columns>`.
pub fn write_node_csv<W: Write>(out: W, graphs: &[MoleculeGraph]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["molecule".to_string(), "atom".to_string()];
    header.extend(node_feature_names());
    w.write_record(&header)?;
    for (m, g) in graphs.iter().enumerate() {
        for a in 0..g.num_atoms() {
            let mut rec = vec![m.to_string(), a.to_string()];
            rec.extend(g.node_features.row(a).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Edge rows as CSV: `molecule,source,target,<10 named columns>`.
pub fn write_edge_csv<W: Write>(out: W, graphs: &[MoleculeGraph]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["molecule".to_string(), "source".to_string(), "target".to_string()];
    header.extend(edge_feature_names());
    w.write_record(&header)?;
    for (m, g) in graphs.iter().enumerate() {
        for e in 0..g.num_directed_edges() {
            let mut rec = vec![m.to_string(), g.edge_index[0][e].to_string(), g.edge_index[1][e].to_string()];
            rec.extend(g.edge_features.row(e).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::featurize_smiles;

    #[test]
    fn round_trip() {
        let graphs = vec![
            featurize_smiles("C", Some(-0.5)).unwrap(),
            featurize_smiles("CC(=O)[O-]", None).unwrap(),
            featurize_smiles("c1ccncc1", Some(1.1)).unwrap(),
        ];
        let mut buf = Vec::new();
        write_features(&mut buf, &graphs).unwrap();
        assert!(buf.starts_with(b"SOLGRAPH-FEAT v1\n"));
        let back = read_features(buf.as_slice()).unwrap();
        assert_eq!(back, graphs);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(matches!(read_features(&b"SOLGRAPH-FEAT v2\n\0\0\0\0"[..]), Err(ContainerError::BadHeader)));
        let graphs = vec![featurize_smiles("CCO", None).unwrap()];
        let mut buf = Vec::new();
        write_features(&mut buf, &graphs).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_features(buf.as_slice()), Err(ContainerError::Io(_))));
    }

    #[test]
    fn csv_export_has_one_row_per_atom_and_edge() {
        let graphs = vec![featurize_smiles("CCO", None).unwrap()];
        let mut nodes = Vec::new();
        write_node_csv(&mut nodes, &graphs).unwrap();
        let text = String::from_utf8(nodes).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        assert!(text.lines().next().unwrap().contains("symbol_C"));
        let mut edges = Vec::new();
        write_edge_csv(&mut edges, &graphs).unwrap();
        assert_eq!(String::from_utf8(edges).unwrap().lines().count(), 1 + 4);
    }
}
