//! Numeric graph representation of a perceived molecule.
//!
//! Node rows are 92 wide and edge rows 10 wide; the column layout is frozen in
//! [`layout`] so checkpoints and importance indices stay comparable across runs.

pub mod container;

use crate::autodiff::Matrix;
use crate::smiles::{self, Atom, Bond, Hybridization, Molecule, Parity, SmilesError};

/// Column layout of node and edge feature rows.
pub mod layout {
    use std::ops::Range;

    pub const NODE_DIM: usize = 92;
    pub const EDGE_DIM: usize = 10;

    pub const ELEMENT: Range<usize> = 0..66;
    pub const DEGREE: Range<usize> = 66..74;
    pub const FORMAL_CHARGE: usize = 74;
    pub const RADICALS: usize = 75;
    pub const HYBRIDIZATION: Range<usize> = 76..83;
    pub const AROMATIC: usize = 83;
    pub const HYDROGENS: Range<usize> = 84..89;
    pub const CHIRAL: usize = 89;
    pub const PARITY: Range<usize> = 90..92;

    pub const BOND_TYPE: Range<usize> = 0..4;
    pub const CONJUGATED: usize = 4;
    pub const IN_RING: usize = 5;
    pub const STEREO: Range<usize> = 6..10;

    pub const MAX_DEGREE_SLOT: usize = 7;
    pub const MAX_H_SLOT: usize = 4;
}

use layout::*;

/// Numeric tensors for one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeGraph {
    /// N x 92.
    pub node_features: Matrix<f32>,
    /// Row 0 holds sources, row 1 targets; bond k occupies columns 2k and 2k+1.
    pub edge_index: [Vec<usize>; 2],
    /// 2E x 10, row i describes directed edge i.
    pub edge_features: Matrix<f32>,
    pub source_smiles: String,
    /// log S in log10(mol/L).
    pub label: Option<f64>,
}

impl MoleculeGraph {
    pub fn num_atoms(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_directed_edges(&self) -> usize {
        self.edge_index[0].len()
    }

    pub fn num_bonds(&self) -> usize {
        self.num_directed_edges() / 2
    }
}

pub fn atom_features(atom: &Atom) -> [f32; NODE_DIM] {
    let mut row = [0.0f32; NODE_DIM];
    row[ELEMENT.start + atom.element.index()] = 1.0;
    row[DEGREE.start + (atom.degree as usize).min(MAX_DEGREE_SLOT)] = 1.0;
    row[FORMAL_CHARGE] = atom.formal_charge as f32;
    row[RADICALS] = atom.radical_electrons as f32;
    row[HYBRIDIZATION.start + atom.hybridization.index()] = 1.0;
    row[AROMATIC] = f32::from(u8::from(atom.aromatic));
    row[HYDROGENS.start + (atom.total_h() as usize).min(MAX_H_SLOT)] = 1.0;
    row[CHIRAL] = f32::from(u8::from(atom.chiral));
    match atom.parity {
        Some(Parity::Ccw) => row[PARITY.start] = 1.0,
        Some(Parity::Cw) => row[PARITY.start + 1] = 1.0,
        None => {}
    }
    row
}

pub fn bond_features(bond: &Bond) -> [f32; EDGE_DIM] {
    let mut row = [0.0f32; EDGE_DIM];
    row[BOND_TYPE.start + bond.order.index()] = 1.0;
    row[CONJUGATED] = f32::from(u8::from(bond.conjugated));
    row[IN_RING] = f32::from(u8::from(bond.in_ring));
    row[STEREO.start + bond.stereo.index()] = 1.0;
    row
}

pub fn build_graph(molecule: &Molecule, source_smiles: &str, label: Option<f64>) -> MoleculeGraph {
    let mut nodes = Vec::with_capacity(molecule.atoms.len() * NODE_DIM);
    for atom in &molecule.atoms {
        nodes.extend_from_slice(&atom_features(atom));
    }
    let mut sources = Vec::with_capacity(2 * molecule.bonds.len());
    let mut targets = Vec::with_capacity(2 * molecule.bonds.len());
    let mut edges = Vec::with_capacity(2 * molecule.bonds.len() * EDGE_DIM);
    for bond in &molecule.bonds {
        let row = bond_features(bond);
        sources.extend([bond.begin, bond.end]);
        targets.extend([bond.end, bond.begin]);
        edges.extend_from_slice(&row);
        edges.extend_from_slice(&row);
    }
    MoleculeGraph {
        node_features: Matrix::from_vec(molecule.atoms.len(), NODE_DIM, nodes),
        edge_index: [sources, targets],
        edge_features: Matrix::from_vec(2 * molecule.bonds.len(), EDGE_DIM, edges),
        source_smiles: source_smiles.to_string(),
        label,
    }
}

/// Parse and featurize in one step.
pub fn featurize_smiles(smiles_text: &str, label: Option<f64>) -> Result<MoleculeGraph, SmilesError> {
    let molecule = smiles::parse(smiles_text)?;
    Ok(build_graph(&molecule, smiles_text, label))
}

/// Human-readable name of every node column, e.g. `symbol_C`, `degree_2`, `hyb_SP2`.
pub fn node_feature_names() -> Vec<String> {
    let mut names: Vec<String> = smiles::ELEMENT_SYMBOLS
        .iter()
        .map(|s| format!("symbol_{s}"))
        .collect();
    names.extend((0..=MAX_DEGREE_SLOT).map(|d| format!("degree_{d}")));
    names.push("formal_charge".into());
    names.push("radical_electrons".into());
    names.extend(Hybridization::ALL.iter().map(|h| format!("hyb_{}", h.name())));
    names.push("aromatic".into());
    names.extend((0..=MAX_H_SLOT).map(|h| format!("h_{h}")));
    names.push("chiral".into());
    names.push("parity_ccw".into());
    names.push("parity_cw".into());
    names
}

pub fn edge_feature_names() -> Vec<String> {
    [
        "bond_single",
        "bond_double",
        "bond_triple",
        "bond_aromatic",
        "conjugated",
        "in_ring",
        "stereo_none",
        "stereo_any",
        "stereo_z",
        "stereo_e",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonzero(row: &[f32]) -> Vec<usize> {
        row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
    }

    fn col(symbol: &str) -> usize {
        smiles::Element::from_symbol(symbol).unwrap().index()
    }

    #[test]
    fn benzene_carbon_has_five_active_slots() {
        let m = smiles::parse("c1ccccc1").unwrap();
        let row = atom_features(&m.atoms[0]);
        assert_eq!(
            nonzero(&row),
            vec![col("C"), DEGREE.start + 2, HYBRIDIZATION.start + 2, AROMATIC, HYDROGENS.start + 1]
        );
    }

    #[test]
    fn methane_carbon() {
        let m = smiles::parse("C").unwrap();
        let row = atom_features(&m.atoms[0]);
        assert_eq!(row[DEGREE.start], 1.0);
        assert_eq!(row[HYDROGENS.start + 4], 1.0);
        assert_eq!(row[HYBRIDIZATION.start + 3], 1.0);
        assert_eq!(row[AROMATIC], 0.0);
    }

    #[test]
    fn acetate_oxygen_charge() {
        let m = smiles::parse("CC(=O)[O-]").unwrap();
        let row = atom_features(&m.atoms[3]);
        assert_eq!(row[col("O")], 1.0);
        assert_eq!(row[FORMAL_CHARGE], -1.0);
        assert_eq!(row[HYDROGENS.start], 1.0);
    }

    #[test]
    fn bond_rows() {
        let m = smiles::parse("c1ccccc1").unwrap();
        let row = bond_features(&m.bonds[0]);
        assert_eq!(nonzero(&row), vec![3, CONJUGATED, IN_RING, STEREO.start]);

        let m = smiles::parse("CC").unwrap();
        assert_eq!(nonzero(&bond_features(&m.bonds[0])), vec![0, STEREO.start]);

        let m = smiles::parse("C/C=C/C").unwrap();
        let row = bond_features(&m.bonds[1]);
        assert_eq!(row[1], 1.0);
        assert_eq!(row[STEREO.start + 3], 1.0);
    }

    #[test]
    fn graph_shapes() {
        let g = featurize_smiles("C", None).unwrap();
        assert_eq!(g.node_features.shape(), (1, NODE_DIM));
        assert_eq!(g.num_directed_edges(), 0);
        assert_eq!(g.edge_features.shape(), (0, EDGE_DIM));

        let g = featurize_smiles("CCO", Some(-0.2)).unwrap();
        assert_eq!(g.node_features.shape(), (3, NODE_DIM));
        assert_eq!(g.edge_index[0].len(), 4);
        assert_eq!(g.edge_index[0][..2], [0, 1]);
        assert_eq!(g.edge_index[1][..2], [1, 0]);

        let g = featurize_smiles("c1ccccc1", None).unwrap();
        assert_eq!(g.edge_index[0].len(), 12);
        let first = g.edge_features.row(0).to_vec();
        assert!((0..12).all(|r| g.edge_features.row(r) == first.as_slice()));
    }

    #[test]
    fn names_cover_every_column() {
        assert_eq!(node_feature_names().len(), NODE_DIM);
        assert_eq!(edge_feature_names().len(), EDGE_DIM);
        assert_eq!(node_feature_names()[AROMATIC], "aromatic");
    }
}
