//! The element vocabulary recognised by the featurizer.

use std::fmt;

/// The 66 element symbols of the atom one-hot block, in feature-column order.
pub const ELEMENT_SYMBOLS: [&str; 66] = [
    "K", "Y", "V", "Sm", "Dy", "In", "Lu", "Hg", "Co", "Mg", "Cu", "Rh", "Hf", "O", "As", "Ge",
    "Au", "Mo", "Br", "Ce", "Zr", "Ag", "Ba", "N", "Cr", "Sr", "Fe", "Gd", "I", "Al", "B", "Se",
    "Pr", "Te", "Cd", "Pd", "Si", "Zn", "Pb", "Sn", "Cl", "Mn", "Cs", "Na", "S", "Ti", "Ni",
    "Ru", "Ca", "Nd", "W", "H", "Li", "Sb", "Bi", "La", "Pt", "Nb", "P", "F", "C", "Re", "Ta",
    "Ir", "Be", "Tl",
];

/// An element drawn from [`ELEMENT_SYMBOLS`]; the wrapped value is its feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        ELEMENT_SYMBOLS
            .iter()
            .position(|s| *s == symbol)
            .map(|i| Element(i as u8))
    }

    pub fn from_index(index: usize) -> Option<Element> {
        (index < ELEMENT_SYMBOLS.len()).then_some(Element(index as u8))
    }

    /// Column of this element inside the one-hot block.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn symbol(self) -> &'static str {
        ELEMENT_SYMBOLS[self.index()]
    }

    pub fn is(self, symbol: &str) -> bool {
        self.symbol() == symbol
    }

    /// Normal valence states used for implicit hydrogens and radical counts, lowest first.
    /// Elements outside the organic table return an empty slice.
    pub fn default_valences(self) -> &'static [i32] {
        match self.symbol() {
            "B" => &[3],
            "C" => &[4],
            "N" => &[3],
            "O" => &[2],
            "P" => &[3, 5],
            "S" => &[2, 4, 6],
            "F" | "Cl" | "Br" | "I" => &[1],
            _ => &[],
        }
    }

    /// Valence states after accounting for a formal charge.
    ///
    /// N, O, S and P gain one unit per positive charge and lose one per negative
    /// charge; C and B lose one unit per unit of charge of either sign, except B-
    /// which becomes carbon-like.
    pub fn charged_valences(self, charge: i32) -> Vec<i32> {
        let base = self.default_valences();
        if charge == 0 || base.is_empty() {
            return base.to_vec();
        }
        let shifted: Vec<i32> = match self.symbol() {
            "N" | "O" | "S" | "P" => base.iter().map(|v| v + charge).collect(),
            "B" if charge < 0 => base.iter().map(|v| v - charge).collect(),
            _ => base.iter().map(|v| v - charge.abs()).collect(),
        };
        shifted.into_iter().filter(|v| *v >= 0).collect()
    }

    /// Heteroatoms that donate a lone pair to an aromatic ring when they carry no double bond.
    pub fn is_lone_pair_donor(self) -> bool {
        matches!(self.symbol(), "N" | "O" | "S" | "Se" | "Te" | "P")
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
