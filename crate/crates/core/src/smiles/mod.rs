//! SMILES tokenization, parsing and chemical perception.
//!
//! [`parse`] turns a SMILES string into a [`Molecule`] whose atoms carry implicit
//! hydrogen counts, ring membership, aromaticity, hybridization and stereo flags,
//! and whose bonds carry order, conjugation, ring and stereo flags.

mod elements;
mod lexer;
mod parser;
mod perception;
mod rings;

use std::fmt;

use thiserror::Error;

pub use elements::{Element, ELEMENT_SYMBOLS};
pub use lexer::{tokenize, Token, TokenKind};
pub use perception::{assign_conjugation, assign_hybridization};
pub use rings::perceive_rings;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unexpected character {character:?} at position {position}")]
    UnexpectedCharacter { position: usize, character: char },
    #[error("unterminated bracket atom starting at position {position}")]
    UnterminatedBracket { position: usize },
    #[error("malformed bracket atom {text:?} at position {position}")]
    InvalidBracketAtom { position: usize, text: String },
    #[error("unexpected token {text:?} at position {position}")]
    UnexpectedToken { position: usize, text: String },
    #[error("ring bond {label} is never closed")]
    UnclosedRingBond { label: u32 },
    #[error("ring bond {label} has conflicting bond symbols")]
    ConflictingRingBond { label: u32 },
    #[error("unbalanced branch at position {position}")]
    UnbalancedBranch { position: usize },
    #[error("duplicate bond or self-loop created at position {position}")]
    DuplicateBond { position: usize },
    #[error("atom {atom} exceeds its allowed valence (computed valence {valence})")]
    ValenceExceeded { atom: usize, valence: i32 },
    #[error("element {symbol:?} is not supported")]
    UnknownElement { symbol: String },
    #[error("atom {atom} is marked aromatic but is not in a ring")]
    AromaticOutsideRing { atom: usize },
    #[error("disconnected SMILES ('.') are rejected")]
    DisconnectedInputRejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hybridization {
    S,
    SP,
    SP2,
    SP3,
    SP3D,
    SP3D2,
    Other,
}

impl Hybridization {
    pub const ALL: [Hybridization; 7] = [
        Hybridization::S,
        Hybridization::SP,
        Hybridization::SP2,
        Hybridization::SP3,
        Hybridization::SP3D,
        Hybridization::SP3D2,
        Hybridization::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Hybridization::S => "S",
            Hybridization::SP => "SP",
            Hybridization::SP2 => "SP2",
            Hybridization::SP3 => "SP3",
            Hybridization::SP3D => "SP3D",
            Hybridization::SP3D2 => "SP3D2",
            Hybridization::Other => "OTHER",
        }
    }
}

/// Tetrahedral parity as written: `@` is counter-clockwise, `@@` clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Ccw,
    Cw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Contribution to an atom's valence; aromatic bonds count one and the
    /// ring pi system is accounted separately.
    pub fn valence_contribution(self) -> i32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "SINGLE",
            BondOrder::Double => "DOUBLE",
            BondOrder::Triple => "TRIPLE",
            BondOrder::Aromatic => "AROMATIC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondStereo {
    None,
    Any,
    Z,
    E,
}

impl BondStereo {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BondStereo::None => "NONE",
            BondStereo::Any => "ANY",
            BondStereo::Z => "Z",
            BondStereo::E => "E",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub isotope: Option<u32>,
    pub formal_charge: i32,
    pub radical_electrons: u32,
    pub aromatic: bool,
    /// Hydrogen count written inside a bracket atom.
    pub explicit_h: Option<u32>,
    /// Total attached hydrogens; equals `explicit_h` for bracket atoms.
    pub implicit_h: u32,
    /// Number of atoms bonded in the graph.
    pub degree: u32,
    pub hybridization: Hybridization,
    pub chiral: bool,
    pub parity: Option<Parity>,
    pub in_aromatic_ring: bool,
    pub in_ring: bool,
}

impl Atom {
    fn new(element: Element) -> Atom {
        Atom {
            element,
            isotope: None,
            formal_charge: 0,
            radical_electrons: 0,
            aromatic: false,
            explicit_h: None,
            implicit_h: 0,
            degree: 0,
            hybridization: Hybridization::Other,
            chiral: false,
            parity: None,
            in_aromatic_ring: false,
            in_ring: false,
        }
    }

    pub fn total_h(&self) -> u32 {
        self.implicit_h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub conjugated: bool,
    pub in_ring: bool,
    pub stereo: BondStereo,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }

    pub fn touches(&self, atom: usize) -> bool {
        self.begin == atom || self.end == atom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Minimum cycle basis, each cycle listed as atom indices in ring order.
    pub rings: Vec<Vec<usize>>,
}

impl Molecule {
    /// Bond indices incident to `atom`, in bond order.
    pub fn bonds_of(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.bonds
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.touches(atom))
            .map(|(i, _)| i)
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.bonds_of(atom).map(move |b| self.bonds[b].other(atom))
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds
            .iter()
            .position(|bond| (bond.begin == a && bond.end == b) || (bond.begin == b && bond.end == a))
    }
}

/// Deterministic line-oriented dump: one atom per line, then one bond per line.
impl fmt::Display for Molecule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "atoms {}", self.atoms.len())?;
        for (i, a) in self.atoms.iter().enumerate() {
            let parity = match a.parity {
                Some(Parity::Ccw) => "CCW",
                Some(Parity::Cw) => "CW",
                None => "-",
            };
            writeln!(
                f,
                "atom {i} {} charge={} radicals={} aromatic={} h={} degree={} hyb={} chiral={} parity={} ring={} aromatic_ring={}",
                a.element,
                a.formal_charge,
                a.radical_electrons,
                u8::from(a.aromatic),
                a.implicit_h,
                a.degree,
                a.hybridization.name(),
                u8::from(a.chiral),
                parity,
                u8::from(a.in_ring),
                u8::from(a.in_aromatic_ring),
            )?;
        }
        writeln!(f, "bonds {}", self.bonds.len())?;
        for (i, b) in self.bonds.iter().enumerate() {
            writeln!(
                f,
                "bond {i} {}-{} order={} conjugated={} ring={} stereo={}",
                b.begin,
                b.end,
                b.order.name(),
                u8::from(b.conjugated),
                u8::from(b.in_ring),
                b.stereo.name(),
            )?;
        }
        writeln!(f, "rings {}", self.rings.len())?;
        for ring in &self.rings {
            let ids: Vec<String> = ring.iter().map(usize::to_string).collect();
            writeln!(f, "ring {}", ids.join(" "))?;
        }
        Ok(())
    }
}

/// Parse a SMILES string and run the full perception pipeline.
pub fn parse(smiles: &str) -> Result<Molecule, SmilesError> {
    let tokens = tokenize(smiles)?;
    let raw = parser::build(&tokens)?;
    perception::perceive(raw)
}
