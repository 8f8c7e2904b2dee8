//! Token stream to raw molecular graph. Perception happens afterwards.

use std::collections::BTreeMap;

use super::lexer::{Token, TokenKind};
use super::{Atom, BondOrder, Element, Parity, SmilesError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Up,
    Down,
}

impl Direction {
    pub(crate) fn flipped(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RawBond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    /// `/` or `\` together with the atom the symbol was written after.
    pub direction: Option<(Direction, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct RawAtom {
    pub atom: Atom,
    pub bracket: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct RawMolecule {
    pub atoms: Vec<RawAtom>,
    pub bonds: Vec<RawBond>,
}

#[derive(Debug, Clone, Copy)]
struct BondSymbol {
    order: BondOrder,
    direction: Option<Direction>,
}

fn bond_symbol(c: u8) -> BondSymbol {
    let (order, direction) = match c {
        b'=' => (BondOrder::Double, None),
        b'#' => (BondOrder::Triple, None),
        b':' => (BondOrder::Aromatic, None),
        b'/' => (BondOrder::Single, Some(Direction::Up)),
        b'\\' => (BondOrder::Single, Some(Direction::Down)),
        _ => (BondOrder::Single, None),
    };
    BondSymbol { order, direction }
}

struct OpenRing {
    atom: usize,
    symbol: Option<(BondSymbol, u8)>,
}

struct Builder {
    atoms: Vec<RawAtom>,
    bonds: Vec<RawBond>,
}

impl Builder {
    fn add_bond(
        &mut self,
        begin: usize,
        end: usize,
        symbol: Option<BondSymbol>,
        written_after: usize,
        position: usize,
    ) -> Result<(), SmilesError> {
        let duplicate = self.bonds.iter().any(|b| {
            (b.begin == begin && b.end == end) || (b.begin == end && b.end == begin)
        });
        if begin == end || duplicate {
            return Err(SmilesError::DuplicateBond { position });
        }
        let order = match symbol {
            Some(s) => s.order,
            None if self.atoms[begin].atom.aromatic && self.atoms[end].atom.aromatic => {
                BondOrder::Aromatic
            }
            None => BondOrder::Single,
        };
        self.bonds.push(RawBond {
            begin,
            end,
            order,
            direction: symbol.and_then(|s| s.direction).map(|d| (d, written_after)),
        });
        Ok(())
    }
}

fn unexpected(token: &Token<'_>) -> SmilesError {
    SmilesError::UnexpectedToken {
        position: token.position,
        text: token.text.to_string(),
    }
}

pub(crate) fn build(tokens: &[Token<'_>]) -> Result<RawMolecule, SmilesError> {
    let mut builder = Builder {
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondSymbol, &Token<'_>)> = None;
    // (atom to return to, atom count at open, position of '(')
    let mut branches: Vec<(usize, usize, usize)> = Vec::new();
    let mut rings: BTreeMap<u32, OpenRing> = BTreeMap::new();

    for token in tokens {
        match token.kind {
            TokenKind::AtomOrganic | TokenKind::AtomBracket => {
                let raw = if token.kind == TokenKind::AtomOrganic {
                    organic_atom(token.text)?
                } else {
                    bracket_atom(token)?
                };
                builder.atoms.push(raw);
                let idx = builder.atoms.len() - 1;
                match prev {
                    Some(p) => {
                        let symbol = pending.take().map(|(s, _)| s);
                        builder.add_bond(p, idx, symbol, p, token.position)?;
                    }
                    None => {
                        if let Some((_, t)) = pending {
                            return Err(unexpected(t));
                        }
                    }
                }
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if prev.is_none() || pending.is_some() {
                    return Err(unexpected(token));
                }
                pending = Some((bond_symbol(token.text.as_bytes()[0]), token));
            }
            TokenKind::RingClosure => {
                let atom = prev.ok_or_else(|| unexpected(token))?;
                let label: u32 = token.text.trim_start_matches('%').parse().map_err(|_| unexpected(token))?;
                let here = pending.take().map(|(s, t)| (s, t.text.as_bytes()[0]));
                match rings.remove(&label) {
                    Some(open) => {
                        let (symbol, written_after) = match (open.symbol, here) {
                            (Some((a, ca)), Some((_, cb))) => {
                                if ca != cb {
                                    return Err(SmilesError::ConflictingRingBond { label });
                                }
                                (Some(a), open.atom)
                            }
                            (Some((a, _)), None) => (Some(a), open.atom),
                            (None, Some((b, _))) => (Some(b), atom),
                            (None, None) => (None, open.atom),
                        };
                        builder.add_bond(open.atom, atom, symbol, written_after, token.position)?;
                    }
                    None => {
                        rings.insert(label, OpenRing { atom, symbol: here });
                    }
                }
            }
            TokenKind::BranchOpen => {
                let atom = prev.ok_or_else(|| unexpected(token))?;
                if pending.is_some() {
                    return Err(unexpected(token));
                }
                branches.push((atom, builder.atoms.len(), token.position));
            }
            TokenKind::BranchClose => {
                if let Some((_, t)) = pending {
                    return Err(unexpected(t));
                }
                let (atom, count_at_open, _) = branches
                    .pop()
                    .ok_or(SmilesError::UnbalancedBranch { position: token.position })?;
                if builder.atoms.len() == count_at_open {
                    return Err(unexpected(token));
                }
                prev = Some(atom);
            }
            TokenKind::Dot => return Err(SmilesError::DisconnectedInputRejected),
        }
    }

    if let Some((_, t)) = pending {
        return Err(unexpected(t));
    }
    if let Some((_, _, position)) = branches.pop() {
        return Err(SmilesError::UnbalancedBranch { position });
    }
    if let Some((&label, _)) = rings.iter().next() {
        return Err(SmilesError::UnclosedRingBond { label });
    }
    Ok(RawMolecule {
        atoms: builder.atoms,
        bonds: builder.bonds,
    })
}

fn element(symbol: &str) -> Result<Element, SmilesError> {
    Element::from_symbol(symbol).ok_or_else(|| SmilesError::UnknownElement {
        symbol: symbol.to_string(),
    })
}

fn organic_atom(text: &str) -> Result<RawAtom, SmilesError> {
    let aromatic = text.as_bytes()[0].is_ascii_lowercase();
    let symbol = if aromatic { text.to_ascii_uppercase() } else { text.to_string() };
    let mut atom = Atom::new(element(&symbol)?);
    atom.aromatic = aromatic;
    Ok(RawAtom { atom, bracket: false })
}

const AROMATIC_BRACKET_TWO: [&str; 3] = ["se", "as", "te"];
const AROMATIC_BRACKET_ONE: &[u8] = b"bcnops";

fn bracket_atom(token: &Token<'_>) -> Result<RawAtom, SmilesError> {
    let invalid = || SmilesError::InvalidBracketAtom {
        position: token.position,
        text: token.text.to_string(),
    };
    let body = &token.text[1..token.text.len() - 1];
    let b = body.as_bytes();
    let mut i = 0;

    let digits = |i: &mut usize| -> Option<u32> {
        let start = *i;
        while *i < b.len() && b[*i].is_ascii_digit() {
            *i += 1;
        }
        (*i > start).then(|| body[start..*i].parse().ok()).flatten()
    };

    let isotope = digits(&mut i);

    let (symbol, aromatic) = if i < b.len() && b[i].is_ascii_uppercase() {
        let len = if i + 1 < b.len() && b[i + 1].is_ascii_lowercase() { 2 } else { 1 };
        let s = &body[i..i + len];
        i += len;
        (s.to_string(), false)
    } else if i < b.len() && b[i].is_ascii_lowercase() {
        if let Some(two) = body.get(i..i + 2).filter(|t| AROMATIC_BRACKET_TWO.contains(t)) {
            i += 2;
            let mut s = two.to_string();
            s[..1].make_ascii_uppercase();
            (s, true)
        } else if AROMATIC_BRACKET_ONE.contains(&b[i]) {
            i += 1;
            ((b[i - 1] as char).to_ascii_uppercase().to_string(), true)
        } else {
            return Err(invalid());
        }
    } else {
        return Err(invalid());
    };
    let mut atom = Atom::new(element(&symbol)?);
    atom.aromatic = aromatic;
    atom.isotope = isotope;

    if i < b.len() && b[i] == b'@' {
        i += 1;
        atom.parity = Some(if i < b.len() && b[i] == b'@' {
            i += 1;
            Parity::Cw
        } else {
            Parity::Ccw
        });
        atom.chiral = true;
    }

    let mut h = 0;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        h = digits(&mut i).unwrap_or(1);
    }
    atom.explicit_h = Some(h);
    atom.implicit_h = h;

    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign = if b[i] == b'+' { 1 } else { -1 };
        i += 1;
        let magnitude = if let Some(n) = digits(&mut i) {
            n as i32
        } else {
            let mut n = 1;
            while i < b.len() && b[i] == b[i - 1] {
                n += 1;
                i += 1;
            }
            n
        };
        atom.formal_charge = sign * magnitude;
    }

    if i != b.len() {
        return Err(invalid());
    }
    Ok(RawAtom { atom, bracket: true })
}

#[cfg(test)]
mod tests {
    use super::super::tokenize;
    use super::*;

    fn raw(s: &str) -> Result<RawMolecule, SmilesError> {
        build(&tokenize(s)?)
    }

    fn bracket(text: &str) -> Atom {
        let tokens = tokenize(text).unwrap();
        bracket_atom(&tokens[0]).unwrap().atom
    }

    #[test]
    fn bracket_atom_fields() {
        let a = bracket("[13CH3-]");
        assert_eq!(a.isotope, Some(13));
        assert!(a.element.is("C"));
        assert_eq!(a.explicit_h, Some(3));
        assert_eq!(a.formal_charge, -1);

        let a = bracket("[C@@H]");
        assert_eq!(a.parity, Some(Parity::Cw));
        assert!(a.chiral);
        assert_eq!(a.explicit_h, Some(1));

        let a = bracket("[Fe++]");
        assert_eq!(a.formal_charge, 2);
        let a = bracket("[Fe+3]");
        assert_eq!(a.formal_charge, 3);
        let a = bracket("[nH]");
        assert!(a.aromatic && a.element.is("N"));
        let a = bracket("[se]");
        assert!(a.aromatic && a.element.is("Se"));
        let a = bracket("[Na+]");
        assert!(a.element.is("Na"));
        assert_eq!(a.explicit_h, Some(0));
    }

    #[test]
    fn bad_bracket_atoms() {
        let tokens = tokenize("[C:1]").unwrap();
        assert!(matches!(bracket_atom(&tokens[0]), Err(SmilesError::InvalidBracketAtom { .. })));
        let tokens = tokenize("[Xe]").unwrap();
        assert!(matches!(bracket_atom(&tokens[0]), Err(SmilesError::UnknownElement { .. })));
        let tokens = tokenize("[]").unwrap();
        assert!(matches!(bracket_atom(&tokens[0]), Err(SmilesError::InvalidBracketAtom { .. })));
    }

    #[test]
    fn ring_closure_bond_symbol_on_either_side() {
        let m = raw("C=1CC1").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Double);
        let m = raw("C1CC=1").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Double);
        assert_eq!(raw("C=1CC#1").unwrap_err(), SmilesError::ConflictingRingBond { label: 1 });
    }

    #[test]
    fn structural_errors() {
        assert_eq!(raw("C1CC").unwrap_err(), SmilesError::UnclosedRingBond { label: 1 });
        assert_eq!(raw("C(C").unwrap_err(), SmilesError::UnbalancedBranch { position: 1 });
        assert_eq!(raw("CC)C").unwrap_err(), SmilesError::UnbalancedBranch { position: 2 });
        assert_eq!(raw("CC.O").unwrap_err(), SmilesError::DisconnectedInputRejected);
        assert!(matches!(raw("=CC"), Err(SmilesError::UnexpectedToken { position: 0, .. })));
        assert!(matches!(raw("CC="), Err(SmilesError::UnexpectedToken { .. })));
        assert!(matches!(raw("C()C"), Err(SmilesError::UnexpectedToken { .. })));
        assert!(matches!(raw("C11"), Err(SmilesError::DuplicateBond { .. })));
        assert!(matches!(raw("C1C1"), Err(SmilesError::DuplicateBond { .. })));
    }

    #[test]
    fn branches_return_to_anchor() {
        let m = raw("CC(O)(N)C").unwrap();
        let pairs: Vec<(usize, usize)> = m.bonds.iter().map(|b| (b.begin, b.end)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (1, 3), (1, 4)]);
    }

    #[test]
    fn implicit_aromatic_bond_between_lowercase_atoms() {
        let m = raw("c1ccccc1").unwrap();
        assert!(m.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        let m = raw("c1ccccc1-c1ccccc1").unwrap();
        assert_eq!(m.bonds[6].order, BondOrder::Single);
    }
}
