//! Chemical perception over a freshly parsed graph: hydrogens, rings,
//! aromaticity, hybridization, conjugation, bond stereo and radicals.

use super::parser::{Direction, RawMolecule};
use super::rings::{minimum_cycle_basis, Cycle};
use super::{Atom, Bond, BondOrder, BondStereo, Hybridization, Molecule, SmilesError};

pub(crate) fn perceive(raw: RawMolecule) -> Result<Molecule, SmilesError> {
    let bracket: Vec<bool> = raw.atoms.iter().map(|a| a.bracket).collect();
    let directions: Vec<Option<(Direction, usize)>> = raw.bonds.iter().map(|b| b.direction).collect();
    let mut molecule = Molecule {
        atoms: raw.atoms.into_iter().map(|a| a.atom).collect(),
        bonds: raw
            .bonds
            .iter()
            .map(|b| Bond {
                begin: b.begin,
                end: b.end,
                order: b.order,
                conjugated: false,
                in_ring: false,
                stereo: BondStereo::None,
            })
            .collect(),
        rings: Vec::new(),
    };

    for i in 0..molecule.atoms.len() {
        molecule.atoms[i].degree = molecule.bonds_of(i).count() as u32;
    }
    assign_hydrogens(&mut molecule, &bracket)?;

    let edges: Vec<(usize, usize)> = molecule.bonds.iter().map(|b| (b.begin, b.end)).collect();
    let basis = minimum_cycle_basis(molecule.atoms.len(), &edges);
    for cycle in &basis {
        for &e in &cycle.edges {
            molecule.bonds[e].in_ring = true;
        }
        for &a in &cycle.atoms {
            molecule.atoms[a].in_ring = true;
        }
    }
    if let Some(atom) = molecule.atoms.iter().position(|a| a.aromatic && !a.in_ring) {
        return Err(SmilesError::AromaticOutsideRing { atom });
    }
    for bond in &mut molecule.bonds {
        if bond.order == BondOrder::Aromatic && !bond.in_ring {
            bond.order = BondOrder::Single;
        }
    }

    promote_kekule_rings(&mut molecule, &basis);
    for cycle in &basis {
        if cycle.atoms.iter().all(|&a| molecule.atoms[a].aromatic) {
            for &a in &cycle.atoms {
                molecule.atoms[a].in_aromatic_ring = true;
            }
        }
    }
    molecule.rings = basis.into_iter().map(|c| c.atoms).collect();

    let molecule = assign_hybridization(molecule);
    let mut molecule = assign_conjugation(molecule);
    assign_bond_stereo(&mut molecule, &directions);
    Ok(molecule)
}

fn bond_valence(molecule: &Molecule, atom: usize) -> i32 {
    molecule
        .bonds_of(atom)
        .map(|b| molecule.bonds[b].order.valence_contribution())
        .sum()
}

/// Lowest allowed valence that can accommodate `used`.
fn target_valence(valences: &[i32], used: i32) -> Option<i32> {
    valences.iter().copied().find(|&v| v >= used)
}

/// Valence actually consumed by an atom: bonds plus hydrogens, plus one unit for
/// the ring pi system when an aromatic atom has room for it.
fn effective_valence(atom: &Atom, valences: &[i32], bonds_and_h: i32) -> i32 {
    if atom.aromatic {
        match target_valence(valences, bonds_and_h) {
            Some(t) if t > bonds_and_h => bonds_and_h + 1,
            _ => bonds_and_h,
        }
    } else {
        bonds_and_h
    }
}

fn assign_hydrogens(molecule: &mut Molecule, bracket: &[bool]) -> Result<(), SmilesError> {
    for i in 0..molecule.atoms.len() {
        let used = bond_valence(molecule, i);
        let atom = &molecule.atoms[i];
        if bracket[i] {
            let valences = atom.element.charged_valences(atom.formal_charge);
            let Some(&max) = valences.last() else {
                continue;
            };
            let h = atom.explicit_h.unwrap_or(0) as i32;
            let total = used + h;
            if total > max {
                return Err(SmilesError::ValenceExceeded { atom: i, valence: total });
            }
            let effective = effective_valence(atom, &valences, total);
            let radicals = target_valence(&valences, effective).map_or(0, |t| t - effective);
            molecule.atoms[i].radical_electrons = radicals.max(0) as u32;
        } else {
            let valences = atom.element.default_valences();
            let max = valences.last().copied().unwrap_or(0);
            if used > max {
                return Err(SmilesError::ValenceExceeded { atom: i, valence: used });
            }
            let effective = effective_valence(atom, valences, used);
            let h = target_valence(valences, effective).map_or(0, |t| t - effective);
            molecule.atoms[i].implicit_h = h.max(0) as u32;
        }
    }
    Ok(())
}

/// Basis rings followed by the envelope of every pair of rings sharing a bond.
fn aromaticity_candidates(basis: &[Cycle]) -> Vec<Cycle> {
    let mut out = basis.to_vec();
    for (i, a) in basis.iter().enumerate() {
        for b in &basis[i + 1..] {
            if !a.edges.iter().any(|e| b.edges.contains(e)) {
                continue;
            }
            let mut atoms = a.atoms.clone();
            atoms.extend(b.atoms.iter().filter(|x| !a.atoms.contains(x)));
            let mut edges = a.edges.clone();
            edges.extend(b.edges.iter().filter(|x| !a.edges.contains(x)));
            out.push(Cycle { atoms, edges });
        }
    }
    out
}

/// Promote Kekulé-written rings and two-ring envelopes whose pi count is 4n+2.
/// Atoms that are already aromatic and double bonds of previously promoted
/// rings count toward the total, so partially aromatic fused rings are picked up too.
fn promote_kekule_rings(molecule: &mut Molecule, basis: &[Cycle]) {
    let candidates = aromaticity_candidates(basis);
    let basis = candidates.as_slice();
    let mut promoted = vec![false; basis.len()];
    loop {
        let system_bonds: Vec<usize> = basis
            .iter()
            .zip(&promoted)
            .filter(|(_, p)| **p)
            .flat_map(|(c, _)| c.edges.iter().copied())
            .collect();
        let mut changed = false;
        for (ci, cycle) in basis.iter().enumerate() {
            if promoted[ci] || cycle.atoms.iter().all(|&a| molecule.atoms[a].aromatic) {
                continue;
            }
            if ring_pi_electrons(molecule, cycle, &system_bonds).is_some_and(|pi| pi % 4 == 2) {
                promoted[ci] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (cycle, _) in basis.iter().zip(&promoted).filter(|(_, p)| **p) {
            for &a in &cycle.atoms {
                molecule.atoms[a].aromatic = true;
            }
        }
    }
    for (cycle, _) in basis.iter().zip(&promoted).filter(|(_, p)| **p) {
        for &e in &cycle.edges {
            molecule.bonds[e].order = BondOrder::Aromatic;
        }
    }
}

/// Pi electrons an atom written aromatic brings to a ring.
fn aromatic_atom_electrons(atom: &Atom) -> u32 {
    let symbol = atom.element.symbol();
    let pyrrole_like = matches!(symbol, "N" | "P" | "As") && (atom.total_h() > 0 || atom.degree == 3) && atom.formal_charge == 0;
    let chalcogen = matches!(symbol, "O" | "S" | "Se" | "Te") && atom.formal_charge == 0;
    let carbanion = symbol == "C" && atom.formal_charge == -1;
    if pyrrole_like || chalcogen || carbanion {
        2
    } else {
        1
    }
}

/// Pi electrons contributed to `cycle`, or `None` when some atom cannot take part.
fn ring_pi_electrons(molecule: &Molecule, cycle: &Cycle, system_bonds: &[usize]) -> Option<u32> {
    let mut total = 0;
    for &a in &cycle.atoms {
        let atom = &molecule.atoms[a];
        let mut in_ring_double = false;
        let mut system_double = false;
        let mut exocyclic_acceptor = false;
        let mut other_multiple = false;
        let mut aromatic_bond = false;
        for b in molecule.bonds_of(a) {
            let bond = &molecule.bonds[b];
            match bond.order {
                BondOrder::Double if cycle.edges.contains(&b) => in_ring_double = true,
                BondOrder::Double if system_bonds.contains(&b) => system_double = true,
                BondOrder::Double
                    if atom.element.is("C")
                        && !bond.in_ring
                        && matches!(molecule.atoms[bond.other(a)].element.symbol(), "O" | "N") =>
                {
                    exocyclic_acceptor = true
                }
                BondOrder::Double | BondOrder::Triple => other_multiple = true,
                BondOrder::Aromatic => aromatic_bond = true,
                _ => {}
            }
        }
        total += if other_multiple || (exocyclic_acceptor && in_ring_double) {
            return None;
        } else if in_ring_double || system_double {
            1
        } else if exocyclic_acceptor {
            0
        } else if atom.aromatic && aromatic_bond {
            aromatic_atom_electrons(atom)
        } else if atom.element.is_lone_pair_donor() && atom.formal_charge <= 0 {
            2
        } else if atom.element.is("C") && atom.formal_charge == -1 {
            2
        } else if atom.element.is("C") && atom.formal_charge == 1 {
            0
        } else {
            return None;
        };
    }
    Some(total)
}

/// Rule table, first match wins: aromatic, triple or two doubles, one double,
/// five or six sigma connections, hydrogen, otherwise SP3; more than six
/// sigma connections is OTHER.
pub fn assign_hybridization(mut molecule: Molecule) -> Molecule {
    for i in 0..molecule.atoms.len() {
        let mut doubles = 0;
        let mut triples = 0;
        for b in molecule.bonds_of(i) {
            match molecule.bonds[b].order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                _ => {}
            }
        }
        let atom = &molecule.atoms[i];
        let sigma = atom.degree + atom.implicit_h;
        molecule.atoms[i].hybridization = if atom.aromatic {
            Hybridization::SP2
        } else if triples > 0 || doubles >= 2 {
            Hybridization::SP
        } else if doubles == 1 {
            Hybridization::SP2
        } else if sigma == 5 {
            Hybridization::SP3D
        } else if sigma == 6 {
            Hybridization::SP3D2
        } else if atom.element.is("H") {
            Hybridization::S
        } else if sigma <= 4 {
            Hybridization::SP3
        } else {
            Hybridization::Other
        };
    }
    molecule
}

/// Aromatic bonds are conjugated. A single bond is conjugated when both ends are
/// SP/SP2 and each end also carries a multiple bond. A double or triple bond is
/// conjugated when it shares an atom with a conjugated single bond or an
/// aromatic bond.
pub fn assign_conjugation(mut molecule: Molecule) -> Molecule {
    let is_multiple = |o: BondOrder| matches!(o, BondOrder::Double | BondOrder::Triple | BondOrder::Aromatic);
    let unsaturated = |h: Hybridization| matches!(h, Hybridization::SP | Hybridization::SP2);

    let has_multiple: Vec<bool> = (0..molecule.atoms.len())
        .map(|a| molecule.bonds_of(a).any(|b| is_multiple(molecule.bonds[b].order)))
        .collect();

    let mut conjugated: Vec<bool> = molecule
        .bonds
        .iter()
        .map(|b| match b.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => {
                unsaturated(molecule.atoms[b.begin].hybridization)
                    && unsaturated(molecule.atoms[b.end].hybridization)
                    && has_multiple[b.begin]
                    && has_multiple[b.end]
            }
            _ => false,
        })
        .collect();
    let first_pass = conjugated.clone();
    for (i, bond) in molecule.bonds.iter().enumerate() {
        if matches!(bond.order, BondOrder::Double | BondOrder::Triple) {
            conjugated[i] = [bond.begin, bond.end].iter().any(|&a| {
                molecule
                    .bonds_of(a)
                    .any(|other| other != i && first_pass[other])
            });
        }
    }
    for (bond, c) in molecule.bonds.iter_mut().zip(conjugated) {
        bond.conjugated = c;
    }
    molecule
}

/// Directional neighbor of `atom` for the double bond `skip`, expressed as the
/// direction seen when walking toward (`into == true`) or away from `atom`.
fn side_direction(
    molecule: &Molecule,
    directions: &[Option<(Direction, usize)>],
    atom: usize,
    skip: usize,
    into: bool,
) -> Option<Direction> {
    molecule.bonds_of(atom).filter(|&b| b != skip).find_map(|b| {
        let (dir, written_after) = directions[b]?;
        let neighbor = molecule.bonds[b].other(atom);
        // normalise to "neighbor -> atom" when `into`, else "atom -> neighbor"
        let from = if into { neighbor } else { atom };
        Some(if written_after == from { dir } else { dir.flipped() })
    })
}

fn assign_bond_stereo(molecule: &mut Molecule, directions: &[Option<(Direction, usize)>]) {
    for i in 0..molecule.bonds.len() {
        if molecule.bonds[i].order != BondOrder::Double {
            continue;
        }
        let (u, v) = (molecule.bonds[i].begin, molecule.bonds[i].end);
        let left = side_direction(molecule, directions, u, i, true);
        let right = side_direction(molecule, directions, v, i, false);
        molecule.bonds[i].stereo = match (left, right) {
            (Some(l), Some(r)) if l == r => BondStereo::E,
            (Some(_), Some(_)) => BondStereo::Z,
            (Some(_), None) | (None, Some(_)) => BondStereo::Any,
            (None, None) => BondStereo::None,
        };
    }
}
