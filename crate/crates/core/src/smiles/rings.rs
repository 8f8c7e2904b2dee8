//! Minimum cycle basis (Horton candidates + GF(2) elimination).

use std::collections::VecDeque;

use super::Molecule;

/// One basis cycle: atoms in ring order plus the indices of its edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Cycle {
    pub atoms: Vec<usize>,
    pub edges: Vec<usize>,
}

/// Minimum cycle basis of the molecule's bond graph, each cycle in ring order.
pub fn perceive_rings(molecule: &Molecule) -> Vec<Vec<usize>> {
    let edges: Vec<(usize, usize)> = molecule.bonds.iter().map(|b| (b.begin, b.end)).collect();
    minimum_cycle_basis(molecule.atoms.len(), &edges)
        .into_iter()
        .map(|c| c.atoms)
        .collect()
}

type BitRow = Vec<u64>;

fn bit_row(edges: &[usize], words: usize) -> BitRow {
    let mut row = vec![0u64; words];
    for &e in edges {
        row[e / 64] ^= 1 << (e % 64);
    }
    row
}

fn leading_bit(row: &BitRow) -> Option<usize> {
    row.iter()
        .enumerate()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn count_components(n: usize, adj: &[Vec<(usize, usize)>]) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

pub(crate) fn minimum_cycle_basis(n: usize, edges: &[(usize, usize)]) -> Vec<Cycle> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, e));
        adj[v].push((u, e));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let dimension = (edges.len() + count_components(n, &adj)).saturating_sub(n);
    if dimension == 0 {
        return Vec::new();
    }

    // Horton candidates: for each root r and edge (x, y), P(r, x) + (x, y) + P(y, r).
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for root in 0..n {
        let mut dist = vec![usize::MAX; n];
        let mut parent_edge = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &(w, e) in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    parent[w] = v;
                    parent_edge[w] = e;
                    queue.push_back(w);
                }
            }
        }
        let path = |mut v: usize| {
            let mut verts = vec![v];
            let mut es = Vec::new();
            while v != root {
                es.push(parent_edge[v]);
                v = parent[v];
                verts.push(v);
            }
            (verts, es)
        };
        for (e, &(x, y)) in edges.iter().enumerate() {
            if dist[x] == usize::MAX || parent_edge[x] == e || parent_edge[y] == e {
                continue;
            }
            let (vx, ex) = path(x);
            let (vy, ey) = path(y);
            let shared = vx.iter().filter(|v| vy.contains(v)).count();
            if shared != 1 {
                continue;
            }
            let mut cycle_edges = ex;
            cycle_edges.extend(ey);
            cycle_edges.push(e);
            cycle_edges.sort_unstable();
            candidates.push(cycle_edges);
        }
    }
    candidates.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    candidates.dedup();

    let words = edges.len().div_ceil(64);
    let mut reduced: Vec<(usize, BitRow)> = Vec::new();
    let mut basis = Vec::new();
    for cand in candidates {
        let mut row = bit_row(&cand, words);
        for (pivot, r) in &reduced {
            if row[pivot / 64] & (1 << (pivot % 64)) != 0 {
                for (a, b) in row.iter_mut().zip(r) {
                    *a ^= b;
                }
            }
        }
        if let Some(pivot) = leading_bit(&row) {
            // keep earlier rows reduced against the new pivot
            for (_, r) in reduced.iter_mut() {
                if r[pivot / 64] & (1 << (pivot % 64)) != 0 {
                    for (a, b) in r.iter_mut().zip(&row) {
                        *a ^= b;
                    }
                }
            }
            reduced.push((pivot, row));
            basis.push(order_cycle(&cand, edges));
            if basis.len() == dimension {
                break;
            }
        }
    }
    basis
}

/// Walk a cycle's edges starting from its smallest atom, heading to the smaller neighbor.
fn order_cycle(cycle_edges: &[usize], edges: &[(usize, usize)]) -> Cycle {
    let start = cycle_edges
        .iter()
        .map(|&e| edges[e].0.min(edges[e].1))
        .min()
        .unwrap_or(0);
    let next_from = |v: usize, skip: Option<usize>| {
        cycle_edges
            .iter()
            .filter(|&&e| Some(e) != skip && (edges[e].0 == v || edges[e].1 == v))
            .map(|&e| {
                let (a, b) = edges[e];
                (if a == v { b } else { a }, e)
            })
            .min()
    };
    let mut atoms = vec![start];
    let mut ordered_edges = Vec::new();
    let mut current = start;
    let mut came_by = None;
    while let Some((next, e)) = next_from(current, came_by) {
        ordered_edges.push(e);
        if next == start {
            break;
        }
        atoms.push(next);
        current = next;
        came_by = Some(e);
    }
    Cycle {
        atoms,
        edges: ordered_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_sizes(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
        let mut sizes: Vec<usize> = minimum_cycle_basis(n, edges).iter().map(|c| c.atoms.len()).collect();
        sizes.sort_unstable();
        sizes
    }

    #[test]
    fn tree_has_no_rings() {
        assert!(minimum_cycle_basis(3, &[(0, 1), (1, 2)]).is_empty());
    }

    #[test]
    fn hexagon() {
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        let basis = minimum_cycle_basis(6, &edges);
        assert_eq!(basis.len(), 1);
        assert_eq!(basis[0].atoms, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(basis[0].edges.len(), 6);
    }

    #[test]
    fn naphthalene_gives_two_hexagons() {
        // two fused 6-rings sharing edge 4-9
        let edges = [
            (0, 1), (1, 2), (2, 3), (3, 4), (4, 9), (9, 0),
            (4, 5), (5, 6), (6, 7), (7, 8), (8, 9),
        ];
        assert_eq!(ring_sizes(10, &edges), vec![6, 6]);
    }

    #[test]
    fn cubane_has_five_squares() {
        let edges = [
            (0, 1), (1, 2), (2, 3), (3, 0),
            (4, 5), (5, 6), (6, 7), (7, 4),
            (0, 4), (1, 5), (2, 6), (3, 7),
        ];
        assert_eq!(ring_sizes(8, &edges), vec![4, 4, 4, 4, 4]);
    }

    #[test]
    fn bicyclo_2_2_2_octane() {
        // bridgeheads 0 and 1 joined by three 2-atom bridges
        let edges = [(0, 2), (2, 3), (3, 1), (0, 4), (4, 5), (5, 1), (0, 6), (6, 7), (7, 1)];
        assert_eq!(ring_sizes(8, &edges), vec![6, 6]);
    }
}
