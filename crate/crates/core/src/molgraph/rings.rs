//! Smallest set of smallest rings via Horton candidates and GF(2) elimination.

use std::collections::VecDeque;

use super::MolecularGraph;

/// Returns a minimum cycle basis of the bond graph. Each ring is listed in
/// cycle order, starting at its smallest atom index and proceeding towards
/// the smaller of that atom's two ring neighbors.
pub fn perceive_rings(graph: &MolecularGraph) -> Vec<Vec<usize>> {
    perceive(graph)
}

pub(crate) fn perceive(graph: &MolecularGraph) -> Vec<Vec<usize>> {
    let n = graph.atom_count();
    let m = graph.bond_count();
    let components = count_components(graph);
    if m + components == n {
        return Vec::new();
    }
    let words = m.div_ceil(64);

    // Horton candidate set.
    let mut candidates: Vec<(Vec<usize>, Vec<u64>)> = Vec::new();
    for root in 0..n {
        let (parent, parent_bond) = bfs_tree(graph, root);
        for (bi, bond) in graph.bonds().iter().enumerate() {
            let (u, v) = (bond.a, bond.b);
            if parent[u] == usize::MAX && u != root || parent[v] == usize::MAX && v != root {
                continue;
            }
            if parent_bond[u] == Some(bi) || parent_bond[v] == Some(bi) {
                continue;
            }
            let pu = path_to_root(&parent, u);
            let pv = path_to_root(&parent, v);
            // paths must meet only at the root
            if pu.iter().filter(|x| pv.contains(x)).count() != 1 {
                continue;
            }
            // root..u, then v..(child of root)
            let mut cycle: Vec<usize> = pu.iter().rev().copied().collect();
            cycle.extend(pv.iter().copied().take(pv.len() - 1));
            let mut bits = vec![0u64; words];
            let len = cycle.len();
            let mut ok = true;
            for k in 0..len {
                let (x, y) = (cycle[k], cycle[(k + 1) % len]);
                match bond_index(graph, x, y) {
                    Some(idx) => bits[idx / 64] |= 1 << (idx % 64),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && len >= 3 {
                candidates.push((normalize_cycle(&cycle), bits));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    candidates.dedup_by(|a, b| a.1 == b.1);

    let target = m + components - n;
    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut rings = Vec::new();
    for (cycle, bits) in candidates {
        if rings.len() == target {
            break;
        }
        let mut v = bits.clone();
        for (row, &p) in basis.iter().zip(&pivots) {
            if v[p / 64] >> (p % 64) & 1 == 1 {
                for (a, b) in v.iter_mut().zip(row) {
                    *a ^= b;
                }
            }
        }
        if let Some(p) = first_bit(&v) {
            basis.push(v);
            pivots.push(p);
            rings.push(cycle);
        }
    }
    rings
}

fn bond_index(graph: &MolecularGraph, x: usize, y: usize) -> Option<usize> {
    graph
        .neighbors(x)
        .iter()
        .find(|&&(nb, _)| nb == y)
        .map(|&(_, bi)| bi)
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, &w)| i * 64 + w.trailing_zeros() as usize)
}

fn count_components(graph: &MolecularGraph) -> usize {
    let n = graph.atom_count();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in graph.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

fn bfs_tree(graph: &MolecularGraph, root: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = graph.atom_count();
    let mut parent = vec![usize::MAX; n];
    let mut parent_bond = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, bi) in graph.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                parent_bond[v] = Some(bi);
                queue.push_back(v);
            }
        }
    }
    (parent, parent_bond)
}

/// Path from `v` up to the root, inclusive at both ends.
fn path_to_root(parent: &[usize], v: usize) -> Vec<usize> {
    let mut path = vec![v];
    let mut cur = v;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        path.push(cur);
    }
    path
}

fn normalize_cycle(cycle: &[usize]) -> Vec<usize> {
    let len = cycle.len();
    let start = (0..len).min_by_key(|&i| cycle[i]).unwrap();
    let next = cycle[(start + 1) % len];
    let prev = cycle[(start + len - 1) % len];
    if next <= prev {
        (0..len).map(|k| cycle[(start + k) % len]).collect()
    } else {
        (0..len).map(|k| cycle[(start + len - k) % len]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn sizes(smiles: &str) -> Vec<usize> {
        let g = parse_smiles(smiles).unwrap();
        let mut s: Vec<usize> = perceive_rings(&g).iter().map(|r| r.len()).collect();
        s.sort();
        s
    }

    #[test]
    fn simple_rings() {
        assert_eq!(sizes("C1CCCCC1"), vec![6]);
        assert!(sizes("CCCC").is_empty());
        assert_eq!(sizes("C1CC1"), vec![3]);
        assert_eq!(sizes("C1CCC12CC2"), vec![3, 4]);
    }

    #[test]
    fn cubane_has_five_four_rings() {
        // cycle rank 12 - 8 + 1 = 5
        assert_eq!(sizes("C12C3C4C1C5C2C3C45"), vec![4, 4, 4, 4, 4]);
    }

    #[test]
    fn rings_are_cycles_in_order() {
        let g = parse_smiles("c1ccc2ccccc2c1").unwrap();
        for ring in perceive_rings(&g) {
            for k in 0..ring.len() {
                assert!(g.bond_between(ring[k], ring[(k + 1) % ring.len()]).is_some());
            }
            assert_eq!(ring[0], *ring.iter().min().unwrap());
        }
    }
}
