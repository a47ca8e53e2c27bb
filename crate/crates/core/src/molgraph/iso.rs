//! Color refinement, isomorphism search and canonical SMILES.

use std::collections::VecDeque;

use super::{write_smiles_ranked, MolError, MolecularGraph};

/// Atom cap for isomorphism queries.
pub const MAX_ISO_ATOMS: usize = 60;

/// Leaf budget for the canonical-labeling search. Fragments and drug-like
/// molecules stay far below it.
const CANON_LEAF_CAP: usize = 4096;

type Adjacency = Vec<Vec<(usize, u8)>>;

fn adjacency(graph: &MolecularGraph) -> Adjacency {
    (0..graph.atom_count())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&(nb, bi)| (nb, graph.bonds()[bi].order.index() as u8))
                .collect()
        })
        .collect()
}

/// Iterated neighborhood refinement. Returns dense ranks: equal ranks mean
/// the atoms could not be distinguished. Ranks depend only on the graph
/// structure and `initial`, never on atom numbering.
pub fn refine_classes(graph: &MolecularGraph, initial: &[u64]) -> Vec<u32> {
    refine(&adjacency(graph), initial)
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap() as u32)
        .collect()
}

fn refine(adj: &Adjacency, initial: &[u64]) -> Vec<u32> {
    let mut ranks = dense_ranks(initial);
    let mut classes = count_distinct(&ranks);
    loop {
        let keys: Vec<(u32, Vec<(u8, u32)>)> = (0..adj.len())
            .map(|i| {
                let mut nb: Vec<(u8, u32)> =
                    adj[i].iter().map(|&(j, order)| (order, ranks[j])).collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = count_distinct(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

fn count_distinct(ranks: &[u32]) -> usize {
    let mut v = ranks.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn base_invariant(graph: &MolecularGraph, i: usize) -> u64 {
    let a = graph.atom(i);
    (a.element.atomic_number() as u64)
        | (((a.formal_charge as i64 + 8) as u64) << 8)
        | ((a.aromatic as u64) << 12)
        | ((graph.degree(i) as u64) << 16)
}

pub fn graph_isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> Result<bool, MolError> {
    graph_isomorphic_colored(a, b, None, None)
}

/// Isomorphism test preserving element, charge, aromatic flag and bond
/// order, plus an optional per-atom color that must also match.
pub fn graph_isomorphic_colored(
    a: &MolecularGraph,
    b: &MolecularGraph,
    colors_a: Option<&[u32]>,
    colors_b: Option<&[u32]>,
) -> Result<bool, MolError> {
    Ok(find_isomorphism(a, b, colors_a, colors_b, |_, _| true)?.is_some())
}

/// Finds an atom bijection `a -> b` preserving atom labels, colors and bond
/// orders, with every pair additionally accepted by `allow(a_atom, b_atom)`.
pub fn find_isomorphism(
    a: &MolecularGraph,
    b: &MolecularGraph,
    colors_a: Option<&[u32]>,
    colors_b: Option<&[u32]>,
    allow: impl Fn(usize, usize) -> bool,
) -> Result<Option<Vec<usize>>, MolError> {
    for g in [a, b] {
        if g.atom_count() > MAX_ISO_ATOMS {
            return Err(MolError::SizeLimit {
                atoms: g.atom_count(),
                limit: MAX_ISO_ATOMS,
            });
        }
    }
    let n = a.atom_count();
    if n != b.atom_count() || a.bond_count() != b.bond_count() {
        return Ok(None);
    }
    if n == 0 {
        return Ok(Some(Vec::new()));
    }

    // refine on the disjoint union so classes are comparable across graphs
    let mut adj = adjacency(a);
    for nbrs in adjacency(b) {
        adj.push(nbrs.into_iter().map(|(j, o)| (j + n, o)).collect());
    }
    let mut initial = Vec::with_capacity(2 * n);
    for (g, colors) in [(a, colors_a), (b, colors_b)] {
        for i in 0..n {
            let color = colors.map(|c| c[i] as u64).unwrap_or(0);
            initial.push(base_invariant(g, i) | (color << 24));
        }
    }
    let ranks = refine(&adj, &initial);
    let (ra, rb) = ranks.split_at(n);
    let mut ha = ra.to_vec();
    let mut hb = rb.to_vec();
    ha.sort_unstable();
    hb.sort_unstable();
    if ha != hb {
        return Ok(None);
    }

    // matching order: BFS from the atom in the rarest class
    let class_size = |r: u32| ra.iter().filter(|&&x| x == r).count();
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![usize::MAX; n];
    let mut placed = vec![false; n];
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !placed[i])
            .min_by_key(|&i| (class_size(ra[i]), i))
            .unwrap();
        placed[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, _) in a.neighbors(u) {
                if !placed[v] {
                    placed[v] = true;
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
    }

    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let found = extend(
        0, &order, &parent, a, b, ra, rb, &allow, &mut map, &mut used,
    );
    Ok(found.then_some(map))
}

#[allow(clippy::too_many_arguments)]
fn extend(
    depth: usize,
    order: &[usize],
    parent: &[usize],
    a: &MolecularGraph,
    b: &MolecularGraph,
    ra: &[u32],
    rb: &[u32],
    allow: &impl Fn(usize, usize) -> bool,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    let candidates: Vec<usize> = if parent[u] != usize::MAX {
        b.neighbors(map[parent[u]]).iter().map(|&(v, _)| v).collect()
    } else {
        (0..b.atom_count()).collect()
    };
    'cand: for v in candidates {
        if used[v] || ra[u] != rb[v] || !allow(u, v) {
            continue;
        }
        let mut mapped_nbrs = 0;
        for &(un, ubi) in a.neighbors(u) {
            if map[un] != usize::MAX {
                mapped_nbrs += 1;
                match b.bond_between(v, map[un]) {
                    Some(bb) if bb.order == a.bonds()[ubi].order => {}
                    _ => continue 'cand,
                }
            }
        }
        let image_nbrs = b.neighbors(v).iter().filter(|&&(vn, _)| used[vn]).count();
        if image_nbrs != mapped_nbrs {
            continue;
        }
        map[u] = v;
        used[v] = true;
        if extend(depth + 1, order, parent, a, b, ra, rb, allow, map, used) {
            return true;
        }
        map[u] = usize::MAX;
        used[v] = false;
    }
    false
}

fn canonical_invariant(graph: &MolecularGraph, i: usize) -> u64 {
    let h = graph.atom(i).explicit_hydrogens.map(|h| h as u64 + 1).unwrap_or(0);
    base_invariant(graph, i) | (h << 24)
}

/// Canonical SMILES: the lexicographically smallest string over all
/// labelings produced by an individualization-refinement search. Equal
/// (isomorphic, including bracket hydrogens) graphs give equal strings.
pub fn canonical_smiles(graph: &MolecularGraph) -> String {
    let n = graph.atom_count();
    if n == 0 {
        return String::new();
    }
    let adj = adjacency(graph);
    let initial: Vec<u64> = (0..n).map(|i| canonical_invariant(graph, i)).collect();
    let ranks = refine(&adj, &initial);
    let mut best: Option<String> = None;
    let mut leaves = 0usize;
    search(graph, &adj, ranks, &mut best, &mut leaves);
    best.unwrap()
}

fn search(
    graph: &MolecularGraph,
    adj: &Adjacency,
    ranks: Vec<u32>,
    best: &mut Option<String>,
    leaves: &mut usize,
) {
    if *leaves >= CANON_LEAF_CAP {
        return;
    }
    let n = ranks.len();
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r as usize] += 1;
    }
    let Some(cell) = (0..n).find(|&r| counts[r] > 1) else {
        *leaves += 1;
        let ranks64: Vec<u64> = ranks.iter().map(|&r| r as u64).collect();
        let s = write_smiles_ranked(graph, &ranks64);
        if best.as_ref().is_none_or(|b| s < *b) {
            *best = Some(s);
        }
        return;
    };
    for v in (0..n).filter(|&i| ranks[i] as usize == cell) {
        let initial: Vec<u64> = (0..n)
            .map(|i| {
                let r = ranks[i] as u64 * 2 + 1;
                if i == v {
                    r - 1
                } else {
                    r
                }
            })
            .collect();
        let refined = refine(adj, &initial);
        search(graph, adj, refined, best, leaves);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn iso(x: &str, y: &str) -> bool {
        graph_isomorphic(&parse_smiles(x).unwrap(), &parse_smiles(y).unwrap()).unwrap()
    }

    #[test]
    fn basic_isomorphism() {
        assert!(iso("CCO", "OCC"));
        assert!(!iso("CCO", "COC"));
        assert!(iso("Cc1ccccc1", "c1ccc(C)cc1"));
        assert!(!iso("C=CC", "CCC"));
        assert!(!iso("C[N+](C)(C)C", "CN(C)C"));
    }

    #[test]
    fn distinguishes_ring_systems() {
        let prism = "C12CC3CC1CC23";
        assert!(iso(prism, prism));
        assert!(!iso("C1CCCCCCCCC1", "C1CCCC1C1CCCC1"));
    }

    #[test]
    fn size_limit() {
        let long = "C".repeat(61);
        let g = parse_smiles(&long).unwrap();
        assert!(matches!(
            graph_isomorphic(&g, &g),
            Err(MolError::SizeLimit { .. })
        ));
    }

    #[test]
    fn canonical_is_order_independent() {
        for (x, y) in [
            ("Cc1ccccc1", "c1ccc(C)cc1"),
            ("OCC(N)C", "CC(N)CO"),
            ("c1ccc2ccccc2c1", "c1cc2ccccc2cc1"),
            ("C1CC1C(=O)O", "OC(=O)C1CC1"),
        ] {
            let a = canonical_smiles(&parse_smiles(x).unwrap());
            let b = canonical_smiles(&parse_smiles(y).unwrap());
            assert_eq!(a, b);
        }
        let a = canonical_smiles(&parse_smiles("CCO").unwrap());
        let b = canonical_smiles(&parse_smiles("COC").unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn constrained_mapping() {
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("OCC").unwrap();
        let m = find_isomorphism(&a, &b, None, None, |_, _| true).unwrap().unwrap();
        assert_eq!(m, vec![2, 1, 0]);
        // forbid the only valid image of atom 0
        let none = find_isomorphism(&a, &b, None, None, |x, y| !(x == 0 && y == 2)).unwrap();
        assert!(none.is_none());
    }
}
