use crate::molgraph::{canonical_smiles, MolecularGraph};

use super::{ScaffoldError, ScaffoldTree, SubstructureKind, TreeNode};

/// Edge weight that makes a singleton atom shared by three or more rings
/// win over pairwise ring overlaps in the spanning tree.
const RING_HUB_WEIGHT: usize = 99;

struct Cluster {
    atoms: Vec<usize>,
    kind: SubstructureKind,
}

/// Contracts a connected molecular graph into a scaffolding tree.
///
/// Clusters are the non-ring bonds and the smallest rings (rings sharing
/// three or more atoms are merged). An atom sitting in more than two bond
/// clusters, in two bond clusters plus something else, or in more than two
/// rings becomes its own singleton cluster. The cluster overlap graph is
/// then reduced to a maximum spanning tree where heavier overlaps win and
/// ties go to the lexicographically smaller node pair.
pub fn decompose(graph: &MolecularGraph) -> Result<ScaffoldTree, ScaffoldError> {
    let n = graph.atom_count();
    if n == 0 {
        return Err(ScaffoldError::Decomposition("empty graph".into()));
    }
    if n == 1 {
        let node = make_node(graph, vec![0], SubstructureKind::Atom)?;
        return Ok(ScaffoldTree::new(vec![node], Vec::new()));
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    for (bi, bond) in graph.bonds().iter().enumerate() {
        if !graph.bond_in_ring(bi) {
            let mut atoms = vec![bond.a, bond.b];
            atoms.sort_unstable();
            clusters.push(Cluster {
                atoms,
                kind: SubstructureKind::Bond,
            });
        }
    }
    let mut rings: Vec<Vec<usize>> = graph
        .rings()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.sort_unstable();
            r
        })
        .collect();
    // merge rings that share three or more atoms
    loop {
        let mut merged = false;
        'outer: for i in 0..rings.len() {
            for j in i + 1..rings.len() {
                let shared = rings[i].iter().filter(|a| rings[j].contains(a)).count();
                if shared > 2 {
                    let other = rings.remove(j);
                    rings[i].extend(other);
                    rings[i].sort_unstable();
                    rings[i].dedup();
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    for atoms in rings {
        clusters.push(Cluster {
            atoms,
            kind: SubstructureKind::Ring,
        });
    }

    let mut atom_clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ci, c) in clusters.iter().enumerate() {
        for &a in &c.atoms {
            atom_clusters[a].push(ci);
        }
    }

    // weighted overlap edges keyed by (smaller, larger) cluster index
    let mut weights: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    let mut set_weight = |x: usize, y: usize, w: usize| {
        let key = (x.min(y), x.max(y));
        let e = weights.entry(key).or_insert(0);
        if *e < w {
            *e = w;
        }
    };
    for atom in 0..n {
        let cnei = atom_clusters[atom].clone();
        if cnei.len() <= 1 {
            continue;
        }
        let bonds = cnei
            .iter()
            .filter(|&&c| clusters[c].kind == SubstructureKind::Bond)
            .count();
        let ring_count = cnei
            .iter()
            .filter(|&&c| clusters[c].kind == SubstructureKind::Ring)
            .count();
        if bonds > 2 || (bonds == 2 && cnei.len() > 2) {
            let hub = clusters.len();
            clusters.push(Cluster {
                atoms: vec![atom],
                kind: SubstructureKind::Atom,
            });
            for &c in &cnei {
                set_weight(hub, c, 1);
            }
        } else if ring_count > 2 {
            let hub = clusters.len();
            clusters.push(Cluster {
                atoms: vec![atom],
                kind: SubstructureKind::Atom,
            });
            for &c in &cnei {
                set_weight(hub, c, RING_HUB_WEIGHT);
            }
        } else {
            for (k, &c1) in cnei.iter().enumerate() {
                for &c2 in &cnei[k + 1..] {
                    let inter = clusters[c1]
                        .atoms
                        .iter()
                        .filter(|a| clusters[c2].atoms.contains(a))
                        .count();
                    set_weight(c1, c2, inter);
                }
            }
        }
    }

    // Kruskal, heaviest first, ties by node pair
    let mut edges: Vec<((usize, usize), usize)> = weights.into_iter().collect();
    edges.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let m = clusters.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    let mut tree_edges = Vec::new();
    for ((x, y), _) in edges {
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        if rx != ry {
            parent[rx] = ry;
            tree_edges.push((x, y));
        }
    }
    if tree_edges.len() + 1 != m {
        return Err(ScaffoldError::Decomposition(format!(
            "cluster graph is disconnected ({} clusters, {} tree edges)",
            m,
            tree_edges.len()
        )));
    }

    let nodes = clusters
        .into_iter()
        .map(|c| make_node(graph, c.atoms, c.kind))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScaffoldTree::new(nodes, tree_edges))
}

/// Bonds of `graph` that belong to the fragment induced by a cluster.
pub(crate) fn cluster_bonds(graph: &MolecularGraph, atoms: &[usize], kind: SubstructureKind) -> Vec<usize> {
    match kind {
        SubstructureKind::Atom => Vec::new(),
        SubstructureKind::Bond | SubstructureKind::Ring => graph
            .bonds()
            .iter()
            .enumerate()
            .filter(|(_, b)| atoms.contains(&b.a) && atoms.contains(&b.b))
            .filter(|(bi, _)| kind == SubstructureKind::Bond || graph.bond_in_ring(*bi))
            .map(|(bi, _)| bi)
            .collect(),
    }
}

fn make_node(
    graph: &MolecularGraph,
    atoms: Vec<usize>,
    kind: SubstructureKind,
) -> Result<TreeNode, ScaffoldError> {
    let bonds = cluster_bonds(graph, &atoms, kind);
    let fragment = graph
        .subgraph(&atoms, &bonds)
        .map_err(|e| ScaffoldError::Decomposition(e.to_string()))?;
    Ok(TreeNode {
        key: canonical_smiles(&fragment),
        kind,
        atoms,
        id: None,
    })
}
