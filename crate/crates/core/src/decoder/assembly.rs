//! Attaching substructures to a partially built molecule.
//!
//! A child substructure is merged onto the atoms of its parent node, sharing
//! either one atom (bond, atom and spiro attachments) or one bond (fused
//! rings). Every merge that keeps valences legal is a candidate; candidates
//! that are identical up to symmetry (including which tree nodes own which
//! atoms) are collapsed.

use crate::molgraph::{find_isomorphism, Atom, Bond, MolecularGraph, MAX_ISO_ATOMS};
use crate::scaffold::{cluster_bonds, DfsOrder, ScaffoldTree, SubstructureKind, Vocabulary};

use super::DecoderError;

/// Per-node candidate cap.
pub const MAX_CANDIDATES: usize = 200;

/// A molecule under construction together with the atoms owned by every
/// tree node placed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialMolecule {
    pub graph: MolecularGraph,
    /// Indexed by tree node; empty for nodes not yet placed.
    pub node_atoms: Vec<Vec<usize>>,
}

impl PartialMolecule {
    /// Starts from the root fragment.
    pub fn from_root(fragment: &MolecularGraph, root: usize, node_count: usize) -> Self {
        let mut node_atoms = vec![Vec::new(); node_count];
        node_atoms[root] = (0..fragment.atom_count()).collect();
        PartialMolecule {
            graph: fragment.clone(),
            node_atoms,
        }
    }

    /// Per-atom colors encoding tree-node membership, for symmetry checks.
    fn membership_colors(&self) -> Vec<u32> {
        let n = self.graph.atom_count();
        let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (node, atoms) in self.node_atoms.iter().enumerate() {
            for &a in atoms {
                owners[a].push(node);
            }
        }
        // FNV-1a over the owner list so colors compare across candidates
        owners
            .iter()
            .map(|o| {
                let mut h: u32 = 0x811c_9dc5;
                for &node in o {
                    for byte in (node as u32).to_le_bytes() {
                        h ^= byte as u32;
                        h = h.wrapping_mul(0x0100_0193);
                    }
                }
                h
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyCandidate {
    pub partial: PartialMolecule,
    /// Graph atom for each atom of the child fragment.
    pub child_atoms: Vec<usize>,
    pub score: f64,
}

fn atoms_compatible(a: &Atom, b: &Atom) -> bool {
    a.element == b.element
        && a.formal_charge == b.formal_charge
        && a.aromatic == b.aromatic
        && a.explicit_hydrogens == b.explicit_hydrogens
}

/// Merges `child` into `partial.graph` with the given (child atom, graph
/// atom) identifications. Returns `None` if the result is not a valid
/// molecule.
fn merge(
    partial: &PartialMolecule,
    child: &MolecularGraph,
    shared: &[(usize, usize)],
    child_node: usize,
) -> Option<AssemblyCandidate> {
    let g = &partial.graph;
    let mut atoms: Vec<Atom> = g.atoms().to_vec();
    let mut map = vec![usize::MAX; child.atom_count()];
    for &(c, p) in shared {
        map[c] = p;
    }
    for (c, slot) in map.iter_mut().enumerate() {
        if *slot == usize::MAX {
            *slot = atoms.len();
            atoms.push(child.atom(c).clone());
        }
    }
    let old_n = g.atom_count();
    let mut bonds: Vec<Bond> = g.bonds().to_vec();
    for b in child.bonds() {
        let (x, y) = (map[b.a], map[b.b]);
        let existing = if x < old_n && y < old_n {
            g.bond_between(x, y)
        } else {
            None
        };
        match existing {
            Some(e) if e.order == b.order => continue,
            Some(_) => return None,
            None => bonds.push(Bond::new(x, y, b.order)),
        }
    }
    let graph = MolecularGraph::new(atoms, bonds).ok()?;
    // aromatic atoms are sp2: never more than three neighbours
    if (0..graph.atom_count()).any(|i| graph.atom(i).aromatic && graph.degree(i) > 3) {
        return None;
    }
    let mut node_atoms = partial.node_atoms.clone();
    let mut owned = map.clone();
    owned.sort_unstable();
    node_atoms[child_node] = owned;
    Some(AssemblyCandidate {
        partial: PartialMolecule { graph, node_atoms },
        child_atoms: map,
        score: 0.0,
    })
}

/// All valid merges of `child` onto the atoms of tree node `parent_node`,
/// before symmetry reduction, in a deterministic order.
pub fn raw_attachments(
    partial: &PartialMolecule,
    parent_node: usize,
    parent_kind: SubstructureKind,
    child: &MolecularGraph,
    child_kind: SubstructureKind,
    child_node: usize,
) -> Vec<AssemblyCandidate> {
    let g = &partial.graph;
    let anchor = &partial.node_atoms[parent_node];
    let mut out = Vec::new();
    if parent_kind == SubstructureKind::Ring && child_kind == SubstructureKind::Ring {
        for (i, &p1) in anchor.iter().enumerate() {
            for &p2 in &anchor[i + 1..] {
                let Some(pb) = g.bond_between(p1, p2) else {
                    continue;
                };
                for cb in child.bonds() {
                    if cb.order != pb.order {
                        continue;
                    }
                    for (c1, c2) in [(cb.a, cb.b), (cb.b, cb.a)] {
                        if atoms_compatible(child.atom(c1), g.atom(p1))
                            && atoms_compatible(child.atom(c2), g.atom(p2))
                        {
                            if let Some(c) = merge(partial, child, &[(c1, p1), (c2, p2)], child_node) {
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
    }
    let both_rings =
        parent_kind == SubstructureKind::Ring && child_kind == SubstructureKind::Ring;
    for &p in anchor {
        for c in 0..child.atom_count() {
            // a spiro centre is never aromatic
            if both_rings && g.atom(p).aromatic {
                continue;
            }
            if atoms_compatible(child.atom(c), g.atom(p)) {
                if let Some(cand) = merge(partial, child, &[(c, p)], child_node) {
                    out.push(cand);
                }
            }
        }
    }
    out
}

/// Collapses candidates that are equivalent up to symmetry, keeping the
/// first of every class, and applies the candidate cap.
pub fn deduplicate(candidates: Vec<AssemblyCandidate>) -> Vec<AssemblyCandidate> {
    let mut kept: Vec<(AssemblyCandidate, Vec<u32>)> = Vec::new();
    for cand in candidates {
        let colors = cand.partial.membership_colors();
        let small = cand.partial.graph.atom_count() <= MAX_ISO_ATOMS;
        let duplicate = small
            && kept.iter().any(|(k, kc)| {
                matches!(
                    find_isomorphism(
                        &k.partial.graph,
                        &cand.partial.graph,
                        Some(kc),
                        Some(&colors),
                        |_, _| true
                    ),
                    Ok(Some(_))
                )
            });
        if !duplicate {
            kept.push((cand, colors));
            if kept.len() == MAX_CANDIDATES {
                break;
            }
        }
    }
    kept.into_iter().map(|(c, _)| c).collect()
}

/// Symmetry-reduced attachments of `child` onto `parent_node`.
pub fn enumerate_attachments(
    partial: &PartialMolecule,
    parent_node: usize,
    parent_kind: SubstructureKind,
    child: &MolecularGraph,
    child_kind: SubstructureKind,
    child_node: usize,
) -> Result<Vec<AssemblyCandidate>, DecoderError> {
    let raw = raw_attachments(partial, parent_node, parent_kind, child, child_kind, child_node);
    if raw.is_empty() {
        return Err(DecoderError::NoValidAttachment { node: child_node });
    }
    Ok(deduplicate(raw))
}

/// Whether `child` can be attached to a free-standing `parent` fragment at
/// all. Used to mask impossible children while decoding trees.
pub fn attachment_possible(
    parent: &MolecularGraph,
    parent_kind: SubstructureKind,
    child: &MolecularGraph,
    child_kind: SubstructureKind,
) -> bool {
    let partial = PartialMolecule::from_root(parent, 0, 2);
    !raw_attachments(&partial, 0, parent_kind, child, child_kind, 1).is_empty()
}

/// One supervised assembly decision: the candidates for a node and the
/// index of the one that matches the target molecule.
#[derive(Debug, Clone)]
pub struct AssemblyStep {
    pub node: usize,
    pub parent: usize,
    pub candidates: Vec<AssemblyCandidate>,
    pub gold: usize,
}

#[derive(Debug, Clone)]
pub struct TeacherAssembly {
    pub steps: Vec<AssemblyStep>,
    /// The molecule rebuilt from vocabulary fragments along the gold path.
    pub result: PartialMolecule,
}

/// Replays the assembly of a target molecule from its annotated tree,
/// recording the candidate set and gold choice for every non-root node in
/// DFS preorder.
pub fn teacher_assembly(
    target: &MolecularGraph,
    tree: &ScaffoldTree,
    order: &DfsOrder,
    vocab: &Vocabulary,
) -> Result<TeacherAssembly, DecoderError> {
    let n = tree.len();
    let fragment_of = |node: usize| -> Result<&MolecularGraph, DecoderError> {
        let id = tree.node(node).id.ok_or_else(|| {
            DecoderError::UnknownSubstructure(tree.node(node).key.clone())
        })?;
        Ok(&vocab.get(id)?.fragment)
    };
    let cluster = |node: usize| -> Result<MolecularGraph, DecoderError> {
        let tn = tree.node(node);
        let bonds = cluster_bonds(target, &tn.atoms, tn.kind);
        Ok(target.subgraph(&tn.atoms, &bonds)?)
    };

    // graph atom -> target atom
    let root = order.root;
    let root_frag = fragment_of(root)?;
    let root_cluster = cluster(root)?;
    let iso = find_isomorphism(root_frag, &root_cluster, None, None, |_, _| true)?
        .ok_or_else(|| DecoderError::Assembly("root fragment does not match its cluster".into()))?;
    let root_atoms = &tree.node(root).atoms;
    let mut to_target: Vec<usize> = iso.iter().map(|&k| root_atoms[k]).collect();
    let mut partial = PartialMolecule::from_root(root_frag, root, n);

    let mut steps = Vec::new();
    for s in order.steps.iter().filter(|s| s.expand) {
        let (x, y) = (s.from, s.to);
        let child = fragment_of(y)?;
        let y_node = tree.node(y);
        let y_cluster = cluster(y)?;
        let shared_target: Vec<usize> = y_node
            .atoms
            .iter()
            .copied()
            .filter(|a| tree.node(x).atoms.contains(a))
            .collect();
        let cluster_colors: Vec<u32> = y_node
            .atoms
            .iter()
            .map(|a| {
                if shared_target.contains(a) {
                    *a as u32 + 1
                } else {
                    0
                }
            })
            .collect();

        let raw = raw_attachments(&partial, x, tree.node(x).kind, child, y_node.kind, y);
        let mut gold: Option<(usize, Vec<usize>)> = None;
        for (ci, cand) in raw.iter().enumerate() {
            let old_n = partial.graph.atom_count();
            let shared: Vec<usize> = (0..child.atom_count())
                .filter(|&c| cand.child_atoms[c] < old_n)
                .collect();
            if shared.len() != shared_target.len() {
                continue;
            }
            let child_colors: Vec<u32> = (0..child.atom_count())
                .map(|c| {
                    let ga = cand.child_atoms[c];
                    if ga < old_n {
                        to_target[ga] as u32 + 1
                    } else {
                        0
                    }
                })
                .collect();
            if let Some(m) = find_isomorphism(
                child,
                &y_cluster,
                Some(&child_colors),
                Some(&cluster_colors),
                |_, _| true,
            )? {
                gold = Some((ci, m));
                break;
            }
        }
        let Some((gold_raw, m)) = gold else {
            return Err(DecoderError::Assembly(format!(
                "no attachment of node {y} reproduces the target"
            )));
        };
        let old_n = partial.graph.atom_count();
        let mut raw = raw;
        let gold_cand = raw.remove(gold_raw);
        let mut ordered = vec![gold_cand];
        ordered.extend(raw);
        let candidates = deduplicate(ordered);
        let chosen = candidates[0].clone();
        // extend the target mapping with the atoms the child introduced
        to_target.resize(chosen.partial.graph.atom_count(), usize::MAX);
        for c in 0..child.atom_count() {
            let ga = chosen.child_atoms[c];
            if ga >= old_n {
                to_target[ga] = y_node.atoms[m[c]];
            }
        }
        partial = chosen.partial;
        steps.push(AssemblyStep {
            node: y,
            parent: x,
            candidates,
            gold: 0,
        });
    }
    Ok(TeacherAssembly {
        steps,
        result: partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{graph_isomorphic, parse_smiles};
    use crate::scaffold::{build_vocabulary, dfs_order};

    fn frag(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn methyl_on_benzene_has_one_class() {
        let ring = frag("c1ccccc1");
        let bond = frag("Cc");
        let partial = PartialMolecule::from_root(&ring, 0, 2);
        let raw = raw_attachments(&partial, 0, SubstructureKind::Ring, &bond, SubstructureKind::Bond, 1);
        assert_eq!(raw.len(), 6);
        let dedup = deduplicate(raw);
        assert_eq!(dedup.len(), 1);
        assert!(graph_isomorphic(&dedup[0].partial.graph, &frag("Cc1ccccc1")).unwrap());
    }

    #[test]
    fn saturated_atom_rejects_attachment() {
        // the carbon of a fluorine-free CF4-like saturated centre
        let parent = frag("C(F)(F)(F)F");
        let partial = PartialMolecule {
            node_atoms: vec![vec![0], Vec::new()],
            graph: parent,
        };
        let res = enumerate_attachments(
            &partial,
            0,
            SubstructureKind::Atom,
            &frag("CC"),
            SubstructureKind::Bond,
            1,
        );
        assert!(matches!(res, Err(DecoderError::NoValidAttachment { node: 1 })));
    }

    #[test]
    fn bond_on_bond_at_most_two() {
        let partial = PartialMolecule::from_root(&frag("CO"), 0, 2);
        let c = enumerate_attachments(&partial, 0, SubstructureKind::Bond, &frag("CC"), SubstructureKind::Bond, 1)
            .unwrap();
        assert!(c.len() <= 2);
        assert_eq!(c.len(), 1);
        let c = enumerate_attachments(&partial, 0, SubstructureKind::Bond, &frag("CN"), SubstructureKind::Bond, 1)
            .unwrap();
        // N-C bond can only share its carbon with the C-O carbon
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn ring_fusion_candidates() {
        let partial = PartialMolecule::from_root(&frag("c1ccccc1"), 0, 2);
        let c = enumerate_attachments(
            &partial,
            0,
            SubstructureKind::Ring,
            &frag("c1ccccc1"),
            SubstructureKind::Ring,
            1,
        )
        .unwrap();
        // naphthalene-like fusion; spiro on aromatic carbons is invalid
        assert_eq!(c.len(), 1);
        assert!(graph_isomorphic(&c[0].partial.graph, &frag("c1ccc2ccccc2c1")).unwrap());
    }

    #[test]
    fn teacher_assembly_rebuilds_targets() {
        let smiles = [
            "CCO",
            "Cc1ccccc1",
            "c1ccc2ccccc2c1",
            "CC(=O)Nc1ccc(O)cc1",
            "C1CCC2(CC1)CCCC2",
            "O=[N+]([O-])c1ccccc1",
            "CC(C)(C)c1ccc(cc1)C(=O)O",
            "c1ccc2[nH]ccc2c1",
        ];
        let graphs: Vec<_> = smiles.iter().map(|s| frag(s)).collect();
        let vocab = build_vocabulary(&graphs).unwrap();
        for (s, g) in smiles.iter().zip(&graphs) {
            let tree = vocab.tree_of(g).unwrap();
            let order = dfs_order(&tree, tree.default_root());
            let ta = teacher_assembly(g, &tree, &order, &vocab).unwrap();
            assert!(graph_isomorphic(&ta.result.graph, g).unwrap(), "{s}");
            assert_eq!(ta.steps.len(), tree.len() - 1);
        }
    }
}
