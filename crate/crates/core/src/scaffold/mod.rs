//! Scaffolding trees: decomposition of a molecule into ring, bond and atom
//! substructures, the substructure vocabulary, DFS traversal and corpus
//! statistics.

mod decompose;
mod vocab;

use std::collections::BTreeSet;

use thiserror::Error;

pub(crate) use decompose::cluster_bonds;
pub use decompose::decompose;
pub use vocab::{
    build_vocabulary, classify_frequency, FrequencyClass, Substructure, Vocabulary,
    DEFAULT_INFREQUENT_THRESHOLD,
};

use crate::molgraph::MolError;

#[derive(Debug, Error)]
pub enum ScaffoldError {
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("vocabulary id {id} out of range (|S| = {len})")]
    Index { id: usize, len: usize },
    #[error("substructure '{0}' is not in the vocabulary")]
    UnknownSubstructure(String),
    #[error("malformed vocabulary file at line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubstructureKind {
    Ring,
    Bond,
    Atom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Canonical SMILES of the fragment.
    pub key: String,
    pub kind: SubstructureKind,
    /// Atom indices into the source graph. Empty for decoded trees that have
    /// not been assembled.
    pub atoms: Vec<usize>,
    /// Vocabulary id; `None` for substructures outside the vocabulary.
    pub id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldTree {
    nodes: Vec<TreeNode>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl ScaffoldTree {
    pub fn new(nodes: Vec<TreeNode>, edges: Vec<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
        }
        ScaffoldTree {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Vocabulary ids of all nodes; errors on the first unknown one.
    pub fn ids(&self) -> Result<Vec<usize>, ScaffoldError> {
        self.nodes
            .iter()
            .map(|n| {
                n.id
                    .ok_or_else(|| ScaffoldError::UnknownSubstructure(n.key.clone()))
            })
            .collect()
    }

    pub fn id_set(&self) -> BTreeSet<usize> {
        self.nodes.iter().filter_map(|n| n.id).collect()
    }

    pub fn key_set(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(|n| n.key.as_str()).collect()
    }

    /// Connected and acyclic.
    pub fn is_tree(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return self.edges.is_empty();
        }
        if self.edges.len() + 1 != n {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Default DFS root: the first node containing atom 0, or node 0 when the
    /// tree carries no atom sets.
    pub fn default_root(&self) -> usize {
        self.nodes
            .iter()
            .position(|n| n.atoms.contains(&0))
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfsStep {
    pub from: usize,
    pub to: usize,
    /// True when moving to a child, false when backtracking to the parent.
    pub expand: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DfsOrder {
    pub root: usize,
    pub steps: Vec<DfsStep>,
}

impl DfsOrder {
    /// Nodes in the order they are first reached (root first).
    pub fn preorder(&self) -> Vec<usize> {
        std::iter::once(self.root)
            .chain(self.steps.iter().filter(|s| s.expand).map(|s| s.to))
            .collect()
    }

    /// Parent of every node in the traversal (`None` for the root).
    pub fn parents(&self, node_count: usize) -> Vec<Option<usize>> {
        let mut parents = vec![None; node_count];
        for s in self.steps.iter().filter(|s| s.expand) {
            parents[s.to] = Some(s.from);
        }
        parents
    }
}

/// Depth-first traversal listing every tree edge once in each direction.
/// Children are visited by ascending vocabulary id (unknown ids last), ties
/// broken by the smallest atom index of the node and then node index.
pub fn dfs_order(tree: &ScaffoldTree, root: usize) -> DfsOrder {
    let mut steps = Vec::with_capacity(2 * tree.edges().len());
    let child_key = |i: usize| {
        let node = tree.node(i);
        (
            node.id.unwrap_or(usize::MAX),
            node.atoms.iter().min().copied().unwrap_or(usize::MAX),
            i,
        )
    };
    fn visit(
        tree: &ScaffoldTree,
        u: usize,
        parent: Option<usize>,
        key: &dyn Fn(usize) -> (usize, usize, usize),
        steps: &mut Vec<DfsStep>,
    ) {
        let mut kids: Vec<usize> = tree
            .neighbors(u)
            .iter()
            .copied()
            .filter(|&v| Some(v) != parent)
            .collect();
        kids.sort_by_key(|&v| key(v));
        for v in kids {
            steps.push(DfsStep {
                from: u,
                to: v,
                expand: true,
            });
            visit(tree, v, Some(u), key, steps);
            steps.push(DfsStep {
                from: v,
                to: u,
                expand: false,
            });
        }
    }
    if !tree.is_empty() {
        visit(tree, root, None, &child_key, &mut steps);
    }
    DfsOrder { root, steps }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableNoveltyStats {
    /// Mean over pairs of the fraction of target nodes whose substructure also
    /// occurs in the input, in percent.
    pub pct_original: f64,
    /// Percentage of pairs whose target contains at least one substructure
    /// absent from the input.
    pub pct_with_novel: f64,
}

/// Substructure overlap statistics over (input, target) tree pairs. Nodes
/// are compared by canonical key so trees need not share a vocabulary.
pub fn stable_novelty_stats(pairs: &[(ScaffoldTree, ScaffoldTree)]) -> StableNoveltyStats {
    if pairs.is_empty() {
        return StableNoveltyStats {
            pct_original: 0.0,
            pct_with_novel: 0.0,
        };
    }
    let mut frac_sum = 0.0;
    let mut novel = 0usize;
    for (input, target) in pairs {
        let keys = input.key_set();
        let shared = target
            .nodes()
            .iter()
            .filter(|n| keys.contains(n.key.as_str()))
            .count();
        frac_sum += shared as f64 / target.len().max(1) as f64;
        if shared < target.len() {
            novel += 1;
        }
    }
    StableNoveltyStats {
        pct_original: 100.0 * frac_sum / pairs.len() as f64,
        pct_with_novel: 100.0 * novel as f64 / pairs.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn tree(smiles: &str) -> ScaffoldTree {
        decompose(&parse_smiles(smiles).unwrap()).unwrap()
    }

    fn path_tree(ids: &[usize]) -> ScaffoldTree {
        let nodes = ids
            .iter()
            .map(|&id| TreeNode {
                key: format!("k{id}"),
                kind: SubstructureKind::Bond,
                atoms: Vec::new(),
                id: Some(id),
            })
            .collect();
        let edges = (1..ids.len()).map(|i| (i - 1, i)).collect();
        ScaffoldTree::new(nodes, edges)
    }

    #[test]
    fn cyclohexane_is_one_node() {
        let t = tree("C1CCCCC1");
        assert_eq!(t.len(), 1);
        assert!(t.edges().is_empty());
        assert_eq!(t.node(0).kind, SubstructureKind::Ring);
        assert_eq!(t.node(0).key, "C1CCCCC1");
    }

    #[test]
    fn ethanol_is_two_bonds() {
        let t = tree("CCO");
        assert_eq!(t.len(), 2);
        assert_eq!(t.edges().len(), 1);
        let mut keys: Vec<&str> = t.nodes().iter().map(|n| n.key.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["CC", "CO"]);
        let shared: Vec<usize> = t
            .node(0)
            .atoms
            .iter()
            .filter(|a| t.node(1).atoms.contains(a))
            .copied()
            .collect();
        assert_eq!(shared, vec![1]);
    }

    #[test]
    fn branch_point_becomes_atom_node() {
        // isobutane: central carbon sits in three bond clusters
        let t = tree("CC(C)C");
        assert_eq!(t.len(), 4);
        assert_eq!(
            t.nodes()
                .iter()
                .filter(|n| n.kind == SubstructureKind::Atom)
                .count(),
            1
        );
        assert!(t.is_tree());
    }

    #[test]
    fn fused_and_bridged_rings() {
        let t = tree("c1ccc2ccccc2c1");
        assert_eq!(t.len(), 2);
        let shared = t
            .node(0)
            .atoms
            .iter()
            .filter(|a| t.node(1).atoms.contains(a))
            .count();
        assert_eq!(shared, 2);
        // norbornane: SSSR rings share three atoms and merge
        let t = tree("C1CC2CCC1C2");
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn single_atom() {
        let t = tree("O");
        assert_eq!(t.len(), 1);
        assert_eq!(t.node(0).kind, SubstructureKind::Atom);
    }

    #[test]
    fn dfs_on_path_and_star() {
        let t = path_tree(&[0, 1, 2]);
        let order = dfs_order(&t, 0);
        let pairs: Vec<(usize, usize)> = order.steps.iter().map(|s| (s.from, s.to)).collect();
        assert_eq!(pairs, [(0, 1), (1, 2), (2, 1), (1, 0)]);
        assert_eq!(order.preorder(), vec![0, 1, 2]);

        let single = path_tree(&[3]);
        assert!(dfs_order(&single, 0).steps.is_empty());

        let nodes = path_tree(&[0, 1, 2, 3]).nodes().to_vec();
        let star = ScaffoldTree::new(nodes, vec![(0, 1), (0, 2), (0, 3)]);
        assert_eq!(dfs_order(&star, 0).steps.len(), 6);
    }

    #[test]
    fn dfs_children_sorted_by_id() {
        let nodes = path_tree(&[5, 9, 2, 7]).nodes().to_vec();
        let star = ScaffoldTree::new(nodes, vec![(0, 1), (0, 2), (0, 3)]);
        let expanded: Vec<usize> = dfs_order(&star, 0)
            .steps
            .iter()
            .filter(|s| s.expand)
            .map(|s| s.to)
            .collect();
        assert_eq!(expanded, vec![2, 3, 1]);
    }

    #[test]
    fn stats_extremes() {
        let a = path_tree(&[0, 1, 2]);
        let s = stable_novelty_stats(&[(a.clone(), a.clone())]);
        assert_eq!(s.pct_original, 100.0);
        assert_eq!(s.pct_with_novel, 0.0);
        let b = path_tree(&[7, 8]);
        let s = stable_novelty_stats(&[(a.clone(), b)]);
        assert_eq!(s.pct_original, 0.0);
        assert_eq!(s.pct_with_novel, 100.0);
        let c = path_tree(&[0, 9]);
        let s = stable_novelty_stats(&[(a, c)]);
        assert_eq!(s.pct_original, 50.0);
        assert_eq!(s.pct_with_novel, 100.0);
    }
}
