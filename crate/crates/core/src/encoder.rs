//! Message-passing encoders over molecular graphs and scaffolding trees.
//!
//! Directed messages start at zero and are refreshed `depth` times:
//! `v_uv = g1(f_u, f_uv, sum of v_wu for w in N(u) \ {v})`. Node embeddings
//! are then `x_u = g2(f_u, sum of v_vu for v in N(u))`.

use rand::Rng;

use crate::molgraph::{Element, MolecularGraph};
use crate::scaffold::ScaffoldTree;
use crate::tensor::{Activation, Mlp, ParamStore, Tape, TensorError, Var};

const ELEMENTS: [Element; 10] = [
    Element::B,
    Element::C,
    Element::N,
    Element::O,
    Element::P,
    Element::S,
    Element::F,
    Element::Cl,
    Element::Br,
    Element::I,
];
const CHARGE_SLOTS: usize = 3;
const VALENCE_SLOTS: usize = 7;
const H_SLOTS: usize = 5;

/// Atom features: element one-hot, charge one-hot {-1, 0, +1}, total valence
/// one-hot 0..=6, aromatic flag, hydrogen count one-hot 0..=4. Out-of-range
/// values fall into the last slot of their block.
pub const ATOM_FEATURES: usize = ELEMENTS.len() + CHARGE_SLOTS + VALENCE_SLOTS + 1 + H_SLOTS;
/// Bond features: order one-hot (single, double, triple, aromatic), in-ring flag.
pub const BOND_FEATURES: usize = 5;
/// Tree edges carry a single constant feature.
pub const TREE_EDGE_FEATURES: usize = 1;

/// Node and edge features of a structure, ready for message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnInput {
    pub nodes: Vec<Vec<f64>>,
    /// Undirected edges with their features.
    pub edges: Vec<(usize, usize, Vec<f64>)>,
}

impl MpnInput {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub fn atom_features(graph: &MolecularGraph, i: usize) -> Vec<f64> {
    let atom = graph.atom(i);
    let mut f = vec![0.0; ATOM_FEATURES];
    let mut off = 0;
    let e = ELEMENTS.iter().position(|&e| e == atom.element).unwrap_or(0);
    f[off + e] = 1.0;
    off += ELEMENTS.len();
    f[off + (atom.formal_charge.clamp(-1, 1) + 1) as usize] = 1.0;
    off += CHARGE_SLOTS;
    f[off + (graph.valence(i) as usize).min(VALENCE_SLOTS - 1)] = 1.0;
    off += VALENCE_SLOTS;
    f[off] = if atom.aromatic { 1.0 } else { 0.0 };
    off += 1;
    f[off + (graph.hydrogen_count(i) as usize).min(H_SLOTS - 1)] = 1.0;
    f
}

pub fn bond_features(graph: &MolecularGraph, bond: usize) -> Vec<f64> {
    let b = &graph.bonds()[bond];
    let mut f = vec![0.0; BOND_FEATURES];
    f[b.order.index()] = 1.0;
    f[4] = if graph.bond_in_ring(bond) { 1.0 } else { 0.0 };
    f
}

pub fn graph_input(graph: &MolecularGraph) -> MpnInput {
    MpnInput {
        nodes: (0..graph.atom_count()).map(|i| atom_features(graph, i)).collect(),
        edges: graph
            .bonds()
            .iter()
            .enumerate()
            .map(|(bi, b)| (b.a, b.b, bond_features(graph, bi)))
            .collect(),
    }
}

/// Tree nodes are one-hot over the vocabulary; nodes without an id get an
/// all-zero feature.
pub fn tree_input(tree: &ScaffoldTree, vocab_size: usize) -> MpnInput {
    MpnInput {
        nodes: tree
            .nodes()
            .iter()
            .map(|n| tree_node_feature(n.id, vocab_size))
            .collect(),
        edges: tree
            .edges()
            .iter()
            .map(|&(a, b)| (a, b, vec![1.0; TREE_EDGE_FEATURES]))
            .collect(),
    }
}

pub fn tree_node_feature(id: Option<usize>, vocab_size: usize) -> Vec<f64> {
    let mut f = vec![0.0; vocab_size];
    if let Some(id) = id.filter(|&i| i < vocab_size) {
        f[id] = 1.0;
    }
    f
}

/// The two networks of one message-passing encoder.
#[derive(Debug, Clone, Copy)]
pub struct MpnEncoder {
    pub g1: Mlp,
    pub g2: Mlp,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
}

impl MpnEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        node_dim: usize,
        edge_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        MpnEncoder {
            g1: Mlp::new(
                store,
                &format!("{name}.g1"),
                node_dim + edge_dim + hidden,
                hidden,
                hidden,
                Activation::Tanh,
                rng,
            ),
            g2: Mlp::new(
                store,
                &format!("{name}.g2"),
                node_dim + hidden,
                hidden,
                hidden,
                Activation::Tanh,
                rng,
            ),
            node_dim,
            edge_dim,
            hidden,
        }
    }

    /// Node embeddings after `depth` rounds of message passing.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        input: &MpnInput,
        depth: usize,
    ) -> Result<Vec<Var>, TensorError> {
        let n = input.nodes.len();
        for f in &input.nodes {
            if f.len() != self.node_dim {
                return Err(TensorError::ShapeMismatch(format!(
                    "node feature width {} != {}",
                    f.len(),
                    self.node_dim
                )));
            }
        }
        let node_f: Vec<Var> = input.nodes.iter().map(|f| tape.vector(f.clone())).collect();

        // directed edge k: (from, to, feature var)
        let mut directed = Vec::with_capacity(2 * input.edges.len());
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, b, f) in &input.edges {
            if *a >= n || *b >= n || f.len() != self.edge_dim {
                return Err(TensorError::ShapeMismatch(format!(
                    "bad edge ({a}, {b}) with {} features",
                    f.len()
                )));
            }
            let fv = tape.vector(f.clone());
            for (u, v) in [(*a, *b), (*b, *a)] {
                incoming[v].push(directed.len());
                directed.push((u, v, fv));
            }
        }

        let mut messages: Vec<Var> = Vec::new();
        for round in 0..depth {
            let mut next = Vec::with_capacity(directed.len());
            for &(u, v, fuv) in &directed {
                let agg = if round == 0 {
                    tape.zeros(self.hidden)
                } else {
                    let parts: Vec<Var> = incoming[u]
                        .iter()
                        .filter(|&&k| directed[k].0 != v)
                        .map(|&k| messages[k])
                        .collect();
                    tape.add_n(&parts, self.hidden)?
                };
                next.push(self.g1.forward(tape, &[node_f[u], fuv, agg])?);
            }
            messages = next;
        }

        let mut out = Vec::with_capacity(n);
        for u in 0..n {
            let parts: Vec<Var> = if depth == 0 {
                Vec::new()
            } else {
                incoming[u].iter().map(|&k| messages[k]).collect()
            };
            let agg = tape.add_n(&parts, self.hidden)?;
            out.push(self.g2.forward(tape, &[node_f[u], agg])?);
        }
        Ok(out)
    }
}

/// Concatenated means of the tree and graph embeddings.
pub fn global_embedding(
    tape: &mut Tape<'_>,
    tree_emb: &[Var],
    graph_emb: &[Var],
) -> Result<Var, TensorError> {
    if tree_emb.is_empty() || graph_emb.is_empty() {
        return Err(TensorError::EmptySet("global embedding input".into()));
    }
    let t = tape.mean_n(tree_emb)?;
    let g = tape.mean_n(graph_emb)?;
    Ok(tape.concat(&[t, g]))
}
