//! Tree decoder with the copy/refine substructure distribution, and graph
//! assembly of decoded trees.

mod assembly;
mod model;

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use thiserror::Error;

pub use assembly::{
    attachment_possible, deduplicate, enumerate_attachments, raw_attachments, teacher_assembly,
    AssemblyCandidate, AssemblyStep, PartialMolecule, TeacherAssembly, MAX_CANDIDATES,
};
pub use model::{CoreModel, ModelConfig, Networks};

use crate::encoder::{global_embedding, graph_input, tree_input, tree_node_feature, MpnInput};
use crate::molgraph::{canonical_smiles, MolError, MolecularGraph};
use crate::scaffold::{ScaffoldError, ScaffoldTree, SubstructureKind, TreeNode};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error("substructure '{0}' is outside the vocabulary")]
    UnknownSubstructure(String),
    #[error("tree node {node} has no valid attachment")]
    NoValidAttachment { node: usize },
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("invalid decoder input: {0}")]
    Input(String),
}

/// Encoded input molecule: node embeddings of its scaffolding tree and
/// graph, the global vector `z`, and the vocabulary id of every tree node.
#[derive(Debug, Clone)]
pub struct EncodedInput {
    pub tree_emb: Vec<Var>,
    pub graph_emb: Vec<Var>,
    pub z: Var,
    pub tree_ids: Vec<Option<usize>>,
}

/// Precomputed encoder features of an input molecule.
#[derive(Debug, Clone)]
pub struct InputFeatures {
    pub graph: MpnInput,
    pub tree: MpnInput,
    pub tree_ids: Vec<Option<usize>>,
}

impl InputFeatures {
    pub fn new(graph: &MolecularGraph, tree: &ScaffoldTree, vocab_size: usize) -> Self {
        InputFeatures {
            graph: graph_input(graph),
            tree: tree_input(tree, vocab_size),
            tree_ids: tree.nodes().iter().map(|n| n.id).collect(),
        }
    }
}

pub fn encode_input(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    features: &InputFeatures,
) -> Result<EncodedInput, DecoderError> {
    let net = &model.nets;
    let tree_emb = net.tree_enc.encode(tape, &features.tree, model.config.tree_depth)?;
    let graph_emb = net.graph_enc.encode(tape, &features.graph, model.config.graph_depth)?;
    let z = global_embedding(tape, &tree_emb, &graph_emb)?;
    Ok(EncodedInput {
        tree_emb,
        graph_emb,
        z,
        tree_ids: features.tree_ids.clone(),
    })
}

/// Attention weights over the tree and graph embeddings and the
/// concatenated context vector.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub alpha_tree: Var,
    pub alpha_graph: Var,
    pub context: Var,
}

fn attend(tape: &mut Tape<'_>, query: Var, set: &[Var]) -> Result<(Var, Var), DecoderError> {
    if set.is_empty() {
        return Err(TensorError::EmptySet("attention over no embeddings".into()).into());
    }
    let scores: Vec<Var> = set
        .iter()
        .map(|&x| tape.dot(query, x))
        .collect::<Result<_, _>>()?;
    let scores = tape.concat(&scores);
    let alpha = tape.softmax(scores);
    let ctx = tape.weighted_sum(alpha, set)?;
    Ok((alpha, ctx))
}

/// Dot-product attention of `h` over both embedding sets.
pub fn attention_context(
    tape: &mut Tape<'_>,
    h: Var,
    tree_emb: &[Var],
    graph_emb: &[Var],
) -> Result<Attention, DecoderError> {
    let (alpha_tree, ct) = attend(tape, h, tree_emb)?;
    let (alpha_graph, cg) = attend(tape, h, graph_emb)?;
    Ok(Attention {
        alpha_tree,
        alpha_graph,
        context: tape.concat(&[ct, cg]),
    })
}

/// Probability of expanding a new child from the node with feature
/// `node_feature`, given the messages that reached it.
pub fn topo_predict(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    node_feature: Var,
    incoming: &[Var],
    enc: &EncodedInput,
) -> Result<Var, DecoderError> {
    let net = &model.nets;
    let s = tape.add_n(incoming, model.config.hidden)?;
    let qt = net.topo_query_tree.forward(tape, s)?;
    let qg = net.topo_query_graph.forward(tape, s)?;
    let (_, ct) = attend(tape, qt, &enc.tree_emb)?;
    let (_, cg) = attend(tape, qg, &enc.graph_emb)?;
    Ok(net.g3.forward(tape, &[s, ct, cg, node_feature])?)
}

pub fn substructure_distribution(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    h: Var,
    context: Var,
) -> Result<Var, DecoderError> {
    Ok(model.nets.g5.forward(tape, &[h, context])?)
}

pub fn ooi_weight(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    context: Var,
    z: Var,
) -> Result<Var, DecoderError> {
    Ok(model.nets.g6.forward(tape, &[context, z])?)
}

/// Scatter-adds tree attention onto vocabulary ids. Attention on nodes
/// without an id is dropped and the rest renormalized; `None` when no
/// input node has an id.
pub fn copy_vector(
    tape: &mut Tape<'_>,
    alpha_tree: Var,
    tree_ids: &[Option<usize>],
    vocab_size: usize,
) -> Result<Option<Var>, DecoderError> {
    let known: Vec<usize> = (0..tree_ids.len()).filter(|&j| tree_ids[j].is_some()).collect();
    if known.is_empty() {
        return Ok(None);
    }
    let targets: Vec<usize> = known.iter().map(|&j| tree_ids[j].unwrap()).collect();
    let weights = if known.len() == tree_ids.len() {
        alpha_tree
    } else {
        let g = tape.gather(alpha_tree, &known)?;
        tape.normalize(g)?
    };
    Ok(Some(tape.scatter_add(weights, &targets, vocab_size)?))
}

/// `w * q + (1 - w) * a`; with no copy vector the result is `q`.
pub fn hybrid_distribution(
    tape: &mut Tape<'_>,
    w: Var,
    q: Var,
    a: Option<Var>,
) -> Result<Var, DecoderError> {
    let Some(a) = a else { return Ok(q) };
    let wq = tape.scale_by(q, w)?;
    let one_minus_w = tape.affine(w, -1.0, 1.0);
    let wa = tape.scale_by(a, one_minus_w)?;
    Ok(tape.add(wq, wa)?)
}

/// Everything computed for one substructure prediction.
#[derive(Debug, Clone, Copy)]
pub struct SubstructureStep {
    pub attention: Attention,
    pub q: Var,
    pub w: Var,
    pub a: Option<Var>,
    pub q_tilde: Var,
}

/// Runs attention, g5, g6, the copy vector and the hybrid for message `h`.
/// `force_w` replaces the learned OOI weight with a constant.
pub fn substructure_step(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    h: Var,
    enc: &EncodedInput,
    force_w: Option<f64>,
) -> Result<SubstructureStep, DecoderError> {
    let attention = attention_context(tape, h, &enc.tree_emb, &enc.graph_emb)?;
    let q = substructure_distribution(tape, model, h, attention.context)?;
    let w = match force_w {
        Some(v) => tape.vector(vec![v]),
        None => ooi_weight(tape, model, attention.context, enc.z)?,
    };
    let a = copy_vector(tape, attention.alpha_tree, &enc.tree_ids, model.vocab.len())?;
    let q_tilde = hybrid_distribution(tape, w, q, a)?;
    Ok(SubstructureStep {
        attention,
        q,
        w,
        a,
        q_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { seed: u64, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    /// Maximum number of tree nodes.
    pub budget: usize,
    /// Replaces the learned OOI weight when set.
    pub force_w: Option<f64>,
    /// Masks children that cannot attach to their parent.
    pub mask_incompatible: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            mode: DecodeMode::Greedy,
            budget: 50,
            force_w: None,
            mask_incompatible: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    RootBacktrack,
    Budget,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::RootBacktrack => "root_backtrack",
            Termination::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoRecord {
    pub node: usize,
    pub p_expand: f64,
    pub expand: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstructureRecord {
    /// Decoded node the prediction was made for.
    pub node: usize,
    pub parent: Option<usize>,
    pub alpha_tree: Vec<f64>,
    pub alpha_graph: Vec<f64>,
    pub context: Vec<f64>,
    pub w: f64,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub topo: Vec<TopoRecord>,
    pub substructures: Vec<SubstructureRecord>,
    pub tree: ScaffoldTree,
    /// Attention context of every decoded node, used to score assembly.
    pub contexts: Vec<Vec<f64>>,
    /// Creation order equals node index; parent of each node.
    pub parents: Vec<Option<usize>>,
    pub termination: Termination,
}

/// Cache of parent/child attachability between vocabulary entries.
#[derive(Debug, Default)]
pub struct CompatCache {
    known: HashMap<(usize, usize), bool>,
}

impl CompatCache {
    pub fn compatible(&mut self, model: &CoreModel, parent: usize, child: usize) -> bool {
        *self.known.entry((parent, child)).or_insert_with(|| {
            let p = &model.vocab.entries()[parent];
            let c = &model.vocab.entries()[child];
            attachment_possible(&p.fragment, p.kind, &c.fragment, c.kind)
        })
    }
}

fn choose(dist: &[f64], mode: DecodeMode, rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = dist.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    match mode {
        DecodeMode::Greedy => {
            let mut best = None;
            for (i, &p) in dist.iter().enumerate() {
                if p > 0.0 && best.map_or(true, |b: usize| p > dist[b]) {
                    best = Some(i);
                }
            }
            best
        }
        DecodeMode::Sample { temperature, .. } => {
            let weights: Vec<f64> = dist
                .iter()
                .map(|&p| if p > 0.0 { (p.ln() / temperature).exp() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut r = rng.gen::<f64>() * total;
            let mut last = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    last = Some(i);
                    if r < w {
                        return Some(i);
                    }
                    r -= w;
                }
            }
            last
        }
    }
}

/// Decodes a scaffolding tree for the input molecule.
pub fn decode_tree(
    model: &CoreModel,
    input: &InputFeatures,
    options: &DecodeOptions,
    cache: &mut CompatCache,
) -> Result<DecodeTrace, DecoderError> {
    if options.budget == 0 {
        return Err(DecoderError::Input("budget must be at least 1".into()));
    }
    let seed = match options.mode {
        DecodeMode::Sample { seed, .. } => seed,
        DecodeMode::Greedy => 0,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = model.vocab.len();
    let d = model.config.hidden;

    let mut tape = Tape::new(&model.params);
    let enc = encode_input(&mut tape, model, input)?;

    let mut ids: Vec<usize> = Vec::new();
    let mut parents: Vec<Option<usize>> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut contexts: Vec<Vec<f64>> = Vec::new();
    let mut feats: Vec<Var> = Vec::new();
    let mut messages: HashMap<(usize, usize), Var> = HashMap::new();
    let mut topo = Vec::new();
    let mut subs = Vec::new();

    let record = |tape: &Tape<'_>, step: &SubstructureStep, node, parent, chosen, dist: Vec<f64>| {
        SubstructureRecord {
            node,
            parent,
            alpha_tree: tape.data(step.attention.alpha_tree).to_vec(),
            alpha_graph: tape.data(step.attention.alpha_graph).to_vec(),
            context: tape.data(step.attention.context).to_vec(),
            w: tape.scalar(step.w),
            q: tape.data(step.q).to_vec(),
            a: step
                .a
                .map(|a| tape.data(a).to_vec())
                .unwrap_or_else(|| vec![0.0; tape.data(step.q).len()]),
            q_tilde: dist,
            chosen,
        }
    };

    // root
    let zero = tape.zeros(d);
    let step = substructure_step(&mut tape, model, zero, &enc, options.force_w)?;
    let dist = tape.data(step.q_tilde).to_vec();
    let root_id = choose(&dist, options.mode, &mut rng)
        .ok_or_else(|| DecoderError::Assembly("no root substructure available".into()))?;
    subs.push(record(&tape, &step, 0, None, root_id, dist));
    contexts.push(tape.data(step.attention.context).to_vec());
    ids.push(root_id);
    parents.push(None);
    feats.push(tape.vector(tree_node_feature(Some(root_id), vocab_size)));

    let incoming = |messages: &HashMap<(usize, usize), Var>, x: usize, exclude: Option<usize>| {
        let mut v: Vec<(usize, Var)> = messages
            .iter()
            .filter(|((_, to), _)| *to == x)
            .filter(|((from, _), _)| Some(*from) != exclude)
            .map(|((from, _), &m)| (*from, m))
            .collect();
        v.sort_by_key(|(from, _)| *from);
        v.into_iter().map(|(_, m)| m).collect::<Vec<Var>>()
    };

    let mut current = 0usize;
    let max_steps = 4 * options.budget + 4;
    let mut termination = Termination::RootBacktrack;
    for _ in 0..max_steps {
        let inc = incoming(&messages, current, None);
        let p = topo_predict(&mut tape, model, feats[current], &inc, &enc)?;
        let p_val = tape.scalar(p);
        let mut expand = match options.mode {
            DecodeMode::Greedy => p_val >= 0.5,
            DecodeMode::Sample { .. } => rng.gen::<f64>() < p_val,
        };
        if expand && ids.len() >= options.budget {
            topo.push(TopoRecord {
                node: current,
                p_expand: p_val,
                expand,
            });
            termination = Termination::Budget;
            break;
        }
        if expand {
            let gru_in = incoming(&messages, current, None);
            let h = model.nets.gru.forward(&mut tape, feats[current], &gru_in)?;
            let step = substructure_step(&mut tape, model, h, &enc, options.force_w)?;
            let mut dist = tape.data(step.q_tilde).to_vec();
            if options.mask_incompatible {
                let parent_id = ids[current];
                for (k, p) in dist.iter_mut().enumerate() {
                    if *p > 0.0 && !cache.compatible(model, parent_id, k) {
                        *p = 0.0;
                    }
                }
            }
            match choose(&dist, options.mode, &mut rng) {
                Some(child_id) => {
                    let child = ids.len();
                    let total: f64 = dist.iter().sum();
                    let dist: Vec<f64> = dist.iter().map(|p| p / total).collect();
                    subs.push(record(&tape, &step, child, Some(current), child_id, dist));
                    contexts.push(tape.data(step.attention.context).to_vec());
                    ids.push(child_id);
                    parents.push(Some(current));
                    edges.push((current, child));
                    feats.push(tape.vector(tree_node_feature(Some(child_id), vocab_size)));
                    messages.insert((current, child), h);
                    topo.push(TopoRecord {
                        node: current,
                        p_expand: p_val,
                        expand: true,
                    });
                    current = child;
                    continue;
                }
                None => expand = false,
            }
        }
        topo.push(TopoRecord {
            node: current,
            p_expand: p_val,
            expand,
        });
        match parents[current] {
            None => {
                termination = Termination::RootBacktrack;
                break;
            }
            Some(parent) => {
                let gru_in = incoming(&messages, current, Some(parent));
                let h = model.nets.gru.forward(&mut tape, feats[current], &gru_in)?;
                messages.insert((current, parent), h);
                current = parent;
            }
        }
        if topo.len() >= max_steps {
            termination = Termination::Budget;
        }
    }

    let nodes = ids
        .iter()
        .map(|&id| {
            let e = &model.vocab.entries()[id];
            TreeNode {
                key: e.key.clone(),
                kind: e.kind,
                atoms: Vec::new(),
                id: Some(id),
            }
        })
        .collect();
    Ok(DecodeTrace {
        topo,
        substructures: subs,
        tree: ScaffoldTree::new(nodes, edges),
        contexts,
        parents,
        termination,
    })
}

/// Scores candidates by the dot product of their pooled embedding with the
/// projected context of the node being attached.
pub fn score_candidates(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    candidates: &[AssemblyCandidate],
    child_node: usize,
    context: Var,
) -> Result<Vec<Var>, DecoderError> {
    let net = &model.nets;
    let ctx = net.assembly_ctx.forward(tape, context)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let input = model::assembly_input(&cand.partial, child_node);
        let emb = net
            .assembly_enc
            .encode(tape, &input, model.config.graph_depth)?;
        let pooled = tape.mean_n(&emb)?;
        scores.push(tape.dot(pooled, ctx)?);
    }
    Ok(scores)
}

/// Result of assembling a decoded tree.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub graph: MolecularGraph,
    /// Candidate scores at every attached node, in attachment order.
    pub scores: Vec<Vec<f64>>,
}

/// Turns a decoded tree into a molecule, greedily choosing the best scored
/// attachment at every node in creation order.
pub fn assemble_graph(model: &CoreModel, trace: &DecodeTrace) -> Result<Assembled, DecoderError> {
    let tree = &trace.tree;
    let n = tree.len();
    let fragment = |i: usize| -> Result<(&MolecularGraph, SubstructureKind), DecoderError> {
        let id = tree.node(i).id.ok_or_else(|| DecoderError::UnknownSubstructure(tree.node(i).key.clone()))?;
        let e = model.vocab.get(id)?;
        Ok((&e.fragment, e.kind))
    };
    let (root_frag, _) = fragment(0)?;
    let mut partial = PartialMolecule::from_root(root_frag, 0, n);
    let mut all_scores = Vec::new();
    for child in 1..n {
        let parent = trace.parents[child]
            .ok_or_else(|| DecoderError::Input(format!("node {child} has no parent")))?;
        let (frag, kind) = fragment(child)?;
        let (_, parent_kind) = fragment(parent)?;
        let candidates = enumerate_attachments(&partial, parent, parent_kind, frag, kind, child)?;
        let best = if candidates.len() == 1 {
            all_scores.push(vec![0.0]);
            0
        } else {
            let mut tape = Tape::new(&model.params);
            let ctx = tape.vector(trace.contexts[child].clone());
            let scores = score_candidates(&mut tape, model, &candidates, child, ctx)?;
            let values: Vec<f64> = scores.iter().map(|&s| tape.scalar(s)).collect();
            let mut best = 0;
            for (i, &v) in values.iter().enumerate() {
                if v > values[best] {
                    best = i;
                }
            }
            all_scores.push(values);
            best
        };
        partial = candidates.into_iter().nth(best).unwrap().partial;
    }
    Ok(Assembled {
        graph: partial.graph,
        scores: all_scores,
    })
}

/// One generated molecule.
#[derive(Debug, Clone)]
pub struct Generation {
    pub trace: DecodeTrace,
    pub graph: MolecularGraph,
    pub smiles: String,
}

/// Decodes and assembles a molecule for `input`.
pub fn generate(
    model: &CoreModel,
    input: &MolecularGraph,
    options: &DecodeOptions,
    cache: &mut CompatCache,
) -> Result<Generation, DecoderError> {
    let tree = model.vocab.tree_of(input)?;
    let features = InputFeatures::new(input, &tree, model.vocab.len());
    let trace = decode_tree(model, &features, options, cache)?;
    let assembled = assemble_graph(model, &trace)?;
    let smiles = canonical_smiles(&assembled.graph);
    Ok(Generation {
        trace,
        graph: assembled.graph,
        smiles,
    })
}

/// One row of a generation file.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRow {
    pub input_smiles: String,
    /// Empty when generation failed.
    pub output_smiles: String,
    pub seed: u64,
    pub n_nodes: usize,
    /// `root_backtrack`, `budget`, or `error: <message>`.
    pub terminated_by: String,
}

pub const GENERATION_HEADER: &str = "input_smiles\toutput_smiles\tseed\tn_nodes\tterminated_by";

pub fn write_generation_tsv(mut out: impl Write, rows: &[GenerationRow]) -> std::io::Result<()> {
    writeln!(out, "{GENERATION_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.input_smiles,
            r.output_smiles,
            r.seed,
            r.n_nodes,
            r.terminated_by.replace(['\t', '\n'], " ")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use crate::scaffold::build_vocabulary;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};
    use crate::tensor::ParamStore;

    fn model(smiles: &[&str], d: usize) -> CoreModel {
        let corpus: Vec<MolecularGraph> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        let vocab = build_vocabulary(&corpus).unwrap();
        let config = ModelConfig {
            hidden: d,
            tree_depth: 2,
            graph_depth: 2,
        };
        CoreModel::new(vocab, config, 11).unwrap()
    }

    fn features(model: &CoreModel, smiles: &str) -> InputFeatures {
        let g = parse_smiles(smiles).unwrap();
        let tree = model.vocab.tree_of(&g).unwrap();
        InputFeatures::new(&g, &tree, model.vocab.len())
    }

    const CORPUS: [&str; 4] = ["Cc1ccccc1O", "C1CCCCC1N", "CCOC(=O)N", "c1ccncc1Cl"];

    #[test]
    fn attention_over_single_embedding_is_identity() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let h = t.vector(vec![0.3, -2.0]);
        let x = t.vector(vec![1.0, 2.0]);
        let y = t.vector(vec![-4.0, 0.5]);
        let att = attention_context(&mut t, h, &[x], &[y]).unwrap();
        assert_eq!(t.data(att.alpha_tree), &[1.0]);
        assert_eq!(t.data(att.alpha_graph), &[1.0]);
        assert_eq!(t.data(att.context), &[1.0, 2.0, -4.0, 0.5]);
    }

    #[test]
    fn zero_query_attends_uniformly() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let h = t.zeros(2);
        let set: Vec<Var> = (0..4).map(|i| t.vector(vec![i as f64, 1.0])).collect();
        let att = attention_context(&mut t, h, &set, &set[..1]).unwrap();
        for &a in t.data(att.alpha_tree) {
            assert!((a - 0.25).abs() < 1e-15);
        }
        assert!((t.data(att.context)[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn attention_matches_hand_softmax() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let hv = [0.5, -1.0, 2.0];
        let xs = [[1.0, 0.0, 0.5], [0.2, 0.3, -0.1], [-1.0, 2.0, 1.0]];
        let h = t.vector(hv.to_vec());
        let set: Vec<Var> = xs.iter().map(|x| t.vector(x.to_vec())).collect();
        let att = attention_context(&mut t, h, &set, &set).unwrap();
        let scores: Vec<f64> = xs
            .iter()
            .map(|x| x.iter().zip(&hv).map(|(a, b)| a * b).sum())
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        let alpha: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
        for (a, b) in t.data(att.alpha_tree).iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..3 {
            let c: f64 = (0..3).map(|j| alpha[j] * xs[j][k]).sum();
            assert!((t.data(att.context)[k] - c).abs() < 1e-12);
            assert!((t.data(att.context)[3 + k] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_topology_network_predicts_one_half() {
        let mut m = model(&CORPUS, 6);
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let f = features(&m, "Cc1ccccc1O");
        let mut t = Tape::new(&m.params);
        let enc = encode_input(&mut t, &m, &f).unwrap();
        let node = t.vector(tree_node_feature(Some(0), m.vocab.len()));
        let p = topo_predict(&mut t, &m, node, &[], &enc).unwrap();
        assert_eq!(t.scalar(p), 0.5);
    }

    #[test]
    fn single_entry_vocabulary_gives_certain_q() {
        let m = model(&["CC"], 4);
        assert_eq!(m.vocab.len(), 1);
        let f = features(&m, "CC");
        let mut t = Tape::new(&m.params);
        let enc = encode_input(&mut t, &m, &f).unwrap();
        let h = t.vector(vec![0.1, 0.2, -0.3, 0.4]);
        let step = substructure_step(&mut t, &m, h, &enc, None).unwrap();
        assert_eq!(t.data(step.q), &[1.0]);
    }

    #[test]
    fn copy_vector_scatters_and_renormalizes() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let alpha = t.vector(vec![0.5, 0.3, 0.2]);
        let a = copy_vector(&mut t, alpha, &[Some(1), Some(3), Some(1)], 4)
            .unwrap()
            .unwrap();
        assert_eq!(t.data(a), &[0.0, 0.7, 0.0, 0.3]);

        let b = copy_vector(&mut t, alpha, &[Some(0), None, Some(2)], 3)
            .unwrap()
            .unwrap();
        let d = t.data(b);
        assert!((d[0] - 0.5 / 0.7).abs() < 1e-15);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 0.2 / 0.7).abs() < 1e-15);

        assert!(copy_vector(&mut t, alpha, &[None, None, None], 3)
            .unwrap()
            .is_none());
    }

    #[test]
    fn hybrid_mixes_and_honours_extremes() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let q = t.vector(vec![0.5, 0.5]);
        let a = t.vector(vec![1.0, 0.0]);
        let w = t.vector(vec![0.4]);
        let mix = hybrid_distribution(&mut t, w, q, Some(a)).unwrap();
        let d = t.data(mix);
        assert!((d[0] - 0.8).abs() < 1e-15 && (d[1] - 0.2).abs() < 1e-15);

        let q = t.vector(vec![0.1, 0.25, 0.65]);
        let a = t.vector(vec![0.3, 0.3, 0.4]);
        let one = t.vector(vec![1.0]);
        let zero = t.vector(vec![0.0]);
        let m1 = hybrid_distribution(&mut t, one, q, Some(a)).unwrap();
        let m0 = hybrid_distribution(&mut t, zero, q, Some(a)).unwrap();
        assert_eq!(t.data(m1), t.data(q));
        assert_eq!(t.data(m0), t.data(a));
        let none = hybrid_distribution(&mut t, zero, q, None).unwrap();
        assert_eq!(t.data(none), t.data(q));
    }

    #[test]
    fn decoded_distributions_are_normalized() {
        let m = model(&CORPUS, 8);
        let f = features(&m, "Cc1ccccc1O");
        let mut cache = CompatCache::default();
        for seed in 0..5 {
            let options = DecodeOptions {
                mode: DecodeMode::Sample { seed, temperature: 1.0 },
                budget: 8,
                ..DecodeOptions::default()
            };
            let trace = decode_tree(&m, &f, &options, &mut cache).unwrap();
            for s in &trace.substructures {
                for v in [&s.q, &s.q_tilde, &s.alpha_tree, &s.alpha_graph] {
                    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                assert!((0.0..=1.0).contains(&s.w));
            }
            assert_eq!(trace.tree.len(), trace.parents.len());
            assert!(trace.tree.len() <= 8);
        }
    }

    #[test]
    fn budget_of_one_stops_at_the_root() {
        let m = model(&CORPUS, 8);
        let f = features(&m, "CCOC(=O)N");
        let mut cache = CompatCache::default();
        for seed in 0..10 {
            let options = DecodeOptions {
                mode: DecodeMode::Sample { seed, temperature: 1.0 },
                budget: 1,
                ..DecodeOptions::default()
            };
            let trace = decode_tree(&m, &f, &options, &mut cache).unwrap();
            assert_eq!(trace.tree.len(), 1);
            assert!(trace.tree.edges().is_empty());
        }
        let zero = DecodeOptions {
            budget: 0,
            ..DecodeOptions::default()
        };
        assert!(matches!(
            decode_tree(&m, &f, &zero, &mut cache),
            Err(DecoderError::Input(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let m = model(&CORPUS, 8);
        let x = parse_smiles("Cc1ccccc1O").unwrap();
        let run = |seed| {
            let options = DecodeOptions {
                mode: DecodeMode::Sample { seed, temperature: 1.0 },
                budget: 6,
                ..DecodeOptions::default()
            };
            generate(&m, &x, &options, &mut CompatCache::default())
                .map(|g| (g.smiles, g.trace))
                .map_err(|e| e.to_string())
        };
        for seed in 0..4 {
            assert_eq!(run(seed), run(seed));
        }
    }

    #[test]
    fn assembly_softmax_loss_of_two_candidates() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let s = t.vector(vec![2.0, 1.0]);
        let ls = t.log_softmax(s);
        let l = t.pick(ls, 0).unwrap();
        let expect = (1.0 + (-1f64).exp()).ln();
        assert!((-t.scalar(l) - expect).abs() < 1e-12);
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    fn gradcheck(m: &CoreModel, f: impl Fn(&mut Tape<'_>) -> Var) {
        let mut store = m.params.clone();
        let report = check_gradients(
            &mut store,
            GradCheck {
                max_entries_per_param: 5,
                ..GradCheck::default()
            },
            |t| Ok(f(t)),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.max_abs_numeric > 0.0);
    }

    #[test]
    fn substructure_step_gradients() {
        let m = model(&CORPUS, 4);
        let f = features(&m, "Cc1ccccc1O");
        gradcheck(&m, |t| {
            let enc = encode_input(t, &m, &f).unwrap();
            let x = t.vector(tree_node_feature(Some(1), m.vocab.len()));
            let h0 = t.vector(vec![0.2, -0.1, 0.4, 0.3]);
            let h = m.nets.gru.forward(t, x, &[h0]).unwrap();
            let step = substructure_step(t, &m, h, &enc, None).unwrap();
            let picked = t.pick(step.q_tilde, 2).unwrap();
            t.log(picked)
        });
    }

    #[test]
    fn topology_gradients() {
        let m = model(&CORPUS, 4);
        let f = features(&m, "c1ccncc1Cl");
        gradcheck(&m, |t| {
            let enc = encode_input(t, &m, &f).unwrap();
            let x = t.vector(tree_node_feature(Some(0), m.vocab.len()));
            let h0 = t.vector(vec![0.3, 0.1, -0.2, 0.5]);
            let p = topo_predict(t, &m, x, &[h0], &enc).unwrap();
            t.log(p)
        });
    }
}
