use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{
    atom_features, bond_features, MpnEncoder, MpnInput, ATOM_FEATURES, BOND_FEATURES,
    TREE_EDGE_FEATURES,
};
use crate::scaffold::Vocabulary;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{Activation, GruCell, Linear, Mlp, OptimizerState, ParamStore, TensorError};

use super::{DecoderError, PartialMolecule};

/// Architecture hyperparameters stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Embedding size d.
    pub hidden: usize,
    pub tree_depth: usize,
    pub graph_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 300,
            tree_depth: 6,
            graph_depth: 3,
        }
    }
}

/// Handles of every network in the model.
#[derive(Debug, Clone, Copy)]
pub struct Networks {
    pub graph_enc: MpnEncoder,
    pub tree_enc: MpnEncoder,
    pub gru: GruCell,
    pub topo_query_tree: Linear,
    pub topo_query_graph: Linear,
    pub g3: Mlp,
    pub g5: Mlp,
    pub g6: Mlp,
    pub assembly_enc: MpnEncoder,
    pub assembly_ctx: Linear,
}

impl Networks {
    /// Registers all parameters in a fixed order.
    pub fn build(store: &mut ParamStore, config: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let v = vocab_size;
        Networks {
            graph_enc: MpnEncoder::new(store, "graph_enc", ATOM_FEATURES, BOND_FEATURES, d, &mut rng),
            tree_enc: MpnEncoder::new(store, "tree_enc", v, TREE_EDGE_FEATURES, d, &mut rng),
            gru: GruCell::new(store, "gru", v, d, &mut rng),
            topo_query_tree: Linear::new(store, "topo_query_tree", d, d, &mut rng),
            topo_query_graph: Linear::new(store, "topo_query_graph", d, d, &mut rng),
            g3: Mlp::new(store, "g3", d + 2 * d + v, d, 1, Activation::Sigmoid, &mut rng),
            g5: Mlp::new(store, "g5", d + 2 * d, d, v, Activation::Softmax, &mut rng),
            g6: Mlp::new(store, "g6", 2 * d + 2 * d, d, 1, Activation::Sigmoid, &mut rng),
            assembly_enc: MpnEncoder::new(
                store,
                "assembly_enc",
                ATOM_FEATURES + 1,
                BOND_FEATURES,
                d,
                &mut rng,
            ),
            assembly_ctx: Linear::new(store, "assembly_ctx", 2 * d, d, &mut rng),
        }
    }
}

/// Encoder, decoder and assembly scorer with their vocabulary.
#[derive(Debug, Clone)]
pub struct CoreModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub nets: Networks,
}

impl CoreModel {
    pub fn new(vocab: Vocabulary, config: ModelConfig, seed: u64) -> Result<Self, DecoderError> {
        if vocab.is_empty() {
            return Err(DecoderError::Input("empty vocabulary".into()));
        }
        if config.hidden == 0 || config.tree_depth == 0 || config.graph_depth == 0 {
            return Err(DecoderError::Input(
                "hidden size and depths must be positive".into(),
            ));
        }
        let mut params = ParamStore::new();
        let nets = Networks::build(&mut params, &config, vocab.len(), seed);
        Ok(CoreModel {
            config,
            vocab,
            params,
            nets,
        })
    }

    /// Checkpoint metadata describing the architecture and vocabulary.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let mut vocab = Vec::new();
        self.vocab
            .write_tsv(&mut vocab)
            .expect("writing to memory cannot fail");
        vec![
            ("model.hidden".into(), self.config.hidden.to_string()),
            ("model.tree_depth".into(), self.config.tree_depth.to_string()),
            ("model.graph_depth".into(), self.config.graph_depth.to_string()),
            (
                "model.vocab".into(),
                String::from_utf8(vocab).expect("vocabulary is UTF-8"),
            ),
        ]
    }

    /// Packs the model (and optionally optimizer state and extra metadata)
    /// into a checkpoint.
    pub fn to_checkpoint(
        &self,
        optimizer: Option<&OptimizerState>,
        extra: &[(String, String)],
    ) -> Checkpoint {
        let mut metadata = self.metadata();
        metadata.extend(extra.iter().cloned());
        Checkpoint {
            metadata,
            params: self.params.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds a model from a checkpoint written by [`CoreModel::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DecoderError> {
        let get = |key: &str| -> Result<&str, DecoderError> {
            ck.meta(key)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing metadata '{key}'")).into())
        };
        let num = |key: &str| -> Result<usize, DecoderError> {
            get(key)?
                .parse()
                .map_err(|_| TensorError::Checkpoint(format!("bad metadata '{key}'")).into())
        };
        let config = ModelConfig {
            hidden: num("model.hidden")?,
            tree_depth: num("model.tree_depth")?,
            graph_depth: num("model.graph_depth")?,
        };
        let vocab = Vocabulary::read_tsv(get("model.vocab")?.as_bytes())?;
        let mut model = CoreModel::new(vocab, config, 0)?;
        let mut loaded = ParamStore::new();
        for (_, name, t) in ck.params.iter() {
            if model.params.id_of(name).is_some() {
                loaded.add(name, t.clone());
            }
        }
        model.params.copy_from(&loaded)?;
        Ok(model)
    }
}

/// Assembly-encoder input: atom features plus a flag marking the atoms of
/// the node being attached.
pub(crate) fn assembly_input(partial: &PartialMolecule, child_node: usize) -> MpnInput {
    let g = &partial.graph;
    let child = &partial.node_atoms[child_node];
    MpnInput {
        nodes: (0..g.atom_count())
            .map(|i| {
                let mut f = atom_features(g, i);
                f.push(if child.contains(&i) { 1.0 } else { 0.0 });
                f
            })
            .collect(),
        edges: g
            .bonds()
            .iter()
            .enumerate()
            .map(|(bi, b)| (b.a, b.b, bond_features(g, bi)))
            .collect(),
    }
}
