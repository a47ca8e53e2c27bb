//! Teacher-forced training of the encoder and decoder, the adversarial
//! discriminator, per-epoch checkpoints and model selection.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::chemprop::PropertyOracle;
use crate::decoder::{
    assemble_graph, decode_tree, encode_input, score_candidates, substructure_step,
    teacher_assembly, topo_predict, AssemblyStep, CompatCache, CoreModel, DecodeMode,
    DecodeOptions, DecoderError, InputFeatures, ModelConfig,
};
use crate::encoder::{graph_input, tree_node_feature, MpnInput};
use crate::molgraph::MolecularGraph;
use crate::parallel::parallel_map;
use crate::pipeline::{evaluate, EvalConfig, ModelGenerator, PipelineError};
use crate::scaffold::{dfs_order, DfsOrder, ScaffoldError, Vocabulary};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{
    AdamConfig, Gradients, Linear, OptimizerState, ParamStore, Tape, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error("target substructure '{0}' is outside the vocabulary")]
    UnknownSubstructure(String),
    #[error("non-finite loss or gradient in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub tree_depth: usize,
    pub graph_depth: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_anneal: f64,
    pub adversarial: bool,
    pub adversarial_weight: f64,
    pub disc_hidden: usize,
    /// Weights of the topology, substructure and assembly losses.
    pub loss_weights: [f64; 3],
    pub clip_norm: f64,
    /// Node budget for decoding fake molecules.
    pub decode_budget: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            hidden: 300,
            tree_depth: 6,
            graph_depth: 3,
            lr: 1e-3,
            lr_anneal: 0.8,
            adversarial: true,
            adversarial_weight: 0.1,
            disc_hidden: 300,
            loss_weights: [1.0, 1.0, 1.0],
            clip_norm: 10.0,
            decode_budget: 50,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            tree_depth: self.tree_depth,
            graph_depth: self.graph_depth,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("tree_depth", self.tree_depth),
            ("graph_depth", self.graph_depth),
            ("disc_hidden", self.disc_hidden),
            ("decode_budget", self.decode_budget),
            ("workers", self.workers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        if !(self.lr_anneal > 0.0 && self.lr_anneal <= 1.0) {
            return Err(TrainError::Config("lr_anneal must be in (0, 1]".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) || !(self.adversarial_weight >= 0.0) {
            return Err(TrainError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Losses and accuracies of one pair or an aggregate of pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub topo_loss: f64,
    pub substructure_loss: f64,
    pub assembly_loss: f64,
    pub adversarial_loss: f64,
    pub total: f64,
    pub topo_accuracy: f64,
    pub substructure_accuracy: f64,
    pub assembly_accuracy: f64,
    pub topo_decisions: usize,
    pub substructure_decisions: usize,
    pub assembly_decisions: usize,
}

/// Running sums for combining per-pair reports: losses are averaged over
/// pairs, accuracies over decisions.
#[derive(Debug, Clone, Default)]
pub struct ReportAccumulator {
    pairs: usize,
    losses: [f64; 5],
    correct: [f64; 3],
    decisions: [usize; 3],
}

impl ReportAccumulator {
    pub fn add(&mut self, r: &LossReport) {
        self.pairs += 1;
        let l = [
            r.topo_loss,
            r.substructure_loss,
            r.assembly_loss,
            r.adversarial_loss,
            r.total,
        ];
        for (s, x) in self.losses.iter_mut().zip(l) {
            *s += x;
        }
        let acc = [r.topo_accuracy, r.substructure_accuracy, r.assembly_accuracy];
        let n = [r.topo_decisions, r.substructure_decisions, r.assembly_decisions];
        for k in 0..3 {
            self.correct[k] += acc[k] * n[k] as f64;
            self.decisions[k] += n[k];
        }
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn finish(&self) -> LossReport {
        let p = self.pairs.max(1) as f64;
        let acc = |k: usize| {
            if self.decisions[k] == 0 {
                1.0
            } else {
                self.correct[k] / self.decisions[k] as f64
            }
        };
        LossReport {
            topo_loss: self.losses[0] / p,
            substructure_loss: self.losses[1] / p,
            assembly_loss: self.losses[2] / p,
            adversarial_loss: self.losses[3] / p,
            total: self.losses[4] / p,
            topo_accuracy: acc(0),
            substructure_accuracy: acc(1),
            assembly_accuracy: acc(2),
            topo_decisions: self.decisions[0],
            substructure_decisions: self.decisions[1],
            assembly_decisions: self.decisions[2],
        }
    }
}

/// Parameter-independent supervision for one (X, Y) pair.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub input: InputFeatures,
    /// Vocabulary id of every node of Y's tree.
    pub target_ids: Vec<usize>,
    pub order: DfsOrder,
    pub assembly: Vec<AssemblyStep>,
    /// Encoder features of Y, the "real" discriminator sample.
    pub target_graph: MpnInput,
}

/// Decomposes both molecules and replays the gold assembly of Y.
pub fn prepare_pair(
    vocab: &Vocabulary,
    x: &MolecularGraph,
    y: &MolecularGraph,
) -> Result<PreparedPair, TrainError> {
    let x_tree = vocab.tree_of(x)?;
    let y_tree = vocab.tree_of(y)?;
    let target_ids = y_tree
        .nodes()
        .iter()
        .map(|n| n.id.ok_or_else(|| TrainError::UnknownSubstructure(n.key.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let order = dfs_order(&y_tree, y_tree.default_root());
    let assembly = teacher_assembly(y, &y_tree, &order, vocab)?.steps;
    Ok(PreparedPair {
        input: InputFeatures::new(x, &x_tree, vocab.len()),
        target_ids,
        order,
        assembly,
        target_graph: graph_input(y),
    })
}

/// Prepares every pair, skipping those whose target leaves the vocabulary.
/// Returns the prepared pairs and the number skipped.
pub fn prepare_pairs(
    vocab: &Vocabulary,
    pairs: &[(MolecularGraph, MolecularGraph)],
) -> Result<(Vec<PreparedPair>, usize), TrainError> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (x, y) in pairs {
        match prepare_pair(vocab, x, y) {
            Ok(p) => out.push(p),
            Err(TrainError::UnknownSubstructure(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Binary cross-entropy of probability `p` against a boolean label.
pub fn bce(tape: &mut Tape<'_>, p: Var, label: bool) -> Var {
    let q = if label { p } else { tape.affine(p, -1.0, 1.0) };
    let l = tape.log(q);
    tape.scale(l, -1.0)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn mean_terms(tape: &mut Tape<'_>, terms: &[Var]) -> Result<Var, TensorError> {
    if terms.is_empty() {
        return Ok(tape.zeros(1));
    }
    let all = tape.concat(terms);
    Ok(tape.mean(all))
}

/// Walks Y's DFS order under teacher forcing and returns the weighted total
/// loss together with its report. Topological decisions cover every DFS
/// step plus the final stop at the root; substructure decisions cover every
/// node including the root; assembly decisions cover nodes with more than
/// one candidate.
pub fn teacher_forced_loss(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    pair: &PreparedPair,
    weights: [f64; 3],
) -> Result<(Var, LossReport), TrainError> {
    let d = model.config.hidden;
    let v = model.vocab.len();
    let n = pair.target_ids.len();
    let enc = encode_input(tape, model, &pair.input)?;
    let feats: Vec<Var> = pair
        .target_ids
        .iter()
        .map(|&id| tape.vector(tree_node_feature(Some(id), v)))
        .collect();
    let mut messages: HashMap<(usize, usize), Var> = HashMap::new();
    let incoming = |messages: &HashMap<(usize, usize), Var>, x: usize, exclude: Option<usize>| {
        let mut m: Vec<(usize, Var)> = messages
            .iter()
            .filter(|((from, to), _)| *to == x && Some(*from) != exclude)
            .map(|((from, _), &var)| (*from, var))
            .collect();
        m.sort_by_key(|(from, _)| *from);
        m.into_iter().map(|(_, var)| var).collect::<Vec<Var>>()
    };

    let mut contexts: Vec<Option<Var>> = vec![None; n];
    let mut topo_terms = Vec::new();
    let mut sub_terms = Vec::new();
    let mut asm_terms = Vec::new();
    let mut correct = [0usize; 3];

    let mut predict_sub = |tape: &mut Tape<'_>, h: Var, node: usize, correct: &mut [usize; 3]| {
        let step = substructure_step(tape, model, h, &enc, None)?;
        let gold = pair.target_ids[node];
        if argmax(tape.data(step.q_tilde)) == gold {
            correct[1] += 1;
        }
        let p = tape.pick(step.q_tilde, gold)?;
        let l = tape.log(p);
        sub_terms.push(tape.scale(l, -1.0));
        contexts[node] = Some(step.attention.context);
        Ok::<(), TrainError>(())
    };
    let mut predict_topo =
        |tape: &mut Tape<'_>, x: usize, inc: &[Var], label: bool, correct: &mut [usize; 3]| {
            let p = topo_predict(tape, model, feats[x], inc, &enc)?;
            if (tape.scalar(p) >= 0.5) == label {
                correct[0] += 1;
            }
            topo_terms.push(bce(tape, p, label));
            Ok::<(), TrainError>(())
        };

    let root = pair.order.root;
    let zero = tape.zeros(d);
    predict_sub(tape, zero, root, &mut correct)?;
    for s in &pair.order.steps {
        let (x, y) = (s.from, s.to);
        let inc = incoming(&messages, x, None);
        predict_topo(tape, x, &inc, s.expand, &mut correct)?;
        if s.expand {
            let h = model.nets.gru.forward(tape, feats[x], &inc)?;
            messages.insert((x, y), h);
            predict_sub(tape, h, y, &mut correct)?;
        } else {
            let inc = incoming(&messages, x, Some(y));
            let h = model.nets.gru.forward(tape, feats[x], &inc)?;
            messages.insert((x, y), h);
        }
    }
    let inc = incoming(&messages, root, None);
    predict_topo(tape, root, &inc, false, &mut correct)?;

    for step in pair.assembly.iter().filter(|s| s.candidates.len() > 1) {
        let ctx = contexts[step.node].ok_or_else(|| {
            TrainError::Config(format!("assembly step for unvisited node {}", step.node))
        })?;
        let scores = score_candidates(tape, model, &step.candidates, step.node, ctx)?;
        let all = tape.concat(&scores);
        if argmax(tape.data(all)) == step.gold {
            correct[2] += 1;
        }
        let ls = tape.log_softmax(all);
        let g = tape.pick(ls, step.gold)?;
        asm_terms.push(tape.scale(g, -1.0));
    }

    let topo = mean_terms(tape, &topo_terms)?;
    let sub = mean_terms(tape, &sub_terms)?;
    let asm = mean_terms(tape, &asm_terms)?;
    let parts = [
        tape.scale(topo, weights[0]),
        tape.scale(sub, weights[1]),
        tape.scale(asm, weights[2]),
    ];
    let total = tape.add_n(&parts, 1)?;
    tape.check_finite(total, "teacher-forced loss")?;

    let acc = |c: usize, k: usize| if k == 0 { 1.0 } else { c as f64 / k as f64 };
    let report = LossReport {
        topo_loss: tape.scalar(topo),
        substructure_loss: tape.scalar(sub),
        assembly_loss: tape.scalar(asm),
        adversarial_loss: 0.0,
        total: tape.scalar(total),
        topo_accuracy: acc(correct[0], topo_terms.len()),
        substructure_accuracy: acc(correct[1], sub_terms.len()),
        assembly_accuracy: acc(correct[2], asm_terms.len()),
        topo_decisions: topo_terms.len(),
        substructure_decisions: sub_terms.len(),
        assembly_decisions: asm_terms.len(),
    };
    Ok((total, report))
}

/// Teacher-forced losses and accuracies of `pairs` under the current
/// parameters, without updating anything.
pub fn evaluate_teacher_forced(
    model: &CoreModel,
    pairs: &[PreparedPair],
    weights: [f64; 3],
) -> Result<LossReport, TrainError> {
    let mut acc = ReportAccumulator::default();
    for pair in pairs {
        let mut tape = Tape::new(&model.params);
        let (_, r) = teacher_forced_loss(&mut tape, model, pair, weights)?;
        acc.add(&r);
    }
    Ok(acc.finish())
}

/// LeakyReLU slope between discriminator layers.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Three-layer feed-forward discriminator on pooled graph embeddings, with
/// its own parameter store.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub params: ParamStore,
    pub layers: [Linear; 3],
}

impl Discriminator {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = [
            Linear::new(&mut params, "disc.l1", input, hidden, &mut rng),
            Linear::new(&mut params, "disc.l2", hidden, hidden, &mut rng),
            Linear::new(&mut params, "disc.l3", hidden, 1, &mut rng),
        ];
        Discriminator { params, layers }
    }

    fn run(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        weights: impl Fn(&mut Tape<'_>, &Linear) -> (Var, Var),
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let (w, b) = weights(tape, layer);
            let y = tape.matvec(w, h)?;
            h = tape.add(y, b)?;
            if k + 1 < self.layers.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Real-vs-fake logit on a tape over the discriminator's own store.
    pub fn logit(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        self.run(tape, x, |t, l| (t.param(l.w), t.param(l.b)))
    }

    /// Logit with the discriminator weights held constant, for use on a
    /// tape over another store.
    pub fn logit_frozen(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        self.run(tape, x, |t, l| {
            (
                t.constant(self.params.get(l.w).clone()),
                t.constant(self.params.get(l.b).clone()),
            )
        })
    }
}

/// Mean-pooled graph-encoder embedding of a molecule.
pub fn pooled_embedding(
    tape: &mut Tape<'_>,
    model: &CoreModel,
    input: &MpnInput,
) -> Result<Var, TensorError> {
    let emb = model
        .nets
        .graph_enc
        .encode(tape, input, model.config.graph_depth)?;
    tape.mean_n(&emb)
}

/// Outcome of one adversarial step.
#[derive(Debug, Clone)]
pub struct AdversarialUpdate {
    /// Gradient of the mean generator term with respect to the model.
    pub generator_grads: Gradients,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    pub discriminator_accuracy: f64,
}

/// Updates the discriminator once on real and fake molecules and returns
/// the non-saturating generator term `-log D(fake)` with its gradient.
/// Fakes only reach the model through the graph encoder, since decoding
/// is discrete.
pub fn adversarial_step(
    model: &CoreModel,
    disc: &mut Discriminator,
    disc_opt: &mut OptimizerState,
    real: &[MpnInput],
    fake: &[MpnInput],
    clip_norm: f64,
) -> Result<AdversarialUpdate, TrainError> {
    if real.is_empty() || fake.is_empty() {
        return Ok(AdversarialUpdate {
            generator_grads: Gradients::zeros_like(&model.params),
            generator_loss: 0.0,
            discriminator_loss: 0.0,
            discriminator_accuracy: 0.0,
        });
    }
    let embed = |input: &MpnInput| -> Result<Vec<f64>, TensorError> {
        let mut t = Tape::new(&model.params);
        let e = pooled_embedding(&mut t, model, input)?;
        Ok(t.data(e).to_vec())
    };
    let samples: Vec<(Vec<f64>, bool)> = real
        .iter()
        .map(|r| embed(r).map(|e| (e, true)))
        .chain(fake.iter().map(|f| embed(f).map(|e| (e, false))))
        .collect::<Result<_, _>>()?;
    let (disc_grads, discriminator_loss, discriminator_accuracy) =
        discriminator_gradients(disc, &samples)?;
    let mut disc_grads = disc_grads;
    disc_grads.clip_global_norm(clip_norm);
    disc_opt.apply(&mut disc.params, &disc_grads)?;

    let mut generator_grads = Gradients::zeros_like(&model.params);
    let mut generator_loss = 0.0;
    for f in fake {
        let mut t = Tape::new(&model.params);
        let e = pooled_embedding(&mut t, model, f)?;
        let logit = disc.logit_frozen(&mut t, e)?;
        let p = t.sigmoid(logit);
        let l = bce(&mut t, p, true);
        generator_loss += t.scalar(l);
        generator_grads.accumulate(&t.backward(l)?);
    }
    generator_grads.scale(1.0 / fake.len() as f64);
    Ok(AdversarialUpdate {
        generator_grads,
        generator_loss: generator_loss / fake.len() as f64,
        discriminator_loss,
        discriminator_accuracy,
    })
}

/// Mean binary cross-entropy of the discriminator on labelled embeddings,
/// its gradient, and its accuracy.
pub fn discriminator_gradients(
    disc: &Discriminator,
    samples: &[(Vec<f64>, bool)],
) -> Result<(Gradients, f64, f64), TrainError> {
    let mut t = Tape::new(&disc.params);
    let mut terms = Vec::with_capacity(samples.len());
    let mut correct = 0;
    for (e, label) in samples {
        let x = t.vector(e.clone());
        let logit = disc.logit(&mut t, x)?;
        let p = t.sigmoid(logit);
        if (t.scalar(p) >= 0.5) == *label {
            correct += 1;
        }
        terms.push(bce(&mut t, p, *label));
    }
    let loss = mean_terms(&mut t, &terms)?;
    let value = t.scalar(loss);
    let grads = t.backward(loss)?;
    Ok((grads, value, correct as f64 / samples.len().max(1) as f64))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train: LossReport,
    pub valid: Option<LossReport>,
    pub discriminator_loss: Option<f64>,
    pub discriminator_accuracy: Option<f64>,
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CoreModel,
    pub records: Vec<EpochRecord>,
    pub skipped_pairs: usize,
}

fn sample_seed(base: u64, epoch: usize, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((epoch as u64) << 32) | index as u64)
}

/// Trains a fresh model on `train_pairs`. After every epoch `on_epoch`
/// receives the log record and a checkpoint of the model and optimizer.
pub fn train(
    config: &TrainConfig,
    vocab: Vocabulary,
    train_pairs: &[(MolecularGraph, MolecularGraph)],
    valid_pairs: &[(MolecularGraph, MolecularGraph)],
    mut on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (train_set, skipped_train) = prepare_pairs(&vocab, train_pairs)?;
    let (valid_set, _) = prepare_pairs(&vocab, valid_pairs)?;
    if train_set.is_empty() {
        return Err(TrainError::Config("no usable training pairs".into()));
    }
    let mut model = CoreModel::new(vocab, config.model_config(), config.seed)?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(&model.params, adam);
    let mut disc = Discriminator::new(config.hidden, config.disc_hidden, config.seed.wrapping_add(1));
    let mut disc_opt = OptimizerState::new(&disc.params, adam);
    let mut caches: Vec<CompatCache> = (0..config.workers).map(|_| CompatCache::default()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = opt.lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut acc = ReportAccumulator::default();
        let mut disc_stats = (0.0, 0.0, 0usize);

        for batch in order.chunks(config.batch_size) {
            let results = parallel_map(batch, &mut caches, |&i, cache| {
                let pair = &train_set[i];
                let mut tape = Tape::new(&model.params);
                let (loss, report) = teacher_forced_loss(&mut tape, &model, pair, config.loss_weights)?;
                let grads = tape.backward(loss)?;
                let fake = if config.adversarial {
                    let options = DecodeOptions {
                        mode: DecodeMode::Sample {
                            seed: sample_seed(config.seed, epoch, i),
                            temperature: 1.0,
                        },
                        budget: config.decode_budget,
                        ..DecodeOptions::default()
                    };
                    decode_tree(&model, &pair.input, &options, cache)
                        .and_then(|trace| assemble_graph(&model, &trace))
                        .ok()
                        .map(|a| graph_input(&a.graph))
                } else {
                    None
                };
                Ok::<_, TrainError>((grads, report, fake))
            });

            let mut grads = Gradients::zeros_like(&model.params);
            let mut reports = Vec::with_capacity(batch.len());
            let mut fakes = Vec::new();
            for r in results {
                let (g, report, fake) = r?;
                grads.accumulate(&g);
                reports.push(report);
                fakes.extend(fake);
            }
            grads.scale(1.0 / batch.len() as f64);

            if config.adversarial {
                let real: Vec<MpnInput> =
                    batch.iter().map(|&i| train_set[i].target_graph.clone()).collect();
                let adv = adversarial_step(
                    &model,
                    &mut disc,
                    &mut disc_opt,
                    &real,
                    &fakes,
                    config.clip_norm,
                )?;
                let mut g = adv.generator_grads;
                g.scale(config.adversarial_weight);
                grads.accumulate(&g);
                for r in &mut reports {
                    r.adversarial_loss = adv.generator_loss;
                    r.total += config.adversarial_weight * adv.generator_loss;
                }
                disc_stats.0 += adv.discriminator_loss;
                disc_stats.1 += adv.discriminator_accuracy;
                disc_stats.2 += 1;
            }
            for r in &reports {
                if !r.total.is_finite() {
                    return Err(TrainError::NonFinite { epoch: epoch + 1 });
                }
                acc.add(r);
            }
            if !grads.is_finite() {
                return Err(TrainError::NonFinite { epoch: epoch + 1 });
            }
            grads.clip_global_norm(config.clip_norm);
            opt.apply(&mut model.params, &grads)?;
        }
        opt.anneal(config.lr_anneal);

        let valid = if valid_set.is_empty() {
            None
        } else {
            Some(evaluate_teacher_forced(&model, &valid_set, config.loss_weights)?)
        };
        let (dl, da, dn) = disc_stats;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train: acc.finish(),
            valid,
            discriminator_loss: (dn > 0).then(|| dl / dn as f64),
            discriminator_accuracy: (dn > 0).then(|| da / dn as f64),
            skipped_pairs: skipped_train,
        };
        let extra = vec![
            ("train.epoch".to_string(), record.epoch.to_string()),
            ("train.seed".to_string(), config.seed.to_string()),
        ];
        let ck = model.to_checkpoint(Some(&opt), &extra);
        on_epoch(&record, &ck)?;
        records.push(record);
    }
    Ok(TrainOutcome {
        model,
        records,
        skipped_pairs: skipped_train,
    })
}

/// Index of the best score; ties go to the later entry.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s >= scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates SR1 of every checkpoint on the validation inputs and returns
/// the index of the best (later epochs win ties) with all SR1 values.
pub fn select_best_checkpoint(
    models: &[CoreModel],
    valid_inputs: &[MolecularGraph],
    oracle: &dyn PropertyOracle,
    config: &EvalConfig,
) -> Result<(usize, Vec<f64>), TrainError> {
    let mut sr1 = Vec::with_capacity(models.len());
    for model in models {
        let generator = ModelGenerator {
            model,
            mode: config.mode,
            temperature: config.temperature,
            budget: config.budget,
        };
        let report = evaluate(&generator, valid_inputs, &model.vocab, oracle, config)?;
        sr1.push(report.headline.sr1);
    }
    let best = select_best(&sr1)
        .ok_or_else(|| TrainError::Config("no checkpoints to select from".into()))?;
    Ok((best, sr1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use crate::scaffold::build_vocabulary;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};

    fn mols(smiles: &[&str]) -> Vec<MolecularGraph> {
        smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
    }

    fn small_model(corpus: &[MolecularGraph], d: usize) -> CoreModel {
        let vocab = build_vocabulary(corpus).unwrap();
        let config = ModelConfig {
            hidden: d,
            tree_depth: 2,
            graph_depth: 2,
        };
        CoreModel::new(vocab, config, 3).unwrap()
    }

    #[test]
    fn single_node_target_has_one_decision_each() {
        let corpus = mols(&["c1ccccc1", "CC"]);
        let model = small_model(&corpus, 8);
        let pair = prepare_pair(&model.vocab, &corpus[1], &corpus[0]).unwrap();
        let mut tape = Tape::new(&model.params);
        let (_, r) = teacher_forced_loss(&mut tape, &model, &pair, [1.0; 3]).unwrap();
        assert_eq!(r.topo_decisions, 1);
        assert_eq!(r.substructure_decisions, 1);
        assert_eq!(r.assembly_decisions, 0);
        assert_eq!(r.assembly_loss, 0.0);
    }

    #[test]
    fn topo_decisions_cover_every_step_and_root_stop() {
        let corpus = mols(&["Cc1ccccc1O", "CCO"]);
        let model = small_model(&corpus, 8);
        let pair = prepare_pair(&model.vocab, &corpus[1], &corpus[0]).unwrap();
        let edges = pair.target_ids.len() - 1;
        let mut tape = Tape::new(&model.params);
        let (total, r) = teacher_forced_loss(&mut tape, &model, &pair, [1.0; 3]).unwrap();
        assert_eq!(r.topo_decisions, 2 * edges + 1);
        assert_eq!(r.substructure_decisions, edges + 1);
        let expect = r.topo_loss + r.substructure_loss + r.assembly_loss;
        assert!((tape.scalar(total) - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_of_certain_prediction_is_zero() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let one = t.vector(vec![1.0]);
        let zero = t.vector(vec![0.0]);
        let a = bce(&mut t, one, true);
        let b = bce(&mut t, zero, false);
        assert_eq!(t.scalar(a), 0.0);
        assert_eq!(t.scalar(b), 0.0);
        let half = t.vector(vec![0.5]);
        let c = bce(&mut t, half, false);
        assert!((t.scalar(c) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn random_init_substructure_loss_near_uniform() {
        // X shares no fragment with the vocabulary, so there is nothing to copy.
        let corpus = mols(&["Cc1ccccc1O", "C1CCCCC1N", "CCOC(=O)N", "ClC(Cl)Cl"]);
        let model = small_model(&corpus, 16);
        let x = parse_smiles("S=P(F)(F)F").unwrap();
        let y = parse_smiles("Cc1ccccc1O").unwrap();
        let pair = prepare_pair(&model.vocab, &x, &y).unwrap();
        assert!(pair.input.tree_ids.iter().all(|id| id.is_none()));
        assert_eq!(pair.target_ids.len(), 3);
        let mut tape = Tape::new(&model.params);
        let (_, r) = teacher_forced_loss(&mut tape, &model, &pair, [1.0; 3]).unwrap();
        let uniform = (model.vocab.len() as f64).ln();
        assert!(
            (r.substructure_loss - uniform).abs() <= 0.2 * uniform,
            "{} vs {}",
            r.substructure_loss,
            uniform
        );
    }

    #[test]
    fn unknown_target_is_skipped() {
        let corpus = mols(&["CCO"]);
        let vocab = build_vocabulary(&corpus).unwrap();
        let pairs = vec![
            (corpus[0].clone(), corpus[0].clone()),
            (corpus[0].clone(), parse_smiles("c1ccccc1").unwrap()),
        ];
        let (prepared, skipped) = prepare_pairs(&vocab, &pairs).unwrap();
        assert_eq!(prepared.len(), 1);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn teacher_forced_gradient_matches_finite_differences() {
        let corpus = mols(&["Cc1ccccc1", "CC(=O)O", "c1ccncc1"]);
        let model = small_model(&corpus, 4);
        let pair = prepare_pair(&model.vocab, &corpus[2], &corpus[0]).unwrap();
        let mut store = model.params.clone();
        let report = check_gradients(
            &mut store,
            GradCheck {
                max_entries_per_param: 6,
                ..GradCheck::default()
            },
            |t| Ok(teacher_forced_loss(t, &model, &pair, [1.0; 3]).unwrap().0),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn discriminator_separates_synthetic_embeddings() {
        let mut disc = Discriminator::new(4, 16, 9);
        let mut opt = OptimizerState::new(
            &disc.params,
            AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        );
        let mut samples = Vec::new();
        for k in 0..8 {
            let s = k as f64 * 0.1;
            samples.push((vec![1.0 + s, 1.0, 0.5, -s], true));
            samples.push((vec![-1.0 - s, -1.0, -0.5, s], false));
        }
        let mut accuracy = 0.0;
        for _ in 0..100 {
            let (g, _, a) = discriminator_gradients(&disc, &samples).unwrap();
            accuracy = a;
            opt.apply(&mut disc.params, &g).unwrap();
        }
        assert_eq!(accuracy, 1.0);
    }

    #[test]
    fn generator_term_reaches_the_encoder() {
        let corpus = mols(&["CCO", "CCN"]);
        let model = small_model(&corpus, 6);
        let mut disc = Discriminator::new(6, 8, 1);
        let mut opt = OptimizerState::new(&disc.params, AdamConfig::default());
        let real = vec![graph_input(&corpus[0])];
        let fake = vec![graph_input(&corpus[1])];
        let adv = adversarial_step(&model, &mut disc, &mut opt, &real, &fake, 10.0).unwrap();
        let enc_ids: Vec<_> = model
            .params
            .iter()
            .filter(|(_, name, _)| name.starts_with("graph_enc"))
            .map(|(id, _, _)| id)
            .collect();
        assert!(enc_ids
            .iter()
            .any(|&id| adv.generator_grads.get(id).iter().any(|g| *g != 0.0)));
        let decoder_id = model.params.id_of("g5.out.w").or_else(|| {
            model
                .params
                .iter()
                .find(|(_, n, _)| n.starts_with("g5"))
                .map(|(id, _, _)| id)
        });
        assert!(adv
            .generator_grads
            .get(decoder_id.unwrap())
            .iter()
            .all(|g| *g == 0.0));

        // finite-difference spot check of the generator term on one weight
        let id = enc_ids[0];
        let eps = 1e-5;
        let term = |store: &ParamStore| {
            let mut t = Tape::new(store);
            let e = {
                let emb = model.nets.graph_enc.encode(&mut t, &fake[0], 2).unwrap();
                t.mean_n(&emb).unwrap()
            };
            let l = disc.logit_frozen(&mut t, e).unwrap();
            let p = t.sigmoid(l);
            let b = bce(&mut t, p, true);
            t.scalar(b)
        };
        let mut plus = model.params.clone();
        plus.get_mut(id).data_mut()[0] += eps;
        let mut minus = model.params.clone();
        minus.get_mut(id).data_mut()[0] -= eps;
        let numeric = (term(&plus) - term(&minus)) / (2.0 * eps);
        let mut t = Tape::new(&model.params);
        let e = pooled_embedding(&mut t, &model, &fake[0]).unwrap();
        let l = disc.logit_frozen(&mut t, e).unwrap();
        let p = t.sigmoid(l);
        let b = bce(&mut t, p, true);
        let analytic = t.backward(b).unwrap().get(id)[0];
        assert!((numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()));
    }

    #[test]
    fn select_best_prefers_later_ties() {
        assert_eq!(select_best(&[0.4]), Some(0));
        assert_eq!(select_best(&[0.1, 0.3, 0.2]), Some(1));
        assert_eq!(select_best(&[0.3, 0.3]), Some(1));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn training_is_deterministic_and_anneals() {
        let corpus = mols(&["CCO", "CCN", "Cc1ccccc1", "Oc1ccccc1", "CC(=O)O"]);
        let vocab = build_vocabulary(&corpus).unwrap();
        let pairs: Vec<_> = (0..4)
            .map(|i| (corpus[i].clone(), corpus[i + 1].clone()))
            .collect();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            hidden: 8,
            tree_depth: 2,
            graph_depth: 2,
            disc_hidden: 8,
            decode_budget: 6,
            ..TrainConfig::default()
        };
        let run = |workers: usize| {
            let mut bytes = Vec::new();
            let config = TrainConfig {
                workers,
                ..config.clone()
            };
            let out = train(&config, vocab.clone(), &pairs, &pairs[..1], |_, ck| {
                bytes.push(ck.to_bytes());
                Ok(())
            })
            .unwrap();
            (out.records, bytes)
        };
        let (r1, b1) = run(1);
        let (r2, b2) = run(1);
        let (r3, b3) = run(2);
        assert_eq!(b1, b2);
        assert_eq!(r1, r2);
        assert_eq!(b1, b3);
        assert_eq!(r1, r3);
        assert_eq!(b1.len(), 3);
        for (k, r) in r1.iter().enumerate() {
            assert!((r.lr - 1e-3 * 0.8f64.powi(k as i32)).abs() < 1e-15);
            assert!(r.train.adversarial_loss > 0.0);
        }
    }

    #[test]
    fn disabling_adversarial_zeroes_its_loss() {
        let corpus = mols(&["CCO", "CCN"]);
        let vocab = build_vocabulary(&corpus).unwrap();
        let pairs = vec![(corpus[0].clone(), corpus[1].clone())];
        let config = TrainConfig {
            epochs: 1,
            hidden: 6,
            adversarial: false,
            ..TrainConfig::default()
        };
        let out = train(&config, vocab, &pairs, &[], |_, _| Ok(())).unwrap();
        assert_eq!(out.records[0].train.adversarial_loss, 0.0);
        assert!(out.records[0].discriminator_loss.is_none());
    }
}
