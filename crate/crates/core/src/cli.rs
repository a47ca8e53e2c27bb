//! Command-line workflows: vocabulary, pair generation, training,
//! generation and evaluation.
//!
//! Every setting (paths included) resolves from built-in defaults, then an
//! optional `key=value` config file, then flags. The resolved settings are
//! written next to the command's output so a run can be repeated from that
//! file alone.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::chemprop::{Property, PropertyOracle};
use crate::decoder::{
    generate, write_generation_tsv, CompatCache, CoreModel, GenerationRow,
};
use crate::molgraph::{canonical_smiles, read_smiles_file, MolecularGraph};
use crate::parallel::parallel_map;
use crate::pipeline::{
    evaluate, format_summary, generate_pairs, read_pairs_tsv, write_pairs_tsv, Aggregation,
    EvalConfig, ModelGenerator, SampleMode, Thresholds,
};
use crate::scaffold::{
    build_vocabulary, classify_frequency, decompose, FrequencyClass, Vocabulary,
};
use crate::tensor::checkpoint::Checkpoint;
use crate::training::{select_best_checkpoint, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input.
    #[error("{0}")]
    Usage(String),
    /// Failure while running a well-formed command.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "copyrefine", version, about = "Copy&Refine molecular optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the substructure vocabulary of a SMILES corpus.
    Vocab(VocabArgs),
    /// Generate (X, Y) training pairs from a corpus.
    Pairs(PairsArgs),
    /// Train a model on a pair file.
    Train(TrainArgs),
    /// Decode molecules for every input with a trained model.
    Generate(GenerateArgs),
    /// Compute Similarity, Property, SR1 and SR2 on a test set.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SMILES corpus, one molecule per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output vocabulary TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frequency below which a substructure counts as infrequent [default: 2000].
    #[arg(long)]
    pub infrequent_threshold: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output pair TSV (X<TAB>Y).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Property oracle: logp, plogp, qed or drd2 [default: logp].
    #[arg(long)]
    pub property: Option<String>,
    /// Minimum Tanimoto similarity [default: 0.4].
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Minimum property gain [default: 0.1].
    #[arg(long, allow_hyphen_values = true)]
    pub eta2: Option<f64>,
    /// Maximum number of pairs, or "none" [default: none].
    #[arg(long)]
    pub cap: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training pair TSV.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Validation pair TSV; enables per-epoch validation loss and SR1 model selection.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Vocabulary TSV.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Run directory for checkpoints, logs and the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Embedding size [default: 300].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [default: 6]
    #[arg(long)]
    pub tree_depth: Option<usize>,
    /// [default: 3]
    #[arg(long)]
    pub graph_depth: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate factor [default: 0.8].
    #[arg(long)]
    pub lr_anneal: Option<f64>,
    /// true or false [default: true].
    #[arg(long)]
    pub adversarial: Option<bool>,
    /// [default: 0.1]
    #[arg(long)]
    pub adversarial_weight: Option<f64>,
    /// [default: 300]
    #[arg(long)]
    pub disc_hidden: Option<usize>,
    /// Global gradient-norm clip [default: 10].
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Node budget when decoding fakes [default: 50].
    #[arg(long)]
    pub decode_budget: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Property used for SR1 model selection [default: qed].
    #[arg(long)]
    pub select_property: Option<String>,
    /// Samples per validation input during selection [default: 20].
    #[arg(long)]
    pub select_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Input SMILES file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Samples per input, seeds 0..k [default: 20].
    #[arg(long)]
    pub k: Option<usize>,
    /// sample or greedy [default: sample].
    #[arg(long)]
    pub mode: Option<String>,
    /// Maximum tree nodes [default: 50].
    #[arg(long)]
    pub budget: Option<usize>,
    /// [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test SMILES file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// logp, plogp, qed or drd2 [default: qed].
    #[arg(long)]
    pub property: Option<String>,
    /// SR1 thresholds "sim,property" [default: 0.3,0.6 for qed/drd2, 0.4,0.8 for logp].
    #[arg(long, allow_hyphen_values = true)]
    pub sr1: Option<String>,
    /// SR2 thresholds "sim,property" [default: 0.4,0.8 for qed/drd2, 0.4,1.2 for logp].
    #[arg(long, allow_hyphen_values = true)]
    pub sr2: Option<String>,
    /// [default: 20]
    #[arg(long)]
    pub k: Option<usize>,
    /// best_of_k or mean_of_k [default: best_of_k].
    #[arg(long)]
    pub aggregation: Option<String>,
    /// sample or greedy [default: sample].
    #[arg(long)]
    pub mode: Option<String>,
    /// [default: 50]
    #[arg(long)]
    pub budget: Option<usize>,
    /// [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// [default: 2000]
    #[arg(long)]
    pub infrequent_threshold: Option<u64>,
    /// [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Resolved `key=value` settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(defaults: &[(&str, &str)]) -> Self {
        Settings {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Parses `key=value` lines; `#` comments and blank lines are skipped.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (k, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (key, value) = t.split_once('=').ok_or_else(|| {
                usage(format!("{origin}:{}: expected key=value", k + 1))
            })?;
            let key = key.trim().replace('-', "_");
            if !self.values.contains_key(&key) {
                return Err(usage(format!("{origin}:{}: unknown setting '{key}'", k + 1)));
            }
            self.values.insert(key, value.trim().to_string());
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn set<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn set_path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.display().to_string());
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| usage(format!("bad value for '{key}': {e}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        match self.raw(key) {
            "" => Err(usage(format!("missing required setting '{key}'"))),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        match self.raw(key) {
            "" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text()).map_err(runtime)
    }
}

/// Path of the resolved config written next to output file `out`.
pub fn config_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    out.with_file_name(name)
}

fn start(
    defaults: &[(&str, &str)],
    config: &Option<PathBuf>,
) -> Result<Settings, CliError> {
    let mut s = Settings::new(defaults);
    if let Some(path) = config {
        s.merge_file(path)?;
    }
    Ok(s)
}

/// Reads a SMILES file, failing with every bad line number.
fn read_molecules(path: &Path) -> Result<Vec<MolecularGraph>, CliError> {
    let rows = read_smiles_file(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut mols = Vec::with_capacity(rows.len());
    let mut bad = Vec::new();
    for (line, smiles, parsed) in rows {
        match parsed {
            Ok(g) => mols.push(g),
            Err(e) => bad.push(format!("  line {line}: '{smiles}': {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(usage(format!(
            "{}: {} unparseable line(s)\n{}",
            path.display(),
            bad.len(),
            bad.join("\n")
        )));
    }
    Ok(mols)
}

fn read_pairs(path: &Path) -> Result<Vec<(MolecularGraph, MolecularGraph)>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    read_pairs_tsv(std::io::BufReader::new(file))
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<CoreModel, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    CoreModel::from_checkpoint(&ck).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

fn parse_mode(s: &str) -> Result<SampleMode, CliError> {
    match s {
        "sample" => Ok(SampleMode::Sample),
        "greedy" => Ok(SampleMode::Greedy),
        other => Err(usage(format!("mode must be sample or greedy, got '{other}'"))),
    }
}

fn parse_thresholds(s: &str) -> Result<Thresholds, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b] = parts.as_slice() else {
        return Err(usage(format!("thresholds must be 'sim,property', got '{s}'")));
    };
    let num = |x: &str| -> Result<f64, CliError> {
        match x {
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => x.parse().map_err(|_| usage(format!("bad threshold '{x}'"))),
        }
    };
    Ok(Thresholds::new(num(a)?, num(b)?))
}

fn property(name: &str) -> Result<Property, CliError> {
    Property::from_name(name).map_err(usage)
}

pub fn run_vocab(args: &VocabArgs, out_log: &mut dyn Write) -> Result<(), CliError> {
    let mut s = start(
        &[("input", ""), ("out", ""), ("infrequent_threshold", "2000")],
        &args.config,
    )?;
    s.set_path("input", &args.input);
    s.set_path("out", &args.out);
    s.set("infrequent_threshold", &args.infrequent_threshold);
    let input = s.path("input")?;
    let out = s.path("out")?;
    let threshold: u64 = s.get("infrequent_threshold")?;

    let corpus = read_molecules(&input)?;
    let vocab = build_vocabulary(&corpus).map_err(runtime)?;
    vocab.save(&out).map_err(runtime)?;
    s.write(&config_path_for(&out))?;

    let nodes: usize = corpus
        .iter()
        .map(|g| decompose(g).map(|t| t.len()).unwrap_or(0))
        .sum();
    let infrequent = (0..vocab.len())
        .filter(|&id| {
            matches!(
                classify_frequency(&vocab, id, threshold),
                Ok(FrequencyClass::Infrequent)
            )
        })
        .count();
    writeln!(
        out_log,
        "molecules: {}\nvocabulary size: {}\naverage nodes per molecule: {:.3}\nfrequent: {}\ninfrequent (< {threshold}): {}",
        corpus.len(),
        vocab.len(),
        nodes as f64 / corpus.len().max(1) as f64,
        vocab.len() - infrequent,
        infrequent
    )
    .map_err(runtime)
}

pub fn run_pairs(args: &PairsArgs, out_log: &mut dyn Write) -> Result<(), CliError> {
    let mut s = start(
        &[
            ("input", ""),
            ("out", ""),
            ("property", "logp"),
            ("eta1", "0.4"),
            ("eta2", "0.1"),
            ("cap", "none"),
        ],
        &args.config,
    )?;
    s.set_path("input", &args.input);
    s.set_path("out", &args.out);
    s.set("property", &args.property);
    s.set("eta1", &args.eta1);
    s.set("eta2", &args.eta2);
    s.set("cap", &args.cap);
    let input = s.path("input")?;
    let out = s.path("out")?;
    let oracle = property(s.raw("property"))?;
    let eta1: f64 = s.get("eta1")?;
    let eta2: f64 = s.get("eta2")?;
    let cap = match s.raw("cap") {
        "none" | "" => None,
        _ => Some(s.get::<usize>("cap")?),
    };

    let corpus = read_molecules(&input)?;
    let pairs = generate_pairs(&corpus, &oracle, eta1, eta2, cap).map_err(runtime)?;
    let mut w = create(&out)?;
    write_pairs_tsv(&mut w, &pairs).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    s.write(&config_path_for(&out))?;
    writeln!(out_log, "pairs: {}", pairs.len()).map_err(runtime)
}

pub fn run_train(args: &TrainArgs, out_log: &mut dyn Write) -> Result<(), CliError> {
    let d = TrainConfig::default();
    let defaults: Vec<(&str, String)> = vec![
        ("pairs", String::new()),
        ("valid", String::new()),
        ("vocab", String::new()),
        ("out", String::new()),
        ("epochs", d.epochs.to_string()),
        ("batch_size", d.batch_size.to_string()),
        ("hidden", d.hidden.to_string()),
        ("tree_depth", d.tree_depth.to_string()),
        ("graph_depth", d.graph_depth.to_string()),
        ("lr", d.lr.to_string()),
        ("lr_anneal", d.lr_anneal.to_string()),
        ("adversarial", d.adversarial.to_string()),
        ("adversarial_weight", d.adversarial_weight.to_string()),
        ("disc_hidden", d.disc_hidden.to_string()),
        ("clip_norm", d.clip_norm.to_string()),
        ("decode_budget", d.decode_budget.to_string()),
        ("seed", d.seed.to_string()),
        ("workers", d.workers.to_string()),
        ("select_property", "qed".to_string()),
        ("select_k", "20".to_string()),
    ];
    let defaults: Vec<(&str, &str)> = defaults.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let mut s = start(&defaults, &args.config)?;
    s.set_path("pairs", &args.pairs);
    s.set_path("valid", &args.valid);
    s.set_path("vocab", &args.vocab);
    s.set_path("out", &args.out);
    s.set("epochs", &args.epochs);
    s.set("batch_size", &args.batch_size);
    s.set("hidden", &args.hidden);
    s.set("tree_depth", &args.tree_depth);
    s.set("graph_depth", &args.graph_depth);
    s.set("lr", &args.lr);
    s.set("lr_anneal", &args.lr_anneal);
    s.set("adversarial", &args.adversarial);
    s.set("adversarial_weight", &args.adversarial_weight);
    s.set("disc_hidden", &args.disc_hidden);
    s.set("clip_norm", &args.clip_norm);
    s.set("decode_budget", &args.decode_budget);
    s.set("seed", &args.seed);
    s.set("workers", &args.workers);
    s.set("select_property", &args.select_property);
    s.set("select_k", &args.select_k);

    let config = TrainConfig {
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        hidden: s.get("hidden")?,
        tree_depth: s.get("tree_depth")?,
        graph_depth: s.get("graph_depth")?,
        lr: s.get("lr")?,
        lr_anneal: s.get("lr_anneal")?,
        adversarial: s.get("adversarial")?,
        adversarial_weight: s.get("adversarial_weight")?,
        disc_hidden: s.get("disc_hidden")?,
        loss_weights: d.loss_weights,
        clip_norm: s.get("clip_norm")?,
        decode_budget: s.get("decode_budget")?,
        seed: s.get("seed")?,
        workers: s.get("workers")?,
    };
    config.validate().map_err(usage)?;
    let select_oracle = property(s.raw("select_property"))?;
    let select_k: usize = s.get("select_k")?;
    let vocab_path = s.path("vocab")?;
    let vocab = Vocabulary::load(&vocab_path)
        .map_err(|e| usage(format!("{}: {e}", vocab_path.display())))?;
    let train_pairs = read_pairs(&s.path("pairs")?)?;
    let valid_pairs = match s.optional_path("valid") {
        Some(p) => read_pairs(&p)?,
        None => Vec::new(),
    };
    let out = s.path("out")?;
    std::fs::create_dir_all(&out).map_err(runtime)?;
    s.write(&out.join("config.cfg"))?;

    let mut log = create(&out.join("train_log.jsonl"))?;
    let mut timing = create(&out.join("timing.jsonl"))?;
    let mut checkpoints = Vec::new();
    let clock = Instant::now();
    let outcome = train(&config, vocab, &train_pairs, &valid_pairs, |record, ck| {
        let path = out.join(format!("epoch_{:03}.ckpt", record.epoch));
        ck.save(&path)?;
        checkpoints.push(path);
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(log, "{line}")?;
        log.flush()?;
        writeln!(
            timing,
            "{}",
            serde_json::json!({"epoch": record.epoch, "wall_time_s": clock.elapsed().as_secs_f64()})
        )?;
        timing.flush()?;
        writeln!(
            out_log,
            "epoch {:>3}  lr {:.3e}  loss {:.4}  topo {:.3}  sub {:.3}  asm {:.3}",
            record.epoch,
            record.lr,
            record.train.total,
            record.train.topo_accuracy,
            record.train.substructure_accuracy,
            record.train.assembly_accuracy
        )?;
        Ok(())
    })
    .map_err(|e| match e {
        TrainError::Config(_) => usage(e),
        _ => runtime(e),
    })?;
    if outcome.skipped_pairs > 0 {
        writeln!(
            out_log,
            "skipped {} pair(s) with out-of-vocabulary targets",
            outcome.skipped_pairs
        )
        .map_err(runtime)?;
    }

    if !valid_pairs.is_empty() {
        let models = checkpoints
            .iter()
            .map(|p| load_model(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut eval = EvalConfig::for_property(select_oracle.name());
        eval.k = select_k;
        eval.workers = config.workers;
        let inputs: Vec<MolecularGraph> = valid_pairs.iter().map(|(x, _)| x.clone()).collect();
        let (best, sr1) =
            select_best_checkpoint(&models, &inputs, &select_oracle, &eval).map_err(runtime)?;
        let summary = serde_json::json!({
            "property": select_oracle.name(),
            "sr1": sr1,
            "best_epoch": best + 1,
            "best_checkpoint": checkpoints[best].file_name().map(|n| n.to_string_lossy().to_string()),
        });
        std::fs::write(
            out.join("selection.json"),
            serde_json::to_string_pretty(&summary).expect("json") + "\n",
        )
        .map_err(runtime)?;
        writeln!(out_log, "best epoch by SR1: {}", best + 1).map_err(runtime)?;
    }
    Ok(())
}

pub fn run_generate(args: &GenerateArgs, out_log: &mut dyn Write) -> Result<(), CliError> {
    let mut s = start(
        &[
            ("model", ""),
            ("input", ""),
            ("out", ""),
            ("k", "20"),
            ("mode", "sample"),
            ("budget", "50"),
            ("temperature", "1"),
            ("workers", "1"),
        ],
        &args.config,
    )?;
    s.set_path("model", &args.model);
    s.set_path("input", &args.input);
    s.set_path("out", &args.out);
    s.set("k", &args.k);
    s.set("mode", &args.mode);
    s.set("budget", &args.budget);
    s.set("temperature", &args.temperature);
    s.set("workers", &args.workers);
    let k: usize = s.get("k")?;
    let workers: usize = s.get("workers")?;
    let generator_budget: usize = s.get("budget")?;
    let temperature: f64 = s.get("temperature")?;
    if k == 0 || workers == 0 || generator_budget == 0 || !(temperature > 0.0) {
        return Err(usage("k, workers, budget and temperature must be positive"));
    }
    let mode = parse_mode(s.raw("mode"))?;
    let model = load_model(&s.path("model")?)?;
    let inputs = read_molecules(&s.path("input")?)?;
    let out = s.path("out")?;

    let generator = ModelGenerator {
        model: &model,
        mode,
        temperature,
        budget: generator_budget,
    };
    let mut caches: Vec<CompatCache> = (0..workers).map(|_| CompatCache::default()).collect();
    let rows: Vec<GenerationRow> = parallel_map(&inputs, &mut caches, |x, cache| {
        let input_smiles = canonical_smiles(x);
        (0..k as u64)
            .map(|seed| match generate(&model, x, &generator.options(seed), cache) {
                Ok(g) => GenerationRow {
                    input_smiles: input_smiles.clone(),
                    output_smiles: g.smiles,
                    seed,
                    n_nodes: g.trace.tree.len(),
                    terminated_by: g.trace.termination.as_str().to_string(),
                },
                Err(e) => GenerationRow {
                    input_smiles: input_smiles.clone(),
                    output_smiles: String::new(),
                    seed,
                    n_nodes: 0,
                    terminated_by: format!("error: {e}"),
                },
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let mut w = create(&out)?;
    write_generation_tsv(&mut w, &rows).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    s.write(&config_path_for(&out))?;
    let failed = rows.iter().filter(|r| r.output_smiles.is_empty()).count();
    writeln!(out_log, "rows: {}  failed: {failed}", rows.len()).map_err(runtime)
}

pub fn run_evaluate(args: &EvaluateArgs, out_log: &mut dyn Write) -> Result<(), CliError> {
    let mut s = start(
        &[
            ("model", ""),
            ("test", ""),
            ("out", ""),
            ("property", "qed"),
            ("sr1", ""),
            ("sr2", ""),
            ("k", "20"),
            ("aggregation", "best_of_k"),
            ("mode", "sample"),
            ("budget", "50"),
            ("temperature", "1"),
            ("infrequent_threshold", "2000"),
            ("workers", "1"),
        ],
        &args.config,
    )?;
    s.set_path("model", &args.model);
    s.set_path("test", &args.test);
    s.set_path("out", &args.out);
    s.set("property", &args.property);
    s.set("sr1", &args.sr1);
    s.set("sr2", &args.sr2);
    s.set("k", &args.k);
    s.set("aggregation", &args.aggregation);
    s.set("mode", &args.mode);
    s.set("budget", &args.budget);
    s.set("temperature", &args.temperature);
    s.set("infrequent_threshold", &args.infrequent_threshold);
    s.set("workers", &args.workers);

    let oracle = property(s.raw("property"))?;
    let mut config = EvalConfig::for_property(oracle.name());
    // fill unspecified thresholds with the property defaults so the
    // resolved file is self-contained
    let fmt = |t: Thresholds| format!("{},{}", t.sim, t.property);
    if s.raw("sr1").is_empty() {
        s.set("sr1", &Some(fmt(config.sr1)));
    }
    if s.raw("sr2").is_empty() {
        s.set("sr2", &Some(fmt(config.sr2)));
    }
    config.sr1 = parse_thresholds(s.raw("sr1"))?;
    config.sr2 = parse_thresholds(s.raw("sr2"))?;
    config.k = s.get("k")?;
    config.aggregation = match s.raw("aggregation") {
        "best_of_k" => Aggregation::BestOfK,
        "mean_of_k" => Aggregation::MeanOfK,
        other => return Err(usage(format!("unknown aggregation '{other}'"))),
    };
    config.mode = parse_mode(s.raw("mode"))?;
    config.budget = s.get("budget")?;
    config.temperature = s.get("temperature")?;
    config.infrequent_threshold = s.get("infrequent_threshold")?;
    config.workers = s.get("workers")?;
    config.validate().map_err(usage)?;

    let model = load_model(&s.path("model")?)?;
    let inputs = read_molecules(&s.path("test")?)?;
    let out = s.path("out")?;
    let generator = ModelGenerator {
        model: &model,
        mode: config.mode,
        temperature: config.temperature,
        budget: config.budget,
    };
    let report =
        evaluate(&generator, &inputs, &model.vocab, &oracle, &config).map_err(runtime)?;
    std::fs::write(
        &out,
        serde_json::to_string_pretty(&report).map_err(runtime)? + "\n",
    )
    .map_err(runtime)?;
    s.write(&config_path_for(&out))?;
    write!(out_log, "{}", format_summary(&report)).map_err(runtime)
}

pub fn run_command(cli: &Cli, out_log: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Vocab(a) => run_vocab(a, out_log),
        Command::Pairs(a) => run_pairs(a, out_log),
        Command::Train(a) => run_train(a, out_log),
        Command::Generate(a) => run_generate(a, out_log),
        Command::Evaluate(a) => run_evaluate(a, out_log),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_command(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let mut s = Settings::new(&[("k", "20"), ("mode", "sample"), ("out", "")]);
        s.merge_text("# comment\nk = 5\nmode=greedy\n", "cfg").unwrap();
        s.set("k", &Some(7));
        s.set::<String>("mode", &None);
        assert_eq!(s.get::<usize>("k").unwrap(), 7);
        assert_eq!(s.raw("mode"), "greedy");
        assert!(matches!(s.path("out"), Err(CliError::Usage(_))));
        assert_eq!(s.to_text(), "k=7\nmode=greedy\nout=\n");
    }

    #[test]
    fn unknown_or_malformed_settings_are_usage_errors() {
        let mut s = Settings::new(&[("k", "20")]);
        assert_eq!(s.merge_text("j=1", "cfg").unwrap_err().exit_code(), 2);
        assert_eq!(s.merge_text("k", "cfg").unwrap_err().exit_code(), 2);
        assert_eq!(s.merge_text("k=x", "cfg").map(|_| s.get::<usize>("k")).unwrap().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!(parse_thresholds("0.3,0.6").unwrap(), Thresholds::new(0.3, 0.6));
        assert_eq!(
            parse_thresholds("0,-inf").unwrap(),
            Thresholds::new(0.0, f64::NEG_INFINITY)
        );
        assert!(parse_thresholds("0.3").is_err());
    }

    #[test]
    fn config_file_sits_next_to_output() {
        assert_eq!(
            config_path_for(Path::new("/tmp/run/gen.tsv")),
            PathBuf::from("/tmp/run/gen.tsv.config")
        );
    }
}
