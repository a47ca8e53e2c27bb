//! Training-pair construction, the infrequent-substructure subset, and
//! evaluation of Similarity, Property, SR1 and SR2 over K samples per input.

use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::chemprop::{
    morgan_fingerprint, similarity, tanimoto, ChemError, PropertyOracle, DEFAULT_NBITS,
    DEFAULT_RADIUS,
};
use crate::decoder::{generate, CompatCache, CoreModel, DecodeMode, DecodeOptions};
use crate::molgraph::{canonical_smiles, parse_smiles, MolError, MolecularGraph};
use crate::parallel::parallel_map;
use crate::scaffold::{classify_frequency, decompose, FrequencyClass, ScaffoldError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: MolError },
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An (X, Y) training pair with its similarity and property gain.
#[derive(Debug, Clone)]
pub struct MoleculePair {
    pub x: MolecularGraph,
    pub y: MolecularGraph,
    pub sim: f64,
    pub delta: f64,
}

/// All ordered pairs of distinct molecules with `sim >= eta1` and
/// `property(Y) - property(X) >= eta2`, in corpus order, truncated to `cap`.
/// Molecules with the same canonical SMILES count as self-pairs.
pub fn generate_pairs(
    corpus: &[MolecularGraph],
    oracle: &dyn PropertyOracle,
    eta1: f64,
    eta2: f64,
    cap: Option<usize>,
) -> Result<Vec<MoleculePair>, PipelineError> {
    let fps: Vec<_> = corpus
        .iter()
        .map(|g| morgan_fingerprint(g, DEFAULT_RADIUS, DEFAULT_NBITS))
        .collect();
    let props = corpus
        .iter()
        .map(|g| oracle.evaluate(g))
        .collect::<Result<Vec<f64>, _>>()?;
    let keys: Vec<String> = corpus.iter().map(canonical_smiles).collect();
    let cap = cap.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for i in 0..corpus.len() {
        for j in 0..corpus.len() {
            if out.len() >= cap {
                return Ok(out);
            }
            if i == j || keys[i] == keys[j] {
                continue;
            }
            let delta = props[j] - props[i];
            if delta < eta2 {
                continue;
            }
            let sim = tanimoto(&fps[i], &fps[j])?;
            if sim >= eta1 {
                out.push(MoleculePair {
                    x: corpus[i].clone(),
                    y: corpus[j].clone(),
                    sim,
                    delta,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `X<TAB>Y` lines of canonical SMILES.
pub fn write_pairs_tsv(mut out: impl Write, pairs: &[MoleculePair]) -> std::io::Result<()> {
    for p in pairs {
        writeln!(out, "{}\t{}", canonical_smiles(&p.x), canonical_smiles(&p.y))?;
    }
    Ok(())
}

/// Reads `X<TAB>Y` lines; blank lines and `#` comments are skipped.
pub fn read_pairs_tsv(
    input: impl BufRead,
) -> Result<Vec<(MolecularGraph, MolecularGraph)>, PipelineError> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let n = k + 1;
        let t = line.trim_end_matches('\r');
        if t.trim().is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = t.split('\t').collect();
        if cols.len() != 2 {
            return Err(PipelineError::Format {
                line: n,
                message: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        let parse = |s: &str| {
            parse_smiles(s.trim()).map_err(|source| PipelineError::Smiles { line: n, source })
        };
        out.push((parse(cols[0])?, parse(cols[1])?));
    }
    Ok(out)
}

/// Indices of inputs whose decomposition has at least one infrequent or
/// out-of-vocabulary substructure.
pub fn infrequent_subset(
    inputs: &[MolecularGraph],
    vocab: &Vocabulary,
    threshold: u64,
) -> Result<Vec<usize>, PipelineError> {
    let mut out = Vec::new();
    for (i, g) in inputs.iter().enumerate() {
        let tree = vocab.annotate(&decompose(g)?);
        let mut rare = false;
        for node in tree.nodes() {
            rare |= match node.id {
                None => true,
                Some(id) => classify_frequency(vocab, id, threshold)? == FrequencyClass::Infrequent,
            };
        }
        if rare {
            out.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    BestOfK,
    MeanOfK,
}

/// Success thresholds: similarity at least `sim`, property at least `property`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub sim: f64,
    pub property: f64,
}

impl Thresholds {
    pub fn new(sim: f64, property: f64) -> Self {
        Thresholds { sim, property }
    }

    pub fn passes(&self, sim: f64, property: f64) -> bool {
        sim >= self.sim && property >= self.property
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub k: usize,
    pub sr1: Thresholds,
    pub sr2: Thresholds,
    /// Aggregation used for the headline metrics; both are always reported.
    pub aggregation: Aggregation,
    pub mode: SampleMode,
    pub temperature: f64,
    pub budget: usize,
    pub infrequent_threshold: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Greedy,
    Sample,
}

impl EvalConfig {
    /// Table 4 and Table 5 thresholds for a property name.
    pub fn for_property(name: &str) -> Self {
        let (sr1, sr2) = match name {
            "logp" | "plogp" => (Thresholds::new(0.4, 0.8), Thresholds::new(0.4, 1.2)),
            _ => (Thresholds::new(0.3, 0.6), Thresholds::new(0.4, 0.8)),
        };
        EvalConfig {
            sr1,
            sr2,
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.budget == 0 || self.workers == 0 {
            return Err(PipelineError::Config("budget and workers must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(PipelineError::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 20,
            sr1: Thresholds::new(0.3, 0.6),
            sr2: Thresholds::new(0.4, 0.8),
            aggregation: Aggregation::BestOfK,
            mode: SampleMode::Sample,
            temperature: 1.0,
            budget: 50,
            infrequent_threshold: crate::scaffold::DEFAULT_INFREQUENT_THRESHOLD,
            workers: 1,
        }
    }
}

/// One decoded sample; `None` when decoding or scoring failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub smiles: Option<String>,
    pub sim: Option<f64>,
    pub property: Option<f64>,
}

impl Sample {
    fn scored(&self) -> Option<(f64, f64)> {
        Some((self.sim?, self.property?))
    }
}

/// All samples for one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRecord {
    pub input_smiles: String,
    pub samples: Vec<Sample>,
}

/// The sample reported for an input under best-of-K: the highest property
/// among samples with similarity at least `min_sim`, or the highest
/// property overall when none qualifies.
pub fn best_of_k(samples: &[Sample], min_sim: f64) -> Option<(f64, f64)> {
    let scored: Vec<(f64, f64)> = samples.iter().filter_map(Sample::scored).collect();
    let pick = |pool: Vec<(f64, f64)>| {
        pool.into_iter()
            .fold(None, |best: Option<(f64, f64)>, s| match best {
                Some(b) if b.1 >= s.1 => Some(b),
                _ => Some(s),
            })
    };
    pick(scored.iter().copied().filter(|s| s.0 >= min_sim).collect()).or_else(|| pick(scored))
}

/// Fraction of (sim, property) records that pass `t`.
pub fn success_rate(records: &[(f64, f64)], t: Thresholds) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|&&(s, p)| t.passes(s, p)).count() as f64 / records.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub inputs: usize,
    pub similarity: f64,
    pub property: f64,
    pub sr1: f64,
    pub sr2: f64,
}

/// Best-of-K metrics: an input succeeds when any sample passes; Similarity
/// and Property come from the sample chosen for SR1.
pub fn best_of_k_metrics(records: &[&InputRecord], config: &EvalConfig) -> Metrics {
    let n = records.len();
    if n == 0 {
        return Metrics::default();
    }
    let chosen: Vec<Option<(f64, f64)>> = records
        .iter()
        .map(|r| best_of_k(&r.samples, config.sr1.sim))
        .collect();
    let ok: Vec<(f64, f64)> = chosen.iter().flatten().copied().collect();
    let sr = |t: Thresholds| {
        records
            .iter()
            .filter(|r| r.samples.iter().filter_map(Sample::scored).any(|(s, p)| t.passes(s, p)))
            .count() as f64
            / n as f64
    };
    Metrics {
        inputs: n,
        similarity: mean(ok.iter().map(|x| x.0)),
        property: mean(ok.iter().map(|x| x.1)),
        sr1: sr(config.sr1),
        sr2: sr(config.sr2),
    }
}

/// Mean-of-K metrics: per-input averages over samples (failed samples count
/// as non-successes), then averaged over inputs.
pub fn mean_of_k_metrics(records: &[&InputRecord], config: &EvalConfig) -> Metrics {
    let n = records.len();
    if n == 0 {
        return Metrics::default();
    }
    let mut sims = Vec::new();
    let mut props = Vec::new();
    let mut sr1 = 0.0;
    let mut sr2 = 0.0;
    for r in records {
        let scored: Vec<(f64, f64)> = r.samples.iter().filter_map(Sample::scored).collect();
        if !scored.is_empty() {
            sims.push(mean(scored.iter().map(|x| x.0)));
            props.push(mean(scored.iter().map(|x| x.1)));
        }
        let k = r.samples.len().max(1) as f64;
        sr1 += scored.iter().filter(|&&(s, p)| config.sr1.passes(s, p)).count() as f64 / k;
        sr2 += scored.iter().filter(|&&(s, p)| config.sr2.passes(s, p)).count() as f64 / k;
    }
    Metrics {
        inputs: n,
        similarity: mean(sims.into_iter()),
        property: mean(props.into_iter()),
        sr1: sr1 / n as f64,
        sr2: sr2 / n as f64,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub property: String,
    pub config: EvalConfig,
    /// Metrics under `config.aggregation`.
    pub headline: Metrics,
    pub best_of_k: Metrics,
    pub mean_of_k: Metrics,
    pub infrequent_best_of_k: Metrics,
    pub infrequent_mean_of_k: Metrics,
    pub infrequent_inputs: Vec<usize>,
    pub failed_samples: usize,
}

/// Metrics over all records and over the `infrequent` subset.
pub fn report_from_records(
    property: &str,
    records: &[InputRecord],
    infrequent: &[usize],
    config: &EvalConfig,
) -> EvalReport {
    let all: Vec<&InputRecord> = records.iter().collect();
    let sub: Vec<&InputRecord> = infrequent.iter().map(|&i| &records[i]).collect();
    let best_of_k = best_of_k_metrics(&all, config);
    let mean_of_k = mean_of_k_metrics(&all, config);
    EvalReport {
        property: property.to_string(),
        config: config.clone(),
        headline: match config.aggregation {
            Aggregation::BestOfK => best_of_k.clone(),
            Aggregation::MeanOfK => mean_of_k.clone(),
        },
        best_of_k,
        mean_of_k,
        infrequent_best_of_k: best_of_k_metrics(&sub, config),
        infrequent_mean_of_k: mean_of_k_metrics(&sub, config),
        infrequent_inputs: infrequent.to_vec(),
        failed_samples: records
            .iter()
            .flat_map(|r| &r.samples)
            .filter(|s| s.scored().is_none())
            .count(),
    }
}

/// Anything that turns an input molecule into an output molecule for a
/// given sample seed. `State` is per-worker scratch space.
pub trait Generator: Sync {
    type State: Send + Default;
    fn generate(
        &self,
        state: &mut Self::State,
        input: &MolecularGraph,
        seed: u64,
    ) -> Result<MolecularGraph, String>;
}

/// Decodes with a trained model.
pub struct ModelGenerator<'a> {
    pub model: &'a CoreModel,
    pub mode: SampleMode,
    pub temperature: f64,
    pub budget: usize,
}

impl ModelGenerator<'_> {
    pub fn options(&self, seed: u64) -> DecodeOptions {
        DecodeOptions {
            mode: match self.mode {
                SampleMode::Greedy => DecodeMode::Greedy,
                SampleMode::Sample => DecodeMode::Sample {
                    seed,
                    temperature: self.temperature,
                },
            },
            budget: self.budget,
            ..DecodeOptions::default()
        }
    }
}

impl Generator for ModelGenerator<'_> {
    type State = CompatCache;

    fn generate(
        &self,
        cache: &mut CompatCache,
        input: &MolecularGraph,
        seed: u64,
    ) -> Result<MolecularGraph, String> {
        generate(self.model, input, &self.options(seed), cache)
            .map(|g| g.graph)
            .map_err(|e| e.to_string())
    }
}

/// Decodes K samples (seeds 0..K) for every input and scores them.
pub fn sample_records<G: Generator>(
    generator: &G,
    inputs: &[MolecularGraph],
    oracle: &dyn PropertyOracle,
    config: &EvalConfig,
) -> Vec<InputRecord> {
    let mut states: Vec<G::State> = (0..config.workers).map(|_| G::State::default()).collect();
    parallel_map(inputs, &mut states, |x, state| {
        let samples = (0..config.k as u64)
            .map(|seed| match generator.generate(state, x, seed) {
                Ok(y) => Sample {
                    smiles: Some(canonical_smiles(&y)),
                    sim: Some(similarity(x, &y)),
                    property: oracle.evaluate(&y).ok(),
                },
                Err(_) => Sample {
                    smiles: None,
                    sim: None,
                    property: None,
                },
            })
            .collect();
        InputRecord {
            input_smiles: canonical_smiles(x),
            samples,
        }
    })
}

/// End-to-end evaluation. Decoding failures count as non-successes and
/// never abort the run.
pub fn evaluate<G: Generator>(
    generator: &G,
    inputs: &[MolecularGraph],
    vocab: &Vocabulary,
    oracle: &dyn PropertyOracle,
    config: &EvalConfig,
) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let records = sample_records(generator, inputs, oracle, config);
    let infrequent = infrequent_subset(inputs, vocab, config.infrequent_threshold)?;
    Ok(report_from_records(oracle.name(), &records, &infrequent, config))
}

/// Table-style text summary of a report.
pub fn format_summary(report: &EvalReport) -> String {
    let row = |name: &str, m: &Metrics| {
        format!(
            "{name:<28} {:>6} {:>10.4} {:>10.4} {:>8.2}% {:>8.2}%\n",
            m.inputs,
            m.similarity,
            m.property,
            100.0 * m.sr1,
            100.0 * m.sr2
        )
    };
    let mut s = format!(
        "{:<28} {:>6} {:>10} {:>10} {:>9} {:>9}\n",
        "subset", "n", "similarity", report.property, "SR1", "SR2"
    );
    s += &row("test (best of K)", &report.best_of_k);
    s += &row("test (mean of K)", &report.mean_of_k);
    s += &row("infrequent (best of K)", &report.infrequent_best_of_k);
    s += &row("infrequent (mean of K)", &report.infrequent_mean_of_k);
    s
}
