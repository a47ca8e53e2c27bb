//! Fingerprints, Tanimoto similarity and property oracles: Crippen logP,
//! penalized logP, a QED-like drug-likeness score and a synthetic DRD2
//! stand-in.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use thiserror::Error;

use crate::molgraph::{BondOrder, Element, MolecularGraph};

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("atom {atom} ({element}) has no Crippen type")]
    UnclassifiedAtom { atom: usize, element: Element },
    #[error("unknown property '{0}'")]
    UnknownProperty(String),
}

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_NBITS: usize = 2048;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, words: &[u64]) -> u64 {
    let mut h = seed;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Folded Morgan fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub nbits: usize,
    pub radius: usize,
    pub bits: BTreeSet<usize>,
}

/// Atom environment identifiers after each round, round 0 first.
pub fn atom_environments(graph: &MolecularGraph, radius: usize) -> Vec<Vec<u64>> {
    let n = graph.atom_count();
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = graph.atom(i);
            fnv1a(
                FNV_OFFSET,
                &[
                    a.element.atomic_number() as u64,
                    graph.degree(i) as u64,
                    a.formal_charge as i64 as u64,
                    graph.hydrogen_count(i) as u64,
                    graph.atom_in_ring(i) as u64,
                ],
            )
        })
        .collect();
    let mut rounds = vec![ids.clone()];
    for _ in 0..radius {
        ids = (0..n)
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (graph.bonds()[b].order.index() as u64, ids[j]))
                    .collect();
                nb.sort_unstable();
                let mut words = vec![ids[i]];
                words.extend(nb.iter().flat_map(|&(o, id)| [o, id]));
                fnv1a(FNV_OFFSET, &words)
            })
            .collect();
        rounds.push(ids.clone());
    }
    rounds
}

pub fn morgan_fingerprint(graph: &MolecularGraph, radius: usize, nbits: usize) -> Fingerprint {
    let bits = atom_environments(graph, radius)
        .into_iter()
        .flatten()
        .map(|id| (id % nbits.max(1) as u64) as usize)
        .collect();
    Fingerprint {
        nbits,
        radius,
        bits,
    }
}

/// |A ∩ B| / |A ∪ B|, with 1.0 for two empty sets.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.nbits != b.nbits {
        return Err(ChemError::LengthMismatch(a.nbits, b.nbits));
    }
    let inter = a.bits.intersection(&b.bits).count();
    let union = a.bits.len() + b.bits.len() - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Tanimoto similarity of default fingerprints.
pub fn similarity(a: &MolecularGraph, b: &MolecularGraph) -> f64 {
    let fa = morgan_fingerprint(a, DEFAULT_RADIUS, DEFAULT_NBITS);
    let fb = morgan_fingerprint(b, DEFAULT_RADIUS, DEFAULT_NBITS);
    tanimoto(&fa, &fb).expect("equal lengths")
}

fn crippen_table() -> &'static HashMap<String, f64> {
    static TABLE: OnceLock<HashMap<String, f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../data/crippen.tsv")
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| {
                let mut f = l.split('\t');
                let t = f.next().expect("type column").to_string();
                let v = f.next().and_then(|v| v.parse().ok()).expect("logp column");
                (t, v)
            })
            .collect()
    })
}

/// logP contribution of a Crippen type from the shipped table.
pub fn crippen_contribution(atom_type: &str) -> Option<f64> {
    crippen_table().get(atom_type).copied()
}

fn is_organic_hetero(e: Element) -> bool {
    matches!(
        e,
        Element::N | Element::O | Element::P | Element::S | Element::F | Element::Cl | Element::Br | Element::I
    )
}

fn is_organic(e: Element) -> bool {
    e == Element::C || is_organic_hetero(e)
}

struct Env<'a> {
    g: &'a MolecularGraph,
}

impl Env<'_> {
    fn nbs(&self, i: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.g
            .neighbors(i)
            .iter()
            .map(move |&(j, b)| (j, self.g.bonds()[b].order))
    }

    fn el(&self, i: usize) -> Element {
        self.g.atom(i).element
    }

    fn arom(&self, i: usize) -> bool {
        self.g.atom(i).aromatic
    }

    fn has_double_to(&self, i: usize, pred: impl Fn(usize) -> bool) -> bool {
        self.nbs(i).any(|(j, o)| o == BondOrder::Double && pred(j))
    }
}

/// Crippen type of heavy atom `i`.
pub fn crippen_type(graph: &MolecularGraph, i: usize) -> Result<&'static str, ChemError> {
    let env = Env { g: graph };
    let atom = graph.atom(i);
    let h = graph.hydrogen_count(i);
    let charge = atom.formal_charge;
    let orders: Vec<BondOrder> = env.nbs(i).map(|(_, o)| o).collect();
    let singles_only = orders.iter().all(|&o| o == BondOrder::Single);
    let t = match atom.element {
        Element::C if atom.aromatic => {
            let exo: Vec<(usize, BondOrder)> = env
                .nbs(i)
                .filter(|&(_, o)| o != BondOrder::Aromatic)
                .collect();
            let ring_bonds = orders.iter().filter(|&&o| o == BondOrder::Aromatic).count();
            let single_to = |pred: &dyn Fn(usize) -> bool| {
                exo.iter().any(|&(j, o)| o == BondOrder::Single && pred(j))
            };
            if h == 0 && single_to(&|j| !env.arom(j) && !is_organic(env.el(j))) {
                "C13"
            } else if single_to(&|j| env.el(j) == Element::F) {
                "C14"
            } else if single_to(&|j| env.el(j) == Element::Cl) {
                "C15"
            } else if single_to(&|j| env.el(j) == Element::Br) {
                "C16"
            } else if single_to(&|j| env.el(j) == Element::I) {
                "C17"
            } else if h > 0 {
                "C18"
            } else if ring_bonds >= 3 {
                "C19"
            } else if single_to(&|j| env.arom(j)) {
                "C20"
            } else if single_to(&|j| env.el(j) == Element::C) {
                "C21"
            } else if single_to(&|j| env.el(j) == Element::N) {
                "C22"
            } else if single_to(&|j| env.el(j) == Element::O) {
                "C23"
            } else if single_to(&|j| env.el(j) == Element::S) {
                "C24"
            } else if exo.iter().any(|&(j, o)| {
                o == BondOrder::Double && matches!(env.el(j), Element::C | Element::N | Element::O)
            }) {
                "C25"
            } else {
                "CS"
            }
        }
        Element::C => {
            let aromatic_nb = env.nbs(i).any(|(j, _)| env.arom(j));
            if env.has_double_to(i, |j| env.el(j) != Element::C && !env.arom(j)) {
                "C5"
            } else if orders.contains(&BondOrder::Triple) {
                "C7"
            } else if env.has_double_to(i, |j| env.arom(j)) {
                "C26"
            } else if orders.contains(&BondOrder::Double) {
                if aromatic_nb {
                    "C26"
                } else {
                    "C6"
                }
            } else if singles_only && aromatic_nb {
                match h {
                    3 => {
                        if env.nbs(i).any(|(j, _)| env.el(j) == Element::C) {
                            "C8"
                        } else {
                            "C9"
                        }
                    }
                    2 => "C10",
                    1 => "C11",
                    _ => "C12",
                }
            } else if env.nbs(i).any(|(j, _)| !is_organic(env.el(j))) {
                "C27"
            } else if env.nbs(i).any(|(j, _)| is_organic_hetero(env.el(j))) {
                if h >= 2 {
                    "C3"
                } else {
                    "C4"
                }
            } else if h >= 2 {
                "C1"
            } else {
                "C2"
            }
        }
        Element::N if atom.aromatic => {
            if charge > 0 {
                "N12"
            } else {
                "N11"
            }
        }
        Element::N => {
            let heavy: Vec<(usize, BondOrder)> = env.nbs(i).collect();
            let any_arom = heavy.iter().any(|&(j, _)| env.arom(j));
            if charge < 0 {
                "N14"
            } else if charge > 0 {
                if orders.contains(&BondOrder::Triple) {
                    "N14"
                } else if h > 0 {
                    "N10"
                } else {
                    "N13"
                }
            } else if orders.contains(&BondOrder::Triple) {
                "N9"
            } else if orders.contains(&BondOrder::Double) {
                if h > 0 {
                    "N5"
                } else {
                    "N6"
                }
            } else {
                match (h, heavy.len()) {
                    (2, 1) if any_arom => "N3",
                    (2, 1) => "N1",
                    (1, 2) if any_arom => "N4",
                    (1, 2) => "N2",
                    (0, 3) if any_arom => "N8",
                    (0, 3) => "N7",
                    _ => "NS",
                }
            }
        }
        Element::O if atom.aromatic => "O1",
        Element::O => {
            let heavy: Vec<(usize, BondOrder)> = env.nbs(i).collect();
            if charge < 0 {
                match heavy.first().map(|&(j, _)| j) {
                    Some(j) if env.el(j) == Element::N => "O5",
                    Some(j) if env.el(j) == Element::S => "O6",
                    Some(j)
                        if env.el(j) == Element::C
                            && env.has_double_to(j, |k| env.el(k) == Element::O) =>
                    {
                        "O12"
                    }
                    _ => "O7",
                }
            } else if h > 0 && charge == 0 {
                "O2"
            } else if let Some(&(c, BondOrder::Double)) = heavy.first() {
                let ce = env.el(c);
                if matches!(ce, Element::N | Element::O) {
                    "O5"
                } else if ce == Element::C && env.arom(c) {
                    "O8"
                } else if ce == Element::C {
                    let others: Vec<usize> =
                        env.nbs(c).map(|(k, _)| k).filter(|&k| k != i).collect();
                    let hetero = others.iter().filter(|&&k| env.el(k) != Element::C).count();
                    if others.iter().any(|&k| env.arom(k)) {
                        "O10"
                    } else if others.len() == 2 && hetero == 2 {
                        "O11"
                    } else {
                        "O9"
                    }
                } else {
                    "OS"
                }
            } else if heavy.len() == 2 && charge == 0 {
                if heavy.iter().any(|&(j, _)| env.arom(j)) {
                    "O4"
                } else {
                    "O3"
                }
            } else {
                "OS"
            }
        }
        Element::F | Element::Cl | Element::Br | Element::I if charge < 0 => "Hal",
        Element::F => "F",
        Element::Cl => "Cl",
        Element::Br => "Br",
        Element::I => "I",
        Element::P => "P",
        Element::S if atom.aromatic => "S3",
        Element::S => {
            if charge != 0 {
                "S2"
            } else {
                "S1"
            }
        }
        Element::B => {
            return Err(ChemError::UnclassifiedAtom {
                atom: i,
                element: atom.element,
            })
        }
    };
    Ok(t)
}

/// Crippen type of the hydrogens attached to heavy atom `i`.
pub fn crippen_hydrogen_type(graph: &MolecularGraph, i: usize) -> &'static str {
    let env = Env { g: graph };
    match env.el(i) {
        Element::C => "H1",
        Element::N => "H3",
        Element::O => {
            let heavy: Vec<usize> = env.nbs(i).map(|(j, _)| j).collect();
            match heavy.first() {
                None => "H2",
                Some(&j) => match env.el(j) {
                    Element::C if env.arom(j) => "H2",
                    Element::C
                        if env.has_double_to(j, |k| {
                            matches!(env.el(k), Element::C | Element::N | Element::O | Element::S)
                        }) =>
                    {
                        "H4"
                    }
                    Element::C => "H2",
                    Element::N => "H3",
                    Element::O | Element::S => "H4",
                    _ => "H2",
                },
            }
        }
        _ => "H2",
    }
}

/// Sum of Wildman-Crippen contributions over heavy atoms and hydrogens.
pub fn crippen_logp(graph: &MolecularGraph) -> Result<f64, ChemError> {
    let mut total = 0.0;
    for i in 0..graph.atom_count() {
        let t = crippen_type(graph, i)?;
        total += crippen_contribution(t).expect("every assigned type is in the table");
        let h = graph.hydrogen_count(i);
        if h > 0 {
            let ht = crippen_hydrogen_type(graph, i);
            total += h as f64 * crippen_contribution(ht).expect("hydrogen type in table");
        }
    }
    Ok(total)
}

/// Largest ring size beyond six, or 0.
pub fn ring_penalty(graph: &MolecularGraph) -> f64 {
    graph
        .rings()
        .iter()
        .map(|r| r.len().saturating_sub(6))
        .max()
        .unwrap_or(0) as f64
}

/// Lightweight complexity penalty: 0.1 per ring sharing at least two atoms
/// with another ring, plus 0.05 per atom with four or more heavy neighbors.
pub fn sa_proxy(graph: &MolecularGraph) -> f64 {
    let rings = graph.rings();
    let fused = (0..rings.len())
        .filter(|&a| {
            (0..rings.len()).any(|b| {
                b != a && rings[a].iter().filter(|x| rings[b].contains(x)).count() >= 2
            })
        })
        .count();
    let crowded = (0..graph.atom_count()).filter(|&i| graph.degree(i) >= 4).count();
    0.1 * fused as f64 + 0.05 * crowded as f64
}

pub fn penalized_logp(graph: &MolecularGraph) -> Result<f64, ChemError> {
    Ok(crippen_logp(graph)? - ring_penalty(graph) - sa_proxy(graph))
}

/// Desirability curve of one descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Desirability {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub dmax: f64,
    pub weight: f64,
}

impl Desirability {
    pub fn eval(&self, x: f64) -> f64 {
        let rise = 1.0 / (1.0 + (-(x - self.c + self.d / 2.0) / self.e).exp());
        let fall = 1.0 - 1.0 / (1.0 + (-(x - self.c - self.d / 2.0) / self.f).exp());
        ((self.a + self.b * rise * fall) / self.dmax).clamp(0.0, 1.0)
    }
}

pub const QED_DESCRIPTORS: [&str; 6] = ["MW", "ALOGP", "HBA", "HBD", "ROTB", "AROM"];

/// Desirability parameters in [`QED_DESCRIPTORS`] order.
pub fn qed_parameters() -> &'static [Desirability; 6] {
    static PARAMS: OnceLock<[Desirability; 6]> = OnceLock::new();
    PARAMS.get_or_init(|| {
        let rows: HashMap<&str, Desirability> = include_str!("../data/qed_params.tsv")
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                let v: Vec<f64> = f[1..].iter().map(|x| x.parse().expect("number")).collect();
                (
                    f[0],
                    Desirability {
                        a: v[0],
                        b: v[1],
                        c: v[2],
                        d: v[3],
                        e: v[4],
                        f: v[5],
                        dmax: v[6],
                        weight: v[7],
                    },
                )
            })
            .collect();
        QED_DESCRIPTORS.map(|name| rows[name])
    })
}

/// Descriptor values in [`QED_DESCRIPTORS`] order.
pub fn qed_descriptors(graph: &MolecularGraph) -> Result<[f64; 6], ChemError> {
    let env = Env { g: graph };
    let n = graph.atom_count();
    let amide_n = |i: usize| {
        env.nbs(i).any(|(c, _)| {
            env.el(c) == Element::C
                && env.has_double_to(c, |k| matches!(env.el(k), Element::O | Element::S))
        })
    };
    let hba = (0..n)
        .filter(|&i| {
            let a = graph.atom(i);
            a.formal_charge <= 0
                && match a.element {
                    Element::O => true,
                    Element::N => graph.hydrogen_count(i) == 0 && !amide_n(i),
                    _ => false,
                }
        })
        .count();
    let hbd = (0..n)
        .filter(|&i| {
            matches!(graph.atom(i).element, Element::N | Element::O) && graph.hydrogen_count(i) > 0
        })
        .count();
    let in_triple = |i: usize| env.nbs(i).any(|(_, o)| o == BondOrder::Triple);
    let rotb = graph
        .bonds()
        .iter()
        .enumerate()
        .filter(|&(bi, b)| {
            b.order == BondOrder::Single
                && !graph.bond_in_ring(bi)
                && graph.degree(b.a) >= 2
                && graph.degree(b.b) >= 2
                && !in_triple(b.a)
                && !in_triple(b.b)
        })
        .count();
    let arom = graph
        .rings()
        .iter()
        .filter(|r| r.iter().all(|&i| graph.atom(i).aromatic))
        .count();
    Ok([
        graph.molecular_weight(),
        crippen_logp(graph)?,
        hba as f64,
        hbd as f64,
        rotb as f64,
        arom as f64,
    ])
}

/// Weighted geometric mean of desirabilities.
pub fn qed_from_desirabilities(d: &[f64; 6]) -> f64 {
    let params = qed_parameters();
    let wsum: f64 = params.iter().map(|p| p.weight).sum();
    let s: f64 = params
        .iter()
        .zip(d)
        .map(|(p, &x)| p.weight * x.max(f64::MIN_POSITIVE).ln())
        .sum();
    (s / wsum).exp().clamp(0.0, 1.0)
}

pub fn qed_like(graph: &MolecularGraph) -> Result<f64, ChemError> {
    let x = qed_descriptors(graph)?;
    let params = qed_parameters();
    let d: [f64; 6] = std::array::from_fn(|k| params[k].eval(x[k]));
    Ok(qed_from_desirabilities(&d))
}

/// Synthetic DRD2 substitute: 0.25 per aromatic ring plus 0.15 per basic
/// (non-amide, non-aromatic, neutral sp3) nitrogen, capped at 1.
pub fn drd2_stand_in(graph: &MolecularGraph) -> f64 {
    let env = Env { g: graph };
    let arom = graph
        .rings()
        .iter()
        .filter(|r| r.iter().all(|&i| graph.atom(i).aromatic))
        .count();
    let basic = (0..graph.atom_count())
        .filter(|&i| {
            let a = graph.atom(i);
            a.element == Element::N
                && !a.aromatic
                && a.formal_charge == 0
                && env.nbs(i).all(|(j, o)| {
                    o == BondOrder::Single
                        && !env.arom(j)
                        && !env.has_double_to(j, |k| env.el(k) != Element::C)
                })
        })
        .count();
    (0.25 * arom as f64 + 0.15 * basic as f64).min(1.0)
}

/// A molecular property used for pair generation and evaluation.
pub trait PropertyOracle: Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, graph: &MolecularGraph) -> Result<f64, ChemError>;
    /// Inclusive range of possible scores.
    fn range(&self) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    LogP,
    PenalizedLogP,
    Qed,
    Drd2StandIn,
}

impl Property {
    pub fn from_name(name: &str) -> Result<Self, ChemError> {
        match name {
            "logp" => Ok(Property::LogP),
            "plogp" => Ok(Property::PenalizedLogP),
            "qed" => Ok(Property::Qed),
            "drd2" => Ok(Property::Drd2StandIn),
            other => Err(ChemError::UnknownProperty(other.to_string())),
        }
    }
}

impl PropertyOracle for Property {
    fn name(&self) -> &str {
        match self {
            Property::LogP => "logp",
            Property::PenalizedLogP => "plogp",
            Property::Qed => "qed",
            Property::Drd2StandIn => "drd2",
        }
    }

    fn evaluate(&self, graph: &MolecularGraph) -> Result<f64, ChemError> {
        match self {
            Property::LogP => crippen_logp(graph),
            Property::PenalizedLogP => penalized_logp(graph),
            Property::Qed => qed_like(graph),
            Property::Drd2StandIn => Ok(drd2_stand_in(graph)),
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            Property::LogP | Property::PenalizedLogP => (f64::NEG_INFINITY, f64::INFINITY),
            Property::Qed | Property::Drd2StandIn => (0.0, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use proptest::prelude::*;

    fn mol(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    fn fp(bits: &[usize]) -> Fingerprint {
        Fingerprint {
            nbits: 16,
            radius: 0,
            bits: bits.iter().copied().collect(),
        }
    }

    #[test]
    fn tanimoto_examples() {
        assert_eq!(tanimoto(&fp(&[1, 2]), &fp(&[1, 2])).unwrap(), 1.0);
        assert_eq!(tanimoto(&fp(&[1, 2]), &fp(&[3])).unwrap(), 0.0);
        assert_eq!(tanimoto(&fp(&[1, 2, 3]), &fp(&[2, 3, 4])).unwrap(), 0.5);
        assert_eq!(tanimoto(&fp(&[]), &fp(&[])).unwrap(), 1.0);
        let mut other = fp(&[1]);
        other.nbits = 32;
        assert_eq!(
            tanimoto(&fp(&[1]), &other),
            Err(ChemError::LengthMismatch(16, 32))
        );
    }

    #[test]
    fn ethanol_radius_zero_classes() {
        let envs = atom_environments(&mol("CCO"), 0);
        let distinct: BTreeSet<u64> = envs[0].iter().copied().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn methane_and_ethane_share_no_bits() {
        let a = morgan_fingerprint(&mol("C"), 1, DEFAULT_NBITS);
        let b = morgan_fingerprint(&mol("CC"), 1, DEFAULT_NBITS);
        assert!(a.bits.is_disjoint(&b.bits));
    }

    #[test]
    fn fingerprint_ignores_atom_order() {
        let a = morgan_fingerprint(&mol("OCc1ccccc1N"), 2, 2048);
        let b = morgan_fingerprint(&mol("Nc1ccccc1CO"), 2, 2048);
        assert_eq!(a, b);
    }

    #[test]
    fn ethanol_logp_from_table() {
        // CH3 (C1) + CH2-O (C3) + OH (O2) + 5 H on C (H1) + H on alcohol O (H2)
        let expect = 0.1441 - 0.2035 - 0.2893 + 5.0 * 0.123 - 0.2677;
        let got = crippen_logp(&mol("CCO")).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - -0.0014).abs() < 1e-9);
        let types: Vec<_> = (0..3).map(|i| crippen_type(&mol("CCO"), i).unwrap()).collect();
        assert_eq!(types, ["C1", "C3", "O2"]);
    }

    #[test]
    fn benzene_and_acid_types() {
        let benzene = crippen_logp(&mol("c1ccccc1")).unwrap();
        assert!((benzene - 6.0 * (0.1581 + 0.123)).abs() < 1e-12);
        let acid = mol("CC(=O)O");
        let t: Vec<_> = (0..4).map(|i| crippen_type(&acid, i).unwrap()).collect();
        assert_eq!(t, ["C1", "C5", "O9", "O2"]);
        assert_eq!(crippen_hydrogen_type(&acid, 3), "H4");
    }

    #[test]
    fn boron_is_unclassified() {
        assert!(matches!(
            crippen_logp(&mol("CB(C)C")),
            Err(ChemError::UnclassifiedAtom { atom: 1, .. })
        ));
    }

    #[test]
    fn longer_chains_are_more_lipophilic() {
        assert!(crippen_logp(&mol("CCCCCCCC")).unwrap() > crippen_logp(&mol("C")).unwrap());
        assert_eq!(crippen_logp(&MolecularGraph::new(vec![], vec![]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn ring_penalty_examples() {
        assert_eq!(ring_penalty(&mol("CCCCO")), 0.0);
        assert_eq!(ring_penalty(&mol("C1CCCCCCC1")), 2.0);
        assert_eq!(ring_penalty(&mol("c1ccccc1")), 0.0);
    }

    #[test]
    fn sa_proxy_counts_fused_rings_and_crowded_atoms() {
        assert_eq!(sa_proxy(&mol("c1ccc2ccccc2c1")), 0.2);
        assert_eq!(sa_proxy(&mol("CC(C)(C)C")), 0.05);
        let p = penalized_logp(&mol("C1CCCCCCC1")).unwrap();
        assert!((p - (crippen_logp(&mol("C1CCCCCCC1")).unwrap() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn qed_of_ideal_desirabilities_is_one() {
        assert_eq!(qed_from_desirabilities(&[1.0; 6]), 1.0);
    }

    #[test]
    fn drug_like_beats_greasy_chain() {
        let aspirin = qed_like(&mol("CC(=O)Oc1ccccc1C(=O)O")).unwrap();
        let chain = qed_like(&mol(&"C".repeat(60))).unwrap();
        assert!(aspirin > chain, "{aspirin} vs {chain}");
        assert!((0.0..=1.0).contains(&aspirin) && (0.0..=1.0).contains(&chain));
    }

    #[test]
    fn every_table_type_is_reachable_by_name() {
        for t in ["C1", "C27", "H4", "N14", "O12", "Hal", "S3"] {
            assert!(crippen_contribution(t).is_some(), "{t}");
        }
    }

    proptest! {
        #[test]
        fn tanimoto_is_symmetric_and_bounded(
            a in proptest::collection::btree_set(0usize..64, 0..20),
            b in proptest::collection::btree_set(0usize..64, 0..20),
        ) {
            let fa = Fingerprint { nbits: 64, radius: 0, bits: a };
            let fb = Fingerprint { nbits: 64, radius: 0, bits: b };
            let ab = tanimoto(&fa, &fb).unwrap();
            prop_assert_eq!(ab, tanimoto(&fb, &fa).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(tanimoto(&fa, &fa).unwrap(), 1.0);
        }
    }
}
