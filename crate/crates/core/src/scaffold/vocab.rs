use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::molgraph::{parse_smiles, MolecularGraph};

use super::{decompose, ScaffoldError, ScaffoldTree, SubstructureKind};

/// Substructures seen fewer times than this in training are "infrequent".
pub const DEFAULT_INFREQUENT_THRESHOLD: u64 = 2000;

#[derive(Debug, Clone)]
pub struct Substructure {
    pub key: String,
    pub kind: SubstructureKind,
    /// The fragment parsed back from its key.
    pub fragment: MolecularGraph,
}

impl Substructure {
    pub fn from_key(key: &str) -> Result<Self, ScaffoldError> {
        let fragment = parse_smiles(key)?;
        let kind = if fragment.cycle_rank() > 0 {
            SubstructureKind::Ring
        } else if fragment.atom_count() == 1 {
            SubstructureKind::Atom
        } else {
            SubstructureKind::Bond
        };
        Ok(Substructure {
            key: key.to_string(),
            kind,
            fragment,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<Substructure>,
    index: HashMap<String, usize>,
    frequency: Vec<u64>,
}

impl Vocabulary {
    /// Entries are kept in the given order; ids are positions.
    pub fn from_counts(counts: Vec<(String, u64)>) -> Result<Self, ScaffoldError> {
        let mut entries = Vec::with_capacity(counts.len());
        let mut index = HashMap::with_capacity(counts.len());
        let mut frequency = Vec::with_capacity(counts.len());
        for (key, freq) in counts {
            if index.contains_key(&key) {
                return Err(ScaffoldError::Decomposition(format!(
                    "duplicate vocabulary key '{key}'"
                )));
            }
            index.insert(key.clone(), entries.len());
            entries.push(Substructure::from_key(&key)?);
            frequency.push(freq);
        }
        Ok(Vocabulary {
            entries,
            index,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Substructure] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> Result<&Substructure, ScaffoldError> {
        self.entries.get(id).ok_or(ScaffoldError::Index {
            id,
            len: self.entries.len(),
        })
    }

    pub fn id_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn frequency(&self, id: usize) -> Result<u64, ScaffoldError> {
        self.frequency.get(id).copied().ok_or(ScaffoldError::Index {
            id,
            len: self.entries.len(),
        })
    }

    /// Fills in vocabulary ids; keys outside the vocabulary stay `None`.
    pub fn annotate(&self, tree: &ScaffoldTree) -> ScaffoldTree {
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| {
                let mut n = n.clone();
                n.id = self.id_of(&n.key);
                n
            })
            .collect();
        ScaffoldTree::new(nodes, tree.edges().to_vec())
    }

    /// Decomposes and annotates in one step.
    pub fn tree_of(&self, graph: &MolecularGraph) -> Result<ScaffoldTree, ScaffoldError> {
        Ok(self.annotate(&decompose(graph)?))
    }

    /// Writes `id<TAB>key<TAB>frequency` lines.
    pub fn write_tsv(&self, mut out: impl Write) -> std::io::Result<()> {
        for (id, (entry, freq)) in self.entries.iter().zip(&self.frequency).enumerate() {
            writeln!(out, "{id}\t{}\t{freq}", entry.key)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ScaffoldError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(input: impl BufRead) -> Result<Self, ScaffoldError> {
        let mut counts = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| ScaffoldError::VocabFormat {
                line: lineno,
                msg: msg.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
            if id != counts.len() {
                return Err(bad("ids must be dense and in order"));
            }
            let freq: u64 = fields[2].parse().map_err(|_| bad("bad frequency"))?;
            counts.push((fields[1].to_string(), freq));
        }
        Vocabulary::from_counts(counts)
    }

    pub fn load(path: &Path) -> Result<Self, ScaffoldError> {
        let file = std::fs::File::open(path)?;
        Vocabulary::read_tsv(std::io::BufReader::new(file))
    }
}

/// Builds the vocabulary of all distinct substructure keys over a corpus,
/// ordered by key. Frequencies count node occurrences.
pub fn build_vocabulary(corpus: &[MolecularGraph]) -> Result<Vocabulary, ScaffoldError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for graph in corpus {
        for node in decompose(graph)?.nodes() {
            *counts.entry(node.key.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyClass {
    Frequent,
    Infrequent,
}

pub fn classify_frequency(
    vocab: &Vocabulary,
    id: usize,
    threshold: u64,
) -> Result<FrequencyClass, ScaffoldError> {
    let f = vocab.frequency(id)?;
    Ok(if f < threshold {
        FrequencyClass::Infrequent
    } else {
        FrequencyClass::Frequent
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graphs(smiles: &[&str]) -> Vec<MolecularGraph> {
        smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
    }

    #[test]
    fn cyclohexane_vocab() {
        let v = build_vocabulary(&graphs(&["C1CCCCC1"])).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.get(0).unwrap().kind, SubstructureKind::Ring);
    }

    #[test]
    fn ethanol_propanol_vocab() {
        let v = build_vocabulary(&graphs(&["CCO", "CCCO"])).unwrap();
        let keys: Vec<&str> = v.entries().iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, ["CC", "CO"]);
        assert_eq!(v.frequency(0).unwrap(), 3);
        assert_eq!(v.frequency(1).unwrap(), 2);
    }

    #[test]
    fn frequency_threshold() {
        let v = Vocabulary::from_counts(vec![
            ("CC".into(), 1999),
            ("CO".into(), 2000),
            ("CN".into(), 0),
        ])
        .unwrap();
        let t = DEFAULT_INFREQUENT_THRESHOLD;
        assert_eq!(classify_frequency(&v, 0, t).unwrap(), FrequencyClass::Infrequent);
        assert_eq!(classify_frequency(&v, 1, t).unwrap(), FrequencyClass::Frequent);
        assert_eq!(classify_frequency(&v, 2, t).unwrap(), FrequencyClass::Infrequent);
        assert!(matches!(
            classify_frequency(&v, 3, t),
            Err(ScaffoldError::Index { id: 3, len: 3 })
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocabulary(&graphs(&["CCO", "c1ccccc1C", "CC(C)C"])).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), v.len());
        for id in 0..v.len() {
            assert_eq!(back.get(id).unwrap().key, v.get(id).unwrap().key);
            assert_eq!(back.frequency(id).unwrap(), v.frequency(id).unwrap());
        }
        assert!(Vocabulary::read_tsv("0\tCC\n".as_bytes()).is_err());
        assert!(Vocabulary::read_tsv("1\tCC\t3\n".as_bytes()).is_err());
    }
}
