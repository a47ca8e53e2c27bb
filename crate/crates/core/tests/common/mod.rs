//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use copyrefine::chemprop::{atom_environments, PropertyOracle};
use copyrefine::encoder::MpnEncoder;
use copyrefine::molgraph::{canonical_smiles, parse_smiles, MolecularGraph};
use copyrefine::tensor::{Linear, Mlp, ParamStore};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn corpus_smiles() -> Vec<String> {
    std::fs::read_to_string(data_path("corpus100.smi"))
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn corpus() -> Vec<MolecularGraph> {
    corpus_smiles()
        .iter()
        .map(|s| parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}")))
        .collect()
}

/// Tanimoto by linear scans over deduplicated lists of folded environment
/// hashes.
pub fn tanimoto_oracle(a: &MolecularGraph, b: &MolecularGraph, radius: usize, nbits: usize) -> f64 {
    let bits = |g: &MolecularGraph| -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for h in atom_environments(g, radius).into_iter().flatten() {
            let bit = h % nbits as u64;
            if !out.contains(&bit) {
                out.push(bit);
            }
        }
        out
    };
    let (x, y) = (bits(a), bits(b));
    let both = x.iter().filter(|v| y.contains(v)).count();
    let either = x.len() + y.iter().filter(|v| !x.contains(v)).count();
    if either == 0 {
        return 1.0;
    }
    both as f64 / either as f64
}

fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.w).data();
    let b = store.get(l.b).data();
    (0..l.output)
        .map(|r| b[r] + (0..l.input).map(|c| w[r * l.input + c] * x[c]).sum::<f64>())
        .collect()
}

/// Tanh-hidden MLP evaluated with plain loops; `out_tanh` applies tanh to
/// the output as the encoder networks do.
fn mlp(store: &ParamStore, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(store, &m.hidden, x).iter().map(|v| v.tanh()).collect();
    linear(store, &m.out, &h).iter().map(|v| v.tanh()).collect()
}

/// Graph MPN embeddings from a message table keyed by directed atom pairs,
/// built straight from the molecule's adjacency.
pub fn mpn_oracle(
    store: &ParamStore,
    enc: &MpnEncoder,
    graph: &MolecularGraph,
    depth: usize,
) -> Vec<Vec<f64>> {
    use copyrefine::encoder::{atom_features, bond_features};
    let d = enc.hidden;
    let n = graph.atom_count();
    let bond_index = |u: usize, v: usize| {
        graph
            .bonds()
            .iter()
            .position(|b| (b.a == u && b.b == v) || (b.a == v && b.b == u))
            .unwrap()
    };
    let neighbors = |u: usize| -> Vec<usize> { graph.neighbors(u).iter().map(|&(v, _)| v).collect() };
    let mut table: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for u in 0..n {
        for v in neighbors(u) {
            table.insert((u, v), vec![0.0; d]);
        }
    }
    for _ in 0..depth {
        let mut next = HashMap::new();
        for &(u, v) in table.keys() {
            let mut agg = vec![0.0; d];
            for w in neighbors(u) {
                if w != v {
                    for (a, m) in agg.iter_mut().zip(&table[&(w, u)]) {
                        *a += m;
                    }
                }
            }
            let mut x = atom_features(graph, u);
            x.extend(bond_features(graph, bond_index(u, v)));
            x.extend(agg);
            next.insert((u, v), mlp(store, &enc.g1, &x));
        }
        table = next;
    }
    (0..n)
        .map(|u| {
            let mut agg = vec![0.0; d];
            for v in neighbors(u) {
                for (a, m) in agg.iter_mut().zip(&table[&(v, u)]) {
                    *a += m;
                }
            }
            let mut x = atom_features(graph, u);
            x.extend(agg);
            mlp(store, &enc.g2, &x)
        })
        .collect()
}

/// Every ordered pair of molecules with different canonical SMILES, checked
/// directly against both filters.
pub fn pairs_oracle(
    corpus: &[MolecularGraph],
    oracle: &dyn PropertyOracle,
    eta1: f64,
    eta2: f64,
) -> Vec<(usize, usize)> {
    let props: Vec<f64> = corpus.iter().map(|g| oracle.evaluate(g).unwrap()).collect();
    let keys: Vec<String> = corpus.iter().map(canonical_smiles).collect();
    let mut out = Vec::new();
    for i in 0..corpus.len() {
        for j in 0..corpus.len() {
            if keys[i] != keys[j]
                && tanimoto_oracle(&corpus[i], &corpus[j], 2, 2048) >= eta1
                && props[j] - props[i] >= eta2
            {
                out.push((i, j));
            }
        }
    }
    out
}
