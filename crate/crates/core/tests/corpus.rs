//! Parser and decomposition properties over the fixture corpus.

mod common;

use copyrefine::decoder::teacher_assembly;
use copyrefine::molgraph::{canonical_smiles, graph_isomorphic, parse_smiles, write_smiles};
use copyrefine::scaffold::{build_vocabulary, decompose, dfs_order};

#[test]
fn fixture_has_one_hundred_molecules() {
    assert_eq!(common::corpus_smiles().len(), 100);
}

#[test]
fn smiles_round_trip_is_isomorphic() {
    for g in common::corpus() {
        let written = write_smiles(&g);
        let back = parse_smiles(&written).unwrap();
        assert!(graph_isomorphic(&g, &back).unwrap(), "{written}");
        assert_eq!(canonical_smiles(&back), canonical_smiles(&g), "{written}");
    }
}

#[test]
fn ring_count_equals_cycle_rank() {
    for (s, g) in common::corpus_smiles().iter().zip(common::corpus()) {
        assert_eq!(g.rings().len(), g.cycle_rank(), "{s}");
    }
}

#[test]
fn trees_traverse_every_edge_twice() {
    for (s, g) in common::corpus_smiles().iter().zip(common::corpus()) {
        let tree = decompose(&g).unwrap();
        assert!(tree.is_tree(), "{s}");
        let order = dfs_order(&tree, tree.default_root());
        assert_eq!(order.steps.len(), 2 * tree.edges().len(), "{s}");
    }
}

#[test]
fn trees_reassemble_to_their_molecule() {
    let corpus = common::corpus();
    let vocab = build_vocabulary(&corpus).unwrap();
    for (s, g) in common::corpus_smiles().iter().zip(&corpus) {
        let tree = vocab.tree_of(g).unwrap();
        let order = dfs_order(&tree, tree.default_root());
        let rebuilt = teacher_assembly(g, &tree, &order, &vocab)
            .unwrap_or_else(|e| panic!("{s}: {e}"))
            .result
            .graph;
        assert!(graph_isomorphic(g, &rebuilt).unwrap(), "{s}");
    }
}
