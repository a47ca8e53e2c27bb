//! Exit codes, settings precedence and outputs of the command-line tool.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_copyrefine"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_corpus(dir: &Path, n: usize) {
    let smiles = common::corpus_smiles();
    std::fs::write(dir.join("corpus.smi"), smiles[..n].join("\n") + "\n").unwrap();
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &[]).status.code(), Some(2));
    assert_eq!(run(d, &["vocab", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));

    let missing = run(d, &["vocab", "--input", "nope.smi", "--out", "v.tsv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("nope.smi"));

    let no_out = run(d, &["vocab", "--input", "nope.smi"]);
    assert_eq!(no_out.status.code(), Some(2));
}

#[test]
fn unparseable_smiles_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.smi"), "# header\nCCO\nC1CC\nc1ccccc1\nC(C\n").unwrap();
    let o = run(d, &["vocab", "--input", "bad.smi", "--out", "v.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("line 5"), "{err}");
    assert!(!err.contains("line 2"));
    assert!(!d.join("v.tsv").exists());
}

#[test]
fn config_file_is_overridden_by_flags_and_resolved_config_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 30);
    std::fs::write(
        d.join("pairs.cfg"),
        "input = corpus.smi\nout = pairs.tsv\neta1 = 0.9\neta2 = 0.1\n",
    )
    .unwrap();
    let o = run(d, &["pairs", "--config", "pairs.cfg", "--eta1", "0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved = std::fs::read_to_string(d.join("pairs.tsv.config")).unwrap();
    assert!(resolved.contains("eta1=0.3\n"), "{resolved}");
    assert!(resolved.contains("eta2=0.1\n"));
    assert!(resolved.contains("property=logp\n"));

    // the resolved file alone reproduces the output
    let first = std::fs::read(d.join("pairs.tsv")).unwrap();
    std::fs::rename(d.join("pairs.tsv.config"), d.join("again.cfg")).unwrap();
    let again = run(d, &["pairs", "--config", "again.cfg"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("pairs.tsv")).unwrap(), first);

    std::fs::write(d.join("bad.cfg"), "epochz = 3\n").unwrap();
    assert_eq!(run(d, &["pairs", "--config", "bad.cfg"]).status.code(), Some(2));
}

#[test]
fn vocab_prints_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 20);
    std::fs::write(d.join("vocab.cfg"), "infrequent-threshold = 3\n").unwrap();
    let o = run(d, &["vocab", "--config", "vocab.cfg", "--input", "corpus.smi", "--out", "v.tsv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("molecules: 20"), "{out}");
    assert!(out.contains("vocabulary size:"));
    assert!(out.contains("infrequent (< 3):"));
}

#[test]
fn corrupt_checkpoint_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 5);
    std::fs::write(d.join("model.ckpt"), b"not a checkpoint").unwrap();
    let o = run(d, &["generate", "--model", "model.ckpt", "--input", "corpus.smi", "--out", "g.tsv"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 30);
    assert_eq!(run(d, &["vocab", "--input", "corpus.smi", "--out", "v.tsv"]).status.code(), Some(0));
    let p = run(d, &["pairs", "--input", "corpus.smi", "--out", "p.tsv", "--eta1", "0.2", "--eta2", "0"]);
    assert_eq!(p.status.code(), Some(0));
    let o = run(
        d,
        &[
            "train", "--pairs", "p.tsv", "--vocab", "v.tsv", "--out", "run", "--hidden", "4",
            "--disc-hidden", "4", "--epochs", "3", "--lr", "1e308", "--lr-anneal", "1", "--clip-norm", "1e300",
            "--adversarial", "false",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn train_generate_evaluate_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 30);
    std::fs::write(d.join("test.smi"), common::corpus_smiles()[30..34].join("\n")).unwrap();
    assert_eq!(run(d, &["vocab", "--input", "corpus.smi", "--out", "v.tsv"]).status.code(), Some(0));
    assert_eq!(
        run(d, &["pairs", "--input", "corpus.smi", "--out", "p.tsv", "--eta1", "0.2", "--eta2", "0"]).status.code(),
        Some(0)
    );
    let t = run(
        d,
        &[
            "train", "--pairs", "p.tsv", "--vocab", "v.tsv", "--out", "run", "--hidden", "6",
            "--disc-hidden", "6", "--epochs", "2", "--batch-size", "8",
        ],
    );
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    for f in ["config.cfg", "train_log.jsonl", "timing.jsonl", "epoch_001.ckpt", "epoch_002.ckpt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(d.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["train"]["total"].as_f64().unwrap().is_finite());

    let g = run(d, &["generate", "--model", "run/epoch_002.ckpt", "--input", "test.smi", "--out", "g.tsv", "--k", "2"]);
    assert_eq!(g.status.code(), Some(0), "{}", stderr(&g));
    let rows = std::fs::read_to_string(d.join("g.tsv")).unwrap();
    assert!(rows.starts_with("input_smiles\toutput_smiles\tseed\tn_nodes\tterminated_by\n"));
    assert_eq!(rows.lines().count(), 1 + 4 * 2);

    let e = run(
        d,
        &["evaluate", "--model", "run/epoch_002.ckpt", "--test", "test.smi", "--out", "r.json", "--k", "2", "--sr1", "0.3,0.6"],
    );
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["property"], "qed");
    assert_eq!(report["headline"]["inputs"], 4);
    let resolved = std::fs::read_to_string(d.join("r.json.config")).unwrap();
    assert!(resolved.contains("sr1=0.3,0.6\n") && resolved.contains("sr2=0.4,0.8\n"), "{resolved}");
}
