use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "# tiny model
d_model = 8
n_heads = 2
d_ff = 16
filters_per_kernel = 4
n_layers = 1
emb_dim = 8
hidden = 8
epochs = 2
batch_size = 8
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proofkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn lines(dir: &Path, name: &str) -> usize {
    read(dir, name).lines().count()
}

/// Generates splits and trains a tiny checkpoint in a fresh directory.
fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    ok(d, &["gen-data", "--out", "d", "--pairs", "60", "--splits", "40,10,10", "--seed", "3"]);
    ok(d, &["train", "--data", "d.train", "--dev", "d.dev", "--config", "small.cfg", "--checkpoint", "m.ckpt", "--out", "log.jsonl"]);
    dir
}

#[test]
fn no_arguments_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-data", "preprocess", "train", "detect", "correct", "proofread", "evaluate", "sweep", "tm-build"] {
        let out = run(dir.path(), &[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["evaluate", "--hyp", "nope.txt", "--ref", "nope.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "dropout = 0.1\n").unwrap();
    let out = run(dir.path(), &["gen-data", "--out", "x", "--pairs", "5", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flag_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-data", "--out", "x", "--pairs", "lots"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["gen-data", "--out", "x", "--pairs", "5", "--error-rate", "2.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn identical_files_score_full_bleu() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.txt"), "the cat sat on the mat\nall good things come to an end\n").unwrap();
    let table = ok(d, &["evaluate", "--hyp", "a.txt", "--ref", "a.txt"]);
    let row: Vec<&str> = table.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "100.00");
    assert_eq!(table.lines().next().unwrap(), "BLEU\tBP\tP1\tP2\tP3\tP4\thyp_length\tref_length");
}

#[test]
fn gen_data_writes_aligned_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--out", "g", "--pairs", "25", "--seed", "1"]);
    for ext in ["src", "tgt", "ref", "ref.align", "labels.jsonl"] {
        assert_eq!(lines(d, &format!("g.{ext}")), 25, "{ext}");
    }
    let again = tempfile::tempdir().unwrap();
    ok(again.path(), &["gen-data", "--out", "g", "--pairs", "25", "--seed", "1"]);
    assert_eq!(read(d, "g.tgt"), read(again.path(), "g.tgt"));
    assert_eq!(read(d, "g.labels.jsonl"), read(again.path(), "g.labels.jsonl"));
}

#[test]
fn pipeline_preserves_lines_and_proofread_matches_detect_then_correct() {
    let dir = trained();
    let d = dir.path();
    assert_eq!(lines(d, "log.jsonl"), 2);
    let common = ["--src", "d.test.src", "--tgt", "d.test.tgt", "--checkpoint", "m.ckpt"];
    ok(d, &[&["detect"][..], &common, &["--out", "pred.jsonl"]].concat());
    ok(d, &[&["correct"][..], &common, &["--labels", "pred.jsonl", "--out", "c"]].concat());
    ok(d, &[&["proofread"][..], &common, &["--out", "p"]].concat());
    assert_eq!(lines(d, "pred.jsonl"), 10);
    assert_eq!(lines(d, "c.tgt"), 10);
    assert_eq!(read(d, "c.tgt"), read(d, "p.tgt"));
    assert_eq!(read(d, "c.edits.jsonl"), read(d, "p.edits.jsonl"));
    assert_eq!(read(d, "pred.jsonl"), read(d, "p.labels.jsonl"));
    ok(d, &[&["proofread"][..], &common, &["--out", "q"]].concat());
    for ext in ["tgt", "edits.jsonl", "labels.jsonl"] {
        assert_eq!(read(d, &format!("p.{ext}")), read(d, &format!("q.{ext}")));
    }
    let summary: serde_json::Value = serde_json::from_str(&read(d, "p.summary.json")).unwrap();
    assert_eq!(summary["sentences"], 10);
    assert_eq!(summary["tags"].as_object().unwrap().len(), 4);

    let report = ok(d, &["evaluate", "--pred", "pred.jsonl", "--gold", "d.test.labels.jsonl"]);
    assert!(report.starts_with("run\tPrecision\tRecall\tF1-Score\tAccuracy\tRMSE\tMSE\tMAE\twall_clock_seconds\n"));
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let a = trained();
    let b = trained();
    assert!(std::fs::read(a.path().join("m.ckpt")).unwrap() == std::fs::read(b.path().join("m.ckpt")).unwrap());
    let strip = |s: String| -> Vec<serde_json::Value> {
        s.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["seconds"] = serde_json::Value::Null;
                v
            })
            .collect()
    };
    assert_eq!(strip(read(a.path(), "log.jsonl")), strip(read(b.path(), "log.jsonl")));
}

#[test]
fn sweep_report_rows() {
    let dir = trained();
    let d = dir.path();
    let report = ok(
        d,
        &["sweep", "--data", "d.train", "--dev", "d.dev", "--config", "small.cfg", "--epochs", "1", "--axis", "batch-size", "--values", "16,32", "--mask-timing"],
    );
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows[0], "batch_size\tPrecision\tRecall\tF1-Score\tAccuracy\tRMSE\tMSE\tMAE\twall_clock_seconds");
    assert!(rows[1].starts_with("16\t") && rows[1].ends_with("\t-"));
    assert!(rows[2].starts_with("32\t"));
}

#[test]
fn preprocess_and_memory_build() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("raw.en"), "The cat sat.\nThe dog ran!\n\nA bird flew away.\n").unwrap();
    std::fs::write(d.join("raw.de"), "Die Katze sass.\nDer Hund lief!\n\nEin Vogel flog weg.\n").unwrap();
    let summary = ok(d, &["preprocess", "--src", "raw.en", "--tgt", "raw.de", "--out", "pp"]);
    let s: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(s.is_object());
    assert_eq!(lines(d, "pp.src"), lines(d, "pp.tgt"));
    assert_eq!(lines(d, "pp.src"), lines(d, "pp.align"));
    assert!(read(d, "pp.tgt").contains("Katze sass ."));
    ok(d, &["tm-build", "--src", "raw.en", "--tgt", "raw.de", "--out", "tm"]);
    assert_eq!(lines(d, "tm.src"), lines(d, "tm.tgt"));
}

#[test]
fn help_describes_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-data", "preprocess", "train", "detect", "correct", "proofread", "evaluate", "sweep", "tm-build"] {
        let help = ok(dir.path(), &[cmd, "-h"]);
        let flags: Vec<&str> = help.lines().filter(|l| l.trim_start().starts_with('-')).collect();
        assert!(!flags.is_empty(), "{cmd}");
        for l in flags {
            let described = l.trim().split_once("  ").map(|x| x.1).is_some_and(|d| !d.trim().is_empty());
            assert!(described, "{cmd}: {l}");
        }
    }
}

#[test]
fn flags_override_config_file_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    ok(d, &["gen-data", "--out", "d", "--pairs", "30", "--splits", "20,10,0", "--seed", "3"]);
    let base = ["train", "--data", "d.train", "--dev", "d.dev", "--config", "small.cfg"];
    ok(d, &[&base[..], &["--checkpoint", "a.ckpt", "--out", "a.jsonl"]].concat());
    ok(d, &[&base[..], &["--epochs", "1", "--checkpoint", "b.ckpt", "--out", "b.jsonl"]].concat());
    assert_eq!(lines(d, "a.jsonl"), 2);
    assert_eq!(lines(d, "b.jsonl"), 1);
    let (a, b) = (std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
    assert_eq!(a.len(), b.len());
}

#[test]
fn divergence_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    ok(d, &["gen-data", "--out", "d", "--pairs", "30", "--splits", "20,10,0", "--seed", "3"]);
    let out = run(
        d,
        &["train", "--data", "d.train", "--dev", "d.dev", "--config", "small.cfg", "--lr", "1e300", "--checkpoint", "m.ckpt"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
