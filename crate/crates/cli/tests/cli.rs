use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "embed_dim=4",
    "--set", "hidden_dim=4",
    "--set", "heads=2",
    "--set", "max_len=30",
    "--set", "batch_size=8",
    "--set", "max_epochs=2",
    "--set", "lambda1=10",
    "--set", "seed=3",
];

fn advkt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advkt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Simulates a small corpus and splits it into train/val/test under `dir/split`.
fn prepare(dir: &Path) {
    ok(&advkt(
        dir,
        &["simulate", "--students", "40", "--questions", "15", "--concepts", "3", "--seed", "2", "--min-len", "10", "--max-len", "30", "--out", "synth"],
    ));
    ok(&advkt(
        dir,
        &["ingest", "--data", "synth/corpus.csv", "--out", "split", "--test-fraction", "0.2", "--val-fraction", "0.2", "--seed", "1"],
    ));
}

fn train(dir: &Path, out: &str) -> Output {
    let mut args = vec!["train", "--data", "split/train.csv", "--val", "split/val.csv", "--out", out];
    args.extend_from_slice(TINY);
    advkt(dir, &args)
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let truth = fs::read_to_string(dir.join("synth/truth.csv")).unwrap();
    assert!(truth.starts_with("student_id,order,p_true\n"));
    let corpus_rows = fs::read_to_string(dir.join("synth/corpus.csv")).unwrap().lines().count();
    assert_eq!(truth.lines().count(), corpus_rows);
    for f in ["train.csv", "val.csv", "test.csv"] {
        assert!(dir.join("split").join(f).is_file(), "{f} missing");
    }

    ok(&train(dir, "run1"));
    for f in ["config.resolved", "metrics.csv", "report.txt", "checkpoints/best.ckpt", "checkpoints/last.ckpt"] {
        assert!(dir.join("run1").join(f).is_file(), "{f} missing");
    }
    let resolved = fs::read_to_string(dir.join("run1/config.resolved")).unwrap();
    assert!(resolved.contains("embed_dim = 4") || resolved.contains("embed_dim=4"), "{resolved}");
    assert!(resolved.contains("lambda1"));
    assert_eq!(fs::read_to_string(dir.join("run1/metrics.csv")).unwrap().lines().count(), 3);

    // the frozen config reproduces the run on its own
    let replay = advkt(
        dir,
        &["train", "--config", "run1/config.resolved", "--data", "split/train.csv", "--val", "split/val.csv", "--out", "run2"],
    );
    ok(&replay);
    assert_eq!(fs::read(dir.join("run1/metrics.csv")).unwrap(), fs::read(dir.join("run2/metrics.csv")).unwrap());

    let eval = advkt(
        dir,
        &["eval", "--mode", "multi_step", "--checkpoint", "run1/best", "--data", "split/test.csv", "--per-student", "--out", "eval"],
    );
    ok(&eval);
    let stdout = String::from_utf8(eval.stdout).unwrap();
    assert!(stdout.contains("mode,acc,auc,n_predictions"), "{stdout}");
    assert!(stdout.contains("lo,hi,count,auc"), "{stdout}");
    assert!(dir.join("eval/report.csv").is_file() && dir.join("eval/buckets.csv").is_file());
    ok(&advkt(dir, &["eval", "--mode", "single_step", "--checkpoint", "run1/checkpoints/last.ckpt", "--data", "split/test.csv"]));

    ok(&advkt(dir, &["augment", "--data", "split/train.csv", "--out", "aug.csv", "--checkpoint", "run1"]));
    let aug = fs::read_to_string(dir.join("aug.csv")).unwrap();
    assert!(aug.lines().next().unwrap().ends_with(",provenance"));
    for tag in ["R", "T", "V", "E"] {
        assert!(aug.lines().any(|l| l.ends_with(&format!(",{tag}"))), "no {tag} rows");
    }

    ok(&advkt(dir, &["export-embeddings", "--checkpoint", "run1/best", "--data", "split/test.csv", "--out", "emb.csv"]));
    let emb = fs::read_to_string(dir.join("emb.csv")).unwrap();
    let header = emb.lines().next().unwrap();
    assert!(header.starts_with("provenance,d0,"));
    let width = header.split(',').count();
    assert_eq!(width, 1 + 2 * 4);
    assert!(emb.lines().skip(1).all(|l| l.split(',').count() == width));
}

#[test]
fn metrics_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    ok(&train(dir, "a"));
    ok(&train(dir, "b"));
    let mut args = vec!["--threads", "1", "train", "--data", "split/train.csv", "--val", "split/val.csv", "--out", "c"];
    args.extend_from_slice(TINY);
    ok(&advkt(dir, &args));
    let a = fs::read(dir.join("a/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(dir.join("b/metrics.csv")).unwrap());
    assert_eq!(a, fs::read(dir.join("c/metrics.csv")).unwrap());
    assert_eq!(fs::read(dir.join("a/checkpoints/best.ckpt")).unwrap(), fs::read(dir.join("b/checkpoints/best.ckpt")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = advkt(dir, &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(advkt(dir, &[]).status.code(), Some(1));
    assert_eq!(advkt(dir, &["--help"]).status.code(), Some(0));

    fs::write(dir.join("bad.csv"), "student_id,order,question_id,concept_ids,response\n1,1,3,1,7\n").unwrap();
    assert_eq!(advkt(dir, &["ingest", "--data", "bad.csv", "--out", "x"]).status.code(), Some(1));
    fs::write(dir.join("c.txt"), "no_such_key = 3\n").unwrap();
    fs::write(dir.join("ok.csv"), "student_id,order,question_id,concept_ids,response\n").unwrap();
    let out = advkt(dir, &["train", "--config", "c.txt", "--data", "ok.csv", "--val", "ok.csv", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        advkt(dir, &["train", "--set", "lr_g=-1", "--data", "ok.csv", "--val", "ok.csv", "--out", "r"]).status.code(),
        Some(1)
    );

    assert_eq!(advkt(dir, &["ingest", "--data", "missing.csv", "--out", "x"]).status.code(), Some(2));
    fs::write(dir.join("junk.ckpt"), "not a checkpoint").unwrap();
    assert_eq!(
        advkt(dir, &["eval", "--checkpoint", "junk.ckpt", "--data", "ok.csv"]).status.code(),
        Some(2)
    );
}
