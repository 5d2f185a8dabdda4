use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn deepindex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepindex"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DEEPINDEX_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn assert_ok(out: &Output) {
    assert_eq!(
        code(out),
        0,
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth + prepare into `root`; returns the experiment directory.
fn prepared(root: &Path, multipliers: &str) -> PathBuf {
    let data = root.join("data");
    let exp = root.join("exp");
    assert_ok(&deepindex(&[
        "synth", "--out-dir", s(&data), "--n-fulltext", "24", "--mult", "3", "--n-labels", "6",
        "--seed", "3",
    ]));
    assert_ok(&deepindex(&[
        "prepare",
        "--titles",
        s(&data.join("titles.tsv")),
        "--fulltexts",
        s(&data.join("fulltexts.tsv")),
        "--out-dir",
        s(&exp),
        "--folds",
        "3",
        "--multipliers",
        multipliers,
        "--seed",
        "3",
    ]));
    exp
}

#[test]
fn synth_writes_expected_line_counts() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&deepindex(&[
        "synth", "--out-dir", s(dir.path()), "--n-fulltext", "64", "--mult", "4",
    ]));
    let lines = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    assert_eq!(lines("titles.tsv"), 256);
    assert_eq!(lines("fulltexts.tsv"), 64);
}

#[test]
fn prepare_writes_folds_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let exp = prepared(dir.path(), "1,2,all,full");
    let folds = fs::read_to_string(exp.join("folds.tsv")).unwrap();
    assert_eq!(folds.lines().count(), 1 + 24);
    for k in 0..3 {
        for rung in ["1", "2", "all", "full"] {
            let m = fs::read_to_string(exp.join(format!("splits/fold{k}_{rung}.tsv"))).unwrap();
            assert!(m.starts_with("id\tsplit\n"));
            assert_eq!(m.lines().filter(|l| l.ends_with("\ttest")).count(), 8);
        }
    }
    assert!(fs::read_to_string(exp.join("experiment.conf"))
        .unwrap()
        .contains("folds = 3"));
}

#[test]
fn full_pipeline_produces_results_table_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let exp = prepared(dir.path(), "1,2,full");
    let select = ["--dir", s(&exp), "--model", "mlp,cnn", "--mult", "1,2,full", "--fold", "0,1"];
    let mut train = vec!["train"];
    train.extend(select);
    train.extend(["--max-epochs", "2", "--batch-size", "8"]);
    assert_ok(&deepindex(&train));
    let runs = exp.join("runs");
    for ext in ["ckpt", "json", "log"] {
        assert!(runs.join(format!("cnn_full_fold1.{ext}")).exists(), "{ext}");
    }
    let log = fs::read_to_string(runs.join("mlp_1_fold0.log")).unwrap();
    assert!(log.lines().any(|l| l.contains("\tval\t")));

    let mut evaluate = vec!["evaluate"];
    evaluate.extend(select);
    assert_ok(&deepindex(&evaluate));
    assert_ok(&deepindex(&evaluate));
    let results = fs::read_to_string(exp.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next(),
        Some("model,multiplier,fold,n_test,theta,sample_f1,precision,recall")
    );
    // appended twice, header once
    assert_eq!(lines.count(), 2 * 2 * 3 * 2);

    assert_ok(&deepindex(&["report", "--dir", s(&exp)]));
    let table = fs::read_to_string(exp.join("table.csv")).unwrap();
    assert!(table.starts_with("model,T1,T2,full\n"), "{table}");
    assert_eq!(table.lines().count(), 3);
    let svg = fs::read_to_string(exp.join("curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray"));
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("synth.conf");
    fs::write(&conf, "n_fulltext = 10\nmult = 2\n# comment\nn-labels = 4\n").unwrap();
    let out = dir.path().join("d");
    assert_ok(&deepindex(&[
        "synth", "--config", s(&conf), "--out-dir", s(&out), "--mult", "3",
    ]));
    let titles = fs::read_to_string(out.join("titles.tsv")).unwrap();
    // the command-line --mult wins over the file
    assert_eq!(titles.lines().count(), 30);
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |sub: &str, seed: Option<&str>| {
        let out = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_deepindex"));
        cmd.args(["synth", "--out-dir", s(&out), "--n-fulltext", "5", "--mult", "1"]);
        match seed {
            Some(v) => cmd.env("DEEPINDEX_SEED", v),
            None => cmd.env_remove("DEEPINDEX_SEED"),
        };
        assert!(cmd.status().unwrap().success());
        fs::read_to_string(out.join("titles.tsv")).unwrap()
    };
    assert_eq!(gen("a", Some("0")), gen("b", None));
    assert_ne!(gen("c", Some("17")), gen("d", None));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&deepindex(&["train", "--bogus"])), 2);
    assert_eq!(code(&deepindex(&[])), 2);
    // missing input file
    assert_eq!(
        code(&deepindex(&[
            "prepare", "--titles", "/nonexistent/t.tsv", "--fulltexts", "/nonexistent/f.tsv",
            "--out-dir", s(dir.path()),
        ])),
        2
    );
    let exp = prepared(dir.path(), "1");
    // unknown model name
    assert_eq!(
        code(&deepindex(&["train", "--dir", s(&exp), "--model", "svm", "--mult", "1"])),
        2
    );
    // rung that was not prepared
    assert_eq!(
        code(&deepindex(&["train", "--dir", s(&exp), "--model", "mlp", "--mult", "8"])),
        2
    );
    // no checkpoint yet
    assert_eq!(
        code(&deepindex(&["evaluate", "--dir", s(&exp), "--model", "mlp", "--mult", "1"])),
        2
    );
    // results.csv with a header only
    fs::write(
        exp.join("results.csv"),
        "model,multiplier,fold,n_test,theta,sample_f1,precision,recall\n",
    )
    .unwrap();
    assert_eq!(code(&deepindex(&["report", "--dir", s(&exp)])), 2);
}

#[test]
fn corrupt_checkpoint_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let exp = prepared(dir.path(), "1");
    let select = ["--dir", s(&exp), "--model", "base-mlp", "--mult", "1", "--fold", "0"];
    let mut train = vec!["train"];
    train.extend(select);
    train.extend(["--max-epochs", "1"]);
    assert_ok(&deepindex(&train));
    let ckpt = exp.join("runs/base-mlp_1_fold0.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let mut evaluate = vec!["evaluate"];
    evaluate.extend(select);
    let out = deepindex(&evaluate);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!exp.join("results.csv").exists());
}

#[test]
fn help_exits_cleanly() {
    let out = deepindex(&["--help"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["prepare", "train", "evaluate", "report", "synth"] {
        assert!(text.contains(sub));
    }
}
