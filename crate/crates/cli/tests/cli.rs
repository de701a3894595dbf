use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amm-align"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AMM_ALIGN_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL_SYNTH: &[&str] = &["--n", "300", "--d-latent", "4", "--d-x", "8", "--d-y", "6"];

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--seed", "7", "--out", name];
    args.extend_from_slice(SMALL_SYNTH);
    args.extend_from_slice(extra);
    let out = run(&args, dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL_TRAIN: &[&str] = &[
    "--batch-size",
    "32",
    "--proj-dim",
    "4",
    "--hidden",
    "4",
    "--epochs",
    "2",
    "--phase2-epochs",
    "1",
    "--n-samples",
    "3",
    "--sample-size",
    "20",
    "--seed",
    "7",
];

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a", &["--words-per-caption", "3"]);
    synth(tmp.path(), "b", &["--words-per-caption", "3"]);
    for file in ["x.emb", "y.emb", "manifest.json"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn qc_reports_one_word_count_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let input = [
        r#"{"id":"a","transcript":"a man is running","duration_s":5.0}"#,
        r#"{"id":"b","transcript":"a dog jumps over the fence","duration_s":4.0}"#,
        r#"{"id":"c","transcript":"two people talk in a kitchen","duration_s":6.5}"#,
    ]
    .join("\n");
    fs::write(tmp.path().join("caps.jsonl"), input).unwrap();
    let out = run(&["qc", "--input", "caps.jsonl", "--out", "qc"], tmp.path());
    assert_eq!(code(&out), 0);
    let verdicts = fs::read_to_string(tmp.path().join("qc/verdicts.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = verdicts.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    let word_count: Vec<_> = lines.iter().filter(|v| v["reason"] == "WordCount").collect();
    assert_eq!(word_count.len(), 1);
    assert_eq!(word_count[0]["id"], "a");
    assert_eq!(lines.iter().filter(|v| v["verdict"] == "pass").count(), 2);
}

#[test]
fn eval_reproduces_train_report() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &["--words-per-caption", "4"]);
    let mut args = vec!["train", "--data", "data", "--out", "run"];
    args.extend_from_slice(SMALL_TRAIN);
    let out = run(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("run/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 3);

    let out = run(
        &["eval", "--data", "data", "--checkpoint", "run/checkpoint.ckp", "--out", "ev", "--seed", "7"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let train_report = fs::read(tmp.path().join("run/report.json")).unwrap();
    assert_eq!(fs::read(tmp.path().join("ev/report.json")).unwrap(), train_report);
    assert_eq!(out.stdout, train_report);

    // Same seed and config again: byte-identical checkpoint and report.
    let mut again = vec!["train", "--data", "data", "--out", "run2"];
    again.extend_from_slice(SMALL_TRAIN);
    assert_eq!(code(&run(&again, tmp.path())), 0);
    for file in ["checkpoint.ckp", "report.json", "trace.jsonl"] {
        assert_eq!(
            fs::read(tmp.path().join("run").join(file)).unwrap(),
            fs::read(tmp.path().join("run2").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &[]);
    fs::write(tmp.path().join("cfg.json"), r#"{"epochs": 1, "phase2_epochs": 0, "batch_size": 1}"#).unwrap();
    // batch_size 1 from the file is invalid until the flag replaces it.
    let bad = run(&["train", "--data", "data", "--out", "r", "--config", "cfg.json"], tmp.path());
    assert_eq!(code(&bad), 1);
    let ok = run(
        &[
            "train",
            "--data",
            "data",
            "--out",
            "r",
            "--config",
            "cfg.json",
            "--batch-size",
            "32",
            "--proj-dim",
            "4",
            "--hidden",
            "4",
            "--sample-size",
            "20",
        ],
        tmp.path(),
    );
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let trace = fs::read_to_string(tmp.path().join("r/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
}

#[test]
fn ablation_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &["--words-per-caption", "3"]);
    let mut args = vec!["ablate", "--data", "data", "--out", "ab", "--axis", "sampling", "--values", "on,off"];
    args.extend_from_slice(SMALL_TRAIN);
    let out = run(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("ab/ablation.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["value"], "on");
    assert_eq!(rows[1]["axis"], "sampling");

    let bad = run(&["ablate", "--data", "data", "--out", "ab2", "--axis", "alpha", "--values", "0.3,7"], tmp.path());
    assert_eq!(code(&bad), 1);
    assert!(!tmp.path().join("ab2").exists());
}

#[test]
fn corrupted_magic_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &[]);
    let path = tmp.path().join("data/x.emb");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'Z';
    fs::write(&path, bytes).unwrap();
    fs::write(tmp.path().join("bad.ckp"), b"CKPXjunk").unwrap();
    let out = run(&["eval", "--data", "data", "--checkpoint", "bad.ckp"], tmp.path());
    assert_eq!(code(&out), 2);
    let mut args = vec!["train", "--data", "data", "--out", "r"];
    args.extend_from_slice(SMALL_TRAIN);
    let out = run(&args, tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn missing_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["qc", "--input", "nope.jsonl", "--out", "q"], tmp.path())), 2);
}

#[test]
fn unknown_flag_exits_1_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", "x", "--bogus-flag"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&run(&["--help"], tmp.path())), 0);
    assert_eq!(code(&run(&[], tmp.path())), 1);
}

#[test]
fn bad_thread_env_is_an_argument_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &[]);
    let mut args = vec!["train", "--data", "data", "--out", "r"];
    args.extend_from_slice(SMALL_TRAIN);
    let out = Command::new(env!("CARGO_BIN_EXE_amm-align"))
        .args(&args)
        .current_dir(tmp.path())
        .env("AMM_ALIGN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
