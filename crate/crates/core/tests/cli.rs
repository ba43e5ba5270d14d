//! End-to-end exercises of the command-line interface on a miniature cohort.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdpkd"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const GEN: &str = r#"
out = "data.jsonl"

[dataset]
typing_count = 3
category_count = 8
unique_count = 30
patient_count = 48
max_note_len = 8
note_vocab = 64
max_visits = 5
seed = 5
"#;

const MODEL_AND_TRAIN: &str = r#"
[model]
hidden_dim = 16
attention_heads = 4
transformer_layers = 1
note_layers = 1
note_dim = 8
note_heads = 2

[train]
max_epochs = 2
patience = 1
learning_rate = 0.003
note_learning_rate = 0.0006
seed = 2
"#;

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

#[test]
fn gen_data_is_deterministic_and_prints_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", GEN);
    let out = run_in(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for row in [
        "# of Patients",
        "# of Unique Codes",
        "# of Category Codes",
        "# of Typing Codes",
        "# of Visits",
        "Avg / Max # Visit per Patient",
        "Avg / Max # Unique Codes per Visit",
        "Avg / Max # Category Codes per Visit",
        "Avg / Max # Typing Codes per Visit",
    ] {
        assert!(text.contains(row), "stats row {row:?} missing:\n{text}");
    }
    let first = std::fs::read(dir.path().join("data.jsonl")).unwrap();

    let out2 = run_in(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert!(out2.status.success());
    let second = std::fs::read(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(first, second, "same config + seed must be byte-identical");

    let out3 = run_in(
        dir.path(),
        &["gen-data", "--config", cfg.to_str().unwrap(), "--seed", "6"],
    );
    assert!(out3.status.success());
    let third = std::fs::read(dir.path().join("data.jsonl")).unwrap();
    assert_ne!(first, third, "different seed must change the file");
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "so_bogus_key = 1\n");
    let out = run_in(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("so_bogus_key"));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["distill", "--print-config"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let cfg = write(dir.path(), "echo.toml", &text);
    let out2 = run_in(
        dir.path(),
        &["distill", "--config", cfg.to_str().unwrap(), "--print-config"],
    );
    assert!(out2.status.success());
    assert_eq!(text, stdout(&out2), "print-config must round-trip losslessly");
}

#[test]
fn missing_teacher_checkpoint_fails_distill() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(dir.path(), "gen.toml", GEN);
    assert!(run_in(dir.path(), &["gen-data", "--config", gen.to_str().unwrap()]).status.success());
    let cfg = write(
        dir.path(),
        "distill.toml",
        &format!("data = \"data.jsonl\"\nteacher = \"absent.ckpt\"\n{MODEL_AND_TRAIN}"),
    );
    let out = run_in(dir.path(), &["distill", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("absent.ckpt"));
}

#[test]
fn report_on_missing_log_fails() {
    let out = bin()
        .args(["report", "/nonexistent/metrics.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn full_pipeline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(dir.path(), "gen.toml", GEN);
    assert!(run_in(dir.path(), &["gen-data", "--config", gen.to_str().unwrap()]).status.success());

    let teacher = write(
        dir.path(),
        "teacher.toml",
        &format!("data = \"data.jsonl\"\nlabel = \"teacher\"\n{MODEL_AND_TRAIN}"),
    );
    let out = run_in(dir.path(), &["train-teacher", "--config", teacher.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("teacher.ckpt").exists());
    assert!(dir.path().join("teacher.metrics.jsonl").exists());
    assert!(dir.path().join("teacher.report.json").exists());

    let distill = write(
        dir.path(),
        "distill.toml",
        &format!(
            "data = \"data.jsonl\"\nteacher = \"teacher.ckpt\"\nspec = \"(0.5, 0.5, 0.5)\"\n{MODEL_AND_TRAIN}"
        ),
    );
    let out = run_in(dir.path(), &["distill", "--config", distill.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("full.ckpt").exists(), "auto-label from toggles");

    let out = run_in(
        dir.path(),
        &[
            "distill",
            "--config",
            distill.to_str().unwrap(),
            "--no-kd",
            "--seed",
            "9",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("no_kd.ckpt").exists());

    // evaluate parses the table-order triple and reports per-pattern rows
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "full.ckpt",
            "--data",
            "data.jsonl",
            "--spec",
            "(0.2, 0.2, 0.2)",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("under (0.2, 0.2, 0.2)"));
    assert!(text.contains("pattern D"));

    let out = bin()
        .args([
            "report",
            dir.path().join("full.metrics.jsonl").to_str().unwrap(),
            dir.path().join("no_kd.metrics.jsonl").to_str().unwrap(),
            "--format",
            "both",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("full"));
    assert!(text.contains("no_kd"));
    assert!(text.contains("top-10"));
    assert!(text.contains("\"top10\""), "json variant present");
}

#[test]
fn evaluate_honors_spec_flag_order() {
    // demographics, notes, codes: an all-but-one-missing spec for notes only
    let dir = tempfile::tempdir().unwrap();
    let gen = write(dir.path(), "gen.toml", GEN);
    assert!(run_in(dir.path(), &["gen-data", "--config", gen.to_str().unwrap()]).status.success());
    let teacher = write(
        dir.path(),
        "teacher.toml",
        &format!("data = \"data.jsonl\"\n{MODEL_AND_TRAIN}"),
    );
    assert!(run_in(dir.path(), &["train-teacher", "--config", teacher.to_str().unwrap()])
        .status
        .success());
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "teacher.ckpt",
            "--data",
            "data.jsonl",
            "--spec",
            "(0.0, 0.9, 0.0)",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // only note-missing patterns can occur: D+N-C+ and D+N+C+
    assert!(text.contains("D+N-C+") || text.contains("D+N+C+"), "{text}");
    assert!(!text.contains("D-"), "demographics were corrupted:\n{text}");
}
