use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sttune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sttune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small mixture over the demo corpora, written into `dir`.
fn small_spec(dir: &Path) -> PathBuf {
    let d = demo();
    let text = format!(
        "per_truth_quota = 15\nlanguages = [\"de\", \"en\"]\nseed = 3\n\n\
         [[entries]]\ndataset_id = \"xquad\"\ntask_id = \"xquad\"\nmanifest = \"{0}/data/xquad.json\"\n\n\
         [[entries]]\ndataset_id = \"pawsx\"\ntask_id = \"pawsx\"\nmanifest = \"{0}/data/pawsx.json\"\n",
        d.display()
    );
    let p = dir.join("spec.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_lists_every_subcommand() {
    let o = sttune(&["--help"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for cmd in [
        "build-data",
        "train",
        "eval",
        "classify",
        "bench",
        "inspect-templates",
        "plot",
        "run",
        "validate-config",
    ] {
        assert!(out.contains(cmd), "missing {cmd} in\n{out}");
    }
}

#[test]
fn inspect_templates_for_one_task() {
    let o = sttune(&["inspect-templates", "--task", "xlwic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("xlwic_")).count(), 12);
    assert!(out.contains("12 templates"));

    let o = sttune(&["inspect-templates", "--task", "pawsx", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 14);
}

#[test]
fn unknown_config_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "sead = 1\n").unwrap();
    let o = sttune(&["validate-config", "--config", s(&p), "--stages", "build-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sead"), "{}", stderr(&o));
}

#[test]
fn unknown_task_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{}\n").unwrap();
    let o = sttune(&[
        "classify",
        "--model",
        s(dir.path()),
        "--task",
        "no-such-task",
        "--input",
        s(&input),
        "--out",
        s(&dir.path().join("out.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn build_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let o = sttune(&["build-data", "--spec", s(&spec), "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("120 statements (60 true, 60 false)"));
    let o = sttune(&["build-data", "--spec", s(&spec), "--out", s(&b), "--sequential"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn train_classify_eval_bench_plot() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let spec = small_spec(dir.path());
    let data = p("statements.jsonl");
    assert!(sttune(&["build-data", "--spec", s(&spec), "--out", s(&data)]).status.success());

    let o = sttune(&[
        "train", "--data", s(&data), "--backend", "tiny-encoder", "--out", s(&p("model")), "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p("model/model.safetensors").exists());

    let input = p("xcopa.jsonl");
    std::fs::write(
        &input,
        "{\"premise\": \"ka lo mi\", \"choice1\": \"ka lo\", \"choice2\": \"ze bi\"}\n\
         {\"premise\": \"ne ru ta\", \"choice1\": \"vo si\", \"choice2\": \"ru ta\"}\n",
    )
    .unwrap();
    let o = sttune(&[
        "classify",
        "--model",
        s(&p("model")),
        "--task",
        "xcopa",
        "--input",
        s(&input),
        "--out",
        s(&p("pred.jsonl")),
        "--verbose",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = std::fs::read_to_string(p("pred.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = preds.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r["n_candidates"], 2);
        assert!(!r["per_statement"].as_array().unwrap().is_empty());
    }

    let o = sttune(&[
        "eval",
        "--model",
        s(&p("model")),
        "--tasks",
        s(&demo().join("eval.toml")),
        "--out",
        s(&p("eval")),
        "--names",
        "cli",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("| Model | xcopa | Geo. mean |"));

    let bench = p("bench.toml");
    std::fs::write(&bench, "batch_sizes = [1, 2]\nrepeats = 2\nwarmup = 0\nceiling = 2\n").unwrap();
    let o = sttune(&["bench", "--model", s(&p("model")), "--config", s(&bench), "--out", s(&p("bench"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("| Model | Max batch size | Mean time per batch (s) |"));

    let o = sttune(&["plot", "--report", s(&p("eval/report.json")), "--out", s(&p("plots"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p("plots/xcopa.svg").exists());
}
