use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use afrnet::pipeline::RunConfig;
use tempfile::TempDir;

fn afrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afrnet")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A run small enough for a unit test.
fn quick_config(dir: &Path) -> String {
    let mut cfg = RunConfig::default();
    cfg.benchmark.seen_classes = 6;
    cfg.benchmark.unseen_classes = 3;
    cfg.benchmark.samples_per_class = 20;
    cfg.benchmark.visual_dim = 8;
    cfg.benchmark.semantic_dim = 5;
    cfg.gan.iterations = 20;
    cfg.gan.hidden = 12;
    cfg.gan.batch_size = 16;
    cfg.softmax.iterations = 150;
    cfg.per_class = 30;
    let path = dir.join("quick.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let o = afrnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_and_missing_subcommand_exit_two() {
    assert_eq!(afrnet(&["evaluate", "--bogus"]).status.code(), Some(2));
    assert_eq!(afrnet(&["train", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(afrnet(&[]).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let o = afrnet(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-data", "prototypes", "select-features", "train", "synthesize", "evaluate", "ablate", "report"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn evaluate_on_missing_directory_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("no-such-data");
    let o = afrnet(&["evaluate", "--data", s(&missing), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]: "), "{err}");
    assert!(err.contains(s(&missing)), "{err}");
}

#[test]
fn missing_out_is_a_contract_error() {
    let o = afrnet(&["gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[contract]: "));
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(afrnet(&["gen-data", "--seed", "7", "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(afrnet(&["gen-data", "--seed", "7", "--out", s(&b)]).status.code(), Some(0));
    let (da, db) = (dir_bytes(&a), dir_bytes(&b));
    assert!(da.len() >= 4);
    assert!(da == db, "gen-data outputs differ");

    let c = tmp.path().join("c");
    afrnet(&["gen-data", "--seed", "8", "--out", s(&c)]);
    assert!(dir_bytes(&c) != da);
}

#[test]
fn report_config_reproduces_every_number() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let data = tmp.path().join("data");
    let first = tmp.path().join("first");
    assert_eq!(afrnet(&["gen-data", "--config", &cfg, "--out", s(&data)]).status.code(), Some(0));
    let o = afrnet(&["evaluate", "--config", &cfg, "--data", s(&data), "--out", s(&first), "--gzsl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let report = first.join("report.json");
    let second = tmp.path().join("second");
    let o = afrnet(&["evaluate", "--config", s(&report), "--out", s(&second)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let a: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let mut b: serde_json::Value = serde_json::from_slice(&fs::read(second.join("report.json")).unwrap()).unwrap();
    assert!(a["h_mean"].is_number());
    // Only the output directory differs in the echo.
    b["config"]["out"] = a["config"]["out"].clone();
    assert_eq!(a, b);
    assert_eq!(fs::read(first.join("per_class.csv")).unwrap(), fs::read(second.join("per_class.csv")).unwrap());
}

#[test]
fn staged_commands_match_a_single_evaluate() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let data = tmp.path().join("data");
    afrnet(&["gen-data", "--config", &cfg, "--out", s(&data)]);
    let staged = tmp.path().join("staged");
    for sub in ["prototypes", "select-features", "train", "synthesize", "evaluate"] {
        let o = afrnet(&[sub, "--config", &cfg, "--data", s(&data), "--out", s(&staged)]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(&o));
    }
    let direct = tmp.path().join("direct");
    afrnet(&["evaluate", "--config", &cfg, "--data", s(&data), "--out", s(&direct)]);
    for f in ["gan.afrg", "synthetic.afrm", "selection.json", "per_class.csv"] {
        assert!(fs::read(staged.join(f)).unwrap() == fs::read(direct.join(f)).unwrap(), "{f} differs");
    }

    // A changed knob invalidates the GAN stage onward.
    let o = afrnet(&["synthesize", "--config", &cfg, "--data", s(&data), "--out", s(&staged), "--lambda", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read(staged.join("gan.afrg")).unwrap() != fs::read(direct.join("gan.afrg")).unwrap());
    assert!(fs::read(staged.join("stage.json")).unwrap() == fs::read(direct.join("stage.json")).unwrap());
}

#[test]
fn ablate_writes_four_rows_and_report_prints_them() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path());
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    afrnet(&["gen-data", "--config", &cfg, "--out", s(&data)]);
    let o = afrnet(&["ablate", "--config", &cfg, "--data", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let o = afrnet(&["report", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("baseline") && text.contains("residual"));
}

#[test]
fn report_without_results_fails() {
    let tmp = TempDir::new().unwrap();
    let o = afrnet(&["report", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[data]: "));
}
