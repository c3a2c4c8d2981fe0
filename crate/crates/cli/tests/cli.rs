use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 14] = [
    "--truncate", "600,200,200", "--epochs", "3", "--emb-dim", "8", "--nhid", "8", "--n-layers", "1", "--bptt-len", "8",
    "--batch-size", "4",
];

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recur-nas"))
        .args(args)
        .env_remove("RECUR_NAS_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json") && n != "manifest.json")
        .collect();
    names.sort();
    names
}

/// Every file under `path` (or the file itself) with its bytes.
fn snapshot(path: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    if path.is_file() {
        return vec![(path.to_path_buf(), std::fs::read(path).unwrap())];
    }
    let mut entries: Vec<_> = std::fs::read_dir(path).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    entries.iter().flat_map(|e| snapshot(e)).collect()
}

#[test]
fn generate_writes_cells_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("archs");
    ok(&["generate", "--count", "5", "--seed", "3", "--out", p(&out), "--max-nodes", "8"]);
    assert_eq!(json_files(&out).len(), 5);
    assert!(out.join("manifest.json").exists());
    ok(&["generate", "--count", "2", "--seed", "3", "--out", p(&d.path().join("b")), "--baselines"]);
    assert_eq!(json_files(&d.path().join("b")).len(), 5);
}

#[test]
fn generate_is_reproducible_by_seed() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    ok(&["generate", "--count", "4", "--seed", "11", "--out", p(&a)]);
    ok(&["generate", "--count", "4", "--seed", "11", "--out", p(&b)]);
    let env_out = Command::new(env!("CARGO_BIN_EXE_recur-nas"))
        .args(["generate", "--count", "4", "--out", p(&c)])
        .env("RECUR_NAS_SEED", "11")
        .output()
        .unwrap();
    assert!(env_out.status.success());
    for name in json_files(&a) {
        let x = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(&name)).unwrap());
        assert_eq!(x, std::fs::read(c.join(&name)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = cli(&["--config", p(&cfg), "generate", "--count", "1", "--out", p(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let runs = d.path().join("runs");
    std::fs::create_dir(&runs).unwrap();
    let out = cli(&["report", "--runs", p(&runs), "--out", p(&d.path().join("rep"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, "{\"nodes\": []}").unwrap();
    assert_eq!(cli(&["ged", p(&bad), p(&bad)]).status.code(), Some(1));
}

#[test]
fn train_then_wordsim_and_ged() {
    let d = tempfile::tempdir().unwrap();
    let archs = d.path().join("archs");
    ok(&["generate", "--count", "1", "--out", p(&archs), "--baselines"]);
    let lstm = archs.join("baseline_lstm.json");
    let gru = archs.join("baseline_gru.json");

    let ged = ok(&["ged", p(&lstm), p(&lstm)]);
    let v: serde_json::Value = serde_json::from_slice(&ged.stdout).unwrap();
    assert_eq!(v["upper_bound"], 0);
    let ged = ok(&["ged", p(&lstm), p(&gru)]);
    let v: serde_json::Value = serde_json::from_slice(&ged.stdout).unwrap();
    assert!(v["upper_bound"].as_u64().unwrap() > 0);

    let rec = d.path().join("rec.json");
    let model = d.path().join("model.json");
    let mut args = vec!["train", "--arch", p(&lstm), "--out", p(&rec), "--save-model", p(&model), "--synthetic-time"];
    args.extend(TINY);
    ok(&args);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&rec).unwrap()).unwrap();
    assert_eq!(r["epochs"].as_array().unwrap().len(), 3);
    assert!(d.path().join("rec.manifest.json").exists());

    let ws = ok(&["wordsim", "--model", p(&model)]);
    let w: serde_json::Value = serde_json::from_slice(&ws.stdout).unwrap();
    assert!(w["coverage"].as_f64().unwrap() > 0.0);
}

#[test]
fn table_search_and_report_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let archs = d.path().join("archs");
    ok(&["generate", "--count", "6", "--seed", "2", "--max-nodes", "8", "--out", p(&archs), "--baselines"]);
    let table = d.path().join("table.jsonl");
    let mut args = vec!["build-table", "--archs", p(&archs), "--out", p(&table), "--synthetic-time"];
    args.extend(TINY);
    ok(&args);
    assert!(d.path().join("table.manifest.json").exists());

    let inputs = (snapshot(&archs), snapshot(&table));

    let emb = d.path().join("emb.csv");
    ok(&["embed", "--archs", p(&archs), "--dim", "10", "--out", p(&emb)]);
    let text = std::fs::read_to_string(&emb).unwrap();
    assert!(text.starts_with("hash,f0,"));
    assert_eq!(text.lines().count(), 10);

    let rc = ok(&["rankcorr", "--table", p(&table), "--epoch", "1"]);
    let _: serde_json::Value = serde_json::from_slice(&rc.stdout).unwrap();

    let runs = d.path().join("runs");
    ok(&[
        "run-nas", "--table", p(&table), "--method", "rs50", "--method", "hb", "--budget-s", "1000", "--trials", "3",
        "--seed", "5", "--out", p(&runs),
    ]);
    assert!(runs.join("rs50").join("trial_5.csv").exists());
    assert!(runs.join("hb").join("trial_7.json").exists());

    let run_files = snapshot(&runs);
    let rep = d.path().join("report");
    ok(&["report", "--runs", p(&runs), "--out", p(&rep), "--table", p(&table)]);
    for f in ["mean_regret.csv", "final_regret_cdf.csv", "summary.csv", "baselines.csv", "manifest.json"] {
        assert!(rep.join(f).exists(), "missing {f}");
    }
    let curve = std::fs::read_to_string(rep.join("mean_regret.csv")).unwrap();
    assert!(curve.starts_with("time,method,mean,stderr"));

    assert!(inputs == (snapshot(&archs), snapshot(&table)), "inputs were modified");
    assert!(run_files == snapshot(&runs), "runs were modified by report");
}
