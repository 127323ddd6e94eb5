use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "suite = shared4
budget.N = 200
budget.steps_per_iteration = 100
budget.train_ratio = 0.05
budget.prefill_steps = 100
eval.interval = 100
eval.episodes = 2
eval.random_episodes = 20
replay.fifo_steps = 128
replay.ltdm_chunks = 4
replay.chunk_size = 32
replay.batch_size = 4
replay.batch_length = 8
wm.deter = 16
wm.stoch_units = 4
wm.stoch_classes = 4
wm.embed = 16
wm.hidden = 16
wm.layers = 1
agent.hidden = 16
agent.layers = 1
agent.horizon = 5
agent.dream_starts = 8
";

fn wmar(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmar"))
        .args(args)
        .env("WMAR_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join(format!("exp{}.cfg", extra.len()));
    std::fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_mode(cfg: &Path, root: &Path, mode: &str) -> PathBuf {
    let o = wmar(&["run", "--config", cfg.to_str().unwrap(), "--mode", mode], root);
    assert!(o.status.success(), "{mode}: {}", stderr(&o));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

#[test]
fn validate_config_reports_hash_and_rejects_bad_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let o = wmar(&["validate-config", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("# hash "));

    let o = wmar(
        &["validate-config", "--config", cfg.to_str().unwrap(), "--budget.N", "300"],
        tmp.path(),
    );
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("budget.N = 300"));

    let bad = config(tmp.path(), "wm.colour = 3\n");
    let o = wmar(&["validate-config", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wm.colour"), "{}", stderr(&o));

    let o = wmar(
        &["validate-config", "--config", cfg.to_str().unwrap(), "--set", "budget.N=-4"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_eval_and_chart_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = config(root, "output = out\nseeds = 0,1\n");
    let cl = run_mode(&cfg, root, "wmar");
    let single = run_mode(&cfg, root, "single_task");
    let random = run_mode(&cfg, root, "random");
    assert!(cl.starts_with(root));
    for f in ["manifest.json", "config.cfg", "curves.csv", "aggregate.csv", "seed_0/metrics.csv", "seed_1/losses.csv"] {
        assert!(cl.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cl.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let out = root.join("eval");
    let o = wmar(
        &[
            "eval",
            "--cl",
            cl.to_str().unwrap(),
            "--single",
            single.to_str().unwrap(),
            "--random",
            random.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("metrics_table.csv")).unwrap();
    assert!(table.starts_with("model,avg_forgetting_median"), "{table}");
    assert!(table.contains("\nwmar,"));
    assert!(out.join("task_components.csv").exists());

    let charts = root.join("charts");
    let o = wmar(
        &["chart", "--input", cl.join("curves.csv").to_str().unwrap(), "--out", charts.to_str().unwrap()],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(charts.join("wmar.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    for label in ["grid", "grid+perm", "grid+perm+noise+invert"] {
        let n = svg.matches(&format!(">{label}<")).count();
        assert_eq!(n, 1, "legend entry {label}");
    }
    assert!(svg.contains("stroke-width=\"4\""), "no highlighted training segment");
}

#[test]
fn eval_refuses_mismatched_hash_and_names_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let a = config(root, "output = a\nseeds = 0\n");
    let b = config(root, "output = b\nseeds = 0\nagent.entropy = 0.01\n");
    let cl = run_mode(&a, root, "random");
    let other = run_mode(&b, root, "random");
    let out = root.join("eval");
    let args = |single: &Path| {
        vec![
            "eval".to_string(),
            "--cl".into(),
            cl.to_string_lossy().into_owned(),
            "--single".into(),
            single.to_string_lossy().into_owned(),
            "--random".into(),
            cl.to_string_lossy().into_owned(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
        ]
    };
    let run = |v: Vec<String>| wmar(&v.iter().map(String::as_str).collect::<Vec<_>>(), root);

    let o = run(args(&other));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));

    let missing = root.join("nowhere");
    let o = run(args(&missing));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&missing.join("manifest.json").display().to_string()), "{}", stderr(&o));
}

#[test]
fn chart_of_empty_csv_is_valid_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("empty.csv");
    std::fs::write(&input, "model,seed,global_step,task_trained,eval_task,score\n").unwrap();
    let out = tmp.path().join("charts");
    let o = wmar(&["chart", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("chart.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("no data") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let a = config(root, "output = a\nseeds = 3\n");
    let b = config(root, "output = b\nseeds = 3\n#\n");
    let da = run_mode(&a, root, "wmar");
    let db = run_mode(&b, root, "wmar");
    let ma = std::fs::read(da.join("seed_3/metrics.csv")).unwrap();
    let mb = std::fs::read(db.join("seed_3/metrics.csv")).unwrap();
    assert_eq!(ma, mb);
}
