//! Experiment orchestration behind the `wmar` binary: config loading with
//! overrides, per-seed runs with manifests, metric evaluation against
//! baselines, and chart emission.

pub mod chart;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wmar::evalkit::{
    self, aggregate_seeds, curves_from_rows, normalize_curve, quartiles, read_metrics_csv, suite_metrics,
    write_components_csv, write_metrics_csv, write_table_csv, MetricError, MetricRow, PerfCurve, SuiteMetrics,
    TableRow, TaskBaseline, TaskComponentRow,
};
use wmar::persist::write_atomic;
use wmar::trainer::{
    run_mode, run_seeds, ConfigError, ExperimentConfig, LossPoint, Mode, RunOptions, RunRecord, Trainer,
    TrainerError, CHECKPOINT_FILE,
};

/// Environment variable naming the directory relative output paths
/// resolve against.
pub const OUTPUT_ROOT_VAR: &str = "WMAR_OUTPUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad arguments or incompatible inputs (exit code 2).
    #[error("{0}")]
    Config(String),
    /// Failure while running (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Reads `path` and applies `overrides` in order.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_text(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for (k, v) in overrides {
        cfg.set(k, v)
            .map_err(|e| CliError::Config(format!("override --{k}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits `--section.key value` and `--section.key=value` pairs (any flag
/// whose name contains a dot) out of `args`.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(flag) if flag.split('=').next().map_or(false, |k| k.contains('.')) => {
                if let Some((k, v)) = flag.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("override --{flag} needs a value")))?;
                    overrides.push((flag.to_string(), v));
                }
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

/// Parses `key=value` strings from `--set`.
pub fn parse_sets(sets: &[String]) -> Result<Vec<(String, String)>, CliError> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))
        })
        .collect()
}

/// Resolves a relative output path against the output-root variable.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub metrics: String,
    pub wall_clock_secs: f64,
    pub steps_per_task: Vec<u64>,
    pub peak_stored_steps: usize,
    pub memory_bound: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config_hash: String,
    pub mode: Mode,
    pub suite: String,
    pub labels: Vec<String>,
    pub budget_n: u64,
    pub seeds: Vec<u64>,
    pub overrides: Vec<(String, String)>,
    pub runs: Vec<SeedEntry>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CliError::Config(format!("missing run artifact: {} not found", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Seed-level row for charts: a score (raw reward or normalized) of one
/// model on one task at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub seed: u64,
    pub global_step: u64,
    pub task_trained: String,
    pub eval_task: String,
    pub score: f64,
}

pub fn write_curve_rows(path: &Path, rows: &[CurveRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["model", "seed", "global_step", "task_trained", "eval_task", "score"])
            .map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

pub fn read_curve_rows(path: &Path) -> Result<Vec<CurveRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let row: CurveRow = rec.map_err(|e| CliError::Config(format!("malformed CSV {}: {e}", path.display())))?;
        out.push(row);
    }
    Ok(out)
}

fn write_losses(path: &Path, losses: &[LossPoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if losses.is_empty() {
        w.write_record([
            "global_step",
            "updates",
            "reconstruction",
            "reward",
            "continuation",
            "kl",
            "actor_entropy",
            "mean_return",
        ])
        .map_err(|e| io_err(path, e))?;
    }
    for l in losses {
        w.serialize(l).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

/// Median and quartiles across seeds of a score per (step, task).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub global_step: u64,
    pub task_trained: String,
    pub eval_task: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub seeds: usize,
}

pub fn aggregate_curve_rows(rows: &[CurveRow]) -> Result<Vec<AggregateRow>, CliError> {
    let mut groups: BTreeMap<(String, u64, String), (String, Vec<f64>)> = BTreeMap::new();
    let mut task_order: Vec<String> = Vec::new();
    for r in rows {
        if !task_order.contains(&r.eval_task) {
            task_order.push(r.eval_task.clone());
        }
        let e = groups
            .entry((r.model.clone(), r.global_step, r.eval_task.clone()))
            .or_insert_with(|| (r.task_trained.clone(), Vec::new()));
        e.1.push(r.score);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((model, step, task), (trained, values)) in groups {
        let q = quartiles(&values)?;
        out.push(AggregateRow {
            model,
            global_step: step,
            task_trained: trained,
            eval_task: task,
            median: q.median,
            q25: q.q25,
            q75: q.q75,
            seeds: values.len(),
        });
    }
    out.sort_by_key(|r| {
        (
            r.model.clone(),
            task_order.iter().position(|t| *t == r.eval_task),
            r.global_step,
        )
    });
    Ok(out)
}

fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["model", "global_step", "task_trained", "eval_task", "median", "q25", "q75", "seeds"])
            .map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

pub struct RunArgs {
    pub config: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub mode: Option<Mode>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub resume: bool,
}

fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}"))
}

fn run_one(cfg: &ExperimentConfig, mode: Mode, seed: u64, dir: &Path, resume: bool) -> Result<RunRecord, CliError> {
    let sdir = seed_dir(dir, seed);
    std::fs::create_dir_all(&sdir).map_err(|e| io_err(&sdir, e))?;
    let opts = RunOptions {
        checkpoint_dir: Some(sdir.clone()),
        stop_after_iterations: None,
    };
    let ckpt = sdir.join(CHECKPOINT_FILE);
    let record = if resume && ckpt.exists() && matches!(mode, Mode::Wmar | Mode::FifoOnly) {
        let mut t = Trainer::load(&ckpt)?;
        t.run(&opts)?
            .ok_or_else(|| CliError::Runtime("resumed run stopped early".into()))?
    } else {
        run_mode(cfg, mode, seed, &opts)?
    };
    let metrics = sdir.join("metrics.csv");
    write_metrics_csv(&metrics, &record.rows)?;
    write_losses(&sdir.join("losses.csv"), &record.losses)?;
    let summary = serde_json::json!({
        "seed": record.seed,
        "mode": record.mode,
        "labels": record.labels,
        "steps_per_task": record.steps_per_task,
        "accounting": record.accounting,
        "wall_clock_secs": record.wall_clock_secs,
        "checkpoints": record.checkpoints,
    });
    write_json(&sdir.join("record.json"), &summary)?;
    Ok(record)
}

/// `run`: one run per seed, then the manifest, a config snapshot, the
/// seed-level curve CSV and its aggregate.
pub fn cmd_run(args: RunArgs) -> Result<PathBuf, CliError> {
    let mut cfg = load_config(&args.config, &args.overrides)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    let dir = resolve_output(&cfg.output).join(cfg.mode.as_str());
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    if args.resume {
        if let Ok(m) = read_manifest(&dir) {
            if m.config_hash != cfg.experiment_hash() {
                return Err(CliError::Config(format!(
                    "cannot resume in {}: config hash differs from the recorded one",
                    dir.display()
                )));
            }
        }
    }
    write_atomic(&dir.join("config.cfg"), cfg.to_text().as_bytes()).map_err(|e| io_err(&dir, e))?;
    let mode = cfg.mode;
    let results = run_seeds(&cfg.seeds, args.jobs, |seed| run_one(&cfg, mode, seed, &dir, args.resume));
    let mut records = Vec::new();
    for r in results {
        records.push(r?);
    }
    let labels = records.first().map(|r| r.labels.clone()).unwrap_or_default();
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.experiment_hash(),
        mode,
        suite: cfg.suite.clone(),
        labels,
        budget_n: cfg.budget.n,
        seeds: cfg.seeds.clone(),
        overrides: args.overrides.clone(),
        runs: records
            .iter()
            .map(|r| SeedEntry {
                seed: r.seed,
                metrics: format!("seed_{}/metrics.csv", r.seed),
                wall_clock_secs: r.wall_clock_secs,
                steps_per_task: r.steps_per_task.clone(),
                peak_stored_steps: r.accounting.peak_stored_steps,
                memory_bound: r.accounting.memory_bound,
            })
            .collect(),
    };
    let rows: Vec<CurveRow> = records
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(move |m| CurveRow {
                model: mode.to_string(),
                seed: r.seed,
                global_step: m.global_step,
                task_trained: m.task_trained.clone(),
                eval_task: m.eval_task.clone(),
                score: m.episodic_reward,
            })
        })
        .collect();
    write_curve_rows(&dir.join("curves.csv"), &rows)?;
    write_aggregate(&dir.join("aggregate.csv"), &aggregate_curve_rows(&rows)?)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(dir)
}

/// A run directory with its manifest and per-seed metric rows.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub seeds: Vec<(u64, Vec<MetricRow>)>,
}

pub fn load_run(dir: &Path, role: &str) -> Result<LoadedRun, CliError> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::Config(format!(
            "missing {role} run: {} not found",
            dir.join(MANIFEST_FILE).display()
        )));
    }
    let manifest = read_manifest(dir)?;
    let mut seeds = Vec::new();
    for e in &manifest.runs {
        let path = dir.join(&e.metrics);
        if !path.exists() {
            return Err(CliError::Config(format!(
                "missing {role} metrics: {} not found",
                path.display()
            )));
        }
        seeds.push((e.seed, read_metrics_csv(&path)?));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        seeds,
    })
}

pub struct EvalArgs {
    pub cl: Vec<PathBuf>,
    pub single: PathBuf,
    pub random: PathBuf,
    pub out: PathBuf,
    pub force: bool,
}

/// Result of `eval` for one continual model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEval {
    pub model: String,
    pub per_seed: Vec<(u64, SuiteMetrics)>,
    pub table: TableRow,
}

fn curve_for(rows: &[MetricRow], label: &str) -> Result<Option<PerfCurve>, CliError> {
    Ok(curves_from_rows(rows)?
        .into_iter()
        .find(|(l, _)| l == label)
        .map(|(_, c)| c))
}

/// Baselines per task: random and final single-task performance averaged
/// over seeds, and the single-task normalized window mean averaged over
/// seeds.
pub fn baselines(labels: &[String], single: &LoadedRun, random: &LoadedRun, n: u64) -> Result<Vec<TaskBaseline>, CliError> {
    let mut out = Vec::new();
    for label in labels {
        let mut rand_vals = Vec::new();
        for (_, rows) in &random.seeds {
            let c = curve_for(rows, label)?.ok_or_else(|| {
                CliError::Config(format!("random baseline {} has no task `{label}`", random.dir.display()))
            })?;
            rand_vals.push(c.points()[0].1);
        }
        let mut single_curves = Vec::new();
        for (_, rows) in &single.seeds {
            let c = curve_for(rows, label)?.ok_or_else(|| {
                CliError::Config(format!("single-task baseline {} has no task `{label}`", single.dir.display()))
            })?;
            single_curves.push(c);
        }
        if rand_vals.is_empty() || single_curves.is_empty() {
            return Err(CliError::Config(format!("no baseline seeds for task `{label}`")));
        }
        let p_rand = rand_vals.iter().sum::<f64>() / rand_vals.len() as f64;
        let mut finals = Vec::new();
        for c in &single_curves {
            finals.push(c.at(n).ok_or(MetricError::Undefined(n))?);
        }
        let p_single = finals.iter().sum::<f64>() / finals.len() as f64;
        let single_window_mean = if p_single == p_rand {
            None
        } else {
            let mut means = Vec::new();
            for c in &single_curves {
                means.push(normalize_curve(c, p_rand, p_single)?.window_mean(0, n)?);
            }
            Some(means.iter().sum::<f64>() / means.len() as f64)
        };
        out.push(TaskBaseline {
            label: label.clone(),
            p_rand,
            p_single,
            single_window_mean,
        });
    }
    Ok(out)
}

pub fn evaluate_model(cl: &LoadedRun, base: &[TaskBaseline], n: u64) -> Result<ModelEval, CliError> {
    let mut per_seed = Vec::new();
    for (seed, rows) in &cl.seeds {
        let curves = curves_from_rows(rows)?;
        let mut raw = Vec::new();
        for b in base {
            let c = curves
                .iter()
                .find(|(l, _)| *l == b.label)
                .map(|(_, c)| c.clone())
                .ok_or_else(|| CliError::Config(format!("run {} has no task `{}`", cl.dir.display(), b.label)))?;
            raw.push(c);
        }
        per_seed.push((*seed, suite_metrics(&raw, base, n)?));
    }
    let metrics: Vec<SuiteMetrics> = per_seed.iter().map(|(_, m)| m.clone()).collect();
    let agg = aggregate_seeds(&metrics)?;
    let model = cl.manifest.mode.to_string();
    Ok(ModelEval {
        table: TableRow {
            model: model.clone(),
            avg_forgetting_median: agg.forgetting.median,
            avg_forgetting_q25: agg.forgetting.q25,
            avg_forgetting_q75: agg.forgetting.q75,
            avg_fwd_transfer_median: agg.forward_transfer.map(|q| q.median),
            avg_fwd_transfer_q25: agg.forward_transfer.map(|q| q.q25),
            avg_fwd_transfer_q75: agg.forward_transfer.map(|q| q.q75),
        },
        model,
        per_seed,
    })
}

/// `eval`: metrics tables for each continual run against the baselines.
pub fn cmd_eval(args: EvalArgs) -> Result<Vec<ModelEval>, CliError> {
    if args.cl.is_empty() {
        return Err(CliError::Config("eval needs at least one --cl run".into()));
    }
    let random = load_run(&args.random, "random baseline")?;
    let single = load_run(&args.single, "single-task baseline")?;
    let cls: Vec<LoadedRun> = args
        .cl
        .iter()
        .map(|d| load_run(d, "continual"))
        .collect::<Result<_, _>>()?;
    let first = &cls[0].manifest;
    for run in cls.iter().chain([&single, &random]) {
        let m = &run.manifest;
        let mut sorted_a = m.labels.clone();
        let mut sorted_b = first.labels.clone();
        sorted_a.sort();
        sorted_b.sort();
        if sorted_a != sorted_b {
            return Err(CliError::Config(format!(
                "suite mismatch: {} has tasks {:?}, {} has {:?}",
                run.dir.display(),
                m.labels,
                cls[0].dir.display(),
                first.labels
            )));
        }
        if m.budget_n != first.budget_n {
            return Err(CliError::Config(format!(
                "budget mismatch: {} has N = {}, {} has N = {}",
                run.dir.display(),
                m.budget_n,
                cls[0].dir.display(),
                first.budget_n
            )));
        }
        if m.config_hash != first.config_hash && !args.force {
            return Err(CliError::Config(format!(
                "config hash mismatch between {} and {} (use --force to compare anyway)",
                run.dir.display(),
                cls[0].dir.display()
            )));
        }
    }
    let n = first.budget_n;
    let base = baselines(&first.labels, &single, &random, n)?;
    let mut evals = Vec::new();
    let mut components = Vec::new();
    let mut normalized = Vec::new();
    for cl in &cls {
        let e = evaluate_model(cl, &base, n)?;
        for (seed, m) in &e.per_seed {
            for (i, label) in m.labels.iter().enumerate() {
                components.push(TaskComponentRow {
                    model: e.model.clone(),
                    seed: *seed,
                    task: label.clone(),
                    forgetting: m.forgetting_components[i],
                    fwd_transfer: m.transfer_components[i],
                });
            }
        }
        for (seed, rows) in &cl.seeds {
            for r in rows {
                if let Some(b) = base.iter().find(|b| b.label == r.eval_task) {
                    if let Ok(q) = evalkit::normalize(r.episodic_reward, b.p_rand, b.p_single) {
                        normalized.push(CurveRow {
                            model: e.model.clone(),
                            seed: *seed,
                            global_step: r.global_step,
                            task_trained: r.task_trained.clone(),
                            eval_task: r.eval_task.clone(),
                            score: q,
                        });
                    }
                }
            }
        }
        evals.push(e);
    }
    let out = resolve_output(&args.out);
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let table: Vec<TableRow> = evals.iter().map(|e| e.table.clone()).collect();
    write_table_csv(&out.join("metrics_table.csv"), &table)?;
    write_components_csv(&out.join("task_components.csv"), &components)?;
    write_curve_rows(&out.join("normalized.csv"), &normalized)?;
    let warnings: Vec<String> = evals
        .iter()
        .flat_map(|e| e.per_seed.iter().flat_map(|(_, m)| m.warnings.clone()))
        .collect();
    write_json(
        &out.join("baselines.json"),
        &serde_json::json!({ "baselines": base, "warnings": warnings }),
    )?;
    Ok(evals)
}

/// `chart`: one SVG per model in the curve CSV.
pub fn cmd_chart(input: &Path, out: &Path, title: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let rows = read_curve_rows(input)?;
    let agg = aggregate_curve_rows(&rows)?;
    let out = resolve_output(out);
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let mut models: Vec<String> = agg.iter().map(|r| r.model.clone()).collect();
    models.dedup();
    let mut written = Vec::new();
    if models.is_empty() {
        let path = out.join("chart.svg");
        let svg = chart::render(&[], title.unwrap_or("no data"));
        write_atomic(&path, svg.as_bytes()).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    for model in models {
        let series = chart::series(agg.iter().filter(|r| r.model == model));
        let heading = match title {
            Some(t) => format!("{t} ({model})"),
            None => model.clone(),
        };
        let path = out.join(format!("{model}.svg"));
        write_atomic(&path, chart::render(&series, &heading).as_bytes()).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// `grad-check`: randomized op checks plus the full world-model loss.
pub fn cmd_grad_check(trials: usize, seed: u64) -> Result<String, CliError> {
    let ops = wmar::diffcore::op_suite(trials, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let wm = wmar::worldmodel::loss_grad_check(seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut report = String::new();
    for o in &ops.ops {
        report += &format!("{:<18} trials {:>4}  max rel err {:.2e}\n", o.name, o.trials, o.max_rel_err);
    }
    report += &format!(
        "world-model loss   entries {:>4}  max rel err {:.2e}\n",
        wm.entries_checked, wm.max_rel_err
    );
    let ok = ops.passes(1e-4) && wm.passes(1e-3);
    report += if ok { "grad-check passed\n" } else { "grad-check FAILED\n" };
    if ok {
        Ok(report)
    } else {
        Err(CliError::Runtime(report))
    }
}
