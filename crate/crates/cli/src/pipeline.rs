//! BRI followed by multi-round PPO optimization, artifact export and batch
//! evaluation over sampled tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dfc_agent::{curves_to_csv, train_rldfcdo, RldfcdoConfig, RoundRecord};
use dfc_core::env::{bri_initialize, evaluate_layout, Evaluation, FilterEnv, InitialState, OracleKind};
use dfc_core::metrics::RewardBreakdown;
use dfc_core::surrogate::{AnalyticOracle, Oracle};
use dfc_core::Layout;
use dfc_gnn::{GatSurrogate, GnnOracle};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::svg::{layout_svg, s21_svg};
use crate::task::{bucket_counts, sample_tasks, DesignTask};

pub const LAYOUT: &str = "layout.json";
pub const LAYOUT_INITIAL: &str = "layout_initial.json";
pub const S21: &str = "s21.csv";
pub const S21_INITIAL: &str = "s21_initial.csv";
pub const CURVES: &str = "curves.csv";
pub const LAYOUT_SVG: &str = "layout.svg";
pub const S21_SVG: &str = "s21.svg";
pub const RUNLOG: &str = "runlog.json";

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_MET: i32 = 2;

pub fn build_oracle(kind: OracleKind, cfg: &PipelineConfig) -> Result<Arc<dyn Oracle>> {
    match kind {
        OracleKind::Analytic => Ok(Arc::new(AnalyticOracle::new(cfg.surrogate, cfg.grid))),
        OracleKind::Gnn => {
            let Some(path) = &cfg.gnn_checkpoint else {
                bail!("the gnn oracle needs gnn_checkpoint in the config");
            };
            let mut model = GatSurrogate::new(cfg.gat.clone(), cfg.grid.n_points, 0)?;
            dfc_nn::checkpoint::load(&mut model.store, path)
                .with_context(|| format!("loading GAT parameters from {}", path.display()))?;
            Ok(Arc::new(GnnOracle::new(model, cfg.bounds, cfg.surrogate, cfg.grid)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub breakdown: RewardBreakdown,
    /// Initialization score of the layout.
    pub score: f64,
}

impl From<&Evaluation> for Outcome {
    fn from(e: &Evaluation) -> Self {
        Outcome {
            breakdown: e.breakdown,
            score: e.score,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub bri_s: f64,
    pub optimize_s: f64,
    pub total_s: f64,
}

/// Record of one `design_end_to_end` run, written as `runlog.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub task: DesignTask,
    pub config: PipelineConfig,
    pub oracle: String,
    /// BRI result.
    pub pre: Option<Outcome>,
    /// Best layout after optimization; equals `pre` when no rounds ran.
    pub post: Option<Outcome>,
    pub rounds: Vec<RoundRecord>,
    pub total_steps: u64,
    pub invalid_attempt_fraction: f64,
    pub success: bool,
    pub timings: Timings,
    /// Artifact kind to file name, relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<String>,
}

impl RunLog {
    fn new(task: &DesignTask, cfg: &PipelineConfig) -> Self {
        RunLog {
            task: task.clone(),
            config: cfg.clone(),
            oracle: String::new(),
            pre: None,
            post: None,
            rounds: Vec::new(),
            total_steps: 0,
            invalid_attempt_fraction: 0.0,
            success: false,
            timings: Timings::default(),
            artifacts: BTreeMap::new(),
            error: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            EXIT_ERROR
        } else if self.success {
            EXIT_SUCCESS
        } else {
            EXIT_NOT_MET
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_artifact(log: &mut RunLog, dir: &Path, kind: &str, name: &str, body: &str) -> Result<()> {
    std::fs::write(dir.join(name), body).with_context(|| format!("writing {}", dir.join(name).display()))?;
    log.artifacts.insert(kind.to_string(), name.to_string());
    Ok(())
}

/// Runs one task into `out_dir` and always tries to leave a `runlog.json`
/// behind, with `error` set when any stage failed.
pub fn design_end_to_end(task: &DesignTask, cfg: &PipelineConfig, out_dir: &Path) -> RunLog {
    let t0 = Instant::now();
    let mut log = RunLog::new(task, cfg);
    if let Err(e) = run_design(task, cfg, out_dir, &mut log) {
        log.error = Some(format!("{e:#}"));
    }
    log.timings.total_s = t0.elapsed().as_secs_f64();
    let body = serde_json::to_string_pretty(&log).expect("run log serializes");
    if let Err(e) = std::fs::create_dir_all(out_dir).and_then(|_| std::fs::write(out_dir.join(RUNLOG), body)) {
        let msg = format!("writing {RUNLOG}: {e}");
        log.error = Some(match log.error.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
    log
}

fn run_design(task: &DesignTask, cfg: &PipelineConfig, dir: &Path, log: &mut RunLog) -> Result<()> {
    cfg.check()?;
    task.check(&cfg.grid)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = task.spec()?;
    let oracle = build_oracle(task.oracle, cfg)?;
    log.oracle = oracle.name().to_string();

    let t = Instant::now();
    let bri = bri_initialize(
        &cfg.template,
        &cfg.bounds,
        &spec,
        oracle.as_ref(),
        &cfg.env.reward,
        cfg.bri_candidates,
        task.seed,
    )?;
    log.timings.bri_s = t.elapsed().as_secs_f64();
    log.pre = Some(Outcome::from(&bri.best));

    let mut best = bri.best.clone();
    if task.rounds > 0 {
        let rl = RldfcdoConfig {
            rounds: task.rounds,
            steps_per_round: task.steps_per_round,
            ..cfg.rldfcdo.clone()
        };
        let mut env_cfg = cfg.env.clone();
        env_cfg.oracle = task.oracle;
        if env_cfg.planned_total_steps == 0 {
            env_cfg.planned_total_steps = (rl.rounds * rl.steps_per_round) as u64;
        }
        let mut env = FilterEnv::new(oracle.clone(), spec.clone(), env_cfg, cfg.bounds, cfg.template.n, task.seed)?;
        let t = Instant::now();
        let res = train_rldfcdo(&mut env, InitialState::Layout(bri.best.layout.clone()), &rl, task.seed)?;
        log.timings.optimize_s = t.elapsed().as_secs_f64();
        log.rounds = res.rounds.clone();
        log.total_steps = res.total_steps;
        if !res.invalid_attempts.is_empty() {
            let bad = res.invalid_attempts.iter().filter(|b| **b).count();
            log.invalid_attempt_fraction = bad as f64 / res.invalid_attempts.len() as f64;
        }
        best = res.best.clone();
        write_artifact(log, dir, "layout_initial", LAYOUT_INITIAL, &bri.best.layout.to_json())?;
        write_artifact(log, dir, "s21_initial", S21_INITIAL, &bri.best.s21.to_csv())?;
        write_artifact(log, dir, "curves", CURVES, &curves_to_csv(&res.curves))?;
    }
    log.post = Some(Outcome::from(&best));
    log.success = cfg.env.is_success(&best.breakdown);

    write_artifact(log, dir, "layout", LAYOUT, &best.layout.to_json())?;
    write_artifact(log, dir, "s21", S21, &best.s21.to_csv())?;
    let (layout_plot, s21_plot) = if task.rounds > 0 {
        (
            layout_svg(&[("before", &bri.best.layout), ("after", &best.layout)]),
            s21_svg(&[("before", &bri.best.s21), ("after", &best.s21)], spec.bands()),
        )
    } else {
        (layout_svg(&[("BRI", &best.layout)]), s21_svg(&[("BRI", &best.s21)], spec.bands()))
    };
    write_artifact(log, dir, "layout_svg", LAYOUT_SVG, &layout_plot)?;
    write_artifact(log, dir, "s21_svg", S21_SVG, &s21_plot)?;
    Ok(())
}

/// Scores a saved layout against `task`'s bands with the configured oracle.
pub fn evaluate_saved(layout: &Layout, task: &DesignTask, cfg: &PipelineConfig) -> Result<Outcome> {
    let oracle = build_oracle(task.oracle, cfg)?;
    let e = evaluate_layout(layout, oracle.as_ref(), &task.spec()?, &cfg.env.reward);
    Ok(Outcome::from(&e))
}

/// One row of `tasks.csv`. Metric fields are empty for failed tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub pre_iou: Option<f64>,
    pub post_iou: Option<f64>,
    pub loss_db: Option<f64>,
    pub score: Option<f64>,
    pub success: bool,
    pub error: Option<String>,
}

pub const TASKS_HEADER: &str = "name,lo,hi,seed,pre_iou,post_iou,loss_db,score,success,error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn tasks_to_csv(rows: &[TaskRow]) -> String {
    let mut s = format!("{TASKS_HEADER}\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['\n', ','], ";").replace('"', "'");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.lo,
            r.hi,
            r.seed,
            opt(r.pre_iou),
            opt(r.post_iou),
            opt(r.loss_db),
            opt(r.score),
            r.success,
            err
        );
    }
    s
}

/// Sorted values with cumulative fraction `(i + 1) / n`.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_tasks: usize,
    pub n_completed: usize,
    pub n_failed: usize,
    pub n_success: usize,
    pub bucket_counts: Vec<usize>,
    pub mean_iou: f64,
    pub mean_loss_db: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub rows: Vec<TaskRow>,
    pub summary: BatchSummary,
    pub dir: PathBuf,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Samples `n_tasks` tasks from the configured bandwidth buckets and runs
/// each into `out_dir/<task name>/` on up to `cfg.workers` threads. Writes
/// `tasks.csv`, `cdf.csv` and `summary.json`. Failed tasks are recorded and
/// left out of the means and CDFs.
pub fn batch_evaluate(n_tasks: usize, cfg: &PipelineConfig, seed: u64, out_dir: &Path) -> Result<BatchReport> {
    if n_tasks == 0 {
        bail!("batch needs at least one task");
    }
    cfg.check()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let tasks = sample_tasks(n_tasks, cfg, seed);
    let slots: Mutex<Vec<Option<TaskRow>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(tasks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let log = design_end_to_end(task, cfg, &out_dir.join(&task.name));
                let row = TaskRow {
                    name: task.name.clone(),
                    lo: task.bands[0].lo,
                    hi: task.bands[0].hi,
                    seed: task.seed,
                    pre_iou: log.pre.map(|o| o.breakdown.iou_percent),
                    post_iou: log.post.map(|o| o.breakdown.iou_percent),
                    loss_db: log.post.map(|o| o.breakdown.insertion_loss_db),
                    score: log.post.map(|o| o.score),
                    success: log.success,
                    error: log.error.clone(),
                };
                slots.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let rows: Vec<TaskRow> = slots.into_inner().unwrap().into_iter().map(|r| r.expect("every task ran")).collect();

    let done: Vec<&TaskRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let summary = BatchSummary {
        n_tasks,
        n_completed: done.len(),
        n_failed: rows.len() - done.len(),
        n_success: done.iter().filter(|r| r.success).count(),
        bucket_counts: bucket_counts(n_tasks, &cfg.buckets),
        mean_iou: mean(done.iter().filter_map(|r| r.post_iou)),
        mean_loss_db: mean(done.iter().filter_map(|r| r.loss_db)),
        mean_score: mean(done.iter().filter_map(|r| r.score)),
    };

    let mut cdf = String::from("metric,value,cumulative\n");
    let metrics: [(&str, fn(&TaskRow) -> Option<f64>); 3] =
        [("iou", |r| r.post_iou), ("loss_db", |r| r.loss_db), ("score", |r| r.score)];
    for (name, get) in metrics {
        let vals: Vec<f64> = done.iter().filter_map(|r| get(r)).collect();
        for (v, c) in empirical_cdf(&vals) {
            let _ = writeln!(cdf, "{name},{v},{c}");
        }
    }
    std::fs::write(out_dir.join("tasks.csv"), tasks_to_csv(&rows))?;
    std::fs::write(out_dir.join("cdf.csv"), cdf)?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(BatchReport {
        rows,
        summary,
        dir: out_dir.to_path_buf(),
    })
}
