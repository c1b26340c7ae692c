use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dfc_core::env::OracleKind;
use dfc_core::surrogate::SParams;
use dfc_core::Layout;
use dfc_gnn::{generate_dataset, train_surrogate, Dataset};
use dfc_pipeline::pipeline::{build_oracle, evaluate_saved, EXIT_ERROR, EXIT_NOT_MET, EXIT_SUCCESS, LAYOUT_SVG, S21_SVG};
use dfc_pipeline::svg::{layout_svg, s21_svg};
use dfc_pipeline::{batch_evaluate, design_end_to_end, parse_bands, DesignTask, PipelineConfig, RunLog};

#[derive(Debug, Parser)]
#[command(name = "dfcopt", version, about = "Coupled-resonator filter layout design and optimization")]
struct Cli {
    /// RNG seed for sampling, BRI and training.
    #[arg(long, global = true, env = "DFCOPT_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON config; omitted fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    oracle: Option<OracleArg>,
    /// GAT parameter file for `--oracle gnn`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory [default: ./runs/<timestamp>-<seed>/].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleArg {
    Analytic,
    Gnn,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// BRI followed by optimization rounds; writes layouts, s21, plots and a run log.
    Design {
        /// Target bands, e.g. 240:250 or 240:250,300:310.
        #[arg(long)]
        bands: String,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        steps_per_round: Option<usize>,
    },
    /// BRI initialization only.
    Bri {
        #[arg(long)]
        bands: String,
    },
    /// Score a layout JSON and print the breakdown.
    Evaluate {
        layout: PathBuf,
        /// Target bands. Not needed with --runlog.
        #[arg(long, required_unless_present = "runlog")]
        bands: Option<String>,
        /// Take bands, oracle and config from an earlier run.
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Train the GAT surrogate on a dataset; writes gat.json and train_report.json.
    TrainSurrogate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Label random layouts with the analytic oracle; writes dataset.jsonl.
    GenDataset {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sample tasks from the bandwidth buckets and design each.
    Batch {
        #[arg(long, default_value_t = 15)]
        tasks: usize,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        steps_per_round: Option<usize>,
    },
    /// Render a layout JSON and optionally an s21 CSV to SVG.
    Plot {
        layout: PathBuf,
        #[arg(long)]
        s21: Option<PathBuf>,
        #[arg(long)]
        bands: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        PathBuf::from("runs").join(format!("{stamp}-{}", cli.seed))
    })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = cli.oracle {
        cfg.env.oracle = match o {
            OracleArg::Analytic => OracleKind::Analytic,
            OracleArg::Gnn => OracleKind::Gnn,
        };
    }
    if let Some(p) = &cli.checkpoint {
        cfg.gnn_checkpoint = Some(p.clone());
    }
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn report(log: &RunLog, dir: &Path) -> i32 {
    if let (Some(pre), Some(post)) = (log.pre, log.post) {
        eprintln!(
            "IOU {:.2}% -> {:.2}%, insertion loss {:.2} dB -> {:.2} dB, score {:.4} -> {:.4}",
            pre.breakdown.iou_percent,
            post.breakdown.iou_percent,
            pre.breakdown.insertion_loss_db,
            post.breakdown.insertion_loss_db,
            pre.score,
            post.score
        );
    }
    if let Some(e) = &log.error {
        eprintln!("error: {e}");
    }
    println!("{}", dir.join(dfc_pipeline::pipeline::RUNLOG).display());
    log.exit_code()
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli)?;
    let dir = out_dir(&cli);
    match &cli.cmd {
        Cmd::Design {
            bands,
            rounds,
            steps_per_round,
        } => {
            let mut task = DesignTask::new("design", parse_bands(bands)?, cli.seed, &cfg);
            task.rounds = rounds.unwrap_or(task.rounds);
            task.steps_per_round = steps_per_round.unwrap_or(task.steps_per_round);
            let log = design_end_to_end(&task, &cfg, &dir);
            Ok(report(&log, &dir))
        }
        Cmd::Bri { bands } => {
            let mut task = DesignTask::new("bri", parse_bands(bands)?, cli.seed, &cfg);
            task.rounds = 0;
            let log = design_end_to_end(&task, &cfg, &dir);
            Ok(report(&log, &dir))
        }
        Cmd::Evaluate { layout, bands, runlog } => {
            let layout = Layout::from_json(&read(layout)?)?;
            let task = match (runlog, bands) {
                (Some(p), _) => {
                    let log = RunLog::load(p)?;
                    cfg = log.config;
                    log.task
                }
                (None, Some(b)) => DesignTask::new("evaluate", parse_bands(b)?, cli.seed, &cfg),
                (None, None) => bail!("evaluate needs --bands or --runlog"),
            };
            let out = evaluate_saved(&layout, &task, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(if cfg.env.is_success(&out.breakdown) { EXIT_SUCCESS } else { EXIT_NOT_MET })
        }
        Cmd::GenDataset { samples } => {
            let n = samples.unwrap_or(cfg.dataset_samples);
            let oracle = build_oracle(OracleKind::Analytic, &cfg)?;
            let data = generate_dataset(&cfg.template, &cfg.bounds, oracle.as_ref(), n, cli.seed)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("dataset.jsonl");
            data.save(&path)?;
            println!("{}", path.display());
            Ok(EXIT_SUCCESS)
        }
        Cmd::TrainSurrogate { dataset } => {
            let data = Dataset::load(dataset)?;
            if data.grid != cfg.grid {
                bail!("dataset grid {:?} differs from the configured grid {:?}", data.grid, cfg.grid);
            }
            let (model, rep) =
                train_surrogate(&data, &cfg.bounds, &cfg.surrogate, cfg.gat.clone(), &cfg.surrogate_train, cli.seed)?;
            std::fs::create_dir_all(&dir)?;
            let ckpt = dir.join("gat.json");
            dfc_nn::checkpoint::save(&model.store, &ckpt)?;
            std::fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&rep)?)?;
            eprintln!(
                "best epoch {} of {}, val L1 {:.5}, baseline {:.5} ({:.1}%)",
                rep.best_epoch,
                rep.epochs.len(),
                rep.best_val_loss,
                rep.baseline_val_loss,
                100.0 * rep.relative_to_baseline()
            );
            println!("{}", ckpt.display());
            Ok(EXIT_SUCCESS)
        }
        Cmd::Batch {
            tasks,
            workers,
            rounds,
            steps_per_round,
        } => {
            if let Some(w) = workers {
                cfg.workers = *w;
            }
            if let Some(r) = rounds {
                cfg.rldfcdo.rounds = *r;
            }
            if let Some(s) = steps_per_round {
                cfg.rldfcdo.steps_per_round = *s;
            }
            let rep = batch_evaluate(*tasks, &cfg, cli.seed, &dir)?;
            let s = &rep.summary;
            eprintln!(
                "{} tasks, {} failed, {} met the target; mean IOU {:.2}%, mean insertion loss {:.2} dB",
                s.n_tasks, s.n_failed, s.n_success, s.mean_iou, s.mean_loss_db
            );
            println!("{}", dir.join("summary.json").display());
            Ok(if s.n_success == s.n_tasks { EXIT_SUCCESS } else { EXIT_NOT_MET })
        }
        Cmd::Plot { layout, s21, bands } => {
            let l = Layout::from_json(&read(layout)?)?;
            std::fs::create_dir_all(&dir)?;
            let name = layout.file_stem().and_then(|s| s.to_str()).unwrap_or("layout").to_string();
            std::fs::write(dir.join(LAYOUT_SVG), layout_svg(&[(name.as_str(), &l)]))?;
            println!("{}", dir.join(LAYOUT_SVG).display());
            if let Some(p) = s21 {
                let s = SParams::from_csv(&read(p)?)?;
                let b = bands.as_deref().map(parse_bands).transpose()?.unwrap_or_default();
                std::fs::write(dir.join(S21_SVG), s21_svg(&[("s21", &s)], &b))?;
                println!("{}", dir.join(S21_SVG).display());
            }
            Ok(EXIT_SUCCESS)
        }
    }
}
