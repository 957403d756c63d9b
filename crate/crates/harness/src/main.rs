use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sami_core::envs::{Skill, SplitName};
use sami_harness::agent::{AgentPolicy, Checkpoint, Policy, ScriptedKind, ScriptedPolicy};
use sami_harness::eval::{meta_test, parse_split, SplitResult};
use sami_harness::export::{export_embeddings, write_embeddings_csv};
use sami_harness::io::{write_csv, write_json, write_jsonl, ResultHeader};
use sami_harness::report::{self, REPORT_COLUMNS};
use sami_harness::suites::{run_suite, Suite};
use sami_harness::sweep::{self, SweepAxis, SWEEP_COLUMNS};
use sami_harness::train::{meta_train_with, RunResult, TrainOptions};
use sami_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "sami",
    version,
    about = "Skill-aware contrastive context encoders for meta-RL"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Meta-train one seed and write result, metrics, checkpoint and summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Print a progress line every this many rounds (0 disables).
        #[arg(long, default_value_t = 10)]
        log_every: usize,
    },
    /// Meta-test a checkpoint or a scripted controller on one split.
    Eval {
        #[arg(long, conflicts_with = "scripted", required_unless_present = "scripted")]
        checkpoint: Option<PathBuf>,
        /// push, lift or oracle.
        #[arg(long)]
        scripted: Option<String>,
        /// Environment and splits for a scripted controller.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        split: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (value, seed) pair in worker processes and aggregate.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// buffer_size, contrastive_batch, alpha or K.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Numerical estimator checks printed as CSV.
    Estimators {
        /// bounds, oracle or tightness.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final-step embeddings of evaluation episodes with a PCA projection.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "extreme")]
        split: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "embeddings.csv")]
        out: PathBuf,
    },
    /// Per-split tables with mean ± std and paired t-tests.
    Report {
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// File stem shared by all outputs of one training run.
fn run_stem(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}-seed{seed}", config.variant)
}

const SUMMARY_COLUMNS: [&str; 8] = [
    "split",
    "cells",
    "episodes",
    "success_rate",
    "mean_return",
    "push_fraction",
    "lift_fraction",
    "other_fraction",
];

fn summary_row(r: &SplitResult) -> Vec<String> {
    vec![
        r.split.to_string(),
        r.cells.len().to_string(),
        r.episodes.len().to_string(),
        r.success_rate.to_string(),
        r.mean_return.to_string(),
        r.skills.fraction(Skill::Push).to_string(),
        r.skills.fraction(Skill::Lift).to_string(),
        r.skills.fraction(Skill::Other).to_string(),
    ]
}

fn print_split(r: &SplitResult) {
    println!(
        "{:<9} success {:.3}  return {:8.2}  push {:.2} lift {:.2} other {:.2}",
        r.split,
        r.success_rate,
        r.mean_return,
        r.skills.fraction(Skill::Push),
        r.skills.fraction(Skill::Lift),
        r.skills.fraction(Skill::Other)
    );
}

fn train(config: Option<&Path>, seed: u64, out: &Path, log_every: usize) -> Result<()> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    create_dir(out)?;
    let mut rounds = 0usize;
    let output = meta_train_with(&cfg, seed, TrainOptions::default(), &mut |m| {
        rounds += 1;
        if log_every > 0 && rounds.is_multiple_of(log_every) {
            eprintln!(
                "steps {:>7}  return {:8.2}  success {:.2}  critic {:.3}  actor {:.3}  alpha {:.3}{}",
                m.env_steps,
                m.recent_return,
                m.recent_success,
                m.critic_loss,
                m.actor_loss,
                m.entropy_alpha,
                m.estimate.map(|e| format!("  estimate {e:.3}")).unwrap_or_default()
            );
        }
    })?;
    let stem = run_stem(&cfg, seed);
    write_json(&out.join(format!("{stem}.json")), &output.result)?;
    write_jsonl(
        &out.join(format!("{stem}.metrics.jsonl")),
        Some(&output.result.header),
        &output.metrics,
    )?;
    output.checkpoint.save(&out.join(format!("{stem}.checkpoint")))?;
    let rows: Vec<Vec<String>> = output.result.evaluation.iter().map(summary_row).collect();
    write_csv(
        &out.join(format!("{stem}.summary.csv")),
        Some(&output.result.header),
        &SUMMARY_COLUMNS,
        &rows,
    )?;
    for r in &output.result.evaluation {
        print_split(r);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    checkpoint: Option<&Path>,
    scripted: Option<&str>,
    config: Option<&Path>,
    split: &str,
    episodes: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let split = parse_split(split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cfg, result) = match (checkpoint, scripted) {
        (Some(path), _) => {
            let ckpt = Checkpoint::load(path)?;
            let agent = ckpt.to_agent()?;
            let cfg = ckpt.config;
            let n = episodes.unwrap_or(cfg.training.eval_episodes_per_task);
            let mut policy = AgentPolicy::new(&agent, &cfg.sac, true);
            let r = meta_test(&mut policy as &mut dyn Policy, &cfg, split, n, &mut rng)?;
            (cfg, r)
        }
        (None, Some(kind)) => {
            let cfg = load_config(config)?;
            let kind: ScriptedKind = kind.parse()?;
            let n = episodes.unwrap_or(cfg.training.eval_episodes_per_task);
            let mut policy = ScriptedPolicy::new(kind, cfg.physics);
            let r = meta_test(&mut policy, &cfg, split, n, &mut rng)?;
            (cfg, r)
        }
        (None, None) => return Err(HarnessError::Config("eval needs --checkpoint or --scripted".into())),
    };
    print_split(&result);
    for c in &result.cells {
        println!(
            "  mass {:>5} friction {:>5}  success {:.2}  return {:8.2}",
            c.mass, c.friction, c.success_rate, c.mean_return
        );
    }
    if let Some(out) = out {
        let header = ResultHeader::new(&cfg, seed)?;
        write_csv(out, Some(&header), &SUMMARY_COLUMNS, &[summary_row(&result)])?;
    }
    Ok(())
}

fn wait_child(path: &Path, mut child: Child) -> Result<()> {
    let status = child.wait().map_err(|e| HarnessError::Worker(e.to_string()))?;
    if status.success() {
        Ok(())
    } else {
        Err(HarnessError::Worker(format!(
            "worker for {} exited with {status}",
            path.display()
        )))
    }
}

fn run_sweep(config: Option<&Path>, axis: &str, values: &[f64], jobs: usize, out: &Path) -> Result<()> {
    let base = load_config(config)?;
    let axis: SweepAxis = axis.parse()?;
    let runs = sweep::plan(&base, axis, values)?;
    let exe = std::env::current_exe().map_err(|e| HarnessError::Worker(e.to_string()))?;
    create_dir(out)?;
    let mut running: Vec<(PathBuf, Child)> = Vec::new();
    let mut expected = Vec::new();
    for run in &runs {
        let dir = out.join(format!("{}-{}", axis.as_str(), run.value));
        create_dir(&dir)?;
        let cfg_path = dir.join("config.json");
        write_json(&cfg_path, &run.config)?;
        expected.push((run.value, dir.join(format!("{}.json", run_stem(&run.config, run.seed)))));
        if running.len() >= jobs.max(1) {
            let (p, c) = running.remove(0);
            wait_child(&p, c)?;
        }
        eprintln!("{} = {} seed {}", axis.as_str(), run.value, run.seed);
        let child = Command::new(&exe)
            .args(["train", "--log-every", "0", "--seed", &run.seed.to_string(), "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&dir)
            .stdout(std::process::Stdio::null())
            .spawn()
            .map_err(|e| HarnessError::Worker(e.to_string()))?;
        running.push((dir, child));
    }
    for (p, c) in running {
        wait_child(&p, c)?;
    }
    let mut results = Vec::new();
    for (value, path) in expected {
        let r: RunResult = sami_harness::io::read_json(&path)?;
        results.push((value, r));
    }
    let rows = sweep::aggregate(axis, &results);
    let table: Vec<Vec<String>> = rows.iter().map(sweep::row_fields).collect();
    let header = ResultHeader::new(&base, base.seeds.first().copied().unwrap_or(0))?;
    write_csv(&out.join("sweep.csv"), Some(&header), &SWEEP_COLUMNS, &table)?;
    print_csv(&SWEEP_COLUMNS, &table)
}

fn print_csv(columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| HarnessError::io("<stdout>", e))
}

fn estimators(suite: &str, seed: u64, out: Option<&Path>) -> Result<bool> {
    let suite: Suite = suite.parse()?;
    let table = run_suite(suite, seed)?;
    let cols: Vec<&str> = table.columns.iter().map(String::as_str).collect();
    print_csv(&cols, &table.rows)?;
    if let Some(out) = out {
        let header = ResultHeader::new(&ExperimentConfig::default(), seed)?;
        write_csv(out, Some(&header), &cols, &table.rows)?;
    }
    Ok(table.passed)
}

fn export(checkpoint: &Path, split: &str, episodes: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let split: SplitName = parse_split(split)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let agent = ckpt.to_agent()?;
    let n = episodes.unwrap_or(ckpt.config.training.eval_episodes_per_task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let export = export_embeddings(&agent, &ckpt.config, split, n, &mut rng)?;
    write_embeddings_csv(out, &ckpt.header, &export)?;
    eprintln!(
        "{} rows, top eigenvalues {:?}",
        export.rows.len(),
        &export.pca.eigenvalues[..export.pca.components.len()]
    );
    Ok(())
}

fn run_report(results: &Path, csv_out: Option<&Path>) -> Result<()> {
    let loaded = report::load_results(results)?;
    if loaded.is_empty() {
        return Err(HarnessError::Config(format!(
            "no run results under {}",
            results.display()
        )));
    }
    let rep = report::build(&loaded)?;
    print!("{}", rep.to_markdown());
    if let Some(p) = csv_out {
        write_csv(p, None, &REPORT_COLUMNS, &rep.csv_rows())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::Train {
            config,
            seed,
            out,
            log_every,
        } => train(config.as_deref(), *seed, out, *log_every).map(|_| true),
        Cmd::Eval {
            checkpoint,
            scripted,
            config,
            split,
            episodes,
            seed,
            out,
        } => eval(
            checkpoint.as_deref(),
            scripted.as_deref(),
            config.as_deref(),
            split,
            *episodes,
            *seed,
            out.as_deref(),
        )
        .map(|_| true),
        Cmd::Sweep {
            config,
            axis,
            values,
            jobs,
            out,
        } => run_sweep(config.as_deref(), axis, values, *jobs, out).map(|_| true),
        Cmd::Estimators { suite, seed, out } => estimators(suite, *seed, out.as_deref()),
        Cmd::ExportEmbeddings {
            checkpoint,
            split,
            episodes,
            seed,
            out,
        } => export(checkpoint, split, *episodes, *seed, out).map(|_| true),
        Cmd::Report { results, csv } => run_report(results, csv.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
