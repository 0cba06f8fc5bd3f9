use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use mqd::adaptation::Strategy;
use mqd::metrics::CoverageConfig;
use mqd::{Algorithm, EnvConfig, TaskKind};
use mqd_cli::spec::parse_seeds;
use mqd_cli::{cmd_adapt, cmd_coverage, cmd_evolve, AdaptInputs, AdaptSpec, ExperimentSpec};

#[derive(Parser)]
#[command(name = "mqd", version, about = "Model-based quality-diversity skill discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build repertoires for every algorithm and seed of an experiment.
    Evolve {
        /// Experiment spec (JSON). Without it, a reference-settings run of
        /// all three algorithms on --task is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "obstacle2d")]
        task: TaskKind,
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds and ranges, e.g. `1,2,10-14`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        emit_svg: bool,
    },
    /// Adapt saved skills toward goal behaviors.
    Adapt {
        #[arg(long)]
        repertoire: PathBuf,
        #[arg(long)]
        net: Option<PathBuf>,
        /// CSV with `goal_x,goal_y` columns; random uniform goals otherwise.
        #[arg(long)]
        goals: Option<PathBuf>,
        /// Adaptation spec (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        /// Overrides the environment recorded in the repertoire file.
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print coverage and average quality of a saved repertoire.
    Coverage {
        repertoire: PathBuf,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long, default_value_t = CoverageConfig::DEFAULT_RESOLUTION)]
        resolution: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evolve { config, task, algorithms, out, seeds, jobs, emit_svg } => {
            let mut spec = match config {
                Some(path) => ExperimentSpec::load(&path)?,
                None => ExperimentSpec::new(task, vec![Algorithm::Qd, Algorithm::Mqd, Algorithm::Random], vec![0]),
            };
            if let Some(a) = algorithms {
                spec.algorithms = a;
            }
            if let Some(s) = seeds {
                spec.seeds = parse_seeds(&s)?;
            }
            let Some(out) = out.or_else(|| spec.out.clone()) else {
                bail!("no output directory: pass --out or set \"out\" in the experiment spec");
            };
            let records = cmd_evolve(&spec, &out, jobs, emit_svg)?;
            for r in &records {
                let last = r.output.stats.last().expect("at least one generation");
                println!(
                    "{} seed {}: coverage {:.4} avg_quality {:.4} evaluations {}",
                    r.algorithm.name(),
                    r.seed,
                    last.coverage,
                    last.avg_quality,
                    last.evaluations
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Adapt { repertoire, net, goals, config, strategies, task, out, jobs } => {
            let explicit = config.is_some() || strategies.is_some();
            let mut spec = match config {
                Some(path) => AdaptSpec::load(&path)?,
                None => AdaptSpec::default(),
            };
            if let Some(s) = strategies {
                spec.strategies = s;
            }
            // the default strategy list quietly skips the model without --net
            if !explicit && net.is_none() {
                spec.strategies.retain(|&s| s != Strategy::ModelBased);
            }
            let inputs = AdaptInputs {
                repertoire: &repertoire,
                net: net.as_deref(),
                goals: goals.as_deref(),
                env: task.map(EnvConfig::preset),
            };
            for s in cmd_adapt(&inputs, &spec, &out, jobs)? {
                println!("{}: mean_error {:.5} mean_steps {:.3}", s.strategy.name(), s.mean_error, s.mean_steps);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Coverage { repertoire, task, resolution } => {
            let report = cmd_coverage(&repertoire, task.map(EnvConfig::preset), resolution)?;
            println!("coverage {}", report.coverage);
            match report.avg_quality {
                Some(q) => {
                    println!("avg_quality {q}");
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    eprintln!("error: average quality is undefined for an empty repertoire");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    }
}
