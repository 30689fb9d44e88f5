use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rodshape::metrics::{table_row, TABLE_HEADER};
use rodshape::pipeline::{self, pose_table_csv, Estimate, RunOptions};
use rodshape::scenario::Scenario;

/// Continuum-robot shape estimation from sparse measurements.
#[derive(Parser)]
#[command(name = "rodshape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a batch of ground-truth backbones as truth_NNN.txt files.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory to write the truth files into.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario: sample measurements, solve every trial, report errors.
    Estimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Run directory for artifacts; nothing is written without it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use truth_NNN.txt files from this directory instead of generating.
        #[arg(long)]
        truth_dir: Option<PathBuf>,
    },
    /// Reconstruct the backbone of a stored estimate at arbitrary arclengths.
    Query {
        /// estimate.json, or a trial directory containing one.
        #[arg(long)]
        estimate: PathBuf,
        /// Comma-separated arclengths in metres.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            conflicts_with = "uniform"
        )]
        s: Vec<f64>,
        /// Evenly spaced arclengths covering [0, L], endpoints included.
        #[arg(long)]
        uniform: Option<usize>,
        /// CSV output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the error reports of existing run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Preset name (S1, S2, S3) or path to a scenario TOML file.
    #[arg(long, default_value = "S1")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads for trial-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut sc = Scenario::resolve(&self.scenario)
            .with_context(|| format!("loading scenario {}", self.scenario))?;
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(trials) = self.trials {
            sc.trials = trials;
        }
        sc.validate()?;
        Ok(sc)
    }
}

fn generate(args: &ScenarioArgs, out: &Path) -> Result<bool> {
    let sc = args.load()?;
    let build = || pipeline::generate_truths(&sc);
    let batch = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()?
            .install(build),
        None => build(),
    }?;
    pipeline::write_truths(out, &batch.truths)?;
    for (k, reason) in &batch.failures {
        eprintln!("trial {k}: generation failed: {reason}");
    }
    println!(
        "wrote {} truth files to {}",
        batch.truths.len(),
        out.display()
    );
    Ok(batch.failures.is_empty())
}

fn estimate(args: &ScenarioArgs, out: Option<PathBuf>, truth_dir: Option<PathBuf>) -> Result<bool> {
    let sc = args.load()?;
    let opts = RunOptions {
        out,
        truth_dir,
        jobs: args.jobs,
    };
    let run = pipeline::run_scenario(&sc, &opts)?;
    for f in &run.summary.failures {
        eprintln!("trial {}: {} failed: {}", f.trial, f.stage, f.reason);
    }
    println!("{TABLE_HEADER}");
    match run.table_row() {
        Some(row) => println!("{row}"),
        None => println!("{} | no completed trials", sc.name),
    }
    Ok(run.summary.all_converged())
}

fn query(path: &Path, s: Vec<f64>, uniform: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let file = if path.is_dir() {
        path.join("estimate.json")
    } else {
        path.to_path_buf()
    };
    let est = Estimate::read(&file).with_context(|| format!("reading {}", file.display()))?;
    let s = match uniform {
        Some(n) if n < 2 => bail!("--uniform needs at least 2 points"),
        Some(n) => (0..n)
            .map(|i| est.length_m * i as f64 / (n - 1) as f64)
            .collect(),
        None if s.is_empty() => bail!("give --s or --uniform"),
        None => s,
    };
    let poses = est.query(&s)?;
    let csv = pose_table_csv(&s, &poses);
    match out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn report(runs: &[PathBuf]) -> Result<()> {
    println!("{TABLE_HEADER}");
    for dir in runs {
        let (name, acc, timing) =
            pipeline::report(dir).with_context(|| format!("reading run {}", dir.display()))?;
        println!("{}", table_row(&name, &acc, &timing));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { scenario, out } => generate(&scenario, &out),
        Command::Estimate {
            scenario,
            out,
            truth_dir,
        } => estimate(&scenario, out, truth_dir),
        Command::Query {
            estimate,
            s,
            uniform,
            out,
        } => query(&estimate, s, uniform, out).map(|_| true),
        Command::Report { runs } => report(&runs).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
