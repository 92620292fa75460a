use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmm_conflation::pipeline::{self, Job};
use mmm_conflation::{Error, Result};

/// Gaussian-process marketing-mix models: simulation, fitting, holdout
/// comparison, budget optimization and separation tests.
#[derive(Parser)]
#[command(name = "mmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set simulation.replicates=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(RunArgs),
    /// Fit a model to a dataset and save it.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare two models on a holdout and label conflation.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the factorial conflation simulation.
    Megasim(RunArgs),
    /// Recommend spend from saved models.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Saved model; give twice to compare two models.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
    /// Run maximal-separation or seesaw experiments.
    Separate(RunArgs),
    /// Run the analytic identity and Monte Carlo checks.
    Theory(RunArgs),
    /// Draw a CSV as an SVG chart.
    Plot {
        #[command(flatten)]
        run: RunArgs,
        input: Option<PathBuf>,
    },
    /// Re-run a manifest and compare output digests.
    Replay {
        manifest: PathBuf,
        /// Defaults to `replay/` next to the manifest.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn path_value(cwd: &Path, p: &Path) -> toml::Value {
    toml::Value::String(cwd.join(p).display().to_string())
}

fn run_job(name: &str, args: RunArgs, mut extra: Vec<(String, toml::Value)>) -> Result<Vec<String>> {
    let cwd = std::env::current_dir()?;
    let mut overrides = args.set.iter().map(|s| pipeline::parse_override(s)).collect::<Result<Vec<_>>>()?;
    overrides.append(&mut extra);
    if let Some(seed) = args.seed {
        let v = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} exceeds the TOML integer range")))?;
        overrides.push(("seed".into(), toml::Value::Integer(v)));
    }
    let job = Job::build(name, args.config.as_deref(), &overrides, &cwd)?;
    if args.print_config {
        print!("{}", job.config_toml()?);
        return Ok(vec![]);
    }
    let done = pipeline::execute(&job, &cwd.join(&args.out))?;
    let mut lines = done.summary;
    lines.push(format!("manifest: {}", done.manifest_path.display()));
    Ok(lines)
}

fn dispatch(command: Command) -> Result<Vec<String>> {
    let cwd = std::env::current_dir()?;
    match command {
        Command::Simulate(run) => run_job("simulate", run, vec![]),
        Command::Fit { run, data } => run_job("fit", run, data.map(|d| ("data".into(), path_value(&cwd, &d))).into_iter().collect()),
        Command::Evaluate { run, data } => {
            run_job("evaluate", run, data.map(|d| ("data".into(), path_value(&cwd, &d))).into_iter().collect())
        }
        Command::Megasim(run) => run_job("megasim", run, vec![]),
        Command::Optimize { run, models } => {
            let extra = if models.is_empty() {
                vec![]
            } else {
                vec![("models".into(), toml::Value::Array(models.iter().map(|m| path_value(&cwd, m)).collect()))]
            };
            run_job("optimize", run, extra)
        }
        Command::Separate(run) => run_job("separate", run, vec![]),
        Command::Theory(run) => run_job("theory", run, vec![]),
        Command::Plot { run, input } => run_job("plot", run, input.map(|p| ("input".into(), path_value(&cwd, &p))).into_iter().collect()),
        Command::Replay { manifest, out } => {
            let manifest = cwd.join(manifest);
            let out = match out {
                Some(o) => cwd.join(o),
                None => manifest.parent().unwrap_or(&cwd).join("replay"),
            };
            let done = pipeline::replay(&manifest, &out)?;
            Ok(done.summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
