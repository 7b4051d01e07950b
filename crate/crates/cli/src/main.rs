use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use truncsa_core::diagnostics::rate_tracker;
use truncsa_core::experiments::{builtin, linearity_report, probe_report, run_replications, Scenario};
use truncsa_core::{read_trajectories_csv, Error, Trajectory};

#[derive(Parser)]
#[command(name = "truncsa", version, about = "Truncated stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Base seed; replication r uses seed + r.
    #[arg(long, env = "TRUNCSA_SEED", default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key=value` edit of the scenario, e.g. `model.theta=0.5` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a built-in scenario: poly, gamma_mt, gamma_ft or ar1.
    Builtin {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
        /// Print the scenario TOML instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// Diagnostics on a trajectory CSV, using the scenario file as the model.
    Diag {
        kind: DiagKind,
        trajectory: PathBuf,
        model: PathBuf,
        /// Steps to evaluate (defaults to the scenario checkpoints).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Inner radius of the drift-strength annulus.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagKind {
    Linearity,
    Rate,
    Probe,
}

enum Failure {
    Core(Error),
    Output(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Output(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_numeric() {
                3
            } else {
                1
            })
        }
        Err(Failure::Output(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, opts } => {
            let s = Scenario::load(&scenario)?.with_overrides(&opts.overrides)?;
            run(&[s], &opts)
        }
        Command::Builtin { name, opts, print } => {
            let scenarios = builtin(&name)?
                .into_iter()
                .map(|s| s.with_overrides(&opts.overrides))
                .collect::<Result<Vec<_>, _>>()?;
            if print {
                let mut out = io::stdout().lock();
                for s in &scenarios {
                    writeln!(out, "{}", s.to_toml()?)?;
                }
                return Ok(());
            }
            run(&scenarios, &opts)
        }
        Command::Diag {
            kind,
            trajectory,
            model,
            checkpoints,
            eps,
        } => diag(kind, &trajectory, &model, checkpoints, eps),
    }
}

fn run(scenarios: &[Scenario], opts: &RunOpts) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    for s in scenarios {
        let result = run_replications(s, opts.seed, opts.jobs)?;
        for path in result.write(&opts.out)? {
            writeln!(out, "{}", path.display())?;
        }
    }
    Ok(())
}

fn load_trajectories(path: &Path) -> Result<Vec<(usize, Trajectory)>, Error> {
    let f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let trajs = read_trajectories_csv(f)?;
    if trajs.is_empty() {
        return Err(Error::Config(format!("{} holds no trajectory rows", path.display())));
    }
    Ok(trajs)
}

fn diag(
    kind: DiagKind,
    traj_path: &Path,
    model: &Path,
    checkpoints: Option<Vec<usize>>,
    eps: f64,
) -> Result<(), Failure> {
    let scenario = Scenario::load(model)?;
    if scenario.is_ar1() {
        return Err(Error::Config("diagnostics need an SA model, not ar1".into()).into());
    }
    let trajs = load_trajectories(traj_path)?;
    let field = scenario.build_field()?;
    let rule = scenario.build_step(&field)?;
    let root = field.root().as_vector().clone();
    let mut reports = Vec::with_capacity(trajs.len());
    for (rep, traj) in &trajs {
        let steps: Vec<usize> = checkpoints
            .clone()
            .unwrap_or_else(|| scenario.checkpoints())
            .into_iter()
            .filter(|&t| t <= traj.len())
            .collect();
        let mut value = match kind {
            DiagKind::Linearity => linearity_report(traj, field.as_ref(), &rule, &steps)?.to_json(),
            DiagKind::Rate => {
                let a = rule
                    .scalar_sequence()
                    .ok_or_else(|| Error::Config("rate diagnostics need a scalar step rule".into()))?;
                let report = rate_tracker(traj, &root, &|t| a(t), scenario.rate_delta, &steps)?;
                serde_json::to_value(report).expect("plain data")
            }
            DiagKind::Probe => serde_json::to_value(probe_report(&scenario, traj, &steps, eps)?).expect("plain data"),
        };
        value["rep"] = (*rep).into();
        reports.push(value);
    }
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &reports).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}
