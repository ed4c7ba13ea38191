//! Command-line front end for the `tzpc` pipeline: scenario configuration,
//! assumption checks and the generate-data, learn, offline, simulate and
//! reach stages.

pub mod artifacts;
pub mod check;
pub mod config;
pub mod error;
pub mod pipeline;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tzpc::simloop::RunOptions;

pub use config::ScenarioConfig;
pub use error::{CliError, CliResult};
use pipeline::{Artifacts, RunSummary};

#[derive(Debug, Parser)]
#[command(
    name = "tzpc",
    version,
    about = "Data-driven tube-based zonotopic predictive control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the standing assumptions on a scenario.
    Check(CommonArgs),
    /// Simulate the data-collection experiments.
    GenerateData(CommonArgs),
    /// Learn the model set from the stored trajectories.
    Learn(CommonArgs),
    /// Offline synthesis: disturbance set, gains, tube and terminal set.
    Offline(CommonArgs),
    /// Closed-loop runs, one per seed.
    Simulate(CommonArgs),
    /// Reachable-set illustration for each stored run.
    Reach(CommonArgs),
    /// Every stage in order.
    All(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Run a single closed-loop seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured number of closed-loop steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Suppress the report on stdout.
    #[arg(long)]
    pub quiet: bool,
    /// Record wall-clock solve times in the run CSVs.
    #[arg(long)]
    pub timing: bool,
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Check(a)
            | Command::GenerateData(a)
            | Command::Learn(a)
            | Command::Offline(a)
            | Command::Simulate(a)
            | Command::Reach(a)
            | Command::All(a) => a,
        }
    }
}

/// Logging from the `TZPC_LOG` environment variable, `warn` by default.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("TZPC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write) -> u8 {
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: &Command, out: &mut dyn Write) -> CliResult<u8> {
    let args = cmd.args();
    let cfg = ScenarioConfig::load(&args.config)?;
    let art = Artifacts::new(&args.out);
    let seeds = args.seed.map_or_else(|| cfg.run.seeds.clone(), |s| vec![s]);
    let opts = RunOptions {
        steps: args.steps.unwrap_or(cfg.run.steps),
        timing: args.timing,
    };
    let mut say = |line: String| {
        if !args.quiet {
            let _ = writeln!(out, "{line}");
        }
    };
    match cmd {
        Command::Check(_) => {
            let report = check::run_checks(&cfg)?;
            say(report.to_string().trim_end().to_string());
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::GenerateData(_) => stage_generate(&cfg, &art, &mut say)?,
        Command::Learn(_) => stage_learn(&cfg, &art, &mut say)?,
        Command::Offline(_) => stage_offline(&cfg, &art, &mut say)?,
        Command::Simulate(_) => return stage_simulate(&cfg, &art, &seeds, opts, &mut say),
        Command::Reach(_) => stage_reach(&cfg, &art, &seeds, &mut say)?,
        Command::All(_) => {
            stage_generate(&cfg, &art, &mut say)?;
            stage_learn(&cfg, &art, &mut say)?;
            stage_offline(&cfg, &art, &mut say)?;
            let code = stage_simulate(&cfg, &art, &seeds, opts, &mut say)?;
            stage_reach(&cfg, &art, &seeds, &mut say)?;
            return Ok(code);
        }
    }
    Ok(0)
}

fn stage_generate(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    say: &mut dyn FnMut(String),
) -> CliResult<()> {
    let n = pipeline::generate_data(cfg, art)?;
    say(format!(
        "generate-data: {n} trajectories in {}",
        art.data_dir().display()
    ));
    Ok(())
}

fn stage_learn(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    say: &mut dyn FnMut(String),
) -> CliResult<()> {
    let file = pipeline::learn(cfg, art)?;
    say(format!(
        "learn: rank {} from {} columns, {} generators, delta {:.4e} -> {}",
        file.data_rank,
        file.num_columns,
        file.generators.len(),
        file.delta,
        art.model_set().display()
    ));
    Ok(())
}

fn stage_offline(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    say: &mut dyn FnMut(String),
) -> CliResult<()> {
    let b = pipeline::offline(cfg, art)?;
    say(format!(
        "offline: K = {:?}, kappa = {}, alpha = {:.6e} -> {}",
        b.k_gain.as_slice(),
        b.kappa,
        b.terminal.level(),
        art.bundle().display()
    ));
    Ok(())
}

fn stage_simulate(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    seeds: &[u64],
    opts: RunOptions,
    say: &mut dyn FnMut(String),
) -> CliResult<u8> {
    let summaries = pipeline::simulate(cfg, art, seeds, opts)?;
    for s in &summaries {
        say(summary_line(s));
    }
    let failed: Vec<u64> = summaries
        .iter()
        .filter(|s| !s.completed())
        .map(|s| s.seed)
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        let e = CliError::Runtime(format!("runs aborted for seeds {failed:?}"));
        eprintln!("error: {e}");
        Ok(e.exit_code())
    }
}

fn summary_line(s: &RunSummary) -> String {
    let mut line = format!(
        "simulate: seed {} {:?} after {} steps, min slack x {:.3e} u {:.3e}, max tube distance {:.3e}",
        s.seed, s.outcome, s.steps, s.min_slack_x, s.min_slack_u, s.max_tube_distance
    );
    if let Some(ms) = s.max_solve_ms {
        line.push_str(&format!(", max solve {ms:.2} ms"));
    }
    line
}

fn stage_reach(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    seeds: &[u64],
    say: &mut dyn FnMut(String),
) -> CliResult<()> {
    pipeline::reach(cfg, art, seeds)?;
    say(format!("reach: {} reachable-set files", seeds.len()));
    Ok(())
}
