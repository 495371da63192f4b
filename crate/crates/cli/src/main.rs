use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use mamex::equilibrium::{self, NormalFormFile, SolutionFile};
use mamex::evaluate::equilibrium_gaps;
use mamex::experiment::{run_experiment, to_json_pretty, write_atomic, ExperimentConfig, ExperimentError};
use mamex::policy::{JointMixedPolicy, MixedPolicyFile};

mod report;

#[derive(Parser)]
#[command(name = "mamex", version, about = "Optimistic equilibrium learning in episodic Markov games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its results bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace `mamex.seed` in the config.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run a base config over a list of values on one axis.
    Sweep {
        /// Sweep file: `{"base": path, "axis": "K"|"eta"|"seed"|"target", "values": [...]}`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Solve a normal-form game file and print the policy with its certified gaps.
    Eqsolve {
        #[arg(long)]
        config: PathBuf,
        /// Also write the solution here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-agent gaps of a saved mixed policy in the config's game.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Aggregate bundles into regret curves and fitted log-log slopes.
    Report {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with its exit status: 2 for bad input, 1 for runtime errors.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn input(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure { code: if e.is_input() { 2 } else { 1 }, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    base: PathBuf,
    axis: String,
    values: Vec<serde_json::Value>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display())).map_err(input)?;
    serde_json::from_str(&text).with_context(|| format!("malformed {what} {}", path.display())).map_err(input)
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed_override {
        cfg.mamex.seed = seed;
    }
    Ok(cfg)
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    let bad = || anyhow!("value {value} does not fit axis {axis}");
    match axis {
        "K" => cfg.mamex.episodes = value.as_u64().ok_or_else(bad)? as usize,
        "eta" => cfg.mamex.eta = Some(value.as_f64().ok_or_else(bad)?),
        "seed" => cfg.mamex.seed = value.as_u64().ok_or_else(bad)?,
        "target" => cfg.mamex.target = serde_json::from_value(value.clone()).map_err(|_| bad())?,
        other => return Err(anyhow!("unknown sweep axis '{other}' (expected K, eta, seed or target)")),
    }
    Ok(())
}

fn value_label(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cmd_run(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed_override)?;
    let (_, summary) = run_experiment(&cfg, out)?;
    log::info!("wrote {}", out.display());
    println!(
        "episodes {}, cumulative regret {}, output gap {}{}",
        summary.episodes,
        summary.cum_regret,
        summary.output_gap,
        if summary.aborted { " (stopped early: episode budget)" } else { "" }
    );
    Ok(())
}

fn cmd_sweep(spec_path: &Path, out: &Path, jobs: usize) -> Result<(), Failure> {
    let spec: SweepSpec = read_json(spec_path, "sweep file")?;
    let base_path = if spec.base.is_relative() { spec_path.parent().unwrap_or(Path::new(".")).join(&spec.base) } else { spec.base.clone() };
    let base = load_config(&base_path, None)?;
    let mut runs = Vec::new();
    for v in &spec.values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, &spec.axis, v).map_err(input)?;
        runs.push((format!("{}={}", spec.axis, value_label(v)), v, cfg));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("thread pool")?;
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        runs.par_iter().map(|(id, _, cfg)| run_experiment(cfg, &out.join(id))).collect()
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "axis", "value", "episodes", "cum_regret", "output_gap", "aborted"]).context("summary")?;
    for ((id, v, _), res) in runs.iter().zip(results) {
        let (_, s) = res?;
        w.write_record([
            id.clone(),
            spec.axis.clone(),
            value_label(v),
            s.episodes.to_string(),
            s.cum_regret.to_string(),
            s.output_gap.to_string(),
            s.aborted.to_string(),
        ])
        .context("summary")?;
    }
    write_atomic(&out.join("summary.csv"), &w.into_inner().context("summary")?)?;
    println!("{} runs written to {}", runs.len(), out.display());
    Ok(())
}

fn cmd_eqsolve(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let file: NormalFormFile = read_json(path, "normal-form game")?;
    let game = file.to_game::<f64>().map_err(|e| input(e.into()))?;
    let iters = file.iters.unwrap_or_else(|| game.default_iterations());
    let sol = equilibrium::solve(&game, file.kind, iters).map_err(anyhow::Error::from)?;
    let text = to_json_pretty(&SolutionFile::from(&sol));
    if let Some(out) = out {
        write_atomic(out, &text)?;
    }
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

fn cmd_eval(config: &Path, policy: &Path) -> Result<(), Failure> {
    let cfg = load_config(config, None)?;
    let game = cfg.build_game()?;
    let space = cfg.build_space(&game)?;
    let file: MixedPolicyFile = read_json(policy, "policy file")?;
    let mixed = JointMixedPolicy::from_file(&file).map_err(|e| input(e.into()))?;
    let report = equilibrium_gaps(&game, &mixed, &space).map_err(|e| input(e.into()))?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["agent", "cce_gap", "ce_gap", "value"]).context("stdout")?;
    for (i, g) in report.per_agent.iter().enumerate() {
        w.write_record([i.to_string(), g.cce_gap.to_string(), g.ce_gap.to_string(), g.value.to_string()]).context("stdout")?;
    }
    w.flush().context("stdout")?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out, seed_override } => cmd_run(&config, &out, seed_override),
        Command::Sweep { config, out, jobs } => cmd_sweep(&config, &out, jobs),
        Command::Eqsolve { config, out } => cmd_eqsolve(&config, out.as_deref()),
        Command::Eval { config, policy } => cmd_eval(&config, &policy),
        Command::Report { bundles, out } => report::cmd_report(&bundles, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
