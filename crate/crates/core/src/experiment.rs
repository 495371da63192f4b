//! Experiment files and results bundles.
//!
//! A config names a game (a JSON game file or a generator), a pure-policy
//! space, and the MAMEX settings. Running it writes a bundle directory:
//!
//! * `record.csv`: one row per episode,
//!   `k,target,gap_agent_0..,aggregate_gap,cum_regret,train_err,pred_err,ms`
//! * `policy_out.json`: the uniform mixture of deployed policies
//! * `config_echo.json`: the resolved config
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::Target;
use crate::evaluate::{equilibrium_gaps, EvalError};
use crate::game::{bimatrix_game, make_lock, make_random_tabular, GameError, GameFile, MarkovGame, RandomTabularSpec};
use crate::mamex::{self, EpisodeRecord, MamexConfig, MamexError, MamexRun, Mode};
use crate::optimize::InnerSolveConfig;
use crate::policy::{AgentPolicySpec, MixedPolicyFile, PolicyError, PolicySpaceSpec, PurePolicySpace, JOINT_POLICY_CAP};

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Unreadable or malformed inputs.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Mamex(#[from] MamexError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

impl ExperimentError {
    /// Whether the failure is attributable to the inputs rather than the run.
    pub fn is_input(&self) -> bool {
        matches!(self, Self::Input(_) | Self::Game(_) | Self::Policy(_) | Self::Mamex(MamexError::Config(_)))
    }
}

/// Where the game comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    /// Path to a game file, relative to the config file.
    Path(PathBuf),
    Generator(GeneratorSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    RandomTabular { states: usize, horizon: usize, actions: Vec<usize>, seed: u64 },
    /// Two-agent combination lock with a bait reward at the first step.
    Lock { horizon: usize, bait: f64, seed: u64 },
    /// One-state, one-step game; `payoffs[agent][joint action]` in `[0, 1]`.
    Bimatrix { actions: Vec<usize>, payoffs: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MamexSection {
    #[serde(rename = "K")]
    pub episodes: usize,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub episode_budget_secs: Option<f64>,
}

fn default_target() -> Target {
    Target::Cce
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqSection {
    #[serde(default)]
    pub iters: Option<usize>,
}

fn default_space() -> PolicySpaceSpec {
    PolicySpaceSpec::Shared(AgentPolicySpec::DeterministicEnum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSource,
    #[serde(default = "default_space")]
    pub policy_space: PolicySpaceSpec,
    pub mamex: MamexSection,
    #[serde(default)]
    pub inner_solver: InnerSolveConfig,
    #[serde(default)]
    pub eq: EqSection,
}

impl ExperimentConfig {
    /// Reads a config; a relative game path is resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Input(format!("malformed config {}: {e}", path.display())))?;
        if let GameSource::Path(p) = &mut cfg.game {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn mamex_config(&self) -> MamexConfig {
        let m = &self.mamex;
        MamexConfig {
            episodes: m.episodes,
            eta: m.eta,
            target: m.target,
            mode: m.mode,
            seed: m.seed,
            inner_solver: self.inner_solver.clone(),
            eq_iters: self.eq.iters,
            episode_budget_secs: m.episode_budget_secs,
            keep_payoffs: false,
        }
    }

    pub fn build_game(&self) -> Result<MarkovGame<f64>, ExperimentError> {
        Ok(match &self.game {
            GameSource::Path(p) => {
                if !p.exists() {
                    return Err(ExperimentError::Input(format!("game file {} does not exist", p.display())));
                }
                GameFile::load(p)?.into_game()?
            }
            GameSource::Generator(GeneratorSpec::RandomTabular { states, horizon, actions, seed }) => {
                make_random_tabular(&RandomTabularSpec::new(*states, *horizon, actions.clone(), 1.0, *seed))?
            }
            GameSource::Generator(GeneratorSpec::Lock { horizon, bait, seed }) => make_lock(*horizon, *bait, *seed)?.game,
            GameSource::Generator(GeneratorSpec::Bimatrix { actions, payoffs }) => bimatrix_game(actions.clone(), payoffs)?,
        })
    }

    pub fn build_space(&self, game: &MarkovGame<f64>) -> Result<PurePolicySpace<f64>, ExperimentError> {
        Ok(PurePolicySpace::from_spec(game, &self.policy_space, JOINT_POLICY_CAP)?)
    }
}

/// Final numbers of one run, as used by sweep summaries.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub cum_regret: f64,
    /// Exact gap of the output mixture for the configured target.
    pub output_gap: f64,
    pub aborted: bool,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let err = |source: std::io::Error| ExperimentError::Write { path: path.display().to_string(), source };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn to_json_pretty<S: Serialize>(value: &S) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("plain data serializes");
    text.push(b'\n');
    text
}

/// `record.csv` contents; the agent-level training and prediction errors
/// are summed across agents.
pub fn record_csv(records: &[EpisodeRecord<f64>], target: Target) -> Vec<u8> {
    let n = records.first().map_or(0, |r| r.gaps.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string(), "target".to_string()];
    header.extend((0..n).map(|i| format!("gap_agent_{i}")));
    header.extend(["aggregate_gap", "cum_regret", "train_err", "pred_err", "ms"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let mut row = vec![r.k.to_string(), target.as_str().to_string()];
        row.extend(r.gaps.iter().map(f64::to_string));
        row.push(r.aggregate_gap.to_string());
        row.push(r.cum_regret.to_string());
        row.push(r.train_err.iter().sum::<f64>().to_string());
        row.push(r.pred_err.iter().sum::<f64>().to_string());
        row.push(format!("{:.3}", r.ms));
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Runs the experiment and writes its bundle into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(MamexRun<f64>, RunSummary), ExperimentError> {
    let game = cfg.build_game()?;
    let space = cfg.build_space(&game)?;
    let mcfg = cfg.mamex_config();
    mcfg.validate()?;
    let run = mamex::run(&game, &space, &mcfg)?;
    let output_gap = equilibrium_gaps(&game, &run.output, &space)?.aggregate(mcfg.target)?;
    let summary = RunSummary { episodes: run.records.len(), cum_regret: run.cum_regret(), output_gap, aborted: run.aborted };

    std::fs::create_dir_all(out).map_err(|source| ExperimentError::Write { path: out.display().to_string(), source })?;
    let policy: MixedPolicyFile = run.output.to_file();
    write_atomic(&out.join("config_echo.json"), &to_json_pretty(cfg))?;
    write_atomic(&out.join("policy_out.json"), &to_json_pretty(&policy))?;
    // Written last: a bundle without record.csv is incomplete.
    write_atomic(&out.join("record.csv"), &record_csv(&run.records, mcfg.target))?;
    Ok((run, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_generator_and_path_sources() {
        let text = r#"{"game": {"generator": "random_tabular", "states": 2, "horizon": 2, "actions": [2, 2], "seed": 3},
                       "mamex": {"K": 16}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(matches!(cfg.game, GameSource::Generator(GeneratorSpec::RandomTabular { .. })));
        assert_eq!(cfg.policy_space, default_space());
        let text = r#"{"game": "g.json", "mamex": {"K": 16, "mode": "model_based"}, "eq": {"iters": 50}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.game, GameSource::Path("g.json".into()));
        assert_eq!(cfg.mamex_config().eq_iters, Some(50));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"game": "g.json", "mamex": {"K": 16, "episodes": 3}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
