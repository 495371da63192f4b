//! The MAMEX episode loop: optimistic payoffs per agent and joint pure
//! policy, an equilibrium of those payoffs, one sampled episode, repeat.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrepancy::{ell_hellinger_with_occupancy, ell_model_free_with_occupancy, TransitionLedger};
use crate::equilibrium::{self, EquilibriumError, NormalFormGame, Target};
use crate::evaluate::{gaps_on_tensor, occupancy, payoff_tensor, EvalError};
use crate::game::MarkovGame;
use crate::hypothesis::Hypothesis;
use crate::optimize::{regularized_payoff, HypothesisClass, InnerSolveConfig, OptimizeError};
use crate::policy::{JointMixedPolicy, JointPolicyTable, PolicyError, PurePolicySpace};
use crate::scalar::Scalar;

/// Smallest episode count the analysis covers.
pub const MIN_EPISODES: usize = 16;

#[derive(Debug, Error)]
pub enum MamexError {
    #[error("invalid MAMEX config: {0}")]
    Config(String),
    #[error("episode {episode}, agent {agent}, joint policy {policy}: {source}")]
    Payoff { episode: usize, agent: usize, policy: usize, source: OptimizeError },
    #[error("episode {episode}: {source}")]
    Equilibrium { episode: usize, source: EquilibriumError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    ModelFree,
    ModelBased,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ModelFree => "model_free",
            Self::ModelBased => "model_based",
        }
    }

    pub fn tabular_class<T: Scalar>(self) -> HypothesisClass<T> {
        match self {
            Self::ModelFree => HypothesisClass::TabularQ,
            Self::ModelBased => HypothesisClass::TabularModel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MamexConfig {
    /// Number of episodes `K`.
    #[serde(rename = "K")]
    pub episodes: usize,
    /// Regularization weight; `4/√K` when absent. Zero disables exploration.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub inner_solver: InnerSolveConfig,
    /// Equilibrium iteration budget; `max(10⁴, 100·|Π|)` when absent.
    #[serde(default)]
    pub eq_iters: Option<usize>,
    /// Stop after the first episode that takes longer than this.
    #[serde(default)]
    pub episode_budget_secs: Option<f64>,
    /// Keep the optimistic payoff tensors in each record.
    #[serde(default)]
    pub keep_payoffs: bool,
}

fn default_target() -> Target {
    Target::Cce
}

impl MamexConfig {
    pub fn new(episodes: usize, target: Target, mode: Mode, seed: u64) -> Self {
        Self {
            episodes,
            eta: None,
            target,
            mode,
            seed,
            inner_solver: InnerSolveConfig::default(),
            eq_iters: None,
            episode_budget_secs: None,
            keep_payoffs: false,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(4.0 / (self.episodes as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), MamexError> {
        if self.episodes < MIN_EPISODES {
            return Err(MamexError::Config(format!("K must be at least {MIN_EPISODES}, got {}", self.episodes)));
        }
        let eta = self.eta();
        if !(0.0..=1.0).contains(&eta) {
            return Err(MamexError::Config(format!("eta must lie in [0, 1], got {eta}")));
        }
        if let Some(b) = self.episode_budget_secs {
            if !(b.is_finite() && b > 0.0) {
                return Err(MamexError::Config(format!("episode budget must be positive, got {b}")));
            }
        }
        if self.eq_iters == Some(0) {
            return Err(MamexError::Config("eq_iters must be positive".into()));
        }
        self.inner_solver.validate().map_err(|e| MamexError::Config(e.to_string()))
    }
}

/// Everything recorded for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord<T> {
    /// One-based episode index.
    pub k: usize,
    /// The deployed policy `π^k`.
    pub policy: JointMixedPolicy<T>,
    /// Joint pure policy `ζ^k` sampled from `π^k` and executed.
    pub sampled: usize,
    /// Exact per-agent gaps of `π^k` in the true game.
    pub gaps: Vec<T>,
    pub aggregate_gap: T,
    pub cum_regret: T,
    /// Gaps of `π^k` on the optimistic payoffs, as certified by the solver.
    pub solver_gaps: Vec<T>,
    /// Per agent: `Σ_{s<k} ℓ^s(f̂, ζ^k)` with the true discrepancy.
    pub train_err: Vec<T>,
    /// Per agent: `V_f̂^{ζ^k}(ρ) − V^{ζ^k}(ρ)`.
    pub pred_err: Vec<T>,
    /// Optimistic payoff tensors, one per agent, if requested.
    pub payoffs: Option<Vec<Vec<T>>>,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MamexRun<T> {
    pub records: Vec<EpisodeRecord<T>>,
    /// Uniform mixture of the deployed policies.
    pub output: JointMixedPolicy<T>,
    /// Set when the episode budget cut the run short.
    pub aborted: bool,
}

impl<T: Scalar> MamexRun<T> {
    pub fn cum_regret(&self) -> T {
        self.records.last().map_or(T::zero(), |r| r.cum_regret)
    }
}

fn derive_seed(master: u64, stream: u64, k: usize) -> u64 {
    master ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs MAMEX with the tabular class implied by `cfg.mode`.
pub fn run<T: Scalar>(game: &MarkovGame<T>, space: &PurePolicySpace<T>, cfg: &MamexConfig) -> Result<MamexRun<T>, MamexError> {
    run_with_class(game, space, &cfg.mode.tabular_class(), cfg)
}

/// Runs MAMEX over an explicit hypothesis class.
pub fn run_with_class<T: Scalar>(
    game: &MarkovGame<T>,
    space: &PurePolicySpace<T>,
    class: &HypothesisClass<T>,
    cfg: &MamexConfig,
) -> Result<MamexRun<T>, MamexError> {
    cfg.validate()?;
    space.check_against(game)?;
    let n = game.n_agents();
    let eta = T::of(cfg.eta());
    let truth = payoff_tensor(game, space);
    let tables: Vec<JointPolicyTable<T>> = (0..space.joint_size()).map(|j| JointPolicyTable::from_space(space, j)).collect();
    let iters = cfg.eq_iters.unwrap_or_else(|| truth.default_iterations());
    let budget = cfg.episode_budget_secs.map(Duration::from_secs_f64);

    let mut ledger = TransitionLedger::for_game(game);
    let mut executed_occ = vec![T::zero(); game.horizon() * game.n_states() * game.n_joint()];
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut deployed = Vec::with_capacity(cfg.episodes);
    let mut cum = T::zero();
    let mut aborted = false;

    for k in 1..=cfg.episodes {
        let start = Instant::now();
        let solve_seed = derive_seed(cfg.seed, 1, k);
        let jobs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..tables.len()).map(move |j| (i, j))).collect();
        let solutions = jobs
            .par_iter()
            .map(|&(i, j)| {
                regularized_payoff(class, game, &ledger, &tables[j], i, eta, &cfg.inner_solver, solve_seed)
                    .map_err(|source| MamexError::Payoff { episode: k, agent: i, policy: j, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let payoffs: Vec<Vec<T>> = solutions.chunks(tables.len()).map(|c| c.iter().map(|s| s.value).collect()).collect();
        let optimistic = NormalFormGame::new(space.counts(), payoffs.clone())
            .map_err(|source| MamexError::Equilibrium { episode: k, source })?;
        let eq = equilibrium::solve(&optimistic, cfg.target, iters).map_err(|source| MamexError::Equilibrium { episode: k, source })?;
        let policy = eq.policy;

        let report = gaps_on_tensor(&truth, &policy);
        let gaps: Vec<T> = (0..n).map(|i| report.agent_gap(i, cfg.target)).collect::<Result<_, _>>()?;
        let aggregate_gap: T = gaps.iter().copied().sum();
        cum += aggregate_gap;

        let sampled = policy.sample_pure(derive_seed(cfg.seed, 2, k));
        let zeta = &tables[sampled];
        let mut train_err = Vec::with_capacity(n);
        let mut pred_err = Vec::with_capacity(n);
        for i in 0..n {
            let sol = &solutions[i * tables.len() + sampled];
            pred_err.push(sol.fit_value - truth.payoffs(i)[sampled]);
            train_err.push(match &sol.hypothesis {
                Hypothesis::ModelFree(f) => ell_model_free_with_occupancy(game, f, zeta, i, &executed_occ),
                Hypothesis::ModelBased(m) => ell_hellinger_with_occupancy(game, m.kernel(), &executed_occ),
            });
        }

        let traj = game.sample_episode(zeta, cfg.seed ^ 0x5EED_E915_0DE5, k - 1);
        ledger.ingest(&traj);
        for (acc, d) in executed_occ.iter_mut().zip(occupancy(game.kernel(), game.rho(), zeta)) {
            *acc += d;
        }

        let elapsed = start.elapsed();
        log::debug!("episode {k}: gap {aggregate_gap}, cumulative {cum}, {:.1} ms", elapsed.as_secs_f64() * 1e3);
        deployed.push(policy.clone());
        records.push(EpisodeRecord {
            k,
            policy,
            sampled,
            gaps,
            aggregate_gap,
            cum_regret: cum,
            solver_gaps: eq.gaps,
            train_err,
            pred_err,
            payoffs: cfg.keep_payoffs.then_some(payoffs),
            ms: elapsed.as_secs_f64() * 1e3,
        });
        if budget.is_some_and(|b| elapsed > b) && k < cfg.episodes {
            log::warn!("episode {k} took {:.3} s, over budget; stopping with partial results", elapsed.as_secs_f64());
            aborted = true;
            break;
        }
    }
    let output = JointMixedPolicy::mixture(&deployed)?;
    Ok(MamexRun { records, output, aborted })
}

/// Lower estimate of the decoupling coefficient for one agent at one `μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MadcPoint {
    pub mu: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MadcEstimate {
    pub agent: usize,
    pub prediction_error: f64,
    pub training_error: f64,
    pub curve: Vec<MadcPoint>,
    /// Largest estimate over the grid: the smallest coefficient consistent
    /// with every `μ`.
    pub estimate: f64,
}

/// Geometric grid of `points` values of `μ` from `lo` to `hi`.
pub fn mu_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    (0..points).map(|p| lo * ratio.powi(p as i32)).collect()
}

/// `d̂(μ) = max(0, Σ pred − Σ train / μ) / (μ + 6H)` per agent over `mus`.
pub fn madc_diagnostic<T: Scalar>(records: &[EpisodeRecord<T>], horizon: usize, mus: &[f64]) -> Vec<MadcEstimate> {
    let n = records.first().map_or(0, |r| r.pred_err.len());
    (0..n)
        .map(|agent| {
            let pred: f64 = records.iter().map(|r| r.pred_err[agent].to_f64_lossy()).sum();
            let train: f64 = records.iter().map(|r| r.train_err[agent].to_f64_lossy()).sum();
            let curve: Vec<MadcPoint> =
                mus.iter().map(|&mu| MadcPoint { mu, estimate: (pred - train / mu).max(0.0) / (mu + 6.0 * horizon as f64) }).collect();
            let estimate = curve.iter().map(|p| p.estimate).fold(0.0, f64::max);
            MadcEstimate { agent, prediction_error: pred, training_error: train, curve, estimate }
        })
        .collect()
}
