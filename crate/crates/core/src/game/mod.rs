//! General-sum episodic Markov games: tables, validation, and episode sampling.

mod generators;
mod io;

pub use generators::{
    bimatrix_game, linear_mixture_game, make_linear_mixture, make_lock, make_random_tabular,
    make_zero_sum_linear, LinearMixture, LockGame, RandomTabularSpec, ZeroSumLinear,
};
pub use io::GameFile;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::MixedRadix;
use crate::policy::JointPolicyTable;
use crate::scalar::Scalar;

/// Default upper bound on the number of joint actions.
pub const JOINT_ACTION_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("joint action space of size {size} exceeds cap {cap}")]
    JointActionOverflow { size: usize, cap: usize },
    #[error("transition row h={h} s={s} a={a} has negative entry {value} at s'={next}")]
    NegativeProbability { h: usize, s: usize, a: usize, next: usize, value: f64 },
    #[error("transition row h={h} s={s} a={a} sums to {sum}")]
    RowNotStochastic { h: usize, s: usize, a: usize, sum: f64 },
    #[error("reward for agent {agent} at h={h} s={s} a={a} is {value}, outside [0, 1]")]
    RewardOutOfRange { agent: usize, h: usize, s: usize, a: usize, value: f64 },
    #[error("reward cap {cap} must lie in [1, horizon = {horizon}]")]
    InvalidRewardCap { cap: f64, horizon: usize },
    #[error("agent {agent} can collect return {bound} > reward cap {cap}")]
    RewardCapExceeded { agent: usize, bound: f64, cap: f64 },
    #[error("initial distribution invalid: {0}")]
    InitialDistribution(String),
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("cannot read game file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed game file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Transition tables `P_h(s' | s, a)` flattened as `[h][s][a][s']`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel<T> {
    horizon: usize,
    n_states: usize,
    n_joint: usize,
    probs: Vec<T>,
}

impl<T: Scalar> TransitionKernel<T> {
    pub fn from_flat(horizon: usize, n_states: usize, n_joint: usize, probs: Vec<T>) -> Result<Self, GameError> {
        if probs.len() != horizon * n_states * n_joint * n_states {
            return Err(GameError::Shape(format!(
                "transition table has {} entries, expected {}",
                probs.len(),
                horizon * n_states * n_joint * n_states
            )));
        }
        Ok(Self { horizon, n_states, n_joint, probs })
    }

    pub fn uniform(horizon: usize, n_states: usize, n_joint: usize) -> Self {
        let p = T::one() / T::of_usize(n_states);
        Self { horizon, n_states, n_joint, probs: vec![p; horizon * n_states * n_joint * n_states] }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    fn offset(&self, h: usize, s: usize, a: usize) -> usize {
        ((h * self.n_states + s) * self.n_joint + a) * self.n_states
    }

    /// Next-state distribution for zero-based step `h`.
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[T] {
        let o = self.offset(h, s, a);
        &self.probs[o..o + self.n_states]
    }

    pub fn row_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [T] {
        let o = self.offset(h, s, a);
        &mut self.probs[o..o + self.n_states]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.probs
    }

    /// Checks every row lies on the simplex within `tol`.
    pub fn validate(&self, tol: T) -> Result<(), GameError> {
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                for a in 0..self.n_joint {
                    let row = self.row(h, s, a);
                    if let Some((next, &value)) = row.iter().enumerate().find(|(_, &p)| p < T::zero()) {
                        return Err(GameError::NegativeProbability { h, s, a, next, value: value.to_f64_lossy() });
                    }
                    let sum: T = row.iter().copied().sum();
                    if (sum - T::one()).abs() > tol || !sum.is_finite() {
                        return Err(GameError::RowNotStochastic { h, s, a, sum: sum.to_f64_lossy() });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One realised step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step<T> {
    pub state: usize,
    pub joint_action: usize,
    pub rewards: Vec<T>,
}

/// A full episode of exactly `H` steps plus the state reached after the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
    pub terminal_state: usize,
    pub episode_index: usize,
    pub seed: u64,
}

impl<T: Scalar> Trajectory<T> {
    /// `(s_h, a_h, s_{h+1})` for each zero-based step.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.steps.iter().enumerate().map(move |(h, step)| {
            let next = self.steps.get(h + 1).map_or(self.terminal_state, |n| n.state);
            (step.state, step.joint_action, next)
        })
    }

    pub fn total_reward(&self, agent: usize) -> T {
        self.steps.iter().map(|s| s.rewards[agent]).sum()
    }
}

/// Tabular general-sum episodic Markov game with deterministic rewards.
///
/// Steps are zero-based in code (`h = 0..H`). Rewards are stored as
/// `[agent][h][s][joint action]` and lie in `[0, 1]`; the worst-case
/// return of every agent is bounded by `reward_cap` over all realisable
/// trajectories.
#[derive(Clone, Debug)]
pub struct MarkovGame<T> {
    n_agents: usize,
    horizon: usize,
    n_states: usize,
    actions: MixedRadix,
    kernel: TransitionKernel<T>,
    rewards: Vec<T>,
    rho: Vec<T>,
    reward_cap: T,
    constant_sum: Option<T>,
}

impl<T: Scalar> MarkovGame<T> {
    /// Validates and assembles a game. `rewards` is flattened as
    /// `[agent][h][s][joint action]`.
    pub fn new(
        actions: Vec<usize>,
        kernel: TransitionKernel<T>,
        rewards: Vec<T>,
        rho: Vec<T>,
        reward_cap: T,
    ) -> Result<Self, GameError> {
        Self::with_cap(actions, kernel, rewards, rho, reward_cap, JOINT_ACTION_CAP)
    }

    pub fn with_cap(
        actions: Vec<usize>,
        kernel: TransitionKernel<T>,
        rewards: Vec<T>,
        rho: Vec<T>,
        reward_cap: T,
        joint_cap: usize,
    ) -> Result<Self, GameError> {
        if actions.is_empty() || actions.contains(&0) {
            return Err(GameError::Shape("every agent needs at least one action".into()));
        }
        let radix = MixedRadix::new(&actions)
            .ok_or(GameError::JointActionOverflow { size: usize::MAX, cap: joint_cap })?;
        if radix.size() > joint_cap {
            return Err(GameError::JointActionOverflow { size: radix.size(), cap: joint_cap });
        }
        let (horizon, n_states) = (kernel.horizon(), kernel.n_states());
        if horizon == 0 || n_states == 0 {
            return Err(GameError::Shape("horizon and state count must be positive".into()));
        }
        if kernel.n_joint() != radix.size() {
            return Err(GameError::Shape(format!(
                "transition table has {} joint actions, action sets give {}",
                kernel.n_joint(),
                radix.size()
            )));
        }
        let n_agents = actions.len();
        if rewards.len() != n_agents * horizon * n_states * radix.size() {
            return Err(GameError::Shape(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                n_agents * horizon * n_states * radix.size()
            )));
        }
        if rho.len() != n_states {
            return Err(GameError::Shape(format!("rho has {} entries, expected {}", rho.len(), n_states)));
        }
        let game = Self {
            n_agents,
            horizon,
            n_states,
            actions: radix,
            kernel,
            rewards,
            rho,
            reward_cap,
            constant_sum: None,
        };
        game.validate()?;
        Ok(game)
    }

    /// Marks the game as constant-sum: `Σ_i V^{(i),π}(ρ) = total` for every policy.
    pub fn with_constant_sum(mut self, total: T) -> Self {
        self.constant_sum = Some(total);
        self
    }

    fn validate(&self) -> Result<(), GameError> {
        let tol = T::tol(1e-12);
        self.kernel.validate(tol)?;
        let a_n = self.n_joint();
        for i in 0..self.n_agents {
            for h in 0..self.horizon {
                for s in 0..self.n_states {
                    for a in 0..a_n {
                        let r = self.reward(i, h, s, a);
                        if !(r >= T::zero() && r <= T::one()) {
                            return Err(GameError::RewardOutOfRange { agent: i, h, s, a, value: r.to_f64_lossy() });
                        }
                    }
                }
            }
        }
        if self.rho.iter().any(|&p| p < T::zero()) {
            return Err(GameError::InitialDistribution("negative mass".into()));
        }
        let total: T = self.rho.iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(GameError::InitialDistribution(format!("sums to {total}")));
        }
        let cap = self.reward_cap;
        if !(cap >= T::one() && cap <= T::of_usize(self.horizon)) {
            return Err(GameError::InvalidRewardCap { cap: cap.to_f64_lossy(), horizon: self.horizon });
        }
        for i in 0..self.n_agents {
            let bound = self.worst_case_return(i);
            if bound > cap + tol {
                return Err(GameError::RewardCapExceeded { agent: i, bound: bound.to_f64_lossy(), cap: cap.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// Largest return agent `i` can collect along any trajectory with
    /// positive probability (max-over-actions DP over the kernel support).
    pub fn worst_case_return(&self, agent: usize) -> T {
        let mut next = vec![T::zero(); self.n_states];
        for h in (0..self.horizon).rev() {
            let mut cur = vec![T::zero(); self.n_states];
            for (s, slot) in cur.iter_mut().enumerate() {
                let mut best = T::zero();
                for a in 0..self.n_joint() {
                    let cont = self
                        .kernel
                        .row(h, s, a)
                        .iter()
                        .zip(&next)
                        .filter(|(&p, _)| p > T::zero())
                        .map(|(_, &v)| v)
                        .fold(T::zero(), T::max);
                    best = best.max(self.reward(agent, h, s, a) + cont);
                }
                *slot = best;
            }
            next = cur;
        }
        self.rho
            .iter()
            .zip(&next)
            .filter(|(&p, _)| p > T::zero())
            .map(|(_, &v)| v)
            .fold(T::zero(), T::max)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Per-agent action counts.
    pub fn actions(&self) -> &[usize] {
        self.actions.radices()
    }

    pub fn joint_actions(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn n_joint(&self) -> usize {
        self.actions.size()
    }

    pub fn kernel(&self) -> &TransitionKernel<T> {
        &self.kernel
    }

    pub fn rho(&self) -> &[T] {
        &self.rho
    }

    pub fn reward_cap(&self) -> T {
        self.reward_cap
    }

    pub fn constant_sum(&self) -> Option<T> {
        self.constant_sum
    }

    pub fn reward(&self, agent: usize, h: usize, s: usize, a: usize) -> T {
        self.rewards[((agent * self.horizon + h) * self.n_states + s) * self.n_joint() + a]
    }

    /// Rewards of one agent as `[h][s][a]`.
    pub fn agent_rewards(&self, agent: usize) -> &[T] {
        let len = self.horizon * self.n_states * self.n_joint();
        &self.rewards[agent * len..(agent + 1) * len]
    }

    /// A copy of the game with another transition kernel (same rewards).
    /// Used to evaluate policies under a model hypothesis.
    pub fn with_kernel(&self, kernel: TransitionKernel<T>) -> Result<Self, GameError> {
        if kernel.horizon() != self.horizon || kernel.n_states() != self.n_states || kernel.n_joint() != self.n_joint() {
            return Err(GameError::Shape("kernel shape differs from game".into()));
        }
        Ok(Self { kernel, ..self.clone() })
    }

    /// Draws one episode: `s_1 ~ ρ`, actions from `policy`, transitions from the kernel.
    /// Deterministic given `seed` and `episode_index`; each index reads its
    /// own stream of the seeded generator, so one seed serves a whole run.
    pub fn sample_episode(&self, policy: &JointPolicyTable<T>, seed: u64, episode_index: usize) -> Trajectory<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode_index as u64);
        let mut state = sample_categorical(&self.rho, &mut rng);
        let mut steps = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let dist = policy.at(h, state);
            let joint_action = if dist.len() == 1 {
                dist[0].0
            } else {
                let u: f64 = rng.gen();
                pick(dist.iter().map(|&(a, p)| (a, p.to_f64_lossy())), u)
            };
            let rewards = (0..self.n_agents).map(|i| self.reward(i, h, state, joint_action)).collect();
            steps.push(Step { state, joint_action, rewards });
            state = sample_categorical(self.kernel.row(h, state, joint_action), &mut rng);
        }
        Trajectory { steps, terminal_state: state, episode_index, seed }
    }
}

pub(crate) fn sample_categorical<T: Scalar, R: Rng>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    pick(probs.iter().enumerate().map(|(k, p)| (k, p.to_f64_lossy())), u)
}

/// Inverse-CDF selection. Falls back to the last positive-mass item when
/// rounding leaves `u` above the accumulated total.
fn pick(items: impl Iterator<Item = (usize, f64)>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}
