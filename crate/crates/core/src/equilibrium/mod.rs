//! Equilibria of finite normal-form games over joint pure-policy indices.
//!
//! Solvers return a [`JointMixedPolicy`] together with per-agent gaps that
//! are recomputed exactly by [`certify`].

mod certify;
mod nash;
mod no_regret;

pub use certify::{best_deviation, best_modification, certify, deviation_values, expected_payoff, others_distribution};
pub use nash::{solve_ne, NeMode};
pub use no_regret::{solve_cce, solve_ce, zero_sum_selfplay};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::MixedRadix;
use crate::policy::{JointMixedPolicy, MixedPolicyFile, PolicyError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("NE mode unsupported; use CCE ({0})")]
    NeUnsupported(String),
    #[error("NE gap is only defined for product policies")]
    NotProduct,
    #[error("normal-form game malformed: {0}")]
    Shape(String),
    #[error("payoff for agent {agent} at joint index {joint} is not finite")]
    NonFinite { agent: usize, joint: usize },
    #[error("support enumeration found no equilibrium")]
    NoEquilibrium,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Which equilibrium notion is targeted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Ne,
    Cce,
    Ce,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Ne => "ne",
            Target::Cce => "cce",
            Target::Ce => "ce",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ne" => Ok(Target::Ne),
            "cce" => Ok(Target::Cce),
            "ce" => Ok(Target::Ce),
            other => Err(format!("unknown target '{other}' (expected ne, cce or ce)")),
        }
    }
}

/// Per-agent payoff tensors `U_i[joint]`, joint indices row-major over agents.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormGame<T> {
    radix: MixedRadix,
    payoffs: Vec<Vec<T>>,
    zero_sum: bool,
}

impl<T: Scalar> NormalFormGame<T> {
    pub fn new(counts: &[usize], payoffs: Vec<Vec<T>>) -> Result<Self, EquilibriumError> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(EquilibriumError::Shape("every agent needs at least one strategy".into()));
        }
        let radix = MixedRadix::new(counts).ok_or_else(|| EquilibriumError::Shape("joint size overflow".into()))?;
        if payoffs.len() != counts.len() {
            return Err(EquilibriumError::Shape(format!("{} tensors for {} agents", payoffs.len(), counts.len())));
        }
        for (agent, u) in payoffs.iter().enumerate() {
            if u.len() != radix.size() {
                return Err(EquilibriumError::Shape(format!(
                    "tensor of agent {agent} has {} entries, expected {}",
                    u.len(),
                    radix.size()
                )));
            }
            if let Some(joint) = u.iter().position(|x| !x.is_finite()) {
                return Err(EquilibriumError::NonFinite { agent, joint });
            }
        }
        Ok(Self { radix, payoffs, zero_sum: false })
    }

    /// Marks the game as constant-sum so the self-play NE solver accepts it.
    pub fn with_zero_sum(mut self, flag: bool) -> Self {
        self.zero_sum = flag;
        self
    }

    pub fn is_zero_sum(&self) -> bool {
        self.zero_sum
    }

    /// True when the two tensors sum to the same constant everywhere (within `tol`).
    pub fn detect_constant_sum(&self, tol: T) -> bool {
        if self.payoffs.len() != 2 {
            return false;
        }
        let c = self.payoffs[0][0] + self.payoffs[1][0];
        self.payoffs[0].iter().zip(&self.payoffs[1]).all(|(&a, &b)| (a + b - c).abs() <= tol)
    }

    pub fn n_agents(&self) -> usize {
        self.payoffs.len()
    }

    pub fn counts(&self) -> &[usize] {
        self.radix.radices()
    }

    pub fn radix(&self) -> &MixedRadix {
        &self.radix
    }

    pub fn payoffs(&self, agent: usize) -> &[T] {
        &self.payoffs[agent]
    }

    pub fn joint_size(&self) -> usize {
        self.radix.size()
    }

    /// Largest payoff spread over all agents (at least the smallest positive scalar).
    pub fn payoff_range(&self) -> T {
        let mut range = T::zero();
        for u in &self.payoffs {
            let hi = u.iter().copied().fold(T::neg_infinity(), T::max);
            let lo = u.iter().copied().fold(T::infinity(), T::min);
            range = range.max(hi - lo);
        }
        range.max(T::min_positive_value())
    }

    /// Default iteration budget for the no-regret solvers.
    pub fn default_iterations(&self) -> usize {
        10_000usize.max(100 * self.joint_size())
    }
}

/// Output of an equilibrium solve.
#[derive(Clone, Debug)]
pub struct EquilibriumSolution<T> {
    pub policy: JointMixedPolicy<T>,
    pub target: Target,
    pub iterations: usize,
    /// Per-agent certified gap of `policy` for `target`.
    pub gaps: Vec<T>,
}

impl<T: Scalar> EquilibriumSolution<T> {
    pub(crate) fn certified(policy: JointMixedPolicy<T>, game: &NormalFormGame<T>, target: Target, iterations: usize) -> Result<Self, EquilibriumError> {
        let gaps = certify(game, &policy, target)?;
        Ok(Self { policy, target, iterations, gaps })
    }

    pub fn max_gap(&self) -> T {
        self.gaps.iter().copied().fold(T::zero(), T::max)
    }
}

/// Solves for `target` with the default method for that notion.
pub fn solve<T: Scalar>(game: &NormalFormGame<T>, target: Target, iterations: usize) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    match target {
        Target::Cce => solve_cce(game, iterations),
        Target::Ce => solve_ce(game, iterations),
        Target::Ne => solve_ne(game, NeMode::Auto, iterations),
    }
}

/// `eqsolve` input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormFile {
    /// Strategy counts; may be omitted for two agents when `payoffs` are matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    /// One tensor per agent, either flat (row-major) or nested lists.
    pub payoffs: Vec<serde_json::Value>,
    pub kind: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default)]
    pub zero_sum: bool,
}

fn flatten(value: &serde_json::Value, out: &mut Vec<f64>, shape: &mut Vec<usize>, depth: usize) -> Result<(), EquilibriumError> {
    match value {
        serde_json::Value::Number(n) => {
            if depth < shape.len() {
                return Err(EquilibriumError::Shape("ragged payoff tensor".into()));
            }
            out.push(n.as_f64().ok_or_else(|| EquilibriumError::Shape("payoff is not a number".into()))?);
            Ok(())
        }
        serde_json::Value::Array(items) => {
            if depth == shape.len() {
                if !out.is_empty() {
                    return Err(EquilibriumError::Shape("ragged payoff tensor".into()));
                }
                shape.push(items.len());
            } else if shape[depth] != items.len() {
                return Err(EquilibriumError::Shape("ragged payoff tensor".into()));
            }
            items.iter().try_for_each(|v| flatten(v, out, shape, depth + 1))
        }
        _ => Err(EquilibriumError::Shape("payoffs must be numbers or nested lists".into())),
    }
}

impl NormalFormFile {
    pub fn to_game<T: Scalar>(&self) -> Result<NormalFormGame<T>, EquilibriumError> {
        let mut tensors = Vec::new();
        let mut shape_seen: Option<Vec<usize>> = None;
        for v in &self.payoffs {
            let (mut flat, mut shape) = (Vec::new(), Vec::new());
            flatten(v, &mut flat, &mut shape, 0)?;
            if let Some(prev) = &shape_seen {
                if *prev != shape {
                    return Err(EquilibriumError::Shape("payoff tensors differ in shape".into()));
                }
            }
            shape_seen = Some(shape);
            tensors.push(flat.into_iter().map(T::of).collect::<Vec<T>>());
        }
        let counts = match &self.counts {
            Some(c) => c.clone(),
            None => match shape_seen {
                Some(shape) if shape.len() == self.payoffs.len() => shape,
                _ => return Err(EquilibriumError::Shape("give `counts` or one tensor axis per agent".into())),
            },
        };
        Ok(NormalFormGame::new(&counts, tensors)?.with_zero_sum(self.zero_sum))
    }
}

/// `eqsolve` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub kind: Target,
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub policy: MixedPolicyFile,
}

impl<T: Scalar> From<&EquilibriumSolution<T>> for SolutionFile {
    fn from(sol: &EquilibriumSolution<T>) -> Self {
        Self {
            kind: sol.target,
            iterations: sol.iterations,
            gaps: sol.gaps.iter().map(|g| g.to_f64_lossy()).collect(),
            policy: sol.policy.to_file(),
        }
    }
}
