//! Inner maximization of `V_f(ρ) − η L(f)` for one agent and one pure joint
//! policy, over a hypothesis class.

mod linear;
mod model_based;
mod model_free;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrepancy::{l_model_based, l_model_free, TransitionLedger};
use crate::game::{MarkovGame, TransitionKernel};
use crate::hypothesis::{true_q_hypothesis, Hypothesis, LinearMixtureClass, LinearQClass, ModelHypothesis, QHypothesis};
use crate::linalg::least_squares;
use crate::policy::JointPolicyTable;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid inner solver config: {0}")]
    Config(String),
    #[error("regularization weight must be finite and nonnegative, got {0}")]
    Eta(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("objective became non-finite in restart {restart} at iteration {iteration}")]
    Diverged { restart: usize, iteration: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Coordinate ascent (model-free) or exact per-row block ascent (model-based).
    #[default]
    ExactTabular,
    /// Projected accelerated gradient (model-free) or logit ascent (model-based).
    GradientAscent,
    /// Logit ascent; on model-free classes the same as `GradientAscent`.
    MirrorAscent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSolveConfig {
    pub method: InnerMethod,
    /// Step multiplier for the gradient methods.
    pub step: f64,
    /// Iteration cap for the gradient methods.
    pub iters: usize,
    /// Number of starting points, counting the data-driven start and the
    /// true-model start.
    pub restarts: usize,
    /// Sweep cap for the exact methods.
    pub sweeps: usize,
    pub tol: f64,
    /// Also start from the true Q function or true model. Needs a simulator.
    pub oracle_restart: bool,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        Self { method: InnerMethod::ExactTabular, step: 1.0, iters: 200, restarts: 3, sweeps: 200, tol: 1e-10, oracle_restart: true }
    }
}

impl InnerSolveConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(OptimizeError::Config(format!("step must be positive, got {}", self.step)));
        }
        if self.iters == 0 || self.sweeps == 0 || self.restarts == 0 {
            return Err(OptimizeError::Config("iters, sweeps and restarts must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(OptimizeError::Config(format!("tol must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// The class the inner problem ranges over.
#[derive(Clone, Debug, PartialEq)]
pub enum HypothesisClass<T> {
    TabularQ,
    LinearQ(LinearQClass<T>),
    TabularModel,
    LinearMixture(LinearMixtureClass<T>),
}

impl<T: Scalar> HypothesisClass<T> {
    pub fn is_model_based(&self) -> bool {
        matches!(self, Self::TabularModel | Self::LinearMixture(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TabularQ => "tabular_q",
            Self::LinearQ(_) => "linear_q",
            Self::TabularModel => "tabular_model",
            Self::LinearMixture(_) => "linear_mixture",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PayoffSolution<T> {
    /// `V_f̂(ρ) − η L(f̂)`.
    pub value: T,
    /// `V_f̂(ρ)`.
    pub fit_value: T,
    /// `L(f̂)`.
    pub discrepancy: T,
    pub hypothesis: Hypothesis<T>,
    /// Index of the winning start (0 is the data-driven start).
    pub restart: usize,
    pub iterations: usize,
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Approximate `sup_f V_f^{(i),π}(ρ) − η L(f, π)` over `class`.
///
/// Every start is run through the configured method and the best final
/// objective wins (ties go to the earlier start). With `η = 0` the
/// discrepancy is minimized instead and its minimizer's value is reported.
#[allow(clippy::too_many_arguments)]
pub fn regularized_payoff<T: Scalar>(
    class: &HypothesisClass<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    seed: u64,
) -> Result<PayoffSolution<T>, OptimizeError> {
    cfg.validate()?;
    if !(eta.is_finite() && eta >= T::zero()) {
        return Err(OptimizeError::Eta(eta.to_f64_lossy()));
    }
    if (ledger.horizon(), ledger.n_states(), ledger.n_joint()) != (game.horizon(), game.n_states(), game.n_joint()) {
        return Err(OptimizeError::Shape("ledger does not match the game".into()));
    }
    if agent >= game.n_agents() {
        return Err(OptimizeError::Shape(format!("agent {agent} out of range")));
    }
    let sol = match class {
        HypothesisClass::TabularQ => tabular_q(game, ledger, policy, agent, eta, cfg, seed)?,
        HypothesisClass::LinearQ(c) => linear_q(c, game, ledger, policy, agent, eta, cfg, seed)?,
        HypothesisClass::TabularModel => tabular_model(game, ledger, policy, agent, eta, cfg, seed)?,
        HypothesisClass::LinearMixture(c) => mixture(c, game, ledger, policy, agent, eta, cfg, seed)?,
    };
    if !sol.value.is_finite() {
        return Err(OptimizeError::Diverged { restart: sol.restart, iteration: sol.iterations });
    }
    Ok(sol)
}

fn q_solution<T: Scalar>(
    f: QHypothesis<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    restart: usize,
    iterations: usize,
) -> PayoffSolution<T> {
    let fit_value = f.value(policy, game.rho());
    let discrepancy = l_model_free(ledger, &f, policy, game.agent_rewards(agent));
    PayoffSolution { value: fit_value - eta * discrepancy, fit_value, discrepancy, hypothesis: Hypothesis::ModelFree(f), restart, iterations }
}

fn model_solution<T: Scalar>(
    kernel: TransitionKernel<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    restart: usize,
    iterations: usize,
) -> Result<PayoffSolution<T>, OptimizeError> {
    let model = ModelHypothesis::new(kernel).map_err(|e| OptimizeError::Shape(e.to_string()))?;
    let fit_value = model.value(game, policy, agent);
    let discrepancy = l_model_based(ledger, model.kernel());
    Ok(PayoffSolution { value: fit_value - eta * discrepancy, fit_value, discrepancy, hypothesis: Hypothesis::ModelBased(model), restart, iterations })
}

/// Keeps the first strictly best candidate.
fn keep_best<T: Scalar>(best: &mut Option<PayoffSolution<T>>, cand: PayoffSolution<T>) -> Result<(), OptimizeError> {
    if !cand.value.is_finite() {
        return Err(OptimizeError::Diverged { restart: cand.restart, iteration: cand.iterations });
    }
    if best.as_ref().is_none_or(|b| cand.value > b.value) {
        *best = Some(cand);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn tabular_q<T: Scalar>(
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    seed: u64,
) -> Result<PayoffSolution<T>, OptimizeError> {
    let (h_n, s_n, a_n) = (game.horizon(), game.n_states(), game.n_joint());
    let cap = game.reward_cap();
    let rewards = game.agent_rewards(agent);
    let fitted = model_free::fitted_evaluation(ledger, policy, rewards, cap);
    if eta == T::zero() {
        return Ok(q_solution(fitted, game, ledger, policy, agent, eta, 0, 0));
    }
    let structure = model_free::Structure::new(ledger, policy, rewards, game.rho(), cap, eta);
    let mut starts = vec![fitted.as_flat().to_vec()];
    if cfg.oracle_restart {
        starts.push(true_q_hypothesis(game, policy, agent).as_flat().to_vec());
    }
    for r in starts.len()..cfg.restarts {
        let mut rng = restart_rng(seed, r);
        starts.push((0..structure.size()).map(|_| cap * T::of(rng.gen::<f64>())).collect());
    }
    let tol = T::of(cfg.tol);
    let mut best = None;
    for (r, start) in starts.into_iter().enumerate() {
        let start_q = QHypothesis::new(h_n, s_n, a_n, cap, start.clone()).expect("game shape");
        keep_best(&mut best, q_solution(start_q, game, ledger, policy, agent, eta, r, 0))?;
        let (f, used) = match cfg.method {
            InnerMethod::ExactTabular => structure.coordinate_ascent(start, policy, cfg.sweeps, tol),
            InnerMethod::GradientAscent | InnerMethod::MirrorAscent => structure.fista(start, policy, cfg.iters, T::of(cfg.step), tol),
        };
        let f = QHypothesis::new(h_n, s_n, a_n, cap, f).expect("game shape");
        keep_best(&mut best, q_solution(f, game, ledger, policy, agent, eta, r, used))?;
    }
    Ok(best.expect("at least one start"))
}

#[allow(clippy::too_many_arguments)]
fn tabular_model<T: Scalar>(
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    seed: u64,
) -> Result<PayoffSolution<T>, OptimizeError> {
    let mle: TransitionKernel<T> = ledger.mle_kernel();
    if eta == T::zero() {
        return model_solution(mle, game, ledger, policy, agent, eta, 0, 0);
    }
    let problem = model_based::Problem { ledger, policy, rewards: game.agent_rewards(agent), rho: game.rho(), eta };
    let mut starts = vec![mle];
    if cfg.oracle_restart {
        starts.push(game.kernel().clone());
    }
    for r in starts.len()..cfg.restarts {
        let s = seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        starts.push(model_based::random_kernel(game.horizon(), game.n_states(), game.n_joint(), s));
    }
    let mut best = None;
    for (r, start) in starts.into_iter().enumerate() {
        keep_best(&mut best, model_solution(start.clone(), game, ledger, policy, agent, eta, r, 0)?)?;
        let (kernel, used) = match cfg.method {
            InnerMethod::ExactTabular => problem.block_ascent(start, cfg.sweeps, T::of(cfg.tol)),
            InnerMethod::GradientAscent | InnerMethod::MirrorAscent => problem
                .logit_ascent(&start, cfg.iters, T::of(cfg.step))
                .map_err(|iteration| OptimizeError::Diverged { restart: r, iteration })?,
        };
        keep_best(&mut best, model_solution(kernel, game, ledger, policy, agent, eta, r, used)?)?;
    }
    Ok(best.expect("at least one start"))
}

/// Per-step least-squares fit of the true Q function, projected onto the
/// parameter ball.
fn linear_oracle_start<T: Scalar>(class: &LinearQClass<T>, game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> Vec<Vec<T>> {
    let truth = true_q_hypothesis(game, policy, agent);
    let (s_n, a_n) = (class.n_states(), class.n_joint());
    (0..class.horizon())
        .map(|h| {
            let design: Vec<Vec<T>> = (0..s_n * a_n).map(|sa| class.feature(h, sa / a_n, sa % a_n).to_vec()).collect();
            let mut theta = least_squares(&design, truth.layer(h)).map_or_else(|| vec![T::zero(); class.dim()], |(c, _)| c);
            let n = crate::scalar::norm2(&theta);
            if n > class.norm_bound() {
                theta.iter_mut().for_each(|x| *x *= class.norm_bound() / n);
            }
            theta
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn linear_q<T: Scalar>(
    class: &LinearQClass<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    seed: u64,
) -> Result<PayoffSolution<T>, OptimizeError> {
    if (class.horizon(), class.n_states(), class.n_joint()) != (game.horizon(), game.n_states(), game.n_joint()) {
        return Err(OptimizeError::Shape("linear Q features do not match the game".into()));
    }
    let rewards = game.agent_rewards(agent);
    let tol = T::of(cfg.tol);
    let zero_start = vec![vec![T::zero(); class.dim()]; class.horizon()];
    let finish = |theta: Vec<Vec<T>>, r: usize, used: usize| -> Result<PayoffSolution<T>, OptimizeError> {
        let hyp = class.hypothesis(theta).map_err(|e| OptimizeError::Shape(e.to_string()))?;
        Ok(q_solution(hyp.to_tabular(), game, ledger, policy, agent, eta, r, used))
    };
    if eta == T::zero() {
        let fit = model_free::Structure::new(ledger, policy, rewards, &vec![T::zero(); game.n_states()], class.cap(), T::one());
        let (theta, used) = linear::linear_q_ascent(class, &fit, policy, zero_start, cfg.iters, tol)
            .map_err(|iteration| OptimizeError::Diverged { restart: 0, iteration })?;
        return finish(theta, 0, used);
    }
    let structure = model_free::Structure::new(ledger, policy, rewards, game.rho(), class.cap(), eta);
    let mut starts = vec![zero_start];
    if cfg.oracle_restart {
        starts.push(linear_oracle_start(class, game, policy, agent));
    }
    for r in starts.len()..cfg.restarts {
        let mut rng = restart_rng(seed, r);
        let bound = class.norm_bound() / T::of_usize(class.dim()).sqrt();
        starts.push((0..class.horizon()).map(|_| (0..class.dim()).map(|_| bound * T::of(rng.gen_range(-1.0..1.0))).collect()).collect());
    }
    let mut best = None;
    for (r, start) in starts.into_iter().enumerate() {
        let (theta, used) = linear::linear_q_ascent(class, &structure, policy, start, cfg.iters, tol)
            .map_err(|iteration| OptimizeError::Diverged { restart: r, iteration })?;
        keep_best(&mut best, finish(theta, r, used)?)?;
    }
    Ok(best.expect("at least one start"))
}

#[allow(clippy::too_many_arguments)]
fn mixture<T: Scalar>(
    class: &LinearMixtureClass<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    seed: u64,
) -> Result<PayoffSolution<T>, OptimizeError> {
    let p = &class.params;
    if (p.n_states, p.n_joint) != (game.n_states(), game.n_joint()) || p.theta.len() != game.horizon() {
        return Err(OptimizeError::Shape("linear mixture does not match the game".into()));
    }
    let tol = T::of(cfg.tol);
    let uniform = vec![vec![T::one() / T::of_usize(p.dim); p.dim]; game.horizon()];
    let rewards = game.agent_rewards(agent);
    let finish = |theta: &[Vec<T>], r: usize, used: usize| model_solution(linear::mixture_kernel(class, theta), game, ledger, policy, agent, eta, r, used);
    if eta == T::zero() {
        let zero_rho = vec![T::zero(); game.n_states()];
        let fit = model_based::Problem { ledger, policy, rewards, rho: &zero_rho, eta: T::one() };
        let (theta, used) = linear::mixture_ascent(class, &fit, uniform, cfg.iters, tol)
            .map_err(|iteration| OptimizeError::Diverged { restart: 0, iteration })?;
        return finish(&theta, 0, used);
    }
    let problem = model_based::Problem { ledger, policy, rewards, rho: game.rho(), eta };
    let mut starts = vec![uniform];
    if cfg.oracle_restart {
        starts.push(p.theta.clone());
    }
    for r in starts.len()..cfg.restarts {
        let mut rng = restart_rng(seed, r);
        starts.push(
            (0..game.horizon())
                .map(|_| {
                    let e: Vec<f64> = (0..p.dim).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let z: f64 = e.iter().sum();
                    e.into_iter().map(|x| T::of(x / z)).collect()
                })
                .collect(),
        );
    }
    let mut best = None;
    for (r, start) in starts.into_iter().enumerate() {
        let (theta, used) = linear::mixture_ascent(class, &problem, start, cfg.iters, tol)
            .map_err(|iteration| OptimizeError::Diverged { restart: r, iteration })?;
        keep_best(&mut best, finish(&theta, r, used)?)?;
    }
    Ok(best.expect("at least one start"))
}
