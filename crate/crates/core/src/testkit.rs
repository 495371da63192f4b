//! Slow, literal reference implementations used as test oracles.
//!
//! Nothing here is on a hot path: every routine follows its definition as
//! directly as possible, so it can check the fast versions elsewhere.

use serde::Serialize;

use crate::discrepancy::{TransitionLedger, PROB_FLOOR};
use crate::equilibrium::NormalFormGame;
use crate::game::{MarkovGame, TransitionKernel};
use crate::hypothesis::QHypothesis;
use crate::index::MixedRadix;
use crate::optimize::{regularized_payoff, HypothesisClass, InnerSolveConfig, OptimizeError};
use crate::policy::{JointMixedPolicy, JointPolicyTable};
use crate::scalar::Scalar;

/// One comparison between a fast routine and its oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub oracle: String,
    pub instance: String,
    pub value: f64,
    pub oracle_value: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl OracleReport {
    pub fn new(oracle: &str, instance: impl Into<String>, value: f64, oracle_value: f64) -> Self {
        let abs_err = (value - oracle_value).abs();
        let rel_err = abs_err / oracle_value.abs().max(f64::MIN_POSITIVE);
        Self { oracle: oracle.to_string(), instance: instance.into(), value, oracle_value, abs_err, rel_err }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.abs_err <= tol
    }
}

/// Model-free discrepancy by its double sum over raw transitions: for each
/// step, the squared loss of `f_h` against every collected target minus the
/// smallest squared loss any table achieves.
///
/// The inner minimum is taken per `(s, a)` over a grid of step `1e-3`
/// spanning the targets, together with the plain average of the targets.
pub fn literal_l_model_free<T: Scalar>(
    episodes: &[Vec<(usize, usize, usize)>],
    f: &QHypothesis<T>,
    policy: &JointPolicyTable<T>,
    rewards: &[T],
) -> T {
    let (h_n, s_n, a_n) = (f.horizon(), f.n_states(), f.n_joint());
    let v_next = |h: usize, s2: usize| -> T {
        if h + 1 < h_n {
            policy.at(h + 1, s2).iter().map(|&(a2, p)| p * f.get(h + 1, s2, a2)).sum()
        } else {
            T::zero()
        }
    };
    let mut total = T::zero();
    for h in 0..h_n {
        let mut own = T::zero();
        // targets grouped by (s, a) for the inner minimum
        let mut groups: Vec<Vec<T>> = vec![Vec::new(); s_n * a_n];
        for ep in episodes {
            let Some(&(s, a, s2)) = ep.get(h) else { continue };
            let y = rewards[(h * s_n + s) * a_n + a] + v_next(h, s2);
            let d = f.get(h, s, a) - y;
            own += d * d;
            groups[s * a_n + a].push(y);
        }
        let mut inner = T::zero();
        for ys in groups.iter().filter(|g| !g.is_empty()) {
            let loss = |x: T| ys.iter().map(|&y| (x - y) * (x - y)).sum::<T>();
            let lo = ys.iter().copied().fold(T::infinity(), T::min);
            let hi = ys.iter().copied().fold(T::neg_infinity(), T::max);
            let mean = ys.iter().copied().sum::<T>() / T::of_usize(ys.len());
            let mut best = loss(mean);
            let steps = ((hi - lo).to_f64_lossy() / 1e-3).ceil() as usize;
            for k in 0..=steps {
                best = best.min(loss(lo + T::of(k as f64 * 1e-3)));
            }
            inner += best;
        }
        total += own - inner;
    }
    total
}

/// Model-based discrepancy as a sum over raw transitions.
pub fn literal_l_model_based<T: Scalar>(episodes: &[Vec<(usize, usize, usize)>], model: &TransitionKernel<T>) -> T {
    let mut total = T::zero();
    for ep in episodes {
        for (h, &(s, a, s2)) in ep.iter().enumerate() {
            total -= model.row(h, s, a)[s2].max(T::of(PROB_FLOOR)).ln();
        }
    }
    total
}

/// Monte-Carlo estimate of `V^{(i),π}(ρ)`: mean return and its standard error.
pub fn mc_value<T: Scalar>(game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize, episodes: usize, seed: u64) -> (T, T) {
    let returns: Vec<T> = (0..episodes).map(|k| game.sample_episode(policy, seed, k).total_reward(agent)).collect();
    let n = T::of_usize(returns.len().max(1));
    let mean = returns.iter().copied().sum::<T>() / n;
    if returns.len() < 2 {
        return (mean, T::zero());
    }
    let var = returns.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Largest swap gain of `agent` under `mixed`, enumerating every map
/// `Π_i → Π_i`. Panics above four strategies.
pub fn brute_force_swap<T: Scalar>(game: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>, agent: usize) -> T {
    let m = game.counts()[agent];
    assert!(m <= 4, "brute-force swap enumeration is capped at four strategies");
    let radix = game.radix();
    let u = game.payoffs(agent);
    let base: T = mixed.probs().iter().zip(u).map(|(&p, &x)| p * x).sum();
    let maps = MixedRadix::new(&vec![m; m]).expect("small map space");
    let mut best = T::neg_infinity();
    for code in 0..maps.size() {
        let phi = maps.decode(code);
        let mut value = T::zero();
        for (j, &p) in mixed.probs().iter().enumerate() {
            if p > T::zero() {
                value += p * u[radix.replace(j, agent, phi[radix.digit(j, agent)])];
            }
        }
        best = best.max(value - base);
    }
    best.max(T::zero())
}

/// Regularized payoff by grid search for horizon-one games, where the
/// objective separates over `(s, a)`: `w x − η n (x − ȳ)²` with `x` on the
/// grid `{0, step, …, R}`.
pub fn grid_payoff_single_step<T: Scalar>(
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    step: f64,
) -> T {
    assert_eq!(game.horizon(), 1, "the separable grid oracle needs horizon one");
    let cap = game.reward_cap();
    let points = (cap.to_f64_lossy() / step).round() as usize;
    let mut total = T::zero();
    for s in 0..game.n_states() {
        for a in 0..game.n_joint() {
            let w = game.rho()[s] * policy.at(0, s).iter().find(|&&(b, _)| b == a).map_or(T::zero(), |&(_, p)| p);
            let n = T::of(ledger.visits(0, s, a) as f64);
            let y = game.reward(agent, 0, s, a);
            let best = (0..=points)
                .map(|k| {
                    let x = T::of(k as f64 * step).min(cap);
                    w * x - eta * n * (x - y) * (x - y)
                })
                .fold(T::neg_infinity(), T::max);
            total += best;
        }
    }
    total
}

/// Regularized payoff by grid search over the step-0 rows of a two-state,
/// two-step, single-joint-action model; step-1 rows are set to their
/// empirical frequencies, which is optimal since they do not affect the value.
pub fn grid_payoff_two_state_model<T: Scalar>(
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    step: f64,
) -> T {
    assert!(game.n_states() == 2 && game.horizon() == 2 && game.n_joint() == 1, "oracle is for S=2, H=2, one joint action");
    let mle: TransitionKernel<T> = ledger.mle_kernel();
    let points = (1.0 / step).round() as usize;
    let mut best = T::neg_infinity();
    let mut kernel = mle.clone();
    for i in 0..=points {
        for j in 0..=points {
            let (p, q) = (T::of(i as f64 * step), T::of(j as f64 * step));
            kernel.row_mut(0, 0, 0).copy_from_slice(&[p, T::one() - p]);
            kernel.row_mut(0, 1, 0).copy_from_slice(&[q, T::one() - q]);
            let v = crate::evaluate::evaluate_under(&kernel, game.agent_rewards(agent), game.rho(), policy).value();
            let l = crate::discrepancy::l_model_based(ledger, &kernel);
            best = best.max(v - eta * l);
        }
    }
    best
}

/// Grid oracle minus the solver's value on tiny instances. Positive slack
/// means the solver under-approximates the supremum.
#[allow(clippy::too_many_arguments)]
pub fn sup_slack<T: Scalar>(
    class: &HypothesisClass<T>,
    game: &MarkovGame<T>,
    ledger: &TransitionLedger,
    policy: &JointPolicyTable<T>,
    agent: usize,
    eta: T,
    cfg: &InnerSolveConfig,
    grid_step: f64,
) -> Result<T, OptimizeError> {
    let solved = regularized_payoff(class, game, ledger, policy, agent, eta, cfg, 0)?.value;
    let oracle = match class {
        HypothesisClass::TabularQ => grid_payoff_single_step(game, ledger, policy, agent, eta, grid_step),
        HypothesisClass::TabularModel => grid_payoff_two_state_model(game, ledger, policy, agent, eta, grid_step),
        _ => return Err(OptimizeError::Shape(format!("no grid oracle for the {} class", class.name()))),
    };
    Ok(oracle - solved)
}
