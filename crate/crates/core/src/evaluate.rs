//! Exact evaluation under a known model: value tables, the Bellman
//! operator, occupancy measures, payoff tensors over joint pure policies,
//! best responses, strategy modifications and equilibrium gaps.

use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, NormalFormGame, Target};
use crate::game::{MarkovGame, TransitionKernel};
use crate::policy::{enumerate_deterministic, JointMixedPolicy, JointPolicyTable, PurePolicy, PurePolicySpace, Selection};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("agent {0} has no pure policies")]
    EmptySpace(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// `V_h(s)` for `h = 0..=H` (the last layer is zero) and `Q_h(s, a)` for
/// `h = 0..H`, plus `V(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables<T> {
    horizon: usize,
    n_states: usize,
    n_joint: usize,
    v: Vec<T>,
    q: Vec<T>,
    value: T,
}

impl<T: Scalar> ValueTables<T> {
    pub fn v(&self, h: usize, s: usize) -> T {
        self.v[h * self.n_states + s]
    }

    pub fn v_layer(&self, h: usize) -> &[T] {
        &self.v[h * self.n_states..(h + 1) * self.n_states]
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> T {
        self.q[(h * self.n_states + s) * self.n_joint + a]
    }

    /// `Q_h` as `[s][a]`.
    pub fn q_layer(&self, h: usize) -> &[T] {
        let len = self.n_states * self.n_joint;
        &self.q[h * len..(h + 1) * len]
    }

    /// All of `Q` as `[h][s][a]`.
    pub fn q_flat(&self) -> &[T] {
        &self.q
    }

    pub fn value(&self) -> T {
        self.value
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Backward DP for one reward table `[h][s][a]` under `kernel`.
pub fn evaluate_under<T: Scalar>(kernel: &TransitionKernel<T>, rewards: &[T], rho: &[T], policy: &JointPolicyTable<T>) -> ValueTables<T> {
    let (h_n, s_n, a_n) = (kernel.horizon(), kernel.n_states(), kernel.n_joint());
    let mut v = vec![T::zero(); (h_n + 1) * s_n];
    let mut q = vec![T::zero(); h_n * s_n * a_n];
    for h in (0..h_n).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * s_n);
        let next = &tail[..s_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let idx = (h * s_n + s) * a_n + a;
                q[idx] = rewards[idx] + crate::scalar::dot(kernel.row(h, s, a), next);
            }
            let row = &q[(h * s_n + s) * a_n..(h * s_n + s + 1) * a_n];
            head[h * s_n + s] = policy.expect_row(h, s, row);
        }
    }
    let value = crate::scalar::dot(rho, &v[..s_n]);
    ValueTables { horizon: h_n, n_states: s_n, n_joint: a_n, v, q, value }
}

/// Exact value tables of agent `agent` under the joint pure policy.
pub fn evaluate_pure<T: Scalar>(game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> ValueTables<T> {
    evaluate_under(game.kernel(), game.agent_rewards(agent), game.rho(), policy)
}

/// `(T_h f_{h+1})(s, a) = r_h(s, a) + Σ_{s'} P_h(s'|s, a) ⟨f_{h+1}(s', ·), π_{h+1}(·|s')⟩`
/// as `[s][a]`. `f_next` is the `[s][a]` table of step `h + 1`; pass
/// `None` at the last step.
pub fn bellman_apply_under<T: Scalar>(
    kernel: &TransitionKernel<T>,
    rewards: &[T],
    f_next: Option<&[T]>,
    policy: &JointPolicyTable<T>,
    h: usize,
) -> Vec<T> {
    let (s_n, a_n) = (kernel.n_states(), kernel.n_joint());
    let next_v: Vec<T> = match f_next {
        Some(f) => (0..s_n).map(|s| policy.expect_row(h + 1, s, &f[s * a_n..(s + 1) * a_n])).collect(),
        None => vec![T::zero(); s_n],
    };
    let base = h * s_n * a_n;
    (0..s_n * a_n)
        .map(|sa| rewards[base + sa] + crate::scalar::dot(kernel.row(h, sa / a_n, sa % a_n), &next_v))
        .collect()
}

pub fn bellman_apply<T: Scalar>(game: &MarkovGame<T>, f_next: Option<&[T]>, policy: &JointPolicyTable<T>, agent: usize, h: usize) -> Vec<T> {
    bellman_apply_under(game.kernel(), game.agent_rewards(agent), f_next, policy, h)
}

/// State-action occupancy `d_h(s, a)` of `policy` under `kernel`, `[h][s][a]`.
pub fn occupancy<T: Scalar>(kernel: &TransitionKernel<T>, rho: &[T], policy: &JointPolicyTable<T>) -> Vec<T> {
    let (h_n, s_n, a_n) = (kernel.horizon(), kernel.n_states(), kernel.n_joint());
    let mut d = vec![T::zero(); h_n * s_n * a_n];
    let mut state = rho.to_vec();
    for h in 0..h_n {
        let mut next = vec![T::zero(); s_n];
        for (s, &ps) in state.iter().enumerate() {
            if ps <= T::zero() {
                continue;
            }
            for &(a, pa) in policy.at(h, s) {
                let m = ps * pa;
                d[(h * s_n + s) * a_n + a] += m;
                for (n, &p) in next.iter_mut().zip(kernel.row(h, s, a)) {
                    *n += m * p;
                }
            }
        }
        state = next;
    }
    d
}

/// Values of every agent for one joint pure policy (one forward pass).
pub fn joint_values<T: Scalar>(game: &MarkovGame<T>, policy: &JointPolicyTable<T>) -> Vec<T> {
    let d = occupancy(game.kernel(), game.rho(), policy);
    (0..game.n_agents()).map(|i| crate::scalar::dot(&d, game.agent_rewards(i))).collect()
}

/// True payoff tensors `V^{(i),π}(ρ)` over all joint pure policies.
pub fn payoff_tensor<T: Scalar>(game: &MarkovGame<T>, space: &PurePolicySpace<T>) -> NormalFormGame<T> {
    let per_joint: Vec<Vec<T>> = (0..space.joint_size())
        .into_par_iter()
        .map(|j| joint_values(game, &JointPolicyTable::from_space(space, j)))
        .collect();
    let payoffs = (0..game.n_agents()).map(|i| per_joint.iter().map(|v| v[i]).collect()).collect();
    NormalFormGame::new(space.counts(), payoffs)
        .expect("payoff tensor shape follows the policy space")
        .with_zero_sum(game.constant_sum().is_some() && game.n_agents() == 2)
}

fn check_mixed<T: Scalar>(mixed: &JointMixedPolicy<T>, space: &PurePolicySpace<T>) -> Result<(), EvalError> {
    if mixed.counts() != space.counts() {
        return Err(EvalError::Shape(format!("policy over {:?}, space {:?}", mixed.counts(), space.counts())));
    }
    Ok(())
}

/// Best pure policy of `agent` in its space against the others' joint
/// distribution under `mixed`: `(index, value)`, ties to the lowest index.
pub fn best_response<T: Scalar>(
    game: &MarkovGame<T>,
    mixed: &JointMixedPolicy<T>,
    agent: usize,
    space: &PurePolicySpace<T>,
) -> Result<(usize, T), EvalError> {
    check_mixed(mixed, space)?;
    Ok(equilibrium::best_deviation(&payoff_tensor(game, space), mixed, agent))
}

/// Best strategy modification of `agent`: the map over its pure-policy
/// indices and the resulting value.
pub fn strategy_mod_value<T: Scalar>(
    game: &MarkovGame<T>,
    mixed: &JointMixedPolicy<T>,
    agent: usize,
    space: &PurePolicySpace<T>,
) -> Result<(Vec<usize>, T), EvalError> {
    check_mixed(mixed, space)?;
    Ok(equilibrium::best_modification(&payoff_tensor(game, space), mixed, agent))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentGaps<T> {
    /// `E_{υ∼π}[V^{(i),υ}(ρ)]`.
    pub value: T,
    pub best_response: usize,
    pub best_response_value: T,
    pub modification: Vec<usize>,
    pub modification_value: T,
    /// Best-response gap; the NE gap when the policy is a product.
    pub cce_gap: T,
    pub ce_gap: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport<T> {
    pub per_agent: Vec<AgentGaps<T>>,
    pub is_product: bool,
}

impl<T: Scalar> GapReport<T> {
    pub fn agent_gap(&self, agent: usize, target: Target) -> Result<T, EvalError> {
        let g = &self.per_agent[agent];
        match target {
            Target::Ne if !self.is_product => Err(EquilibriumError::NotProduct.into()),
            Target::Ne | Target::Cce => Ok(g.cce_gap),
            Target::Ce => Ok(g.ce_gap),
        }
    }

    /// `Σ_i gap_i`, the per-episode regret increment.
    pub fn aggregate(&self, target: Target) -> Result<T, EvalError> {
        (0..self.per_agent.len()).map(|i| self.agent_gap(i, target)).sum()
    }
}

/// Gaps of `mixed` measured on a precomputed payoff tensor.
pub fn gaps_on_tensor<T: Scalar>(tensor: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>) -> GapReport<T> {
    let per_agent = (0..tensor.n_agents())
        .map(|i| {
            let value = equilibrium::expected_payoff(tensor, mixed, i);
            let (best_response, best_response_value) = equilibrium::best_deviation(tensor, mixed, i);
            let (modification, modification_value) = equilibrium::best_modification(tensor, mixed, i);
            AgentGaps {
                value,
                best_response,
                best_response_value,
                modification,
                modification_value,
                cce_gap: (best_response_value - value).max(T::zero()),
                ce_gap: (modification_value - value).max(T::zero()),
            }
        })
        .collect();
    GapReport { per_agent, is_product: mixed.is_product() }
}

/// Exact NE/CCE and CE gaps of `mixed` in the true game.
pub fn equilibrium_gaps<T: Scalar>(game: &MarkovGame<T>, mixed: &JointMixedPolicy<T>, space: &PurePolicySpace<T>) -> Result<GapReport<T>, EvalError> {
    check_mixed(mixed, space)?;
    Ok(gaps_on_tensor(&payoff_tensor(game, space), mixed))
}

/// Best response of `agent` over *all* deterministic Markov policies, not
/// just its designated space. When the others play a single joint pure
/// policy this is an MDP solved by DP; otherwise every deterministic
/// policy of `agent` is enumerated (bounded by `cap`).
pub fn unrestricted_best_response<T: Scalar>(
    game: &MarkovGame<T>,
    mixed: &JointMixedPolicy<T>,
    agent: usize,
    space: &PurePolicySpace<T>,
    cap: usize,
) -> Result<T, EvalError> {
    check_mixed(mixed, space)?;
    let others = equilibrium::others_distribution(mixed, agent);
    let support: Vec<(usize, T)> = others.iter().copied().enumerate().filter(|(_, p)| *p > T::zero()).collect();
    let radix = space.joint();
    let others_policies = |o: usize| -> Vec<&PurePolicy<T>> {
        let digits = radix.decode(radix.insert(o, agent, 0));
        (0..space.n_agents()).filter(|&k| k != agent).map(|k| space.policy(k, digits[k])).collect()
    };
    if support.len() == 1 {
        return Ok(mdp_best_response(game, agent, &others_policies(support[0].0)));
    }
    let candidates = enumerate_deterministic(game, agent, Selection::All, cap)?;
    let values: Vec<T> = candidates
        .par_iter()
        .map(|own| {
            support
                .iter()
                .map(|&(o, p)| {
                    let mut pols = others_policies(o);
                    pols.insert(agent, own);
                    p * evaluate_pure(game, &JointPolicyTable::from_policies(&pols), agent).value()
                })
                .sum()
        })
        .collect();
    Ok(argmax(&values).map(|(_, v)| v).unwrap_or_else(T::zero))
}

/// Optimal value for `agent` when the other agents follow fixed Markov policies.
fn mdp_best_response<T: Scalar>(game: &MarkovGame<T>, agent: usize, others: &[&PurePolicy<T>]) -> T {
    let (h_n, s_n) = (game.horizon(), game.n_states());
    let radix = game.joint_actions();
    let own_n = game.actions()[agent];
    let mut v = vec![T::zero(); s_n];
    for h in (0..h_n).rev() {
        let mut next_v = vec![T::zero(); s_n];
        for (s, out) in next_v.iter_mut().enumerate() {
            // Distribution over the others' joint actions at (h, s).
            let mut others_dist: Vec<(Vec<usize>, T)> = vec![(Vec::new(), T::one())];
            for p in others {
                let mut next = Vec::new();
                for (acts, m) in &others_dist {
                    for (a, &q) in p.dist(h, s).iter().enumerate() {
                        if q > T::zero() {
                            let mut acts = acts.clone();
                            acts.push(a);
                            next.push((acts, *m * q));
                        }
                    }
                }
                others_dist = next;
            }
            let q_own: Vec<T> = (0..own_n)
                .map(|own| {
                    others_dist
                        .iter()
                        .map(|(acts, m)| {
                            let mut digits = acts.clone();
                            digits.insert(agent, own);
                            let a = radix.encode(&digits);
                            *m * (game.reward(agent, h, s, a) + crate::scalar::dot(game.kernel().row(h, s, a), &v))
                        })
                        .sum()
                })
                .collect();
            *out = argmax(&q_own).map(|(_, x)| x).unwrap_or_else(T::zero);
        }
        v = next_v;
    }
    crate::scalar::dot(game.rho(), &v)
}
