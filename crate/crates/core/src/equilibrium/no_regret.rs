//! No-regret self-play in expectation: Hedge for coarse correlated
//! equilibria and zero-sum games, swap-regret matching for correlated
//! equilibria. All play is deterministic (expected utilities, no sampling).

use super::{EquilibriumError, EquilibriumSolution, NormalFormGame, Target};
use crate::linalg::stationary_distribution;
use crate::policy::JointMixedPolicy;
use crate::scalar::Scalar;

/// Digits of every joint index, `[joint][agent]`.
fn digit_table<T: Scalar>(game: &NormalFormGame<T>) -> Vec<Vec<usize>> {
    (0..game.joint_size()).map(|j| game.radix().decode(j)).collect()
}

/// Expected utility of each own strategy against the product of the
/// others' mixed strategies.
fn utilities<T: Scalar>(game: &NormalFormGame<T>, digits: &[Vec<usize>], x: &[Vec<T>], agent: usize) -> Vec<T> {
    let u = game.payoffs(agent);
    let mut out = vec![T::zero(); game.counts()[agent]];
    for (j, d) in digits.iter().enumerate() {
        let mut w = T::one();
        for (k, &dk) in d.iter().enumerate() {
            if k != agent {
                w *= x[k][dk];
            }
        }
        out[d[agent]] += w * u[j];
    }
    out
}

fn accumulate_product<T: Scalar>(acc: &mut [T], digits: &[Vec<usize>], x: &[Vec<T>]) {
    for (a, d) in acc.iter_mut().zip(digits) {
        *a += d.iter().enumerate().map(|(k, &dk)| x[k][dk]).fold(T::one(), |p, q| p * q);
    }
}

fn softmax_scaled<T: Scalar>(cum: &[T], lr: T) -> Vec<T> {
    let max = cum.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = cum.iter().map(|&c| (lr * (c - max)).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn normalized<T: Scalar>(mut p: Vec<T>) -> Vec<T> {
    let z: T = p.iter().copied().sum();
    for v in p.iter_mut() {
        *v /= z;
    }
    p
}

struct HedgeRun<T> {
    average_joint: Vec<T>,
    average_marginals: Vec<Vec<T>>,
}

/// Simultaneous expected-play Hedge with learning rate `√(8 ln m / T)` on
/// utilities rescaled to unit range.
fn hedge<T: Scalar>(game: &NormalFormGame<T>, rounds: usize) -> HedgeRun<T> {
    let digits = digit_table(game);
    let n = game.n_agents();
    let scale = T::one() / game.payoff_range();
    let rounds_t = T::of_usize(rounds);
    let lrs: Vec<T> = game
        .counts()
        .iter()
        .map(|&m| (T::of(8.0) * T::of_usize(m).ln() / rounds_t).sqrt() * scale)
        .collect();
    let mut cum: Vec<Vec<T>> = game.counts().iter().map(|&m| vec![T::zero(); m]).collect();
    let mut avg_joint = vec![T::zero(); game.joint_size()];
    let mut avg_marg: Vec<Vec<T>> = cum.clone();
    for _ in 0..rounds {
        let x: Vec<Vec<T>> = (0..n).map(|i| softmax_scaled(&cum[i], lrs[i])).collect();
        accumulate_product(&mut avg_joint, &digits, &x);
        for i in 0..n {
            for (a, &v) in avg_marg[i].iter_mut().zip(&x[i]) {
                *a += v;
            }
            let u = utilities(game, &digits, &x, i);
            for (c, v) in cum[i].iter_mut().zip(u) {
                *c += v;
            }
        }
    }
    HedgeRun { average_joint: normalized(avg_joint), average_marginals: avg_marg.into_iter().map(normalized).collect() }
}

/// Coarse correlated equilibrium: the time average of the product play of
/// Hedge self-play over `rounds` rounds.
pub fn solve_cce<T: Scalar>(game: &NormalFormGame<T>, rounds: usize) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    let rounds = rounds.max(1);
    let run = hedge(game, rounds);
    let policy = JointMixedPolicy::from_probs(game.counts(), run.average_joint)?;
    EquilibriumSolution::certified(policy, game, Target::Cce, rounds)
}

/// Approximate Nash equilibrium of a two-agent constant-sum game: the
/// product of Hedge's time-averaged strategies.
pub fn zero_sum_selfplay<T: Scalar>(game: &NormalFormGame<T>, rounds: usize) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    if game.n_agents() != 2 || !game.is_zero_sum() {
        return Err(EquilibriumError::NeUnsupported("self-play needs a two-agent zero-sum game".into()));
    }
    let rounds = rounds.max(1);
    let run = hedge(game, rounds);
    let policy = JointMixedPolicy::product(run.average_marginals)?;
    EquilibriumSolution::certified(policy, game, Target::Ne, rounds)
}

/// Correlated equilibrium via swap-regret minimization: each agent runs one
/// regret-matching⁺ learner per own strategy, plays the stationary
/// distribution of the learners' recommendations, and the output is the
/// time average of the product play.
pub fn solve_ce<T: Scalar>(game: &NormalFormGame<T>, rounds: usize) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    let rounds = rounds.max(1);
    let digits = digit_table(game);
    let n = game.n_agents();
    let counts = game.counts().to_vec();
    // regrets[i][j][k]: learner j of agent i, regret for recommending k instead of j.
    let mut regrets: Vec<Vec<Vec<T>>> = counts.iter().map(|&m| vec![vec![T::zero(); m]; m]).collect();
    let mut avg_joint = vec![T::zero(); game.joint_size()];
    for _ in 0..rounds {
        // q[i][j]: learner j's recommendation, as a distribution over own strategies.
        let q: Vec<Vec<Vec<T>>> = (0..n)
            .map(|i| {
                let m = counts[i];
                regrets[i]
                    .iter()
                    .map(|r| {
                        let total: T = r.iter().copied().sum();
                        if total > T::zero() {
                            r.iter().map(|&v| v / total).collect()
                        } else {
                            vec![T::one() / T::of_usize(m); m]
                        }
                    })
                    .collect()
            })
            .collect();
        let x: Vec<Vec<T>> = q.iter().map(|qi| if qi.len() == 1 { vec![T::one()] } else { stationary_distribution(qi) }).collect();
        accumulate_product(&mut avg_joint, &digits, &x);
        for i in 0..n {
            let u = utilities(game, &digits, &x, i);
            for (j, learner) in regrets[i].iter_mut().enumerate() {
                let w = x[i][j];
                let recommended: T = q[i][j].iter().zip(&u).map(|(&p, &v)| p * v).sum();
                for (k, r) in learner.iter_mut().enumerate() {
                    *r = (*r + w * (u[k] - recommended)).max(T::zero());
                }
            }
        }
    }
    let policy = JointMixedPolicy::from_probs(&counts, normalized(avg_joint))?;
    EquilibriumSolution::certified(policy, game, Target::Ce, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pennies() -> NormalFormGame<f64> {
        NormalFormGame::<f64>::new(&[2, 2], vec![vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]]).unwrap().with_zero_sum(true)
    }

    #[test]
    fn single_strategy_agents_get_a_point_mass() {
        let g = NormalFormGame::<f64>::new(&[1, 1], vec![vec![0.3], vec![0.7]]).unwrap();
        for sol in [solve_cce(&g, 10).unwrap(), solve_ce(&g, 10).unwrap()] {
            assert_eq!(sol.policy.probs(), &[1.0]);
            assert_eq!(sol.gaps, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn matching_pennies_selfplay_is_near_uniform() {
        let sol = zero_sum_selfplay(&pennies(), 10_000).unwrap();
        for i in 0..2 {
            for p in sol.policy.marginal(i) {
                assert!((p - 0.5).abs() < 0.05);
            }
        }
    }

    #[test]
    fn cce_marginals_on_pennies_are_near_uniform() {
        let sol = solve_cce(&pennies(), 10_000).unwrap();
        for i in 0..2 {
            for p in sol.policy.marginal(i) {
                assert!((p - 0.5).abs() < 0.05);
            }
        }
    }

    #[test]
    fn swap_regret_play_approaches_correlated_equilibrium() {
        // Chicken: the CE set strictly contains the Nash mixtures.
        let g = NormalFormGame::<f64>::new(&[2, 2], vec![vec![0.0, 0.7, 0.2, 0.6], vec![0.0, 0.2, 0.7, 0.6]]).unwrap();
        let sol = solve_ce(&g, 20_000).unwrap();
        assert!(sol.max_gap() < 5e-3, "gap {}", sol.max_gap());
        let g = NormalFormGame::<f64>::new(&[3, 3], vec![
            vec![0.9, 0.1, 0.4, 0.3, 0.8, 0.2, 0.5, 0.6, 0.7],
            vec![0.2, 0.7, 0.5, 0.9, 0.1, 0.6, 0.4, 0.3, 0.8],
        ])
        .unwrap();
        assert!(solve_ce(&g, 20_000).unwrap().max_gap() < 1e-2);
    }

    #[test]
    fn selfplay_rejects_general_sum_games() {
        let g = NormalFormGame::<f64>::new(&[2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]; 2]).unwrap();
        assert!(matches!(zero_sum_selfplay(&g, 10), Err(EquilibriumError::NeUnsupported(_))));
    }

    #[test]
    fn reported_gaps_match_certifier() {
        let g = NormalFormGame::<f64>::new(&[2, 3], vec![vec![0.1, 0.9, 0.4, 0.7, 0.2, 0.5], vec![0.6, 0.3, 0.8, 0.1, 0.9, 0.2]]).unwrap();
        for sol in [solve_cce(&g, 2000).unwrap(), solve_ce(&g, 2000).unwrap()] {
            let again = super::super::certify(&g, &sol.policy, sol.target).unwrap();
            for (a, b) in again.iter().zip(&sol.gaps) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
