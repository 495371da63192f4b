//! Nash equilibria for two-agent games: support enumeration for small
//! bimatrix games and Hedge self-play for constant-sum games.

use serde::{Deserialize, Serialize};

use super::{zero_sum_selfplay, EquilibriumError, EquilibriumSolution, NormalFormGame, Target};
use crate::linalg::solve;
use crate::policy::JointMixedPolicy;
use crate::scalar::Scalar;

/// Largest per-agent strategy count handled by support enumeration.
pub const SUPPORT_ENUM_MAX: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeMode {
    /// Support enumeration when both agents have at most six strategies,
    /// otherwise self-play if the game is flagged zero-sum.
    Auto,
    BimatrixSupportEnum,
    ZeroSumSelfplay,
}

pub fn solve_ne<T: Scalar>(game: &NormalFormGame<T>, mode: NeMode, rounds: usize) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    if game.n_agents() != 2 {
        return Err(EquilibriumError::NeUnsupported(format!("{} agents", game.n_agents())));
    }
    let small = game.counts().iter().all(|&m| m <= SUPPORT_ENUM_MAX);
    match mode {
        NeMode::BimatrixSupportEnum if !small => {
            Err(EquilibriumError::NeUnsupported(format!("strategy counts {:?} exceed {SUPPORT_ENUM_MAX}", game.counts())))
        }
        NeMode::BimatrixSupportEnum => support_enumeration(game),
        NeMode::ZeroSumSelfplay => zero_sum_selfplay(game, rounds),
        NeMode::Auto if small => support_enumeration(game),
        NeMode::Auto if game.is_zero_sum() => zero_sum_selfplay(game, rounds),
        NeMode::Auto => Err(EquilibriumError::NeUnsupported(format!(
            "strategy counts {:?} exceed {SUPPORT_ENUM_MAX} and the game is not zero-sum",
            game.counts()
        ))),
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else { return out };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Mixed strategy over `support` (size `n_total`) making the opponent
/// indifferent across `opp_support`, where `payoff(own, opp)` is the
/// opponent's payoff. Returns `None` for singular or infeasible systems.
fn indifference<T: Scalar>(
    support: &[usize],
    opp_support: &[usize],
    n_total: usize,
    payoff: impl Fn(usize, usize) -> T,
) -> Option<Vec<T>> {
    let k = support.len();
    // Unknowns: probabilities on the support plus the opponent's value.
    let mut a = Vec::with_capacity(k + 1);
    let mut b = Vec::with_capacity(k + 1);
    for &opp in opp_support {
        let mut row: Vec<T> = support.iter().map(|&own| payoff(own, opp)).collect();
        row.push(-T::one());
        a.push(row);
        b.push(T::zero());
    }
    let mut sum_row = vec![T::one(); k];
    sum_row.push(T::zero());
    a.push(sum_row);
    b.push(T::one());
    let sol = solve(a, b, T::tol(1e-12))?;
    let tol = T::tol(1e-12);
    if sol[..k].iter().any(|&p| p < -tol) {
        return None;
    }
    let mut x = vec![T::zero(); n_total];
    for (&s, &p) in support.iter().zip(&sol) {
        x[s] = p.max(T::zero());
    }
    let z: T = x.iter().copied().sum();
    Some(x.into_iter().map(|p| p / z).collect())
}

/// First Nash equilibrium in lexicographic order of equal-size supports
/// (smaller supports first). Singular indifference systems are skipped.
fn support_enumeration<T: Scalar>(game: &NormalFormGame<T>) -> Result<EquilibriumSolution<T>, EquilibriumError> {
    let (m, n) = (game.counts()[0], game.counts()[1]);
    let a = game.payoffs(0);
    let b = game.payoffs(1);
    let accept = T::tol(1e-9) * game.payoff_range().max(T::one());
    let mut checked = 0usize;
    for k in 1..=m.min(n) {
        for rows in subsets(m, k) {
            for cols in subsets(n, k) {
                checked += 1;
                // Row player's mix makes the column player indifferent, and vice versa.
                let Some(x) = indifference(&rows, &cols, m, |r, c| b[r * n + c]) else {
                    log::debug!("support ({rows:?}, {cols:?}) skipped: singular or infeasible row system");
                    continue;
                };
                let Some(y) = indifference(&cols, &rows, n, |c, r| a[r * n + c]) else {
                    log::debug!("support ({rows:?}, {cols:?}) skipped: singular or infeasible column system");
                    continue;
                };
                let policy = JointMixedPolicy::product(vec![x, y])?;
                let sol = EquilibriumSolution::certified(policy, game, Target::Ne, checked)?;
                if sol.max_gap() <= accept {
                    return Ok(sol);
                }
            }
        }
    }
    Err(EquilibriumError::NoEquilibrium)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(subsets(3, 1).len(), 3);
    }

    #[test]
    fn matching_pennies_enumeration_is_exact() {
        let g = NormalFormGame::<f64>::new(&[2, 2], vec![vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]]).unwrap();
        let sol = solve_ne(&g, NeMode::BimatrixSupportEnum, 0).unwrap();
        for i in 0..2 {
            for p in sol.policy.marginal(i) {
                assert!((p - 0.5).abs() <= 1e-8);
            }
        }
        assert!(sol.max_gap() <= 1e-8);
    }

    #[test]
    fn dominant_strategies_give_a_point_mass() {
        // Prisoner's dilemma: defect (index 1) strictly dominates.
        let g = NormalFormGame::<f64>::new(&[2, 2], vec![vec![3.0, 0.0, 5.0, 1.0], vec![3.0, 5.0, 0.0, 1.0]]).unwrap();
        let sol = solve_ne(&g, NeMode::Auto, 0).unwrap();
        assert_eq!(sol.policy.prob(3), 1.0);
    }

    #[test]
    fn three_agents_are_unsupported() {
        let g = NormalFormGame::<f64>::new(&[2, 2, 2], vec![vec![0.0; 8]; 3]).unwrap();
        let err = solve_ne(&g, NeMode::Auto, 10).unwrap_err();
        assert!(err.to_string().contains("NE mode unsupported; use CCE"));
    }

    #[test]
    fn large_general_sum_games_are_unsupported() {
        let g = NormalFormGame::<f64>::new(&[7, 2], vec![vec![0.0; 14]; 2]).unwrap();
        assert!(matches!(solve_ne(&g, NeMode::Auto, 10), Err(EquilibriumError::NeUnsupported(_))));
        assert!(matches!(solve_ne(&g, NeMode::BimatrixSupportEnum, 10), Err(EquilibriumError::NeUnsupported(_))));
    }
}
