//! Exact deviation values and equilibrium gaps on payoff tensors.

use super::{EquilibriumError, NormalFormGame, Target};
use crate::policy::JointMixedPolicy;
use crate::scalar::{argmax, Scalar};

/// Distribution of the other agents' joint index (layout without `agent`).
pub fn others_distribution<T: Scalar>(mixed: &JointMixedPolicy<T>, agent: usize) -> Vec<T> {
    let radix = mixed.radix();
    let mut out = vec![T::zero(); radix.size_without(agent)];
    for (j, &p) in mixed.probs().iter().enumerate() {
        out[radix.without(j, agent)] += p;
    }
    out
}

/// `Σ_o others(o) · U_agent(u, o)` for every own strategy `u`.
pub fn deviation_values<T: Scalar>(game: &NormalFormGame<T>, agent: usize, others: &[T]) -> Vec<T> {
    let radix = game.radix();
    let u = game.payoffs(agent);
    (0..game.counts()[agent])
        .map(|own| {
            others
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > T::zero())
                .map(|(o, &p)| p * u[radix.insert(o, agent, own)])
                .sum()
        })
        .collect()
}

/// `E_{j∼mixed}[U_agent(j)]`.
pub fn expected_payoff<T: Scalar>(game: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>, agent: usize) -> T {
    game.payoffs(agent).iter().zip(mixed.probs()).map(|(&u, &p)| p * u).sum()
}

/// Best unilateral pure deviation against the others' distribution:
/// `(strategy, value)`, ties to the lowest index.
pub fn best_deviation<T: Scalar>(game: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>, agent: usize) -> (usize, T) {
    let others = others_distribution(mixed, agent);
    argmax(&deviation_values(game, agent, &others)).expect("nonempty strategy set")
}

/// Best strategy modification: for each own strategy with positive mass,
/// the replacement maximizing the conditional payoff (zero-mass strategies
/// map to themselves). Returns the map and `E[U(φ(u), o)]`.
pub fn best_modification<T: Scalar>(game: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>, agent: usize) -> (Vec<usize>, T) {
    let radix = game.radix();
    let m = game.counts()[agent];
    let u = game.payoffs(agent);
    // joint[own][o] = P(own, o), unnormalized conditionals.
    let mut joint = vec![vec![T::zero(); radix.size_without(agent)]; m];
    for (j, &p) in mixed.probs().iter().enumerate() {
        joint[radix.digit(j, agent)][radix.without(j, agent)] += p;
    }
    let mut map = Vec::with_capacity(m);
    let mut value = T::zero();
    for (own, row) in joint.iter().enumerate() {
        let mass: T = row.iter().copied().sum();
        if mass <= T::zero() {
            map.push(own);
            continue;
        }
        let gains: Vec<T> = (0..m)
            .map(|alt| row.iter().enumerate().filter(|(_, &p)| p > T::zero()).map(|(o, &p)| p * u[radix.insert(o, agent, alt)]).sum())
            .collect();
        let (best, v) = argmax(&gains).expect("nonempty strategy set");
        map.push(best);
        value += v;
    }
    (map, value)
}

/// Per-agent gap of `mixed` for the given notion. NE requires a product policy.
pub fn certify<T: Scalar>(game: &NormalFormGame<T>, mixed: &JointMixedPolicy<T>, target: Target) -> Result<Vec<T>, EquilibriumError> {
    if mixed.counts() != game.counts() {
        return Err(EquilibriumError::Shape("policy and game disagree on strategy counts".into()));
    }
    if target == Target::Ne && !mixed.is_product() {
        return Err(EquilibriumError::NotProduct);
    }
    Ok((0..game.n_agents())
        .map(|i| {
            let current = expected_payoff(game, mixed, i);
            let deviation = match target {
                Target::Ne | Target::Cce => best_deviation(game, mixed, i).1,
                Target::Ce => best_modification(game, mixed, i).1,
            };
            (deviation - current).max(T::zero())
        })
        .collect())
}
