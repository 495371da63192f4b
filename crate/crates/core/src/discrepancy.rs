//! Empirical discrepancies `L` over collected episodes and the true
//! discrepancies `ℓ` computed from the known model.
//!
//! One [`TransitionLedger`] serves both forms: rewards are deterministic, so
//! the raw tuples `(h, s, a, s')` reduce to next-state counts per bucket
//! `(h, s, a)` without loss. Model-free targets are re-derived from the
//! counts for whatever `f_{h+1}` and `π` are being scored.

use serde::{Deserialize, Serialize};

use crate::evaluate::{bellman_apply, occupancy};
use crate::game::{MarkovGame, TransitionKernel, Trajectory};
use crate::hypothesis::QHypothesis;
use crate::policy::JointPolicyTable;
use crate::scalar::Scalar;

/// Floor applied to model probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Append-only record of observed transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionLedger {
    horizon: usize,
    n_states: usize,
    n_joint: usize,
    /// `c_h(s' | s, a)` as `[h][s][a][s']`.
    counts: Vec<u64>,
    /// `n_h(s, a)` as `[h][s][a]`.
    visits: Vec<u64>,
    /// Raw `(s_h, a_h, s_{h+1})` tuples per episode.
    episodes: Vec<Vec<(usize, usize, usize)>>,
}

/// One visited bucket at a fixed step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bucket<T> {
    pub state: usize,
    pub action: usize,
    pub visits: u64,
    /// `ȳ = r + Σ_{s'} (c/n) V_{f,h+1}(s')`.
    pub target: T,
}

impl TransitionLedger {
    pub fn new(horizon: usize, n_states: usize, n_joint: usize) -> Self {
        Self {
            horizon,
            n_states,
            n_joint,
            counts: vec![0; horizon * n_states * n_joint * n_states],
            visits: vec![0; horizon * n_states * n_joint],
            episodes: Vec::new(),
        }
    }

    pub fn for_game<T: Scalar>(game: &MarkovGame<T>) -> Self {
        Self::new(game.horizon(), game.n_states(), game.n_joint())
    }

    pub fn ingest<T: Scalar>(&mut self, traj: &Trajectory<T>) {
        assert_eq!(traj.steps.len(), self.horizon, "trajectory length must equal the horizon");
        let mut raw = Vec::with_capacity(self.horizon);
        for (h, (s, a, next)) in traj.transitions().enumerate() {
            self.push(h, s, a, next);
            raw.push((s, a, next));
        }
        self.episodes.push(raw);
    }

    /// Adds one episode given as `(s, a, s')` per step.
    pub fn ingest_raw(&mut self, steps: &[(usize, usize, usize)]) {
        assert_eq!(steps.len(), self.horizon, "episode length must equal the horizon");
        for (h, &(s, a, next)) in steps.iter().enumerate() {
            self.push(h, s, a, next);
        }
        self.episodes.push(steps.to_vec());
    }

    fn push(&mut self, h: usize, s: usize, a: usize, next: usize) {
        let b = (h * self.n_states + s) * self.n_joint + a;
        self.visits[b] += 1;
        self.counts[b * self.n_states + next] += 1;
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> &[Vec<(usize, usize, usize)>] {
        &self.episodes
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

    pub fn visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.visits[(h * self.n_states + s) * self.n_joint + a]
    }

    /// Next-state counts of bucket `(h, s, a)`.
    pub fn row_counts(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let o = ((h * self.n_states + s) * self.n_joint + a) * self.n_states;
        &self.counts[o..o + self.n_states]
    }

    pub fn all_counts(&self) -> &[u64] {
        &self.counts
    }

    /// Visited buckets at step `h` with targets for `f_{h+1}` under `π`.
    /// `next_values` is `V_{f,h+1}` per state, or `None` at the last step.
    pub fn buckets<T: Scalar>(&self, h: usize, rewards: &[T], next_values: Option<&[T]>) -> Vec<Bucket<T>> {
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_joint {
                let n = self.visits(h, s, a);
                if n == 0 {
                    continue;
                }
                let r = rewards[(h * self.n_states + s) * self.n_joint + a];
                let future = match next_values {
                    Some(v) => {
                        let nt = T::of(n as f64);
                        self.row_counts(h, s, a)
                            .iter()
                            .zip(v)
                            .filter(|(&c, _)| c > 0)
                            .map(|(&c, &x)| T::of(c as f64) / nt * x)
                            .sum()
                    }
                    None => T::zero(),
                };
                out.push(Bucket { state: s, action: a, visits: n, target: r + future });
            }
        }
        out
    }

    /// Empirical maximum-likelihood kernel; unvisited rows are uniform.
    pub fn mle_kernel<T: Scalar>(&self) -> TransitionKernel<T> {
        let mut probs = Vec::with_capacity(self.counts.len());
        for (b, row) in self.counts.chunks(self.n_states).enumerate() {
            let n = self.visits[b];
            if n == 0 {
                probs.extend(std::iter::repeat_n(T::one() / T::of_usize(self.n_states), self.n_states));
            } else {
                probs.extend(row.iter().map(|&c| T::of(c as f64) / T::of(n as f64)));
            }
        }
        TransitionKernel::from_flat(self.horizon, self.n_states, self.n_joint, probs).expect("ledger shape")
    }
}

/// `V_{f,h+1}` for the targets of step `h` (`None` at the last step).
pub(crate) fn next_values<T: Scalar>(f: &QHypothesis<T>, policy: &JointPolicyTable<T>, h: usize) -> Option<Vec<T>> {
    (h + 1 < f.horizon()).then(|| f.state_values(h + 1, policy))
}

/// Model-free discrepancy `Σ_h Σ_{(s,a)} n (f_h(s,a) − ȳ)²`: the squared
/// loss of `f_h` against the collected targets minus its infimum over
/// unconstrained tables, which the bucket means attain.
pub fn l_model_free<T: Scalar>(ledger: &TransitionLedger, f: &QHypothesis<T>, policy: &JointPolicyTable<T>, rewards: &[T]) -> T {
    let mut total = T::zero();
    for h in 0..ledger.horizon() {
        let next = next_values(f, policy, h);
        for b in ledger.buckets(h, rewards, next.as_deref()) {
            let d = f.get(h, b.state, b.action) - b.target;
            total += T::of(b.visits as f64) * d * d;
        }
    }
    total
}

/// Model-based discrepancy `Σ c · (−ln P_f(s'|s, a))`, floored at `1e-12`.
pub fn l_model_based<T: Scalar>(ledger: &TransitionLedger, model: &TransitionKernel<T>) -> T {
    let floor = T::of(PROB_FLOOR);
    let mut total = T::zero();
    for (&c, &p) in ledger.all_counts().iter().zip(model.as_flat()) {
        if c > 0 {
            total -= T::of(c as f64) * p.max(floor).ln();
        }
    }
    total
}

/// `Σ_h Σ_{s,a} d_h(s,a) (f_h − T_h^π f_{h+1})²(s,a)` for a given occupancy
/// (possibly a sum of several policies' occupancies).
pub fn ell_model_free_with_occupancy<T: Scalar>(
    game: &MarkovGame<T>,
    f: &QHypothesis<T>,
    policy: &JointPolicyTable<T>,
    agent: usize,
    occ: &[T],
) -> T {
    let sa_n = game.n_states() * game.n_joint();
    let mut total = T::zero();
    for h in 0..game.horizon() {
        let next = (h + 1 < game.horizon()).then(|| f.layer(h + 1));
        let applied = bellman_apply(game, next, policy, agent, h);
        for (sa, (&fx, &tx)) in f.layer(h).iter().zip(&applied).enumerate() {
            let w = occ[h * sa_n + sa];
            if w > T::zero() {
                total += w * (fx - tx) * (fx - tx);
            }
        }
    }
    total
}

/// True model-free discrepancy of `(f, π)` on data from `executed`.
pub fn true_ell_model_free<T: Scalar>(
    game: &MarkovGame<T>,
    f: &QHypothesis<T>,
    policy: &JointPolicyTable<T>,
    agent: usize,
    executed: &JointPolicyTable<T>,
) -> T {
    let occ = occupancy(game.kernel(), game.rho(), executed);
    ell_model_free_with_occupancy(game, f, policy, agent, &occ)
}

/// `D_H²(p, q) = ½ Σ (√p − √q)²`.
pub fn hellinger_sq<T: Scalar>(p: &[T], q: &[T]) -> T {
    let half = T::of(0.5);
    half * p.iter().zip(q).map(|(&a, &b)| (a.max(T::zero()).sqrt() - b.max(T::zero()).sqrt()).powi(2)).sum::<T>()
}

/// `Σ_h Σ_{s,a} d_h(s,a) D_H²(P_f(·|s,a), P(·|s,a))` for a given occupancy.
pub fn ell_hellinger_with_occupancy<T: Scalar>(game: &MarkovGame<T>, model: &TransitionKernel<T>, occ: &[T]) -> T {
    let (s_n, a_n) = (game.n_states(), game.n_joint());
    let mut total = T::zero();
    for h in 0..game.horizon() {
        for s in 0..s_n {
            for a in 0..a_n {
                let w = occ[(h * s_n + s) * a_n + a];
                if w > T::zero() {
                    total += w * hellinger_sq(model.row(h, s, a), game.kernel().row(h, s, a));
                }
            }
        }
    }
    total
}

/// True model-based discrepancy on data from `executed`.
pub fn true_ell_hellinger<T: Scalar>(game: &MarkovGame<T>, model: &TransitionKernel<T>, executed: &JointPolicyTable<T>) -> T {
    let occ = occupancy(game.kernel(), game.rho(), executed);
    ell_hellinger_with_occupancy(game, model, &occ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_random_tabular, RandomTabularSpec};
    use crate::hypothesis::true_q_hypothesis;
    use crate::policy::PurePolicySpace;
    use proptest::prelude::*;

    fn setup() -> (MarkovGame<f64>, PurePolicySpace<f64>) {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(3, 3, vec![2, 2], 1.0, 21)).unwrap();
        let space = PurePolicySpace::deterministic_sample(&game, 3, 5, 4096).unwrap();
        (game, space)
    }

    fn collect(game: &MarkovGame<f64>, space: &PurePolicySpace<f64>, n: usize, seed: u64) -> TransitionLedger {
        let mut ledger = TransitionLedger::for_game(game);
        for k in 0..n {
            let table = JointPolicyTable::from_space(space, k % space.joint_size());
            ledger.ingest(&game.sample_episode(&table, seed, k));
        }
        ledger
    }

    #[test]
    fn empty_ledger_has_zero_discrepancy() {
        let (game, space) = setup();
        let ledger = TransitionLedger::for_game(&game);
        let table = JointPolicyTable::from_space(&space, 0);
        let f = QHypothesis::constant(&game, 0.7);
        assert_eq!(l_model_free(&ledger, &f, &table, game.agent_rewards(0)), 0.0);
        assert_eq!(l_model_based(&ledger, game.kernel()), 0.0);
    }

    #[test]
    fn exact_fit_of_single_transition_is_zero() {
        let (game, space) = setup();
        let table = JointPolicyTable::from_space(&space, 4);
        let mut ledger = TransitionLedger::for_game(&game);
        ledger.ingest(&game.sample_episode(&table, 3, 0));
        // Fit every visited bucket to its own target, last step first.
        let mut f = QHypothesis::constant(&game, 0.0);
        for h in (0..3).rev() {
            let next = next_values(&f, &table, h);
            for b in ledger.buckets(h, game.agent_rewards(0), next.as_deref()) {
                f.set(h, b.state, b.action, b.target);
            }
        }
        assert!(l_model_free(&ledger, &f, &table, game.agent_rewards(0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_nll_is_closed_form() {
        let (game, space) = setup();
        let ledger = collect(&game, &space, 10, 0);
        let uniform = TransitionKernel::<f64>::uniform(3, 3, 4);
        let expected = 30.0 * 3f64.ln();
        assert!((l_model_based(&ledger, &uniform) - expected).abs() < 1e-12);
    }

    #[test]
    fn mle_minimizes_model_based_loss() {
        let (game, space) = setup();
        let ledger = collect(&game, &space, 40, 1);
        let mle = ledger.mle_kernel::<f64>();
        let best = l_model_based(&ledger, &mle);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        for _ in 0..100 {
            let probs: Vec<f64> = mle
                .as_flat()
                .chunks(3)
                .flat_map(|row| {
                    let noisy: Vec<f64> = row.iter().map(|&p| p + rand::Rng::gen_range(&mut rng, 0.0..0.05)).collect();
                    let z: f64 = noisy.iter().sum();
                    noisy.into_iter().map(move |p| p / z)
                })
                .collect();
            let other = TransitionKernel::from_flat(3, 3, 4, probs).unwrap();
            assert!(l_model_based(&ledger, &other) >= best - 1e-12);
        }
    }

    #[test]
    fn true_q_has_zero_bellman_residual() {
        let (game, space) = setup();
        let table = JointPolicyTable::from_space(&space, 2);
        let executed = JointPolicyTable::from_space(&space, 5);
        let f = true_q_hypothesis(&game, &table, 1);
        assert!(true_ell_model_free(&game, &f, &table, 1, &executed).abs() <= 1e-12);
    }

    #[test]
    fn constant_residual_gives_h_c_squared() {
        // Zero rewards and f_h ≡ c·(H − h): every residual is exactly c.
        let base = make_random_tabular::<f64>(&RandomTabularSpec::new(2, 3, vec![2], 1.0, 2)).unwrap();
        let game = MarkovGame::new(vec![2], base.kernel().clone(), vec![0.0; 12], base.rho().to_vec(), 1.0).unwrap();
        let space = PurePolicySpace::deterministic_enumeration(&game, 4096).unwrap();
        let table = JointPolicyTable::from_space(&space, 17);
        let c = 0.2;
        let tables: Vec<f64> = (0..3).flat_map(|h| vec![c * (3 - h) as f64; 4]).collect();
        let f = QHypothesis::new(3, 2, 2, 1.0, tables).unwrap();
        let ell = true_ell_model_free(&game, &f, &table, 0, &table);
        assert!((ell - 3.0 * c * c).abs() < 1e-12);
    }

    #[test]
    fn hellinger_extremes() {
        assert_eq!(hellinger_sq(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(hellinger_sq(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let (game, space) = setup();
        let table = JointPolicyTable::from_space(&space, 1);
        assert_eq!(true_ell_hellinger(&game, game.kernel(), &table), 0.0);
    }

    #[test]
    fn hellinger_matches_direct_summation() {
        let (game, space) = setup();
        let table = JointPolicyTable::from_space(&space, 6);
        let model = TransitionKernel::<f64>::uniform(3, 3, 4);
        let occ = occupancy(game.kernel(), game.rho(), &table);
        let mut direct = 0.0;
        for h in 0..3 {
            for s in 0..3 {
                for a in 0..4 {
                    let p = model.row(h, s, a);
                    let q = game.kernel().row(h, s, a);
                    let dh: f64 = (0..3).map(|k| 0.5 * (p[k].sqrt() - q[k].sqrt()).powi(2)).sum();
                    direct += occ[(h * 3 + s) * 4 + a] * dh;
                }
            }
        }
        assert!((true_ell_hellinger(&game, &model, &table) - direct).abs() <= 1e-12);
    }

    #[test]
    fn ledger_counts_are_consistent() {
        let (game, space) = setup();
        let ledger = collect(&game, &space, 25, 4);
        for h in 0..3 {
            let mut total = 0;
            for s in 0..3 {
                for a in 0..4 {
                    assert_eq!(ledger.row_counts(h, s, a).iter().sum::<u64>(), ledger.visits(h, s, a));
                    total += ledger.visits(h, s, a);
                }
            }
            assert_eq!(total, 25);
        }
    }

    proptest! {
        #[test]
        fn model_free_loss_is_nonnegative(vals in prop::collection::vec(0.0f64..1.0, 36), seed in 0u64..1000) {
            let (game, space) = setup();
            let ledger = collect(&game, &space, 8, seed);
            let f = QHypothesis::new(3, 3, 4, 1.0, vals).unwrap();
            let table = JointPolicyTable::from_space(&space, (seed % 9) as usize);
            prop_assert!(l_model_free(&ledger, &f, &table, game.agent_rewards(0)) >= 0.0);
        }
    }
}
