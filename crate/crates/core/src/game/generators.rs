//! Benchmark game families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GameError, MarkovGame, TransitionKernel, JOINT_ACTION_CAP};
use crate::index::MixedRadix;
use crate::policy::{PurePolicy, PurePolicySpace};
use crate::scalar::{norm2, Scalar};

/// Normalisation slack for generator-produced rows; rows further than this
/// from the simplex are rejected.
const SIMPLEX_SLACK: f64 = 1e-6;

fn joint_size(actions: &[usize]) -> Result<usize, GameError> {
    let size = MixedRadix::new(actions)
        .map(|r| r.size())
        .ok_or(GameError::JointActionOverflow { size: usize::MAX, cap: JOINT_ACTION_CAP })?;
    if size > JOINT_ACTION_CAP {
        return Err(GameError::JointActionOverflow { size, cap: JOINT_ACTION_CAP });
    }
    Ok(size)
}

/// Flat Dirichlet(1) sample.
fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn cast<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Random rewards in `[0, reward_scale]`, rescaled per agent so the
/// worst-case return is at most one.
fn random_rewards<T: Scalar>(
    rng: &mut ChaCha8Rng,
    actions: &[usize],
    kernel: &TransitionKernel<T>,
    rho: &[T],
    reward_scale: f64,
) -> Result<Vec<T>, GameError> {
    let (h_n, s_n, a_n) = (kernel.horizon(), kernel.n_states(), kernel.n_joint());
    let per_agent = h_n * s_n * a_n;
    let raw: Vec<f64> = (0..actions.len() * per_agent).map(|_| rng.gen::<f64>() * reward_scale.min(1.0)).collect();
    // Cap R = H is the loosest legal value; the rescale below brings returns under one.
    let cap = T::of_usize(h_n);
    let probe = MarkovGame::new(actions.to_vec(), kernel.clone(), cast(&raw), rho.to_vec(), cap)?;
    let mut rewards = raw;
    for i in 0..actions.len() {
        let bound = probe.worst_case_return(i).to_f64_lossy();
        if bound > 1.0 {
            for r in &mut rewards[i * per_agent..(i + 1) * per_agent] {
                *r /= bound;
            }
        }
    }
    Ok(cast(&rewards))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomTabularSpec {
    pub states: usize,
    pub horizon: usize,
    pub actions: Vec<usize>,
    pub n_agents: usize,
    pub reward_scale: f64,
    pub seed: u64,
}

impl RandomTabularSpec {
    pub fn new(states: usize, horizon: usize, actions: Vec<usize>, reward_scale: f64, seed: u64) -> Self {
        let n_agents = actions.len();
        Self { states, horizon, actions, n_agents, reward_scale, seed }
    }
}

/// Dense random game with Dirichlet transition rows and uniform rewards,
/// rescaled so every agent's worst-case return is at most `R = 1`.
pub fn make_random_tabular<T: Scalar>(spec: &RandomTabularSpec) -> Result<MarkovGame<T>, GameError> {
    if spec.states == 0 || spec.horizon == 0 || spec.actions.is_empty() || spec.actions.contains(&0) {
        return Err(GameError::Shape("sizes must be at least one".into()));
    }
    if spec.actions.len() != spec.n_agents {
        return Err(GameError::Shape(format!(
            "{} action sets for {} agents",
            spec.actions.len(),
            spec.n_agents
        )));
    }
    let a_n = joint_size(&spec.actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = spec.horizon * spec.states * a_n;
    let probs: Vec<f64> = (0..rows).flat_map(|_| dirichlet(&mut rng, spec.states)).collect();
    let kernel = TransitionKernel::from_flat(spec.horizon, spec.states, a_n, cast(&probs))?;
    let rho: Vec<T> = cast(&dirichlet(&mut rng, spec.states));
    let rewards = random_rewards(&mut rng, &spec.actions, &kernel, &rho, spec.reward_scale)?;
    MarkovGame::new(spec.actions.clone(), kernel, rewards, rho, T::one())
}

/// Linear-mixture parameterisation `P_h(s'|s,a) = <θ_h, φ(s'|s,a)>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMixture<T> {
    pub dim: usize,
    pub n_states: usize,
    pub n_joint: usize,
    /// `θ_h`, one vector of length `dim` per step.
    pub theta: Vec<Vec<T>>,
    /// `φ(s'|s,a)` flattened as `[s][a][s'][k]`.
    pub phi: Vec<T>,
}

impl<T: Scalar> LinearMixture<T> {
    pub fn feature(&self, s: usize, a: usize, next: usize) -> &[T] {
        let o = ((s * self.n_joint + a) * self.n_states + next) * self.dim;
        &self.phi[o..o + self.dim]
    }

    /// Kernel induced by `theta` (not renormalised).
    pub fn kernel_for(&self, theta: &[Vec<T>]) -> Vec<T> {
        let mut probs = Vec::with_capacity(theta.len() * self.n_states * self.n_joint * self.n_states);
        for th in theta {
            for s in 0..self.n_states {
                for a in 0..self.n_joint {
                    for next in 0..self.n_states {
                        probs.push(crate::scalar::dot(th, self.feature(s, a, next)));
                    }
                }
            }
        }
        probs
    }
}

/// Assembles a validated game from linear-mixture parameters. Rows within
/// `1e-6` of the simplex are renormalised; anything further is an error.
pub fn linear_mixture_game<T: Scalar>(
    params: &LinearMixture<T>,
    actions: Vec<usize>,
    rewards: Vec<T>,
    rho: Vec<T>,
    reward_cap: T,
) -> Result<MarkovGame<T>, GameError> {
    let bound = T::of_usize(params.dim).sqrt();
    for (h, th) in params.theta.iter().enumerate() {
        if norm2(th) > bound + T::tol(1e-12) {
            return Err(GameError::Generator(format!("‖θ_{h}‖ exceeds √d")));
        }
    }
    let mut probs = params.kernel_for(&params.theta);
    let slack = T::of(SIMPLEX_SLACK);
    for (row_idx, row) in probs.chunks_mut(params.n_states).enumerate() {
        let sum: T = row.iter().copied().sum();
        if row.iter().any(|&p| p < -slack) || (sum - T::one()).abs() > slack {
            return Err(GameError::Generator(format!("row {row_idx} is off the simplex (sum {sum})")));
        }
        if row.iter().all(|&p| p >= T::zero()) && (sum - T::one()).abs() <= T::tol(1e-12) {
            continue;
        }
        let clipped: T = row.iter().map(|&p| p.max(T::zero())).sum();
        for p in row.iter_mut() {
            *p = p.max(T::zero()) / clipped;
        }
    }
    let kernel = TransitionKernel::from_flat(params.theta.len(), params.n_states, params.n_joint, probs)?;
    MarkovGame::new(actions, kernel, rewards, rho, reward_cap)
}

/// Random linear-mixture game: `φ_k(·|s,a)` are `d` base distributions and
/// each `θ_h` is drawn from the probability simplex, so every mixture row is
/// a valid distribution and `‖θ_h‖₂ ≤ 1 ≤ √d`.
pub fn make_linear_mixture<T: Scalar>(
    dim: usize,
    states: usize,
    horizon: usize,
    actions: &[usize],
    seed: u64,
) -> Result<(MarkovGame<T>, LinearMixture<T>), GameError> {
    if dim == 0 || states == 0 || horizon == 0 || actions.is_empty() || actions.contains(&0) {
        return Err(GameError::Shape("sizes must be at least one".into()));
    }
    let a_n = joint_size(actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0.0; states * a_n * states * dim];
    for s in 0..states {
        for a in 0..a_n {
            for k in 0..dim {
                let base = dirichlet(&mut rng, states);
                for (next, p) in base.into_iter().enumerate() {
                    phi[((s * a_n + a) * states + next) * dim + k] = p;
                }
            }
        }
    }
    let theta: Vec<Vec<T>> = (0..horizon).map(|_| cast(&dirichlet(&mut rng, dim))).collect();
    let params = LinearMixture { dim, n_states: states, n_joint: a_n, theta, phi: cast(&phi) };
    let kernel = TransitionKernel::from_flat(horizon, states, a_n, params.kernel_for(&params.theta))?;
    let rho: Vec<T> = cast(&dirichlet(&mut rng, states));
    let rewards = random_rewards(&mut rng, actions, &kernel, &rho, 1.0)?;
    let game = linear_mixture_game(&params, actions.to_vec(), rewards, rho, T::one())?;
    Ok((game, params))
}

/// Two-player zero-sum linear game: `r_h = φ(s,a,b)ᵀθ_h` and
/// `P_h(·|s,a,b) = φ(s,a,b)ᵀμ_h(·)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroSumLinear<T> {
    pub dim: usize,
    pub n_states: usize,
    pub n_joint: usize,
    /// `φ(s, a, b)` flattened as `[s][joint action][k]`, entries on the simplex.
    pub features: Vec<T>,
    pub theta: Vec<Vec<T>>,
    /// `μ_h` flattened as `[k][s']` per step.
    pub mu: Vec<Vec<T>>,
}

impl<T: Scalar> ZeroSumLinear<T> {
    pub fn feature(&self, s: usize, a: usize) -> &[T] {
        let o = (s * self.n_joint + a) * self.dim;
        &self.features[o..o + self.dim]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> T {
        crate::scalar::dot(self.feature(s, a), &self.theta[h])
    }

    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> Vec<T> {
        let phi = self.feature(s, a);
        (0..self.n_states)
            .map(|next| (0..self.dim).map(|k| phi[k] * self.mu[h][k * self.n_states + next]).sum())
            .collect()
    }
}

/// Random zero-sum linear game. Agent 0 receives `φᵀθ_h`, agent 1 receives
/// `1 - φᵀθ_h`, so the per-step reward sum is one and the game is
/// constant-sum with total `H`. The reward cap is `R = H`.
pub fn make_zero_sum_linear<T: Scalar>(
    dim: usize,
    states: usize,
    horizon: usize,
    a_actions: usize,
    b_actions: usize,
    seed: u64,
) -> Result<(MarkovGame<T>, ZeroSumLinear<T>), GameError> {
    if dim == 0 || states == 0 || horizon == 0 || a_actions == 0 || b_actions == 0 {
        return Err(GameError::Shape("sizes must be at least one".into()));
    }
    let actions = vec![a_actions, b_actions];
    let a_n = joint_size(&actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f64> = (0..states * a_n).flat_map(|_| dirichlet(&mut rng, dim)).collect();
    let theta: Vec<Vec<f64>> = (0..horizon).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
    let mu: Vec<Vec<f64>> = (0..horizon).map(|_| (0..dim).flat_map(|_| dirichlet(&mut rng, states)).collect()).collect();
    let params: ZeroSumLinear<T> = ZeroSumLinear {
        dim,
        n_states: states,
        n_joint: a_n,
        features: cast(&features),
        theta: theta.iter().map(|t| cast(t)).collect(),
        mu: mu.iter().map(|m| cast(m)).collect(),
    };
    let mut probs = Vec::with_capacity(horizon * states * a_n * states);
    let mut r0 = Vec::with_capacity(horizon * states * a_n);
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..a_n {
                probs.extend(params.transition_row(h, s, a));
                r0.push(params.reward(h, s, a).min(T::one()).max(T::zero()));
            }
        }
    }
    let r1: Vec<T> = r0.iter().map(|&r| T::one() - r).collect();
    let kernel = TransitionKernel::from_flat(horizon, states, a_n, probs)?;
    let rho: Vec<T> = cast(&dirichlet(&mut rng, states));
    let rewards = [r0, r1].concat();
    let game = MarkovGame::new(actions, kernel, rewards, rho, T::of_usize(horizon))?
        .with_constant_sum(T::of_usize(horizon));
    Ok((game, params))
}

/// Sparse-reward "combination lock" for two agents with two actions each.
///
/// Each agent owns a lock that stays intact while it plays its secret code
/// action at every step. At the first step the non-code action pays a
/// `bait` reward (and breaks the lock); at the last step an intact lock plus
/// the code action pays `1 - bait`. States encode both lock statuses as
/// `2·broken_0 + broken_1`.
#[derive(Clone, Debug)]
pub struct LockGame<T> {
    pub game: MarkovGame<T>,
    /// `codes[agent][h]`.
    pub codes: Vec<Vec<usize>>,
}

pub fn make_lock<T: Scalar>(horizon: usize, bait: f64, seed: u64) -> Result<LockGame<T>, GameError> {
    if horizon == 0 || !(0.0..=1.0).contains(&bait) {
        return Err(GameError::Shape("lock needs horizon ≥ 1 and bait in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Vec<usize>> = (0..2).map(|_| (0..horizon).map(|_| rng.gen_range(0..2)).collect()).collect();
    let (s_n, a_n) = (4, 4);
    let joint = MixedRadix::new(&[2, 2]).expect("2x2");
    let broken = |s: usize, i: usize| if i == 0 { s / 2 == 1 } else { s % 2 == 1 };
    let mut probs = vec![T::zero(); horizon * s_n * a_n * s_n];
    let mut rewards = vec![T::zero(); 2 * horizon * s_n * a_n];
    for h in 0..horizon {
        for s in 0..s_n {
            for a in 0..a_n {
                let acts = joint.decode(a);
                let next_broken: Vec<bool> = (0..2).map(|i| broken(s, i) || acts[i] != codes[i][h]).collect();
                let next = 2 * usize::from(next_broken[0]) + usize::from(next_broken[1]);
                probs[((h * s_n + s) * a_n + a) * s_n + next] = T::one();
                for i in 0..2 {
                    let mut r = 0.0;
                    if h == 0 && acts[i] != codes[i][0] {
                        r += bait;
                    }
                    if h == horizon - 1 && !broken(s, i) && acts[i] == codes[i][h] {
                        r += 1.0 - bait;
                    }
                    rewards[((i * horizon + h) * s_n + s) * a_n + a] = T::of(r);
                }
            }
        }
    }
    let kernel = TransitionKernel::from_flat(horizon, s_n, a_n, probs)?;
    let mut rho = vec![T::zero(); s_n];
    rho[0] = T::one();
    let game = MarkovGame::new(vec![2, 2], kernel, rewards, rho, T::one())?;
    Ok(LockGame { game, codes })
}

impl<T: Scalar> LockGame<T> {
    /// Open-loop pure policies (one action per step, ignoring the state):
    /// `2^H` per agent, in binary order of the action sequence.
    pub fn open_loop_space(&self) -> PurePolicySpace<T> {
        let h_n = self.game.horizon();
        let s_n = self.game.n_states();
        let per_agent: Vec<Vec<PurePolicy<T>>> = (0..2)
            .map(|_| {
                (0..1usize << h_n)
                    .map(|bits| {
                        let table: Vec<usize> = (0..h_n)
                            .flat_map(|h| std::iter::repeat_n((bits >> (h_n - 1 - h)) & 1, s_n))
                            .collect();
                        PurePolicy::deterministic(h_n, s_n, 2, &table)
                    })
                    .collect()
            })
            .collect();
        PurePolicySpace::new(per_agent, crate::policy::JOINT_POLICY_CAP).expect("open-loop lock space fits the cap")
    }
}

/// One-state, one-step game whose rewards are the given payoff tables
/// (`payoffs[agent][joint action]`, entries in `[0, 1]`).
pub fn bimatrix_game<T: Scalar>(actions: Vec<usize>, payoffs: &[Vec<f64>]) -> Result<MarkovGame<T>, GameError> {
    let a_n = joint_size(&actions)?;
    if payoffs.len() != actions.len() || payoffs.iter().any(|p| p.len() != a_n) {
        return Err(GameError::Shape("payoff tables do not match the action sets".into()));
    }
    let kernel = TransitionKernel::uniform(1, 1, a_n);
    let rewards: Vec<T> = payoffs.iter().flat_map(|p| cast::<T>(p)).collect();
    MarkovGame::new(actions, kernel, rewards, vec![T::one()], T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_invariants(game: &MarkovGame<f64>) {
        game.kernel().validate(1e-12).unwrap();
        for i in 0..game.n_agents() {
            assert!(game.worst_case_return(i) <= game.reward_cap() + 1e-12);
        }
        assert!((game.rho().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_state_single_action_game() {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(1, 1, vec![1, 1], 1.0, 3)).unwrap();
        assert_eq!(game.n_joint(), 1);
        check_invariants(&game);
    }

    #[test]
    fn random_tabular_is_reproducible() {
        let spec = RandomTabularSpec::new(3, 2, vec![2, 3], 1.0, 42);
        let a = make_random_tabular::<f64>(&spec).unwrap();
        let b = make_random_tabular::<f64>(&spec).unwrap();
        assert_eq!(a.kernel(), b.kernel());
        assert_eq!(a.agent_rewards(1), b.agent_rewards(1));
    }

    #[test]
    fn random_tabular_rejects_oversized_joint_space() {
        let spec = RandomTabularSpec::new(1, 1, vec![100, 100], 1.0, 0);
        assert!(matches!(make_random_tabular::<f64>(&spec), Err(GameError::JointActionOverflow { .. })));
    }

    #[test]
    fn linear_mixture_dimension_one_reproduces_base_kernel() {
        let base = make_random_tabular::<f64>(&RandomTabularSpec::new(3, 1, vec![2], 1.0, 9)).unwrap();
        let phi: Vec<f64> = base.kernel().as_flat().to_vec();
        let params = LinearMixture { dim: 1, n_states: 3, n_joint: 2, theta: vec![vec![1.0]; 2], phi };
        let rewards = [base.agent_rewards(0), base.agent_rewards(0)].concat();
        let game = linear_mixture_game(&params, vec![2], rewards, base.rho().to_vec(), 2.0).unwrap();
        for h in 0..2 {
            for s in 0..3 {
                for a in 0..2 {
                    assert_eq!(game.kernel().row(h, s, a), base.kernel().row(0, s, a));
                }
            }
        }
    }

    #[test]
    fn linear_mixture_rejects_invalid_theta() {
        let (_, mut params) = make_linear_mixture::<f64>(2, 3, 2, &[2], 4).unwrap();
        params.theta[0] = vec![1.2, 0.3];
        let err = linear_mixture_game(&params, vec![2], vec![0.0; 12], vec![1.0, 0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, GameError::Generator(_)));
    }

    #[test]
    fn linear_mixture_reconstructs_stored_kernel() {
        let (game, params) = make_linear_mixture::<f64>(3, 4, 3, &[2, 2], 17).unwrap();
        let rebuilt = params.kernel_for(&params.theta);
        for (x, y) in rebuilt.iter().zip(game.kernel().as_flat()) {
            assert!((x - y).abs() < 1e-12);
        }
        for th in &params.theta {
            assert!(norm2(th) <= (params.dim as f64).sqrt());
        }
    }

    #[test]
    fn zero_sum_linear_structure() {
        let (game, params) = make_zero_sum_linear::<f64>(3, 4, 2, 2, 3, 8).unwrap();
        for h in 0..2 {
            for s in 0..4 {
                for a in 0..6 {
                    assert!((game.reward(0, h, s, a) - params.reward(h, s, a)).abs() < 1e-12);
                    assert!((game.reward(0, h, s, a) + game.reward(1, h, s, a) - 1.0).abs() < 1e-12);
                    let row_sum: f64 = params.transition_row(h, s, a).iter().sum();
                    assert!((row_sum - 1.0).abs() < 1e-12);
                    assert!(norm2(params.feature(s, a)) <= 1.0 + 1e-12);
                }
            }
        }
        assert_eq!(game.constant_sum(), Some(2.0));
    }

    #[test]
    fn lock_game_rewards_code_and_bait() {
        let lock = make_lock::<f64>(3, 0.4, 2).unwrap();
        assert!((lock.game.worst_case_return(0) - 0.6).abs() < 1e-12);
        let joint = lock.game.joint_actions().clone();
        let code_first = joint.encode(&[lock.codes[0][0], lock.codes[1][0]]);
        assert_eq!(lock.game.reward(0, 0, 0, code_first), 0.0);
        let bait_first = joint.encode(&[1 - lock.codes[0][0], lock.codes[1][0]]);
        assert_eq!(lock.game.reward(0, 0, 0, bait_first), 0.4);
        assert_eq!(lock.open_loop_space().joint_size(), 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn generators_respect_game_invariants(seed in 0u64..1_000_000) {
            let spec = RandomTabularSpec::new(1 + (seed % 4) as usize, 1 + (seed % 3) as usize, vec![2, 1 + (seed % 3) as usize], 1.0, seed);
            check_invariants(&make_random_tabular(&spec).unwrap());
            check_invariants(&make_linear_mixture(2, 3, 2, &[2, 2], seed).unwrap().0);
            check_invariants(&make_zero_sum_linear(2, 3, 2, 2, 2, seed).unwrap().0);
        }
    }
}
