//! Hypothesis classes: per-agent Q tables (tabular or linear in features)
//! and transition models (tabular or linear mixtures).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::{bellman_apply, evaluate_pure, evaluate_under};
use crate::game::{LinearMixture, MarkovGame, TransitionKernel, ZeroSumLinear};
use crate::linalg::least_squares;
use crate::policy::JointPolicyTable;
use crate::scalar::{dot, norm2, Scalar};

#[derive(Debug, Error)]
pub enum HypothesisError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature at h={h} s={s} a={a} has norm {norm} > 1")]
    FeatureNorm { h: usize, s: usize, a: usize, norm: f64 },
    #[error("parameter norm {norm} at h={h} exceeds √d = {bound}")]
    ParameterNorm { h: usize, norm: f64, bound: f64 },
    #[error("model row h={h} s={s} a={a} is not a distribution (sum {sum})")]
    InvalidRow { h: usize, s: usize, a: usize, sum: f64 },
}

/// Tabular Q hypothesis `f_h(s, a)` with entries in `[0, R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QHypothesis<T> {
    horizon: usize,
    n_states: usize,
    n_joint: usize,
    cap: T,
    tables: Vec<T>,
}

impl<T: Scalar> QHypothesis<T> {
    /// Entries are clipped into `[0, cap]`.
    pub fn new(horizon: usize, n_states: usize, n_joint: usize, cap: T, mut tables: Vec<T>) -> Result<Self, HypothesisError> {
        if tables.len() != horizon * n_states * n_joint {
            return Err(HypothesisError::Shape(format!("{} entries for {horizon}x{n_states}x{n_joint}", tables.len())));
        }
        for x in tables.iter_mut() {
            *x = x.max(T::zero()).min(cap);
        }
        Ok(Self { horizon, n_states, n_joint, cap, tables })
    }

    pub fn constant(game: &MarkovGame<T>, value: T) -> Self {
        let len = game.horizon() * game.n_states() * game.n_joint();
        Self::new(game.horizon(), game.n_states(), game.n_joint(), game.reward_cap(), vec![value; len]).expect("shape from game")
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

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> T {
        self.tables[(h * self.n_states + s) * self.n_joint + a]
    }

    /// `f_h` as `[s][a]`.
    pub fn layer(&self, h: usize) -> &[T] {
        let len = self.n_states * self.n_joint;
        &self.tables[h * len..(h + 1) * len]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.tables
    }

    /// Sets one entry, clipped into `[0, cap]`.
    pub fn set(&mut self, h: usize, s: usize, a: usize, value: T) {
        self.tables[(h * self.n_states + s) * self.n_joint + a] = value.max(T::zero()).min(self.cap);
    }

    /// `V_{h,f}(s) = ⟨f_h(s, ·), π_h(·|s)⟩`.
    pub fn state_value(&self, h: usize, s: usize, policy: &JointPolicyTable<T>) -> T {
        let o = (h * self.n_states + s) * self.n_joint;
        policy.expect_row(h, s, &self.tables[o..o + self.n_joint])
    }

    /// `V_{h,f}` for every state.
    pub fn state_values(&self, h: usize, policy: &JointPolicyTable<T>) -> Vec<T> {
        (0..self.n_states).map(|s| self.state_value(h, s, policy)).collect()
    }

    /// `V_f(ρ) = E_{s∼ρ, a∼π_0}[f_0(s, a)]`.
    pub fn value(&self, policy: &JointPolicyTable<T>, rho: &[T]) -> T {
        rho.iter().enumerate().filter(|(_, &p)| p > T::zero()).map(|(s, &p)| p * self.state_value(0, s, policy)).sum()
    }
}

/// The realizable hypothesis: the true `Q^{(i),π}` (clipped to `[0, R]`,
/// which only affects states no trajectory from `ρ` reaches).
pub fn true_q_hypothesis<T: Scalar>(game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> QHypothesis<T> {
    let tables = evaluate_pure(game, policy, agent);
    QHypothesis::new(game.horizon(), game.n_states(), game.n_joint(), game.reward_cap(), tables.q_flat().to_vec()).expect("shape from game")
}

/// Linear Q class `f_h(s, a) = φ_h(s, a)ᵀθ_h`, `‖θ_h‖₂ ≤ √d`, `‖φ‖₂ ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQClass<T> {
    dim: usize,
    horizon: usize,
    n_states: usize,
    n_joint: usize,
    cap: T,
    /// `[h][s][a][k]`.
    features: Vec<T>,
}

impl<T: Scalar> LinearQClass<T> {
    pub fn new(dim: usize, horizon: usize, n_states: usize, n_joint: usize, cap: T, features: Vec<T>) -> Result<Self, HypothesisError> {
        if dim == 0 || features.len() != horizon * n_states * n_joint * dim {
            return Err(HypothesisError::Shape(format!("{} feature entries for d={dim}", features.len())));
        }
        for (idx, f) in features.chunks(dim).enumerate() {
            let n = norm2(f);
            if n > T::one() + T::tol(1e-12) {
                let (h, rest) = (idx / (n_states * n_joint), idx % (n_states * n_joint));
                return Err(HypothesisError::FeatureNorm { h, s: rest / n_joint, a: rest % n_joint, norm: n.to_f64_lossy() });
            }
        }
        Ok(Self { dim, horizon, n_states, n_joint, cap, features })
    }

    /// Features of a zero-sum linear game, shared across steps.
    pub fn from_zero_sum(params: &ZeroSumLinear<T>, horizon: usize, cap: T) -> Result<Self, HypothesisError> {
        let features = (0..horizon).flat_map(|_| params.features.iter().copied()).collect();
        Self::new(params.dim, horizon, params.n_states, params.n_joint, cap, features)
    }

    /// One-hot features over `(s, a)`: the tabular class written linearly.
    pub fn one_hot(horizon: usize, n_states: usize, n_joint: usize, cap: T) -> Self {
        let dim = n_states * n_joint;
        let mut features = vec![T::zero(); horizon * dim * dim];
        for h in 0..horizon {
            for sa in 0..dim {
                features[(h * dim + sa) * dim + sa] = T::one();
            }
        }
        Self { dim, horizon, n_states, n_joint, cap, features }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    pub fn feature(&self, h: usize, s: usize, a: usize) -> &[T] {
        let o = ((h * self.n_states + s) * self.n_joint + a) * self.dim;
        &self.features[o..o + self.dim]
    }

    pub fn norm_bound(&self) -> T {
        T::of_usize(self.dim).sqrt()
    }

    /// `φ_hᵀθ_h` for every `(s, a)`, unclipped.
    pub fn raw_layer(&self, h: usize, theta: &[T]) -> Vec<T> {
        (0..self.n_states * self.n_joint).map(|sa| dot(self.feature(h, sa / self.n_joint, sa % self.n_joint), theta)).collect()
    }

    pub fn hypothesis(&self, theta: Vec<Vec<T>>) -> Result<LinearQHypothesis<T>, HypothesisError> {
        if theta.len() != self.horizon || theta.iter().any(|t| t.len() != self.dim) {
            return Err(HypothesisError::Shape("θ must have one d-vector per step".into()));
        }
        let bound = self.norm_bound();
        for (h, t) in theta.iter().enumerate() {
            let n = norm2(t);
            if n > bound + T::tol(1e-12) {
                return Err(HypothesisError::ParameterNorm { h, norm: n.to_f64_lossy(), bound: bound.to_f64_lossy() });
            }
        }
        Ok(LinearQHypothesis { class: self.clone(), theta })
    }

    /// Largest least-squares residual of `T_h(φ_{h+1}ᵀθ)` against the span of
    /// `φ_h`, over `probes` random parameters per step.
    pub fn completeness_residual(&self, game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize, probes: usize, seed: u64) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sa_n = self.n_states * self.n_joint;
        let design: Vec<Vec<T>> = (0..self.horizon)
            .flat_map(|h| (0..sa_n).map(move |sa| (h, sa)))
            .map(|(h, sa)| self.feature(h, sa / self.n_joint, sa % self.n_joint).to_vec())
            .collect();
        let mut worst = T::zero();
        for h in 0..self.horizon {
            let rows = &design[h * sa_n..(h + 1) * sa_n];
            for _ in 0..probes.max(1) {
                let next = (h + 1 < self.horizon).then(|| {
                    let theta: Vec<T> = (0..self.dim).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
                    self.raw_layer(h + 1, &theta)
                });
                let target = bellman_apply(game, next.as_deref(), policy, agent, h);
                let residual = least_squares(rows, &target).map_or(T::infinity(), |(_, r)| r);
                worst = worst.max(residual);
            }
        }
        worst
    }

    /// [`LinearQClass::completeness_residual`] with a warning above `1e-8`.
    pub fn check_completeness(&self, game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> T {
        let r = self.completeness_residual(game, policy, agent, 4, 0);
        if r > T::of(1e-8) {
            log::warn!("linear Q class is not Bellman complete on this game (residual {r})");
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearQHypothesis<T> {
    class: LinearQClass<T>,
    theta: Vec<Vec<T>>,
}

impl<T: Scalar> LinearQHypothesis<T> {
    pub fn theta(&self) -> &[Vec<T>] {
        &self.theta
    }

    /// Tabular view with entries clipped to `[0, R]`.
    pub fn to_tabular(&self) -> QHypothesis<T> {
        let c = &self.class;
        let tables = (0..c.horizon).flat_map(|h| c.raw_layer(h, &self.theta[h])).collect();
        QHypothesis::new(c.horizon, c.n_states, c.n_joint, c.cap, tables).expect("shape from class")
    }

    /// `E_{s∼ρ, a∼π_0}[φ_0ᵀθ_0]` without clipping.
    pub fn value_unclipped(&self, policy: &JointPolicyTable<T>, rho: &[T]) -> T {
        let layer = self.class.raw_layer(0, &self.theta[0]);
        let a_n = self.class.n_joint;
        rho.iter().enumerate().map(|(s, &p)| p * policy.expect_row(0, s, &layer[s * a_n..(s + 1) * a_n])).sum()
    }
}

/// Transition model `P_f` with rows validated as distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelHypothesis<T> {
    kernel: TransitionKernel<T>,
}

impl<T: Scalar> ModelHypothesis<T> {
    pub fn new(kernel: TransitionKernel<T>) -> Result<Self, HypothesisError> {
        let (h_n, s_n, a_n) = (kernel.horizon(), kernel.n_states(), kernel.n_joint());
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let row = kernel.row(h, s, a);
                    let sum: T = row.iter().copied().sum();
                    if row.iter().any(|&p| p < T::zero()) || (sum - T::one()).abs() > T::tol(1e-10) {
                        return Err(HypothesisError::InvalidRow { h, s, a, sum: sum.to_f64_lossy() });
                    }
                }
            }
        }
        Ok(Self { kernel })
    }

    /// Rows given by `softmax(logits)`; logits laid out like the kernel.
    pub fn from_logits(horizon: usize, n_states: usize, n_joint: usize, logits: &[T]) -> Result<Self, HypothesisError> {
        if logits.len() != horizon * n_states * n_joint * n_states {
            return Err(HypothesisError::Shape("logit table does not match the model shape".into()));
        }
        let probs = logits.chunks(n_states).flat_map(softmax).collect();
        let kernel = TransitionKernel::from_flat(horizon, n_states, n_joint, probs).map_err(|e| HypothesisError::Shape(e.to_string()))?;
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> &TransitionKernel<T> {
        &self.kernel
    }

    pub fn into_kernel(self) -> TransitionKernel<T> {
        self.kernel
    }

    /// Exact value of `agent` under this model with the game's rewards.
    pub fn value(&self, game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> T {
        evaluate_under(&self.kernel, game.agent_rewards(agent), game.rho(), policy).value()
    }
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Linear-mixture models `P_h = ⟨θ_h, φ⟩`, with `θ_h` restricted to the
/// probability simplex so every row stays a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMixtureClass<T> {
    pub params: LinearMixture<T>,
}

impl<T: Scalar> LinearMixtureClass<T> {
    pub fn model(&self, theta: &[Vec<T>]) -> Result<ModelHypothesis<T>, HypothesisError> {
        let bound = T::of_usize(self.params.dim).sqrt();
        for (h, t) in theta.iter().enumerate() {
            let n = norm2(t);
            if n > bound + T::tol(1e-12) {
                return Err(HypothesisError::ParameterNorm { h, norm: n.to_f64_lossy(), bound: bound.to_f64_lossy() });
            }
        }
        let probs = self.params.kernel_for(theta);
        let kernel = TransitionKernel::from_flat(theta.len(), self.params.n_states, self.params.n_joint, probs)
            .map_err(|e| HypothesisError::Shape(e.to_string()))?;
        ModelHypothesis::new(kernel)
    }
}

/// Either kind of hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub enum Hypothesis<T> {
    ModelFree(QHypothesis<T>),
    ModelBased(ModelHypothesis<T>),
}

/// `V_f^{(i),π}(ρ)`: `E[f_0]` for Q hypotheses, the DP value under `P_f`
/// for models.
pub fn value_under_hypothesis<T: Scalar>(f: &Hypothesis<T>, game: &MarkovGame<T>, policy: &JointPolicyTable<T>, agent: usize) -> T {
    match f {
        Hypothesis::ModelFree(q) => q.value(policy, game.rho()),
        Hypothesis::ModelBased(m) => m.value(game, policy, agent),
    }
}

/// Serialized hypothesis for result bundles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisFile {
    QTable { horizon: usize, states: usize, joint_actions: usize, cap: f64, values: Vec<f64> },
    Model { horizon: usize, states: usize, joint_actions: usize, probs: Vec<f64> },
}

impl<T: Scalar> From<&Hypothesis<T>> for HypothesisFile {
    fn from(f: &Hypothesis<T>) -> Self {
        match f {
            Hypothesis::ModelFree(q) => HypothesisFile::QTable {
                horizon: q.horizon,
                states: q.n_states,
                joint_actions: q.n_joint,
                cap: q.cap.to_f64_lossy(),
                values: q.tables.iter().map(|x| x.to_f64_lossy()).collect(),
            },
            Hypothesis::ModelBased(m) => HypothesisFile::Model {
                horizon: m.kernel.horizon(),
                states: m.kernel.n_states(),
                joint_actions: m.kernel.n_joint(),
                probs: m.kernel.as_flat().iter().map(|x| x.to_f64_lossy()).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_linear_mixture, make_random_tabular, make_zero_sum_linear, RandomTabularSpec};
    use crate::policy::PurePolicySpace;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn setup() -> (MarkovGame<f64>, JointPolicyTable<f64>) {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(3, 3, vec![2, 2], 1.0, 4)).unwrap();
        let space = PurePolicySpace::deterministic_sample(&game, 4, 2, 4096).unwrap();
        let table = JointPolicyTable::from_space(&space, 7);
        (game, table)
    }

    #[test]
    fn zero_q_has_zero_value() {
        let (game, table) = setup();
        let f = Hypothesis::ModelFree(QHypothesis::constant(&game, 0.0));
        assert_eq!(value_under_hypothesis(&f, &game, &table, 0), 0.0);
    }

    #[test]
    fn true_hypotheses_reproduce_exact_values() {
        let (game, table) = setup();
        for i in 0..2 {
            let exact = evaluate_pure(&game, &table, i).value();
            let q = Hypothesis::ModelFree(true_q_hypothesis(&game, &table, i));
            assert!((value_under_hypothesis(&q, &game, &table, i) - exact).abs() <= 1e-12);
            let m = Hypothesis::ModelBased(ModelHypothesis::new(game.kernel().clone()).unwrap());
            assert!((value_under_hypothesis(&m, &game, &table, i) - exact).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_step_true_q_is_the_reward() {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(2, 1, vec![2], 1.0, 4)).unwrap();
        let space = PurePolicySpace::deterministic_enumeration(&game, 16).unwrap();
        let q = true_q_hypothesis(&game, &JointPolicyTable::from_space(&space, 1), 0);
        assert_eq!(q.as_flat(), game.agent_rewards(0));
    }

    #[test]
    fn entries_are_clipped() {
        let q = QHypothesis::<f64>::new(1, 1, 2, 1.0, vec![-0.5, 3.0]).unwrap();
        assert_eq!(q.as_flat(), &[0.0, 1.0]);
    }

    #[test]
    fn zero_sum_linear_features_are_bellman_complete() {
        let (game, params) = make_zero_sum_linear::<f64>(3, 4, 3, 2, 2, 8).unwrap();
        let class = LinearQClass::from_zero_sum(&params, 3, game.reward_cap()).unwrap();
        let space = PurePolicySpace::deterministic_sample(&game, 3, 1, 4096).unwrap();
        for j in 0..space.joint_size() {
            let table = JointPolicyTable::from_space(&space, j);
            assert!(class.check_completeness(&game, &table, 0) < 1e-8);
        }
    }

    #[test]
    fn one_hot_class_is_complete_and_low_rank_class_is_not() {
        let (game, table) = setup();
        let tab = LinearQClass::one_hot(3, 3, 4, 1.0);
        assert!(tab.completeness_residual(&game, &table, 0, 3, 1) < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<f64> = (0..3 * 3 * 4 * 2).map(|_| rng.gen_range(0.0..0.7)).collect();
        let low = LinearQClass::new(2, 3, 3, 4, 1.0, feats).unwrap();
        assert!(low.completeness_residual(&game, &table, 0, 3, 1) > 1e-8);
    }

    #[test]
    fn rejects_oversized_parameters() {
        let class = LinearQClass::<f64>::one_hot(1, 1, 1, 1.0);
        assert!(matches!(class.hypothesis(vec![vec![1.5]]), Err(HypothesisError::ParameterNorm { .. })));
    }

    #[test]
    fn linear_mixture_model_at_true_theta_is_the_game() {
        let (game, params) = make_linear_mixture::<f64>(3, 4, 2, &[2, 2], 5).unwrap();
        let theta = params.theta.clone();
        let class = LinearMixtureClass { params };
        let model = class.model(&theta).unwrap();
        for (x, y) in model.kernel().as_flat().iter().zip(game.kernel().as_flat()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn logits_give_valid_rows() {
        let logits: Vec<f64> = (0..2 * 2 * 3 * 2).map(|k| (k as f64 * 0.7).sin() * 5.0).collect();
        let m = ModelHypothesis::from_logits(2, 2, 3, &logits).unwrap();
        assert!(ModelHypothesis::new(m.kernel().clone()).is_ok());
    }

    proptest! {
        #[test]
        fn q_values_stay_in_range(vals in prop::collection::vec(-2.0f64..3.0, 3 * 3 * 4)) {
            let (game, table) = setup();
            let q = QHypothesis::new(3, 3, 4, game.reward_cap(), vals).unwrap();
            let v = q.value(&table, game.rho());
            prop_assert!((0.0..=game.reward_cap()).contains(&v));
        }

        #[test]
        fn linear_value_is_linear_in_theta(a in prop::collection::vec(-0.5f64..0.5, 2), b in prop::collection::vec(-0.5f64..0.5, 2), t in 0.0f64..1.0) {
            let (game, table) = setup();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let feats: Vec<f64> = (0..3 * 3 * 4 * 2).map(|_| rng.gen_range(0.0..0.7)).collect();
            let class = LinearQClass::new(2, 3, 3, 4, game.reward_cap(), feats).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let val = |th: &[f64]| class.hypothesis(vec![th.to_vec(); 3]).unwrap().value_unclipped(&table, game.rho());
            prop_assert!((val(&mix) - ((1.0 - t) * val(&a) + t * val(&b))).abs() <= 1e-10);
        }
    }
}
