//! Finite pure-policy spaces and joint (possibly correlated) mixed policies.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::MarkovGame;
use crate::index::MixedRadix;
use crate::scalar::{norm2, Scalar};

/// Default cap on `Π_i |Π_i^pur|`.
pub const JOINT_POLICY_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("agent {agent}: {count} policies exceed cap {cap}")]
    CapExceeded { agent: usize, count: String, cap: usize },
    #[error("joint policy space of size {size} exceeds cap {cap}")]
    JointCapExceeded { size: String, cap: usize },
    #[error("agent {0} has an empty policy set")]
    Empty(usize),
    #[error("subsample of {size} requested from {available} policies")]
    SubsampleTooLarge { size: usize, available: String },
    #[error("feature ψ(s={s}, a={a}) has norm {norm} > 1")]
    FeatureNorm { s: usize, a: usize, norm: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("policy shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Deterministic,
    /// `Softmax(ϑᵀψ(s,·))` with the stored parameter.
    LogLinear { theta: Vec<f64> },
    /// Anything else supplied directly as a table.
    Tabular,
}

/// A Markov policy of one agent: for every step and state a distribution
/// over the agent's own actions, stored as `[h][s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PurePolicy<T> {
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
    kind: PolicyKind,
}

impl<T: Scalar> PurePolicy<T> {
    /// Point-mass policy from an action table laid out `[h][s]`.
    pub fn deterministic(horizon: usize, n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), horizon * n_states);
        let mut probs = vec![T::zero(); horizon * n_states * n_actions];
        for (cell, &a) in actions.iter().enumerate() {
            assert!(a < n_actions, "action {a} out of range");
            probs[cell * n_actions + a] = T::one();
        }
        Self { horizon, n_states, n_actions, probs, kind: PolicyKind::Deterministic }
    }

    /// Policy from explicit `[h][s][a]` probabilities.
    pub fn from_table(horizon: usize, n_states: usize, n_actions: usize, probs: Vec<T>, kind: PolicyKind) -> Result<Self, PolicyError> {
        if probs.len() != horizon * n_states * n_actions {
            return Err(PolicyError::Shape(format!("{} entries for {horizon}x{n_states}x{n_actions}", probs.len())));
        }
        for (cell, row) in probs.chunks(n_actions).enumerate() {
            let sum: T = row.iter().copied().sum();
            if row.iter().any(|&p| p < T::zero()) || (sum - T::one()).abs() > T::tol(1e-12) {
                return Err(PolicyError::InvalidDistribution(format!("cell {cell} sums to {sum}")));
            }
        }
        Ok(Self { horizon, n_states, n_actions, probs, kind })
    }

    pub fn dist(&self, h: usize, s: usize) -> &[T] {
        let o = (h * self.n_states + s) * self.n_actions;
        &self.probs[o..o + self.n_actions]
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// The chosen action when the policy is a point mass at `(h, s)`.
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        let d = self.dist(h, s);
        d.iter().position(|&p| p == T::one())
    }
}

/// How to build one agent's pure-policy set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentPolicySpec {
    /// Every deterministic Markov policy.
    DeterministicEnum,
    /// Seeded uniform subsample without replacement of the deterministic policies.
    DeterministicSample { size: usize, seed: u64 },
    /// Grid cover of the log-linear class; `psi` is laid out `[s][a][k]`.
    LogLinear { psi: Vec<Vec<Vec<f64>>>, eps: f64 },
    /// Deterministic policies that ignore the state (one action per step).
    OpenLoop,
}

/// Policy-space file: either one spec applied to every agent or one per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpaceSpec {
    PerAgent(Vec<AgentPolicySpec>),
    Shared(AgentPolicySpec),
}

/// `Π^pur = ⊗_i Π_i^pur` as explicit per-agent lists.
#[derive(Clone, Debug)]
pub struct PurePolicySpace<T> {
    per_agent: Vec<Vec<PurePolicy<T>>>,
    joint: MixedRadix,
}

fn per_agent_total(n_actions: usize, cells: usize) -> Option<usize> {
    u32::try_from(cells).ok().and_then(|c| n_actions.checked_pow(c))
}

fn decode_actions(mut flat: usize, n_actions: usize, cells: usize) -> Vec<usize> {
    let mut table = vec![0; cells];
    for slot in table.iter_mut().rev() {
        *slot = flat % n_actions;
        flat /= n_actions;
    }
    table
}

/// How many of an agent's deterministic policies to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    All,
    Sample { size: usize, seed: u64 },
}

/// Deterministic Markov policies of `agent`: the full enumeration (policy
/// `m` reads its actions as the base-`|A_i|` digits of `m` over cells
/// `(h, s)`, most significant first) or a seeded subsample in draw order.
pub fn enumerate_deterministic<T: Scalar>(
    game: &MarkovGame<T>,
    agent: usize,
    selection: Selection,
    cap: usize,
) -> Result<Vec<PurePolicy<T>>, PolicyError> {
    let (h_n, s_n) = (game.horizon(), game.n_states());
    let n_actions = game.actions()[agent];
    let cells = h_n * s_n;
    let total = per_agent_total(n_actions, cells);
    let build = |table: Vec<usize>| PurePolicy::deterministic(h_n, s_n, n_actions, &table);
    match selection {
        Selection::All => {
            let total = total
                .filter(|&t| t <= cap)
                .ok_or_else(|| PolicyError::CapExceeded { agent, count: format!("{n_actions}^{cells}"), cap })?;
            Ok((0..total).map(|m| build(decode_actions(m, n_actions, cells))).collect())
        }
        Selection::Sample { size, seed } => {
            if size > cap {
                return Err(PolicyError::CapExceeded { agent, count: size.to_string(), cap });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(agent as u64));
            match total {
                Some(t) => {
                    if size > t {
                        return Err(PolicyError::SubsampleTooLarge { size, available: t.to_string() });
                    }
                    Ok(index::sample(&mut rng, t, size)
                        .into_iter()
                        .map(|m| build(decode_actions(m, n_actions, cells)))
                        .collect())
                }
                None => {
                    // Too many policies to index: draw action tables and drop repeats.
                    let mut seen = std::collections::HashSet::new();
                    let mut out = Vec::with_capacity(size);
                    while out.len() < size {
                        let table: Vec<usize> = (0..cells).map(|_| rng.gen_range(0..n_actions)).collect();
                        if seen.insert(table.clone()) {
                            out.push(build(table));
                        }
                    }
                    Ok(out)
                }
            }
        }
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Grid cover of the log-linear class `Softmax(ϑᵀψ(s,·))`, `‖ϑ‖₂ ≤ 1`.
///
/// Grid points are the multiples of `eps` in each coordinate that fall in
/// the unit ball. `psi` is laid out `[s][a][k]` and shared across steps.
pub fn log_linear_cover<T: Scalar>(
    psi: &[Vec<Vec<T>>],
    horizon: usize,
    eps: f64,
    cap: usize,
) -> Result<Vec<PurePolicy<T>>, PolicyError> {
    let n_states = psi.len();
    let n_actions = psi.first().map_or(0, |p| p.len());
    let dim = psi.first().and_then(|p| p.first()).map_or(0, |f| f.len());
    if n_states == 0 || n_actions == 0 || dim == 0 || !(eps > 0.0) {
        return Err(PolicyError::Shape("log-linear cover needs nonempty features and eps > 0".into()));
    }
    for (s, per_s) in psi.iter().enumerate() {
        if per_s.len() != n_actions {
            return Err(PolicyError::Shape(format!("psi[{s}] has {} actions", per_s.len())));
        }
        for (a, f) in per_s.iter().enumerate() {
            if f.len() != dim {
                return Err(PolicyError::Shape(format!("psi[{s}][{a}] has dimension {}", f.len())));
            }
            let n = norm2(f);
            if n > T::one() + T::tol(1e-12) {
                return Err(PolicyError::FeatureNorm { s, a, norm: n.to_f64_lossy() });
            }
        }
    }
    let steps = (1.0 / eps + 1e-9).floor() as usize;
    let side = 2 * steps + 1;
    let grid = u32::try_from(dim)
        .ok()
        .and_then(|d| side.checked_pow(d))
        .filter(|&g| g <= cap.saturating_mul(64))
        .ok_or_else(|| PolicyError::CapExceeded { agent: 0, count: format!("{side}^{dim}"), cap })?;
    let mut out = Vec::new();
    for g in 0..grid {
        let theta: Vec<f64> = decode_actions(g, side, dim)
            .into_iter()
            .map(|k| (k as f64 - steps as f64) * eps)
            .collect();
        if theta.iter().map(|x| x * x).sum::<f64>() > 1.0 + 1e-12 {
            continue;
        }
        if out.len() == cap {
            return Err(PolicyError::CapExceeded { agent: 0, count: format!("more than {cap}"), cap });
        }
        let th: Vec<T> = theta.iter().map(|&x| T::of(x)).collect();
        let mut probs = Vec::with_capacity(horizon * n_states * n_actions);
        for _ in 0..horizon {
            for per_s in psi {
                let logits: Vec<T> = per_s.iter().map(|f| crate::scalar::dot(f, &th)).collect();
                probs.extend(softmax(&logits));
            }
        }
        out.push(PurePolicy { horizon, n_states, n_actions, probs, kind: PolicyKind::LogLinear { theta } });
    }
    Ok(out)
}

impl<T: Scalar> PurePolicySpace<T> {
    pub fn new(per_agent: Vec<Vec<PurePolicy<T>>>, cap: usize) -> Result<Self, PolicyError> {
        if let Some(agent) = per_agent.iter().position(|p| p.is_empty()) {
            return Err(PolicyError::Empty(agent));
        }
        let counts: Vec<usize> = per_agent.iter().map(|p| p.len()).collect();
        let joint = MixedRadix::new(&counts)
            .filter(|r| r.size() <= cap)
            .ok_or_else(|| PolicyError::JointCapExceeded { size: format!("{counts:?}"), cap })?;
        Ok(Self { per_agent, joint })
    }

    /// Every deterministic policy for every agent.
    pub fn deterministic_enumeration(game: &MarkovGame<T>, cap: usize) -> Result<Self, PolicyError> {
        let per_agent = (0..game.n_agents())
            .map(|i| enumerate_deterministic(game, i, Selection::All, cap))
            .collect::<Result<_, _>>()?;
        Self::new(per_agent, cap)
    }

    /// `size` seeded deterministic policies per agent (agent `i` uses `seed + i`).
    pub fn deterministic_sample(game: &MarkovGame<T>, size: usize, seed: u64, cap: usize) -> Result<Self, PolicyError> {
        let per_agent = (0..game.n_agents())
            .map(|i| enumerate_deterministic(game, i, Selection::Sample { size, seed }, cap))
            .collect::<Result<_, _>>()?;
        Self::new(per_agent, cap)
    }

    pub fn from_spec(game: &MarkovGame<T>, spec: &PolicySpaceSpec, cap: usize) -> Result<Self, PolicyError> {
        let specs: Vec<AgentPolicySpec> = match spec {
            PolicySpaceSpec::Shared(s) => vec![s.clone(); game.n_agents()],
            PolicySpaceSpec::PerAgent(v) => {
                if v.len() != game.n_agents() {
                    return Err(PolicyError::Shape(format!("{} specs for {} agents", v.len(), game.n_agents())));
                }
                v.clone()
            }
        };
        let (h_n, s_n) = (game.horizon(), game.n_states());
        let per_agent = specs
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                AgentPolicySpec::DeterministicEnum => enumerate_deterministic(game, i, Selection::All, cap),
                AgentPolicySpec::DeterministicSample { size, seed } => {
                    enumerate_deterministic(game, i, Selection::Sample { size: *size, seed: *seed }, cap)
                }
                AgentPolicySpec::LogLinear { psi, eps } => {
                    if psi.len() != s_n || psi.iter().any(|p| p.len() != game.actions()[i]) {
                        return Err(PolicyError::Shape(format!("psi for agent {i} does not match the game")));
                    }
                    let psi: Vec<Vec<Vec<T>>> = psi
                        .iter()
                        .map(|per_s| per_s.iter().map(|f| f.iter().map(|&x| T::of(x)).collect()).collect())
                        .collect();
                    log_linear_cover(&psi, h_n, *eps, cap)
                }
                AgentPolicySpec::OpenLoop => {
                    let n_actions = game.actions()[i];
                    let total = per_agent_total(n_actions, h_n)
                        .filter(|&t| t <= cap)
                        .ok_or_else(|| PolicyError::CapExceeded { agent: i, count: format!("{n_actions}^{h_n}"), cap })?;
                    Ok((0..total)
                        .map(|m| {
                            let seq = decode_actions(m, n_actions, h_n);
                            let table: Vec<usize> =
                                seq.iter().flat_map(|&a| std::iter::repeat_n(a, s_n)).collect();
                            PurePolicy::deterministic(h_n, s_n, n_actions, &table)
                        })
                        .collect())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(per_agent, cap)
    }

    pub fn n_agents(&self) -> usize {
        self.per_agent.len()
    }

    pub fn agent_policies(&self, agent: usize) -> &[PurePolicy<T>] {
        &self.per_agent[agent]
    }

    pub fn policy(&self, agent: usize, idx: usize) -> &PurePolicy<T> {
        &self.per_agent[agent][idx]
    }

    pub fn counts(&self) -> &[usize] {
        self.joint.radices()
    }

    pub fn joint(&self) -> &MixedRadix {
        &self.joint
    }

    pub fn joint_size(&self) -> usize {
        self.joint.size()
    }

    /// Checks the space was built for this game's shape.
    pub fn check_against(&self, game: &MarkovGame<T>) -> Result<(), PolicyError> {
        if self.n_agents() != game.n_agents() {
            return Err(PolicyError::Shape(format!("{} agents in space, {} in game", self.n_agents(), game.n_agents())));
        }
        for (i, pols) in self.per_agent.iter().enumerate() {
            for p in pols {
                if p.horizon != game.horizon() || p.n_states != game.n_states() || p.n_actions != game.actions()[i] {
                    return Err(PolicyError::Shape(format!("agent {i} policy shape does not match the game")));
                }
            }
        }
        Ok(())
    }
}

/// The joint action distribution `π_h(a | s)` of one joint pure policy,
/// kept sparse per `(h, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPolicyTable<T> {
    n_states: usize,
    entries: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> JointPolicyTable<T> {
    pub fn from_policies(policies: &[&PurePolicy<T>]) -> Self {
        let h_n = policies[0].horizon;
        let s_n = policies[0].n_states;
        let radix = MixedRadix::new(&policies.iter().map(|p| p.n_actions).collect::<Vec<_>>()).expect("joint actions");
        let mut entries = Vec::with_capacity(h_n * s_n);
        for h in 0..h_n {
            for s in 0..s_n {
                let mut cell: Vec<(usize, T)> = vec![(0, T::one())];
                for (k, p) in policies.iter().enumerate() {
                    let mut next = Vec::new();
                    for &(flat, mass) in &cell {
                        for (a, &q) in p.dist(h, s).iter().enumerate() {
                            if q > T::zero() {
                                next.push((flat + a * stride(&radix, k), mass * q));
                            }
                        }
                    }
                    cell = next;
                }
                cell.sort_by_key(|e| e.0);
                entries.push(cell);
            }
        }
        Self { n_states: s_n, entries }
    }

    /// Table of joint pure policy `joint_index` from `space`.
    pub fn from_space(space: &PurePolicySpace<T>, joint_index: usize) -> Self {
        let digits = space.joint.decode(joint_index);
        let pols: Vec<&PurePolicy<T>> = digits.iter().enumerate().map(|(i, &d)| space.policy(i, d)).collect();
        Self::from_policies(&pols)
    }

    /// Nonzero `(joint action, probability)` pairs at `(h, s)`.
    pub fn at(&self, h: usize, s: usize) -> &[(usize, T)] {
        &self.entries[h * self.n_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.entries.len() / self.n_states
    }

    /// `⟨f(s, ·), π_h(· | s)⟩` for a row `f(s, ·)` over joint actions.
    pub fn expect_row(&self, h: usize, s: usize, row: &[T]) -> T {
        self.at(h, s).iter().map(|&(a, p)| p * row[a]).sum()
    }
}

fn stride(radix: &MixedRadix, k: usize) -> usize {
    radix.radices()[k + 1..].iter().product()
}

/// Serialized form of a [`JointMixedPolicy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedPolicyFile {
    pub strategy_counts: Vec<usize>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<Vec<f64>>>,
}

/// Probability mass over joint pure-policy indices (dense). Product
/// policies also carry their per-agent marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMixedPolicy<T> {
    radix: MixedRadix,
    probs: Vec<T>,
    marginals: Option<Vec<Vec<T>>>,
}

fn check_simplex<T: Scalar>(p: &[T], what: &str) -> Result<(), PolicyError> {
    if let Some(k) = p.iter().position(|&x| !(x >= T::zero())) {
        return Err(PolicyError::InvalidDistribution(format!("{what}: entry {k} is {}", p[k])));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > T::tol(1e-10) {
        return Err(PolicyError::InvalidDistribution(format!("{what}: sums to {total}")));
    }
    Ok(())
}

impl<T: Scalar> JointMixedPolicy<T> {
    pub fn from_probs(counts: &[usize], probs: Vec<T>) -> Result<Self, PolicyError> {
        let radix = MixedRadix::new(counts).ok_or_else(|| PolicyError::Shape("joint size overflow".into()))?;
        if probs.len() != radix.size() {
            return Err(PolicyError::Shape(format!("{} masses for {} joint policies", probs.len(), radix.size())));
        }
        check_simplex(&probs, "joint")?;
        Ok(Self { radix, probs, marginals: None })
    }

    pub fn product(marginals: Vec<Vec<T>>) -> Result<Self, PolicyError> {
        for (i, m) in marginals.iter().enumerate() {
            check_simplex(m, &format!("marginal {i}"))?;
        }
        let counts: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
        let radix = MixedRadix::new(&counts).ok_or_else(|| PolicyError::Shape("joint size overflow".into()))?;
        let probs = (0..radix.size())
            .map(|j| radix.decode(j).iter().enumerate().map(|(i, &d)| marginals[i][d]).fold(T::one(), |a, b| a * b))
            .collect();
        Ok(Self { radix, probs, marginals: Some(marginals) })
    }

    pub fn point(counts: &[usize], joint_index: usize) -> Result<Self, PolicyError> {
        let radix = MixedRadix::new(counts).ok_or_else(|| PolicyError::Shape("joint size overflow".into()))?;
        let digits = radix.decode(joint_index);
        let marginals = counts
            .iter()
            .zip(&digits)
            .map(|(&c, &d)| (0..c).map(|k| if k == d { T::one() } else { T::zero() }).collect())
            .collect();
        Self::product(marginals)
    }

    pub fn uniform(counts: &[usize]) -> Result<Self, PolicyError> {
        Self::product(counts.iter().map(|&c| vec![T::one() / T::of_usize(c); c]).collect())
    }

    /// Uniform mixture of several mixed policies over the same space.
    pub fn mixture(policies: &[Self]) -> Result<Self, PolicyError> {
        let first = policies.first().ok_or_else(|| PolicyError::InvalidDistribution("empty mixture".into()))?;
        let w = T::one() / T::of_usize(policies.len());
        let mut probs = vec![T::zero(); first.probs.len()];
        for p in policies {
            if p.radix != first.radix {
                return Err(PolicyError::Shape("mixture components differ in shape".into()));
            }
            for (acc, &x) in probs.iter_mut().zip(&p.probs) {
                *acc += w * x;
            }
        }
        Ok(Self { radix: first.radix.clone(), probs, marginals: None })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, joint_index: usize) -> T {
        self.probs[joint_index]
    }

    pub fn counts(&self) -> &[usize] {
        self.radix.radices()
    }

    pub fn radix(&self) -> &MixedRadix {
        &self.radix
    }

    pub fn is_product(&self) -> bool {
        self.marginals.is_some()
    }

    pub fn stored_marginals(&self) -> Option<&[Vec<T>]> {
        self.marginals.as_deref()
    }

    /// Marginal of `agent` computed from the joint masses.
    pub fn marginal(&self, agent: usize) -> Vec<T> {
        let mut m = vec![T::zero(); self.radix.radices()[agent]];
        for (j, &p) in self.probs.iter().enumerate() {
            m[self.radix.digit(j, agent)] += p;
        }
        m
    }

    /// Distribution of the others' joint index (layout without `agent`)
    /// given that `agent` plays `own`. `None` when `own` has zero mass.
    pub fn conditional_of_others(&self, agent: usize, own: usize) -> Option<Vec<T>> {
        let mut cond = vec![T::zero(); self.radix.size_without(agent)];
        let mut total = T::zero();
        for (j, &p) in self.probs.iter().enumerate() {
            if self.radix.digit(j, agent) == own {
                cond[self.radix.without(j, agent)] += p;
                total += p;
            }
        }
        if total <= T::zero() {
            return None;
        }
        Some(cond.into_iter().map(|p| p / total).collect())
    }

    /// Whether the joint masses factorise into the stored marginals within `1e-10`.
    pub fn product_consistent(&self) -> bool {
        let Some(marg) = &self.marginals else { return true };
        self.probs.iter().enumerate().all(|(j, &p)| {
            let prod = self.radix.decode(j).iter().enumerate().map(|(i, &d)| marg[i][d]).fold(T::one(), |a, b| a * b);
            (prod - p).abs() <= T::tol(1e-10)
        })
    }

    /// Draws a joint pure-policy index. Deterministic given `seed`.
    pub fn sample_pure(&self, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::game::sample_categorical(&self.probs, &mut rng)
    }

    pub fn to_file(&self) -> MixedPolicyFile {
        MixedPolicyFile {
            strategy_counts: self.counts().to_vec(),
            probs: self.probs.iter().map(|p| p.to_f64_lossy()).collect(),
            marginals: self.marginals.as_ref().map(|m| m.iter().map(|v| v.iter().map(|p| p.to_f64_lossy()).collect()).collect()),
        }
    }

    pub fn from_file(file: &MixedPolicyFile) -> Result<Self, PolicyError> {
        match &file.marginals {
            Some(m) => {
                let p = Self::product(m.iter().map(|v| v.iter().map(|&x| T::of(x)).collect()).collect())?;
                if p.counts() != file.strategy_counts.as_slice() {
                    return Err(PolicyError::Shape("marginals do not match strategy counts".into()));
                }
                Ok(p)
            }
            None => Self::from_probs(&file.strategy_counts, file.probs.iter().map(|&x| T::of(x)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_random_tabular, RandomTabularSpec};
    use proptest::prelude::*;

    fn game(states: usize, horizon: usize, actions: Vec<usize>) -> MarkovGame<f64> {
        make_random_tabular(&RandomTabularSpec::new(states, horizon, actions, 1.0, 0)).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        let g = game(1, 1, vec![2]);
        assert_eq!(enumerate_deterministic(&g, 0, Selection::All, 4096).unwrap().len(), 2);
        let g = game(2, 2, vec![2]);
        let all = enumerate_deterministic(&g, 0, Selection::All, 4096).unwrap();
        assert_eq!(all.len(), 16);
        for (a, p) in all.iter().enumerate() {
            for q in &all[a + 1..] {
                assert_ne!(p, q);
            }
        }
    }

    #[test]
    fn enumeration_beyond_cap_requires_subsample() {
        let g = game(4, 3, vec![2]);
        assert!(matches!(enumerate_deterministic(&g, 0, Selection::All, 1000), Err(PolicyError::CapExceeded { .. })));
        assert_eq!(enumerate_deterministic(&g, 0, Selection::Sample { size: 8, seed: 3 }, 1000).unwrap().len(), 8);
    }

    #[test]
    fn subsample_is_reproducible_and_duplicate_free() {
        let g = game(2, 2, vec![2]);
        let a = enumerate_deterministic(&g, 0, Selection::Sample { size: 8, seed: 5 }, 4096).unwrap();
        let b = enumerate_deterministic(&g, 0, Selection::Sample { size: 8, seed: 5 }, 4096).unwrap();
        assert_eq!(a, b);
        for (k, p) in a.iter().enumerate() {
            assert!(a[k + 1..].iter().all(|q| q != p));
        }
    }

    #[test]
    fn subsample_of_unindexable_space_is_duplicate_free() {
        // 2^(40*2) policies overflow usize.
        let g = game(40, 2, vec![2]);
        let a = enumerate_deterministic(&g, 0, Selection::Sample { size: 16, seed: 1 }, 4096).unwrap();
        for (k, p) in a.iter().enumerate() {
            assert!(a[k + 1..].iter().all(|q| q != p));
        }
    }

    #[test]
    fn log_linear_zero_parameter_is_uniform() {
        let psi = vec![vec![vec![0.3], vec![-0.5], vec![0.9]]];
        let cover = log_linear_cover::<f64>(&psi, 1, 1.0, 100).unwrap();
        assert_eq!(cover.len(), 3);
        let zero = cover.iter().find(|p| p.kind() == &PolicyKind::LogLinear { theta: vec![0.0] }).unwrap();
        for &p in zero.dist(0, 0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for pol in &cover {
            assert!((pol.dist(0, 0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_linear_grid_stays_in_unit_ball() {
        let psi = vec![vec![vec![0.5, 0.5], vec![-0.5, 0.1]]; 2];
        let cover = log_linear_cover::<f64>(&psi, 2, 0.5, 1000).unwrap();
        // multiples of 0.5 in [-1, 1]^2 with norm ≤ 1: 4 axis extremes + 9 interior points.
        assert_eq!(cover.len(), 13);
    }

    #[test]
    fn log_linear_rejects_large_features() {
        let psi = vec![vec![vec![1.5]]];
        assert!(matches!(log_linear_cover::<f64>(&psi, 1, 0.5, 10), Err(PolicyError::FeatureNorm { .. })));
    }

    #[test]
    fn point_mass_sampling_ignores_seed() {
        let p = JointMixedPolicy::<f64>::point(&[2, 3], 4).unwrap();
        for seed in 0..50 {
            assert_eq!(p.sample_pure(seed), 4);
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = JointMixedPolicy::<f64>::uniform(&[2, 2]).unwrap();
        let mut counts = [0usize; 4];
        for seed in 0..10_000 {
            counts[p.sample_pure(seed)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn product_sampling_matches_marginals() {
        let p = JointMixedPolicy::<f64>::product(vec![vec![0.2, 0.8], vec![0.5, 0.3, 0.2]]).unwrap();
        let n = 10_000;
        let mut m0 = [0usize; 2];
        let mut m1 = [0usize; 3];
        for seed in 0..n {
            let j = p.sample_pure(seed as u64 + 77);
            m0[p.radix().digit(j, 0)] += 1;
            m1[p.radix().digit(j, 1)] += 1;
        }
        assert!((m0[0] as f64 / n as f64 - 0.2).abs() < 0.02);
        for (k, &q) in [0.5, 0.3, 0.2].iter().enumerate() {
            assert!((m1[k] as f64 / n as f64 - q).abs() < 0.02);
        }
    }

    #[test]
    fn rejects_invalid_mass() {
        assert!(JointMixedPolicy::<f64>::from_probs(&[2], vec![0.6, 0.5]).is_err());
        assert!(JointMixedPolicy::<f64>::from_probs(&[2], vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn joint_table_multiplies_agent_distributions() {
        let a = PurePolicy::<f64>::from_table(1, 1, 2, vec![0.25, 0.75], PolicyKind::Tabular).unwrap();
        let b = PurePolicy::<f64>::deterministic(1, 1, 3, &[2]);
        let t = JointPolicyTable::from_policies(&[&a, &b]);
        assert_eq!(t.at(0, 0), &[(2, 0.25), (5, 0.75)]);
    }

    proptest! {
        #[test]
        fn conditionals_sum_to_one(raw in prop::collection::vec(0.0f64..1.0, 12), agent in 0usize..2) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let p = JointMixedPolicy::from_probs(&[3, 4], probs).unwrap();
            for own in 0..p.counts()[agent] {
                if let Some(c) = p.conditional_of_others(agent, own) {
                    prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                } else {
                    prop_assert!(p.marginal(agent)[own] == 0.0);
                }
            }
        }

        #[test]
        fn product_policies_factorise(a in prop::collection::vec(0.01f64..1.0, 3), b in prop::collection::vec(0.01f64..1.0, 2)) {
            let na: f64 = a.iter().sum();
            let nb: f64 = b.iter().sum();
            let p = JointMixedPolicy::product(vec![a.iter().map(|x| x / na).collect(), b.iter().map(|x| x / nb).collect()]).unwrap();
            prop_assert!(p.product_consistent());
            for i in 0..2 {
                let stored = &p.stored_marginals().unwrap()[i];
                for (x, y) in p.marginal(i).iter().zip(stored) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }
}
