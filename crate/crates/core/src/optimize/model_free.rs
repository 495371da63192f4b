//! Model-free tabular objective `J(f) = E_ρ⟨f_0, π_0⟩ − η Σ n (f_h − ȳ_h(f_{h+1}))²`
//! over the box `[0, R]`.
//!
//! `J` is a concave quadratic (the targets are affine in `f_{h+1}`), so exact
//! coordinate ascent converges to the global maximum; projected accelerated
//! gradient ascent is kept as an independent path.

use crate::discrepancy::TransitionLedger;
use crate::hypothesis::QHypothesis;
use crate::policy::JointPolicyTable;
use crate::scalar::Scalar;

/// One visited bucket `(h, s, a)` and the next-state frequencies behind its target.
#[derive(Clone, Debug)]
struct BucketData<T> {
    entry: usize,
    visits: T,
    reward: T,
    /// `(next state, c / n)`.
    next: Vec<(usize, T)>,
}

/// Sparse structure of the quadratic for one `(agent, π)` pair.
pub(crate) struct Structure<T> {
    h_n: usize,
    s_n: usize,
    a_n: usize,
    cap: T,
    eta: T,
    /// Linear payoff weight `ρ(s) π_0(a|s)` on each step-0 entry.
    weight: Vec<T>,
    buckets: Vec<BucketData<T>>,
    /// Bucket index owning each entry, if visited.
    own: Vec<Option<usize>>,
    /// `(bucket, ∂ȳ_bucket/∂entry)` for every entry appearing in some target.
    parents: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> Structure<T> {
    pub(crate) fn new(ledger: &TransitionLedger, policy: &JointPolicyTable<T>, rewards: &[T], rho: &[T], cap: T, eta: T) -> Self {
        let (h_n, s_n, a_n) = (ledger.horizon(), ledger.n_states(), ledger.n_joint());
        let size = h_n * s_n * a_n;
        let mut weight = vec![T::zero(); size];
        for (s, &p) in rho.iter().enumerate() {
            for &(a, q) in policy.at(0, s) {
                weight[s * a_n + a] += p * q;
            }
        }
        let mut buckets = Vec::new();
        let mut own = vec![None; size];
        let mut parents = vec![Vec::new(); size];
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let n = ledger.visits(h, s, a);
                    if n == 0 {
                        continue;
                    }
                    let entry = (h * s_n + s) * a_n + a;
                    let nt = T::of(n as f64);
                    let next: Vec<(usize, T)> = ledger
                        .row_counts(h, s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(s2, &c)| (s2, T::of(c as f64) / nt))
                        .collect();
                    let b = buckets.len();
                    if h + 1 < h_n {
                        for &(s2, frac) in &next {
                            for &(a2, q) in policy.at(h + 1, s2) {
                                parents[((h + 1) * s_n + s2) * a_n + a2].push((b, frac * q));
                            }
                        }
                    }
                    own[entry] = Some(b);
                    buckets.push(BucketData { entry, visits: nt, reward: rewards[entry], next });
                }
            }
        }
        Self { h_n, s_n, a_n, cap, eta, weight, buckets, own, parents }
    }

    pub(crate) fn size(&self) -> usize {
        self.h_n * self.s_n * self.a_n
    }

    /// `f(b) − ȳ_b` for every bucket.
    pub(crate) fn residuals(&self, f: &[T], policy: &JointPolicyTable<T>) -> Vec<T> {
        let sa = self.s_n * self.a_n;
        self.buckets
            .iter()
            .map(|b| {
                let h = b.entry / sa;
                let future: T = if h + 1 < self.h_n {
                    b.next
                        .iter()
                        .map(|&(s2, frac)| {
                            let o = ((h + 1) * self.s_n + s2) * self.a_n;
                            frac * policy.expect_row(h + 1, s2, &f[o..o + self.a_n])
                        })
                        .sum()
                } else {
                    T::zero()
                };
                f[b.entry] - b.reward - future
            })
            .collect()
    }

    pub(crate) fn objective(&self, f: &[T], policy: &JointPolicyTable<T>) -> T {
        let payoff: T = self.weight.iter().zip(f).map(|(&w, &x)| w * x).sum();
        let loss: T = self.residuals(f, policy).iter().zip(&self.buckets).map(|(&e, b)| b.visits * e * e).sum();
        payoff - self.eta * loss
    }

    /// `∂J/∂f` given the bucket residuals.
    pub(crate) fn gradient(&self, residuals: &[T]) -> Vec<T> {
        let two_eta = T::of(2.0) * self.eta;
        (0..self.size())
            .map(|e| {
                let mut g = self.weight[e];
                if let Some(b) = self.own[e] {
                    g -= two_eta * self.buckets[b].visits * residuals[b];
                }
                for &(b, coef) in &self.parents[e] {
                    g += two_eta * self.buckets[b].visits * coef * residuals[b];
                }
                g
            })
            .collect()
    }

    /// Exact coordinate ascent from `start`. Returns the maximizer and the
    /// number of sweeps used.
    pub(crate) fn coordinate_ascent(&self, start: Vec<T>, policy: &JointPolicyTable<T>, max_sweeps: usize, tol: T) -> (Vec<T>, usize) {
        let mut f = start;
        let mut res = self.residuals(&f, policy);
        let two_eta = T::of(2.0) * self.eta;
        // Curvature of each coordinate is fixed: η (n_own + Σ n_b g_b²).
        let curvature: Vec<T> = (0..self.size())
            .map(|e| {
                let own = self.own[e].map_or(T::zero(), |b| self.buckets[b].visits);
                let par: T = self.parents[e].iter().map(|&(b, g)| self.buckets[b].visits * g * g).sum();
                self.eta * (own + par)
            })
            .collect();
        let order: Vec<usize> = {
            // Backward over steps, so targets see fresh successors first.
            let sa = self.s_n * self.a_n;
            (0..self.h_n).rev().flat_map(|h| h * sa..(h + 1) * sa).collect()
        };
        let mut sweeps = 0;
        while sweeps < max_sweeps.max(1) {
            sweeps += 1;
            let mut biggest = T::zero();
            for &e in &order {
                let beta = curvature[e];
                let x = f[e];
                let new = if beta > T::zero() {
                    let mut grad = self.weight[e];
                    if let Some(b) = self.own[e] {
                        grad -= two_eta * self.buckets[b].visits * res[b];
                    }
                    for &(b, coef) in &self.parents[e] {
                        grad += two_eta * self.buckets[b].visits * coef * res[b];
                    }
                    (x + grad / (T::of(2.0) * beta)).max(T::zero()).min(self.cap)
                } else {
                    // No data touches this entry: the payoff weight is nonnegative.
                    self.cap
                };
                let delta = new - x;
                if delta != T::zero() {
                    f[e] = new;
                    if let Some(b) = self.own[e] {
                        res[b] += delta;
                    }
                    for &(b, coef) in &self.parents[e] {
                        res[b] -= coef * delta;
                    }
                    biggest = biggest.max(delta.abs());
                }
            }
            if biggest <= tol {
                break;
            }
        }
        (f, sweeps)
    }

    /// Largest eigenvalue of the loss Hessian `2η MᵀNM`, by power iteration.
    fn lipschitz(&self, policy: &JointPolicyTable<T>) -> T {
        let size = self.size();
        let mut v = vec![T::one() / T::of_usize(size).sqrt(); size];
        let mut lam = T::zero();
        let zero = vec![T::zero(); size];
        let r0 = self.residuals(&zero, policy);
        for _ in 0..60 {
            // Hessian-vector product via the (affine) residual map.
            let rv: Vec<T> = self.residuals(&v, policy).iter().zip(&r0).map(|(&a, &b)| a - b).collect();
            let mut hv = vec![T::zero(); size];
            let two_eta = T::of(2.0) * self.eta;
            for (b, bucket) in self.buckets.iter().enumerate() {
                hv[bucket.entry] += two_eta * bucket.visits * rv[b];
            }
            for (e, par) in self.parents.iter().enumerate() {
                for &(b, coef) in par {
                    hv[e] -= two_eta * self.buckets[b].visits * coef * rv[b];
                }
            }
            let norm = hv.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm <= T::zero() {
                return T::zero();
            }
            lam = norm;
            v = hv.into_iter().map(|x| x / norm).collect();
        }
        lam
    }

    /// Projected accelerated gradient ascent (FISTA) on the box.
    pub(crate) fn fista(&self, start: Vec<T>, policy: &JointPolicyTable<T>, iters: usize, step_scale: T, tol: T) -> (Vec<T>, usize) {
        let lip = self.lipschitz(policy) * T::of(1.05);
        let project = |x: T| x.max(T::zero()).min(self.cap);
        if lip <= T::zero() {
            // Pure linear payoff: every coordinate goes to its bound.
            let f = self.weight.iter().map(|_| self.cap).collect();
            return (f, 1);
        }
        let step = step_scale / lip;
        let mut x = start.clone();
        let mut y = start;
        let mut t = T::one();
        let mut used = 0;
        for it in 0..iters.max(1) {
            used = it + 1;
            let g = self.gradient(&self.residuals(&y, policy));
            let next: Vec<T> = y.iter().zip(&g).map(|(&yi, &gi)| project(yi + step * gi)).collect();
            let t_next = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) / T::of(2.0);
            let mom = (t - T::one()) / t_next;
            let change = next.iter().zip(&x).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
            y = next.iter().zip(&x).map(|(&n, &o)| project(n + mom * (n - o))).collect();
            x = next;
            t = t_next;
            if change <= tol {
                break;
            }
        }
        (x, used)
    }
}

/// `η = 0` baseline: the empirical Bellman fit (bucket means, computed
/// backward), unvisited entries zero.
pub(crate) fn fitted_evaluation<T: Scalar>(ledger: &TransitionLedger, policy: &JointPolicyTable<T>, rewards: &[T], cap: T) -> QHypothesis<T> {
    let (h_n, s_n, a_n) = (ledger.horizon(), ledger.n_states(), ledger.n_joint());
    let mut f = QHypothesis::new(h_n, s_n, a_n, cap, vec![T::zero(); h_n * s_n * a_n]).expect("ledger shape");
    for h in (0..h_n).rev() {
        let next = crate::discrepancy::next_values(&f, policy, h);
        for b in ledger.buckets(h, rewards, next.as_deref()) {
            f.set(h, b.state, b.action, b.target);
        }
    }
    f
}
