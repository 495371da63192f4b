//! Model-based objective `V^π_P(ρ) − η Σ c · (−ln P(s'|s,a))` over tabular
//! kernels with known rewards.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discrepancy::{l_model_based, TransitionLedger};
use crate::evaluate::{evaluate_under, occupancy};
use crate::game::TransitionKernel;
use crate::policy::JointPolicyTable;
use crate::scalar::{argmax, Scalar};

pub(crate) struct Problem<'a, T> {
    pub ledger: &'a TransitionLedger,
    pub policy: &'a JointPolicyTable<T>,
    pub rewards: &'a [T],
    pub rho: &'a [T],
    pub eta: T,
}

impl<T: Scalar> Problem<'_, T> {
    pub(crate) fn objective(&self, kernel: &TransitionKernel<T>) -> T {
        evaluate_under(kernel, self.rewards, self.rho, self.policy).value() - self.eta * l_model_based(self.ledger, kernel)
    }

    /// `V_{h}` for every state given `V_{h+1}` and the step-`h` rows.
    fn layer_values(&self, kernel: &TransitionKernel<T>, h: usize, v_next: &[T]) -> Vec<T> {
        let (s_n, a_n) = (kernel.n_states(), kernel.n_joint());
        (0..s_n)
            .map(|s| {
                self.policy
                    .at(h, s)
                    .iter()
                    .map(|&(a, p)| {
                        let future: T = kernel.row(h, s, a).iter().zip(v_next).map(|(&q, &v)| q * v).sum();
                        p * (self.rewards[(h * s_n + s) * a_n + a] + future)
                    })
                    .sum()
            })
            .collect()
    }

    /// Block coordinate ascent: each sweep walks the steps backward and sets
    /// every row to its exact maximizer given the other steps.
    pub(crate) fn block_ascent(&self, mut kernel: TransitionKernel<T>, max_sweeps: usize, tol: T) -> (TransitionKernel<T>, usize) {
        let (h_n, s_n, a_n) = (kernel.horizon(), kernel.n_states(), kernel.n_joint());
        let mut current = self.objective(&kernel);
        let mut sweeps = 0;
        while sweeps < max_sweeps.max(1) {
            sweeps += 1;
            let occ = occupancy(&kernel, self.rho, self.policy);
            let mut v_next = vec![T::zero(); s_n];
            for h in (0..h_n).rev() {
                for s in 0..s_n {
                    for a in 0..a_n {
                        let d = occ[(h * s_n + s) * a_n + a];
                        let counts = self.ledger.row_counts(h, s, a);
                        let u: Vec<T> = v_next.iter().map(|&v| d * v).collect();
                        if let Some(best) = optimistic_row(&u, counts, self.eta) {
                            kernel.row_mut(h, s, a).copy_from_slice(&best);
                        }
                    }
                }
                v_next = self.layer_values(&kernel, h, &v_next);
            }
            let next = self.objective(&kernel);
            let gain = next - current;
            current = next;
            if gain <= tol * current.abs().max(T::one()) {
                break;
            }
        }
        (kernel, sweeps)
    }

    /// Gradient ascent on per-row logits. Returns the best iterate seen, the
    /// iteration count, or the first iteration with a non-finite objective.
    pub(crate) fn logit_ascent(&self, start: &TransitionKernel<T>, iters: usize, step: T) -> Result<(TransitionKernel<T>, usize), usize> {
        let (h_n, s_n, a_n) = (start.horizon(), start.n_states(), start.n_joint());
        let floor = T::of(crate::discrepancy::PROB_FLOOR);
        let mut logits: Vec<T> = start.as_flat().iter().map(|&p| p.max(floor).ln()).collect();
        let mut kernel = start.clone();
        let mut best = (self.objective(&kernel), kernel.clone());
        for it in 0..iters {
            let occ = occupancy(&kernel, self.rho, self.policy);
            let values = evaluate_under(&kernel, self.rewards, self.rho, self.policy);
            for h in 0..h_n {
                for s in 0..s_n {
                    for a in 0..a_n {
                        let d = occ[(h * s_n + s) * a_n + a];
                        let counts = self.ledger.row_counts(h, s, a);
                        let n: T = T::of(counts.iter().sum::<u64>() as f64);
                        let row = kernel.row(h, s, a);
                        let v_next: Vec<T> = if h + 1 < h_n { values.v_layer(h + 1).to_vec() } else { vec![T::zero(); s_n] };
                        let mean: T = row.iter().zip(&v_next).map(|(&p, &v)| p * v).sum();
                        let scale = step / (T::one() + self.eta * n);
                        let o = ((h * s_n + s) * a_n + a) * s_n;
                        for j in 0..s_n {
                            let grad = d * row[j] * (v_next[j] - mean) + self.eta * (T::of(counts[j] as f64) - n * row[j]);
                            logits[o + j] += scale * grad;
                        }
                    }
                }
            }
            let probs: Vec<T> = logits.chunks(s_n).flat_map(crate::hypothesis::softmax).collect();
            kernel = TransitionKernel::from_flat(h_n, s_n, a_n, probs).expect("softmax rows");
            let obj = self.objective(&kernel);
            if !obj.is_finite() {
                return Err(it + 1);
            }
            if obj > best.0 {
                best = (obj, kernel.clone());
            }
        }
        Ok((best.1, iters))
    }
}

/// Maximizer of `Σ_j u_j p_j + η Σ_j c_j ln p_j` over the simplex. Returns
/// `None` when the current row should be kept (no counts and flat `u`).
///
/// With counts present the optimum is `p_j = η c_j / (λ − u_j)` on counted
/// entries, with `λ` set by normalization; an uncounted entry can take the
/// leftover mass only if its `u` exceeds every counted one.
pub(crate) fn optimistic_row<T: Scalar>(u: &[T], counts: &[u64], eta: T) -> Option<Vec<T>> {
    let n_total: u64 = counts.iter().sum();
    let (lo_u, hi_u) = u.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if n_total == 0 || eta <= T::zero() {
        if hi_u - lo_u <= T::zero() {
            return None;
        }
        let (j, _) = argmax(u)?;
        let mut row = vec![T::zero(); u.len()];
        row[j] = T::one();
        return Some(row);
    }
    if hi_u - lo_u <= T::zero() {
        // Only the likelihood matters: the empirical frequencies.
        let n = T::of(n_total as f64);
        return Some(counts.iter().map(|&c| T::of(c as f64) / n).collect());
    }
    let counted_max = u.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(&x, _)| x).fold(T::neg_infinity(), T::max);
    let mass = |lam: T| -> T {
        u.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(&x, &c)| eta * T::of(c as f64) / (lam - x)).sum()
    };
    let free = u
        .iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, &c))| c == 0)
        .map(|(j, (&x, _))| (j, x))
        .fold(None, |best: Option<(usize, T)>, (j, x)| match best {
            Some((_, b)) if x <= b => best,
            _ => Some((j, x)),
        });
    let mut row = vec![T::zero(); u.len()];
    if let Some((j, x)) = free {
        if x > counted_max && mass(x) < T::one() {
            let mut used = T::zero();
            for (k, (&uk, &c)) in u.iter().zip(counts).enumerate() {
                if c > 0 {
                    row[k] = eta * T::of(c as f64) / (x - uk);
                    used += row[k];
                }
            }
            row[j] = (T::one() - used).max(T::zero());
            return Some(row);
        }
    }
    let mut lo = counted_max;
    let mut hi = counted_max + eta * T::of(n_total as f64);
    for _ in 0..200 {
        let mid = (lo + hi) / T::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for (k, (&uk, &c)) in u.iter().zip(counts).enumerate() {
        if c > 0 {
            row[k] = eta * T::of(c as f64) / (hi - uk);
        }
    }
    let z: T = row.iter().copied().sum();
    Some(row.into_iter().map(|p| p / z).collect())
}

/// Random kernel with rows drawn uniformly from the simplex.
pub(crate) fn random_kernel<T: Scalar>(horizon: usize, n_states: usize, n_joint: usize, seed: u64) -> TransitionKernel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(horizon * n_states * n_joint * n_states);
    for _ in 0..horizon * n_joint * n_states {
        let e: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let z: f64 = e.iter().sum();
        probs.extend(e.into_iter().map(|x| T::of(x / z)));
    }
    TransitionKernel::from_flat(horizon, n_states, n_joint, probs).expect("generated shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(u: &[f64], c: &[u64], eta: f64, p: &[f64]) -> f64 {
        u.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()
            + eta * c.iter().zip(p).filter(|(&c, _)| c > 0).map(|(&c, &q)| c as f64 * q.max(1e-300).ln()).sum::<f64>()
    }

    #[test]
    fn row_beats_a_fine_grid_on_three_outcomes() {
        let cases: &[(&[f64], &[u64], f64)] = &[
            (&[0.3, 0.9, 0.1], &[2, 1, 0], 0.5),
            (&[0.0, 0.2, 2.5], &[3, 4, 0], 0.1),
            (&[1.0, 0.0, 0.5], &[0, 0, 5], 1.0),
            (&[0.2, 0.2, 0.7], &[1, 1, 1], 0.05),
        ];
        for &(u, c, eta) in cases {
            let row = optimistic_row(u, c, eta).unwrap();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let got = objective(u, c, eta, &row);
            let steps = 400;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let p = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                    best = best.max(objective(u, c, eta, &p));
                }
            }
            assert!(got >= best - 1e-9, "{u:?} {c:?}: {got} < {best}");
        }
    }

    #[test]
    fn flat_payoff_gives_the_empirical_row() {
        let row = optimistic_row(&[0.4; 3], &[1, 3, 0], 0.2).unwrap();
        assert_eq!(row, vec![0.25, 0.75, 0.0]);
        assert!(optimistic_row(&[0.4; 3], &[0, 0, 0], 0.2).is_none());
    }
}
