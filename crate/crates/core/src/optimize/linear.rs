//! Linear classes: linear Q functions over features, and linear-mixture
//! models with mixing weights on the simplex.

use crate::discrepancy::{TransitionLedger, PROB_FLOOR};
use crate::evaluate::{evaluate_under, occupancy};
use crate::game::TransitionKernel;
use crate::hypothesis::{LinearMixtureClass, LinearQClass};
use crate::policy::JointPolicyTable;
use crate::scalar::{norm2, Scalar};

use super::model_based::Problem;
use super::model_free::Structure;

fn project_ball<T: Scalar>(theta: &mut [T], radius: T) {
    let n = norm2(theta);
    if n > radius {
        for x in theta.iter_mut() {
            *x *= radius / n;
        }
    }
}

fn flat_tables<T: Scalar>(class: &LinearQClass<T>, theta: &[Vec<T>]) -> Vec<T> {
    let cap = class.cap();
    theta
        .iter()
        .enumerate()
        .flat_map(|(h, t)| class.raw_layer(h, t))
        .map(|x| x.max(T::zero()).min(cap))
        .collect()
}

/// Projected gradient ascent over `θ` with backtracking. The objective is
/// evaluated on the clipped table. Returns the final `θ` and the iterations
/// used, or the failing iteration on a non-finite objective.
pub(crate) fn linear_q_ascent<T: Scalar>(
    class: &LinearQClass<T>,
    structure: &Structure<T>,
    policy: &JointPolicyTable<T>,
    start: Vec<Vec<T>>,
    iters: usize,
    tol: T,
) -> Result<(Vec<Vec<T>>, usize), usize> {
    let radius = class.norm_bound();
    let cap = class.cap();
    let sa_n = structure.size() / class.horizon();
    let mut theta = start;
    for t in theta.iter_mut() {
        project_ball(t, radius);
    }
    let mut value = structure.objective(&flat_tables(class, &theta), policy);
    let mut step = T::one();
    let mut used = 0;
    for it in 0..iters.max(1) {
        used = it + 1;
        let tables = flat_tables(class, &theta);
        let g_f = structure.gradient(&structure.residuals(&tables, policy));
        let grad: Vec<Vec<T>> = (0..class.horizon())
            .map(|h| {
                let raw = class.raw_layer(h, &theta[h]);
                let mut g = vec![T::zero(); class.dim()];
                for (sa, &r) in raw.iter().enumerate() {
                    // Clipped entries do not move with θ.
                    if r <= T::zero() && g_f[h * sa_n + sa] <= T::zero() || r >= cap && g_f[h * sa_n + sa] >= T::zero() {
                        continue;
                    }
                    let phi = class.feature(h, sa / class.n_joint(), sa % class.n_joint());
                    for (gk, &pk) in g.iter_mut().zip(phi) {
                        *gk += g_f[h * sa_n + sa] * pk;
                    }
                }
                g
            })
            .collect();
        let mut accepted = false;
        while step > T::tol(1e-14) {
            let mut cand = theta.clone();
            for (t, g) in cand.iter_mut().zip(&grad) {
                for (x, &gk) in t.iter_mut().zip(g) {
                    *x += step * gk;
                }
                project_ball(t, radius);
            }
            let v = structure.objective(&flat_tables(class, &cand), policy);
            if !v.is_finite() {
                return Err(it + 1);
            }
            if v > value {
                let gain = v - value;
                theta = cand;
                value = v;
                accepted = true;
                step *= T::of(2.0);
                if gain <= tol * value.abs().max(T::one()) {
                    return Ok((theta, used));
                }
                break;
            }
            step /= T::of(2.0);
        }
        if !accepted {
            break;
        }
    }
    Ok((theta, used))
}

/// Linear-mixture model for `θ` (each `θ_h` on the simplex).
pub(crate) fn mixture_kernel<T: Scalar>(class: &LinearMixtureClass<T>, theta: &[Vec<T>]) -> TransitionKernel<T> {
    let p = &class.params;
    let mut probs = p.kernel_for(theta);
    for row in probs.chunks_mut(p.n_states) {
        let z: T = row.iter().map(|&x| x.max(T::zero())).sum();
        for x in row.iter_mut() {
            *x = x.max(T::zero()) / z;
        }
    }
    TransitionKernel::from_flat(theta.len(), p.n_states, p.n_joint, probs).expect("mixture shape")
}

/// Exponentiated-gradient ascent over the simplex weights with backtracking.
pub(crate) fn mixture_ascent<T: Scalar>(
    class: &LinearMixtureClass<T>,
    problem: &Problem<'_, T>,
    start: Vec<Vec<T>>,
    iters: usize,
    tol: T,
) -> Result<(Vec<Vec<T>>, usize), usize> {
    let p = &class.params;
    let ledger: &TransitionLedger = problem.ledger;
    let floor = T::of(PROB_FLOOR);
    let mut theta = start;
    let mut kernel = mixture_kernel(class, &theta);
    let mut value = problem.objective(&kernel);
    let mut step = T::one();
    let mut used = 0;
    for it in 0..iters.max(1) {
        used = it + 1;
        let h_n = theta.len();
        let occ = occupancy(&kernel, problem.rho, problem.policy);
        let values = evaluate_under(&kernel, problem.rewards, problem.rho, problem.policy);
        let grad: Vec<Vec<T>> = (0..h_n)
            .map(|h| {
                let mut g = vec![T::zero(); p.dim];
                for s in 0..p.n_states {
                    for a in 0..p.n_joint {
                        let d = occ[(h * p.n_states + s) * p.n_joint + a];
                        let counts = ledger.row_counts(h, s, a);
                        let row = kernel.row(h, s, a);
                        for next in 0..p.n_states {
                            let v = if h + 1 < h_n { values.v(h + 1, next) } else { T::zero() };
                            let like = problem.eta * T::of(counts[next] as f64) / row[next].max(floor);
                            let w = d * v + like;
                            if w == T::zero() {
                                continue;
                            }
                            for (gk, &phi) in g.iter_mut().zip(p.feature(s, a, next)) {
                                *gk += w * phi;
                            }
                        }
                    }
                }
                g
            })
            .collect();
        let mut accepted = false;
        while step > T::tol(1e-14) {
            let cand: Vec<Vec<T>> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| {
                    let top = g.iter().copied().fold(T::neg_infinity(), T::max);
                    let w: Vec<T> = t.iter().zip(g).map(|(&x, &gk)| x * (step * (gk - top)).exp()).collect();
                    let z: T = w.iter().copied().sum();
                    w.into_iter().map(|x| x / z).collect()
                })
                .collect();
            let k = mixture_kernel(class, &cand);
            let v = problem.objective(&k);
            if !v.is_finite() {
                return Err(it + 1);
            }
            if v > value {
                let gain = v - value;
                theta = cand;
                kernel = k;
                value = v;
                accepted = true;
                step *= T::of(2.0);
                if gain <= tol * value.abs().max(T::one()) {
                    return Ok((theta, used));
                }
                break;
            }
            step /= T::of(2.0);
        }
        if !accepted {
            break;
        }
    }
    Ok((theta, used))
}
