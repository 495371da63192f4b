//! Dense solvers for the handful of small systems the crate needs
//! (support-enumeration indifference systems, stationary distributions,
//! least-squares completeness checks). Matrices are row-major `Vec<Vec<T>>`.

use crate::scalar::Scalar;

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `pivot_tol`.
pub fn solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>, pivot_tol: T) -> Option<Vec<T>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .fold((col, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pivot_abs <= pivot_tol {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor == T::zero() {
                continue;
            }
            for c in col..n {
                let delta = factor * a[col][c];
                a[r][c] -= delta;
            }
            let delta = factor * b[col];
            b[r] -= delta;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let tail: T = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Some(x)
}

/// Least-squares solution of the overdetermined system `design * x ≈ target`
/// via ridge-stabilised normal equations. Returns the coefficients and the
/// maximum absolute residual.
pub fn least_squares<T: Scalar>(design: &[Vec<T>], target: &[T]) -> Option<(Vec<T>, T)> {
    let cols = design.first().map(|r| r.len())?;
    let mut gram = vec![vec![T::zero(); cols]; cols];
    let mut rhs = vec![T::zero(); cols];
    for (row, &y) in design.iter().zip(target) {
        for i in 0..cols {
            rhs[i] += row[i] * y;
            for j in 0..cols {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let ridge = T::epsilon() * T::of(1e3);
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let coef = solve(gram, rhs, T::zero())?;
    let residual = design
        .iter()
        .zip(target)
        .map(|(row, &y)| (crate::scalar::dot(row, &coef) - y).abs())
        .fold(T::zero(), T::max);
    Some((coef, residual))
}

/// A stationary distribution `x = x Q` of the row-stochastic matrix `q`.
///
/// Tries the direct linear solve first; reducible chains make that system
/// singular, in which case the lazy chain `(Q + I) / 2` is iterated.
pub fn stationary_distribution<T: Scalar>(q: &[Vec<T>]) -> Vec<T> {
    let m = q.len();
    if m == 1 {
        return vec![T::one()];
    }
    // (Q^T - I) x = 0 with the last equation replaced by sum(x) = 1.
    let mut a = vec![vec![T::zero(); m]; m];
    for (i, row) in a.iter_mut().enumerate().take(m - 1) {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = q[j][i] - if i == j { T::one() } else { T::zero() };
        }
    }
    a[m - 1] = vec![T::one(); m];
    let mut b = vec![T::zero(); m];
    b[m - 1] = T::one();
    if let Some(x) = solve(a, b, T::of(1e-12)) {
        if x.iter().all(|&v| v >= -T::tol(1e-9)) {
            return normalize_clamped(x);
        }
    }
    let half = T::of(0.5);
    let mut x = vec![T::one() / T::of_usize(m); m];
    for _ in 0..10_000 {
        let mut next = vec![T::zero(); m];
        for i in 0..m {
            for j in 0..m {
                next[j] += x[i] * q[i][j] * half;
            }
            next[i] += x[i] * half;
        }
        let diff = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        x = next;
        if diff < T::tol(1e-15) {
            break;
        }
    }
    normalize_clamped(x)
}

fn normalize_clamped<T: Scalar>(x: Vec<T>) -> Vec<T> {
    let clamped: Vec<T> = x.into_iter().map(|v| v.max(T::zero())).collect();
    let total: T = clamped.iter().copied().sum();
    clamped.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve::<f64>(a, vec![3.0, 5.0], 1e-14).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(a, vec![1.0, 2.0], 1e-12).is_none());
    }

    #[test]
    fn stationary_of_two_state_chain() {
        let q = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
        let x: Vec<f64> = stationary_distribution(&q);
        assert!((x[0] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_of_reducible_chain_is_a_fixed_point() {
        let q = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5]];
        let x = stationary_distribution(&q);
        for j in 0..3 {
            let xq: f64 = (0..3).map(|i| x[i] * q[i][j]).sum();
            assert!((xq - x[j]).abs() < 1e-9);
        }
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let design = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let (coef, res) = least_squares::<f64>(&design, &[1.0, 2.0, 3.0]).unwrap();
        assert!((coef[0] - 1.0).abs() < 1e-9 && (coef[1] - 2.0).abs() < 1e-9);
        assert!(res < 1e-9);
    }
}
