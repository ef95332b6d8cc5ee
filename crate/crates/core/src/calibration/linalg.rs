//! Small dense symmetric eigen-solver used for the minimum-norm MMSE solve.

use crate::scalar::Scalar;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns the eigenvalues and the eigenvectors as columns of `v`
/// (`v[row][col]`).
pub(crate) fn symmetric_eigen<T: Scalar>(mut a: Vec<Vec<T>>) -> (Vec<T>, Vec<Vec<T>>) {
    let n = a.len();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    let two = T::lit(2.0);
    let scale = a.iter().flatten().map(|&x| x * x).sum::<T>().sqrt();

    for _sweep in 0..64 {
        let off = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<T>()
            .sqrt();
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(T::one()));
                let c = T::one() / t.hypot(T::one());
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = T::zero();
                a[q][p] = T::zero();
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Minimum-norm solution of `a x = b` for symmetric positive semidefinite
/// `a`. Eigenvalues below `n * eps * max_eigenvalue` are treated as zero.
/// Returns the solution and the numerical rank.
pub(crate) fn min_norm_solve<T: Scalar>(a: &[Vec<T>], b: &[T]) -> (Vec<T>, usize) {
    let n = a.len();
    let (lambda, v) = symmetric_eigen(a.to_vec());
    let max = lambda.iter().fold(T::zero(), |m, &l| m.max(l.abs()));
    let tol = max * T::from_count(n.max(1)) * T::epsilon();
    let mut x = vec![T::zero(); n];
    let mut rank = 0;
    for (k, &l) in lambda.iter().enumerate() {
        if l <= tol || l == T::zero() {
            continue;
        }
        rank += 1;
        let proj = (0..n).map(|i| v[i][k] * b[i]).sum::<T>() / l;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += proj * v[i][k];
        }
    }
    (x, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonalizes_small_matrix() {
        let a = vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 1.0],
        ];
        let (l, v) = symmetric_eigen(a.clone());
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i][j] * v[j][k]).sum();
                assert!((av - l[k] * v[i][k]).abs() < 1e-12);
            }
        }
        let trace: f64 = l.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_gets_minimum_norm_solution() {
        // Rank one: a = u u^T with u = (1, 1), b in range(a).
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let (x, rank) = min_norm_solve::<f64>(&a, &[2.0, 2.0]);
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        // A zero row/column stays out of the solution.
        let a = vec![vec![2.0, 0.0], vec![0.0, 0.0]];
        let (x, rank) = min_norm_solve(&a, &[4.0, 0.0]);
        assert_eq!(rank, 1);
        assert_eq!(x, vec![2.0, 0.0]);
    }
}
