//! Independent numerical oracles used only by unit tests: a dense Jacobi
//! eigensolver, central finite differences, and orthogonal matching pursuit.

use ndarray::Array2;

/// Eigenvalues of a dense symmetric n x n matrix (row-major) via cyclic Jacobi.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Largest eigenvalue of a dense symmetric matrix.
pub fn symmetric_eig_max(a: &[f64], n: usize) -> f64 {
    symmetric_eigenvalues(a, n).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Central finite-difference gradient of a scalar function of a matrix.
pub fn central_diff_grad<F>(f: F, x: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let fp = f(&probe);
        probe[idx] = orig - h;
        let fm = f(&probe);
        probe[idx] = orig;
        grad[idx] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Solves a dense n x n system in place by Gaussian elimination with
/// partial pivoting; returns the solution.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let p = a[col * n + col];
        assert!(p.abs() > 1e-14, "singular system in oracle");
        for row in (col + 1)..n {
            let factor = a[row * n + col] / p;
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

/// Relative l2 residual after greedily selecting up to `max_atoms` columns
/// of `atoms` (G x N, unit-norm columns) to fit `target` by least squares.
pub fn omp_relative_residual(atoms: &Array2<f64>, target: &[f64], max_atoms: usize) -> f64 {
    let (g, n) = atoms.dim();
    assert_eq!(target.len(), g);
    let target_norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    if target_norm == 0.0 {
        return 0.0;
    }
    let mut support: Vec<usize> = Vec::new();
    let mut residual: Vec<f64> = target.to_vec();
    for _ in 0..max_atoms.min(n) {
        let mut best = (0usize, 0.0f64);
        for j in 0..n {
            if support.contains(&j) {
                continue;
            }
            let corr: f64 = (0..g).map(|i| atoms[[i, j]] * residual[i]).sum();
            if corr.abs() > best.1 {
                best = (j, corr.abs());
            }
        }
        support.push(best.0);
        let k = support.len();
        // Normal equations on the current support.
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (a, &ja) in support.iter().enumerate() {
            rhs[a] = (0..g).map(|i| atoms[[i, ja]] * target[i]).sum();
            for (b, &jb) in support.iter().enumerate() {
                gram[a * k + b] = (0..g).map(|i| atoms[[i, ja]] * atoms[[i, jb]]).sum();
            }
        }
        let coef = solve_dense(gram, rhs, k);
        for i in 0..g {
            let fit: f64 = support.iter().enumerate().map(|(a, &j)| coef[a] * atoms[[i, j]]).sum();
            residual[i] = target[i] - fit;
        }
    }
    residual.iter().map(|x| x * x).sum::<f64>().sqrt() / target_norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Symmetric matrix with eigenvalues {1, 2, 4} built from a rotation.
        let a = [2.5, 1.5, 0.0, 1.5, 2.5, 0.0, 0.0, 0.0, 2.0];
        let mut eig = symmetric_eigenvalues(&a, 3);
        eig.sort_by(f64::total_cmp);
        for (got, want) in eig.iter().zip([1.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i + 2 * j) as f64 * 0.3 - 0.4);
        let f = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
        let g = central_diff_grad(f, &x, 1e-5);
        for (gv, xv) in g.iter().zip(x.iter()) {
            assert!((gv - 2.0 * xv).abs() < 1e-8);
        }
    }

    #[test]
    fn omp_exact_on_trivial_basis() {
        let atoms = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let target = [0.0, 3.0, 0.0, -1.0];
        let res = omp_relative_residual(&atoms, &target, 2);
        assert!(res < 1e-12);
    }
}
