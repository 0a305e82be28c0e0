use super::array::{axpy, dot, norm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome<S> {
    pub solution: Vec<S>,
    pub iterations: usize,
    pub residual_norm: S,
    pub converged: bool,
}

/// Solves `(H + damping·I) x = rhs` by conjugate gradients, where `H` is
/// only available through Hessian-vector products.
///
/// Stops when `‖r‖ ≤ tol·‖rhs‖` or after `max_iters` iterations; the outcome
/// reports which. A non-positive curvature direction means the damped
/// operator is not positive definite and is reported as a singular system.
pub fn cg_solve<S: Scalar>(
    mut hvp: impl FnMut(&[S]) -> Vec<S>,
    rhs: &[S],
    damping: S,
    max_iters: usize,
    tol: S,
) -> Result<CgOutcome<S>> {
    if damping < S::zero() {
        return Err(Error::Config("CG damping must be non-negative".into()));
    }
    let n = rhs.len();
    let mut x = vec![S::zero(); n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let target = tol * norm(rhs);
    let mut iterations = 0;

    while iterations < max_iters && rs.sqrt() > target {
        let mut ap = hvp(&p);
        if ap.len() != n {
            return Err(Error::Dimension(format!(
                "hvp returned {} entries for a system of size {n}",
                ap.len()
            )));
        }
        axpy(damping, &p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= S::zero() {
            return Err(Error::SingularHessian(format!(
                "non-positive curvature {curvature} at iteration {iterations}"
            )));
        }
        let step = rs / curvature;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        let rs_next = dot(&r, &r);
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + (rs_next / rs) * *pi;
        }
        rs = rs_next;
        iterations += 1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite CG iterate at iteration {iterations}")));
        }
    }
    let residual_norm = rs.sqrt();
    Ok(CgOutcome {
        solution: x,
        iterations,
        converged: residual_norm <= target,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::array::DenseArray;
    use crate::rng::stream;
    use rand::Rng;

    /// Gaussian elimination with partial pivoting; the direct-solve oracle.
    fn direct_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(row, &bi)| {
                let mut r = row.clone();
                r.push(bi);
                r
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn scaled_identity() {
        let out = cg_solve(|v: &[f64]| v.iter().map(|x| 2.0 * x).collect(), &[4.0, 6.0], 0.0, 10, 1e-12)
            .unwrap();
        assert!(out.converged);
        assert!((out.solution[0] - 2.0).abs() < 1e-12 && (out.solution[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn damped_diagonal_matches_direct_solve() {
        let diag = [1.0, 10.0];
        let rhs = [0.7, -2.5];
        let out = cg_solve(
            |v: &[f64]| v.iter().zip(&diag).map(|(x, d)| x * d).collect(),
            &rhs,
            0.01,
            10,
            1e-14,
        )
        .unwrap();
        let a = vec![vec![1.01, 0.0], vec![0.0, 10.01]];
        let direct = direct_solve(&a, &rhs);
        for i in 0..2 {
            assert!((out.solution[i] - direct[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let out = cg_solve(|v: &[f64]| v.to_vec(), &[0.0, 0.0, 0.0], 0.1, 10, 1e-10).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.solution, vec![0.0; 3]);
    }

    #[test]
    fn singular_operator_is_reported() {
        let err = cg_solve(|v: &[f64]| vec![0.0; v.len()], &[1.0, 1.0], 0.0, 10, 1e-10).unwrap_err();
        assert!(matches!(err, Error::SingularHessian(_)));
    }

    #[test]
    fn random_spd_systems_converge_within_dimension() {
        let mut r = stream(17, &[]);
        for d in 1..=12 {
            // A = BᵀB + I is symmetric positive definite.
            let b = DenseArray::<f64>::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
            let a: Vec<Vec<f64>> = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| (0..d).map(|k| b.get(k, i) * b.get(k, j)).sum::<f64>() + f64::from(u8::from(i == j)))
                        .collect()
                })
                .collect();
            let rhs: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let out = cg_solve(
                |v: &[f64]| a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect(),
                &rhs,
                0.0,
                d,
                1e-13,
            )
            .unwrap();
            let direct = direct_solve(&a, &rhs);
            for i in 0..d {
                assert!((out.solution[i] - direct[i]).abs() < 1e-8, "d={d}");
            }
        }
    }
}
