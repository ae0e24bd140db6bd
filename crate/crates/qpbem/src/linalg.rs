//! Dense complex linear algebra on top of faer: LU solve with a residual
//! report, and condition numbers.

use alloc::vec::Vec;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};

use crate::error::{bail, Result};
use crate::math::C64;

/// Solution of a dense system together with its relative residual
/// ‖Ax − b‖ / ‖b‖.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<C64>,
    pub residual: f64,
}

/// LU with partial pivoting.
pub fn solve(a: MatRef<'_, C64>, b: &[C64]) -> Result<LinearSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        bail!(Argument, "system is {}x{} with a right-hand side of length {}", n, a.ncols(), b.len());
    }
    if n == 0 {
        return Ok(LinearSolution { x: Vec::new(), residual: 0.0 });
    }
    let lu = a.partial_piv_lu();
    check_pivots(lu.U())?;
    let mut x = Mat::<C64>::from_fn(n, 1, |i, _| b[i]);
    lu.solve_in_place(x.as_mut());
    let x: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    if x.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        bail!(Numerical, "LU solve produced non-finite values");
    }
    Ok(LinearSolution { residual: residual(a, &x, b), x })
}

fn check_pivots(u: MatRef<'_, C64>) -> Result<()> {
    let n = u.nrows();
    let d: Vec<f64> = (0..n).map(|i| crate::math::cabs(u[(i, i)])).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > max * n as f64 * f64::EPSILON) {
        bail!(Numerical, "matrix is singular to working precision (pivot ratio {:.3e}, condition estimate ≥ {:.3e})", min / max, max / min);
    }
    Ok(())
}

/// ‖Ax − b‖₂ / ‖b‖₂ (or ‖Ax‖₂ when b = 0).
pub fn residual(a: MatRef<'_, C64>, x: &[C64], b: &[C64]) -> f64 {
    let n = a.nrows();
    let mut r: Vec<C64> = b.iter().map(|v| -v).collect();
    for j in 0..a.ncols() {
        let col = a.col(j);
        let xj = x[j];
        for i in 0..n {
            r[i] += col[i] * xj;
        }
    }
    let nr = r.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let nb = b.iter().map(|v| v.norm_sqr()).sum::<f64>();
    crate::math::sqrt(if nb > 0.0 { nr / nb } else { nr })
}

fn norm_1(a: MatRef<'_, C64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| crate::math::cabs(a[(i, j)])).sum::<f64>()).fold(0.0, f64::max)
}

/// 1-norm condition number ‖A‖₁ ‖A⁻¹‖₁ with the inverse from the LU
/// factors.
pub fn condition_number(a: MatRef<'_, C64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        bail!(Argument, "condition number of a non-square matrix");
    }
    let lu = a.partial_piv_lu();
    check_pivots(lu.U())?;
    let inv = lu.inverse();
    Ok(norm_1(a) * norm_1(inv.as_ref()))
}

/// 2-norm condition number σ_max / σ_min.
pub fn condition_number_2(a: MatRef<'_, C64>) -> Result<f64> {
    let s = match a.singular_values() {
        Ok(s) => s,
        Err(_) => bail!(Numerical, "singular value decomposition did not converge"),
    };
    let (max, min) = (s.first().copied().unwrap_or(0.0), s.last().copied().unwrap_or(0.0));
    if !(min > 0.0) {
        bail!(Numerical, "matrix is singular (σ_min = {min})");
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64) / (1u64 << 53) as f64 - 0.5
    }

    // Oracle: Gaussian elimination with partial pivoting on a row-major copy.
    fn naive_solve(a: &[Vec<C64>], b: &[C64]) -> Vec<C64> {
        let n = b.len();
        let mut m: Vec<Vec<C64>> = a.iter().zip(b).map(|(r, &v)| {
            let mut r = r.clone();
            r.push(v);
            r
        }).collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].norm().partial_cmp(&m[j][c].norm()).unwrap()).unwrap();
            m.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    let v = m[c][k];
                    m[r][k] -= f * v;
                }
            }
        }
        let mut x = alloc::vec![C64::new(0.0, 0.0); n];
        for r in (0..n).rev() {
            let mut s = m[r][n];
            for k in r + 1..n {
                s -= m[r][k] * x[k];
            }
            x[r] = s / m[r][r];
        }
        x
    }

    #[test]
    fn identity_returns_rhs() {
        let a = Mat::<C64>::identity(5, 5);
        let b: Vec<C64> = (0..5).map(|i| C64::new(i as f64, -1.0)).collect();
        let s = solve(a.as_ref(), &b).unwrap();
        assert_eq!(s.x, b);
        assert_eq!(s.residual, 0.0);
    }

    #[test]
    fn random_system_matches_elimination_oracle() {
        let n = 50;
        let mut st = 7u64;
        let rows: Vec<Vec<C64>> = (0..n)
            .map(|i| (0..n).map(|j| C64::new(lcg(&mut st), lcg(&mut st)) + if i == j { C64::new(8.0, 0.0) } else { C64::new(0.0, 0.0) }).collect())
            .collect();
        let b: Vec<C64> = (0..n).map(|_| C64::new(lcg(&mut st), lcg(&mut st))).collect();
        let a = Mat::<C64>::from_fn(n, n, |i, j| rows[i][j]);
        let s = solve(a.as_ref(), &b).unwrap();
        let x = naive_solve(&rows, &b);
        let err = s.x.iter().zip(&x).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        let xmax = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12 * xmax, "{err}");
        assert!(s.residual < 1e-13);
        let c1 = condition_number(a.as_ref()).unwrap();
        let c2 = condition_number_2(a.as_ref()).unwrap();
        assert!(c1 >= 1.0 && c2 >= 1.0 && c1 < 100.0 && c2 < 100.0);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Mat::<C64>::from_fn(3, 3, |i, j| C64::new((i + 1) as f64 * (j + 1) as f64, 0.0));
        let e = solve(a.as_ref(), &[C64::new(1.0, 0.0); 3]).unwrap_err();
        assert!(matches!(e, crate::Error::Numerical(_)));
    }

    #[test]
    fn diagonal_condition_numbers() {
        let a = Mat::<C64>::from_fn(4, 4, |i, j| if i == j { C64::new([1.0, 2.0, 4.0, 10.0][i], 0.0) } else { C64::new(0.0, 0.0) });
        assert!((condition_number(a.as_ref()).unwrap() - 10.0).abs() < 1e-12);
        assert!((condition_number_2(a.as_ref()).unwrap() - 10.0).abs() < 1e-12);
    }
}
