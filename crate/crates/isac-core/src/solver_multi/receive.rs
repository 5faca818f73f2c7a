//! Receive-combiner subproblem: minimize a Hermitian quadratic over the unit
//! sphere via the multiplier equation `r = (A + lambda I)^{-1} b`,
//! `||r|| = 1`.
//!
//! `||(A + lambda I)^{-1} b||` decreases monotonically in `lambda` on
//! `(-lambda_min(A), inf)`, so the multiplier comes from bisection. The
//! usual nonnegativity restriction on the multiplier is insufficient when
//! `||A^{-1} b|| < 1`; bisection therefore runs from just above
//! `-lambda_min(A)`.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::error::IsacError;
use crate::{CMat, CVec};

/// Result of the sphere-constrained quadratic minimization.
#[derive(Debug, Clone)]
pub struct ReceiveSolution {
    pub r_co: CVec,
    pub multiplier: f64,
}

/// Solves `min r^H A r - 2 Re{r^H b}` subject to `||r|| = 1` for Hermitian
/// positive-semidefinite `A`.
///
/// `b = 0` degenerates to the smallest-eigenvalue eigenvector.
pub fn solve_receive_beamformer(a: &CMat, b: &CVec) -> Result<ReceiveSolution, IsacError> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(IsacError::Configuration(
            "receive subproblem dimension mismatch".into(),
        ));
    }
    let eig = SymmetricEigen::new(a.clone());
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(b.norm())
        .max(1.0);

    if b.norm() <= 1e-14 * scale {
        // Pure quadratic on the sphere: smallest eigenvector.
        let idx = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let mut r = eig.eigenvectors.column(idx).into_owned();
        let nrm = r.norm();
        r.unscale_mut(nrm);
        return Ok(ReceiveSolution {
            r_co: r,
            multiplier: -lambda_min,
        });
    }

    let solve_at = |lambda: f64| -> Option<CVec> {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += Complex64::new(lambda, 0.0);
        }
        m.lu().solve(b)
    };
    let norm_at = |lambda: f64| -> f64 { solve_at(lambda).map_or(f64::INFINITY, |r| r.norm()) };

    // Bracket: norms decrease in lambda. Lower edge just above -lambda_min,
    // upper edge large enough that the norm drops below one.
    let eps = 1e-12 * scale.max(1.0);
    let mut lo = -lambda_min + eps;
    if norm_at(lo) < 1.0 {
        // Hard case: b nearly orthogonal to the bottom eigenspace. Move mass
        // onto the bottom eigenvector to reach the sphere.
        let r_part = solve_at(lo).expect("shifted system is positive definite");
        let deficit = (1.0 - r_part.norm_squared()).max(0.0).sqrt();
        let idx = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let v = eig.eigenvectors.column(idx).into_owned();
        let mut r = r_part + v * Complex64::new(deficit, 0.0);
        let nrm = r.norm();
        r.unscale_mut(nrm);
        return Ok(ReceiveSolution {
            r_co: r,
            multiplier: lo,
        });
    }
    let mut hi = (-lambda_min).max(0.0) + b.norm() + scale;
    let mut guard = 0;
    while norm_at(hi) > 1.0 {
        hi = hi * 2.0 + 1.0;
        guard += 1;
        if guard > 200 {
            return Err(IsacError::NumericalInconsistency(hi));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let mut r = solve_at(lambda).expect("shifted system is positive definite");
    let nrm = r.norm();
    r.unscale_mut(nrm); // pin the unit norm exactly
    Ok(ReceiveSolution {
        r_co: r,
        multiplier: lambda,
    })
}
