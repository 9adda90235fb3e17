//! Perron root and vectors of a nonnegative irreducible matrix.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Power-iteration convergence test on successive normalized iterates.
pub const POWER_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 500_000;

#[derive(Debug, Clone)]
pub struct Perron {
    pub root: f64,
    /// Right vector, normalized to unit sum.
    pub right: DVector<f64>,
    /// Left vector, normalized so that `Σ left·right = 1`.
    pub left: DVector<f64>,
}

fn normalized(v: DVector<f64>) -> Result<DVector<f64>> {
    let s = v.sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidKernel("power iteration lost positivity".into()));
    }
    Ok(v / s)
}

/// Power iteration on `b`. The iterates `b^{2^k} 1` are reached by repeated
/// squaring first, then plain steps confirm the convergence test.
fn dominant_vector(b: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = b.nrows();
    let ones = DVector::from_element(n, 1.0);
    let mut m = b / b.amax();
    let mut v = normalized(&m * &ones)?;
    for _ in 0..64 {
        let sq = &m * &m;
        m = &sq / sq.amax();
        let next = normalized(&m * &ones)?;
        let diff = (&next - &v).amax();
        v = next;
        if diff <= POWER_TOL * v.amax() {
            break;
        }
    }
    let mut next = DVector::zeros(n);
    for _ in 0..MAX_ITERS {
        b.mul_to(&v, &mut next);
        next = normalized(next)?;
        let diff = (&next - &v).amax();
        std::mem::swap(&mut v, &mut next);
        if diff <= POWER_TOL * v.amax() {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERS,
        best_value: f64::NAN,
        grad_norm: f64::NAN,
    })
}

/// Perron data of a nonnegative irreducible `t`.
///
/// Iterates on `t + cI` with `c` half the smallest row sum, which leaves the
/// Perron vectors unchanged and separates the root from any eigenvalue of
/// equal modulus.
pub fn perron(t: &DMatrix<f64>) -> Result<Perron> {
    let n = t.nrows();
    let min_row = (0..n).map(|i| t.row(i).sum()).fold(f64::INFINITY, f64::min);
    let shift = 0.5 * min_row;
    let b = t + DMatrix::identity(n, n) * shift;
    let right = dominant_vector(&b)?;
    let left = dominant_vector(&b.transpose())?;
    let tr = t * &right;
    let root = tr.sum() / right.sum();
    let scale = left.dot(&right);
    Ok(Perron {
        root,
        right,
        left: left / scale,
    })
}
