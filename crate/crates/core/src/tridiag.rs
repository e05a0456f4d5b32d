//! Thomas elimination for the tridiagonal stage systems.

use crate::error::{Error, Result};

/// Solves `T x = rhs` in place for a tridiagonal `T` given by its three
/// diagonals (`sub` and `sup` of length `n - 1`). O(n), no pivoting; the
/// stage matrices here are strictly diagonally dominant, so a vanishing
/// pivot indicates a malformed system rather than an unlucky ordering.
pub(crate) fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    debug_assert!(n >= 2 && sub.len() == n - 1 && sup.len() == n - 1 && rhs.len() == n);
    let mut scratch = vec![0.0; n - 1];
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return Err(Error::SingularSystem { row: 0 });
    }
    scratch[0] = sup[0] / piv;
    rhs[0] /= piv;
    for i in 1..n {
        piv = diag[i] - sub[i - 1] * scratch[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        if i < n - 1 {
            scratch[i] = sup[i] / piv;
        }
        rhs[i] = (rhs[i] - sub[i - 1] * rhs[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}
