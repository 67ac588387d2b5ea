//! Banded Cholesky factorization, banded triangular solves, and a
//! deterministic pairwise reduction. Internal helpers shared by the solver
//! and the simulators.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Pivots below this floor are treated as a failed factorization.
pub(crate) const MIN_PIVOT: f64 = 1e-12;

/// Lower-triangular banded Cholesky factor `L` with `X = L·Lᵀ`.
///
/// `band` counts diagonals: `L[i][j] = 0` whenever `i − j ≥ band`, matching
/// the band structure of `X`. Fails when any pivot drops below
/// [`MIN_PIVOT`], which doubles as the positive-definiteness test.
pub(crate) fn banded_cholesky(x: &Array2<f64>, band: usize) -> Result<Array2<f64>> {
    let t = x.nrows();
    debug_assert_eq!(t, x.ncols());
    debug_assert!(band >= 1);
    let mut l = Array2::zeros((t, t));
    for j in 0..t {
        let lo_j = j.saturating_sub(band - 1);
        let mut d = x[[j, j]];
        for k in lo_j..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > MIN_PIVOT) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let diag = d.sqrt();
        l[[j, j]] = diag;
        for i in (j + 1)..t.min(j + band) {
            let mut s = x[[i, j]];
            for k in i.saturating_sub(band - 1)..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / diag;
        }
    }
    Ok(l)
}

/// Solves `L·y = b` in place for banded lower-triangular `L`.
pub(crate) fn solve_lower_banded(l: &Array2<f64>, band: usize, b: &mut [f64]) {
    let t = l.nrows();
    for i in 0..t {
        let mut s = b[i];
        for k in i.saturating_sub(band - 1)..i {
            s -= l[[i, k]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `Lᵀ·y = b` in place for banded lower-triangular `L`.
pub(crate) fn solve_lower_banded_transpose(l: &Array2<f64>, band: usize, b: &mut [f64]) {
    let t = l.nrows();
    for i in (0..t).rev() {
        let mut s = b[i];
        for k in (i + 1)..t.min(i + band) {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `X·y = b` given the banded Cholesky factor of `X`.
pub(crate) fn solve_spd_banded(l: &Array2<f64>, band: usize, b: &mut [f64]) {
    solve_lower_banded(l, band, b);
    solve_lower_banded_transpose(l, band, b);
}

/// Deterministic pairwise summation: the reduction order depends only on the
/// slice length, so results are bit-stable across thread counts.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
