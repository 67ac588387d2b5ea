//! The banded mixing-matrix problem: minimize `Tr(X⁻¹G)` over symmetric
//! positive-definite `X` with unit diagonal and bandwidth `b`, then recover
//! the lower-triangular mixing factor `C` with `CᵀC = X`.
//!
//! The unit diagonal is the per-iteration sensitivity constraint and the
//! band is what makes amplification-compatible batch schedules possible, so
//! both are kept structural: the solver parameterizes `X` by its free
//! (off-diagonal, in-band, upper-triangle) entries and only has to guard
//! positive definiteness, which the line search does by rejecting any step
//! whose banded Cholesky factorization fails.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{banded_cholesky, solve_spd_banded};
use crate::workload::WorkloadMatrix;

/// Symmetric positive-definite banded matrix with unit diagonal,
/// `X = CᵀC`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedGram {
    entries: Array2<f64>,
    band: usize,
}

impl BandedGram {
    /// Validates the structural invariants: square, unit diagonal (exact),
    /// symmetric, zero outside the band. Positive definiteness is checked
    /// when the matrix is factored or inverted.
    pub fn new(entries: Array2<f64>, band: usize) -> Result<Self> {
        let t = entries.nrows();
        if entries.ncols() != t || t == 0 {
            return Err(Error::invalid(format!(
                "gram matrix must be square and non-empty, got {}x{}",
                t,
                entries.ncols()
            )));
        }
        if band < 1 || band > t {
            return Err(Error::invalid(format!(
                "band {band} out of range for T = {t}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gram matrix contains non-finite entries"));
        }
        for i in 0..t {
            if entries[[i, i]] != 1.0 {
                return Err(Error::invalid(format!(
                    "gram diagonal must be exactly 1, got {} at {i}",
                    entries[[i, i]]
                )));
            }
            for j in 0..i {
                if entries[[i, j]] != entries[[j, i]] {
                    return Err(Error::invalid(format!(
                        "gram matrix is not symmetric at ({i},{j})"
                    )));
                }
                if i - j >= band && entries[[i, j]] != 0.0 {
                    return Err(Error::invalid(format!(
                        "gram entry ({i},{j}) lies outside band {band} but is {}",
                        entries[[i, j]]
                    )));
                }
            }
        }
        Ok(Self { entries, band })
    }

    pub fn identity(t: usize, band: usize) -> Result<Self> {
        Self::new(Array2::<f64>::eye(t), band)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Lower-triangular banded mixing factor with positive diagonal.
///
/// Factors of a feasible gram matrix additionally have unit column norms
/// (that is `diag(CᵀC) = 1`); the constructor does not force this so that
/// externally supplied mixing matrices can be streamed as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: Array2<f64>,
    band: usize,
}

impl MixingMatrix {
    pub fn new(entries: Array2<f64>, band: usize) -> Result<Self> {
        let t = entries.nrows();
        if entries.ncols() != t || t == 0 {
            return Err(Error::invalid(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                t,
                entries.ncols()
            )));
        }
        if band < 1 || band > t {
            return Err(Error::invalid(format!(
                "band {band} out of range for T = {t}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixing matrix contains non-finite entries"));
        }
        for i in 0..t {
            if !(entries[[i, i]] > 0.0) {
                return Err(Error::invalid(format!(
                    "mixing diagonal must be positive, got {} at {i}",
                    entries[[i, i]]
                )));
            }
            for j in 0..t {
                if j > i && entries[[i, j]] != 0.0 {
                    return Err(Error::invalid(format!(
                        "mixing matrix has an upper-triangle entry at ({i},{j})"
                    )));
                }
                if j < i && i - j >= band && entries[[i, j]] != 0.0 {
                    return Err(Error::invalid(format!(
                        "mixing entry ({i},{j}) lies outside band {band}"
                    )));
                }
            }
        }
        Ok(Self { entries, band })
    }

    pub fn identity(t: usize, band: usize) -> Result<Self> {
        Self::new(Array2::<f64>::eye(t), band)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }
}

/// Outcome of a [`solve_mixing`] run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// `Tr(X⁻¹G)` of the returned iterate.
    pub objective_value: f64,
    pub iterations: usize,
    /// Max-norm of the free-entry gradient at the returned iterate.
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Solver knobs; the defaults suit desk-scale problems.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Stop when the free-entry gradient max-norm drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Number of limited-memory curvature pairs.
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 10_000,
            memory: 10,
        }
    }
}

/// `Tr(X⁻¹G)` via banded factorization and column solves; the inverse is
/// never formed.
pub fn objective(x: &BandedGram, g: &WorkloadMatrix) -> Result<f64> {
    let t = x.dim();
    if g.dim() != t {
        return Err(Error::invalid(format!(
            "gram is {t}x{t} but workload is {0}x{0}",
            g.dim()
        )));
    }
    objective_raw(&x.entries, x.band, g.entries())
}

fn objective_raw(x: &Array2<f64>, band: usize, g: &Array2<f64>) -> Result<f64> {
    let l = banded_cholesky(x, band)?;
    Ok(trace_inv_times(&l, band, g))
}

fn trace_inv_times(l: &Array2<f64>, band: usize, g: &Array2<f64>) -> f64 {
    let t = g.nrows();
    let mut tr = 0.0;
    let mut col = vec![0.0; t];
    for j in 0..t {
        for i in 0..t {
            col[i] = g[[i, j]];
        }
        solve_spd_banded(l, band, &mut col);
        tr += col[j];
    }
    tr
}

/// Free-entry gradient of the objective: `−X⁻¹GX⁻¹` with the diagonal and
/// the out-of-band entries zeroed. The entry `(i,j)` is the derivative with
/// respect to `X[i][j]` alone; perturbing a symmetric pair moves the
/// objective by twice that amount.
pub fn objective_gradient(x: &BandedGram, g: &WorkloadMatrix) -> Result<Array2<f64>> {
    let t = x.dim();
    if g.dim() != t {
        return Err(Error::invalid(format!(
            "gram is {t}x{t} but workload is {0}x{0}",
            g.dim()
        )));
    }
    let l = banded_cholesky(&x.entries, x.band)?;
    let z = inv_g_inv(&l, x.band, g.entries());
    let mut out = Array2::zeros((t, t));
    for i in 0..t {
        for j in 0..t {
            if i != j && i.abs_diff(j) < x.band {
                out[[i, j]] = -z[[i, j]];
            }
        }
    }
    Ok(out)
}

/// `Z = X⁻¹·G·X⁻¹`, symmetrized against round-off.
fn inv_g_inv(l: &Array2<f64>, band: usize, g: &Array2<f64>) -> Array2<f64> {
    let t = g.nrows();
    let mut s = Array2::zeros((t, t));
    let mut col = vec![0.0; t];
    for j in 0..t {
        for i in 0..t {
            col[i] = g[[i, j]];
        }
        solve_spd_banded(l, band, &mut col);
        for i in 0..t {
            s[[i, j]] = col[i];
        }
    }
    // Z = X⁻¹·Sᵀ, one solve per row of S.
    let mut z = Array2::zeros((t, t));
    for j in 0..t {
        for i in 0..t {
            col[i] = s[[j, i]];
        }
        solve_spd_banded(l, band, &mut col);
        for i in 0..t {
            z[[i, j]] = col[i];
        }
    }
    for i in 0..t {
        for j in 0..i {
            let m = 0.5 * (z[[i, j]] + z[[j, i]]);
            z[[i, j]] = m;
            z[[j, i]] = m;
        }
    }
    z
}

/// Solves the banded unit-diagonal problem by limited-memory quasi-Newton
/// iteration over the free entries, starting from `X = I`.
///
/// Every accepted iterate is feasible by construction (the diagonal and band
/// pattern are structural; a backtracking line search rejects any step whose
/// factorization fails) and the objective decreases monotonically.
pub fn solve_mixing(
    g: &WorkloadMatrix,
    band: usize,
    opts: &SolveOptions,
) -> Result<(BandedGram, SolveReport)> {
    let (x, report, _) = solve_mixing_traced(g, band, opts)?;
    Ok((x, report))
}

/// As [`solve_mixing`], additionally returning the objective value at every
/// accepted iterate (starting with `X = I`).
pub fn solve_mixing_traced(
    g: &WorkloadMatrix,
    band: usize,
    opts: &SolveOptions,
) -> Result<(BandedGram, SolveReport, Vec<f64>)> {
    let t = g.dim();
    if band < 1 || band > t {
        return Err(Error::invalid(format!(
            "band {band} out of range for T = {t}"
        )));
    }
    let pairs = free_pairs(t, band);
    let gm = g.entries();

    let eval_f = |v: &[f64]| -> Result<f64> {
        objective_raw(&gram_from_free(t, &pairs, v), band, gm)
    };
    let eval_grad = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x = gram_from_free(t, &pairs, v);
        let l = banded_cholesky(&x, band)?;
        let f = trace_inv_times(&l, band, gm);
        let z = inv_g_inv(&l, band, gm);
        let grad = pairs.iter().map(|&(i, j)| -2.0 * z[[i, j]]).collect();
        Ok((f, grad))
    };

    let mut v = vec![0.0; pairs.len()];
    let (mut f, mut grad) = eval_grad(&v)?;
    let mut trace = vec![f];
    let mut kkt = inf_norm(&grad);
    let mut converged = kkt <= opts.tol;
    let mut iterations = 0usize;

    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(opts.memory);

    // Successive decreases of a few ulps mean the arithmetic floor, not
    // progress; a long streak of them terminates the loop.
    let mut tiny_streak = 0usize;
    const TINY_STREAK_LIMIT: usize = 50;

    while !converged && iterations < opts.max_iters {
        let mut dir = lbfgs_direction(&grad, &history);
        let mut slope = dot(&dir, &grad);
        if !(slope < -1e-14 * norm(&dir) * norm(&grad)) {
            // Degenerate curvature history; fall back to steepest descent.
            dir = grad.iter().map(|x| -x).collect();
            slope = dot(&dir, &grad);
        }

        // Backtracking Armijo line search; a failed factorization rejects
        // the step the same way an insufficient decrease does.
        const C1: f64 = 1e-4;
        let mut step = 1.0;
        let mut accepted = None;
        let mut flats: Vec<Vec<f64>> = Vec::new();
        for _ in 0..60 {
            let v_try: Vec<f64> = v
                .iter()
                .zip(&dir)
                .map(|(vi, di)| vi + step * di)
                .collect();
            if let Ok(f_try) = eval_f(&v_try) {
                // Strict decrease keeps the iteration from treading water
                // once c1·step·slope underflows next to f.
                if f_try <= f + C1 * step * slope && f_try < f {
                    accepted = Some((v_try, f_try));
                    break;
                }
                if f_try <= f && v_try != v {
                    flats.push(v_try);
                }
            }
            step *= 0.5;
        }

        let (v_new, f_new, grad_new) = match accepted {
            Some((v_new, f_new)) => {
                let (f_check, grad_new) = eval_grad(&v_new)?;
                debug_assert!((f_check - f_new).abs() <= 1e-9 * f_new.abs().max(1.0));
                (v_new, f_new, grad_new)
            }
            None => {
                // Endgame: every representable decrease in f is exhausted,
                // but the analytic gradient stays meaningful below the f64
                // resolution of f. Take the largest flat step (f unchanged,
                // feasible) that still shrinks the gradient.
                let chosen = flats.iter().take(8).find_map(|v_flat| {
                    let (f_flat, grad_flat) = eval_grad(v_flat).ok()?;
                    (inf_norm(&grad_flat) <= 0.9 * kkt)
                        .then(|| (v_flat.clone(), f_flat, grad_flat))
                });
                match chosen {
                    Some(t) => t,
                    None => break,
                }
            }
        };

        if f - f_new <= 2.0 * f64::EPSILON * f.abs().max(1.0) {
            tiny_streak += 1;
            if tiny_streak >= TINY_STREAK_LIMIT {
                v = v_new;
                f = f_new;
                grad = grad_new;
                kkt = inf_norm(&grad);
                converged = kkt <= opts.tol;
                iterations += 1;
                trace.push(f);
                break;
            }
        } else {
            tiny_streak = 0;
        }

        let s: Vec<f64> = v_new.iter().zip(&v).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        v = v_new;
        f = f_new;
        grad = grad_new;
        kkt = inf_norm(&grad);
        converged = kkt <= opts.tol;
        iterations += 1;
        trace.push(f);
    }

    let entries = gram_from_free(t, &pairs, &v);
    let gram = BandedGram { entries, band };
    let report = SolveReport {
        objective_value: f,
        iterations,
        kkt_residual: kkt,
        converged,
    };
    Ok((gram, report, trace))
}

/// Recovers the lower-triangular banded factor `C` with `CᵀC = X` and a
/// positive diagonal.
///
/// `CᵀC` accumulates from the bottom-right corner, so this is a Cholesky
/// factorization in reversed index order: with `J` the index-reversal
/// permutation, `J·X·J = L·Lᵀ` yields `C[i][j] = L[T−1−j][T−1−i]`.
pub fn factor(x: &BandedGram) -> Result<MixingMatrix> {
    let t = x.dim();
    let band = x.band;
    let flipped = Array2::from_shape_fn((t, t), |(i, j)| x.entries[[t - 1 - i, t - 1 - j]]);
    let l = banded_cholesky(&flipped, band)?;
    let mut c = Array2::zeros((t, t));
    for i in 0..t {
        for j in i.saturating_sub(band - 1)..=i {
            c[[i, j]] = l[[t - 1 - j, t - 1 - i]];
        }
    }
    Ok(MixingMatrix { entries: c, band })
}

/// `Tr(X_approx⁻¹G) − Tr(X_star⁻¹G)`: how much objective an approximate
/// solution gives away against a reference solution under the workload `G`.
pub fn reduction_in_objective(
    g: &WorkloadMatrix,
    x_approx: &BandedGram,
    x_star: &BandedGram,
) -> Result<f64> {
    if x_approx.dim() != x_star.dim() || x_approx.dim() != g.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: workload {}x{0}, approx {1}x{1}, star {2}x{2}",
            g.dim(),
            x_approx.dim(),
            x_star.dim()
        )));
    }
    Ok(objective(x_approx, g)? - objective(x_star, g)?)
}

/// Off-diagonal in-band upper-triangle index pairs, the solver's free
/// coordinates.
fn free_pairs(t: usize, band: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..t {
        for j in (i + 1)..t.min(i + band) {
            pairs.push((i, j));
        }
    }
    pairs
}

fn gram_from_free(t: usize, pairs: &[(usize, usize)], v: &[f64]) -> Array2<f64> {
    debug_assert_eq!(pairs.len(), v.len());
    let mut x = Array2::<f64>::eye(t);
    for (&(i, j), &val) in pairs.iter().zip(v) {
        x[[i, j]] = val;
        x[[j, i]] = val;
    }
    x
}

fn lbfgs_direction(
    grad: &[f64],
    history: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = match history.back() {
        Some((s, y, _)) => dot(s, y) / dot(y, y).max(1e-300),
        None => 1.0 / norm(grad).max(1.0),
    };
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}
