//! Hessian eigenvalue estimation and post-processing.
//!
//! The pipeline consumes curvature only through eigenvalues, so this module
//! provides everything needed to turn an implicit symmetric operator into a
//! full approximate spectrum: top-k extraction via Lanczos with full
//! reorthogonalization, a direct dense eigensolver for small problems and as
//! a cross-check, truncation of negative eigenvalues, and an anchored
//! power-law fit that extrapolates the unmeasured tail.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric linear operator given by its matrix-vector product.
///
/// Implementations must be deterministic for a fixed input and symmetric up
/// to rounding; [`symmetry_defect`] estimates the defect by sampling.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    /// Writes `A·input` into `output`. Both slices have length [`dim`](Self::dim).
    fn apply(&self, input: &[f64], output: &mut [f64]);
}

/// Dense symmetric matrix operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::invalid(format!(
                "operator matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

impl SymmetricOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        for (i, out) in output.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, &x) in input.iter().enumerate() {
                s += self.matrix[[i, j]] * x;
            }
            *out = s;
        }
    }
}

/// Diagonal operator; its eigenvalues are the diagonal entries.
#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }
}

impl SymmetricOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        for ((out, &d), &x) in output.iter_mut().zip(&self.diag).zip(input) {
            *out = d * x;
        }
    }
}

/// Estimates the worst relative symmetry defect `|uᵀAv − vᵀAu|` over random
/// unit vector pairs, normalized by `max(‖Av‖, ‖Au‖)`.
pub fn symmetry_defect<O: SymmetricOperator + ?Sized>(op: &O, samples: usize, seed: u64) -> f64 {
    let p = op.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut av = vec![0.0; p];
    let mut au = vec![0.0; p];
    for _ in 0..samples {
        let u = random_unit_vector(&mut rng, p);
        let v = random_unit_vector(&mut rng, p);
        op.apply(&v, &mut av);
        op.apply(&u, &mut au);
        let defect = (dot(&u, &av) - dot(&v, &au)).abs();
        let scale = norm(&av).max(norm(&au)).max(1e-300);
        worst = worst.max(defect / scale);
    }
    worst
}

/// Eigenvalues sorted non-increasing, possibly a partial top-k slice of a
/// `total_dim`-dimensional spectrum. `k_measured` counts the entries that
/// were estimated directly rather than filled in by extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    total_dim: usize,
    k_measured: usize,
    values: Vec<f64>,
    source: String,
}

impl EigenSpectrum {
    pub fn new(
        values: Vec<f64>,
        total_dim: usize,
        k_measured: usize,
        source: impl Into<String>,
    ) -> Result<Self> {
        let s = Self {
            total_dim,
            k_measured,
            values,
            source: source.into(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Re-checks the type invariants; used after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() > self.total_dim {
            return Err(Error::invalid(format!(
                "spectrum holds {} values but total_dim is {}",
                self.values.len(),
                self.total_dim
            )));
        }
        if self.k_measured > self.values.len() {
            return Err(Error::invalid(format!(
                "k_measured {} exceeds the {} stored values",
                self.k_measured,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrum contains non-finite values"));
        }
        if self.values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("spectrum values must be non-increasing"));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn k_measured(&self) -> usize {
        self.k_measured
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Status of a Lanczos run.
#[derive(Debug, Clone, Serialize)]
pub struct LanczosReport {
    /// True when the requested Ritz values are certified: either the Krylov
    /// basis closed on an exact invariant subspace or the top-k values
    /// stabilized between the last two iterations.
    pub converged: bool,
    /// Number of basis vectors built.
    pub iterations: usize,
    /// Number of deflation restarts taken after an invariant subspace closed
    /// early (degenerate spectra).
    pub restarts: usize,
}

const BREAKDOWN_REL: f64 = 1e-10;

/// Top-k algebraically largest eigenvalues via Lanczos iteration with full
/// reorthogonalization and a seeded random start vector.
///
/// On breakdown (an invariant subspace closes before `max_iters` vectors are
/// built) the iteration deflates: a fresh random direction orthogonal to the
/// existing basis continues the run, so degenerate spectra still yield `k`
/// values with their multiplicities. The report's `converged` flag is false
/// when the top-k Ritz values could not be certified within `max_iters`.
pub fn lanczos_topk<O: SymmetricOperator + ?Sized>(
    op: &O,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(EigenSpectrum, LanczosReport)> {
    let p = op.dim();
    if k == 0 || k > p {
        return Err(Error::invalid(format!(
            "requested k = {k} eigenvalues of a dimension-{p} operator"
        )));
    }
    if max_iters < k {
        return Err(Error::invalid(format!(
            "max_iters = {max_iters} is below k = {k}"
        )));
    }
    let m_target = max_iters.min(p);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m_target);
    let mut alphas: Vec<f64> = Vec::with_capacity(m_target);
    let mut betas: Vec<f64> = Vec::with_capacity(m_target);
    let mut restarts = 0usize;
    let exact: bool;

    let mut v = random_unit_vector(&mut rng, p);
    let mut w = vec![0.0; p];
    loop {
        basis.push(v.clone());
        let j = basis.len() - 1;
        op.apply(&v, &mut w);
        let alpha = dot(&w, &v);
        alphas.push(alpha);
        axpy(&mut w, -alpha, &v);
        if j > 0 && betas[j - 1] != 0.0 {
            let coeff = -betas[j - 1];
            for (wi, bi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi += coeff * bi;
            }
        }
        // Full reorthogonalization; the second pass removes the residue the
        // first leaves behind when w is nearly in the span of the basis.
        for _ in 0..2 {
            for u in &basis {
                let c = dot(&w, u);
                if c != 0.0 {
                    axpy(&mut w, -c, u);
                }
            }
        }
        let beta = norm(&w);
        let scale = alphas
            .iter()
            .chain(betas.iter())
            .fold(1e-300f64, |a, &x| a.max(x.abs()));

        if basis.len() == m_target {
            exact = basis.len() == p || beta <= BREAKDOWN_REL * scale;
            break;
        }
        if beta > BREAKDOWN_REL * scale {
            betas.push(beta);
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / beta;
            }
        } else {
            // Invariant subspace closed; deflate with a fresh direction.
            restarts += 1;
            match deflated_random_vector(&mut rng, p, &basis) {
                Some(fresh) => {
                    betas.push(0.0);
                    v = fresh;
                }
                None => {
                    exact = true;
                    break;
                }
            }
        }
    }

    let m = basis.len();
    let evals = tridiagonal_eigenvalues(&alphas, &betas[..m - 1]);
    let top: Vec<f64> = evals.iter().rev().take(k).copied().collect();

    let converged = if exact {
        true
    } else if m > k {
        let prev = tridiagonal_eigenvalues(&alphas[..m - 1], &betas[..m - 2]);
        let prev_top: Vec<f64> = prev.iter().rev().take(k).copied().collect();
        top.iter().zip(&prev_top).all(|(&a, &b)| {
            let scale = a.abs().max(b.abs()).max(1e-300);
            (a - b).abs() <= 1e-9 * scale
        })
    } else {
        false
    };

    let spectrum = EigenSpectrum::new(
        top,
        p,
        k,
        format!("lanczos(k={k}, iters={m}, seed={seed})"),
    )?;
    Ok((
        spectrum,
        LanczosReport {
            converged,
            iterations: m,
            restarts,
        },
    ))
}

/// Replaces negative eigenvalues with zero; ordering and sizes are preserved.
/// Idempotent by construction.
pub fn truncate_negative(s: &EigenSpectrum) -> EigenSpectrum {
    EigenSpectrum {
        total_dim: s.total_dim,
        k_measured: s.k_measured,
        values: s.values.iter().map(|&v| v.max(0.0)).collect(),
        source: s.source.clone(),
    }
}

/// Anchored power-law tail model
/// `log μᵢ = C·(log p₊ − log i)^α + log μ_{p₊}`,
/// which passes through `(p₊, μ_{p₊})` exactly and is non-increasing in `i`
/// for `C ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    #[serde(rename = "coeff_C")]
    pub coeff_c: f64,
    pub alpha: f64,
    pub p_plus: usize,
    pub mu_pplus: f64,
    pub k_used: usize,
}

impl TailFit {
    /// Evaluates the fitted curve at 1-based index `i ∈ [1, p_plus]`.
    pub fn evaluate(&self, i: usize) -> f64 {
        let x = (self.p_plus as f64 / i as f64).ln();
        self.mu_pplus * (self.coeff_c * x.powf(self.alpha)).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("tail fit alpha must be positive"));
        }
        if !(self.mu_pplus > 0.0) || !self.mu_pplus.is_finite() {
            return Err(Error::invalid("tail fit mu_pplus must be positive"));
        }
        if self.p_plus == 0 {
            return Err(Error::invalid("tail fit p_plus must be positive"));
        }
        if !self.coeff_c.is_finite() {
            return Err(Error::invalid("tail fit coefficient must be finite"));
        }
        Ok(())
    }
}

/// Fits the anchored tail model to the measured top-k values by two-stage
/// log-log linearization: linear regression of `log(log μᵢ − log μ_{p₊})` on
/// `log(log p₊ − log i)` over the 1-based indices `i = 1..k`.
///
/// Points with `μᵢ ≤ μ_{p₊}` are excluded (their log-gap is undefined). An
/// all-equal measured spectrum degenerates to the flat tail `(C, α) = (0, 1)`
/// with `k_used = 0`; fewer than two usable points otherwise is an error.
pub fn fit_tail(topk: &EigenSpectrum, p_plus: usize, mu_pplus: f64) -> Result<TailFit> {
    if !(mu_pplus > 0.0) || !mu_pplus.is_finite() {
        return Err(Error::invalid("mu_pplus must be positive and finite"));
    }
    if p_plus <= topk.k_measured() {
        return Err(Error::invalid(format!(
            "p_plus = {p_plus} must exceed the {} measured values",
            topk.k_measured()
        )));
    }
    let vals = &topk.values()[..topk.k_measured()];

    let flat = |k_used| TailFit {
        coeff_c: 0.0,
        alpha: 1.0,
        p_plus,
        mu_pplus,
        k_used,
    };
    if !vals.is_empty() && vals.iter().all(|&v| v == vals[0]) {
        return Ok(flat(0));
    }

    let pts: Vec<(f64, f64)> = vals
        .iter()
        .enumerate()
        .filter(|&(_, &mu)| mu > mu_pplus)
        .map(|(idx, &mu)| {
            let i = (idx + 1) as f64;
            let x = (p_plus as f64 / i).ln();
            let y = (mu / mu_pplus).ln();
            (x.ln(), y.ln())
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::TailFit(format!(
            "only {} of {} points exceed the anchor value {mu_pplus:.3e}",
            pts.len(),
            vals.len()
        )));
    }

    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &pts {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        // The usable points tie in value; the model degenerates to flat.
        return Ok(flat(0));
    }
    let intercept = mean_y - slope * mean_x;
    Ok(TailFit {
        coeff_c: intercept.exp(),
        alpha: slope,
        p_plus,
        mu_pplus,
        k_used: pts.len(),
    })
}

/// Produces a full length-`p` spectrum: measured values first, then the
/// fitted curve down to index `p_plus` (clamped so the output stays
/// non-increasing), then zeros.
pub fn extrapolate(fit: &TailFit, topk: &EigenSpectrum, p: usize) -> Result<EigenSpectrum> {
    fit.validate()?;
    if p < fit.p_plus {
        return Err(Error::invalid(format!(
            "target dimension {p} is below the tail end p_plus = {}",
            fit.p_plus
        )));
    }
    let k = topk.k_measured();
    if k > fit.p_plus {
        return Err(Error::invalid(format!(
            "{k} measured values extend past p_plus = {}",
            fit.p_plus
        )));
    }
    let measured = &topk.values()[..k];
    let mut values = Vec::with_capacity(p);
    values.extend_from_slice(measured);
    let mut ceiling = measured.last().copied().unwrap_or(f64::INFINITY);
    for i in (k + 1)..=fit.p_plus {
        let v = fit.evaluate(i).min(ceiling);
        values.push(v);
        ceiling = v;
    }
    values.resize(p, 0.0);
    EigenSpectrum::new(
        values,
        p,
        k,
        format!("{}+extrapolated", topk.source()),
    )
}

/// Default size cap for the direct dense eigensolver.
pub const DENSE_EIG_CAP: usize = 4096;

/// Full spectrum of a symmetric matrix via a direct eigensolver, sorted
/// non-increasing. Serves small models and acts as the independent
/// cross-check for the Lanczos path.
pub fn dense_eigs(matrix: &Array2<f64>) -> Result<EigenSpectrum> {
    dense_eigs_with_cap(matrix, DENSE_EIG_CAP)
}

pub fn dense_eigs_with_cap(matrix: &Array2<f64>, cap: usize) -> Result<EigenSpectrum> {
    let p = matrix.nrows();
    if matrix.ncols() != p {
        return Err(Error::invalid(format!(
            "matrix must be square, got {}x{}",
            p,
            matrix.ncols()
        )));
    }
    if p == 0 {
        return Err(Error::invalid("matrix must be non-empty"));
    }
    if p > cap {
        return Err(Error::DimensionCap { dim: p, cap });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let dm = nalgebra::DMatrix::from_row_iterator(p, p, matrix.iter().copied());
    let eig = dm.symmetric_eigen();
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    EigenSpectrum::new(values, p, p, "dense")
}

/// All eigenvalues of a symmetric tridiagonal matrix, ascending, via Sturm
/// bisection. Zero off-diagonal entries (block boundaries) are handled
/// naturally. O(n² log(1/ε)).
fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    debug_assert_eq!(off.len(), n.saturating_sub(1));
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![diag[0]];
    }

    // Gershgorin interval.
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for i in 0..n {
        let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - left - right);
        hi = hi.max(diag[i] + left + right);
    }
    lo -= 1.0;
    hi += 1.0;

    let count_below = |lambda: f64| -> usize {
        // LDLᵀ pivots of T − λI; the number of negative pivots equals the
        // number of eigenvalues below λ.
        let mut count = 0;
        let mut q = diag[0] - lambda;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let q_safe = if q.abs() < 1e-300 {
                if q >= 0.0 {
                    1e-300
                } else {
                    -1e-300
                }
            } else {
                q
            };
            q = (diag[i] - lambda) - off[i - 1] * off[i - 1] / q_safe;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };

    let mut eigenvalues = Vec::with_capacity(n);
    for k in 0..n {
        let mut a = lo;
        let mut b = hi;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if (b - a) < 2.0 * f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
            if count_below(mid) <= k {
                a = mid;
            } else {
                b = mid;
            }
        }
        eigenvalues.push(0.5 * (a + b));
    }
    eigenvalues
}

fn random_unit_vector(rng: &mut ChaCha20Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit vector orthogonalized against `basis`; `None` once the basis
/// spans the whole space.
fn deflated_random_vector(
    rng: &mut ChaCha20Rng,
    p: usize,
    basis: &[Vec<f64>],
) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v = random_unit_vector(rng, p);
        for _ in 0..2 {
            for u in basis {
                let c = dot(&v, u);
                axpy(&mut v, -c, u);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            for x in &mut v {
                *x /= n;
            }
            return Some(v);
        }
    }
    None
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
