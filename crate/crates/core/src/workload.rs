//! Workload matrices for the mixing-matrix objective.
//!
//! The curvature workload encodes how Hessian eigenvalues propagate noise
//! through gradient descent: with `V[i,j] = (1−ημᵢ)^{T−j−1}` and
//! `M = Diag(μ)`, the workload is `G = VᵀMV`, i.e.
//! `G[j,l] = Σᵢ μᵢ·(1−ημᵢ)^{2T−j−l−2}` (0-based `j,l`). Two data-independent
//! baselines are also provided: the identity workload (per-step squared
//! noise) and the prefix-sum workload `AᵀA` with `A` lower-triangular ones.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::EigenSpectrum;

/// Which construction produced a workload; stored in the file sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Curvature,
    Identity,
    Prefix,
    Custom,
}

/// Symmetric positive-semidefinite T×T workload matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadMatrix {
    entries: Array2<f64>,
    eta: Option<f64>,
    kind: WorkloadKind,
    divergent: bool,
}

impl WorkloadMatrix {
    /// Wraps an existing matrix (e.g. loaded from a file) after shape and
    /// symmetry checks.
    pub fn from_parts(entries: Array2<f64>, eta: Option<f64>, kind: WorkloadKind) -> Result<Self> {
        let t = entries.nrows();
        if entries.ncols() != t || t == 0 {
            return Err(Error::invalid(format!(
                "workload must be square and non-empty, got {}x{}",
                t,
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("workload contains non-finite entries"));
        }
        for i in 0..t {
            for j in 0..i {
                let a = entries[[i, j]];
                let b = entries[[j, i]];
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::invalid(format!(
                        "workload is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            eta,
            kind,
            divergent: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    pub fn kind(&self) -> WorkloadKind {
        self.kind
    }

    /// Set when the workload was built in the divergent regime
    /// `η·μ_max ≥ 2`; the entries are still well-defined.
    pub fn divergent(&self) -> bool {
        self.divergent
    }
}

/// Eigenvalue aggregation policy for [`curvature_workload_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucketing {
    /// Histogram spectra longer than 10,000 entries into 1,024 log-spaced
    /// buckets (bucket value = mean, weight = count). The default.
    Auto,
    /// Sum over every eigenvalue exactly.
    Off,
    /// Always bucket, with the given bucket count.
    Buckets(usize),
}

const AUTO_BUCKET_THRESHOLD: usize = 10_000;
const AUTO_BUCKET_COUNT: usize = 1_024;

/// Curvature workload `G[j,l] = Σᵢ μᵢ·(1−ημᵢ)^{2T−j−l−2}` with the default
/// bucketing policy.
///
/// The spectrum must be non-negative (apply
/// [`truncate_negative`](crate::spectrum::truncate_negative) first). Values
/// beyond the stored list contribute nothing. In the divergent regime
/// `η·μ_max ≥ 2` the result is still computed but flagged.
pub fn curvature_workload(s: &EigenSpectrum, eta: f64, t: usize) -> Result<WorkloadMatrix> {
    curvature_workload_with(s, eta, t, Bucketing::Auto)
}

/// Curvature workload with an explicit bucketing policy.
pub fn curvature_workload_with(
    s: &EigenSpectrum,
    eta: f64,
    t: usize,
    bucketing: Bucketing,
) -> Result<WorkloadMatrix> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    if t < 1 {
        return Err(Error::invalid("iteration count T must be at least 1"));
    }
    if s.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(
            "spectrum has negative values; truncate them before building the workload",
        ));
    }

    let divergent = eta * s.max_value() >= 2.0;
    if divergent {
        log::warn!(
            "eta*mu_max = {:.3} >= 2: noise-free descent diverges and the workload entries grow geometrically",
            eta * s.max_value()
        );
    }

    let positive: Vec<f64> = s.values().iter().copied().filter(|&v| v > 0.0).collect();
    let weighted: Vec<(f64, f64)> = match bucketing {
        Bucketing::Off => positive.iter().map(|&v| (v, 1.0)).collect(),
        Bucketing::Auto if positive.len() <= AUTO_BUCKET_THRESHOLD => {
            positive.iter().map(|&v| (v, 1.0)).collect()
        }
        Bucketing::Auto => log_bucket(&positive, AUTO_BUCKET_COUNT),
        Bucketing::Buckets(n) => log_bucket(&positive, n.max(1)),
    };

    // The workload is Hankel in j+l: G[j,l] = h[2T−2−j−l] with
    // h[m] = Σᵢ wᵢ·μᵢ·(1−ημᵢ)^m, accumulated by geometric recurrence.
    let mut h = vec![0.0f64; 2 * t - 1];
    for &(mu, weight) in &weighted {
        let r = 1.0 - eta * mu;
        let mut acc = weight * mu;
        for hm in h.iter_mut() {
            *hm += acc;
            acc *= r;
        }
    }
    let entries = Array2::from_shape_fn((t, t), |(j, l)| h[2 * t - 2 - j - l]);
    Ok(WorkloadMatrix {
        entries,
        eta: Some(eta),
        kind: WorkloadKind::Curvature,
        divergent,
    })
}

/// Identity workload: the per-step squared-noise objective `Σᵢ‖z̃ᵢ‖²`
/// corresponds to `Tr(X⁻¹·I)`.
pub fn identity_workload(t: usize) -> Result<WorkloadMatrix> {
    if t < 1 {
        return Err(Error::invalid("iteration count T must be at least 1"));
    }
    Ok(WorkloadMatrix {
        entries: Array2::<f64>::eye(t),
        eta: None,
        kind: WorkloadKind::Identity,
        divergent: false,
    })
}

/// Prefix-sum workload `AᵀA` with `A` lower-triangular all-ones:
/// `G[j,l] = T − max(j,l)`.
pub fn prefix_workload(t: usize) -> Result<WorkloadMatrix> {
    if t < 1 {
        return Err(Error::invalid("iteration count T must be at least 1"));
    }
    let entries = Array2::from_shape_fn((t, t), |(j, l)| (t - j.max(l)) as f64);
    Ok(WorkloadMatrix {
        entries,
        eta: None,
        kind: WorkloadKind::Prefix,
        divergent: false,
    })
}

/// Histogram positive values into `n` log-spaced buckets; each bucket is
/// represented by its arithmetic mean with its count as the weight.
fn log_bucket(values: &[f64], n: usize) -> Vec<(f64, f64)> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![(lo, values.len() as f64)];
    }
    let span = (hi / lo).ln();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    for &v in values {
        let frac = (v / lo).ln() / span;
        let b = ((frac * n as f64) as usize).min(n - 1);
        sums[b] += v;
        counts[b] += 1;
    }
    sums.iter()
        .zip(&counts)
        .filter(|&(_, &c)| c > 0)
        .map(|(&s, &c)| (s / c as f64, c as f64))
        .collect()
}
