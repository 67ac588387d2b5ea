//! Desk-scale differentially private training of linear and logistic models.
//!
//! Per-example gradients are clipped to norm ζ, summed, perturbed by ζσ·z̃ₜ
//! from the correlated noise stream, and averaged over the batch before the
//! SGD step. Batches follow the banded schedule: the dataset is split once
//! into `b` equal parts and step `t` samples from part `t mod b`, which is
//! what makes the banded gram compatible with subsampling amplification.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixopt::MixingMatrix;
use crate::noisegen::{derive_stream_seed, NoiseStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Squared loss `½(w·x̃ − y)²` per example.
    Linear,
    /// Cross-entropy with labels in {0, 1}.
    Logistic,
}

/// Feature matrix plus labels; a bias column is appended implicitly by the
/// models.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) || labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Iteration count T.
    pub steps: usize,
    /// Band size b of the schedule and of the mixing matrix.
    pub band: usize,
    /// Batch size |B|.
    pub batch: usize,
    /// Per-example clipping norm ζ.
    pub clip: f64,
    /// Noise multiplier σ.
    pub sigma: f64,
    pub eta: f64,
    pub seed: u64,
    pub model: ModelKind,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.band < 1 || self.band > self.steps {
            return Err(Error::invalid(format!(
                "band {} out of range for {} steps",
                self.band, self.steps
            )));
        }
        if self.batch < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("noise multiplier must be non-negative"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Trained weight vector; the bias is the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

/// Per-step training log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean per-example loss on the batch before the update.
    pub batch_loss: f64,
    /// Mean pre-clip gradient norm over the batch.
    pub grad_norm_mean: f64,
    /// Fraction of examples whose gradient was actually clipped.
    pub clipped_fraction: f64,
}

/// What an external subsampled-Gaussian accountant needs:
/// `q = |B|/⌊n/b⌋` and `⌈T·|B|²/(q·n)⌉` compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantParams {
    pub q: f64,
    pub compositions: u64,
}

/// Splits the index range once into `b` parts of size `⌊n/b⌋` (a seeded
/// shuffle decides membership; remainder indices are dropped with a
/// warning), then draws batch `t` uniformly without replacement from part
/// `t mod b`.
pub fn partition_schedule(
    n: usize,
    b: usize,
    batch: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if b < 1 || n < b {
        return Err(Error::invalid(format!(
            "cannot split {n} records into {b} partitions"
        )));
    }
    let part = n / b;
    if batch > part {
        return Err(Error::invalid(format!(
            "batch size {batch} exceeds the partition size {part} = floor({n}/{b})"
        )));
    }
    if !n.is_multiple_of(b) {
        log::warn!(
            "{} records are dropped: {n} is not divisible by {b} partitions",
            n % b
        );
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let parts: Vec<&[usize]> = (0..b).map(|l| &perm[l * part..(l + 1) * part]).collect();

    let mut schedule = Vec::with_capacity(t);
    for step in 0..t {
        let pool = parts[step % b];
        let mut chosen: Vec<usize> = pool.to_vec();
        chosen.partial_shuffle(&mut rng, batch);
        chosen.truncate(batch);
        schedule.push(chosen);
    }
    Ok(schedule)
}

/// `g·min(1, ζ/‖g‖₂)`: rescales the gradient into the ζ-ball. The zero
/// vector maps to itself. Expects ζ > 0.
pub fn clip_gradient(g: &[f64], zeta: f64) -> Vec<f64> {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let factor = (zeta / norm).min(1.0);
    if factor >= 1.0 || norm == 0.0 {
        g.to_vec()
    } else {
        g.iter().map(|x| x * factor).collect()
    }
}

/// Per-example loss and gradient with respect to `[w; bias]`.
fn example_loss_grad(
    model: ModelKind,
    w: &[f64],
    row: ndarray::ArrayView1<'_, f64>,
    label: f64,
    grad: &mut [f64],
) -> f64 {
    let f = row.len();
    let mut z = w[f];
    for (j, &x) in row.iter().enumerate() {
        z += w[j] * x;
    }
    match model {
        ModelKind::Linear => {
            let err = z - label;
            for (j, &x) in row.iter().enumerate() {
                grad[j] = err * x;
            }
            grad[f] = err;
            0.5 * err * err
        }
        ModelKind::Logistic => {
            let s = 1.0 / (1.0 + (-z).exp());
            let err = s - label;
            for (j, &x) in row.iter().enumerate() {
                grad[j] = err * x;
            }
            grad[f] = err;
            // Stable softplus(z) − y·z.
            z.max(0.0) + (-z.abs()).exp().ln_1p() - label * z
        }
    }
}

/// Mean loss of the model over the whole dataset; used to evaluate final
/// iterates independently of the per-batch log.
pub fn dataset_loss(data: &Dataset, model: ModelKind, w: &[f64]) -> f64 {
    let mut grad = vec![0.0; data.n_features() + 1];
    let mut total = 0.0;
    for i in 0..data.len() {
        total += example_loss_grad(model, w, data.features().row(i), data.labels()[i], &mut grad);
    }
    total / data.len() as f64
}

/// Differentially private SGD with per-example clipping, the banded batch
/// schedule, and correlated noise from `c`.
///
/// Per step: clip every per-example gradient to ζ, sum them, add ζσ·z̃ₜ,
/// divide by |B|, and take an SGD step. Deterministic given
/// `(data, cfg, c)`: the schedule and the noise stream derive their own
/// seeds from `cfg.seed`. With σ = 0 the trajectory is bit-identical to
/// clipped SGD on the same schedule.
pub fn private_train(
    data: &Dataset,
    cfg: &TrainConfig,
    c: &MixingMatrix,
) -> Result<(ModelParams, Vec<StepMetrics>)> {
    cfg.validate()?;
    if c.dim() != cfg.steps {
        return Err(Error::invalid(format!(
            "mixing matrix is {}x{0} but the run has {} steps",
            c.dim(),
            cfg.steps
        )));
    }
    if c.band() != cfg.band {
        return Err(Error::invalid(format!(
            "mixing matrix band {} does not match configured band {}",
            c.band(),
            cfg.band
        )));
    }
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if matches!(cfg.model, ModelKind::Logistic)
        && data.labels().iter().any(|&y| y != 0.0 && y != 1.0)
    {
        return Err(Error::invalid("logistic labels must be 0 or 1"));
    }
    if data.len() < cfg.band * cfg.batch {
        log::warn!(
            "dataset has {} records, below the recommended b*|B| = {}",
            data.len(),
            cfg.band * cfg.batch
        );
    }

    let schedule = partition_schedule(
        data.len(),
        cfg.band,
        cfg.batch,
        cfg.steps,
        derive_stream_seed(cfg.seed, 0x5C4E),
    )?;
    let mut stream = NoiseStream::new(
        derive_stream_seed(cfg.seed, 0x401E),
        cfg.clip * cfg.sigma,
    );

    let p = data.n_features() + 1;
    let mut w = vec![0.0f64; p];
    let mut grad = vec![0.0f64; p];
    let mut sum = vec![0.0f64; p];
    let mut metrics = Vec::with_capacity(cfg.steps);

    for (step, batch) in schedule.iter().enumerate() {
        sum.fill(0.0);
        let mut loss_total = 0.0;
        let mut norm_total = 0.0;
        let mut clipped = 0usize;
        for &idx in batch {
            let loss = example_loss_grad(
                cfg.model,
                &w,
                data.features().row(idx),
                data.labels()[idx],
                &mut grad,
            );
            loss_total += loss;
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm_total += norm;
            if norm > cfg.clip {
                clipped += 1;
                let factor = cfg.clip / norm;
                for (s, g) in sum.iter_mut().zip(&grad) {
                    *s += g * factor;
                }
            } else {
                for (s, g) in sum.iter_mut().zip(&grad) {
                    *s += g;
                }
            }
        }
        let batch_len = batch.len() as f64;
        let batch_loss = loss_total / batch_len;
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite batch loss at step {step}"
            )));
        }
        let noise = stream.next(c, p)?;
        for i in 0..p {
            w[i] -= cfg.eta * (sum[i] + noise[i]) / batch_len;
        }
        metrics.push(StepMetrics {
            step,
            batch_loss,
            grad_norm_mean: norm_total / batch_len,
            clipped_fraction: clipped as f64 / batch_len,
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("trained weights are non-finite".into()));
    }
    Ok((ModelParams { weights: w }, metrics))
}

/// Accountant hand-off: `q = |B|/⌊n/b⌋` and `⌈T·|B|²/(q·n)⌉ = ⌈T·|B|·⌊n/b⌋/n⌉`
/// computed exactly in integer arithmetic.
pub fn accountant_params(n: usize, batch: usize, b: usize, t: usize) -> Result<AccountantParams> {
    if b < 1 {
        return Err(Error::invalid("band must be at least 1"));
    }
    let part = n / b;
    if part == 0 {
        return Err(Error::invalid(format!(
            "floor({n}/{b}) is zero; no records per partition"
        )));
    }
    if batch > part {
        return Err(Error::invalid(format!(
            "batch size {batch} exceeds the partition size {part}"
        )));
    }
    let q = batch as f64 / part as f64;
    let num = t as u128 * batch as u128 * part as u128;
    let compositions = num.div_ceil(n as u128) as u64;
    Ok(AccountantParams { q, compositions })
}
