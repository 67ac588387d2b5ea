//! Online generation of cross-iteration correlated Gaussian noise.
//!
//! With a lower-triangular banded mixing matrix `C`, the correlated vectors
//! satisfy `Σⱼ C[t,j]·z̃ⱼ = zₜ` for i.i.d. standard Gaussian `zₜ`, so each
//! step is one back-substitution against the last `b−1` history vectors:
//! `z̃ₜ = (zₜ − Σ_{j=t−b+1}^{t−1} C[t,j]·z̃ⱼ) / C[t,t]`. Memory stays at
//! `b−1` vectors regardless of the horizon.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::mixopt::MixingMatrix;

/// Coordinates are generated in fixed-size blocks, each from its own counter
/// stream, so block-parallel generation would stay deterministic.
const COORD_BLOCK: usize = 8192;

/// Raw standard-normal vector for a given `(seed, step)`. Deterministic and
/// independent of any stream history; this is the replay contract the
/// correlated stream is verified against.
pub fn standard_normal_vector(seed: u64, step: usize, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p);
    let blocks = p.div_ceil(COORD_BLOCK);
    for block in 0..blocks {
        let mut rng = ChaCha20Rng::from_seed(expand_seed(seed));
        rng.set_stream(((step as u64) << 20) | block as u64);
        let len = COORD_BLOCK.min(p - block * COORD_BLOCK);
        for _ in 0..len {
            out.push(rng.sample(StandardNormal));
        }
    }
    out
}

/// Derives an independent stream seed from a master seed and an index
/// (per-trial seeds, schedule vs. noise separation). SplitMix64 finalizer.
pub fn derive_stream_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateful generator of the correlated noise sequence `z̃₀, …, z̃_{T−1}`.
///
/// The internal recurrence runs in unscaled (unit-variance) units; `scale`
/// is applied only at emission. A stream is single-consumer: `next` must be
/// called in step order. Streams with different seeds are independent.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    scale: f64,
    step: usize,
    dim: Option<usize>,
    history: VecDeque<Vec<f64>>,
}

impl NoiseStream {
    pub fn new(seed: u64, scale: f64) -> Self {
        Self {
            seed,
            scale,
            step: 0,
            dim: None,
            history: VecDeque::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of history vectors currently retained (at most `b−1`).
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Emits `scale·z̃ₜ` for the current step and advances the stream.
    pub fn next(&mut self, c: &MixingMatrix, p: usize) -> Result<Vec<f64>> {
        let t_total = c.dim();
        let t = self.step;
        if t >= t_total {
            return Err(Error::StreamExhausted { steps: t_total });
        }
        match self.dim {
            None => self.dim = Some(p),
            Some(d) if d != p => {
                return Err(Error::invalid(format!(
                    "stream was started with p = {d} but next() was called with p = {p}"
                )));
            }
            _ => {}
        }
        let diag = c.coeff(t, t);
        if !(diag > 0.0) {
            return Err(Error::invalid(format!(
                "mixing matrix diagonal entry C[{t},{t}] = {diag} is not positive"
            )));
        }

        let mut z = standard_normal_vector(self.seed, t, p);
        let first = t.saturating_sub(c.band() - 1);
        for j in first..t {
            // history is ordered oldest-first and covers steps
            // [t − len, t); index it relative to its start.
            let offset = j - (t - self.history.len());
            let coeff = c.coeff(t, j);
            if coeff != 0.0 {
                let prev = &self.history[offset];
                for (zi, hi) in z.iter_mut().zip(prev) {
                    *zi -= coeff * hi;
                }
            }
        }
        for zi in z.iter_mut() {
            *zi /= diag;
        }

        let cap = c.band() - 1;
        if cap > 0 {
            if self.history.len() == cap {
                self.history.pop_front();
            }
            self.history.push_back(z.clone());
        }
        self.step += 1;
        Ok(z.iter().map(|&v| v * self.scale).collect())
    }
}

/// Monte-Carlo estimate of `E[z̃ₛᵀz̃ₜ]/p` over independent streams; converges
/// to `(CᵀC)⁻¹[s,t]`. Trials are chunked so the reduction order (and hence
/// the result) is independent of the thread count.
pub fn empirical_cross_covariance(
    c: &MixingMatrix,
    p: usize,
    trials: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if trials < 1 {
        return Err(Error::invalid("at least one trial is required"));
    }
    if p < 1 {
        return Err(Error::invalid("p must be positive"));
    }
    let t_total = c.dim();

    use rayon::prelude::*;
    const CHUNK: usize = 128;
    let n_chunks = trials.div_ceil(CHUNK);
    let chunk_sums: Vec<Array2<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = trials.min(lo + CHUNK);
            let mut acc = Array2::zeros((t_total, t_total));
            let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(t_total);
            for trial in lo..hi {
                let mut stream = NoiseStream::new(derive_stream_seed(seed, trial as u64), 1.0);
                vectors.clear();
                for _ in 0..t_total {
                    vectors.push(stream.next(c, p).expect("stream within bounds"));
                }
                for s in 0..t_total {
                    for t in s..t_total {
                        let d: f64 = vectors[s]
                            .iter()
                            .zip(&vectors[t])
                            .map(|(a, b)| a * b)
                            .sum();
                        acc[[s, t]] += d;
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = Array2::zeros((t_total, t_total));
    for s in 0..t_total {
        for t in s..t_total {
            let parts: Vec<f64> = chunk_sums.iter().map(|m| m[[s, t]]).collect();
            let v = pairwise_sum(&parts) / (p as f64 * trials as f64);
            total[[s, t]] = v;
            total[[t, s]] = v;
        }
    }
    Ok(total)
}

fn expand_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&derive_stream_seed(seed, 0xC0FFEE ^ i as u64).to_le_bytes());
    }
    key
}
