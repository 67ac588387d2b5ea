//! Curvature-aware cross-iteration noise correlations for differentially
//! private gradient descent.
//!
//! Correlated-noise DP training replaces the independent Gaussian noise of
//! DP-SGD with `z̃ = Z·C⁻ᵀ` for a lower-triangular mixing matrix `C`, so
//! later iterations can cancel part of the noise injected earlier. This
//! crate builds the whole desk-scale pipeline around a curvature-aware
//! choice of `C`:
//!
//! - [`spectrum`]: Hessian eigenvalue estimation (Lanczos, dense solver),
//!   negative truncation, and power-law tail extrapolation;
//! - [`workload`]: the curvature workload `VᵀMV` built from eigenvalues and
//!   a learning rate, plus identity and prefix-sum baselines;
//! - [`mixopt`]: minimize `Tr(X⁻¹G)` over banded positive-definite `X` with
//!   unit diagonal, and factor `X = CᵀC`;
//! - [`noisegen`]: stream the correlated noise online with `b−1` vectors of
//!   memory;
//! - [`quadsim`]: closed-form expected excess loss on quadratic problems and
//!   Monte-Carlo validation of it;
//! - [`trainer`]: differentially private linear/logistic training with
//!   per-sample clipping and the banded batch schedule;
//! - [`io`]: the file formats used by the `curvemix` command-line tool.

pub mod error;
pub mod io;
pub(crate) mod linalg;
pub mod mixopt;
pub mod noisegen;
pub mod quadsim;
pub mod spectrum;
pub mod trainer;
pub mod workload;

pub use error::{Error, Result};
