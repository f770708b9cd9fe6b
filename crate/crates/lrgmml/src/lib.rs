//! Low-rank geometric-mean Mahalanobis metric learning.
//!
//! Learns a rank-r metric A = U B Uᵀ, where U is a d×r orthonormal basis and
//! B is an r×r symmetric positive-definite matrix, from weakly supervised
//! similar/dissimilar point pairs. The basis is optimized by Riemannian
//! conjugate gradient on the Grassmann manifold while B is recovered in
//! closed form as a weighted geometric mean of the projected pair scatters,
//! so the per-iteration cost stays linear in both the number of pairs and
//! the ambient dimension.
//!
//! Module map:
//! - [`spd`]: eigendecomposition-backed matrix functions on SPD matrices
//!   (powers, logarithm, weighted geometric mean, affine-invariant distance).
//! - [`grassmann`]: orthonormal-basis representation of Grass(r, d) with QR
//!   retraction and projection-based transport.
//! - [`solver`]: Riemannian conjugate gradient with Armijo backtracking.
//! - [`objective`]: the metric-learning objective, its Euclidean gradient,
//!   the closed-form inner solve, and the full-rank baseline.
//! - [`gradcheck`]: finite-difference validation harness for the gradient.
//! - [`pipeline`]: pair sampling, training, embedding, k-NN evaluation, and
//!   the rank/t sweep experiment runner.
//! - [`io`]: dataset loaders, model serialization, and results CSV files.

pub mod error;
pub mod gradcheck;
pub mod grassmann;
pub mod io;
pub mod objective;
pub mod pipeline;
pub mod solver;
pub mod spd;

pub use error::{Error, Result};
