//! Grassmann manifold Grass(r, d): r-dimensional subspaces of R^d.
//!
//! Points are represented by d×r matrices with orthonormal columns; two
//! representatives with the same column space describe the same point, and
//! every algorithm built on this module may rely only on column-space
//! information. Tangent vectors live in the horizontal space at their
//! anchor, `{Z : U^T Z = 0}`. Retraction is QR-based (`qf`), transport is
//! projection onto the destination's horizontal space; both cost O(d r^2).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Orthonormality tolerance accepted when adopting an externally supplied
/// basis (e.g. a deserialized model). Internally produced points are tighter.
pub const ORTHO_LOAD_TOL: f64 = 1e-10;

/// Thin QR orthonormalization with the sign convention that R has a positive
/// diagonal, which makes the factor unique and the retraction deterministic.
fn qf(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.norm();
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        let rjj = r[(j, j)];
        if rjj.abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficientRetraction);
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// A point on Grass(r, d), stored as a d×r matrix with orthonormal columns.
#[derive(Debug, Clone)]
pub struct StiefelPoint {
    u: DMatrix<f64>,
}

impl StiefelPoint {
    /// Adopts an existing basis, checking `||U^T U - I||_F <= 1e-10`.
    /// The matrix is taken as-is (no re-orthonormalization), so round-trips
    /// through serialization stay bitwise.
    pub fn from_matrix(u: DMatrix<f64>) -> Result<Self> {
        let (d, r) = (u.nrows(), u.ncols());
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension r = {r} must satisfy 1 <= r <= d = {d}"
            )));
        }
        let defect = (u.transpose() * &u - DMatrix::identity(r, r)).norm();
        if !defect.is_finite() || defect > ORTHO_LOAD_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal: ||U^T U - I||_F = {defect:.3e}"
            )));
        }
        Ok(StiefelPoint { u })
    }

    /// Seeded random point: standard Gaussian fill, then `qf`. Deterministic
    /// for a fixed seed.
    pub fn random(d: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension r = {r} must satisfy 1 <= r <= d = {d}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let g = DMatrix::from_fn(d, r, |_, _| normal.sample(&mut rng));
        Ok(StiefelPoint { u: qf(&g)? })
    }

    /// Orthonormalizes an arbitrary full-column-rank matrix onto the manifold.
    pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Self> {
        Ok(StiefelPoint { u: qf(m)? })
    }

    pub fn ambient_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `||U^T U - I||_F`, for invariant monitoring.
    pub fn ortho_defect(&self) -> f64 {
        let r = self.subspace_dim();
        (self.u.transpose() * &self.u - DMatrix::identity(r, r)).norm()
    }

    fn check_shape(&self, m: &DMatrix<f64>, context: &'static str) -> Result<()> {
        if m.nrows() != self.ambient_dim() || m.ncols() != self.subspace_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("{}x{}", self.ambient_dim(), self.subspace_dim()),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        Ok(())
    }

    /// Horizontal projection `(I - U U^T) Z`, the Riemannian gradient map.
    /// Idempotent; vertical directions `U M` are annihilated.
    pub fn project_tangent(&self, z: &DMatrix<f64>) -> Result<TangentVector> {
        self.check_shape(z, "project_tangent")?;
        let utz = self.u.transpose() * z;
        Ok(TangentVector {
            xi: z - &self.u * utz,
        })
    }

    /// QR retraction `qf(U + step * xi)`. `step = 0` returns the point
    /// unchanged.
    pub fn retract(&self, xi: &TangentVector, step: f64) -> Result<StiefelPoint> {
        self.check_shape(&xi.xi, "retract")?;
        if step == 0.0 {
            return Ok(self.clone());
        }
        let candidate = &self.u + &xi.xi * step;
        Ok(StiefelPoint { u: qf(&candidate)? })
    }

    /// Transports a tangent vector into this point's horizontal space by
    /// projection. A vector already horizontal here passes through.
    pub fn transport(&self, xi: &TangentVector) -> Result<TangentVector> {
        self.project_tangent(&xi.xi)
    }
}

/// Element of the horizontal space at some [`StiefelPoint`]: a d×r matrix
/// with `U^T xi = 0` at its anchor. Linear combinations keep the anchor.
#[derive(Debug, Clone)]
pub struct TangentVector {
    xi: DMatrix<f64>,
}

impl TangentVector {
    /// Wraps a raw matrix without checking horizontality. The caller is
    /// responsible for the `U^T xi = 0` invariant.
    pub fn from_matrix_unchecked(xi: DMatrix<f64>) -> Self {
        TangentVector { xi }
    }

    pub fn zeros(d: usize, r: usize) -> Self {
        TangentVector {
            xi: DMatrix::zeros(d, r),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// Canonical metric `trace(a^T b)`; equals the Frobenius inner product.
    pub fn inner(&self, other: &TangentVector) -> Result<f64> {
        if self.xi.shape() != other.xi.shape() {
            return Err(Error::DimensionMismatch {
                context: "tangent_inner",
                expected: format!("{}x{}", self.xi.nrows(), self.xi.ncols()),
                got: format!("{}x{}", other.xi.nrows(), other.xi.ncols()),
            });
        }
        Ok(self.xi.dot(&other.xi))
    }

    pub fn norm(&self) -> f64 {
        self.xi.norm()
    }

    pub fn scale(&self, a: f64) -> TangentVector {
        TangentVector { xi: &self.xi * a }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &TangentVector, b: f64) -> Result<TangentVector> {
        if self.xi.shape() != other.xi.shape() {
            return Err(Error::DimensionMismatch {
                context: "tangent combine",
                expected: format!("{}x{}", self.xi.nrows(), self.xi.ncols()),
                got: format!("{}x{}", other.xi.nrows(), other.xi.ncols()),
            });
        }
        Ok(TangentVector {
            xi: &self.xi * a + &other.xi * b,
        })
    }
}
