//! Matrix functions on symmetric positive-definite matrices.
//!
//! Everything here is backed by a single symmetric eigendecomposition:
//! for `M = V diag(lambda) V^T`, a scalar function `f` lifts to
//! `f(M) = V diag(f(lambda)) V^T`. An [`SpdMatrix`] keeps its decomposition
//! around so powers, inverses, and logarithms of the same matrix reuse one
//! factorization. Eigenvalues below `EIG_FLOOR_RATIO * lambda_max` are
//! clamped at construction; each clamp is counted in a process-wide
//! numerical-health counter (see [`clamp_events`]).

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor: eigenvalues below `EIG_FLOOR_RATIO * lambda_max`
/// are clamped to that threshold so inverse powers stay finite on numerically
/// rank-deficient inputs.
pub const EIG_FLOOR_RATIO: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of eigenvalue clamp events since process start (or the last reset).
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// Resets the clamp-event counter.
pub fn reset_clamp_events() {
    CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

/// Dense real symmetric matrix. Symmetry is enforced on construction by
/// averaging with the transpose, so `entries[i][j] == entries[j][i]` exactly.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Symmetrizes a square matrix as `(M + M^T) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SymMatrix::new",
                expected: "square matrix".into(),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix { m: sym })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }
}

/// Full spectral decomposition of a symmetric matrix, eigenvalues sorted in
/// descending order.
#[derive(Debug, Clone)]
pub struct EigenPair {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl EigenPair {
    /// Eigenvalues in descending order.
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Orthogonal matrix whose column `i` is the eigenvector for `values[i]`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// `V diag(f(lambda)) V^T`, symmetrized to suppress round-off drift.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            scaled.column_mut(j).scale_mut(fj);
        }
        let m = scaled * self.vectors.transpose();
        (&m + m.transpose()) * 0.5
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|x| x)
    }
}

/// Spectral decomposition of a symmetric matrix; `role` names the matrix in
/// diagnostics if the input is non-finite or the eigensolver fails.
pub fn sym_eig(m: &SymMatrix, role: &str) -> Result<EigenPair> {
    if !m.m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { role: role.into() });
    }
    let eig = m
        .m
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure { role: role.into() })?;

    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenPair { values, vectors })
}

fn floor_values(values: &mut DVector<f64>, floor: f64) -> u64 {
    let mut clamps = 0;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
            clamps += 1;
        }
    }
    clamps
}

/// Symmetric positive-definite matrix with its eigendecomposition attached.
///
/// Construction clamps eigenvalues below `EIG_FLOOR_RATIO * lambda_max` and
/// rebuilds the entries from the clamped spectrum, so every `SpdMatrix`
/// satisfies `lambda_min >= floor() > 0`.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    eig: EigenPair,
    floor: f64,
}

impl SpdMatrix {
    pub fn new(sym: SymMatrix, role: &str) -> Result<Self> {
        let eig = sym_eig(&sym, role)?;
        Self::from_eigen(eig.vectors, eig.values, role)
    }

    /// Convenience constructor: symmetrize, then floor to SPD.
    pub fn from_matrix(m: DMatrix<f64>, role: &str) -> Result<Self> {
        Self::new(SymMatrix::new(m)?, role)
    }

    /// Builds an SPD matrix from an orthogonal eigenbasis and eigenvalues
    /// (any order). Eigenvalues are floored, sorted descending, and the dense
    /// entries re-synthesized.
    fn from_eigen(vectors: DMatrix<f64>, mut values: DVector<f64>, role: &str) -> Result<Self> {
        let max_eig = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max_eig > 0.0) {
            return Err(Error::NotPositiveDefinite {
                role: role.into(),
                eig: max_eig,
            });
        }
        let floor = EIG_FLOOR_RATIO * max_eig;
        let clamps = floor_values(&mut values, floor);
        if clamps > 0 {
            CLAMP_EVENTS.fetch_add(clamps, Ordering::Relaxed);
        }

        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let sorted_values = DVector::from_fn(n, |i, _| values[order[i]]);
        let sorted_vectors = DMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);

        let eig = EigenPair {
            values: sorted_values,
            vectors: sorted_vectors,
        };
        let m = eig.reconstruct();
        Ok(SpdMatrix { m, eig, floor })
    }

    /// Adopts a matrix verbatim after validating symmetry and positive
    /// definiteness, without the floor-and-resynthesize step. Deserializers
    /// use this so saved entries survive a round trip bitwise; everything
    /// else should go through [`SpdMatrix::new`].
    pub fn adopt_validated(m: DMatrix<f64>, role: &str) -> Result<Self> {
        let sym = SymMatrix::new(m.clone())?;
        if (&m - sym.matrix()).norm() > 1e-12 * m.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "{role} is not symmetric"
            )));
        }
        let eig = sym_eig(&sym, role)?;
        let min_eig = eig.values[eig.values.len() - 1];
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite {
                role: role.into(),
                eig: min_eig,
            });
        }
        let floor = min_eig.min(EIG_FLOOR_RATIO * eig.values[0]);
        Ok(SpdMatrix { m, eig, floor })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn eigen(&self) -> &EigenPair {
        &self.eig
    }

    /// The clamping threshold applied at construction.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// Matrix power `M^p = V diag(lambda^p) V^T`, reusing the stored
    /// decomposition. `p = -1` is the inverse, `p = 0.5` the square root.
    pub fn power(&self, p: f64) -> SpdMatrix {
        let values = self.eig.values.map(|l| l.powf(p));
        // Positive spectrum in, positive spectrum out.
        SpdMatrix::from_eigen(self.eig.vectors.clone(), values, "matrix power")
            .expect("power of an SPD matrix is SPD")
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.power(-1.0)
    }

    /// Matrix logarithm `V diag(ln lambda) V^T`; zero for the identity.
    pub fn logm(&self) -> SymMatrix {
        SymMatrix {
            m: self.eig.map(f64::ln),
        }
    }
}

/// Matrix exponential of a symmetric matrix; the result is SPD.
pub fn sym_expm(m: &SymMatrix, role: &str) -> Result<SpdMatrix> {
    let eig = sym_eig(m, role)?;
    let values = eig.values.map(f64::exp);
    SpdMatrix::from_eigen(eig.vectors, values, role)
}

fn check_same_dim(x: &SpdMatrix, y: &SpdMatrix, context: &'static str) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", x.dim(), x.dim()),
            got: format!("{}x{}", y.dim(), y.dim()),
        });
    }
    Ok(())
}

/// Weighted geometric mean `X #_t Y = X^{1/2} (X^{-1/2} Y X^{-1/2})^t X^{1/2}`:
/// the point at parameter `t` on the affine-invariant geodesic from `X` to
/// `Y`, so `t = 0` returns `X` and `t = 1` returns `Y`.
pub fn weighted_geometric_mean(x: &SpdMatrix, y: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    check_same_dim(x, y, "weighted_geometric_mean")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "geometric-mean weight t must lie in [0, 1], got {t}"
        )));
    }
    let x_half = x.power(0.5);
    let x_mhalf = x.power(-0.5);
    let mid = x_mhalf.matrix() * y.matrix() * x_mhalf.matrix();
    let mid_t = SpdMatrix::new(SymMatrix::new(mid)?, "geometric-mean core")?.power(t);
    let out = x_half.matrix() * mid_t.matrix() * x_half.matrix();
    SpdMatrix::new(SymMatrix::new(out)?, "geometric mean")
}

/// Squared affine-invariant Riemannian distance on the SPD cone:
/// `||logm(X^{-1/2} Y X^{-1/2})||_F^2`. Symmetric in its arguments and
/// invariant under congruence `X, Y -> M X M^T, M Y M^T`.
pub fn riemannian_distance_sq(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x, y, "riemannian_distance_sq")?;
    let x_mhalf = x.power(-0.5);
    let mid = x_mhalf.matrix() * y.matrix() * x_mhalf.matrix();
    let eig = sym_eig(&SymMatrix::new(mid)?, "distance core")?;

    let max_eig = eig.values[0];
    if !(max_eig > 0.0) {
        return Err(Error::NotPositiveDefinite {
            role: "distance core".into(),
            eig: max_eig,
        });
    }
    let floor = EIG_FLOOR_RATIO * max_eig;
    let mut values = eig.values;
    let clamps = floor_values(&mut values, floor);
    if clamps > 0 {
        CLAMP_EVENTS.fetch_add(clamps, Ordering::Relaxed);
    }
    Ok(values.iter().map(|l| l.ln().powi(2)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut impl Rng) -> SymMatrix {
        SymMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_spd(n: usize, rng: &mut impl Rng) -> SpdMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let shift = rng.gen_range(0.1..2.0);
        SpdMatrix::from_matrix(&m * m.transpose() + DMatrix::identity(n, n) * shift, "test").unwrap()
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn eig_of_diagonal_matrix() {
        let m = SymMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]))).unwrap();
        let eig = sym_eig(&m, "diag").unwrap();
        assert_relative_eq!(eig.values()[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(eig.values()[1], 1.0, max_relative = 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((eig.vectors()[(i, j)].abs() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eig_of_classic_2x2() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let eig = sym_eig(&m, "classic").unwrap();
        assert_relative_eq!(eig.values()[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(eig.values()[1], 1.0, epsilon = 1e-12);
        let s = 1.0 / 2.0_f64.sqrt();
        // First eigenvector is (1,1)/sqrt(2) up to sign, second (1,-1)/sqrt(2).
        let v = eig.vectors();
        assert!((v[(0, 0)].abs() - s).abs() < 1e-12 && (v[(1, 0)].abs() - s).abs() < 1e-12);
        assert!((v[(0, 0)] - v[(1, 0)]).abs() < 1e-12);
        assert!((v[(0, 1)] + v[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstruction_of_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_sym(8, &mut rng);
        let eig = sym_eig(&m, "random").unwrap();
        assert!(rel_frob(&eig.reconstruct(), m.matrix()) < 1e-10);
        let vtv = eig.vectors().transpose() * eig.vectors();
        assert!((vtv - DMatrix::identity(8, 8)).norm() < 1e-12);
        for i in 0..7 {
            assert!(eig.values()[i] >= eig.values()[i + 1]);
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let mut m = DMatrix::identity(3, 3);
        m[(1, 1)] = f64::NAN;
        let sym = SymMatrix::new(m).unwrap();
        let err = sym_eig(&sym, "projected scatter").unwrap_err();
        assert!(err.to_string().contains("projected scatter"));
    }

    #[test]
    fn power_of_diagonal() {
        let m = SpdMatrix::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])),
            "diag",
        )
        .unwrap();
        let root = m.power(0.5);
        assert_relative_eq!(root.matrix()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(root.matrix()[(1, 1)], 3.0, epsilon = 1e-12);
        assert!(root.matrix()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn power_of_identity() {
        let id = SpdMatrix::from_matrix(DMatrix::identity(4, 4), "id").unwrap();
        for p in [-1.0, -0.5, 0.0, 0.3, 2.0] {
            assert!(rel_frob(id.power(p).matrix(), &DMatrix::identity(4, 4)) < 1e-14);
        }
    }

    #[test]
    fn inverse_square_root_of_classic_2x2() {
        let m =
            SpdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), "classic")
                .unwrap();
        let r = m.power(-0.5);
        // Via the (3, 1) spectrum: diag entries (1/sqrt(3)+1)/2, off-diag (1/sqrt(3)-1)/2.
        let a = (1.0 / 3.0_f64.sqrt() + 1.0) / 2.0;
        let b = (1.0 / 3.0_f64.sqrt() - 1.0) / 2.0;
        assert_relative_eq!(r.matrix()[(0, 0)], a, epsilon = 1e-12);
        assert_relative_eq!(r.matrix()[(1, 1)], a, epsilon = 1e-12);
        assert_relative_eq!(r.matrix()[(0, 1)], b, epsilon = 1e-12);
        // Squaring the square root reproduces the inverse.
        let sq = r.matrix() * r.matrix();
        assert!(rel_frob(&sq, m.power(-1.0).matrix()) < 1e-9);
    }

    #[test]
    fn flooring_clamps_and_counts() {
        let before = clamp_events();
        // Rank-1 outer product: one eigenvalue 2, one ~0.
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let m = SpdMatrix::from_matrix(&v * v.transpose(), "rank1").unwrap();
        assert!(clamp_events() > before);
        assert!(m.eigen().values()[1] >= m.floor());
        assert!(m.floor() > 0.0);
        // Inverse powers stay finite thanks to the floor.
        assert!(m.power(-1.0).matrix().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let err = SpdMatrix::from_matrix(DMatrix::zeros(3, 3), "zero scatter").unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        assert!(err.to_string().contains("zero scatter"));
    }

    #[test]
    fn logm_of_identity_is_zero() {
        let id = SpdMatrix::from_matrix(DMatrix::identity(3, 3), "id").unwrap();
        assert!(id.logm().matrix().norm() < 1e-14);
    }

    #[test]
    fn logm_of_exponential_diagonal() {
        let m = SpdMatrix::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                std::f64::consts::E,
                std::f64::consts::E * std::f64::consts::E,
            ])),
            "diag",
        )
        .unwrap();
        let l = m.logm();
        assert_relative_eq!(l.matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(l.matrix()[(1, 1)], 2.0, epsilon = 1e-12);
        assert!(l.matrix()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn logm_of_classic_2x2() {
        let m =
            SpdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), "classic")
                .unwrap();
        let l = m.logm();
        let c = 3.0_f64.ln() / 2.0; // 0.5493061443340549
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_relative_eq!(l.matrix()[(i, j)], c, epsilon = 1e-12);
        }
    }

    #[test]
    fn geometric_mean_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_spd(4, &mut rng);
        let y = random_spd(4, &mut rng);
        assert!(rel_frob(weighted_geometric_mean(&x, &y, 0.0).unwrap().matrix(), x.matrix()) < 1e-10);
        assert!(rel_frob(weighted_geometric_mean(&x, &y, 1.0).unwrap().matrix(), y.matrix()) < 1e-10);
    }

    #[test]
    fn geometric_mean_of_point_with_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_spd(5, &mut rng);
        for t in [0.0, 0.25, 0.5, 0.9] {
            assert!(rel_frob(weighted_geometric_mean(&x, &x, t).unwrap().matrix(), x.matrix()) < 1e-10);
        }
    }

    #[test]
    fn geometric_mean_commuting_diagonal() {
        let x = SpdMatrix::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25])),
            "x",
        )
        .unwrap();
        let y =
            SpdMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0])), "y")
                .unwrap();
        let g = weighted_geometric_mean(&x, &y, 0.5).unwrap();
        assert_relative_eq!(g.matrix()[(0, 0)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(g.matrix()[(1, 1)], 0.5, epsilon = 1e-12);
        assert!(g.matrix()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn geometric_mean_midpoint_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_spd(5, &mut rng);
            let y = random_spd(5, &mut rng);
            let gxy = weighted_geometric_mean(&x, &y, 0.5).unwrap();
            let gyx = weighted_geometric_mean(&y, &x, 0.5).unwrap();
            assert!(rel_frob(gxy.matrix(), gyx.matrix()) < 1e-9);
        }
    }

    #[test]
    fn geometric_mean_rejects_dim_mismatch() {
        let x = SpdMatrix::from_matrix(DMatrix::identity(3, 3), "x").unwrap();
        let y = SpdMatrix::from_matrix(DMatrix::identity(2, 2), "y").unwrap();
        assert!(weighted_geometric_mean(&x, &y, 0.5).is_err());
    }

    #[test]
    fn distance_to_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_spd(5, &mut rng);
        assert!(riemannian_distance_sq(&x, &x).unwrap().abs() < 1e-18);
    }

    #[test]
    fn distance_to_exponential_diagonal() {
        let id = SpdMatrix::from_matrix(DMatrix::identity(2, 2), "id").unwrap();
        let y = SpdMatrix::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                std::f64::consts::E,
                1.0 / std::f64::consts::E,
            ])),
            "y",
        )
        .unwrap();
        assert_relative_eq!(riemannian_distance_sq(&id, &y).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_spd(4, &mut rng);
            let y = random_spd(4, &mut rng);
            let dxy = riemannian_distance_sq(&x, &y).unwrap();
            let dyx = riemannian_distance_sq(&y, &x).unwrap();
            assert!((dxy - dyx).abs() <= 1e-9 * dxy.max(1.0));
        }
    }

    #[test]
    fn distance_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let x = random_spd(5, &mut rng);
            let y = random_spd(5, &mut rng);
            // Random invertible congruence (shifted Gaussian keeps it well away
            // from singular).
            let m = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0))
                + DMatrix::identity(5, 5) * 2.0;
            let xc = SpdMatrix::from_matrix(&m * x.matrix() * m.transpose(), "xc").unwrap();
            let yc = SpdMatrix::from_matrix(&m * y.matrix() * m.transpose(), "yc").unwrap();
            let d0 = riemannian_distance_sq(&x, &y).unwrap();
            let d1 = riemannian_distance_sq(&xc, &yc).unwrap();
            assert!(
                (d0 - d1).abs() <= 1e-8 * d0.max(1.0),
                "congruence invariance violated: {d0} vs {d1}"
            );
        }
    }

    #[test]
    fn geodesic_parameterization_from_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let id = SpdMatrix::from_matrix(DMatrix::identity(4, 4), "id").unwrap();
        for _ in 0..10 {
            let y = random_spd(4, &mut rng);
            let base = riemannian_distance_sq(&y, &id).unwrap();
            for t in [0.2, 0.5, 0.8] {
                let g = weighted_geometric_mean(&id, &y, t).unwrap();
                let d = riemannian_distance_sq(&g, &id).unwrap();
                assert!((d - t * t * base).abs() <= 1e-8 * base.max(1.0));
            }
        }
    }

    #[test]
    fn expm_inverts_logm() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_spd(4, &mut rng);
        let back = sym_expm(&x.logm(), "roundtrip").unwrap();
        assert!(rel_frob(back.matrix(), x.matrix()) < 1e-9);
        let zero = SymMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(rel_frob(sym_expm(&zero, "zero").unwrap().matrix(), &DMatrix::identity(3, 3)) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn powers_compose_additively(seed in 0u64..1_000_000, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_spd(4, &mut rng);
            let lhs = m.power(a).matrix() * m.power(b).matrix();
            let rhs = m.power(a + b);
            prop_assert!(rel_frob(&lhs, rhs.matrix()) < 1e-9);
        }

        #[test]
        fn logm_of_power_scales(seed in 0u64..1_000_000, p in 0.1f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_spd(4, &mut rng);
            let lhs = m.power(p).logm();
            let rhs = m.logm().matrix() * p;
            prop_assert!(rel_frob(lhs.matrix(), &rhs) < 1e-9);
        }
    }
}
