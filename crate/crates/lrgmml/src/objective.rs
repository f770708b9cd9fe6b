//! The low-rank metric-learning objective.
//!
//! Supervision arrives as similar/dissimilar point pairs whose difference
//! vectors define two scatter matrices, `S` for similar and `D` for
//! dissimilar. [`PairScatter`] keeps the stacked difference rows instead of
//! the d×d scatter, so projecting onto a d×r basis costs O(n d r + n r^2)
//! and nothing quadratic in `d` is ever materialized.
//!
//! For a basis `U`, write `St = U^T S U` and `Dt = U^T D U`. The inner
//! problem over the r×r SPD factor has the closed-form solution
//! `B = St^{-1/2} (St^{1/2} Dt St^{1/2})^t St^{-1/2}`, the weighted geometric
//! mean of `St^{-1}` and `Dt`. The outer objective driven through the solver
//! is
//!
//! ```text
//! f(U) = (1 - t) * dist^2(B, St^{-1}) + t * dist^2(B, Dt)
//! ```
//!
//! with `dist` the affine-invariant SPD distance; it depends on `U` only
//! through its column space. Its Euclidean derivative, up to a constant
//! factor validated by the finite-difference harness in [`crate::gradcheck`],
//! is
//!
//! ```text
//! (1-t) S U St^{-1/2} logm(St^{1/2} B St^{1/2}) St^{-1/2}
//!   - t D U Dt^{-1/2} logm(Dt^{-1/2} B Dt^{-1/2}) Dt^{-1/2}
//! ```
//!
//! where `S U` and `D U` are applied implicitly through the difference rows.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grassmann::StiefelPoint;
use crate::solver::Problem;
use crate::spd::{riemannian_distance_sq, SpdMatrix};

/// Largest ambient dimension for which dense d×d scatters may be formed
/// (full-rank baseline and test oracles only).
pub const DENSE_GUARD: usize = 4096;

/// Fraction of the ambient scatter trace a projected scatter must retain;
/// below this the projection is treated as degenerate rather than silently
/// floored.
pub const DEGENERATE_TRACE_RATIO: f64 = 1e-8;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 8;
    let mut acc = [0.0f64; 8];
    for (ca, cb) in a[..split].chunks_exact(8).zip(b[..split].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s: f64 = a[split..].iter().zip(&b[split..]).map(|(x, y)| x * y).sum();
    for v in acc {
        s += v;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Implicit scatter matrix: stacked pair-difference rows, row k holding
/// `points[i_k] - points[j_k]`. The represented scatter is
/// `sum_k row_k row_k^T`, which is never formed except through
/// [`PairScatter::dense`].
#[derive(Debug, Clone)]
pub struct PairScatter {
    n_pairs: usize,
    dim: usize,
    /// Row-major n_pairs × dim.
    rows: Vec<f64>,
    /// Trace of the implicit scatter: sum of squared row norms.
    trace: f64,
}

impl PairScatter {
    /// Builds the scatter from data points (one row per sample) and index
    /// pairs.
    pub fn from_pairs(points: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument(
                "pair list is empty; the scatter (and the objective) is undefined".into(),
            ));
        }
        let n = points.nrows();
        let d = points.ncols();
        let mut rows = vec![0.0; pairs.len() * d];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "pair ({i}, {j}) out of range for {n} points"
                )));
            }
            let out = &mut rows[k * d..(k + 1) * d];
            for c in 0..d {
                out[c] = points[(i, c)] - points[(j, c)];
            }
        }
        Ok(Self::from_raw(rows, pairs.len(), d))
    }

    /// Adopts precomputed difference rows (row-major n×d).
    pub fn from_rows(diffs: &DMatrix<f64>) -> Result<Self> {
        if diffs.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "difference matrix has no rows".into(),
            ));
        }
        let (n, d) = diffs.shape();
        let mut rows = vec![0.0; n * d];
        for k in 0..n {
            for c in 0..d {
                rows[k * d + c] = diffs[(k, c)];
            }
        }
        Ok(Self::from_raw(rows, n, d))
    }

    fn from_raw(rows: Vec<f64>, n_pairs: usize, dim: usize) -> Self {
        let trace = rows.iter().map(|v| v * v).sum();
        PairScatter {
            n_pairs,
            dim,
            rows,
            trace,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trace of the implicit d×d scatter.
    pub fn ambient_trace(&self) -> f64 {
        self.trace
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    /// `diffs * U`: the difference rows expressed in the subspace basis
    /// (n_pairs × r). Costs O(n d r).
    pub fn project(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(u.nrows(), self.dim, "basis row count must match scatter dim");
        let r = u.ncols();
        let n = self.n_pairs;
        let ucols = u.as_slice();
        let mut out = vec![0.0; n * r];
        for k in 0..n {
            let row = self.row(k);
            for j in 0..r {
                out[j * n + k] = dot(row, &ucols[j * self.dim..(j + 1) * self.dim]);
            }
        }
        DMatrix::from_vec(n, r, out)
    }

    /// `diffs^T * Y` for an n_pairs × r matrix `Y` (result d × r). Together
    /// with [`PairScatter::project`] this applies the implicit scatter:
    /// `S U = diffs^T (diffs U)`. Costs O(n d r).
    pub fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.n_pairs, "row count must match pair count");
        let r = y.ncols();
        let d = self.dim;
        let ycols = y.as_slice();
        let mut out = vec![0.0; d * r];
        for k in 0..self.n_pairs {
            let row = self.row(k);
            for j in 0..r {
                let coeff = ycols[j * self.n_pairs + k];
                if coeff != 0.0 {
                    axpy(coeff, row, &mut out[j * d..(j + 1) * d]);
                }
            }
        }
        DMatrix::from_vec(d, r, out)
    }

    /// Materializes the dense d×d scatter. Only for the full-rank baseline
    /// and test oracles; refuses dimensions beyond [`DENSE_GUARD`].
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        if self.dim > DENSE_GUARD {
            return Err(Error::DenseGuard {
                d: self.dim,
                guard: DENSE_GUARD,
            });
        }
        let d = self.dim;
        let mut out = DMatrix::zeros(d, d);
        for k in 0..self.n_pairs {
            let row = self.row(k);
            for i in 0..d {
                let ri = row[i];
                if ri != 0.0 {
                    for j in 0..d {
                        out[(i, j)] += ri * row[j];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Learned metric `A = U B U^T` together with the geodesic weight it was
/// trained with. `A` has rank exactly r; the matching embedding is
/// `x -> B^{1/2} U^T x`.
#[derive(Debug, Clone)]
pub struct MetricModel {
    pub u: StiefelPoint,
    pub b: SpdMatrix,
    pub t: f64,
}

impl MetricModel {
    pub fn ambient_dim(&self) -> usize {
        self.u.ambient_dim()
    }

    pub fn rank(&self) -> usize {
        self.u.subspace_dim()
    }

    /// Dense d×d metric, for small-dimension diagnostics and tests.
    pub fn metric_dense(&self) -> DMatrix<f64> {
        self.u.matrix() * self.b.matrix() * self.u.matrix().transpose()
    }
}

/// Projects the implicit scatter into the basis: `U^T S U` computed as
/// `(diffs U)^T (diffs U)`, floored to SPD. Rejects projections that retain
/// almost none of the ambient scatter mass.
pub fn project_scatter(sc: &PairScatter, u: &StiefelPoint, role: &str) -> Result<SpdMatrix> {
    let y = sc.project(u.matrix());
    projected_from(&y, sc, role)
}

fn projected_from(y: &DMatrix<f64>, sc: &PairScatter, role: &str) -> Result<SpdMatrix> {
    let raw = y.transpose() * y;
    let fraction = raw.trace() / sc.ambient_trace().max(f64::MIN_POSITIVE);
    if !(fraction > DEGENERATE_TRACE_RATIO) {
        return Err(Error::DegenerateProjection {
            role: role.into(),
            fraction,
        });
    }
    SpdMatrix::from_matrix(raw, role)
}

/// `X #_t Y` evaluated through the direct expression
/// `S^{-1/2} (S^{1/2} D S^{1/2})^t S^{-1/2}` with `X = S^{-1}`; the closed
/// form of the inner minimization.
fn geometric_mean_direct(s: &SpdMatrix, d: &SpdMatrix, t: f64, role: &str) -> Result<SpdMatrix> {
    let s_half = s.power(0.5);
    let s_mhalf = s.power(-0.5);
    let core = SpdMatrix::from_matrix(s_half.matrix() * d.matrix() * s_half.matrix(), role)?;
    let core_t = core.power(t);
    SpdMatrix::from_matrix(s_mhalf.matrix() * core_t.matrix() * s_mhalf.matrix(), role)
}

/// Closed-form solution of the inner problem: the weighted geometric mean of
/// `St^{-1}` and `Dt`. At `t = 0.5` it minimizes
/// `trace(B St) + trace(B^{-1} Dt)` over SPD `B`.
pub fn inner_solution(s_tilde: &SpdMatrix, d_tilde: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if s_tilde.dim() != d_tilde.dim() {
        return Err(Error::DimensionMismatch {
            context: "inner_solution",
            expected: format!("{0}x{0}", s_tilde.dim()),
            got: format!("{0}x{0}", d_tilde.dim()),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "weight t must lie in [0, 1], got {t}"
        )));
    }
    geometric_mean_direct(s_tilde, d_tilde, t, "inner solution")
}

/// The weighted Riemannian objective at a given SPD factor:
/// `(1 - t) dist^2(B, St^{-1}) + t dist^2(B, Dt)`.
pub fn weighted_objective(
    b: &SpdMatrix,
    s_tilde: &SpdMatrix,
    d_tilde: &SpdMatrix,
    t: f64,
) -> Result<f64> {
    let s_inv = s_tilde.power(-1.0);
    Ok((1.0 - t) * riemannian_distance_sq(b, &s_inv)? + t * riemannian_distance_sq(b, d_tilde)?)
}

/// The trace objective `trace(B St) + trace(B^{-1} Dt)`, all in the
/// r-dimensional space.
pub fn inner_trace_objective(b: &SpdMatrix, s_tilde: &SpdMatrix, d_tilde: &SpdMatrix) -> f64 {
    // trace(A B) = <A, B> elementwise for symmetric matrices.
    b.matrix().dot(s_tilde.matrix()) + b.inverse().matrix().dot(d_tilde.matrix())
}

/// Shared per-point computation: subspace coordinates of both scatters, the
/// projected scatters, and the inner solution.
#[derive(Debug)]
pub struct ProjectedState {
    pub ys: DMatrix<f64>,
    pub yd: DMatrix<f64>,
    pub s_tilde: SpdMatrix,
    pub d_tilde: SpdMatrix,
    pub b: SpdMatrix,
}

pub fn project_state(
    u: &StiefelPoint,
    sc_s: &PairScatter,
    sc_d: &PairScatter,
    t: f64,
) -> Result<ProjectedState> {
    let ys = sc_s.project(u.matrix());
    let yd = sc_d.project(u.matrix());
    let s_tilde = projected_from(&ys, sc_s, "projected similar scatter")?;
    let d_tilde = projected_from(&yd, sc_d, "projected dissimilar scatter")?;
    let b = inner_solution(&s_tilde, &d_tilde, t)?;
    Ok(ProjectedState {
        ys,
        yd,
        s_tilde,
        d_tilde,
        b,
    })
}

fn cost_from_state(state: &ProjectedState, t: f64) -> Result<f64> {
    weighted_objective(&state.b, &state.s_tilde, &state.d_tilde, t)
}

fn egrad_from_state(
    state: &ProjectedState,
    sc_s: &PairScatter,
    sc_d: &PairScatter,
    t: f64,
) -> Result<DMatrix<f64>> {
    let b = &state.b;

    let s_half = state.s_tilde.power(0.5);
    let s_mhalf = state.s_tilde.power(-0.5);
    let log_s = SpdMatrix::from_matrix(
        s_half.matrix() * b.matrix() * s_half.matrix(),
        "gradient similar core",
    )?
    .logm();
    let m_s = s_mhalf.matrix() * log_s.matrix() * s_mhalf.matrix();
    let term_s = sc_s.apply_transpose(&(&state.ys * m_s));

    let d_mhalf = state.d_tilde.power(-0.5);
    let log_d = SpdMatrix::from_matrix(
        d_mhalf.matrix() * b.matrix() * d_mhalf.matrix(),
        "gradient dissimilar core",
    )?
    .logm();
    let m_d = d_mhalf.matrix() * log_d.matrix() * d_mhalf.matrix();
    let term_d = sc_d.apply_transpose(&(&state.yd * m_d));

    Ok(term_s * (1.0 - t) - term_d * t)
}

/// Objective value at `u`: project both scatters, solve the inner problem in
/// closed form, evaluate the weighted Riemannian objective. Invariant under
/// `U -> U O` for orthogonal `O`.
pub fn cost(u: &StiefelPoint, sc_s: &PairScatter, sc_d: &PairScatter, t: f64) -> Result<f64> {
    let state = project_state(u, sc_s, sc_d, t)?;
    cost_from_state(&state, t)
}

/// Euclidean derivative of [`cost`] with respect to the basis entries, up to
/// one global constant factor (see [`crate::gradcheck`]); the Riemannian
/// gradient is its horizontal projection, which is all the solver needs.
pub fn egrad(
    u: &StiefelPoint,
    sc_s: &PairScatter,
    sc_d: &PairScatter,
    t: f64,
) -> Result<DMatrix<f64>> {
    let state = project_state(u, sc_s, sc_d, t)?;
    egrad_from_state(&state, sc_s, sc_d, t)
}

/// Rank-constrained trace objective `trace(A S) + trace(A^+ D)` for
/// `A = U B U^T`, computed in the r-dimensional space as
/// `trace(B St) + trace(B^{-1} Dt)`.
pub fn trace_cost(model: &MetricModel, sc_s: &PairScatter, sc_d: &PairScatter) -> Result<f64> {
    let s_tilde = project_scatter(sc_s, &model.u, "projected similar scatter")?;
    let d_tilde = project_scatter(sc_d, &model.u, "projected dissimilar scatter")?;
    Ok(inner_trace_objective(&model.b, &s_tilde, &d_tilde))
}

/// Full-rank baseline: the closed-form metric
/// `A = S^{-1/2} (S^{1/2} D S^{1/2})^t S^{-1/2}` on the dense scatters.
/// Refuses to materialize scatters beyond [`DENSE_GUARD`] dimensions.
pub fn gmml_closed_form(sc_s: &PairScatter, sc_d: &PairScatter, t: f64) -> Result<SpdMatrix> {
    if sc_s.dim() != sc_d.dim() {
        return Err(Error::DimensionMismatch {
            context: "gmml_closed_form",
            expected: format!("dim {}", sc_s.dim()),
            got: format!("dim {}", sc_d.dim()),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "weight t must lie in [0, 1], got {t}"
        )));
    }
    let s = SpdMatrix::from_matrix(sc_s.dense()?, "similar scatter")?;
    let d = SpdMatrix::from_matrix(sc_d.dense()?, "dissimilar scatter")?;
    geometric_mean_direct(&s, &d, t, "full-rank metric")
}

/// Seeded block power iteration on the implicit scatter: approximates the
/// top-r eigenspace of `diffs^T diffs` in O(n d r) per sweep, without ever
/// forming the d×d matrix.
pub fn dominant_subspace(
    sc: &PairScatter,
    r: usize,
    sweeps: usize,
    seed: u64,
) -> Result<StiefelPoint> {
    let mut u = StiefelPoint::random(sc.dim(), r, seed)?;
    // Tiny ridge keeps the iterate full rank when the scatter is low rank.
    let ridge = 1e-10 * sc.ambient_trace().max(f64::MIN_POSITIVE) / sc.dim() as f64;
    for _ in 0..sweeps {
        let y = sc.apply_transpose(&sc.project(u.matrix())) + u.matrix() * ridge;
        u = StiefelPoint::orthonormalize(&y)?;
    }
    Ok(u)
}

struct CacheEntry {
    key: Vec<f64>,
    state: Rc<ProjectedState>,
}

/// The objective packaged for the solver, with a per-point cache so cost and
/// gradient queries at the same basis share one projected-scatter
/// computation.
pub struct GmmlProblem<'a> {
    sc_s: &'a PairScatter,
    sc_d: &'a PairScatter,
    t: f64,
    r: usize,
    cache: RefCell<Option<CacheEntry>>,
    projection_evals: Cell<u64>,
}

/// Packages cost and Euclidean gradient over Grass(r, d) for the solver.
pub fn make_problem<'a>(
    sc_s: &'a PairScatter,
    sc_d: &'a PairScatter,
    t: f64,
    r: usize,
) -> Result<GmmlProblem<'a>> {
    if sc_s.dim() != sc_d.dim() {
        return Err(Error::DimensionMismatch {
            context: "make_problem",
            expected: format!("dim {}", sc_s.dim()),
            got: format!("dim {}", sc_d.dim()),
        });
    }
    if r == 0 || r > sc_s.dim() {
        return Err(Error::InvalidArgument(format!(
            "rank {r} must satisfy 1 <= r <= d = {}",
            sc_s.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "weight t must lie in [0, 1], got {t}"
        )));
    }
    Ok(GmmlProblem {
        sc_s,
        sc_d,
        t,
        r,
        cache: RefCell::new(None),
        projection_evals: Cell::new(0),
    })
}

impl GmmlProblem<'_> {
    /// Number of full projected-scatter computations performed; cache hits
    /// do not increment it.
    pub fn projection_evals(&self) -> u64 {
        self.projection_evals.get()
    }

    pub fn weight(&self) -> f64 {
        self.t
    }

    fn state_for(&self, u: &StiefelPoint) -> Result<Rc<ProjectedState>> {
        let key = u.matrix().as_slice();
        if let Some(entry) = self.cache.borrow().as_ref() {
            if entry.key == key {
                return Ok(Rc::clone(&entry.state));
            }
        }
        let state = Rc::new(project_state(u, self.sc_s, self.sc_d, self.t)?);
        self.projection_evals.set(self.projection_evals.get() + 1);
        *self.cache.borrow_mut() = Some(CacheEntry {
            key: key.to_vec(),
            state: Rc::clone(&state),
        });
        Ok(state)
    }
}

impl Problem for GmmlProblem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.sc_s.dim(), self.r)
    }

    fn cost(&self, u: &StiefelPoint) -> Result<f64> {
        let state = self.state_for(u)?;
        cost_from_state(&state, self.t)
    }

    fn euclidean_grad(&self, u: &StiefelPoint) -> Result<DMatrix<f64>> {
        let state = self.state_for(u)?;
        egrad_from_state(&state, self.sc_s, self.sc_d, self.t)
    }
}
