//! Riemannian conjugate gradient on the Grassmann manifold.
//!
//! The solver consumes an abstract [`Problem`] (cost plus Euclidean gradient)
//! and iterates: project the gradient onto the horizontal space, combine it
//! with the transported previous direction (Hestenes-Stiefel by default),
//! take an Armijo backtracking step through the QR retraction, and restart
//! to steepest descent whenever the conjugate direction stops being a
//! descent direction or the beta coefficient turns negative.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{StiefelPoint, TangentVector};

/// Objective presented to the solver. Implementations must be deterministic
/// for a fixed point.
pub trait Problem {
    /// (ambient dimension d, subspace dimension r).
    fn dims(&self) -> (usize, usize);
    fn cost(&self, u: &StiefelPoint) -> Result<f64>;
    fn euclidean_grad(&self, u: &StiefelPoint) -> Result<DMatrix<f64>>;
}

impl<P: Problem + ?Sized> Problem for &P {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn cost(&self, u: &StiefelPoint) -> Result<f64> {
        (**self).cost(u)
    }
    fn euclidean_grad(&self, u: &StiefelPoint) -> Result<DMatrix<f64>> {
        (**self).euclidean_grad(u)
    }
}

/// Sign-flipping adapter: wraps a problem so that minimizing the wrapper
/// maximizes the original objective.
pub struct Negated<P>(pub P);

impl<P: Problem> Problem for Negated<P> {
    fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
    fn cost(&self, u: &StiefelPoint) -> Result<f64> {
        Ok(-self.0.cost(u)?)
    }
    fn euclidean_grad(&self, u: &StiefelPoint) -> Result<DMatrix<f64>> {
        Ok(self.0.euclidean_grad(u)? * -1.0)
    }
}

/// Conjugate-direction update rule. `SteepestDescent` forces beta = 0 and
/// exists to isolate CG-specific behavior in tests and experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    HestenesStiefel,
    PolakRibiere,
    SteepestDescent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative gradient tolerance: stop when the Riemannian gradient norm
    /// drops below `grad_tol * max(1, |cost|)`.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_line_search: usize,
    pub initial_step: f64,
    pub beta_rule: BetaRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_line_search: 30,
            initial_step: 1.0,
            beta_rule: BetaRule::HestenesStiefel,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "armijo_c1 must lie in (0, 1), got {}",
                self.armijo_c1
            )));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "initial_step must be positive, got {}",
                self.initial_step
            )));
        }
        if self.max_line_search == 0 {
            return Err(Error::InvalidArgument(
                "max_line_search must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    GradTol,
    MaxIters,
    LineSearchFailure,
}

/// State at one accepted iterate. Record 0 is the starting point; for k >= 1
/// the `step`, `ls_evals`, `slope`, and `restarted` fields describe the move
/// that produced iterate k from iterate k-1.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub ls_evals: usize,
    pub restarted: bool,
    /// Directional derivative along the search direction at the previous
    /// iterate (NaN for record 0). Not part of the CSV schema.
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub termination: TerminationReason,
    /// Largest `||U^T U - I||_F` observed over all iterates.
    pub max_ortho_defect: f64,
}

impl SolverTrace {
    pub fn final_cost(&self) -> f64 {
        self.records.last().map(|r| r.cost).unwrap_or(f64::NAN)
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// CSV with columns (iter, cost, grad_norm, step, ls_evals, restarted).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,cost,grad_norm,step,ls_evals,restarted\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter,
                r.cost,
                r.grad_norm,
                r.step,
                r.ls_evals,
                if r.restarted { 1 } else { 0 }
            ));
        }
        out
    }
}

pub struct LineSearchOutcome {
    pub step: f64,
    pub u_next: StiefelPoint,
    pub f_next: f64,
    pub evals: usize,
}

fn is_recoverable(err: &Error) -> bool {
    matches!(
        err,
        Error::RankDeficientRetraction
            | Error::NonFinite { .. }
            | Error::EigenFailure { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::DegenerateProjection { .. }
    )
}

/// Armijo backtracking along `dir` from `u`, generating candidates through
/// the QR retraction.
///
/// A trial step is accepted when it satisfies the sufficient-decrease
/// condition `f(step) <= f0 + c1 * step * slope`. If no trial in the budget
/// does, the largest non-increasing trial is accepted as a flat-step
/// fallback; numerically flat stretches would otherwise livelock the solver
/// even though any of those steps is harmless to take.
pub fn line_search_armijo(
    problem: &dyn Problem,
    u: &StiefelPoint,
    dir: &TangentVector,
    f0: f64,
    slope: f64,
    initial_trial: f64,
    opts: &SolverOptions,
) -> Result<LineSearchOutcome> {
    if !(slope < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "line search requires a descent direction, got slope {slope}"
        )));
    }
    if !(initial_trial > 0.0 && initial_trial.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "line search trial step must be positive, got {initial_trial}"
        )));
    }

    let mut step = initial_trial;
    let mut flat_fallback: Option<(f64, StiefelPoint, f64)> = None;
    for eval in 1..=opts.max_line_search {
        let trial = match u.retract(dir, step) {
            Ok(point) => match problem.cost(&point) {
                Ok(f) if f.is_finite() => Some((point, f)),
                Ok(_) => None,
                Err(e) if is_recoverable(&e) => None,
                Err(e) => return Err(e),
            },
            Err(e) if is_recoverable(&e) => None,
            Err(e) => return Err(e),
        };
        if let Some((u_next, f_next)) = trial {
            if f_next <= f0 + opts.armijo_c1 * step * slope {
                return Ok(LineSearchOutcome {
                    step,
                    u_next,
                    f_next,
                    evals: eval,
                });
            }
            if flat_fallback.is_none() && f_next <= f0 {
                flat_fallback = Some((step, u_next, f_next));
            }
        }
        step *= opts.backtrack_factor;
    }
    if let Some((step, u_next, f_next)) = flat_fallback {
        return Ok(LineSearchOutcome {
            step,
            u_next,
            f_next,
            evals: opts.max_line_search,
        });
    }
    Err(Error::LineSearchExhausted {
        evals: opts.max_line_search,
    })
}

fn finite_or(value: f64, what: &'static str, iter: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteIterate { what, iter })
    }
}

fn riemannian_grad(
    problem: &dyn Problem,
    u: &StiefelPoint,
    iter: usize,
) -> Result<(TangentVector, f64)> {
    let g_eucl = problem.euclidean_grad(u)?;
    if !g_eucl.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteIterate {
            what: "gradient",
            iter,
        });
    }
    let g = u.project_tangent(&g_eucl)?;
    let norm = g.norm();
    Ok((g, norm))
}

/// Minimizes `problem` over Grass(r, d) starting from `u0`.
///
/// Returns the final iterate together with the iteration trace. The accepted
/// cost sequence is non-increasing by construction; termination is by the
/// relative gradient test, the iteration cap, or line-search failure (after
/// one steepest-descent restart attempt).
pub fn minimize(
    problem: &dyn Problem,
    u0: &StiefelPoint,
    opts: &SolverOptions,
) -> Result<(StiefelPoint, SolverTrace)> {
    opts.validate()?;
    let (d, r) = problem.dims();
    if u0.ambient_dim() != d || u0.subspace_dim() != r {
        return Err(Error::DimensionMismatch {
            context: "minimize",
            expected: format!("{d}x{r}"),
            got: format!("{}x{}", u0.ambient_dim(), u0.subspace_dim()),
        });
    }

    let mut u = u0.clone();
    let mut f = finite_or(problem.cost(&u)?, "cost", 0)?;
    let (mut grad, mut grad_norm) = riemannian_grad(problem, &u, 0)?;

    let mut records = vec![IterationRecord {
        iter: 0,
        cost: f,
        grad_norm,
        step: 0.0,
        ls_evals: 0,
        restarted: false,
        slope: f64::NAN,
    }];
    let mut max_defect = u.ortho_defect();
    let mut dir = grad.scale(-1.0);
    let mut prev_step = opts.initial_step;
    // Set when the next direction has already been reset to steepest descent
    // (negative beta); surfaces in the record of the iterate it produces.
    let mut pending_restart = false;

    let termination = loop {
        let iter = records.len() - 1;
        if grad_norm <= opts.grad_tol * f.abs().max(1.0) {
            break TerminationReason::GradTol;
        }
        if iter >= opts.max_iters {
            break TerminationReason::MaxIters;
        }

        let mut restarted = pending_restart;
        pending_restart = false;
        let mut slope = grad.inner(&dir)?;
        if !(slope < 0.0) {
            dir = grad.scale(-1.0);
            slope = -grad_norm * grad_norm;
            restarted = true;
        }

        let trial0 = (2.0 * prev_step).min(opts.initial_step);
        let mut outcome = line_search_armijo(problem, &u, &dir, f, slope, trial0, opts);
        if matches!(outcome, Err(Error::LineSearchExhausted { .. })) && !restarted {
            // One steepest-descent restart before giving up.
            dir = grad.scale(-1.0);
            slope = -grad_norm * grad_norm;
            restarted = true;
            outcome = line_search_armijo(problem, &u, &dir, f, slope, opts.initial_step, opts);
        }
        let ls = match outcome {
            Ok(ls) => ls,
            Err(Error::LineSearchExhausted { .. }) => break TerminationReason::LineSearchFailure,
            Err(e) => return Err(e),
        };

        let u_next = ls.u_next;
        let f_next = finite_or(ls.f_next, "cost", iter + 1)?;
        let (grad_next, grad_next_norm) = riemannian_grad(problem, &u_next, iter + 1)?;

        // Conjugate direction for the next step, built from transported
        // quantities.
        let grad_moved = u_next.transport(&grad)?;
        let dir_moved = u_next.transport(&dir)?;
        let diff = grad_next.combine(1.0, &grad_moved, -1.0)?;
        let beta = match opts.beta_rule {
            BetaRule::HestenesStiefel => {
                let denom = dir_moved.inner(&diff)?;
                grad_next.inner(&diff)? / denom
            }
            BetaRule::PolakRibiere => grad_next.inner(&diff)? / (grad_norm * grad_norm),
            BetaRule::SteepestDescent => 0.0,
        };
        let beta = if beta.is_finite() && beta > 0.0 {
            beta
        } else {
            if opts.beta_rule != BetaRule::SteepestDescent {
                pending_restart = true;
            }
            0.0
        };
        dir = grad_next.combine(-1.0, &dir_moved, beta)?;

        u = u_next;
        f = f_next;
        grad = grad_next;
        grad_norm = grad_next_norm;
        prev_step = ls.step;
        max_defect = max_defect.max(u.ortho_defect());
        records.push(IterationRecord {
            iter: iter + 1,
            cost: f,
            grad_norm,
            step: ls.step,
            ls_evals: ls.evals,
            restarted,
            slope,
        });
    };

    Ok((
        u,
        SolverTrace {
            records,
            termination,
            max_ortho_defect: max_defect,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::{sym_eig, SymMatrix};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct ConstantProblem {
        dims: (usize, usize),
        value: f64,
    }

    impl Problem for ConstantProblem {
        fn dims(&self) -> (usize, usize) {
            self.dims
        }
        fn cost(&self, _u: &StiefelPoint) -> crate::Result<f64> {
            Ok(self.value)
        }
        fn euclidean_grad(&self, _u: &StiefelPoint) -> crate::Result<DMatrix<f64>> {
            Ok(DMatrix::zeros(self.dims.0, self.dims.1))
        }
    }

    /// Rayleigh-quotient problem: minimizing -tr(U^T M U) over Grass(r, d)
    /// recovers the top-r eigenspace of M.
    struct RayleighProblem {
        m: DMatrix<f64>,
        r: usize,
    }

    impl Problem for RayleighProblem {
        fn dims(&self) -> (usize, usize) {
            (self.m.nrows(), self.r)
        }
        fn cost(&self, u: &StiefelPoint) -> crate::Result<f64> {
            Ok(-(u.matrix().transpose() * &self.m * u.matrix()).trace())
        }
        fn euclidean_grad(&self, u: &StiefelPoint) -> crate::Result<DMatrix<f64>> {
            Ok(&self.m * u.matrix() * -2.0)
        }
    }

    fn random_spd_matrix(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn projector_error(u: &StiefelPoint, v: &DMatrix<f64>) -> f64 {
        (u.matrix() * u.matrix().transpose() - v * v.transpose()).norm()
    }

    fn run_rayleigh(rule: BetaRule, seed: u64) -> (f64, SolverTrace) {
        let d = 10;
        let r = 2;
        let m = random_spd_matrix(d, seed);
        let problem = RayleighProblem { m: m.clone(), r };
        let u0 = StiefelPoint::random(d, r, seed + 1).unwrap();
        let opts = SolverOptions {
            max_iters: 500,
            grad_tol: 1e-10,
            beta_rule: rule,
            ..SolverOptions::default()
        };
        let (u, trace) = minimize(&problem, &u0, &opts).unwrap();
        let eig = sym_eig(&SymMatrix::new(m).unwrap(), "rayleigh oracle").unwrap();
        let top = eig.vectors().columns(0, r).into_owned();
        (projector_error(&u, &top), trace)
    }

    #[test]
    fn constant_objective_stops_immediately() {
        let problem = ConstantProblem {
            dims: (6, 2),
            value: 4.2,
        };
        let u0 = StiefelPoint::random(6, 2, 0).unwrap();
        let (u, trace) = minimize(&problem, &u0, &SolverOptions::default()).unwrap();
        assert_eq!(trace.termination, TerminationReason::GradTol);
        assert_eq!(trace.records.len(), 1);
        assert_eq!(u.matrix().as_slice(), u0.matrix().as_slice());
    }

    #[test]
    fn rayleigh_quotient_recovers_top_eigenspace() {
        let (err, trace) = run_rayleigh(BetaRule::HestenesStiefel, 17);
        assert!(err <= 1e-6, "projector error {err}");
        assert_eq!(trace.termination, TerminationReason::GradTol);
        assert!(trace.max_ortho_defect <= 1e-12);
    }

    #[test]
    fn steepest_descent_also_converges() {
        let (err, _) = run_rayleigh(BetaRule::SteepestDescent, 23);
        assert!(err <= 1e-6, "projector error {err}");
    }

    #[test]
    fn polak_ribiere_also_converges() {
        let (err, _) = run_rayleigh(BetaRule::PolakRibiere, 29);
        assert!(err <= 1e-6, "projector error {err}");
    }

    #[test]
    fn accepted_costs_never_increase() {
        let (_, trace) = run_rayleigh(BetaRule::HestenesStiefel, 31);
        for w in trace.records.windows(2) {
            assert!(w[1].cost <= w[0].cost, "cost increased: {w:?}");
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let (_, t1) = run_rayleigh(BetaRule::HestenesStiefel, 37);
        let (_, t2) = run_rayleigh(BetaRule::HestenesStiefel, 37);
        assert_eq!(t1.records.len(), t2.records.len());
        for (a, b) in t1.records.iter().zip(&t2.records) {
            assert_eq!(a, b);
        }
        assert_eq!(t1.to_csv(), t2.to_csv());
    }

    #[test]
    fn non_finite_cost_at_start_is_reported() {
        let problem = ConstantProblem {
            dims: (4, 2),
            value: f64::NAN,
        };
        let u0 = StiefelPoint::random(4, 2, 0).unwrap();
        let err = minimize(&problem, &u0, &SolverOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteIterate {
                what: "cost",
                iter: 0
            }
        ));
    }

    #[test]
    fn trace_csv_has_expected_header() {
        let (_, trace) = run_rayleigh(BetaRule::HestenesStiefel, 41);
        let csv = trace.to_csv();
        assert!(csv.starts_with("iter,cost,grad_norm,step,ls_evals,restarted\n"));
        assert_eq!(csv.lines().count(), trace.records.len() + 1);
    }

    /// Scalar quadratic pulled onto Grass(2, 1): candidates along the fixed
    /// direction (0, 1) from e1 are (1, x)/sqrt(1+x^2) with x = step, so
    /// cost (1 - x)^2 has value 1 and slope -2 at step 0.
    struct PulledQuadratic;

    impl Problem for PulledQuadratic {
        fn dims(&self) -> (usize, usize) {
            (2, 1)
        }
        fn cost(&self, u: &StiefelPoint) -> crate::Result<f64> {
            let x = u.matrix()[(1, 0)] / u.matrix()[(0, 0)];
            Ok((1.0 - x) * (1.0 - x))
        }
        fn euclidean_grad(&self, _u: &StiefelPoint) -> crate::Result<DMatrix<f64>> {
            unreachable!("line-search test never asks for the gradient")
        }
    }

    #[test]
    fn line_search_accepts_full_step_on_quadratic() {
        let u0 = StiefelPoint::from_matrix(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let dir = TangentVector::from_matrix_unchecked(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let opts = SolverOptions::default();
        let out = line_search_armijo(&PulledQuadratic, &u0, &dir, 1.0, -2.0, 1.0, &opts).unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.evals, 1);
        assert_relative_eq!(out.f_next, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn line_search_accepts_flat_step_within_margin() {
        let problem = ConstantProblem {
            dims: (4, 2),
            value: 3.7,
        };
        let u0 = StiefelPoint::random(4, 2, 1).unwrap();
        let raw = DMatrix::from_fn(4, 2, |i, j| ((i * 2 + j) as f64).sin());
        let dir = u0.project_tangent(&raw).unwrap();
        let opts = SolverOptions::default();
        let out = line_search_armijo(&problem, &u0, &dir, 3.7, -1.0, 1.0, &opts).unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.f_next, 3.7);
    }

    #[test]
    fn line_search_rejects_non_descent_slope() {
        let problem = ConstantProblem {
            dims: (4, 2),
            value: 1.0,
        };
        let u0 = StiefelPoint::random(4, 2, 2).unwrap();
        let dir = TangentVector::zeros(4, 2);
        let opts = SolverOptions::default();
        assert!(line_search_armijo(&problem, &u0, &dir, 1.0, 0.0, 1.0, &opts).is_err());
    }
}
