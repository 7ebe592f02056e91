//! Best approximation from a finite span in the `l_r` norm, and the
//! controlled-error approximant allowed by the error sequence.
//!
//! The objective `c -> ||f - sum_j c_j phi_j||_r^r` is smooth and strictly
//! convex for `r > 1`. It is minimized by a descent iteration with Armijo
//! backtracking whose direction is preconditioned by the (capped) Hessian,
//! warm-started from the previous greedy step. Two exact shortcuts exist:
//! spans of coordinate vectors, and one-dimensional spans in `l_1`.

use crate::dictionary::orthogonal_remainder;
use crate::space::{lp_norm, SpaceError, SpaceSpec, Vector};
use nalgebra::{DMatrix, DVector};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Relative Euclidean residual below which a new element counts as already
/// in the span.
pub const RANK_TOL: f64 = 1e-10;

/// Gram-matrix condition estimate above which a projection is flagged.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Gap accepted when the line search can no longer decrease the objective
/// in floating point. Happens for `r < 2` when residual coordinates vanish
/// exactly and the first-order quantity scales like `|res|^(r-1)`.
pub const STALL_GAP: f64 = 1e-6;

/// Slack used when checking the error-tolerant inequality.
pub const ACCEPT_TOL: f64 = 1e-9;

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("solver did not converge after {iterations} iterations (optimality gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64 },
    #[error("unsupported projection: {0}")]
    Unsupported(&'static str),
    #[error("scripted approximant lies outside the span (distance {0:e})")]
    OutsideSpan(f64),
    #[error("approximant misses the error bound: ||f - G|| = {achieved} > (1 + eta) E = {allowed}")]
    ErrorBoundViolated { achieved: f64, allowed: f64 },
    #[error("error parameter must be finite and nonnegative, got {0}")]
    InvalidEta(f64),
    #[error("utilization must lie in [0, 1], got {0}")]
    InvalidUtilization(f64),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Best approximation of `target` from `span(basis)`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionProblem<'a> {
    pub target: &'a Vector,
    pub basis: &'a [Vector],
    pub space: &'a SpaceSpec,
    pub tol: f64,
}

impl<'a> ProjectionProblem<'a> {
    pub fn new(target: &'a Vector, basis: &'a [Vector], space: &'a SpaceSpec) -> Self {
        Self {
            target,
            basis,
            space,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Coefficients over the rank-filtered basis.
    pub coefficients: Vec<f64>,
    /// The minimizer `G*`.
    pub approximant: Vector,
    /// `E = ||target - G*||`.
    pub error: f64,
    pub iterations: usize,
    /// `max_j |F_res(phi_j)|` with `F_res` the norming functional of the residual.
    pub optimality_gap: f64,
    pub ill_conditioned: bool,
}

/// How the approximant is chosen once `E` is known.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproximantMode {
    /// Deterministic error injection reaching `(1 + eta * utilization) E`.
    Canonical { utilization: f64 },
    /// A caller-supplied element of the span, checked against the bound.
    Scripted(Vector),
}

impl Default for ApproximantMode {
    fn default() -> Self {
        ApproximantMode::Canonical { utilization: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub approximant: Vector,
    /// `||target - approximant||`.
    pub achieved: f64,
    pub best: Projection,
}

/// Incrementally grown span with rank filtering and warm-start state.
#[derive(Debug, Clone)]
pub struct Span {
    dim: usize,
    basis: Vec<Vector>,
    orthonormal: Vec<Vec<f64>>,
    /// Coordinate of each basis vector when all of them are coordinate
    /// vectors (up to scale).
    support: Option<Vec<usize>>,
    warm: Vec<f64>,
}

impl Span {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            basis: Vec::new(),
            orthonormal: Vec::new(),
            support: Some(Vec::new()),
            warm: Vec::new(),
        }
    }

    pub fn from_basis(dim: usize, basis: &[Vector]) -> Self {
        let mut span = Span::new(dim);
        for phi in basis {
            span.push(phi);
        }
        span
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// The rank-filtered basis.
    pub fn basis(&self) -> &[Vector] {
        &self.basis
    }

    /// Adds `phi` unless it already lies in the span; returns whether the
    /// span grew.
    pub fn push(&mut self, phi: &Vector) -> bool {
        let Some(q) = orthogonal_remainder(&self.orthonormal, phi.coords(), RANK_TOL) else {
            return false;
        };
        self.orthonormal.push(q);
        if let Some(support) = self.support.as_mut() {
            let mut nonzero = phi.coords().iter().enumerate().filter(|(_, c)| **c != 0.0);
            match (nonzero.next(), nonzero.next()) {
                (Some((i, _)), None) => support.push(i),
                _ => self.support = None,
            }
        }
        self.basis.push(phi.clone());
        self.warm.push(0.0);
        true
    }

    /// Euclidean distance from `v` to the span.
    pub fn distance(&self, v: &Vector) -> f64 {
        let mut w = v.coords().to_vec();
        for _ in 0..2 {
            for q in &self.orthonormal {
                let c: f64 = q.iter().zip(&w).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        w.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Best approximation of `target`, warm-started from the last solve.
    pub fn project(&mut self, target: &Vector, space: &SpaceSpec, tol: f64) -> Result<Projection, ProjectionError> {
        if target.dim() != self.dim || space.dim() != self.dim {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim,
                found: target.dim(),
            }
            .into());
        }
        let result = if self.basis.is_empty() {
            Projection {
                coefficients: Vec::new(),
                approximant: Vector::zeros(self.dim),
                error: lp_norm(target.coords(), space.r()),
                iterations: 0,
                optimality_gap: 0.0,
                ill_conditioned: false,
            }
        } else if let Some(support) = &self.support {
            coordinate_projection(target, &self.basis, support, space)
        } else if !space.is_smooth() {
            if self.basis.len() != 1 {
                return Err(ProjectionError::Unsupported("l_1 projection onto spans of rank above one"));
            }
            l1_line_projection(target, &self.basis[0])
        } else {
            newton_projection(target, &self.basis, space, tol, &self.warm)?
        };
        self.warm.clone_from(&result.coefficients);
        Ok(result)
    }
}

/// Minimizes `||target - G||_r` over `G` in `span(basis)`.
pub fn best_approximation(prob: &ProjectionProblem<'_>) -> Result<Projection, ProjectionError> {
    let mut span = Span::from_basis(prob.space.dim(), prob.basis);
    span.project(prob.target, prob.space, prob.tol)
}

/// An approximant `G` in the span with `E <= ||f - G|| <= (1 + eta) E`.
pub fn perturbed_approximation(
    prob: &ProjectionProblem<'_>,
    eta: f64,
    mode: &ApproximantMode,
) -> Result<Perturbed, ProjectionError> {
    let mut span = Span::from_basis(prob.space.dim(), prob.basis);
    let best = span.project(prob.target, prob.space, prob.tol)?;
    perturb(prob.target, &span, prob.space, best, eta, mode)
}

/// [`perturbed_approximation`] against an already solved span.
pub fn perturb(
    target: &Vector,
    span: &Span,
    space: &SpaceSpec,
    best: Projection,
    eta: f64,
    mode: &ApproximantMode,
) -> Result<Perturbed, ProjectionError> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(ProjectionError::InvalidEta(eta));
    }
    let r = space.r();
    let e = best.error;
    match mode {
        ApproximantMode::Scripted(g) => {
            if g.dim() != span.dim() {
                return Err(SpaceError::DimensionMismatch {
                    expected: span.dim(),
                    found: g.dim(),
                }
                .into());
            }
            let dist = span.distance(g);
            if dist > ACCEPT_TOL * g.max_abs().max(1.0) {
                return Err(ProjectionError::OutsideSpan(dist));
            }
            let achieved = lp_norm((target - g).coords(), r);
            let allowed = (1.0 + eta) * e;
            if achieved > allowed + ACCEPT_TOL {
                return Err(ProjectionError::ErrorBoundViolated { achieved, allowed });
            }
            Ok(Perturbed {
                approximant: g.clone(),
                achieved,
                best,
            })
        }
        ApproximantMode::Canonical { utilization } => {
            let u = *utilization;
            if !(0.0..=1.0).contains(&u) {
                return Err(ProjectionError::InvalidUtilization(u));
            }
            let goal = (1.0 + eta * u) * e;
            if eta * u == 0.0 || e == 0.0 || span.rank() == 0 {
                return Ok(Perturbed {
                    approximant: best.approximant.clone(),
                    achieved: e,
                    best,
                });
            }
            // offset direction: back toward 0 along G*, or the first basis element when G* = 0
            let direction = if best.approximant.max_abs() > 0.0 {
                -&best.approximant
            } else {
                let b = &span.basis()[0];
                b.scaled(1.0 / b.max_abs())
            };
            let residual = target - &best.approximant;
            let h = |s: f64| lp_norm(residual.axpy(-s, &direction).coords(), r);
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            let mut guard = 0;
            while h(hi) < goal {
                lo = hi;
                hi *= 2.0;
                guard += 1;
                if guard > 200 {
                    break;
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if h(mid) <= goal {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let approximant = best.approximant.axpy(lo, &direction);
            let achieved = h(lo);
            Ok(Perturbed {
                approximant,
                achieved,
                best,
            })
        }
    }
}

fn coordinate_projection(target: &Vector, basis: &[Vector], support: &[usize], space: &SpaceSpec) -> Projection {
    let mut g = vec![0.0; target.dim()];
    let mut coefficients = Vec::with_capacity(basis.len());
    for (phi, &i) in basis.iter().zip(support) {
        coefficients.push(target[i] / phi[i]);
        g[i] = target[i];
    }
    let approximant = Vector::new(g).expect("copied finite coordinates");
    let residual = target - &approximant;
    Projection {
        coefficients,
        error: lp_norm(residual.coords(), space.r()),
        approximant,
        iterations: 0,
        optimality_gap: 0.0,
        ill_conditioned: false,
    }
}

/// `min_mu ||f - mu b||_1` is a weighted median of `f_i / b_i` with weights
/// `|b_i|`; within a flat optimal interval the point closest to 0 is taken.
fn l1_line_projection(target: &Vector, b: &Vector) -> Projection {
    let mut pts: Vec<(f64, f64)> = target
        .coords()
        .iter()
        .zip(b.coords())
        .filter(|(_, bi)| **bi != 0.0)
        .map(|(fi, bi)| (fi / bi, bi.abs()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    let mut lower = 0.0;
    let mut upper = 0.0;
    for (i, (x, w)) in pts.iter().enumerate() {
        acc += w;
        if acc * 2.0 >= total {
            lower = *x;
            upper = if acc * 2.0 == total { pts.get(i + 1).map_or(*x, |p| p.0) } else { *x };
            break;
        }
    }
    let mu = 0.0_f64.clamp(lower, upper);
    let approximant = b.scaled(mu);
    let error = lp_norm((target - &approximant).coords(), 1.0);
    Projection {
        coefficients: vec![mu],
        approximant,
        error,
        iterations: 0,
        optimality_gap: 0.0,
        ill_conditioned: false,
    }
}

fn newton_projection(
    target: &Vector,
    basis: &[Vector],
    space: &SpaceSpec,
    tol: f64,
    warm: &[f64],
) -> Result<Projection, ProjectionError> {
    let r = space.r();
    let dim = target.dim();
    let n = basis.len();
    let b = DMatrix::from_fn(dim, n, |i, j| basis[j][i]);
    let f = DVector::from_column_slice(target.coords());
    let mut c = DVector::from_column_slice(warm);

    let gram = b.transpose() * &b;
    let ill_conditioned = condition_estimate(&gram) > CONDITION_LIMIT;

    let residual_of = |c: &DVector<f64>| &f - &b * c;
    let mut res = residual_of(&c);
    let mut iterations = 0;
    let mut gap;
    loop {
        let nres = lp_norm(res.as_slice(), r);
        if nres == 0.0 {
            gap = 0.0;
            break;
        }
        let scaled: Vec<f64> = res.iter().map(|x| x.abs() / nres).collect();
        let psi = DVector::from_iterator(
            dim,
            res.iter()
                .zip(&scaled)
                .map(|(x, u)| if *x == 0.0 { 0.0 } else { x.signum() * u.powf(r - 1.0) }),
        );
        let descent = b.transpose() * &psi;
        gap = descent.amax();
        if gap <= tol || iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        // capped Hessian weights (|res_i| / ||res||)^(r-2)
        let weights: Vec<f64> = scaled.iter().map(|u| (r - 1.0) * u.max(1e-12).powf(r - 2.0)).collect();
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let mut acc = 0.0;
                for i in 0..dim {
                    acc += b[(i, j)] * weights[i] * b[(i, k)];
                }
                hess[(j, k)] = acc;
                hess[(k, j)] = acc;
            }
        }
        let step = solve_regularized(hess, &descent).map(|s| s * nres);
        let step = match step {
            Some(s) if s.dot(&descent) > 0.0 => s,
            _ => &descent * nres,
        };

        let objective = nres.powf(r);
        let slope = -r * nres.powf(r - 1.0) * descent.dot(&step);
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &c + &step * s;
            let trial_res = residual_of(&trial);
            let value = lp_norm(trial_res.as_slice(), r).powf(r);
            if value <= objective + 1e-4 * s * slope {
                accepted = Some((trial, trial_res));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((trial, trial_res)) => {
                c = trial;
                res = trial_res;
            }
            None => {
                if gap <= STALL_GAP {
                    break;
                }
                return Err(ProjectionError::NonConvergence { iterations, gap });
            }
        }
    }
    if gap > tol && gap > STALL_GAP {
        return Err(ProjectionError::NonConvergence { iterations, gap });
    }
    let approximant = Vector::new((&b * &c).as_slice().to_vec())?;
    let error = lp_norm(res.as_slice(), r);
    Ok(Projection {
        coefficients: c.as_slice().to_vec(),
        approximant,
        error,
        iterations,
        optimality_gap: gap,
        ill_conditioned,
    })
}

fn solve_regularized(mut hess: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let scale = (0..n).map(|i| hess[(i, i)]).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(chol) = hess.clone().cholesky() {
            return Some(chol.solve(rhs));
        }
        let next = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
        for i in 0..n {
            hess[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

/// Square of the ratio of extreme Cholesky pivots of the Gram matrix; a
/// cheap stand-in for its condition number.
fn condition_estimate(gram: &DMatrix<f64>) -> f64 {
    match gram.clone().cholesky() {
        Some(chol) => {
            let l = chol.l();
            let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            (max / min).powi(2)
        }
        None => f64::INFINITY,
    }
}
