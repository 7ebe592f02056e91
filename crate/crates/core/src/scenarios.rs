//! Turn-key reproductions: the divergence constructions, the nonsmooth trap,
//! rate experiments with adaptive schedules, and the bound on the next
//! best-approximation error that is attached to certified traces.

use crate::dictionary::{self, build_nonsmooth_dictionary, Dictionary, DictionaryError, Selection, TieBreak};
use crate::engine::{
    self, ApproxView, ApproximantChoice, EngineError, FunctionalChoice, Problem, RealizationPolicy, RunFailure,
    RunOptions, SelectionChoice, StepView, Trace, Verdict,
};
use crate::schedule::{
    adaptive_constant, Role, Schedule, ScheduleError, ScheduleSet, SubsequenceRule,
};
use crate::space::{self, inf_phi, inf_psi, DualVector, SpaceError, SpaceSpec, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::cell::RefCell;

/// Coordinatewise tolerance for closed-form residual claims.
pub const CLAIM_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("step {step}: {claim} fails by {deviation:.3e}")]
    Claim { step: usize, claim: String, deviation: f64 },
    #[error(transparent)]
    Run(#[from] Box<RunFailure>),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("space: {0}")]
    Space(#[from] SpaceError),
    #[error("dictionary: {0}")]
    Dictionary(#[from] DictionaryError),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl From<RunFailure> for ScenarioError {
    fn from(f: RunFailure) -> Self {
        ScenarioError::Run(Box::new(f))
    }
}

/// `f` lies within `epsilon` of `A_1(D, A)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub a: f64,
    pub epsilon: f64,
}

impl Certificate {
    /// `f` in the closed convex hull of the dictionary.
    pub const CONVEX_HULL: Certificate = Certificate { a: 1.0, epsilon: 0.0 };
}

/// Constants of the one-step bound for a fixed target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundContext {
    pub certificate: Certificate,
    pub space: SpaceSpec,
    /// `||f||`.
    pub target_norm: f64,
}

impl BoundContext {
    pub fn new(certificate: Certificate, space: SpaceSpec, target_norm: f64) -> Result<Self, SpaceError> {
        if !(certificate.a > 0.0 && certificate.a.is_finite()) {
            return Err(SpaceError::NonPositive {
                name: "A",
                value: certificate.a,
            });
        }
        if !(certificate.epsilon >= 0.0) {
            return Err(SpaceError::NonPositive {
                name: "epsilon",
                value: certificate.epsilon,
            });
        }
        space.require_smooth()?;
        Ok(Self {
            certificate,
            space,
            target_norm,
        })
    }
}

/// Per-step inputs: `t_{n+1}`, `delta_n`, `eta_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundStep {
    pub t_next: f64,
    pub delta: f64,
    pub eta: f64,
}

/// `beta_n = inf_mu ((delta_n + eta_n) / mu + 2 gamma ((2 + eta_n) ||f||)^q mu^(q-1))`,
/// equal to `c (delta_n + eta_n)^(1/p)` with
/// `c = p (2 gamma (q - 1))^(1/q) (2 + eta_n) ||f||`.
pub fn beta(ctx: &BoundContext, delta: f64, eta: f64) -> Result<f64, SpaceError> {
    let b = delta + eta;
    if b == 0.0 || ctx.target_norm == 0.0 {
        return Ok(0.0);
    }
    let s = &ctx.space;
    let a = 2.0 * s.gamma() * ((2.0 + eta) * ctx.target_norm).powf(s.q());
    Ok(inf_phi(a, b, s)?.value)
}

/// Upper bound on `E_{n+1}` given `||f_n||`:
/// `||f_n|| inf_{lambda >= 0} (1 + delta_n - (lambda t_{n+1} / A)(1 - delta_n - (beta_n + epsilon) / ||f_n||)
/// + 2 gamma (lambda / ||f_n||)^q)`.
pub fn bound_e_next(residual_norm: f64, ctx: &BoundContext, step: BoundStep) -> Result<f64, SpaceError> {
    if !(residual_norm > 0.0) {
        return Err(SpaceError::NonPositive {
            name: "residual norm",
            value: residual_norm,
        });
    }
    let s = &ctx.space;
    let beta_n = beta(ctx, step.delta, step.eta)?;
    let slope = step.t_next / ctx.certificate.a
        * (1.0 - step.delta - (beta_n + ctx.certificate.epsilon) / residual_norm);
    let base = 1.0 + step.delta;
    if slope <= 0.0 {
        return Ok(residual_norm * base);
    }
    let a = 2.0 * s.gamma() * residual_norm.powf(-s.q());
    Ok(residual_norm * (base + inf_psi(a, slope, s)?.value))
}

/// Which admissible element the necessity realization picked at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NecessityBranch {
    /// Step 1, exact norming functional, `phi_1 = e_1`.
    Initial,
    /// `n` in the second index set, `phi_n = e_n`.
    Fresh,
    /// First set via the perturbation clause, `phi_n = e_0`.
    Perturbation,
    /// First set via the error clause, `phi_n = e_1`.
    Error,
}

/// The divergent `l_q` instance built around index sets of weakness and
/// tolerance sequences, truncated to `dim` coordinates.
#[derive(Debug, Clone)]
pub struct NecessityInstance {
    pub space: SpaceSpec,
    pub alpha: f64,
    pub schedules: ScheduleSet,
    /// `in_first[n]`: whether `n` belongs to the first index set, for
    /// `n <= horizon`; index 0 unused.
    pub in_first: Vec<bool>,
    /// Coefficient `a_j` on first-set coordinates (zero elsewhere).
    pub a: Vec<f64>,
    pub target: Vector,
    pub horizon: usize,
}

impl NecessityInstance {
    /// Classifies `1..=horizon` by `delta_{n-1} >= alpha t_n^p or
    /// eta_{n-1} >= alpha t_n^p`, forces `1` into the second set, and spreads
    /// `a` uniformly over first-set coordinates below `dim`.
    pub fn new(r: f64, dim: usize, alpha: f64, schedules: ScheduleSet, horizon: usize) -> Result<Self, ScenarioError> {
        if !(r > 1.0 && r <= 2.0) {
            return Err(ScenarioError::Invalid(format!("necessity construction needs 1 < q <= 2, got {r}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ScenarioError::Invalid(format!("alpha = {alpha} must be positive")));
        }
        if dim < 3 {
            return Err(ScenarioError::Invalid("dimension must be at least 3".into()));
        }
        let space = SpaceSpec::new(r, dim)?;
        if schedules.delta.is_adaptive() || schedules.eta.is_adaptive() {
            return Err(ScenarioError::Invalid("necessity schedules must not be adaptive".into()));
        }
        schedules.validate(&space, horizon)?;
        let (q, p) = (space.q(), space.p());
        let t = |n: usize| schedules.t.value(n, Role::Weakness, &space, None);
        let top = horizon.max(dim - 1);
        let mut in_first = vec![false; top + 1];
        for n in 2..=top {
            let threshold = alpha * t(n)?.powf(p);
            let delta = schedules.delta.value(n - 1, Role::Perturbation, &space, None)?;
            let eta = schedules.eta.value(n - 1, Role::Error, &space, None)?;
            in_first[n] = delta >= threshold || eta >= threshold;
        }
        for (n, first) in in_first.iter().enumerate().take(horizon + 1).skip(1) {
            if !first && n >= dim {
                return Err(ScenarioError::Invalid(format!(
                    "index {n} of the second set lies beyond the truncation dimension {dim}"
                )));
            }
        }
        let count = (2..dim).filter(|&j| in_first[j]).count();
        if count == 0 {
            return Err(ScenarioError::Invalid(
                "first index set is empty on the truncation; use the finite-set preset".into(),
            ));
        }
        let aj = (1.0 / count as f64).powf(1.0 / q);
        if aj > alpha.powf(1.0 / q) * (1.0 + 1e-12) {
            return Err(ScenarioError::Invalid(format!(
                "a_j = {aj} exceeds alpha^(1/q); enlarge the dimension or alpha"
            )));
        }
        let mut a = vec![0.0; dim];
        let mut f = vec![0.0; dim];
        for j in 1..dim {
            if in_first[j] {
                a[j] = aj;
                f[j] = aj;
            } else {
                f[j] = alpha.powf(1.0 / q) * t(j)?.powf(p / q);
            }
        }
        Ok(Self {
            space,
            alpha,
            schedules,
            in_first,
            a,
            target: Vector::new(f)?,
            horizon,
        })
    }

    /// `t = 1`, `delta = eta = 0.2`, `alpha = 0.1` in `l_1.5^64`.
    pub fn default_preset(horizon: usize) -> Result<Self, ScenarioError> {
        let schedules = ScheduleSet {
            t: Schedule::constant(1.0),
            delta: Schedule::constant(0.2),
            eta: Schedule::constant(0.2),
            eta0: 0.2,
        };
        NecessityInstance::new(1.5, 64, 0.1, schedules, horizon)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn first_set(&self) -> Vec<usize> {
        (1..self.in_first.len()).filter(|&n| self.in_first[n]).collect()
    }

    pub fn second_set(&self) -> Vec<usize> {
        (1..self.in_first.len()).filter(|&n| !self.in_first[n]).collect()
    }

    fn t(&self, n: usize) -> f64 {
        self.schedules
            .t
            .value(n, Role::Weakness, &self.space, None)
            .expect("validated on construction")
    }

    fn eta(&self, n: usize) -> f64 {
        self.schedules
            .eta
            .value(n, Role::Error, &self.space, None)
            .expect("validated on construction")
    }

    /// `eta_n^(1/q) e_1 + sum_first a_j e_j + alpha^(1/q) sum_{second, not chosen} t_j^(p/q) e_j`.
    pub fn closed_form(&self, eta_n: f64, chosen: &[bool]) -> Vector {
        let (q, p) = (self.space.q(), self.space.p());
        let mut out = vec![0.0; self.dim()];
        out[1] = eta_n.powf(1.0 / q);
        for j in 2..self.dim() {
            out[j] = if self.in_first[j] {
                self.a[j]
            } else if chosen[j] {
                0.0
            } else {
                self.alpha.powf(1.0 / q) * self.t(j).powf(p / q)
            };
        }
        Vector::new(out).expect("finite by construction")
    }

    /// `eta_n + 1 + alpha sum_{second, not chosen} t_j^p`.
    pub fn closed_form_norm_q(&self, eta_n: f64, chosen: &[bool]) -> f64 {
        let p = self.space.p();
        let tail: f64 = (2..self.dim())
            .filter(|&j| !self.in_first[j] && !chosen[j])
            .map(|j| self.t(j).powf(p))
            .sum();
        eta_n + 1.0 + self.alpha * tail
    }
}

#[derive(Debug, Clone)]
pub struct NecessityReport {
    pub trace: Trace,
    pub branches: Vec<NecessityBranch>,
    /// Largest coordinatewise gap between residual and closed form.
    pub max_closed_form_deviation: f64,
    /// Largest `| ||f_n||_q^q - (eta_n + 1 + alpha sum t_j^p) |`.
    pub max_norm_identity_deviation: f64,
    /// `min_n ||f_n||_q^q`.
    pub min_norm_q: f64,
    /// Smallest constraint margin over all steps.
    pub min_margin: f64,
}

/// Runs the scripted divergent realization and checks its residual claims.
pub fn necessity_scenario(inst: &NecessityInstance, n_max: usize) -> Result<NecessityReport, ScenarioError> {
    if n_max > inst.horizon {
        return Err(ScenarioError::Invalid(format!(
            "n_max = {n_max} exceeds the classified horizon {}",
            inst.horizon
        )));
    }
    let dim = inst.dim();
    let (q, p) = (inst.space.q(), inst.space.p());
    let branches = RefCell::new(Vec::new());
    let chosen = RefCell::new(vec![false; dim]);

    let functional = |view: &StepView<'_>| -> Result<DualVector, String> {
        if view.n == 1 {
            return space::norming_functional(view.residual, view.space).map_err(|e| e.to_string());
        }
        let chosen = chosen.borrow();
        let delta = view.delta;
        let mut coords = vec![0.0; dim];
        coords[0] = delta.powf(1.0 / p);
        coords[1] = inst.eta(view.n - 1).powf(1.0 / p);
        for j in 2..dim {
            coords[j] = if inst.in_first[j] {
                inst.a[j].powf(q / p)
            } else if chosen[j] {
                0.0
            } else {
                inst.alpha.powf(1.0 / p) * inst.t(j)
            };
        }
        let denom = (1.0 + delta).powf(1.0 / p) * view.residual_norm.powf(q / p);
        DualVector::new(coords.into_iter().map(|c| c / denom).collect()).map_err(|e| e.to_string())
    };
    let selection = |view: &StepView<'_>, _: &DualVector| -> Result<Selection, String> {
        let n = view.n;
        let (branch, index) = if n == 1 {
            (NecessityBranch::Initial, 1)
        } else if !inst.in_first[n] {
            (NecessityBranch::Fresh, n)
        } else if view.delta >= inst.eta(n - 1) {
            (NecessityBranch::Perturbation, 0)
        } else {
            (NecessityBranch::Error, 1)
        };
        branches.borrow_mut().push(branch);
        chosen.borrow_mut()[index] = true;
        Ok(Selection::plus(index))
    };
    let approximant = |view: &ApproxView<'_>| -> Result<Vector, String> {
        let residual = inst.closed_form(view.eta, &chosen.borrow());
        Ok(view.step.target - &residual)
    };

    let problem = Problem {
        target: inst.target.clone(),
        dictionary: Dictionary::standard_basis(dim),
        space: inst.space,
        schedules: inst.schedules.clone(),
    };
    let mut policy = RealizationPolicy {
        functional: FunctionalChoice::Scripted(Box::new(functional)),
        selection: SelectionChoice::Scripted(Box::new(selection)),
        approximant: ApproximantChoice::Scripted(Box::new(approximant)),
    };
    let trace = engine::run(&problem, &mut policy, &RunOptions::new(n_max, 0.0))?;
    drop(policy);

    // replay the selections to rebuild each closed form
    let mut replay = vec![false; dim];
    let mut max_dev = 0.0_f64;
    let mut max_id = 0.0_f64;
    let mut min_norm_q = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    for rec in &trace.records {
        replay[rec.chosen.index] = true;
        let expected = inst.closed_form(rec.eta_applied, &replay);
        let actual = trace.residual(rec.n).expect("record exists");
        let dev = actual.max_abs_diff(&expected);
        if dev > CLAIM_TOL {
            return Err(ScenarioError::Claim {
                step: rec.n,
                claim: "residual equals its closed form".into(),
                deviation: dev,
            });
        }
        let norm_q = rec.residual_norm.powf(q);
        let id = (norm_q - inst.closed_form_norm_q(rec.eta_applied, &replay)).abs();
        if id > CLAIM_TOL {
            return Err(ScenarioError::Claim {
                step: rec.n,
                claim: "||f_n||_q^q = eta_n + 1 + alpha sum t_j^p".into(),
                deviation: id,
            });
        }
        if norm_q < 1.0 - CLAIM_TOL {
            return Err(ScenarioError::Claim {
                step: rec.n,
                claim: "||f_n||_q^q >= 1".into(),
                deviation: 1.0 - norm_q,
            });
        }
        max_dev = max_dev.max(dev);
        max_id = max_id.max(id);
        min_norm_q = min_norm_q.min(norm_q);
        min_margin = min_margin.min(rec.margins.min());
    }
    Ok(NecessityReport {
        trace,
        branches: branches.into_inner(),
        max_closed_form_deviation: max_dev,
        max_norm_identity_deviation: max_id,
        min_norm_q,
        min_margin,
    })
}

/// The case of a finite first index set: weakness with summable `t_n^p`,
/// `f = e_0 + sum_j t_j^(p/q) e_j`, and the greedy step always taking the
/// fresh coordinate `e_n`, which ties the weak threshold against `e_0`.
pub fn necessity_finite_scenario(r: f64, dim: usize, t: Schedule, n_max: usize) -> Result<Trace, ScenarioError> {
    let space = SpaceSpec::new(r, dim)?;
    if space.r() > 2.0 {
        return Err(ScenarioError::Invalid(format!("needs 1 < q <= 2, got {r}")));
    }
    if n_max >= dim {
        return Err(ScenarioError::Invalid(format!("n_max = {n_max} must stay below dim = {dim}")));
    }
    let (q, p) = (space.q(), space.p());
    let mut f = vec![1.0; dim];
    for (j, fj) in f.iter_mut().enumerate().skip(1) {
        *fj = t.value(j, Role::Weakness, &space, None)?.powf(p / q);
    }
    let problem = Problem {
        target: Vector::new(f)?,
        dictionary: Dictionary::standard_basis(dim),
        space,
        schedules: ScheduleSet::wcga(t),
    };
    let mut policy = RealizationPolicy {
        selection: SelectionChoice::Scripted(Box::new(|view: &StepView<'_>, _: &DualVector| {
            Ok(Selection::plus(view.n))
        })),
        ..RealizationPolicy::default()
    };
    let trace = engine::run(&problem, &mut policy, &RunOptions::new(n_max, 0.0))?;
    for rec in &trace.records {
        if rec.residual_norm < 1.0 - CLAIM_TOL {
            return Err(ScenarioError::Claim {
                step: rec.n,
                claim: "residual stays above the e_0 component".into(),
                deviation: 1.0 - rec.residual_norm,
            });
        }
    }
    Ok(trace)
}

/// Positive nonincreasing `a_j = c (j + offset)^(-2/q)`, `j = 1..=len`, with
/// `sum a_j^q = 1` on the truncation.
pub fn tail_controlled_coefficients(q: f64, len: usize, offset: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=len).map(|j| (j as f64 + offset).powf(-2.0 / q)).collect();
    let total: f64 = raw.iter().rev().map(|x| x.powf(q)).sum();
    let c = total.powf(-1.0 / q);
    raw.into_iter().map(|x| c * x).collect()
}

#[derive(Debug, Clone)]
pub struct UnboundedEtaReport {
    pub trace: Trace,
    pub spikes: Vec<usize>,
    /// `| ||f_{n_k}|| - ||f|| |` at each spike.
    pub spike_deviations: Vec<f64>,
}

/// Error spikes `eta_{n_k} = k`: the realization discards everything on
/// spikes (`G = 0`) and projects exactly elsewhere.
///
/// Coordinates `e_1, e_2, ...` occupy vector slots `0, 1, ...`. Each step
/// after a spike restarts from `f`, whose norming functional peaks at `e_1`;
/// the realization declares `delta_{n_k} = 1` and uses the coordinate
/// functional of the fresh element there, which keeps `phi_n = e_n`
/// admissible for the fixed weakness `t = 1`.
pub fn unbounded_eta_scenario(
    r: f64,
    spikes: &[usize],
    a: &[f64],
    n_max: usize,
) -> Result<UnboundedEtaReport, ScenarioError> {
    let dim = a.len();
    let space = SpaceSpec::new(r, dim)?;
    if space.r() > 2.0 {
        return Err(ScenarioError::Invalid(format!("needs 1 < q <= 2, got {r}")));
    }
    let q = space.q();
    if n_max >= dim {
        return Err(ScenarioError::Invalid(format!("n_max = {n_max} must stay below dim = {dim}")));
    }
    if a.iter().any(|&x| !(x > 0.0)) || a.windows(2).any(|w| w[1] > w[0]) {
        return Err(ScenarioError::Invalid("coefficients must be positive and nonincreasing".into()));
    }
    let mass: f64 = a.iter().map(|x| x.powf(q)).sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(ScenarioError::Invalid(format!("sum a_j^q = {mass}, expected 1")));
    }
    if spikes.first() == Some(&0) || spikes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScenarioError::Invalid("spikes must be strictly increasing and positive".into()));
    }
    let spikes: Vec<usize> = spikes.iter().copied().filter(|&n| n <= n_max).collect();
    // tail_from[n] = (sum_{j > n} a_j^q)^(1/q), coordinates indexed from 1
    let mut tail_q = vec![0.0; dim + 1];
    for j in (1..=dim).rev() {
        tail_q[j - 1] = tail_q[j] + a[j - 1].powf(q);
    }
    for (k, &nk) in spikes.iter().enumerate() {
        let k = k + 1;
        let tail = tail_q[nk].powf(1.0 / q);
        if tail < 1.0 / (k as f64 + 1.0) {
            return Err(ScenarioError::Invalid(format!(
                "tail condition fails at spike {k} (n = {nk}): {tail} < 1/{}",
                k + 1
            )));
        }
    }
    let mut eta = vec![0.0; n_max];
    let mut delta = vec![0.0; n_max + 1];
    for (k, &nk) in spikes.iter().enumerate() {
        eta[nk - 1] = (k + 1) as f64;
        delta[nk] = 1.0;
    }
    let schedules = ScheduleSet {
        t: Schedule::constant(1.0),
        delta: Schedule::scripted(delta),
        eta: Schedule::scripted(eta),
        eta0: spikes.len().max(1) as f64,
    };
    let is_spike = |n: usize| spikes.binary_search(&n).is_ok();
    let target = Vector::new(a.to_vec())?;

    let functional = |view: &StepView<'_>| -> Result<DualVector, String> {
        if view.n > 1 && is_spike(view.n - 1) {
            Ok(DualVector::unit(dim, view.n - 1))
        } else {
            space::norming_functional(view.residual, view.space).map_err(|e| e.to_string())
        }
    };
    let selection =
        |view: &StepView<'_>, _: &DualVector| -> Result<Selection, String> { Ok(Selection::plus(view.n - 1)) };
    let approximant = |view: &ApproxView<'_>| -> Result<Vector, String> {
        let n = view.step.n;
        if is_spike(n) {
            Ok(Vector::zeros(dim))
        } else {
            let mut g = vec![0.0; dim];
            g[..n].copy_from_slice(&a[..n]);
            Vector::new(g).map_err(|e| e.to_string())
        }
    };
    let problem = Problem {
        target: target.clone(),
        dictionary: Dictionary::standard_basis(dim),
        space,
        schedules,
    };
    let mut policy = RealizationPolicy {
        functional: FunctionalChoice::Scripted(Box::new(functional)),
        selection: SelectionChoice::Scripted(Box::new(selection)),
        approximant: ApproximantChoice::Scripted(Box::new(approximant)),
    };
    let trace = engine::run(&problem, &mut policy, &RunOptions::new(n_max, 0.0))?;
    drop(policy);

    let f_norm = trace.target_norm;
    let mut spike_deviations = Vec::new();
    for rec in &trace.records {
        if is_spike(rec.n) {
            let dev = (rec.residual_norm - f_norm).abs();
            if dev > 1e-12 {
                return Err(ScenarioError::Claim {
                    step: rec.n,
                    claim: "||f_{n_k}|| = ||f||".into(),
                    deviation: dev,
                });
            }
            spike_deviations.push(dev);
        } else {
            let expected = tail_q[rec.n].powf(1.0 / q);
            let dev = (rec.residual_norm - expected).abs();
            if dev > CLAIM_TOL {
                return Err(ScenarioError::Claim {
                    step: rec.n,
                    claim: "off-spike residual equals the coefficient tail".into(),
                    deviation: dev,
                });
            }
        }
    }
    Ok(UnboundedEtaReport {
        trace,
        spikes,
        spike_deviations,
    })
}

/// Spikes at `n_k = 2k` in `l_1.5^400` with `a_j ~ (j + 10)^(-2/q)`.
pub fn unbounded_eta_preset(n_max: usize) -> Result<UnboundedEtaReport, ScenarioError> {
    let r = 1.5;
    let a = tail_controlled_coefficients(r, 400, 10.0);
    let spikes: Vec<usize> = (1..).map(|k| 2 * k).take_while(|&n| n <= n_max).collect();
    unbounded_eta_scenario(r, &spikes, &a, n_max)
}

/// The greedy step stuck on `g_0` in `l_1^dim` with the norming functional
/// `(1, ..., 1)`.
pub fn nonsmooth_scenario(dim: usize, n_max: usize) -> Result<Trace, ScenarioError> {
    let c = build_nonsmooth_dictionary(dim)?;
    let fixed = c.norming.clone();
    let f_norm = space::norm(&c.f, &c.space)?;
    for (name, functional) in [("F", &c.norming), ("F'", &c.alternative)] {
        let dev = (space::apply(functional, &c.f)? - f_norm)
            .abs()
            .max((space::dual_norm(functional, &c.space)? - 1.0).abs());
        if dev > 1e-12 {
            return Err(ScenarioError::Claim {
                step: 0,
                claim: format!("{name} norms f"),
                deviation: dev,
            });
        }
    }
    let gap = space::apply(&c.norming, &c.g)? - space::apply(&c.alternative, &c.g)?;
    if !(gap > 0.0) {
        return Err(ScenarioError::Claim {
            step: 0,
            claim: "F(g) > F'(g)".into(),
            deviation: -gap,
        });
    }
    let problem = Problem {
        target: c.f.clone(),
        dictionary: c.dictionary.clone(),
        space: c.space,
        schedules: ScheduleSet::wcga(Schedule::constant(1.0)),
    };
    let mut policy = RealizationPolicy {
        functional: FunctionalChoice::Scripted(Box::new(move |_: &StepView<'_>| Ok(fixed.clone()))),
        selection: SelectionChoice::Scripted(Box::new(|_: &StepView<'_>, _: &DualVector| Ok(Selection::plus(0)))),
        approximant: ApproximantChoice::CanonicalPerturbed { utilization: 1.0 },
    };
    let trace = engine::run(&problem, &mut policy, &RunOptions::new(n_max, 0.0))?;
    for rec in &trace.records {
        let dev = (rec.residual_norm - f_norm).abs();
        if dev > 1e-12 {
            return Err(ScenarioError::Claim {
                step: rec.n,
                claim: "residual stays at ||f||".into(),
                deviation: dev,
            });
        }
    }
    Ok(trace)
}

/// One row of a rate report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub observed: f64,
    /// `N(n) = max{k : n_k <= n}`.
    pub count: usize,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub trace: Trace,
    pub rows: Vec<RateRow>,
    /// `8 (1 + eta_0) gamma^(1/q)`.
    pub constant: f64,
    pub violations: Vec<usize>,
}

impl RateReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.observed / r.bound).fold(0.0, f64::max)
    }
}

/// Greedy run on a convex-hull element with the rate bound
/// `||f_n|| <= 8 (1 + eta_0) gamma^(1/q) (1 + sum_{k <= N(n)} t_{n_k}^p)^(-1/p)`
/// evaluated at every step.
pub fn rate_scenario(
    weights: &[f64],
    space: SpaceSpec,
    schedules: ScheduleSet,
    subsequence: &SubsequenceRule,
    n_max: usize,
) -> Result<RateReport, ScenarioError> {
    let dict = Dictionary::standard_basis(space.dim());
    let target = dictionary::convex_hull_element(weights, &dict)?;
    let (p, q) = (space.p(), space.q());
    let constant = 8.0 * (1.0 + schedules.eta0) * space.gamma().powf(1.0 / q);
    let problem = Problem {
        target,
        dictionary: dict,
        space,
        schedules: schedules.clone(),
    };
    let options = RunOptions::new(n_max, 0.0).with_certificate(Certificate::CONVEX_HULL);
    let trace = engine::run(&problem, &mut RealizationPolicy::default(), &options)?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut sum = 0.0;
    let mut counted = 0;
    for rec in &trace.records {
        let count = subsequence.count_upto(rec.n);
        while counted < count {
            counted += 1;
            let nk = subsequence.nth(counted).expect("counted indices exist");
            sum += schedules.t.value(nk, Role::Weakness, &space, None)?.powf(p);
        }
        let bound = constant * (1.0 + sum).powf(-1.0 / p);
        if rec.residual_norm > bound {
            violations.push(rec.n);
        }
        rows.push(RateRow {
            n: rec.n,
            observed: rec.residual_norm,
            count,
            bound,
        });
    }
    Ok(RateReport {
        trace,
        rows,
        constant,
        violations,
    })
}

/// Adaptive perturbation and error schedules along `indices`, `off`
/// elsewhere, with `eta0` covering both.
pub fn adaptive_schedules(space: &SpaceSpec, target_norm: f64, indices: SubsequenceRule, off: f64) -> ScheduleSet {
    let peak = adaptive_constant(space) * target_norm.powf(space.p());
    ScheduleSet {
        t: Schedule::constant(1.0),
        delta: Schedule::adaptive(indices.clone(), Schedule::constant(off)),
        eta: Schedule::adaptive(indices, Schedule::constant(off)),
        eta0: peak.max(off),
    }
}

pub const RATE_PRESETS: [&str; 3] = ["rate_l2_dense", "rate_l2_gap2", "rate_l3_corollary"];

/// The shipped rate instances, `n_max = min(requested, 255)`.
pub fn rate_preset(name: &str, n_max: Option<usize>) -> Result<RateReport, ScenarioError> {
    let m = 256;
    let n_max = n_max.unwrap_or(m - 1).min(m - 1);
    match name {
        "rate_l2_dense" | "rate_l2_gap2" => {
            let space = SpaceSpec::new(2.0, m)?;
            let weights = vec![1.0 / m as f64; m];
            let norm = 1.0 / (m as f64).sqrt();
            let (rule, off) = if name == "rate_l2_dense" {
                (SubsequenceRule::every(1, 1), 0.0)
            } else {
                (SubsequenceRule::every(2, 2), 0.1)
            };
            let schedules = adaptive_schedules(&space, norm, rule.clone(), off);
            rate_scenario(&weights, space, schedules, &rule, n_max)
        }
        "rate_l3_corollary" => {
            let space = SpaceSpec::new(3.0, m)?;
            let raw: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-1.2)).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|x| x / total).collect();
            // tail[n] = sum_{j > n} a_j^3
            let mut tail = vec![0.0; m + 1];
            for j in (1..=m).rev() {
                tail[j - 1] = tail[j] + weights[j - 1].powi(3);
            }
            let value = |n: usize| tail[n.min(m)].powf(2.0 / 3.0) / 4608.0;
            let delta: Vec<f64> = (0..=n_max + 1).map(value).collect();
            let eta: Vec<f64> = (1..=n_max + 1).map(value).collect();
            let eta0 = eta.iter().fold(0.0_f64, |a, &b| a.max(b));
            let schedules = ScheduleSet {
                t: Schedule::constant(1.0),
                delta: Schedule::scripted(delta),
                eta: Schedule::scripted(eta),
                eta0,
            };
            rate_scenario(&weights, space, schedules, &SubsequenceRule::every(1, 1), n_max)
        }
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}

/// Gaussian coordinates from ChaCha8 seeded with `seed`, scaled to unit norm.
pub fn random_target(space: &SpaceSpec, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let coords: Vec<f64> = (0..space.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = Vector::new(coords).expect("finite samples");
        if let Ok(n) = space::norm(&v, space) {
            if n > 0.0 {
                return v.scaled(1.0 / n);
            }
        }
    }
}

/// `t = 0.5`, `delta_n = eta_n = 1/n`, worst admissible error injection, on
/// a seeded random target in `l_r^dim`; certified with `A = ||f||_1`.
pub fn convergence_regime_run(r: f64, dim: usize, seed: u64, n_max: usize, conv_tol: f64) -> Result<Trace, ScenarioError> {
    let space = SpaceSpec::new(r, dim)?;
    let target = random_target(&space, seed);
    let a = target.coords().iter().map(|c| c.abs()).sum();
    let problem = Problem {
        target,
        dictionary: Dictionary::standard_basis(dim),
        space,
        schedules: ScheduleSet {
            t: Schedule::constant(0.5),
            delta: Schedule::power(-1.0, 1.0),
            eta: Schedule::power(-1.0, 1.0),
            eta0: 1.0,
        },
    };
    let options = RunOptions::new(n_max, conv_tol).with_certificate(Certificate { a, epsilon: 0.0 });
    let mut policy = RealizationPolicy::canonical(TieBreak::LowestIndex, 1.0);
    Ok(engine::run(&problem, &mut policy, &options)?)
}

pub const PRESETS: [&str; 7] = [
    "nonsmooth",
    "necessity",
    "necessity_finite",
    "unbounded_eta",
    "rate_l2_dense",
    "rate_l2_gap2",
    "rate_l3_corollary",
];

/// Runs a named preset; `n_max` overrides the preset horizon.
pub fn run_preset(name: &str, n_max: Option<usize>) -> Result<Trace, ScenarioError> {
    match name {
        "nonsmooth" => nonsmooth_scenario(2, n_max.unwrap_or(50)),
        "necessity" => {
            let n = n_max.unwrap_or(100);
            Ok(necessity_scenario(&NecessityInstance::default_preset(n)?, n)?.trace)
        }
        "necessity_finite" => {
            necessity_finite_scenario(2.0, 256, Schedule::power(-1.0, 1.0), n_max.unwrap_or(200))
        }
        "unbounded_eta" => Ok(unbounded_eta_preset(n_max.unwrap_or(200))?.trace),
        name if RATE_PRESETS.contains(&name) => {
            let report = rate_preset(name, n_max)?;
            if let Some(&n) = report.violations.first() {
                let row = report.rows[n - 1];
                return Err(ScenarioError::Claim {
                    step: n,
                    claim: "rate bound".into(),
                    deviation: row.observed - row.bound,
                });
            }
            Ok(report.trace)
        }
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}

/// Whether a run verdict is what the preset is meant to show.
pub fn expected_verdict(name: &str, verdict: &Verdict) -> bool {
    match name {
        "nonsmooth" | "necessity" | "necessity_finite" | "unbounded_eta" => *verdict == Verdict::NotConverged,
        _ => !matches!(verdict, Verdict::Aborted { .. }),
    }
}

/// Maps run errors to their cause for exit-status purposes.
pub fn is_solver_failure(e: &ScenarioError) -> bool {
    matches!(e, ScenarioError::Run(f) if f.error.is_solver_failure())
}

impl ScenarioError {
    pub fn engine_error(&self) -> Option<&EngineError> {
        match self {
            ScenarioError::Run(f) => Some(&f.error),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_beta(ctx: &BoundContext, delta: f64, eta: f64) -> f64 {
        // oracle: direct minimization of the defining expression on a log grid
        let s = &ctx.space;
        let a = 2.0 * s.gamma() * ((2.0 + eta) * ctx.target_norm).powf(s.q());
        let mut best = f64::INFINITY;
        for i in 0..200_000 {
            let mu = 10f64.powf(-8.0 + 10.0 * i as f64 / 200_000.0);
            best = best.min((delta + eta) / mu + a * mu.powf(s.q() - 1.0));
        }
        best
    }

    #[test]
    fn beta_matches_closed_form_and_grid() {
        let s = SpaceSpec::new(2.0, 2).unwrap();
        let ctx = BoundContext::new(Certificate::CONVEX_HULL, s, 1.0).unwrap();
        for d in [0.01, 0.1, 0.3] {
            let b = beta(&ctx, d, 0.0).unwrap();
            assert!((b - 4.0 * d.sqrt()).abs() < 1e-12);
            assert!((b - grid_beta(&ctx, d, 0.0)).abs() / b < 1e-6);
        }
        let s = SpaceSpec::new(1.5, 2).unwrap();
        let ctx = BoundContext::new(Certificate::CONVEX_HULL, s, 0.7).unwrap();
        let b = beta(&ctx, 0.05, 0.02).unwrap();
        assert!((b - grid_beta(&ctx, 0.05, 0.02)).abs() / b < 1e-6);
    }

    #[test]
    fn bound_collapses_without_perturbations() {
        let s = SpaceSpec::new(2.0, 2).unwrap();
        let ctx = BoundContext::new(Certificate::CONVEX_HULL, s, 1.0).unwrap();
        let step = BoundStep {
            t_next: 1.0,
            delta: 0.0,
            eta: 0.0,
        };
        let fnorm: f64 = 0.5;
        let expected = fnorm * (1.0 + inf_psi(2.0 * 0.5 * fnorm.powi(-2), 1.0, &s).unwrap().value);
        assert!((bound_e_next(fnorm, &ctx, step).unwrap() - expected).abs() < 1e-15);
        // oracle: direct minimization over lambda
        let mut best = f64::INFINITY;
        for i in 0..100_000 {
            let lam = i as f64 * 1e-5;
            best = best.min(fnorm * (1.0 - lam + 2.0 * 0.5 * (lam / fnorm).powi(2)));
        }
        assert!((best - expected).abs() < 1e-9);
        assert!(BoundContext::new(Certificate { a: 0.0, epsilon: 0.0 }, s, 1.0).is_err());
    }

    #[test]
    fn bound_monotone_in_tolerances() {
        let s = SpaceSpec::new(3.0, 2).unwrap();
        let ctx = BoundContext::new(Certificate::CONVEX_HULL, s, 1.0).unwrap();
        let grid: Vec<f64> = (0..10).map(|i| 0.001 * i as f64).collect();
        let b = |d: f64, e: f64| {
            bound_e_next(
                0.4,
                &ctx,
                BoundStep {
                    t_next: 0.8,
                    delta: d,
                    eta: e,
                },
            )
            .unwrap()
        };
        for &d in &grid {
            for w in grid.windows(2) {
                assert!(b(d, w[1]) >= b(d, w[0]));
                assert!(b(w[1], d) >= b(w[0], d));
            }
        }
    }

    #[test]
    fn necessity_default_runs() {
        let inst = NecessityInstance::default_preset(100).unwrap();
        assert_eq!(inst.second_set().first(), Some(&1));
        assert!(inst.first_set().iter().all(|&n| n >= 2));
        assert_eq!(inst.first_set().len(), 99);
        let rep = necessity_scenario(&inst, 100).unwrap();
        assert_eq!(rep.trace.records.len(), 100);
        assert!(rep.min_norm_q >= 1.0);
        assert!(rep.min_margin >= -1e-9);
        assert_eq!(rep.branches[0], NecessityBranch::Initial);
        assert!(rep.branches[1..].iter().all(|b| *b == NecessityBranch::Perturbation));
    }

    #[test]
    fn necessity_mixed_sets() {
        // t_n = 1 on odd n, small on even n; delta decays so odd indices join the second set
        let t: Vec<f64> = (1..=80).map(|n| if n % 2 == 1 { 1.0 / n as f64 } else { 1.0 }).collect();
        let schedules = ScheduleSet {
            t: Schedule::scripted(t),
            delta: Schedule::constant(0.01),
            eta: Schedule::constant(0.02),
            eta0: 0.02,
        };
        let inst = NecessityInstance::new(2.0, 80, 0.5, schedules, 70).unwrap();
        let rep = necessity_scenario(&inst, 70).unwrap();
        assert!(rep.branches.contains(&NecessityBranch::Fresh));
        assert!(rep.branches.contains(&NecessityBranch::Error));
        assert!(rep.max_closed_form_deviation <= CLAIM_TOL);
    }

    #[test]
    fn finite_necessity_stuck() {
        let trace = necessity_finite_scenario(2.0, 256, Schedule::power(-1.0, 1.0), 200).unwrap();
        assert!(trace.records.iter().all(|r| r.residual_norm >= 1.0));
        assert_eq!(trace.verdict, Verdict::NotConverged);
    }

    #[test]
    fn unbounded_eta_spikes() {
        let rep = unbounded_eta_preset(200).unwrap();
        assert_eq!(rep.spikes.len(), 100);
        assert!(rep.spike_deviations.iter().all(|d| *d <= 1e-12));
        assert_eq!(rep.trace.verdict, Verdict::NotConverged);
        // plain power law without the offset breaks the tail condition at k = 1
        let bad = tail_controlled_coefficients(1.5, 400, 0.0);
        assert!(matches!(
            unbounded_eta_scenario(1.5, &[2, 4], &bad, 10),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn nonsmooth_stays_stuck() {
        let trace = nonsmooth_scenario(2, 50).unwrap();
        assert_eq!(trace.records.len(), 50);
        assert!(trace.records.iter().all(|r| r.residual_norm == 1.0));
        let trace = nonsmooth_scenario(6, 20).unwrap();
        assert!(trace.records.iter().all(|r| r.residual_norm == 1.0));
    }

    #[test]
    fn rate_presets_hold() {
        for name in RATE_PRESETS {
            let rep = rate_preset(name, None).unwrap();
            assert!(rep.violations.is_empty(), "{name}");
            assert_eq!(rep.rows.len(), 255);
        }
        let rep = rate_preset("rate_l2_dense", None).unwrap();
        for row in &rep.rows {
            let exact = ((256 - row.n) as f64).sqrt() / 256.0;
            assert!(row.observed >= exact - 1e-15);
            assert!(row.observed <= exact * (1.0 + rep.trace.records[row.n - 1].eta_applied) + 1e-15);
        }
    }

    #[test]
    fn random_target_deterministic() {
        let s = SpaceSpec::new(3.0, 16).unwrap();
        assert_eq!(random_target(&s, 7), random_target(&s, 7));
        assert_ne!(random_target(&s, 7), random_target(&s, 8));
        assert!((space::norm(&random_target(&s, 7), &s).unwrap() - 1.0).abs() < 1e-12);
    }
}
