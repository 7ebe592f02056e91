//! The approximate weak Chebyshev greedy iteration.
//!
//! Step `n` takes a functional `F_{n-1}` with `||F_{n-1}|| <= 1` and
//! `F_{n-1}(f_{n-1}) >= (1 - delta_{n-1}) ||f_{n-1}||`, an element `phi_n` of
//! the dictionary with `F_{n-1}(phi_n) >= t_n sup_g F_{n-1}(g)`, and an
//! approximant `G_n` from `span{phi_1, ..., phi_n}` with
//! `||f - G_n|| <= (1 + eta_n) E_n`, where `E_n` is the best-approximation
//! error from that span. The residual is `f_n = f - G_n`.
//!
//! Indexing: the perturbation applied at step `n` is `delta_{n-1}`, so step 1
//! uses `delta_0`; the `delta` column of a trace row `n` holds `delta_{n-1}`
//! and the `eta` column holds `eta_n`.

use crate::dictionary::{self, Dictionary, DictionaryError, Selection, TieBreak};
use crate::projection::{self, ApproximantMode, Projection, ProjectionError, Span, ACCEPT_TOL, DEFAULT_TOL};
use crate::scenarios::{bound_e_next, BoundContext, BoundStep, Certificate};
use crate::schedule::{AdaptiveInput, Role, ScheduleError, ScheduleSet};
use crate::space::{self, DualVector, SpaceError, SpaceSpec, Vector};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// Slack allowed on every step constraint.
pub const STEP_TOL: f64 = 1e-9;

/// The four per-step constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    FunctionalNorm,
    FunctionalDuality,
    WeakSelection,
    ApproximationError,
}

impl std::fmt::Display for Clause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Clause::FunctionalNorm => "functional norm ||F|| <= 1",
            Clause::FunctionalDuality => "functional duality F(f_{n-1}) >= (1 - delta) ||f_{n-1}||",
            Clause::WeakSelection => "weak selection F(phi_n) >= t_n sup F(g)",
            Clause::ApproximationError => "approximation error ||f - G_n|| <= (1 + eta_n) E_n",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid run input: {0}")]
    InvalidInput(String),
    #[error("step {step}: {clause} violated by {margin:.3e}")]
    Contract { step: usize, clause: Clause, margin: f64 },
    #[error("step {step}: scripted supplier failed: {reason}")]
    Supplier { step: usize, reason: String },
    #[error("step {step}: approximant lies {distance:.3e} away from the span")]
    OutsideSpan { step: usize, distance: f64 },
    #[error("step {step}: projection solver failed: {source}")]
    Solver { step: usize, source: ProjectionError },
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("dictionary: {0}")]
    Dictionary(#[from] DictionaryError),
    #[error("space: {0}")]
    Space(#[from] SpaceError),
    #[error("record {requested} requested from a trace with {available} steps")]
    OutOfRange { requested: usize, available: usize },
}

impl EngineError {
    /// Whether the failure comes from the numerical solver rather than from
    /// a violated constraint or bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, EngineError::Solver { .. })
    }
}

/// Everything a scripted supplier may inspect at step `n`.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub n: usize,
    pub target: &'a Vector,
    /// `f_{n-1}`.
    pub residual: &'a Vector,
    pub residual_norm: f64,
    pub t: f64,
    /// `delta_{n-1}`.
    pub delta: f64,
    /// `phi_1, ..., phi_{n-1}`.
    pub selections: &'a [Selection],
    pub space: &'a SpaceSpec,
    pub dictionary: &'a Dictionary,
}

/// State available when the approximant of step `n` is chosen.
#[derive(Debug, Clone, Copy)]
pub struct ApproxView<'a> {
    pub step: StepView<'a>,
    pub selection: Selection,
    pub eta: f64,
    /// Best approximation from the current span.
    pub best: &'a Projection,
    pub span: &'a Span,
}

pub type FunctionalSupplier<'s> = Box<dyn FnMut(&StepView<'_>) -> Result<DualVector, String> + 's>;
pub type SelectionSupplier<'s> = Box<dyn FnMut(&StepView<'_>, &DualVector) -> Result<Selection, String> + 's>;
pub type ApproximantSupplier<'s> = Box<dyn FnMut(&ApproxView<'_>) -> Result<Vector, String> + 's>;

pub enum FunctionalChoice<'s> {
    /// The norming functional of the residual.
    ExactDuality,
    Scripted(FunctionalSupplier<'s>),
}

pub enum SelectionChoice<'s> {
    Canonical(TieBreak),
    Scripted(SelectionSupplier<'s>),
}

pub enum ApproximantChoice<'s> {
    /// Error injected up to `(1 + eta_n * utilization) E_n`.
    CanonicalPerturbed { utilization: f64 },
    Scripted(ApproximantSupplier<'s>),
}

/// One way of resolving the freedom left at each step.
pub struct RealizationPolicy<'s> {
    pub functional: FunctionalChoice<'s>,
    pub selection: SelectionChoice<'s>,
    pub approximant: ApproximantChoice<'s>,
}

impl<'s> RealizationPolicy<'s> {
    pub fn canonical(tie_break: TieBreak, utilization: f64) -> Self {
        Self {
            functional: FunctionalChoice::ExactDuality,
            selection: SelectionChoice::Canonical(tie_break),
            approximant: ApproximantChoice::CanonicalPerturbed { utilization },
        }
    }

    /// True when no supplier is scripted.
    pub fn is_canonical(&self) -> bool {
        matches!(self.functional, FunctionalChoice::ExactDuality)
            && matches!(self.selection, SelectionChoice::Canonical(_))
            && matches!(self.approximant, ApproximantChoice::CanonicalPerturbed { .. })
    }
}

impl Default for RealizationPolicy<'_> {
    fn default() -> Self {
        RealizationPolicy::canonical(TieBreak::LowestIndex, 1.0)
    }
}

/// The element, dictionary, space and driver sequences of one run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub target: Vector,
    pub dictionary: Dictionary,
    pub space: SpaceSpec,
    pub schedules: ScheduleSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub n_max: usize,
    pub conv_tol: f64,
    /// `(A, epsilon)` with `f` within `epsilon` of `A_1(D, A)`; enables the
    /// per-step bound on the next error.
    pub certificate: Option<Certificate>,
    pub solver_tol: f64,
}

impl RunOptions {
    pub fn new(n_max: usize, conv_tol: f64) -> Self {
        Self {
            n_max,
            conv_tol,
            certificate: None,
            solver_tol: DEFAULT_TOL,
        }
    }

    pub fn with_certificate(mut self, certificate: Certificate) -> Self {
        self.certificate = Some(certificate);
        self
    }
}

/// Observed slack of each constraint; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMargins {
    /// `1 - ||F||`.
    pub norm: f64,
    /// `F(f_{n-1}) - (1 - delta) ||f_{n-1}||`.
    pub duality: f64,
    /// `F(phi_n) - t_n sup`.
    pub selection: f64,
    /// `(1 + eta_n) E_n - ||f - G_n||`.
    pub approximation: f64,
}

impl StepMargins {
    pub fn min(&self) -> f64 {
        self.norm.min(self.duality).min(self.selection).min(self.approximation)
    }

    /// The first clause whose margin is below `-STEP_TOL`.
    pub fn first_failure(&self) -> Option<(Clause, f64)> {
        [
            (Clause::FunctionalNorm, self.norm),
            (Clause::FunctionalDuality, self.duality),
            (Clause::WeakSelection, self.selection),
            (Clause::ApproximationError, self.approximation),
        ]
        .into_iter()
        .find(|(_, m)| *m < -STEP_TOL)
    }

    pub fn passes(&self) -> bool {
        self.first_failure().is_none()
    }
}

/// Inputs of [`validate_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepCheck<'a> {
    pub target: &'a Vector,
    pub prev_residual: &'a Vector,
    pub functional: &'a DualVector,
    pub phi: &'a Vector,
    /// `sup_{g in D} F(g)`.
    pub sup: f64,
    pub approximant: &'a Vector,
    pub t: f64,
    pub delta: f64,
    pub eta: f64,
    pub e_n: f64,
}

/// Margins of the four step constraints. Pure report; the caller decides.
pub fn validate_step(c: &StepCheck<'_>, s: &SpaceSpec) -> Result<StepMargins, SpaceError> {
    let prev_norm = space::norm(c.prev_residual, s)?;
    let achieved = space::norm(&(c.target - c.approximant), s)?;
    Ok(StepMargins {
        norm: 1.0 - space::dual_norm(c.functional, s)?,
        duality: space::apply(c.functional, c.prev_residual)? - (1.0 - c.delta) * prev_norm,
        selection: space::apply(c.functional, c.phi)? - c.t * c.sup,
        approximation: (1.0 + c.eta) * c.e_n - achieved,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub t: f64,
    /// `delta_{n-1}`.
    pub delta_applied: f64,
    /// `eta_n`.
    pub eta_applied: f64,
    /// `||f_n||`.
    pub residual_norm: f64,
    pub e_n: f64,
    pub chosen: Selection,
    /// `F_{n-1}(f_{n-1})`.
    pub functional_on_residual: f64,
    /// `sup_g F_{n-1}(g)`.
    pub sup_value: f64,
    /// Bound on `E_{n+1}` from the state after this step, when certified.
    pub bound_e_next: Option<f64>,
    pub solver_iterations: usize,
    pub span_rank: usize,
    pub ill_conditioned: bool,
    pub margins: StepMargins,
    /// `G_n`.
    pub approximant: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Converged { tolerance: f64, step: usize },
    NotConverged,
    Aborted { reason: String },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged { .. } => "converged",
            Verdict::NotConverged => "not_converged",
            Verdict::Aborted { .. } => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub target: Vector,
    pub space: SpaceSpec,
    pub target_norm: f64,
    /// Bound on `E_1` from `f_0 = f`, when certified.
    pub initial_bound: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub verdict: Verdict,
}

impl Trace {
    /// `f_n = f - G_n`; `n = 0` gives `f`.
    pub fn residual(&self, n: usize) -> Result<Vector, EngineError> {
        if n == 0 {
            return Ok(self.target.clone());
        }
        self.records
            .get(n - 1)
            .map(|r| &self.target - &r.approximant)
            .ok_or(EngineError::OutOfRange {
                requested: n,
                available: self.records.len(),
            })
    }

    pub fn final_residual_norm(&self) -> f64 {
        self.records.last().map_or(self.target_norm, |r| r.residual_norm)
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }

    /// The bound on `E_{n+1}` recorded at state `n` (0 for the initial state).
    pub fn bound_after(&self, n: usize) -> Option<f64> {
        if n == 0 {
            self.initial_bound
        } else {
            self.records.get(n - 1).and_then(|r| r.bound_e_next)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let bound = r.bound_e_next.map(|b| format!("{b:.16e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{},{}",
                r.n,
                r.t,
                r.delta_applied,
                r.eta_applied,
                r.residual_norm,
                r.e_n,
                r.chosen.index,
                r.chosen.sign.symbol(),
                r.functional_on_residual,
                r.sup_value,
                bound,
                r.solver_iterations
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

pub const CSV_HEADER: &str =
    "n,t_n,delta,eta,residual_norm,E_n,chosen_id,chosen_sign,F_on_residual,sup_value,bound_E_next,solver_iterations";

/// A failed run together with the steps completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EngineError,
    pub trace: Trace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed steps)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for RunFailure {}

struct Runner<'p> {
    problem: &'p Problem,
    bound: Option<BoundContext>,
}

impl Runner<'_> {
    fn delta(&self, n: usize, residual_norm: f64) -> Result<f64, ScheduleError> {
        let s = &self.problem.schedules;
        let state = AdaptiveInput {
            t_next: s.t.value(n + 1, Role::Weakness, &self.problem.space, None)?,
            magnitude: residual_norm,
        };
        s.delta.value(n, Role::Perturbation, &self.problem.space, Some(state))
    }

    fn eta(&self, n: usize, e_n: f64) -> Result<f64, ScheduleError> {
        let s = &self.problem.schedules;
        let state = AdaptiveInput {
            t_next: s.t.value(n + 1, Role::Weakness, &self.problem.space, None)?,
            magnitude: e_n,
        };
        let eta = s.eta.value(n, Role::Error, &self.problem.space, Some(state))?;
        if eta > s.eta0 + 1e-15 {
            return Err(ScheduleError::OutOfRange {
                role: Role::Error,
                n,
                value: eta,
                range: "[0, eta0]",
            });
        }
        Ok(eta)
    }

    /// Bound on `E_{n+1}` given state `n`.
    fn bound(&self, n: usize, residual_norm: f64, delta_n: f64, eta_n: f64) -> Result<Option<f64>, EngineError> {
        let Some(ctx) = &self.bound else {
            return Ok(None);
        };
        if residual_norm == 0.0 {
            return Ok(Some(0.0));
        }
        let step = BoundStep {
            t_next: self.problem.schedules.t.value(n + 1, Role::Weakness, &self.problem.space, None)?,
            delta: delta_n,
            eta: eta_n,
        };
        Ok(Some(bound_e_next(residual_norm, ctx, step)?))
    }
}

/// Runs steps `1..=n_max`, stopping early once `||f_n|| <= conv_tol`.
pub fn run(problem: &Problem, policy: &mut RealizationPolicy<'_>, options: &RunOptions) -> Result<Trace, RunFailure> {
    let space = &problem.space;
    let target_norm = space::norm(&problem.target, space).unwrap_or(f64::NAN);
    let mut trace = Trace {
        target: problem.target.clone(),
        space: *space,
        target_norm,
        initial_bound: None,
        records: Vec::new(),
        verdict: Verdict::NotConverged,
    };
    match run_into(problem, policy, options, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => {
            trace.verdict = Verdict::Aborted {
                reason: error.to_string(),
            };
            Err(RunFailure { error, trace })
        }
    }
}

fn run_into(
    problem: &Problem,
    policy: &mut RealizationPolicy<'_>,
    options: &RunOptions,
    trace: &mut Trace,
) -> Result<(), EngineError> {
    let space = &problem.space;
    let dict = &problem.dictionary;
    let f = &problem.target;
    if f.dim() != space.dim() {
        return Err(SpaceError::DimensionMismatch {
            expected: space.dim(),
            found: f.dim(),
        }
        .into());
    }
    if dict.dim() != space.dim() {
        return Err(SpaceError::DimensionMismatch {
            expected: space.dim(),
            found: dict.dim(),
        }
        .into());
    }
    dict.validate(space)?;
    if f.is_zero() {
        return Err(EngineError::InvalidInput("target must be nonzero".into()));
    }
    if options.n_max == 0 {
        return Err(EngineError::InvalidInput("n_max must be at least 1".into()));
    }
    if !(options.conv_tol >= 0.0) {
        return Err(EngineError::InvalidInput(format!("conv_tol = {} must be nonnegative", options.conv_tol)));
    }
    problem.schedules.validate(space, options.n_max)?;
    if let ApproximantChoice::CanonicalPerturbed { utilization } = policy.approximant {
        if !(0.0..=1.0).contains(&utilization) {
            return Err(EngineError::InvalidInput(format!("utilization {utilization} outside [0, 1]")));
        }
    }

    let runner = Runner {
        problem,
        bound: match options.certificate {
            Some(c) if space.is_smooth() => Some(BoundContext::new(c, *space, trace.target_norm)?),
            _ => None,
        },
    };

    let mut residual = f.clone();
    let mut residual_norm = trace.target_norm;
    let mut delta_prev = runner.delta(0, residual_norm)?;
    trace.initial_bound = runner.bound(0, residual_norm, delta_prev, 0.0)?;
    let mut span = Span::new(space.dim());
    let mut best: Option<Projection> = None;
    let mut selections: Vec<Selection> = Vec::new();

    for n in 1..=options.n_max {
        let t = problem.schedules.t.value(n, Role::Weakness, space, None)?;
        let view = StepView {
            n,
            target: f,
            residual: &residual,
            residual_norm,
            t,
            delta: delta_prev,
            selections: &selections,
            space,
            dictionary: dict,
        };

        let functional = match &mut policy.functional {
            FunctionalChoice::ExactDuality => space::norming_functional(&residual, space)?,
            FunctionalChoice::Scripted(supply) => {
                supply(&view).map_err(|reason| EngineError::Supplier { step: n, reason })?
            }
        };
        if functional.dim() != space.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: space.dim(),
                found: functional.dim(),
            }
            .into());
        }

        let values = dict.evaluate(&functional)?;
        let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let selection = match &mut policy.selection {
            SelectionChoice::Canonical(tie) => dictionary::weak_argmax(&functional, dict, t, *tie)?.selection,
            SelectionChoice::Scripted(supply) => {
                let sel = supply(&view, &functional).map_err(|reason| EngineError::Supplier { step: n, reason })?;
                if sel.index >= dict.len() {
                    return Err(EngineError::Supplier {
                        step: n,
                        reason: format!("element {} outside a dictionary of {}", sel.index, dict.len()),
                    });
                }
                sel
            }
        };
        let phi = dict.signed_element(selection);

        let mut solver_iterations = 0;
        if span.push(&phi) || best.is_none() {
            let solved = span
                .project(f, space, options.solver_tol)
                .map_err(|source| EngineError::Solver { step: n, source })?;
            solver_iterations = solved.iterations;
            best = Some(solved);
        }
        let current = best.as_ref().expect("projection computed above");
        let e_n = current.error;
        let eta = runner.eta(n, e_n)?;

        let approximant = match &mut policy.approximant {
            ApproximantChoice::CanonicalPerturbed { utilization } => {
                let mode = ApproximantMode::Canonical {
                    utilization: *utilization,
                };
                projection::perturb(f, &span, space, current.clone(), eta, &mode)
                    .map_err(|source| EngineError::Solver { step: n, source })?
                    .approximant
            }
            ApproximantChoice::Scripted(supply) => {
                let approx_view = ApproxView {
                    step: view,
                    selection,
                    eta,
                    best: current,
                    span: &span,
                };
                let g = supply(&approx_view).map_err(|reason| EngineError::Supplier { step: n, reason })?;
                if g.dim() != space.dim() {
                    return Err(SpaceError::DimensionMismatch {
                        expected: space.dim(),
                        found: g.dim(),
                    }
                    .into());
                }
                let distance = span.distance(&g);
                if distance > ACCEPT_TOL * g.max_abs().max(1.0) {
                    return Err(EngineError::OutsideSpan { step: n, distance });
                }
                g
            }
        };

        let margins = validate_step(
            &StepCheck {
                target: f,
                prev_residual: &residual,
                functional: &functional,
                phi: &phi,
                sup,
                approximant: &approximant,
                t,
                delta: delta_prev,
                eta,
                e_n,
            },
            space,
        )?;
        if let Some((clause, margin)) = margins.first_failure() {
            return Err(EngineError::Contract { step: n, clause, margin });
        }

        let functional_on_residual = space::apply(&functional, &residual)?;
        residual = f - &approximant;
        residual_norm = space::norm(&residual, space)?;
        selections.push(selection);

        let converged = residual_norm <= options.conv_tol;
        let (delta_next, bound) = if converged || n == options.n_max {
            (None, runner.bound(n, residual_norm, runner.delta(n, residual_norm).unwrap_or(0.0), eta)?)
        } else {
            let d = runner.delta(n, residual_norm)?;
            (Some(d), runner.bound(n, residual_norm, d, eta)?)
        };

        trace.records.push(IterationRecord {
            n,
            t,
            delta_applied: delta_prev,
            eta_applied: eta,
            residual_norm,
            e_n,
            chosen: selection,
            functional_on_residual,
            sup_value: sup,
            bound_e_next: bound,
            solver_iterations,
            span_rank: span.rank(),
            ill_conditioned: current.ill_conditioned,
            margins,
            approximant,
        });

        if converged {
            trace.verdict = Verdict::Converged {
                tolerance: options.conv_tol,
                step: n,
            };
            return Ok(());
        }
        if let Some(d) = delta_next {
            delta_prev = d;
        }
    }
    trace.verdict = Verdict::NotConverged;
    Ok(())
}
