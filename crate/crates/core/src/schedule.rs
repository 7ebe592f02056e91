//! Weakness, perturbation and error sequences, finite-prefix diagnostics for
//! their asymptotic hypotheses, and the two constructive subsequence
//! extractions.
//!
//! Indexing follows the sequences' own domains: weakness `t_n` and errors
//! `eta_n` start at `n = 1`, perturbations `delta_n` at `n = 0`. Divergence and
//! little-o statements cannot be decided from finitely many terms; the
//! checkers report partial sums and ratio tails with explicit thresholds.

use crate::space::SpaceSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("{role} value {value} at n = {n} is outside {range}")]
    OutOfRange {
        role: Role,
        n: usize,
        value: f64,
        range: &'static str,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scripted {role} sequence has no entry for n = {n}")]
    Exhausted { role: Role, n: usize },
    #[error("adaptive {role} value at n = {n} needs the engine state")]
    MissingState { role: Role, n: usize },
    #[error("subsequence must be strictly increasing and positive")]
    NotIncreasing,
    #[error("prefix must be at least {0}")]
    PrefixTooShort(usize),
    #[error("sequence is identically zero on the prefix")]
    AllZero,
}

/// Which of the three driver sequences a schedule feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weakness,
    Perturbation,
    Error,
}

impl Role {
    pub fn first_index(self) -> usize {
        match self {
            Role::Perturbation => 0,
            Role::Weakness | Role::Error => 1,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Weakness => "weakness",
            Role::Perturbation => "perturbation",
            Role::Error => "error",
        })
    }
}

/// Strictly increasing positive indices `n_1 < n_2 < ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Subsequence(Vec<usize>);

impl Subsequence {
    pub fn new(indices: Vec<usize>) -> Result<Self, ScheduleError> {
        if indices.first() == Some(&0) || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScheduleError::NotIncreasing);
        }
        Ok(Self(indices))
    }

    /// `1, 2, ..., len`.
    pub fn identity(len: usize) -> Self {
        Self((1..=len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for Subsequence {
    type Error = ScheduleError;
    fn try_from(v: Vec<usize>) -> Result<Self, ScheduleError> {
        Subsequence::new(v)
    }
}

impl From<Subsequence> for Vec<usize> {
    fn from(s: Subsequence) -> Vec<usize> {
        s.0
    }
}

/// An infinite subsequence described by a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SubsequenceRule {
    /// `n_k = start + (k - 1) * step`.
    Every { start: usize, step: usize },
    /// Finitely many listed indices.
    Explicit { indices: Subsequence },
}

impl SubsequenceRule {
    pub fn every(start: usize, step: usize) -> Self {
        SubsequenceRule::Every { start, step }
    }

    fn check(&self) -> Result<(), ScheduleError> {
        match self {
            SubsequenceRule::Every { start, step } if *start == 0 || *step == 0 => Err(
                ScheduleError::InvalidParameter("subsequence start and step must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, n: usize) -> bool {
        match self {
            SubsequenceRule::Every { start, step } => n >= *start && (n - start) % step == 0,
            SubsequenceRule::Explicit { indices } => indices.0.binary_search(&n).is_ok(),
        }
    }

    /// `N(n) = max{k : n_k <= n}`, zero when no index is reached yet.
    pub fn count_upto(&self, n: usize) -> usize {
        match self {
            SubsequenceRule::Every { start, step } => {
                if n < *start {
                    0
                } else {
                    (n - start) / step + 1
                }
            }
            SubsequenceRule::Explicit { indices } => indices.0.partition_point(|&i| i <= n),
        }
    }

    /// `n_k` for `k >= 1`.
    pub fn nth(&self, k: usize) -> Option<usize> {
        if k == 0 {
            return None;
        }
        match self {
            SubsequenceRule::Every { start, step } => Some(start + (k - 1) * step),
            SubsequenceRule::Explicit { indices } => indices.0.get(k - 1).copied(),
        }
    }

    /// The first `len` indices (fewer for short explicit lists).
    pub fn take(&self, len: usize) -> Subsequence {
        Subsequence((1..=len).map_while(|k| self.nth(k)).collect())
    }
}

/// Engine state an adaptive value depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveInput {
    /// `t_{n+1}`.
    pub t_next: f64,
    /// `||f_n||` for perturbations, `E_n` for errors.
    pub magnitude: f64,
}

/// `3^{-p} (64 (8 gamma)^{p/q})^{-1}`, the constant of the adaptive rate
/// formulas `delta_n = t_{n+1}^p ||f_n||^p K` and `eta_n = t_{n+1}^p E_n^p K`.
pub fn adaptive_constant(space: &SpaceSpec) -> f64 {
    let (p, q, gamma) = (space.p(), space.q(), space.gamma());
    3f64.powf(-p) / (64.0 * (8.0 * gamma).powf(p / q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant {
        value: f64,
    },
    /// `scale * max(n, 1)^exponent`.
    Power {
        exponent: f64,
        scale: f64,
    },
    /// `scale * ratio^n`.
    Geometric {
        ratio: f64,
        scale: f64,
    },
    /// Explicit terms; the first entry is the first term of the sequence.
    Scripted {
        values: Vec<f64>,
    },
    /// `on` along the subsequence, `off` elsewhere.
    Switched {
        indices: SubsequenceRule,
        on: Box<Schedule>,
        off: Box<Schedule>,
    },
    /// Adaptive rate formula along the subsequence (and at `n = 0` for
    /// perturbations), `off` elsewhere.
    AdaptiveRate {
        indices: SubsequenceRule,
        off: Box<Schedule>,
    },
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    pub fn power(exponent: f64, scale: f64) -> Self {
        Schedule::Power { exponent, scale }
    }

    pub fn geometric(ratio: f64, scale: f64) -> Self {
        Schedule::Geometric { ratio, scale }
    }

    pub fn scripted(values: Vec<f64>) -> Self {
        Schedule::Scripted { values }
    }

    pub fn adaptive(indices: SubsequenceRule, off: Schedule) -> Self {
        Schedule::AdaptiveRate {
            indices,
            off: Box::new(off),
        }
    }

    pub fn switched(indices: SubsequenceRule, on: Schedule, off: Schedule) -> Self {
        Schedule::Switched {
            indices,
            on: Box::new(on),
            off: Box::new(off),
        }
    }

    /// Checks construction parameters (not value ranges).
    pub fn check(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidParameter(m.to_string()));
        match self {
            Schedule::Constant { value } if !value.is_finite() => bad("constant value must be finite"),
            Schedule::Power { exponent, scale } if !exponent.is_finite() || !scale.is_finite() => {
                bad("power parameters must be finite")
            }
            Schedule::Geometric { ratio, scale } if !(ratio.is_finite() && *ratio >= 0.0) || !scale.is_finite() => {
                bad("geometric ratio must be finite and nonnegative")
            }
            Schedule::Scripted { values } if values.iter().any(|v| !v.is_finite()) => {
                bad("scripted values must be finite")
            }
            Schedule::Switched { indices, on, off } => {
                indices.check()?;
                on.check()?;
                off.check()
            }
            Schedule::AdaptiveRate { indices, off } => {
                indices.check()?;
                off.check()
            }
            _ => Ok(()),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        match self {
            Schedule::AdaptiveRate { .. } => true,
            Schedule::Switched { on, off, .. } => on.is_adaptive() || off.is_adaptive(),
            _ => false,
        }
    }

    /// Whether the value at `n` needs [`AdaptiveInput`].
    pub fn needs_state(&self, n: usize, role: Role) -> bool {
        match self {
            Schedule::AdaptiveRate { indices, off } => {
                indices.contains(n) || (n == 0 && role == Role::Perturbation) || off.needs_state(n, role)
            }
            Schedule::Switched { indices, on, off } => {
                if indices.contains(n) {
                    on.needs_state(n, role)
                } else {
                    off.needs_state(n, role)
                }
            }
            _ => false,
        }
    }

    /// The raw term at `n` without range checks.
    pub fn raw(
        &self,
        n: usize,
        role: Role,
        space: &SpaceSpec,
        state: Option<AdaptiveInput>,
    ) -> Result<f64, ScheduleError> {
        match self {
            Schedule::Constant { value } => Ok(*value),
            Schedule::Power { exponent, scale } => Ok(scale * (n.max(1) as f64).powf(*exponent)),
            Schedule::Geometric { ratio, scale } => Ok(scale * ratio.powi(n as i32)),
            Schedule::Scripted { values } => n
                .checked_sub(role.first_index())
                .and_then(|i| values.get(i))
                .copied()
                .ok_or(ScheduleError::Exhausted { role, n }),
            Schedule::Switched { indices, on, off } => {
                if indices.contains(n) {
                    on.raw(n, role, space, state)
                } else {
                    off.raw(n, role, space, state)
                }
            }
            Schedule::AdaptiveRate { indices, off } => {
                if indices.contains(n) || (n == 0 && role == Role::Perturbation) {
                    let s = state.ok_or(ScheduleError::MissingState { role, n })?;
                    let p = space.p();
                    Ok(s.t_next.powf(p) * s.magnitude.powf(p) * adaptive_constant(space))
                } else {
                    off.raw(n, role, space, state)
                }
            }
        }
    }

    /// The term at `n`, checked against the range of `role`.
    pub fn value(
        &self,
        n: usize,
        role: Role,
        space: &SpaceSpec,
        state: Option<AdaptiveInput>,
    ) -> Result<f64, ScheduleError> {
        let value = self.raw(n, role, space, state)?;
        let (ok, range) = match role {
            Role::Weakness | Role::Perturbation => ((0.0..=1.0).contains(&value), "[0, 1]"),
            Role::Error => (value >= 0.0 && value.is_finite(), "[0, inf)"),
        };
        if !ok {
            return Err(ScheduleError::OutOfRange { role, n, value, range });
        }
        Ok(value)
    }
}

/// The three driver sequences plus the declared supremum of the errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub t: Schedule,
    pub delta: Schedule,
    pub eta: Schedule,
    /// Declared `eta_0 = sup_n eta_n`; every generated error must stay below it.
    pub eta0: f64,
}

impl ScheduleSet {
    /// The exact greedy algorithm: given weakness, no perturbations or errors.
    pub fn wcga(t: Schedule) -> Self {
        Self {
            t,
            delta: Schedule::constant(0.0),
            eta: Schedule::constant(0.0),
            eta0: 0.0,
        }
    }

    /// Checks parameters and every non-adaptive value for `n <= n_max`.
    pub fn validate(&self, space: &SpaceSpec, n_max: usize) -> Result<(), ScheduleError> {
        self.t.check()?;
        self.delta.check()?;
        self.eta.check()?;
        if !(self.eta0 >= 0.0) {
            return Err(ScheduleError::InvalidParameter(format!("eta0 = {} must be nonnegative", self.eta0)));
        }
        if self.t.is_adaptive() {
            return Err(ScheduleError::InvalidParameter("weakness sequence cannot be adaptive".into()));
        }
        for n in 1..=n_max + 1 {
            self.t.value(n, Role::Weakness, space, None)?;
        }
        for n in 0..n_max {
            if !self.delta.needs_state(n, Role::Perturbation) {
                self.delta.value(n, Role::Perturbation, space, None)?;
            }
        }
        for n in 1..=n_max {
            if !self.eta.needs_state(n, Role::Error) {
                let v = self.eta.value(n, Role::Error, space, None)?;
                if v > self.eta0 + 1e-15 {
                    return Err(ScheduleError::OutOfRange {
                        role: Role::Error,
                        n,
                        value: v,
                        range: "[0, eta0]",
                    });
                }
            }
        }
        Ok(())
    }
}

/// Partial sum standing in for a divergent series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceReport {
    pub partial_sum: f64,
    pub terms: usize,
    pub exceeds: bool,
}

/// `sum_{n <= prefix} t_n^p`, or `sum_{k <= prefix} t_{n_k + 1}^p` along a
/// subsequence, compared with `threshold`.
pub fn check_divergent_sum(
    t: impl Fn(usize) -> f64,
    p: f64,
    subsequence: Option<&Subsequence>,
    prefix: usize,
    threshold: f64,
) -> DivergenceReport {
    let partial_sum: f64 = match subsequence {
        None => (1..=prefix).map(|n| t(n).powf(p)).sum(),
        Some(s) => s.indices().iter().take(prefix).map(|&n| t(n + 1).powf(p)).sum(),
    };
    let terms = subsequence.map_or(prefix, |s| s.len().min(prefix));
    DivergenceReport {
        partial_sum,
        terms,
        exceeds: partial_sum > threshold,
    }
}

/// Ratios `a_{n_k} / b_{n_k}` standing in for `a_{n_k} = o(b_{n_k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LittleOReport {
    pub ratios: Vec<(usize, f64)>,
    /// Largest ratio over the final tenth of the inspected terms.
    pub last_decile_max: f64,
    /// Indices with `b = 0 < a`.
    pub violations: Vec<usize>,
}

pub fn check_little_o(
    a: impl Fn(usize) -> f64,
    b: impl Fn(usize) -> f64,
    subsequence: &Subsequence,
    prefix: usize,
) -> Result<LittleOReport, ScheduleError> {
    if prefix < 2 {
        return Err(ScheduleError::PrefixTooShort(2));
    }
    let mut violations = Vec::new();
    let ratios: Vec<(usize, f64)> = subsequence
        .indices()
        .iter()
        .take(prefix)
        .map(|&n| {
            let (an, bn) = (a(n), b(n));
            let ratio = if an == 0.0 {
                0.0
            } else if bn == 0.0 {
                violations.push(n);
                f64::INFINITY
            } else {
                an / bn
            };
            (n, ratio)
        })
        .collect();
    let start = ratios.len() * 9 / 10;
    let last_decile_max = ratios[start..].iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(LittleOReport {
        ratios,
        last_decile_max,
        violations,
    })
}

/// Which half of the halving construction produced the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalvingBranch {
    /// `{lambda_k - 1}`: indices just before each run of fast decay.
    RunStarts,
    /// Complement of the fast-decay set.
    Complement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingExtraction {
    pub subsequence: Subsequence,
    pub branch: HalvingBranch,
    /// Maximal runs of consecutive indices with `b_n / b_{n-1} < 1/2`.
    pub runs: Vec<std::ops::RangeInclusive<usize>>,
    /// `sum_k b_{lambda_k}` over run minima.
    pub run_start_mass: f64,
    /// `sum b` over the complement of the runs.
    pub complement_mass: f64,
}

fn halving_ratio(b: &impl Fn(usize) -> f64, n: usize) -> f64 {
    let (cur, prev) = (b(n), b(n - 1));
    if prev == 0.0 {
        if cur > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        cur / prev
    }
}

/// Subsequence with `b_{n_k} / b_{n_k - 1} >= 1/2` carrying as much of the
/// mass of `b` as possible, built on indices `1..=prefix`.
///
/// A `0/0` ratio counts as fast decay. The branch is chosen by comparing the
/// run-minimum mass with the complement mass; ties go to the complement.
pub fn extract_halving_subsequence(
    b: impl Fn(usize) -> f64,
    prefix: usize,
) -> Result<HalvingExtraction, ScheduleError> {
    if prefix < 2 {
        return Err(ScheduleError::PrefixTooShort(2));
    }
    if (1..=prefix).all(|n| b(n) == 0.0) {
        return Err(ScheduleError::AllZero);
    }
    let fast: Vec<bool> = (0..=prefix)
        .map(|n| n >= 2 && halving_ratio(&b, n) < 0.5)
        .collect();
    let mut runs = Vec::new();
    let mut n = 2;
    while n <= prefix {
        if fast[n] {
            let start = n;
            while n < prefix && fast[n + 1] {
                n += 1;
            }
            runs.push(start..=n);
        }
        n += 1;
    }
    let run_start_mass: f64 = runs.iter().map(|r| b(*r.start())).sum();
    let complement: Vec<usize> = (2..=prefix).filter(|&n| !fast[n]).collect();
    let complement_mass: f64 = complement.iter().map(|&n| b(n)).sum();

    let (indices, branch) = if run_start_mass > complement_mass {
        let starts = runs.iter().map(|r| r.start() - 1).filter(|&n| n >= 2).collect();
        (starts, HalvingBranch::RunStarts)
    } else {
        (complement, HalvingBranch::Complement)
    };
    Ok(HalvingExtraction {
        subsequence: Subsequence(indices),
        branch,
        runs,
        run_start_mass,
        complement_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L1Branch {
    /// The zero set of `a` carries the mass of `b`.
    ZeroSet,
    /// Union of the half-mass selections from the ratio bands.
    Bands,
}

/// One ratio band `1/(k+1) < a/b <= 1/k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    /// Band label `k`; integral, stored as `f64` because `b/a` can exceed
    /// every machine integer.
    pub k: f64,
    pub members: Vec<usize>,
    pub mass: f64,
    /// Leading members whose `b`-mass first reaches half of `mass`.
    pub selected: Vec<usize>,
    pub selected_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Extraction {
    pub subsequence: Subsequence,
    pub branch: L1Branch,
    pub zero_set_mass: f64,
    /// Mass of `b` on indices with `a/b > 1` or `b = 0`.
    pub dominated_mass: f64,
    pub bands: Vec<Band>,
}

/// Band label of a ratio `a/b` in `(0, 1]`; infinite when `b/a` overflows.
pub fn band_of(a: f64, b: f64) -> f64 {
    // sign of a*k - b computed with a single rounding
    let above = |k: f64| a.mul_add(k, -b) > 0.0;
    let mut k = (b / a).floor().max(1.0);
    if k < 9.0e15 {
        while k > 1.0 && above(k) {
            k -= 1.0;
        }
        while !above(k + 1.0) {
            k += 1.0;
        }
    }
    k
}

/// Subsequence with `sum b_{n_k}` large and `a_{n_k} / b_{n_k}` small, built
/// on indices `1..=prefix` from the ratio bands of `a/b`.
///
/// The zero-set branch is taken when the mass of `b` where `a = 0` is at
/// least the remaining mass.
pub fn extract_l1_subsequence(
    a: impl Fn(usize) -> f64,
    b: impl Fn(usize) -> f64,
    prefix: usize,
) -> Result<L1Extraction, ScheduleError> {
    if prefix < 2 {
        return Err(ScheduleError::PrefixTooShort(2));
    }
    let mut zero_set = Vec::new();
    let mut zero_set_mass = 0.0;
    let mut dominated_mass = 0.0;
    let mut rest_mass = 0.0;
    let mut banded: Vec<(f64, usize)> = Vec::new();
    for n in 1..=prefix {
        let (an, bn) = (a(n), b(n));
        if an == 0.0 {
            zero_set.push(n);
            zero_set_mass += bn;
        } else if bn == 0.0 || an > bn {
            dominated_mass += bn;
            rest_mass += bn;
        } else {
            banded.push((band_of(an, bn), n));
            rest_mass += bn;
        }
    }
    if zero_set_mass >= rest_mass {
        return Ok(L1Extraction {
            subsequence: Subsequence(zero_set),
            branch: L1Branch::ZeroSet,
            zero_set_mass,
            dominated_mass,
            bands: Vec::new(),
        });
    }
    banded.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut bands: Vec<Band> = Vec::new();
    for (k, n) in banded {
        match bands.last_mut() {
            Some(band) if band.k == k => band.members.push(n),
            _ => bands.push(Band {
                k,
                members: vec![n],
                mass: 0.0,
                selected: Vec::new(),
                selected_mass: 0.0,
            }),
        }
    }
    let mut out = Vec::new();
    for band in &mut bands {
        band.mass = band.members.iter().map(|&n| b(n)).sum();
        for &n in &band.members {
            if band.selected_mass >= 0.5 * band.mass && !band.selected.is_empty() {
                break;
            }
            band.selected.push(n);
            band.selected_mass += b(n);
        }
        out.extend_from_slice(&band.selected);
    }
    out.sort_unstable();
    Ok(L1Extraction {
        subsequence: Subsequence(out),
        branch: L1Branch::Bands,
        zero_set_mass,
        dominated_mass,
        bands,
    })
}
