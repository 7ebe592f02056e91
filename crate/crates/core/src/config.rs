//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! n_max = 100
//! conv_tol = 1e-10
//! output = "trace.csv"
//!
//! [space]
//! r = 2.0
//! dim = 3
//!
//! [target]
//! kind = "explicit"          # explicit | convex | random
//! coords = [0.5, 0.3, 0.2]
//!
//! [schedules]
//! eta0 = 0.0
//! t = { kind = "constant", value = 1.0 }
//! delta = { kind = "constant", value = 0.0 }
//! eta = { kind = "constant", value = 0.0 }
//!
//! [policy]
//! tie_break = "lowest_index" # lowest_index | greedy
//! utilization = 1.0
//! ```
//!
//! A top-level `preset = "<name>"` runs a named scenario instead; only
//! `n_max`, `output` and `seed` are read alongside it.

use crate::dictionary::{Dictionary, DictionaryError, TieBreak};
use crate::engine::{Problem, RunOptions};
use crate::scenarios::{self, Certificate};
use crate::schedule::{Schedule, ScheduleError, ScheduleSet};
use crate::space::{SpaceError, SpaceSpec, Vector};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

fn invalid(field: &'static str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub n_max: Option<usize>,
    pub conv_tol: Option<f64>,
    pub output: Option<PathBuf>,
    pub space: Option<SpaceConfig>,
    #[serde(default)]
    pub dictionary: DictionaryConfig,
    pub target: Option<TargetConfig>,
    pub schedules: Option<SchedulesConfig>,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub certificate: Option<CertificateConfig>,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub r: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionaryConfig {
    #[default]
    StandardBasis,
    Explicit {
        elements: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Explicit { coords: Vec<f64> },
    /// Convex combination of the dictionary elements.
    Convex { weights: Vec<f64> },
    /// Gaussian coordinates from the run seed, scaled to unit norm.
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesConfig {
    pub t: Schedule,
    #[serde(default = "zero_schedule")]
    pub delta: Schedule,
    #[serde(default = "zero_schedule")]
    pub eta: Schedule,
    #[serde(default)]
    pub eta0: Option<f64>,
}

fn zero_schedule() -> Schedule {
    Schedule::constant(0.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default = "full_utilization")]
    pub utilization: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tie_break: TieBreak::default(),
            utilization: 1.0,
        }
    }
}

fn full_utilization() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub a: f64,
    #[serde(default)]
    pub epsilon: f64,
}

/// Parameter grid; each listed axis replaces the corresponding schedule by
/// constants. An axis given as an empty list yields an empty grid.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub t: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    /// Sets `delta` and `eta` to the same constant.
    pub delta_eta: Option<Vec<f64>>,
}

pub const MAX_SWEEP_CELLS: usize = 10_000;

/// A fully built experiment.
#[derive(Debug, Clone)]
pub enum Experiment {
    Preset { name: String, n_max: Option<usize> },
    Run(RunSpec),
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub problem: Problem,
    pub options: RunOptions,
    pub tie_break: TieBreak,
    pub utilization: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_toml(&text)
    }

    /// Validates every field and assembles the experiment; `seed` overrides
    /// the configured seed.
    pub fn build(&self, seed: Option<u64>) -> Result<Experiment, ConfigError> {
        if let Some(name) = &self.preset {
            if !scenarios::PRESETS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownPreset(name.clone()));
            }
            if self.n_max == Some(0) {
                return Err(invalid("n_max", "must be at least 1"));
            }
            return Ok(Experiment::Preset {
                name: name.clone(),
                n_max: self.n_max,
            });
        }
        let seed = seed.or(self.seed).unwrap_or(0);
        let sc = self.space.ok_or(ConfigError::Missing("space"))?;
        let space = SpaceSpec::new(sc.r, sc.dim).map_err(|e| invalid("space", e))?;
        let dictionary = match &self.dictionary {
            DictionaryConfig::StandardBasis => Dictionary::standard_basis(sc.dim),
            DictionaryConfig::Explicit { elements } => {
                let elements = elements
                    .iter()
                    .map(|e| Vector::new(e.clone()))
                    .collect::<Result<Vec<_>, SpaceError>>()
                    .map_err(|e| invalid("dictionary", e))?;
                Dictionary::explicit(elements, &space).map_err(|e: DictionaryError| invalid("dictionary", e))?
            }
        };
        let target = match self.target.as_ref().ok_or(ConfigError::Missing("target"))? {
            TargetConfig::Explicit { coords } => {
                let v = Vector::new(coords.clone()).map_err(|e| invalid("target", e))?;
                if v.dim() != sc.dim {
                    return Err(invalid("target", format!("{} coordinates for dimension {}", v.dim(), sc.dim)));
                }
                if v.is_zero() {
                    return Err(invalid("target", "target must be nonzero"));
                }
                v
            }
            TargetConfig::Convex { weights } => {
                crate::dictionary::convex_hull_element(weights, &dictionary).map_err(|e| invalid("target", e))?
            }
            TargetConfig::Random => scenarios::random_target(&space, seed),
        };
        let sched = self.schedules.as_ref().ok_or(ConfigError::Missing("schedules"))?;
        let schedules = ScheduleSet {
            t: sched.t.clone(),
            delta: sched.delta.clone(),
            eta: sched.eta.clone(),
            eta0: sched.eta0.unwrap_or_else(|| implied_eta0(&sched.eta)),
        };
        let n_max = self.n_max.ok_or(ConfigError::Missing("n_max"))?;
        if n_max == 0 {
            return Err(invalid("n_max", "must be at least 1"));
        }
        schedules.validate(&space, n_max).map_err(schedule_field)?;
        let conv_tol = self.conv_tol.unwrap_or(1e-10);
        if !(conv_tol >= 0.0) {
            return Err(invalid("conv_tol", "must be nonnegative"));
        }
        let u = self.policy.utilization;
        if !(0.0..=1.0).contains(&u) {
            return Err(invalid("policy.utilization", format!("{u} outside [0, 1]")));
        }
        let certificate = match (&self.certificate, &self.target, &dictionary) {
            (Some(c), _, _) => Some(Certificate {
                a: c.a,
                epsilon: c.epsilon,
            }),
            (None, Some(TargetConfig::Convex { .. }), _) => Some(Certificate::CONVEX_HULL),
            (None, _, Dictionary::StandardBasis { .. }) => Some(Certificate {
                a: target.coords().iter().map(|c| c.abs()).sum(),
                epsilon: 0.0,
            }),
            _ => None,
        };
        if let Some(c) = certificate {
            if !(c.a > 0.0) || !(c.epsilon >= 0.0) {
                return Err(invalid("certificate", "needs a > 0 and epsilon >= 0"));
            }
        }
        let mut options = RunOptions::new(n_max, conv_tol);
        options.certificate = certificate.filter(|_| space.is_smooth());
        Ok(Experiment::Run(RunSpec {
            problem: Problem {
                target,
                dictionary,
                space,
                schedules,
            },
            options,
            tie_break: self.policy.tie_break,
            utilization: u,
        }))
    }
}

/// The largest constant error term, for configs that leave `eta0` implicit.
fn implied_eta0(eta: &Schedule) -> f64 {
    match eta {
        Schedule::Constant { value } => *value,
        Schedule::Scripted { values } => values.iter().fold(0.0, |a, &b| a.max(b)),
        Schedule::Power { exponent, scale } if *exponent <= 0.0 => *scale,
        Schedule::Geometric { ratio, scale } if *ratio <= 1.0 => *scale,
        Schedule::Switched { on, off, .. } => implied_eta0(on).max(implied_eta0(off)),
        Schedule::AdaptiveRate { off, .. } => implied_eta0(off).max(1.0),
        _ => f64::INFINITY,
    }
}

fn schedule_field(e: ScheduleError) -> ConfigError {
    let field = match &e {
        ScheduleError::OutOfRange { role, .. } | ScheduleError::Exhausted { role, .. } => match role {
            crate::schedule::Role::Weakness => "schedules.t",
            crate::schedule::Role::Perturbation => "schedules.delta",
            crate::schedule::Role::Error => "schedules.eta",
        },
        _ => "schedules",
    };
    invalid(field, e)
}

/// One grid cell: the constants substituted into the schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub t: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

impl SweepConfig {
    /// Cartesian product in row-major order of `t`, `delta`, `eta`,
    /// `delta_eta`.
    pub fn cells(&self) -> Result<Vec<Cell>, ConfigError> {
        let axis = |v: &Option<Vec<f64>>| -> Vec<Option<f64>> {
            match v {
                None => vec![None],
                Some(values) => values.iter().copied().map(Some).collect(),
            }
        };
        let (ts, ds, es, des) = (axis(&self.t), axis(&self.delta), axis(&self.eta), axis(&self.delta_eta));
        let total = ts.len() * ds.len() * es.len() * des.len();
        if total > MAX_SWEEP_CELLS {
            return Err(invalid("sweep", format!("{total} cells exceed the limit of {MAX_SWEEP_CELLS}")));
        }
        if self.delta_eta.is_some() && (self.delta.is_some() || self.eta.is_some()) {
            return Err(invalid("sweep", "delta_eta cannot be combined with delta or eta axes"));
        }
        let mut cells = Vec::with_capacity(total);
        for &t in &ts {
            for &d in &ds {
                for &e in &es {
                    for &de in &des {
                        cells.push(Cell {
                            t,
                            delta: d.or(de),
                            eta: e.or(de),
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

impl Cell {
    /// `spec` with this cell's constants substituted and re-validated.
    pub fn apply(&self, spec: &RunSpec) -> Result<RunSpec, ConfigError> {
        let mut out = spec.clone();
        let s = &mut out.problem.schedules;
        if let Some(t) = self.t {
            s.t = Schedule::constant(t);
        }
        if let Some(d) = self.delta {
            s.delta = Schedule::constant(d);
        }
        if let Some(e) = self.eta {
            s.eta = Schedule::constant(e);
            s.eta0 = s.eta0.max(e);
        }
        s.validate(&out.problem.space, out.options.n_max).map_err(schedule_field)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
n_max = 10
conv_tol = 1e-12
[space]
r = 2.0
dim = 3
[target]
kind = "explicit"
coords = [0.5, 0.3, 0.2]
[schedules]
t = { kind = "constant", value = 1.0 }
"#;

    #[test]
    fn minimal_config_builds() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        match cfg.build(None).unwrap() {
            Experiment::Run(spec) => {
                assert_eq!(spec.options.n_max, 10);
                assert_eq!(spec.problem.schedules.eta0, 0.0);
                assert_eq!(spec.options.certificate.unwrap().a, 1.0);
            }
            _ => panic!("expected a run"),
        }
    }

    #[test]
    fn weakness_out_of_range_names_field() {
        let text = MINIMAL.replace("value = 1.0", "value = 1.5");
        let err = RunConfig::from_toml(&text).unwrap().build(None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("schedules.t") && msg.contains("weakness"), "{msg}");
    }

    #[test]
    fn unknown_fields_and_presets_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let cfg = RunConfig::from_toml("preset = \"nope\"").unwrap();
        assert!(matches!(cfg.build(None), Err(ConfigError::UnknownPreset(_))));
        let cfg = RunConfig::from_toml("preset = \"nonsmooth\"").unwrap();
        assert!(matches!(cfg.build(None), Ok(Experiment::Preset { .. })));
    }

    #[test]
    fn sweep_cells() {
        let sweep = SweepConfig {
            t: Some(vec![0.5, 1.0]),
            delta_eta: Some(vec![0.0, 0.1, 0.2]),
            ..SweepConfig::default()
        };
        let cells = sweep.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1], Cell { t: Some(0.5), delta: Some(0.1), eta: Some(0.1) });
        let empty = SweepConfig {
            delta: Some(vec![]),
            ..SweepConfig::default()
        };
        assert!(empty.cells().unwrap().is_empty());
        assert_eq!(SweepConfig::default().cells().unwrap().len(), 1);
    }

    #[test]
    fn adaptive_schedule_parses() {
        let text = MINIMAL.replace(
            "t = { kind = \"constant\", value = 1.0 }",
            "t = { kind = \"constant\", value = 1.0 }\neta0 = 0.01\ndelta = { kind = \"adaptive_rate\", indices = { rule = \"every\", start = 1, step = 1 }, off = { kind = \"constant\", value = 0.0 } }",
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert!(cfg.build(None).is_ok());
    }
}
