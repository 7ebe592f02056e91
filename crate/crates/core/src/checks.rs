//! Property suites behind the `check` command. Each line reports one
//! invariant with its observed margin; oracles here are independent of the
//! routines under test (grid searches, normal equations, closed forms).

use crate::dictionary::Dictionary;
use crate::engine::{self, Problem, RealizationPolicy, RunOptions, Trace, Verdict};
use crate::projection::{best_approximation, ProjectionProblem};
use crate::scenarios::{self, Certificate, NecessityInstance, RATE_PRESETS};
use crate::schedule::{self, Schedule, ScheduleSet, Subsequence};
use crate::space::{self, SpaceSpec, Vector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SUITES: [&str; 6] = ["duality", "modulus", "rates", "divergence", "lemmas", "bounds"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}/{}: {}", self.suite, self.name, self.detail)
    }
}

fn line(suite: &'static str, name: impl Into<String>, passed: bool, detail: String) -> CheckLine {
    CheckLine {
        suite,
        name: name.into(),
        passed,
        detail,
    }
}

/// Runs one suite, or all of them for `"all"`; `None` for unknown names.
pub fn run_suite(name: &str) -> Option<Vec<CheckLine>> {
    Some(match name {
        "duality" => duality(),
        "modulus" => modulus(),
        "rates" => rates(),
        "divergence" => divergence(),
        "lemmas" => lemmas(),
        "bounds" => bounds(),
        "all" => SUITES.iter().flat_map(|s| run_suite(s).expect("known suite")).collect(),
        _ => return None,
    })
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    Vector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect()).expect("finite samples")
}

pub fn duality() -> Vec<CheckLine> {
    let mut out = Vec::new();
    for (i, r) in [1.5, 2.0, 3.0, 4.0].into_iter().enumerate() {
        let s = SpaceSpec::new(r, 64).expect("valid exponent");
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let (mut worst_value, mut worst_norm) = (0.0_f64, 0.0_f64);
        for _ in 0..1000 {
            let f = gaussian_vector(&mut rng, 64).scaled(rng.gen_range(0.01..100.0));
            let nf = space::norm(&f, &s).expect("dims agree");
            let big_f = space::norming_functional(&f, &s).expect("nonzero");
            worst_value = worst_value.max((space::apply(&big_f, &f).expect("dims agree") - nf).abs() / nf);
            worst_norm = worst_norm.max((space::dual_norm(&big_f, &s).expect("dims agree") - 1.0).abs());
        }
        out.push(line(
            "duality",
            format!("norming_functional_r{r}"),
            worst_value <= 1e-9 && worst_norm <= 1e-9,
            format!("max |F(f)-||f|||/||f|| = {worst_value:.2e}, max |‖F‖-1| = {worst_norm:.2e}"),
        ));
    }

    // least squares via normal equations for r = 2
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let s = SpaceSpec::new(2.0, 64).expect("valid");
    let mut worst = 0.0_f64;
    for n in [1, 4, 16, 32] {
        let basis: Vec<Vector> = (0..n).map(|_| gaussian_vector(&mut rng, 64)).collect();
        let f = gaussian_vector(&mut rng, 64);
        let proj = best_approximation(&ProjectionProblem::new(&f, &basis, &s)).expect("solvable");
        let a = DMatrix::from_fn(64, n, |i, j| basis[j][i]);
        let b = DVector::from_column_slice(f.coords());
        let x = (a.transpose() * &a).cholesky().expect("full rank").solve(&(a.transpose() * &b));
        let e = (b - a * x).norm();
        worst = worst.max((proj.error - e).abs());
    }
    out.push(line(
        "duality",
        "projection_least_squares",
        worst <= 1e-9,
        format!("max |E - E_ls| = {worst:.2e}"),
    ));
    out
}

pub fn modulus() -> Vec<CheckLine> {
    let mut out = Vec::new();
    for r in [1.5, 2.0, 3.0, 4.0] {
        let s = SpaceSpec::new(r, 16).expect("valid exponent");
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_hilbert = 0.0_f64;
        for (k, u) in [0.01, 0.05, 0.1, 0.5, 1.0].into_iter().enumerate() {
            let est = space::empirical_modulus(u, &s, 10_000, 500 + k as u64);
            worst_excess = worst_excess.max(est - s.gamma() * u.powf(s.q()));
            if r == 2.0 {
                worst_hilbert = worst_hilbert.max((est - ((1.0 + u * u).sqrt() - 1.0)).abs());
            }
        }
        let mut passed = worst_excess <= 1e-9;
        let mut detail = format!("max rho_est - gamma u^q = {worst_excess:.3e}");
        if r == 2.0 {
            passed &= worst_hilbert <= 1e-6;
            detail.push_str(&format!(", max |rho_est - (sqrt(1+u^2)-1)| = {worst_hilbert:.2e}"));
        }
        out.push(line("modulus", format!("power_type_r{r}"), passed, detail));
    }
    out
}

/// Minimum of a unimodal function of `x > 0` by log-grid scan and zoom.
pub fn grid_minimum(g: impl Fn(f64) -> f64, lo_exp: f64, hi_exp: f64) -> f64 {
    let (mut lo, mut hi) = (lo_exp, hi_exp);
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let steps = 2000;
        let h = (hi - lo) / steps as f64;
        let mut arg = lo;
        for i in 0..=steps {
            let e = lo + h * i as f64;
            let v = g(10f64.powf(e));
            if v < best {
                best = v;
                arg = e;
            }
        }
        lo = arg - 2.0 * h;
        hi = arg + 2.0 * h;
    }
    best
}

pub fn lemmas() -> Vec<CheckLine> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut worst_phi, mut worst_psi) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let a: f64 = rng.gen_range(0.1..10.0);
        let b: f64 = rng.gen_range(0.1..10.0);
        let q: f64 = rng.gen_range(1.1..2.0);
        let phi = space::phi_infimum(a, b, q).expect("positive").value;
        let phi_grid = grid_minimum(|m| a * m.powf(q - 1.0) + b / m, -8.0, 8.0);
        worst_phi = worst_phi.max((phi - phi_grid).abs() / phi_grid.abs());
        let psi = space::psi_infimum(a, b, q).expect("positive").value;
        let psi_grid = grid_minimum(|l| a * l.powf(q) - b * l, -8.0, 8.0);
        worst_psi = worst_psi.max((psi - psi_grid).abs() / psi_grid.abs());
    }
    out.push(line(
        "lemmas",
        "closed_form_infima",
        worst_phi <= 1e-6 && worst_psi <= 1e-6,
        format!("max rel err phi {worst_phi:.2e}, psi {worst_psi:.2e}"),
    ));

    let prefix = 10_000;
    type Seq = Box<dyn Fn(usize) -> f64>;
    let fixtures: Vec<(&str, Seq, Seq)> = vec![
        (
            "inverse_square_over_harmonic",
            Box::new(|n| 1.0 / (n as f64 * n as f64)),
            Box::new(|n| 1.0 / n as f64),
        ),
        (
            "geometric_over_alternating",
            Box::new(|n| 8f64.powi(-(n as i32))),
            Box::new(|n| if n % 2 == 0 { 1.0 } else { 4f64.powi(-(n as i32)) }),
        ),
        (
            "power_over_power",
            Box::new(|n| (n as f64).powf(-1.5)),
            Box::new(|n| (n as f64).powf(-0.5)),
        ),
    ];
    for (name, a, b) in &fixtures {
        let tail_ratio = |s: &Subsequence| {
            let idx = s.indices();
            idx[idx.len() * 9 / 10..].iter().map(|&n| a(n) / b(n)).fold(0.0, f64::max)
        };
        let halving = schedule::extract_halving_subsequence(b, prefix);
        let (passed, detail) = match &halving {
            Ok(h) => {
                let min_ratio = h
                    .subsequence
                    .indices()
                    .iter()
                    .map(|&n| b(n) / b(n - 1))
                    .fold(f64::INFINITY, f64::min);
                let tail = tail_ratio(&h.subsequence);
                (
                    !h.subsequence.is_empty() && min_ratio >= 0.5 && tail < 1e-2,
                    format!(
                        "{} indices, min b_n/b_(n-1) = {min_ratio:.3}, tail a/b = {tail:.2e}",
                        h.subsequence.len()
                    ),
                )
            }
            Err(e) => (false, e.to_string()),
        };
        out.push(line("lemmas", format!("halving_{name}"), passed, detail));

        let l1 = schedule::extract_l1_subsequence(a, b, prefix);
        let (passed, detail) = match &l1 {
            Ok(x) => {
                let bands_ok = x.bands.iter().all(|band| band.selected_mass >= 0.5 * band.mass);
                let tail = tail_ratio(&x.subsequence);
                (
                    !x.subsequence.is_empty() && bands_ok && tail < 1e-2,
                    format!(
                        "{:?} branch, {} indices, {} bands, tail a/b = {tail:.2e}",
                        x.branch,
                        x.subsequence.len(),
                        x.bands.len()
                    ),
                )
            }
            Err(e) => (false, e.to_string()),
        };
        out.push(line("lemmas", format!("l1_bands_{name}"), passed, detail));
    }

    let harmonic: f64 = (1..=10_000).rev().map(|k| 1.0 / k as f64).sum();
    let div = schedule::check_divergent_sum(|k| (k as f64).powf(-0.5), 2.0, None, 10_000, 9.0);
    out.push(line(
        "lemmas",
        "divergent_sum_harmonic",
        div.exceeds && (div.partial_sum - harmonic).abs() < 1e-9,
        format!("partial sum {:.10}", div.partial_sum),
    ));
    let lo = schedule::check_little_o(
        |k| 1.0 / (k as f64 * k as f64),
        |k| 1.0 / k as f64,
        &Subsequence::identity(1000),
        1000,
    );
    let (passed, detail) = match lo {
        Ok(rep) => (
            rep.last_decile_max <= 1.0 / 900.0 && rep.violations.is_empty(),
            format!("last decile max ratio {:.3e}", rep.last_decile_max),
        ),
        Err(e) => (false, e.to_string()),
    };
    out.push(line("lemmas", "little_o_ratio_tail", passed, detail));
    out
}

fn flat_wcga(m: usize) -> Result<Trace, String> {
    let s = SpaceSpec::new(2.0, m).map_err(|e| e.to_string())?;
    let problem = Problem {
        target: Vector::new(vec![1.0 / m as f64; m]).map_err(|e| e.to_string())?,
        dictionary: Dictionary::standard_basis(m),
        space: s,
        schedules: ScheduleSet::wcga(Schedule::constant(1.0)),
    };
    let options = RunOptions::new(m - 1, 0.0).with_certificate(Certificate::CONVEX_HULL);
    engine::run(&problem, &mut RealizationPolicy::default(), &options).map_err(|e| e.to_string())
}

pub fn rates() -> Vec<CheckLine> {
    let mut out = Vec::new();
    let m = 256;
    match flat_wcga(m) {
        Ok(trace) => {
            let c = 8.0 * 0.5f64.sqrt();
            let (mut dev, mut ratio) = (0.0_f64, 0.0_f64);
            for r in &trace.records {
                let exact = ((m - r.n) as f64).sqrt() / m as f64;
                dev = dev.max((r.residual_norm - exact).abs());
                ratio = ratio.max(r.residual_norm / (c * (1.0 + r.n as f64).powf(-0.5)));
            }
            out.push(line(
                "rates",
                "wcga_flat_l2",
                dev <= 1e-8 && ratio <= 1.0 && trace.records.len() == m - 1,
                format!("max |obs - sqrt(m-n)/m| = {dev:.2e}, max obs/bound = {ratio:.4}"),
            ));
        }
        Err(e) => out.push(line("rates", "wcga_flat_l2", false, e)),
    }
    for name in RATE_PRESETS {
        match scenarios::rate_preset(name, None) {
            Ok(rep) => out.push(line(
                "rates",
                name,
                rep.violations.is_empty(),
                format!(
                    "{} steps, {} violations, max obs/bound = {:.4}",
                    rep.rows.len(),
                    rep.violations.len(),
                    rep.max_ratio()
                ),
            )),
            Err(e) => out.push(line("rates", name, false, e.to_string())),
        }
    }
    for r in [1.5, 2.0, 3.0] {
        let mut failures = Vec::new();
        let mut worst = 0;
        for seed in 0..20 {
            match scenarios::convergence_regime_run(r, 32, seed, 2000, 1e-3) {
                Ok(trace) => match trace.verdict {
                    Verdict::Converged { step, .. } => worst = worst.max(step),
                    _ => failures.push(seed),
                },
                Err(_) => failures.push(seed),
            }
        }
        out.push(line(
            "rates",
            format!("convergence_regime_r{r}"),
            failures.is_empty(),
            format!("20 seeds, slowest reached 1e-3 at step {worst}, failing seeds {failures:?}"),
        ));
    }
    out
}

pub fn divergence() -> Vec<CheckLine> {
    let mut out = Vec::new();
    let necessity = NecessityInstance::default_preset(100).and_then(|inst| scenarios::necessity_scenario(&inst, 100));
    out.push(match necessity {
        Ok(rep) => line(
            "divergence",
            "necessity_default",
            rep.min_margin >= -1e-9 && rep.min_norm_q >= 1.0 && rep.trace.records.len() == 100,
            format!(
                "min margin {:.2e}, min ||f_n||_q^q {:.6}, closed-form deviation {:.2e}",
                rep.min_margin, rep.min_norm_q, rep.max_closed_form_deviation
            ),
        ),
        Err(e) => line("divergence", "necessity_default", false, e.to_string()),
    });
    out.push(
        match scenarios::necessity_finite_scenario(2.0, 256, Schedule::power(-1.0, 1.0), 200) {
            Ok(trace) => {
                let min = trace.records.iter().map(|r| r.residual_norm).fold(f64::INFINITY, f64::min);
                line("divergence", "necessity_finite", min >= 1.0, format!("min residual {min:.6}"))
            }
            Err(e) => line("divergence", "necessity_finite", false, e.to_string()),
        },
    );
    out.push(match scenarios::unbounded_eta_preset(200) {
        Ok(rep) => {
            let worst = rep.spike_deviations.iter().fold(0.0_f64, |a, &b| a.max(b));
            line(
                "divergence",
                "unbounded_eta",
                worst <= 1e-12 && !rep.spikes.is_empty(),
                format!("{} spikes, max | ||f_nk|| - ||f|| | = {worst:.2e}", rep.spikes.len()),
            )
        }
        Err(e) => line("divergence", "unbounded_eta", false, e.to_string()),
    });
    out.push(match scenarios::nonsmooth_scenario(2, 50) {
        Ok(trace) => {
            let worst = trace.records.iter().map(|r| (r.residual_norm - 1.0).abs()).fold(0.0, f64::max);
            line(
                "divergence",
                "nonsmooth_trap",
                worst == 0.0 && trace.records.len() == 50,
                format!("max |residual - 1| = {worst:.2e} over {} steps", trace.records.len()),
            )
        }
        Err(e) => line("divergence", "nonsmooth_trap", false, e.to_string()),
    });
    out
}

/// Largest `E_{n+1} - bound_n` over a certified trace.
pub fn bound_excess(trace: &Trace) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (n, rec) in trace.records.iter().enumerate() {
        if let Some(b) = trace.bound_after(n) {
            let excess = rec.e_n - b;
            worst = Some(worst.map_or(excess, |w: f64| w.max(excess)));
        }
    }
    worst
}

pub fn bounds() -> Vec<CheckLine> {
    let mut out = Vec::new();
    let mut traces: Vec<(String, Result<Trace, String>)> = vec![("wcga_flat_l2".into(), flat_wcga(256))];
    for name in RATE_PRESETS {
        traces.push((
            name.to_string(),
            scenarios::rate_preset(name, None).map(|r| r.trace).map_err(|e| e.to_string()),
        ));
    }
    for r in [1.5, 2.0, 3.0] {
        for seed in 0..5 {
            traces.push((
                format!("convergence_r{r}_seed{seed}"),
                scenarios::convergence_regime_run(r, 32, seed, 2000, 1e-3).map_err(|e| e.to_string()),
            ));
        }
    }
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut audited = 0;
    for (name, trace) in &traces {
        match trace.as_ref().ok().and_then(bound_excess) {
            Some(excess) => {
                audited += 1;
                worst = worst.max(excess);
                if excess > 1e-8 {
                    failures.push(name.clone());
                }
            }
            None => failures.push(name.clone()),
        }
    }
    out.push(line(
        "bounds",
        "next_error_audit",
        failures.is_empty(),
        format!("{audited} certified traces, max E_(n+1) - bound = {worst:.3e}, failing {failures:?}"),
    ));

    let s = SpaceSpec::new(2.0, 2).expect("valid");
    let ctx = scenarios::BoundContext::new(Certificate::CONVEX_HULL, s, 1.0).expect("valid context");
    let mut dev = 0.0_f64;
    for d in [0.001, 0.01, 0.1] {
        let b = scenarios::beta(&ctx, d, 0.0).expect("valid");
        dev = dev.max((b - 4.0 * d.sqrt()).abs());
    }
    out.push(line(
        "bounds",
        "beta_closed_form_l2",
        dev <= 1e-12,
        format!("max |beta - 4 sqrt(delta)| = {dev:.2e}"),
    ));

    let mut monotone = true;
    let grid: Vec<f64> = (0..10).map(|i| 0.002 * i as f64).collect();
    for r in [1.5, 2.0, 3.0] {
        let s = SpaceSpec::new(r, 2).expect("valid");
        let ctx = scenarios::BoundContext::new(Certificate::CONVEX_HULL, s, 1.0).expect("valid context");
        let eval = |d: f64, e: f64| {
            scenarios::bound_e_next(
                0.3,
                &ctx,
                scenarios::BoundStep {
                    t_next: 0.7,
                    delta: d,
                    eta: e,
                },
            )
            .expect("positive residual")
        };
        for &x in &grid {
            for w in grid.windows(2) {
                monotone &= eval(x, w[1]) >= eval(x, w[0]) && eval(w[1], x) >= eval(w[0], x);
            }
        }
    }
    out.push(line(
        "bounds",
        "bound_monotone_in_tolerances",
        monotone,
        "10x10 grid per exponent".into(),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_minimum_finds_parabola() {
        let m = grid_minimum(|x| (x - 3.0) * (x - 3.0) + 1.0, -3.0, 3.0);
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope").is_none());
    }

    #[test]
    fn cheap_suites_pass() {
        for s in ["duality", "lemmas", "divergence"] {
            for l in run_suite(s).unwrap() {
                assert!(l.passed, "{l}");
            }
        }
    }
}
