//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every derived quantity is recomputed here from first
//! principles rather than read back from the library's own checks.

use awcga::dictionary::Dictionary;
use awcga::engine::{self, Problem, RealizationPolicy, RunOptions, Trace, Verdict};
use awcga::projection::{best_approximation, ProjectionProblem};
use awcga::scenarios::{self, Certificate, NecessityInstance, RATE_PRESETS};
use awcga::schedule::{self, Role, Schedule, ScheduleSet};
use awcga::space::{self, SpaceSpec, Vector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::process::Command;
use std::time::Instant;

type Outcome = (bool, String);

fn lr_norm(x: &[f64], r: f64) -> f64 {
    let m = x.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.iter().map(|c| (c.abs() / m).powf(r)).sum::<f64>().powf(1.0 / r)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Minimum of a convex function of one positive variable: log-spaced scan
/// over 200 decades (minimizers reach 1e50 when q is close to 1),
/// then repeated refinement around the best point.
fn min_positive(g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-100.0_f64, 100.0_f64);
    let mut best = f64::INFINITY;
    for _ in 0..60 {
        let steps = 400;
        let h = (hi - lo) / steps as f64;
        let mut arg = lo;
        for i in 0..=steps {
            let x = lo + h * i as f64;
            let v = g(10f64.powf(x));
            if v < best {
                best = v;
                arg = x;
            }
        }
        lo = arg - 2.0 * h;
        hi = arg + 2.0 * h;
    }
    best
}

/// Minimum of a convex function on a box centred at the origin, by a
/// shrinking grid in `k <= 2` variables.
fn min_box(g: impl Fn(&[f64]) -> f64, k: usize, half_width: f64) -> f64 {
    let mut centre = vec![0.0; k];
    let mut w = half_width;
    let pts = 40;
    let mut best = g(&centre);
    for _ in 0..45 {
        let h = 2.0 * w / pts as f64;
        let mut arg = centre.clone();
        let total = (pts + 1usize).pow(k as u32);
        let mut c = vec![0.0; k];
        for idx in 0..total {
            let mut rest = idx;
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = centre[j] - w + h * (rest % (pts + 1)) as f64;
                rest /= pts + 1;
            }
            let v = g(&c);
            if v < best {
                best = v;
                arg.clone_from(&c);
            }
        }
        centre = arg;
        w = 4.0 * h;
    }
    best
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut value_err, mut norm_err) = (0.0_f64, 0.0_f64);
    for r in [1.5, 2.0, 3.0, 4.0] {
        let s = SpaceSpec::new(r, 64).unwrap();
        let rp = r / (r - 1.0);
        for _ in 0..1000 {
            let x = gaussian(&mut rng, 64);
            let nf = lr_norm(&x, r);
            let f = space::norming_functional(&Vector::new(x.clone()).unwrap(), &s).unwrap();
            let applied: f64 = f.coords().iter().zip(&x).map(|(a, b)| a * b).sum();
            value_err = value_err.max((applied - nf).abs() / nf);
            norm_err = norm_err.max((lr_norm(f.coords(), rp) - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        value_err <= 1e-9 && norm_err <= 1e-9 && secs < 5.0,
        format!("max rel |F(f) - ||f|||  {value_err:.1e}, max | ||F|| - 1 | {norm_err:.1e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut excess = f64::NEG_INFINITY;
    let mut l2_dev = 0.0_f64;
    for r in [1.5, 2.0, 3.0, 4.0] {
        let s = SpaceSpec::new(r, 16).unwrap();
        let q = r.min(2.0);
        let gamma = if r <= 2.0 { 1.0 / r } else { (r - 1.0) / 2.0 };
        for (i, u) in [0.01, 0.05, 0.1, 0.5, 1.0].into_iter().enumerate() {
            let est = space::empirical_modulus(u, &s, 10_000, 100 + i as u64);
            excess = excess.max(est - gamma * u.powf(q));
            if r == 2.0 {
                l2_dev = l2_dev.max((est - ((1.0 + u * u).sqrt() - 1.0)).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        excess <= 1e-9 && l2_dev <= 1e-6 && secs < 10.0,
        format!("max rho - gamma u^q {excess:.2e}, l2 closed-form gap {l2_dev:.1e}, {secs:.2}s"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut phi_err, mut psi_err) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let a: f64 = rng.gen_range(0.05..20.0);
        let b: f64 = rng.gen_range(0.05..20.0);
        let q: f64 = rng.gen_range(1.05..=2.0);
        let phi = space::phi_infimum(a, b, q).unwrap().value;
        let phi_grid = min_positive(|m| a * m.powf(q - 1.0) + b / m);
        phi_err = phi_err.max((phi - phi_grid).abs() / phi_grid.abs());
        let psi = space::psi_infimum(a, b, q).unwrap().value;
        let psi_grid = min_positive(|l| a * l.powf(q) - b * l);
        psi_err = psi_err.max((psi - psi_grid).abs() / psi_grid.abs());
    }
    (
        phi_err <= 1e-6 && psi_err <= 1e-6,
        format!("max rel err phi {phi_err:.1e}, psi {psi_err:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut grid_err = 0.0_f64;
    let mut instances = 0;
    while instances < 50 {
        let dim = rng.gen_range(2..=4);
        let k = rng.gen_range(1..=2.min(dim - 1));
        let r: f64 = rng.gen_range(1.2..4.0);
        let s = SpaceSpec::new(r, dim).unwrap();
        let basis: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let v = gaussian(&mut rng, dim);
                let n = lr_norm(&v, r);
                v.iter().map(|c| c / n).collect()
            })
            .collect();
        if k == 2 {
            let dot: f64 = basis[0].iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
            let n0: f64 = basis[0].iter().map(|c| c * c).sum::<f64>().sqrt();
            let n1: f64 = basis[1].iter().map(|c| c * c).sum::<f64>().sqrt();
            if (dot / (n0 * n1)).abs() > 0.95 {
                continue;
            }
        }
        let f = gaussian(&mut rng, dim);
        let objective = |c: &[f64]| {
            let res: Vec<f64> = (0..dim)
                .map(|i| f[i] - c.iter().zip(&basis).map(|(cj, b)| cj * b[i]).sum::<f64>())
                .collect();
            lr_norm(&res, r)
        };
        let oracle = min_box(objective, k, 20.0 * lr_norm(&f, r) + 1.0);
        let target = Vector::new(f.clone()).unwrap();
        let vectors: Vec<Vector> = basis.iter().map(|b| Vector::new(b.clone()).unwrap()).collect();
        let proj = best_approximation(&ProjectionProblem::new(&target, &vectors, &s)).unwrap();
        grid_err = grid_err.max((proj.error - oracle).abs());
        instances += 1;
    }

    let mut ls_err = 0.0_f64;
    let s = SpaceSpec::new(2.0, 64).unwrap();
    for k in [1, 4, 8, 16, 24, 32] {
        let cols: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut rng, 64)).collect();
        let f = gaussian(&mut rng, 64);
        let a = DMatrix::from_fn(64, k, |i, j| cols[j][i]);
        let b = DVector::from_vec(f.clone());
        let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let fitted = &a * coef;
        let e_exact = (&b - &fitted).norm();
        let target = Vector::new(f).unwrap();
        let vectors: Vec<Vector> = cols.into_iter().map(|c| Vector::new(c).unwrap()).collect();
        let proj = best_approximation(&ProjectionProblem::new(&target, &vectors, &s)).unwrap();
        ls_err = ls_err.max((proj.error - e_exact).abs());
        for (i, c) in proj.approximant.coords().iter().enumerate() {
            ls_err = ls_err.max((c - fitted[i]).abs());
        }
    }
    (
        grid_err <= 1e-5 && ls_err <= 1e-9,
        format!("50 grid instances max |E - E_grid| {grid_err:.1e}, least squares max gap {ls_err:.1e}"),
    )
}

fn flat_l2_trace(m: usize) -> Trace {
    let s = SpaceSpec::new(2.0, m).unwrap();
    let problem = Problem {
        target: Vector::new(vec![1.0 / m as f64; m]).unwrap(),
        dictionary: Dictionary::standard_basis(m),
        space: s,
        schedules: ScheduleSet::wcga(Schedule::constant(1.0)),
    };
    let options = RunOptions::new(m - 1, 0.0).with_certificate(Certificate::CONVEX_HULL);
    engine::run(&problem, &mut RealizationPolicy::default(), &options).unwrap()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let m = 256;
    let trace = flat_l2_trace(m);
    let (mut dev, mut ratio) = (0.0_f64, 0.0_f64);
    for (n, rec) in trace.records.iter().enumerate().map(|(i, r)| (i + 1, r)) {
        let res = trace.residual(n).unwrap();
        let observed = lr_norm(res.coords(), 2.0);
        dev = dev.max((observed - ((m - n) as f64).sqrt() / m as f64).abs());
        dev = dev.max((rec.residual_norm - observed).abs());
        ratio = ratio.max(observed / (8.0 * 0.5f64.sqrt() * (1.0 + n as f64).powf(-0.5)));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        trace.records.len() == m - 1 && dev <= 1e-8 && ratio <= 1.0 && secs < 30.0,
        format!("{} steps, max deviation {dev:.1e}, max obs/bound {ratio:.4}, {secs:.2}s", trace.records.len()),
    )
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in RATE_PRESETS {
        let rep = match scenarios::rate_preset(name, None) {
            Ok(r) => r,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let s = rep.trace.space;
        let (p, q) = (s.p(), s.q());
        let gamma = if s.r() <= 2.0 { 1.0 / s.r() } else { (s.r() - 1.0) / 2.0 };
        // The smallest admissible eta_0 is the largest error actually used,
        // which gives the tightest version of the bound.
        let eta0 = rep.trace.records.iter().map(|r| r.eta_applied).fold(0.0, f64::max);
        let c = 8.0 * (1.0 + eta0) * gamma.powf(1.0 / q);
        let mut violations = 0;
        let mut worst = 0.0_f64;
        for rec in &rep.trace.records {
            // t = 1 on every subsequence index: the sum counts indices up to n
            let count = if name == "rate_l2_gap2" { rec.n / 2 } else { rec.n };
            let bound = c * (1.0 + count as f64).powf(-1.0 / p);
            let observed = lr_norm(rep.trace.residual(rec.n).unwrap().coords(), s.r());
            worst = worst.max(observed / bound);
            if observed > bound {
                violations += 1;
            }
        }
        ok &= violations == 0 && rep.trace.records.len() == 255;
        parts.push(format!("{name}: {violations} violations, max ratio {worst:.3}"));
    }
    (ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let inst = match NecessityInstance::default_preset(100) {
        Ok(i) => i,
        Err(e) => return (false, e.to_string()),
    };
    let rep = match scenarios::necessity_scenario(&inst, 100) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let trace = &rep.trace;
    let s = inst.space;
    let (q, p) = (s.q(), s.p());
    let mut min_margin = f64::INFINITY;
    let mut min_norm_q = f64::INFINITY;
    let mut dev = 0.0_f64;
    let mut chosen = vec![false; inst.dim()];
    for rec in &trace.records {
        min_margin = min_margin.min(rec.margins.min());
        chosen[rec.chosen.index] = true;
        let res = trace.residual(rec.n).unwrap();
        min_norm_q = min_norm_q.min(res.coords().iter().map(|c| c.abs().powf(q)).sum());
        for (j, &c) in res.coords().iter().enumerate() {
            let expected = if j == 0 {
                0.0
            } else if j == 1 {
                rec.eta_applied.powf(1.0 / q)
            } else if inst.in_first[j] {
                inst.a[j]
            } else if chosen[j] {
                0.0
            } else {
                let t = inst.schedules.t.value(j, Role::Weakness, &s, None).unwrap();
                inst.alpha.powf(1.0 / q) * t.powf(p / q)
            };
            dev = dev.max((c - expected).abs());
        }
    }
    (
        trace.records.len() == 100 && min_margin >= -1e-9 && min_norm_q >= 1.0 && dev <= 1e-10,
        format!(
            "{} steps, min margin {min_margin:.1e}, min ||f_n||_q^q {min_norm_q:.6}, closed-form gap {dev:.1e}",
            trace.records.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let rep = match scenarios::unbounded_eta_preset(200) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let r = rep.trace.space.r();
    let f_norm = lr_norm(rep.trace.target.coords(), r);
    let mut worst = 0.0_f64;
    for &n in &rep.spikes {
        let res = rep.trace.residual(n).unwrap();
        worst = worst.max((lr_norm(res.coords(), r) - f_norm).abs());
    }
    (
        rep.spikes.len() >= 50 && rep.spikes.iter().all(|&n| n <= 200) && worst <= 1e-12,
        format!("{} spikes, max | ||f_nk|| - ||f|| | {worst:.1e}", rep.spikes.len()),
    )
}

fn criterion_9() -> Outcome {
    let trace = match scenarios::nonsmooth_scenario(2, 50) {
        Ok(t) => t,
        Err(e) => return (false, e.to_string()),
    };
    let worst = (1..=trace.records.len())
        .map(|n| (lr_norm(trace.residual(n).unwrap().coords(), 1.0) - 1.0).abs())
        .fold(0.0, f64::max);
    (
        trace.records.len() == 50 && worst <= 1e-15,
        format!("{} steps, max |residual - 1| {worst:.1e}", trace.records.len()),
    )
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let mut slowest = 0;
    for r in [1.5, 2.0, 3.0] {
        for seed in 0..20 {
            match scenarios::convergence_regime_run(r, 32, seed, 2000, 1e-3) {
                Ok(trace) => {
                    let n = trace.records.len();
                    let last = lr_norm(trace.residual(n).unwrap().coords(), r);
                    if matches!(trace.verdict, Verdict::Converged { .. }) && last < 1e-3 && n <= 2000 {
                        slowest = slowest.max(n);
                    } else {
                        failures.push(format!("r={r} seed={seed}"));
                    }
                }
                Err(e) => failures.push(format!("r={r} seed={seed}: {e}")),
            }
        }
    }
    (
        failures.is_empty(),
        format!("60 runs, slowest reached 1e-3 at step {slowest}, failures {failures:?}"),
    )
}

fn criterion_11() -> Outcome {
    type Seq = Box<dyn Fn(usize) -> f64>;
    let fixtures: Vec<(&str, Seq, Seq)> = vec![
        ("n^-2 / n^-1", Box::new(|n| (n as f64).powi(-2)), Box::new(|n| 1.0 / n as f64)),
        (
            "8^-n / alternating",
            Box::new(|n| 8f64.powi(-(n as i32))),
            Box::new(|n| if n % 2 == 0 { 1.0 } else { 4f64.powi(-(n as i32)) }),
        ),
        ("n^-1.5 / n^-0.5", Box::new(|n| (n as f64).powf(-1.5)), Box::new(|n| (n as f64).powf(-0.5))),
    ];
    let prefix = 10_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, a, b) in &fixtures {
        let tail = |idx: &[usize]| idx[idx.len() * 9 / 10..].iter().map(|&n| a(n) / b(n)).fold(0.0, f64::max);
        let h = match schedule::extract_halving_subsequence(b, prefix) {
            Ok(h) => h,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let idx = h.subsequence.indices();
        let min_ratio = idx.iter().map(|&n| b(n) / b(n - 1)).fold(f64::INFINITY, f64::min);
        let tail_h = tail(idx);
        ok &= !idx.is_empty() && idx.windows(2).all(|w| w[0] < w[1]) && min_ratio >= 0.5 && tail_h < 1e-2;

        let l1 = match schedule::extract_l1_subsequence(a, b, prefix) {
            Ok(x) => x,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let mut bands_ok = true;
        for band in &l1.bands {
            let mass: f64 = band.members.iter().map(|&n| b(n)).sum();
            let selected: f64 = band.selected.iter().map(|&n| b(n)).sum();
            bands_ok &= band.selected.iter().all(|n| band.members.contains(n));
            bands_ok &= selected >= 0.5 * mass * (1.0 - 1e-12);
        }
        let idx = l1.subsequence.indices();
        let tail_l1 = tail(idx);
        ok &= !idx.is_empty() && bands_ok && tail_l1 < 1e-2;
        parts.push(format!(
            "{name}: halving {} idx min ratio {min_ratio:.3} tail {tail_h:.1e}, l1 {:?} {} idx tail {tail_l1:.1e}",
            h.subsequence.len(),
            l1.branch,
            idx.len()
        ));
    }
    (ok, parts.join("; "))
}

/// Independent evaluation of the one-step bound by numerical minimization.
fn bound_oracle(space: &SpaceSpec, a: f64, f_norm: f64, res: f64, t_next: f64, delta: f64, eta: f64) -> f64 {
    if res == 0.0 {
        return 0.0;
    }
    let (q, gamma) = (space.q(), space.gamma());
    let beta = if delta + eta == 0.0 {
        0.0
    } else {
        min_positive(|mu| (delta + eta) / mu + 2.0 * gamma * ((2.0 + eta) * f_norm).powf(q) * mu.powf(q - 1.0))
    };
    let slope = t_next / a * (1.0 - delta - beta / res);
    let inner = |l: f64| 1.0 + delta - l * slope + 2.0 * gamma * (l / res).powf(q);
    res * min_positive(inner).min(inner(0.0))
}

fn criterion_12() -> Outcome {
    let mut traces: Vec<(String, Trace, f64)> = vec![("flat_l2".into(), flat_l2_trace(256), 1.0)];
    for name in RATE_PRESETS {
        match scenarios::rate_preset(name, None) {
            Ok(rep) => traces.push((name.into(), rep.trace, 1.0)),
            Err(e) => return (false, format!("{name}: {e}")),
        }
    }
    for r in [1.5, 2.0, 3.0] {
        for seed in 0..20 {
            match scenarios::convergence_regime_run(r, 32, seed, 2000, 1e-3) {
                Ok(trace) => {
                    let a = trace.target.coords().iter().map(|c| c.abs()).sum();
                    traces.push((format!("r={r} seed={seed}"), trace, a));
                }
                Err(e) => return (false, format!("r={r} seed={seed}: {e}")),
            }
        }
    }
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_oracle_gap = 0.0_f64;
    let mut failing = Vec::new();
    let mut audited = 0;
    for (name, trace, a) in &traces {
        let recs = &trace.records;
        for n in 0..recs.len() {
            let Some(bound) = trace.bound_after(n) else {
                failing.push(format!("{name}: missing bound at {n}"));
                continue;
            };
            audited += 1;
            let excess = recs[n].e_n - bound;
            worst_excess = worst_excess.max(excess);
            if excess > 1e-8 {
                failing.push(format!("{name}: step {n}"));
            }
            // delta_n is applied at step n + 1; eta_n belongs to step n
            // (no error has been made before the first step).
            let res = if n == 0 { trace.target_norm } else { recs[n - 1].residual_norm };
            let eta = if n == 0 { 0.0 } else { recs[n - 1].eta_applied };
            let oracle = bound_oracle(
                &trace.space,
                *a,
                trace.target_norm,
                res,
                recs[n].t,
                recs[n].delta_applied,
                eta,
            );
            let gap = (oracle - bound).abs() / bound.abs().max(1e-300);
            worst_oracle_gap = worst_oracle_gap.max(gap);
            if gap > 1e-6 {
                failing.push(format!("{name}: oracle gap {gap:.1e} at {n}"));
            }
        }
    }
    failing.truncate(5);
    (
        failing.is_empty(),
        format!(
            "{} traces, {audited} steps, max E_(n+1) - bound {worst_excess:.2e}, bound vs oracle {worst_oracle_gap:.1e}, failing {failing:?}",
            traces.len()
        ),
    )
}

fn criterion_13() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
n_max = 80
conv_tol = 1e-8
[space]
r = 1.5
dim = 24
[target]
kind = "random"
[schedules]
t = { kind = "constant", value = 0.7 }
delta = { kind = "power", exponent = -1.0, scale = 0.5 }
eta = { kind = "constant", value = 0.2 }
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("trace{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_awcga"))
            .args(["--quiet", "run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "20260101"])
            .status()
            .unwrap();
        if !status.success() {
            return (false, format!("run {i} exited with {status}"));
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let rows = outputs[0].iter().filter(|&&c| c == b'\n').count();
    (
        outputs[0] == outputs[1] && rows > 1,
        format!("two runs, {} bytes, {rows} lines, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("duality identities", criterion_1),
        ("modulus bounds", criterion_2),
        ("closed-form infima", criterion_3),
        ("projection correctness", criterion_4),
        ("greedy rate on flat l2 element", criterion_5),
        ("adaptive rate presets", criterion_6),
        ("necessity divergence", criterion_7),
        ("unbounded error divergence", criterion_8),
        ("nonsmooth trap", criterion_9),
        ("convergence regime", criterion_10),
        ("sequence lemmas", criterion_11),
        ("next-error bound audit", criterion_12),
        ("determinism", criterion_13),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = check();
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({detail})",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" }
        );
    }
    println!("{} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
