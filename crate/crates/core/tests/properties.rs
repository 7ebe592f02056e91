use awcga::dictionary::{Dictionary, TieBreak};
use awcga::engine::{self, Problem, RealizationPolicy, RunOptions};
use awcga::projection::{best_approximation, ProjectionProblem};
use awcga::schedule::{self, Role, Schedule, ScheduleSet, SubsequenceRule};
use awcga::space::{self, SpaceSpec, Vector};
use proptest::prelude::*;

fn lr_norm(x: &[f64], r: f64) -> f64 {
    x.iter().map(|c| c.abs().powf(r)).sum::<f64>().powf(1.0 / r)
}

fn nonzero_vec(dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim).prop_filter("nonzero", |v| v.iter().any(|c| c.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norming_functional_is_dual(x in nonzero_vec(1..=20), r in 1.1..6.0f64) {
        let s = SpaceSpec::new(r, x.len()).unwrap();
        let f = space::norming_functional(&Vector::new(x.clone()).unwrap(), &s).unwrap();
        let nf = lr_norm(&x, r);
        let applied: f64 = f.coords().iter().zip(&x).map(|(a, b)| a * b).sum();
        prop_assert!((applied - nf).abs() <= 1e-9 * nf);
        prop_assert!((lr_norm(f.coords(), r / (r - 1.0)) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn infima_are_lower_bounds_attained_at_argmin(
        a in 0.01..50.0f64, b in 0.01..50.0f64, q in 1.05..=2.0f64, x in 1e-3..1e3f64,
    ) {
        let phi = space::phi_infimum(a, b, q).unwrap();
        let g = |m: f64| a * m.powf(q - 1.0) + b / m;
        prop_assert!(g(x) >= phi.value * (1.0 - 1e-12));
        prop_assert!((g(phi.argmin) - phi.value).abs() <= 1e-9 * phi.value.abs());
        let psi = space::psi_infimum(a, b, q).unwrap();
        let h = |l: f64| a * l.powf(q) - b * l;
        prop_assert!(h(x) >= psi.value - 1e-9 * psi.value.abs());
        prop_assert!((h(psi.argmin) - psi.value).abs() <= 1e-9 * psi.value.abs());
    }

    #[test]
    fn best_approximation_beats_perturbed_coefficients(
        f in nonzero_vec(4..=8),
        raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 8), 1..=3),
        r in 1.3..5.0f64,
        shift in prop::collection::vec(-0.1..0.1f64, 3),
    ) {
        let dim = f.len();
        let s = SpaceSpec::new(r, dim).unwrap();
        let basis: Vec<Vector> = raw.iter().map(|b| Vector::new(b[..dim].to_vec()).unwrap()).collect();
        prop_assume!(basis.iter().all(|b| lr_norm(b.coords(), r) > 0.1));
        let target = Vector::new(f.clone()).unwrap();
        let proj = best_approximation(&ProjectionProblem::new(&target, &basis, &s)).unwrap();
        prop_assert!(proj.error <= lr_norm(&f, r) * (1.0 + 1e-12));
        let res: Vec<f64> = f.iter().zip(proj.approximant.coords()).map(|(a, b)| a - b).collect();
        prop_assert!((lr_norm(&res, r) - proj.error).abs() <= 1e-9 * proj.error.max(1.0));
        // moving along any span direction cannot help
        let mut moved = res.clone();
        for (b, d) in basis.iter().zip(&shift) {
            for (m, c) in moved.iter_mut().zip(b.coords()) {
                *m -= d * c;
            }
        }
        prop_assert!(lr_norm(&moved, r) >= proj.error - 1e-9);
    }

    #[test]
    fn wcga_in_l2_removes_largest_coordinates(f in nonzero_vec(1..=16)) {
        let dim = f.len();
        let s = SpaceSpec::new(2.0, dim).unwrap();
        let problem = Problem {
            target: Vector::new(f.clone()).unwrap(),
            dictionary: Dictionary::standard_basis(dim),
            space: s,
            schedules: ScheduleSet::wcga(Schedule::constant(1.0)),
        };
        let trace = engine::run(&problem, &mut RealizationPolicy::default(), &RunOptions::new(dim, 0.0)).unwrap();
        let mut order: Vec<usize> = (0..dim).filter(|&i| f[i] != 0.0).collect();
        order.sort_by(|&i, &j| f[j].abs().total_cmp(&f[i].abs()).then(i.cmp(&j)));
        for (n, rec) in trace.records.iter().enumerate().map(|(k, r)| (k + 1, r)) {
            let kept: f64 = order[n.min(order.len())..].iter().map(|&i| f[i] * f[i]).sum();
            prop_assert!((rec.residual_norm - kept.sqrt()).abs() <= 1e-12 * (1.0 + kept.sqrt()));
            if n <= order.len() {
                prop_assert_eq!(rec.chosen.index, order[n - 1]);
            }
        }
    }

    #[test]
    fn perturbed_runs_keep_invariants(
        f in nonzero_vec(3..=12),
        r in 1.3..4.0f64,
        t in 0.3..=1.0f64,
        delta in 0.0..0.3f64,
        eta in 0.0..0.5f64,
        utilization in 0.0..=1.0f64,
    ) {
        let dim = f.len();
        let s = SpaceSpec::new(r, dim).unwrap();
        let problem = Problem {
            target: Vector::new(f).unwrap(),
            dictionary: Dictionary::standard_basis(dim),
            space: s,
            schedules: ScheduleSet {
                t: Schedule::constant(t),
                delta: Schedule::constant(delta),
                eta: Schedule::constant(eta),
                eta0: eta,
            },
        };
        let mut policy = RealizationPolicy::canonical(TieBreak::LowestIndex, utilization);
        let trace = engine::run(&problem, &mut policy, &RunOptions::new(2 * dim, 0.0)).unwrap();
        let mut prev = f64::INFINITY;
        for rec in &trace.records {
            prop_assert!(rec.e_n <= prev + 1e-12);
            prev = rec.e_n;
            prop_assert!(rec.residual_norm <= (1.0 + eta) * rec.e_n + 1e-9);
            prop_assert!(rec.residual_norm >= rec.e_n - 1e-9);
            prop_assert!(rec.margins.min() >= -1e-9);
            prop_assert!(rec.functional_on_residual >= 0.0);
        }
    }

    #[test]
    fn schedules_stay_in_range(exponent in -3.0..0.0f64, scale in 0.0..=1.0f64, ratio in 0.0..=1.0f64, n in 0usize..5000) {
        let s = SpaceSpec::new(2.0, 2).unwrap();
        for sched in [Schedule::power(exponent, scale), Schedule::geometric(ratio, scale)] {
            for role in [Role::Weakness, Role::Perturbation, Role::Error] {
                let v = sched.value(n, role, &s, None).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn subsequence_rule_is_consistent(start in 1usize..20, step in 1usize..7, n in 0usize..300) {
        let rule = SubsequenceRule::every(start, step);
        let count = rule.count_upto(n);
        prop_assert_eq!(count, (1..=n).filter(|&m| rule.contains(m)).count());
        if count > 0 {
            let last = rule.nth(count).unwrap();
            prop_assert!(last <= n && rule.contains(last));
        }
        prop_assert!(rule.nth(count + 1).unwrap() > n);
    }

    #[test]
    fn halving_extraction_respects_ratio(
        vals in prop::collection::vec(1e-3..1.0f64, 50..400),
        decay in 0.9..1.0f64,
    ) {
        let b = |n: usize| vals[n % vals.len()] * decay.powi(n as i32);
        let h = schedule::extract_halving_subsequence(b, vals.len()).unwrap();
        let idx = h.subsequence.indices();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for &n in idx {
            prop_assert!(n >= 2 && n <= vals.len());
            prop_assert!(b(n) / b(n - 1) >= 0.5);
        }
    }

    #[test]
    fn l1_bands_carry_half_their_mass(
        avals in prop::collection::vec(0.0..1.0f64, 50..300),
        bvals in prop::collection::vec(1e-3..1.0f64, 50..300),
    ) {
        let len = avals.len().min(bvals.len());
        let a = |n: usize| avals[(n - 1) % len] / n as f64;
        let b = |n: usize| bvals[(n - 1) % len];
        let x = schedule::extract_l1_subsequence(a, b, len).unwrap();
        let idx = x.subsequence.indices();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for band in &x.bands {
            let mass: f64 = band.members.iter().map(|&n| b(n)).sum();
            let kept: f64 = band.selected.iter().map(|&n| b(n)).sum();
            prop_assert!(kept >= 0.5 * mass * (1.0 - 1e-12));
            prop_assert!(band.selected.iter().all(|n| band.members.contains(n)));
        }
    }
}
