use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use qbenders::algorithm::{self, AlgConfig, Variant};
use qbenders::conic::{self, DEFAULT_TOL};
use qbenders::linalg::spectral_norm;
use qbenders::one_stage::{apply_bellman, build_one_stage, evaluate_bellman, extract_cut};
use qbenders::policy::{greedy_input, simulate, GreedyPolicy};
use qbenders::problem::{random_instance, sample_points, ClqrInstance, SamplingSpec, StateDistribution};
use qbenders::qfunction::{eval_cut, BendersCut, PwmQFunction};

fn v(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

/// Grows `q` by cuts at the given scalar pairs.
fn scalar_q(pairs: &[(f64, f64)]) -> PwmQFunction {
    let mut q = PwmQFunction::new(Arc::new(ClqrInstance::scalar_benchmark()));
    for &(x, u) in pairs {
        let sol = apply_bellman(&q, &v(x), &v(u), DEFAULT_TOL).unwrap();
        let cut = extract_cut(&sol, &q, &v(x), &v(u)).unwrap();
        q.add_cut(cut).unwrap();
    }
    q
}

fn pair() -> impl Strategy<Value = (f64, f64)> {
    (-3.0..3.0f64, -1.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn variant_a_pairs_are_feasible(seed in 0u64..1000, nx in 1usize..4, nu in 1usize..3) {
        let inst = random_instance(seed, nx, nu, 0.99).unwrap();
        let spec = SamplingSpec { states: StateDistribution::Gaussian { std: 5.0 }, with_inputs: true };
        let pts = sample_points(seed, &inst, 20, &spec).unwrap();
        for (x, u) in pts.states.iter().zip(pts.inputs.as_ref().unwrap()) {
            let residual = &inst.d * x + &inst.e * u - &inst.hbar;
            prop_assert!(residual.max() <= 1e-9);
        }
    }

    #[test]
    fn random_instances_are_reproducible_and_capped(seed in any::<u64>(), nx in 1usize..6, cap in 0.1..2.0f64) {
        let a = random_instance(seed, nx, 2, cap).unwrap();
        let b = random_instance(seed, nx, 2, cap).unwrap();
        prop_assert_eq!(a.a.as_slice(), b.a.as_slice());
        prop_assert_eq!(a.b.as_slice(), b.b.as_slice());
        prop_assert!(spectral_norm(&a.a) <= cap + 1e-12);
    }

    #[test]
    fn eval_cut_matches_expanded_scalar_form(
        nu in -5.0..5.0f64, xi in -10.0..10.0f64, x in -3.0..3.0f64, u in -1.0..1.0f64,
    ) {
        let inst = ClqrInstance::scalar_benchmark();
        let cut = BendersCut { index: 1, nu: v(nu), xi };
        let got = eval_cut(&cut, &inst, &v(x), &v(u)).unwrap();
        let want = 0.5 * x * x + 0.5 * u * u + nu * 0.9 * x + nu * u + xi;
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn one_stage_duals_are_feasible_with_zero_gap(cuts in prop::collection::vec(pair(), 0..6), p in pair()) {
        let q = scalar_q(&cuts);
        let (x, u) = (v(p.0), v(p.1));
        let sol = apply_bellman(&q, &x, &u, DEFAULT_TOL).unwrap();
        let d = sol.duals.as_ref().unwrap();
        prop_assert!((d.lambda_alpha.sum() - q.instance().gamma).abs() <= 1e-6);
        prop_assert!(d.lambda_alpha.min() >= 0.0 && d.lambda_c.min() >= 0.0);
        prop_assert!(sol.diagnostics.min_raw_multiplier >= -1e-9);
        prop_assert!(sol.diagnostics.gap <= 1e-6);

        let prob = build_one_stage(&q, &x, &u).unwrap();
        let out = conic::solve_with_duals(&prob, DEFAULT_TOL).unwrap();
        let dual = conic::dual_objective(&prob, out.duals.as_ref().unwrap());
        prop_assert!(dual.value <= out.objective.unwrap() + 1e-6);
    }

    #[test]
    fn one_stage_value_matches_dense_grid(cuts in prop::collection::vec(pair(), 1..5), p in pair()) {
        let q = scalar_q(&cuts);
        let sol = apply_bellman(&q, &v(p.0), &v(p.1), DEFAULT_TOL).unwrap();
        let next = 0.9 * p.0 + p.1;
        let grid = (0..=20_000)
            .map(|k| q.eval(&v(next), &v(-1.0 + 1e-4 * k as f64)).0)
            .fold(f64::INFINITY, f64::min);
        let want = 0.5 * (p.0 * p.0 + p.1 * p.1) + grid;
        prop_assert!((sol.value - want).abs() <= 1e-4, "{} vs {}", sol.value, want);
    }

    #[test]
    fn cut_closes_the_measured_error(cuts in prop::collection::vec(pair(), 0..6), p in pair()) {
        let mut q = scalar_q(&cuts);
        let (x, u) = (v(p.0), v(p.1));
        let ev = evaluate_bellman(&q, &x, &u, DEFAULT_TOL).unwrap();
        prop_assert!(ev.raw_error >= -1e-6);
        let cut = extract_cut(&ev.solution, &q, &x, &u).unwrap();
        q.add_cut(cut).unwrap();
        let gain = q.eval(&x, &u).0 - ev.q_value;
        prop_assert!((gain - ev.error).abs() <= 10.0 * DEFAULT_TOL.max(1e-7));
    }

    #[test]
    fn own_cut_dominates_at_its_point(cuts in prop::collection::vec(pair(), 0..6), p1 in pair(), p2 in pair()) {
        let q = scalar_q(&cuts);
        let inst = q.instance();
        let at = |p: (f64, f64)| {
            let sol = apply_bellman(&q, &v(p.0), &v(p.1), DEFAULT_TOL).unwrap();
            extract_cut(&sol, &q, &v(p.0), &v(p.1)).unwrap()
        };
        let (c1, c2) = (at(p1), at(p2));
        let own = eval_cut(&c1, inst, &v(p1.0), &v(p1.1)).unwrap();
        let other = eval_cut(&c2, inst, &v(p1.0), &v(p1.1)).unwrap();
        prop_assert!(own >= other - 1e-6, "{own} < {other}");
    }

    #[test]
    fn greedy_inputs_are_admissible(seed in 0u64..500, pts in prop::collection::vec(prop::collection::vec(-4.0..4.0f64, 2), 1..4)) {
        let inst = Arc::new(random_instance(seed, 2, 2, 0.95).unwrap());
        let mut q = PwmQFunction::new(Arc::clone(&inst));
        for x in &pts {
            let x = DVector::from_vec(x.clone());
            let sol = apply_bellman(&q, &x, &DVector::zeros(2), DEFAULT_TOL).unwrap();
            let cut = extract_cut(&sol, &q, &x, &DVector::zeros(2)).unwrap();
            q.add_cut(cut).unwrap();
        }
        for x in &pts {
            let x = DVector::from_vec(x.clone());
            let (u, _) = greedy_input(&q, &x, DEFAULT_TOL).unwrap();
            let slack = &inst.hbar - &inst.d * &x - &inst.e * &u;
            prop_assert!(slack.min() >= -1e-8);
        }
    }

    #[test]
    fn simulation_follows_the_dynamics(seed in 0u64..500, x0 in prop::collection::vec(-3.0..3.0f64, 2)) {
        let inst = Arc::new(random_instance(seed, 2, 1, 0.9).unwrap());
        let q = PwmQFunction::new(Arc::clone(&inst));
        let policy = GreedyPolicy { q: &q, tol: DEFAULT_TOL };
        let rec = simulate(&policy, &inst, &DVector::from_vec(x0), 200, 1e-12).unwrap();
        for t in 0..rec.horizon {
            let next = &inst.a * &rec.states[t] + &inst.b * &rec.inputs[t];
            prop_assert_eq!(next.as_slice(), rec.states[t + 1].as_slice());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scalar_runs_are_monotone_and_deterministic(seed in 0u64..10_000) {
        let inst = Arc::new(ClqrInstance::scalar_benchmark());
        let spec = SamplingSpec {
            states: StateDistribution::UniformBox { low: vec![-3.0], high: vec![3.0] },
            with_inputs: false,
        };
        let pts = sample_points(seed, &inst, 8, &spec).unwrap();
        let mut cfg = AlgConfig::new(Variant::B, pts);
        cfg.seed = seed;
        let (_, log) = algorithm::run(Arc::clone(&inst), &cfg).unwrap();
        prop_assert_eq!(log.outcome.label(), "terminated");
        for s in &log.sweeps {
            prop_assert!(s.errors.iter().all(|e| *e >= -1e-6));
        }
        for w in log.sweeps.windows(2) {
            let (a, b) = (w[0].greedy_values.as_ref().unwrap(), w[1].greedy_values.as_ref().unwrap());
            for (x, y) in a.iter().zip(b) {
                prop_assert!(*y >= *x - 10.0 * DEFAULT_TOL, "{y} < {x}");
            }
        }
        let (_, again) = algorithm::run(inst, &cfg).unwrap();
        let decisions = |l: &algorithm::RunLog| l.records.iter().map(|r| (r.chosen, r.cut_added())).collect::<Vec<_>>();
        prop_assert_eq!(decisions(&log), decisions(&again));
    }

    #[test]
    fn cut_files_round_trip(cuts in prop::collection::vec(pair(), 0..8)) {
        let q = scalar_q(&cuts);
        let inst = Arc::clone(q.instance_arc());
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let from_csv = PwmQFunction::read_csv(Arc::clone(&inst), buf.as_slice()).unwrap();
        let from_json = PwmQFunction::from_json(inst, &q.to_json()).unwrap();
        for (a, (b, c)) in q.cuts().iter().zip(from_csv.cuts().iter().zip(from_json.cuts())) {
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
        }
    }
}
