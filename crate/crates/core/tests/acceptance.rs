//! Runs the twelve acceptance criteria and prints one PASS/FAIL line each.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qbenders::algorithm::{read_decisions, RunLog, Variant};
use qbenders::conic::DEFAULT_TOL;
use qbenders::experiments::{self, ExperimentConfig, RunArtifacts};
use qbenders::one_stage::{apply_bellman, evaluate_bellman, extract_cut};
use qbenders::oracle::{self, GridAxis, InputGrid};
use qbenders::policy::{HORIZON_CAP, TAIL_TOL};
use qbenders::problem::ClqrInstance;
use qbenders::qfunction::{eval_cut, PwmQFunction};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scalar_run(name: &str, seed: Option<u64>) -> (RunArtifacts, f64) {
    let mut cfg = ExperimentConfig::load(&config_path(name)).expect("shipped config parses");
    if let Some(seed) = seed {
        cfg.apply(&experiments::Overrides {
            seed: Some(seed),
            ..Default::default()
        });
    }
    let start = Instant::now();
    let art = experiments::execute_run(&cfg).expect("scalar run completes");
    (art, start.elapsed().as_secs_f64())
}

fn v(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

/// Cut counts of every distinct iterate `Q_0, Q_1, …` of a run.
fn snapshots(log: &RunLog) -> Vec<usize> {
    (1..=log.cuts_added + 1).collect()
}

fn riccati() -> Verdict {
    let inst = ClqrInstance::scalar_benchmark();
    let mut best = f64::INFINITY;
    let mut k = f64::NAN;
    for _ in 0..5 {
        let start = Instant::now();
        let sol = oracle::riccati_gain(&inst).expect("riccati converges");
        best = best.min(start.elapsed().as_secs_f64());
        k = sol.k[(0, 0)];
    }
    let shown = format!("{k:.4}");
    verdict(shown == "0.5377" && best < 1e-3, format!("K = {shown}, {:.1} us", best * 1e6))
}

fn lower_bound(runs: &[&RunArtifacts]) -> Verdict {
    let start = Instant::now();
    let inst = ClqrInstance::scalar_benchmark();
    let axis = GridAxis::new(-4.0, 4.0, 801).unwrap();
    let vf = match oracle::value_iteration(&inst, &[axis], InputGrid { count: 41, refine: true }, 1e-9, 100_000) {
        Ok(vf) => vf,
        Err(e) => return verdict(false, format!("oracle failed: {e}")),
    };
    let mut probes = Vec::with_capacity(101 * 101);
    for i in 0..=100 {
        for j in 0..=100 {
            let (x, u) = (v(-3.0 + 0.06 * i as f64), v(-1.0 + 0.02 * j as f64));
            let o = oracle::q_star_from_v(&vf, &inst, &x, &u).unwrap();
            probes.push((x, u, o.value + o.tol));
        }
    }
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for art in runs {
        for n in snapshots(&art.log) {
            let q = art.q.prefix(n);
            count += 1;
            for (x, u, bound) in &probes {
                worst = worst.max(q.eval(x, u).0 - bound);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs < 60.0 && vf.residual <= 1e-9,
        format!(
            "{count} snapshots, max(Q_I - Q* - tol) = {worst:.3e}, VI residual {:.1e}, {secs:.1} s",
            vf.residual
        ),
    )
}

fn cut_improvement(runs: &[&RunArtifacts]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for art in runs {
        for r in art.log.records.iter().filter(|r| r.cut_added()) {
            let gain = r.value_after.unwrap() - r.value_before.unwrap();
            worst = worst.max((gain - r.error.unwrap()).abs());
            checked += 1;
        }
    }
    verdict(worst <= 1e-6 && checked > 0, format!("{checked} cuts, max deviation {worst:.3e}"))
}

fn greedy_maximality(art: &RunArtifacts) -> Verdict {
    let mid = art.log.final_iteration / 2;
    let q = art.q.prefix(art.log.cut_count_at(mid));
    let inst = q.instance();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let cut_at = |q: &PwmQFunction, x: f64, u: f64| {
        let sol = apply_bellman(q, &v(x), &v(u), DEFAULT_TOL)?;
        extract_cut(&sol, q, &v(x), &v(u))
    };
    for _ in 0..50 {
        let p1 = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let p2 = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let (Ok(c1), Ok(c2)) = (cut_at(&q, p1.0, p1.1), cut_at(&q, p2.0, p2.1)) else {
            return verdict(false, "one-stage solve failed");
        };
        for ((x, u), own, other) in [(p1, &c1, &c2), (p2, &c2, &c1)] {
            let a = eval_cut(own, inst, &v(x), &v(u)).unwrap();
            let b = eval_cut(other, inst, &v(x), &v(u)).unwrap();
            worst = worst.max(b - a);
        }
    }
    verdict(
        worst <= 1e-6,
        format!("50 pairs at iteration {mid} ({} cuts), max(other - own) = {worst:.3e}", q.len()),
    )
}

fn nonnegative_error(runs: &[&RunArtifacts]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    let iterates: Vec<(usize, usize)> = runs
        .iter()
        .enumerate()
        .flat_map(|(k, a)| snapshots(&a.log).into_iter().map(move |n| (k, n)))
        .collect();
    for _ in 0..1000 {
        let (k, n) = iterates[rng.random_range(0..iterates.len())];
        let q = runs[k].q.prefix(n);
        let (x, u) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        match evaluate_bellman(&q, &v(x), &v(u), DEFAULT_TOL) {
            Ok(ev) => worst = worst.min(ev.raw_error),
            Err(e) => failures.push(format!("({x:.3}, {u:.3}) with {n} cuts: {e}")),
        }
    }
    verdict(
        failures.is_empty() && worst >= -1e-6,
        format!(
            "1000 probes over {} iterates, min raw error {worst:.3e}, {} failures{}",
            iterates.len(),
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(" (first: {f})"))
        ),
    )
}

fn termination(b: &(RunArtifacts, f64), a: &(RunArtifacts, f64)) -> Verdict {
    let ok = |r: &(RunArtifacts, f64), cap: usize| {
        r.0.log.outcome.label() == "terminated" && r.0.log.final_iteration <= cap && r.1 < 30.0
    };
    verdict(
        ok(b, 1000) && ok(a, 2000),
        format!(
            "B: {} after {} iterations ({:.1} s); A: {} after {} iterations ({:.1} s)",
            b.0.log.outcome.label(),
            b.0.log.final_iteration,
            b.1,
            a.0.log.outcome.label(),
            a.0.log.final_iteration,
            a.1
        ),
    )
}

fn monotone_minima(runs: &[&RunArtifacts]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for art in runs {
        for w in art.log.sweeps.windows(2) {
            let (prev, next) = (w[0].greedy_values.as_ref().unwrap(), w[1].greedy_values.as_ref().unwrap());
            for (p, n) in prev.iter().zip(next) {
                worst = worst.max(p - n);
                steps += 1;
            }
        }
    }
    verdict(
        worst <= 1e-6 && steps > 0,
        format!("{} runs, {steps} per-point steps, largest decrease {worst:.3e}", runs.len()),
    )
}

fn closed_loop(art: &RunArtifacts) -> Verdict {
    let start = Instant::now();
    let report = match experiments::evaluate_policies(&art.q, &art.points.states, HORIZON_CAP, TAIL_TOL, DEFAULT_TOL) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("simulation failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    verdict(
        report.excluded == 0 && report.relative_gap.abs() <= 0.01 && secs < 10.0,
        format!(
            "learned {:.5}, clipped LQR {:.5}, relative gap {:.2e}, {} starts, {secs:.1} s",
            report.greedy_average,
            report.lqr_average,
            report.relative_gap,
            report.starts.len()
        ),
    )
}

fn batch() -> (Verdict, Vec<experiments::BatchRun>) {
    let cfg = ExperimentConfig::load(&config_path("batch.toml")).expect("batch config parses");
    let start = Instant::now();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = match experiments::execute_batch(&cfg, workers, None, false) {
        Ok(r) => r,
        Err(e) => return (verdict(false, format!("batch failed: {e}")), Vec::new()),
    };
    let secs = start.elapsed().as_secs_f64();
    let m_values = &cfg.batch.as_ref().unwrap().m_values;
    let rows = experiments::aggregate_batch(&runs, m_values);
    let all_terminated = runs.iter().all(|r| r.outcome == "terminated");
    let increasing = rows.windows(2).all(|w| w[1].iterations_mean > w[0].iterations_mean);
    let ratios: Vec<f64> = rows.iter().map(|r| r.iterations_mean / r.m as f64).collect();
    let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("M={}: {:.1}", r.m, r.iterations_mean))
        .collect();
    (
        verdict(
            all_terminated && increasing && spread < 3.0 && secs < 600.0,
            format!(
                "{} runs, mean iterations {}, iterations/M spread {spread:.2}x, {secs:.0} s",
                runs.len(),
                table.join(", ")
            ),
        ),
        runs,
    )
}

fn dual_feasibility(runs: &[&RunArtifacts], batch: &[experiments::BatchRun]) -> Verdict {
    let mut sum_res: f64 = 0.0;
    let mut min_raw = f64::INFINITY;
    let mut solves = 0;
    for art in runs {
        let s = art.log.solve_stats;
        sum_res = sum_res.max(s.max_dual_sum_residual);
        min_raw = min_raw.min(s.min_raw_multiplier);
        solves += s.solves;
    }
    for r in batch {
        sum_res = sum_res.max(r.max_dual_sum_residual);
        min_raw = min_raw.min(r.min_raw_multiplier);
        solves += r.solves;
    }
    verdict(
        sum_res <= 1e-6 && min_raw >= -1e-9 && !batch.is_empty(),
        format!("{solves} solves, max |sum(lambda_alpha) - gamma| = {sum_res:.2e}, min raw multiplier {min_raw:.2e}"),
    )
}

fn nu_bound(art: &RunArtifacts) -> Verdict {
    let (x, u) = art.log.visited_bounds();
    let report = oracle::nu_bound_diagnostic(art.q.cuts(), &art.instance, x, u);
    verdict(
        report.passed,
        format!(
            "max |nu| = {:.4}, bound {} (X = {x:.4}); {}",
            report.max_nu_norm,
            report.bound.map_or("n/a".into(), |b| format!("{b:.4}")),
            report.note
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut logs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_qbenders"))
            .arg("run")
            .arg("--config")
            .arg(config_path("scalar_b.toml"))
            .arg("--out")
            .arg(&out)
            .status()
            .expect("binary runs");
        if status.code() != Some(0) {
            return verdict(false, format!("run exited with {status}"));
        }
        let file = std::fs::File::open(out.join("run_log.csv")).expect("run log written");
        logs.push(read_decisions(file).expect("run log parses"));
    }
    verdict(
        logs[0] == logs[1] && !logs[0].is_empty(),
        format!("{} and {} decisions", logs[0].len(), logs[1].len()),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    results.push((1, "Riccati cross-check", riccati()));

    let b = scalar_run("scalar_b.toml", None);
    let a = scalar_run("scalar_a.toml", None);
    let b2 = scalar_run("scalar_b.toml", Some(2));
    let b3 = scalar_run("scalar_b.toml", Some(3));
    let scalar = [&b.0, &a.0, &b2.0, &b3.0];
    let variant_b: Vec<&RunArtifacts> = scalar.iter().copied().filter(|r| r.log.variant == Variant::B).collect();

    results.push((2, "lower-bound property", lower_bound(&[&b.0, &a.0])));
    results.push((3, "cut-improvement identity", cut_improvement(&scalar)));
    results.push((4, "greedy maximality", greedy_maximality(&b.0)));
    results.push((5, "nonnegative Bellman error", nonnegative_error(&[&b.0, &a.0])));
    results.push((6, "termination", termination(&b, &a)));
    results.push((7, "monotone minima", monotone_minima(&variant_b)));
    results.push((8, "closed-loop quality", closed_loop(&b.0)));
    let (batch_verdict, batch_runs) = batch();
    results.push((9, "8-state batch properties", batch_verdict));
    results.push((10, "dual feasibility", dual_feasibility(&scalar, &batch_runs)));
    results.push((11, "nu-bound diagnostic", nu_bound(&b.0)));
    results.push((12, "determinism", determinism()));

    for (n, name, v) in &results {
        println!(
            "criterion {n:>2}: {} {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed ({:.0} s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
