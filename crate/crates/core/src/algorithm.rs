//! The Q-Benders loop.
//!
//! Each iteration optionally sweeps the Bellman error over all sample points,
//! stops once the largest error is within `eps_tol`, and otherwise picks a
//! point uniformly at random and adds the cut generated there when its error
//! reaches `skip_threshold`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::DEFAULT_TOL;
use crate::error::{Error, Result};
use crate::one_stage::{evaluate_bellman_hinted, extract_cut, BellmanEvaluation};
use crate::policy::greedy_input_hinted;
use crate::problem::{ClqrInstance, SamplePointSet};
use crate::qfunction::{BendersCut, PwmQFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Fixed state-input pairs.
    A,
    /// Fixed states, inputs from the current greedy policy.
    B,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    Uniform,
    /// Experimental: pick the point with the largest error in the last sweep.
    LargestError,
}

/// Consecutive failures at one point before a run is aborted.
pub const MAX_CONSECUTIVE_FAILURES: usize = 10;

#[derive(Clone, Debug)]
pub struct AlgConfig {
    pub variant: Variant,
    pub points: SamplePointSet,
    pub eps_tol: f64,
    pub skip_threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub sweep_period: usize,
    pub selection: Selection,
}

impl AlgConfig {
    /// Defaults: `eps_tol = 1e-3`, `skip_threshold = 1e-5`, `solver_tol = 1e-8`,
    /// a sweep every iteration and at most `50·M·n_x` iterations.
    pub fn new(variant: Variant, points: SamplePointSet) -> Self {
        let nx = points.states.first().map_or(1, |x| x.len());
        let max_iterations = 50 * points.len().max(1) * nx.max(1);
        AlgConfig {
            variant,
            points,
            eps_tol: 1e-3,
            skip_threshold: 1e-5,
            max_iterations,
            seed: 0,
            solver_tol: DEFAULT_TOL,
            sweep_period: 1,
            selection: Selection::Uniform,
        }
    }

    pub fn validate(&self, inst: &ClqrInstance) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eps_tol > 0.0) {
            return bad(format!("eps_tol = {} must be positive", self.eps_tol));
        }
        if !(self.skip_threshold >= 0.0 && self.skip_threshold < self.eps_tol) {
            return bad(format!(
                "skip_threshold = {} must lie in [0, eps_tol = {})",
                self.skip_threshold, self.eps_tol
            ));
        }
        if self.sweep_period == 0 {
            return bad("sweep_period must be at least 1".into());
        }
        if !(1e-12..=1e-4).contains(&self.solver_tol) {
            return bad(format!("solver_tol = {:e} outside [1e-12, 1e-4]", self.solver_tol));
        }
        if self.points.is_empty() {
            return bad("no sample points".into());
        }
        match (self.variant, &self.points.inputs) {
            (Variant::A, None) => return bad("variant A needs state-input pairs".into()),
            (Variant::B, Some(_)) => return bad("variant B takes states only".into()),
            (Variant::A, Some(inputs)) if inputs.len() != self.points.len() => {
                return bad("variant A needs one input per state".into())
            }
            _ => {}
        }
        for (m, x) in self.points.states.iter().enumerate() {
            if x.len() != inst.n_x() {
                return bad(format!("point {m} has dimension {}, n_x = {}", x.len(), inst.n_x()));
            }
            if let Some(inputs) = &self.points.inputs {
                let u = &inputs[m];
                if u.len() != inst.n_u() || !inst.is_feasible(x, u, 1e-9) {
                    return bad(format!("pair {m} is not a feasible state-input pair"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum PointFailure {
    Numeric(String),
    Infeasible(String),
}

impl std::fmt::Display for PointFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PointFailure::Numeric(m) => write!(f, "numeric failure: {m}"),
            PointFailure::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointEval {
    pub m: usize,
    /// The input at which the error was measured.
    pub input: Option<DVector<f64>>,
    pub evaluation: std::result::Result<BellmanEvaluation, PointFailure>,
    /// Greedy and one-stage solve time.
    pub seconds: f64,
}

impl PointEval {
    pub fn error(&self) -> Option<f64> {
        self.evaluation.as_ref().ok().map(|e| e.error)
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub max_error: f64,
    pub mean_error: f64,
    pub points: Vec<PointEval>,
    pub seconds: f64,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.evaluation.is_err()).count()
    }
}

fn classify(e: Error) -> Result<PointFailure> {
    match e {
        Error::NumericFailure(m) => Ok(PointFailure::Numeric(m)),
        Error::Infeasible(m) => Ok(PointFailure::Infeasible(m)),
        other => Err(other),
    }
}

/// Inputs found at a point by an earlier evaluation, used as solver hints.
type Hint = Option<(Option<DVector<f64>>, DVector<f64>)>;

fn hint_of(p: &PointEval) -> Hint {
    let ev = p.evaluation.as_ref().ok()?;
    Some((p.input.clone(), ev.solution.next_input.clone()))
}

fn evaluate_point(q: &PwmQFunction, cfg: &AlgConfig, m: usize, hint: &Hint) -> Result<PointEval> {
    let start = Instant::now();
    let x = &cfg.points.states[m];
    let (input_hint, next_hint) = match hint {
        Some((u, next)) => (u.as_ref(), Some(next)),
        None => (None, None),
    };
    let input = match (&cfg.points.inputs, cfg.variant) {
        (Some(inputs), Variant::A) => Ok(inputs[m].clone()),
        _ => greedy_input_hinted(q, x, cfg.solver_tol, input_hint).map(|(u, _)| u),
    };
    let (input, evaluation) = match input {
        Ok(u) => {
            let ev = match evaluate_bellman_hinted(q, x, &u, cfg.solver_tol, next_hint) {
                Ok(ev) => Ok(ev),
                Err(e) => Err(classify(e)?),
            };
            (Some(u), ev)
        }
        Err(e) => (None, Err(classify(e)?)),
    };
    Ok(PointEval {
        m,
        input,
        evaluation,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Bellman errors at every sample point under the variant's input rule.
/// Failed points are excluded from the statistics and reported in `points`.
pub fn convergence_sweep(q: &PwmQFunction, cfg: &AlgConfig) -> Result<SweepResult> {
    sweep_with_hints(q, cfg, &vec![None; cfg.points.len()])
}

fn sweep_with_hints(q: &PwmQFunction, cfg: &AlgConfig, hints: &[Hint]) -> Result<SweepResult> {
    let start = Instant::now();
    let points = (0..cfg.points.len())
        .map(|m| evaluate_point(q, cfg, m, &hints[m]))
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = points.iter().filter_map(PointEval::error).collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let mean_error = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok(SweepResult {
        max_error,
        mean_error,
        points,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    CutAdded,
    BelowThreshold,
    Infeasible,
    NumericFailure,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::CutAdded => "cut-added",
            StepStatus::BelowThreshold => "below-threshold",
            StepStatus::Infeasible => "infeasible",
            StepStatus::NumericFailure => "numeric-failure",
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub chosen: usize,
    pub x: DVector<f64>,
    pub u: Option<DVector<f64>>,
    /// Whether `u` came from the greedy policy.
    pub policy_input: bool,
    pub error: Option<f64>,
    pub status: StepStatus,
    pub cut: Option<BendersCut>,
    /// `Q_I` at the point before and after the cut.
    pub value_before: Option<f64>,
    pub value_after: Option<f64>,
    pub successor_norm: Option<f64>,
    pub next_input_norm: Option<f64>,
    pub solve_seconds: f64,
    pub note: Option<String>,
}

impl IterationRecord {
    pub fn cut_added(&self) -> bool {
        self.status == StepStatus::CutAdded
    }
}

#[derive(Clone, Debug)]
pub struct SweepRecord {
    pub iteration: usize,
    pub max_error: f64,
    pub mean_error: f64,
    /// Per-point errors, NaN where the evaluation failed.
    pub errors: Vec<f64>,
    /// `min_u Q_I(x_m, u)` per point (variant B only).
    pub greedy_values: Option<Vec<f64>>,
    /// Carried over from the previous sweep because no cut was added since.
    pub reused: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Terminated,
    MaxIterations,
    Aborted { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Terminated => "terminated",
            Outcome::MaxIterations => "max-iterations",
            Outcome::Aborted { .. } => "aborted",
        }
    }
}

/// Extremes over every one-stage solve of a run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveStats {
    pub solves: usize,
    pub max_dual_sum_residual: f64,
    pub min_raw_multiplier: f64,
    pub max_gap: f64,
}

impl Default for SolveStats {
    fn default() -> Self {
        SolveStats {
            solves: 0,
            max_dual_sum_residual: 0.0,
            min_raw_multiplier: f64::INFINITY,
            max_gap: 0.0,
        }
    }
}

impl SolveStats {
    fn record(&mut self, ev: &BellmanEvaluation) {
        let d = &ev.solution.diagnostics;
        self.solves += 1;
        self.max_dual_sum_residual = self.max_dual_sum_residual.max(d.dual_sum_residual);
        self.min_raw_multiplier = self.min_raw_multiplier.min(d.min_raw_multiplier);
        self.max_gap = self.max_gap.max(d.gap);
    }
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub variant: Variant,
    pub records: Vec<IterationRecord>,
    pub sweeps: Vec<SweepRecord>,
    pub outcome: Outcome,
    pub final_iteration: usize,
    pub cuts_added: usize,
    pub total_seconds: f64,
    pub sweep_seconds: f64,
    /// Time spent generating cuts at the chosen points, excluding sweeps.
    pub cut_seconds: f64,
    pub solve_stats: SolveStats,
}

impl RunLog {
    /// Largest successor and next-input norms over the accepted cuts.
    pub fn visited_bounds(&self) -> (f64, f64) {
        self.records
            .iter()
            .filter(|r| r.cut_added())
            .fold((0.0, 0.0), |(x, u), r| {
                (
                    x.max(r.successor_norm.unwrap_or(0.0)),
                    u.max(r.next_input_norm.unwrap_or(0.0)),
                )
            })
    }

    /// Number of cuts present at the start of each iteration.
    pub fn cut_count_at(&self, iteration: usize) -> usize {
        1 + self.records[..iteration.min(self.records.len())]
            .iter()
            .filter(|r| r.cut_added())
            .count()
    }

    /// `iteration,chosen,x_*,u_*,policy_input,error,status,cut_added,cut_index,xi,value_before,value_after,solve_seconds`.
    pub fn write_iterations_csv<W: Write>(&self, out: W, n_x: usize, n_u: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "chosen".to_string()];
        header.extend((0..n_x).map(|i| format!("x_{i}")));
        header.extend((0..n_u).map(|i| format!("u_{i}")));
        header.extend(
            [
                "policy_input",
                "error",
                "status",
                "cut_added",
                "cut_index",
                "xi",
                "value_before",
                "value_after",
                "solve_seconds",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.chosen.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            match &r.u {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend((0..n_u).map(|_| String::new())),
            }
            row.push(u8::from(r.policy_input).to_string());
            row.push(opt(r.error));
            row.push(r.status.as_str().into());
            row.push(u8::from(r.cut_added()).to_string());
            row.push(r.cut.as_ref().map_or(String::new(), |c| c.index.to_string()));
            row.push(opt(r.cut.as_ref().map(|c| c.xi)));
            row.push(opt(r.value_before));
            row.push(opt(r.value_after));
            row.push(r.solve_seconds.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `iteration,max_error,mean_error,failures,reused,seconds`.
    pub fn write_sweeps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "max_error", "mean_error", "failures", "reused", "seconds"])?;
        for s in &self.sweeps {
            w.write_record([
                s.iteration.to_string(),
                s.max_error.to_string(),
                s.mean_error.to_string(),
                s.errors.iter().filter(|e| e.is_nan()).count().to_string(),
                u8::from(s.reused).to_string(),
                s.seconds.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            outcome: self.outcome.clone(),
            iterations: self.final_iteration,
            cuts_added: self.cuts_added,
            final_max_error: self.sweeps.last().map(|s| s.max_error),
            total_seconds: self.total_seconds,
            sweep_seconds: self.sweep_seconds,
            cut_seconds: self.cut_seconds,
            solve_stats: self.solve_stats,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub iterations: usize,
    pub cuts_added: usize,
    pub final_max_error: Option<f64>,
    pub total_seconds: f64,
    pub sweep_seconds: f64,
    pub cut_seconds: f64,
    pub solve_stats: SolveStats,
}

/// Decision columns `(chosen, cut_added)` read back from an iteration CSV.
pub fn read_decisions<R: std::io::Read>(input: R) -> Result<Vec<(usize, bool)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let (ic, ia) = (col("chosen")?, col("cut_added")?);
    r.records()
        .map(|rec| {
            let rec = rec?;
            let chosen = rec[ic]
                .parse()
                .map_err(|e| Error::Parse(format!("chosen: {e}")))?;
            Ok((chosen, &rec[ia] == "1"))
        })
        .collect()
}

/// Runs the loop from `Q_0 = ℓ`.
pub fn run(inst: Arc<ClqrInstance>, cfg: &AlgConfig) -> Result<(PwmQFunction, RunLog)> {
    cfg.validate(&inst)?;
    let start = Instant::now();
    let mut q = PwmQFunction::new(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = RunLog {
        variant: cfg.variant,
        records: Vec::new(),
        sweeps: Vec::new(),
        outcome: Outcome::MaxIterations,
        final_iteration: 0,
        cuts_added: 0,
        total_seconds: 0.0,
        sweep_seconds: 0.0,
        cut_seconds: 0.0,
        solve_stats: SolveStats::default(),
    };
    let mut failures = vec![0usize; cfg.points.len()];
    let mut hints: Vec<Hint> = vec![None; cfg.points.len()];
    // sweep of the current Q_I, if one has been computed
    let mut fresh: Option<SweepResult> = None;
    // errors of the latest sweep, for the largest-error rule
    let mut last_errors: Option<Vec<f64>> = None;

    let mut iteration = 0;
    loop {
        if iteration >= cfg.max_iterations {
            log.outcome = Outcome::MaxIterations;
            break;
        }
        if iteration % cfg.sweep_period == 0 {
            let reused = fresh.is_some();
            if fresh.is_none() {
                let sweep = sweep_with_hints(&q, cfg, &hints)?;
                for p in &sweep.points {
                    if let Ok(ev) = &p.evaluation {
                        log.solve_stats.record(ev);
                    }
                    if let Some(h) = hint_of(p) {
                        hints[p.m] = Some(h);
                    }
                }
                log.sweep_seconds += sweep.seconds;
                fresh = Some(sweep);
            }
            let sweep = fresh.as_ref().expect("sweep computed above");
            let errors: Vec<f64> = sweep.points.iter().map(|p| p.error().unwrap_or(f64::NAN)).collect();
            let greedy_values = (cfg.variant == Variant::B).then(|| {
                sweep
                    .points
                    .iter()
                    .map(|p| p.evaluation.as_ref().map_or(f64::NAN, |e| e.q_value))
                    .collect()
            });
            log.sweeps.push(SweepRecord {
                iteration,
                max_error: sweep.max_error,
                mean_error: sweep.mean_error,
                errors: errors.clone(),
                greedy_values,
                reused,
                seconds: if reused { 0.0 } else { sweep.seconds },
            });
            last_errors = Some(errors);
            if sweep.failures() == 0 && sweep.max_error <= cfg.eps_tol {
                log.outcome = Outcome::Terminated;
                break;
            }
        }

        let m = match (cfg.selection, &last_errors) {
            (Selection::LargestError, Some(errors)) => errors
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &e)| if e > best.1 { (i, e) } else { best })
                .0,
            _ => rng.random_range(0..cfg.points.len()),
        };
        let eval = match fresh.as_ref() {
            Some(sweep) => sweep.points[m].clone(),
            None => {
                let p = evaluate_point(&q, cfg, m, &hints[m])?;
                if let Ok(ev) = &p.evaluation {
                    log.solve_stats.record(ev);
                }
                if let Some(h) = hint_of(&p) {
                    hints[m] = Some(h);
                }
                p
            }
        };
        log.cut_seconds += eval.seconds;
        let x = cfg.points.states[m].clone();
        let mut record = IterationRecord {
            iteration,
            chosen: m,
            x: x.clone(),
            u: eval.input.clone(),
            policy_input: cfg.variant == Variant::B,
            error: eval.error(),
            status: StepStatus::BelowThreshold,
            cut: None,
            value_before: None,
            value_after: None,
            successor_norm: None,
            next_input_norm: None,
            solve_seconds: eval.seconds,
            note: None,
        };
        match &eval.evaluation {
            Err(failure) => {
                record.status = match failure {
                    PointFailure::Numeric(_) => StepStatus::NumericFailure,
                    PointFailure::Infeasible(_) => StepStatus::Infeasible,
                };
                record.note = Some(failure.to_string());
                failures[m] += 1;
                if failures[m] >= MAX_CONSECUTIVE_FAILURES {
                    log.records.push(record);
                    log.outcome = Outcome::Aborted {
                        reason: format!("point {m} failed {} consecutive times: {failure}", failures[m]),
                    };
                    iteration += 1;
                    break;
                }
            }
            Ok(ev) => {
                failures[m] = 0;
                let u = eval.input.as_ref().expect("evaluated points carry an input");
                record.value_before = Some(ev.q_value);
                if ev.error >= cfg.skip_threshold {
                    let cut = extract_cut(&ev.solution, &q, &x, u)?;
                    q.add_cut(cut.clone())?;
                    record.value_after = Some(q.eval(&x, u).0);
                    record.successor_norm = Some(ev.solution.successor.norm());
                    record.next_input_norm = Some(ev.solution.next_input.norm());
                    record.cut = Some(cut);
                    record.status = StepStatus::CutAdded;
                    log.cuts_added += 1;
                    fresh = None;
                }
            }
        }
        log.records.push(record);
        iteration += 1;
    }
    log.final_iteration = iteration;
    log.total_seconds = start.elapsed().as_secs_f64();
    Ok((q, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{sample_points, SamplingSpec, StateDistribution};

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn scalar() -> Arc<ClqrInstance> {
        Arc::new(ClqrInstance::scalar_benchmark())
    }

    fn pairs(xs: &[(f64, f64)]) -> SamplePointSet {
        SamplePointSet::pairs(
            &ClqrInstance::scalar_benchmark(),
            xs.iter().map(|p| v(p.0)).collect(),
            xs.iter().map(|p| v(p.1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sweep_examples() {
        let q = PwmQFunction::new(scalar());
        let cfg = AlgConfig::new(Variant::A, pairs(&[(0.0, 0.0), (0.0, 0.0)]));
        let s = convergence_sweep(&q, &cfg).unwrap();
        assert!(s.max_error < 1e-7 && s.mean_error < 1e-7);
        let cfg = AlgConfig::new(Variant::A, pairs(&[(2.0, 0.0)]));
        let s = convergence_sweep(&q, &cfg).unwrap();
        assert!((s.max_error - 1.62).abs() < 1e-6 && (s.mean_error - 1.62).abs() < 1e-6);
    }

    #[test]
    fn huge_tolerance_stops_immediately() {
        let mut cfg = AlgConfig::new(Variant::A, pairs(&[(2.0, 0.0), (1.0, -1.0)]));
        cfg.eps_tol = f64::MAX;
        let (q, log) = run(scalar(), &cfg).unwrap();
        assert_eq!(log.outcome, Outcome::Terminated);
        assert_eq!(log.final_iteration, 0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn config_validation() {
        let inst = ClqrInstance::scalar_benchmark();
        let mut cfg = AlgConfig::new(Variant::A, pairs(&[(1.0, 0.0)]));
        cfg.eps_tol = 0.0;
        assert!(matches!(cfg.validate(&inst), Err(Error::Config(_))));
        let cfg = AlgConfig::new(Variant::B, pairs(&[(1.0, 0.0)]));
        assert!(cfg.validate(&inst).is_err());
        let states = SamplePointSet::states_only(&inst, vec![v(1.0)]).unwrap();
        assert!(AlgConfig::new(Variant::A, states.clone()).validate(&inst).is_err());
        assert!(AlgConfig::new(Variant::B, states).validate(&inst).is_ok());
    }

    #[test]
    fn small_run_terminates_and_logs_consistently() {
        let inst = scalar();
        let spec = SamplingSpec {
            states: StateDistribution::UniformBox {
                low: vec![0.0],
                high: vec![3.0],
            },
            with_inputs: false,
        };
        let points = sample_points(11, &inst, 8, &spec).unwrap();
        let mut cfg = AlgConfig::new(Variant::B, points);
        cfg.seed = 5;
        let (q, log) = run(Arc::clone(&inst), &cfg).unwrap();
        assert_eq!(log.outcome, Outcome::Terminated);
        assert_eq!(q.len(), log.cuts_added + 1);
        assert!(log.cuts_added <= log.final_iteration);
        let idx: Vec<usize> = log.records.iter().filter_map(|r| r.cut.as_ref().map(|c| c.index)).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(log.sweeps.last().unwrap().max_error <= cfg.eps_tol);
        assert!(log.solve_stats.max_dual_sum_residual <= 1e-6);
        for r in log.records.iter().filter(|r| r.cut_added()) {
            let gain = r.value_after.unwrap() - r.value_before.unwrap();
            assert!((gain - r.error.unwrap()).abs() <= 1e-6);
        }
        assert_eq!(log.cut_count_at(log.final_iteration), q.len());

        let (_, again) = run(inst, &cfg).unwrap();
        let decisions = |l: &RunLog| l.records.iter().map(|r| (r.chosen, r.cut_added())).collect::<Vec<_>>();
        assert_eq!(decisions(&log), decisions(&again));

        let mut buf = Vec::new();
        log.write_iterations_csv(&mut buf, 1, 1).unwrap();
        assert_eq!(read_decisions(buf.as_slice()).unwrap(), decisions(&log));
        let mut buf = Vec::new();
        log.write_sweeps_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), log.sweeps.len() + 1);
    }

    #[test]
    fn max_iterations_keeps_the_log() {
        let mut cfg = AlgConfig::new(Variant::A, pairs(&[(2.0, 0.0), (-3.0, 1.0), (2.5, -0.5)]));
        cfg.max_iterations = 2;
        let (_, log) = run(scalar(), &cfg).unwrap();
        assert_eq!(log.outcome, Outcome::MaxIterations);
        assert_eq!(log.records.len(), 2);
    }

    #[test]
    fn largest_error_rule_picks_the_worst_point() {
        let mut cfg = AlgConfig::new(Variant::A, pairs(&[(0.5, 0.0), (3.0, 1.0), (1.0, 0.0)]));
        cfg.selection = Selection::LargestError;
        cfg.max_iterations = 1;
        let (_, log) = run(scalar(), &cfg).unwrap();
        assert_eq!(log.records[0].chosen, 1);
    }
}
