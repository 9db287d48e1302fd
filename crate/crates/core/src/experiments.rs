//! Config-driven experiments behind the `qbenders` command line.
//!
//! A config is one TOML document. Relative paths inside it resolve against
//! the working directory, not the config's location.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algorithm::{self, AlgConfig, Outcome, RunLog, RunSummary, Selection, Variant};
use crate::conic::DEFAULT_TOL;
use crate::error::{Error, Result};
use crate::oracle::{self, ClippedLqr, GridAxis, InputGrid};
use crate::policy::{self, GreedyPolicy, TrajectoryRecord, HORIZON_CAP, TAIL_TOL};
use crate::problem::{self, ClqrInstance, InstanceDoc, SamplePointSet, SamplingSpec, StateDistribution};
use crate::qfunction::PwmQFunction;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_TERMINATED: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    Surface,
    Batch,
    PolicyEval,
    Oracle,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::Surface => "surface",
            ExperimentKind::Batch => "batch",
            ExperimentKind::PolicyEval => "policy-eval",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSource {
    /// `x⁺ = 0.9x + u`, `|u| ≤ 1`, unit weights, γ = 1.
    #[default]
    Scalar,
    File {
        path: PathBuf,
    },
    Random {
        seed: u64,
        n_x: usize,
        n_u: usize,
        #[serde(default = "default_norm_cap")]
        norm_cap: f64,
    },
    Inline {
        doc: InstanceDoc,
    },
}

fn default_norm_cap() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    pub states: StateDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub variant: Variant,
    #[serde(default = "default_eps_tol")]
    pub eps_tol: f64,
    #[serde(default = "default_skip")]
    pub skip_threshold: f64,
    /// Defaults to `50·M·n_x`.
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_period")]
    pub sweep_period: usize,
    #[serde(default)]
    pub selection: Selection,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection {
            variant: Variant::B,
            eps_tol: default_eps_tol(),
            skip_threshold: default_skip(),
            max_iterations: None,
            seed: 0,
            solver_tol: default_solver_tol(),
            sweep_period: default_period(),
            selection: Selection::Uniform,
        }
    }
}

fn default_eps_tol() -> f64 {
    1e-3
}
fn default_skip() -> f64 {
    1e-5
}
fn default_solver_tol() -> f64 {
    DEFAULT_TOL
}
fn default_period() -> usize {
    1
}

impl AlgorithmSection {
    pub fn to_config(&self, points: SamplePointSet) -> AlgConfig {
        let mut cfg = AlgConfig::new(self.variant, points);
        cfg.eps_tol = self.eps_tol;
        cfg.skip_threshold = self.skip_threshold;
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        cfg.seed = self.seed;
        cfg.solver_tol = self.solver_tol;
        cfg.sweep_period = self.sweep_period;
        cfg.selection = self.selection;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub axes: Vec<GridAxis>,
    #[serde(default = "default_u_count")]
    pub u_count: usize,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn default_u_count() -> usize {
    41
}
fn default_true() -> bool {
    true
}
fn default_vi_tol() -> f64 {
    1e-9
}
fn default_max_sweeps() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_x_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_u_range")]
    pub u_range: [f64; 2],
    /// Iterations to snapshot; geometric `0, 1, 2, 4, …` plus the final one when absent.
    pub checkpoints: Option<Vec<usize>>,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection {
            resolution: default_resolution(),
            x_range: default_x_range(),
            u_range: default_u_range(),
            checkpoints: None,
        }
    }
}

fn default_resolution() -> usize {
    61
}
fn default_x_range() -> [f64; 2] {
    [-3.0, 3.0]
}
fn default_u_range() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    /// One random system per seed; the same seed draws its sample points.
    pub systems: Vec<u64>,
    pub m_values: Vec<usize>,
    pub n_x: usize,
    pub n_u: usize,
    #[serde(default = "default_norm_cap")]
    pub norm_cap: f64,
    /// Standard deviation of the zero-mean Gaussian state samples.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEvalSection {
    /// `cuts.json` or `cuts.csv` from a finished run.
    pub cuts: PathBuf,
    #[serde(default = "default_horizon")]
    pub horizon_cap: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    /// Explicit start states; the sampling section's states otherwise.
    pub starts: Option<Vec<Vec<f64>>>,
}

fn default_horizon() -> usize {
    HORIZON_CAP
}
fn default_tail_tol() -> f64 {
    TAIL_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub instance: InstanceSource,
    pub sampling: Option<SamplingSection>,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    pub oracle: Option<OracleSection>,
    pub surface: Option<SurfaceSection>,
    pub batch: Option<BatchSection>,
    pub policy_eval: Option<PolicyEvalSection>,
}

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub verbose: bool,
    pub resolution: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(out) = &ov.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = ov.seed {
            self.algorithm.seed = seed;
            if let Some(s) = &mut self.sampling {
                s.seed = seed;
            }
        }
        if let Some(r) = ov.resolution {
            self.surface.get_or_insert_with(SurfaceSection::default).resolution = r;
        }
    }

    /// Referenced files exist and the sections `kind` needs are present.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(Error::Config(format!(
                    "config kind is {:?} but the command is {:?}",
                    k.as_str(),
                    kind.as_str()
                )));
            }
        }
        if let InstanceSource::File { path } = &self.instance {
            let p = path.clone();
            if !p.is_file() {
                return Err(Error::Config(format!("instance file {} does not exist", p.display())));
            }
        }
        let need = |present: bool, section: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!("{} needs a [{section}] section", kind.as_str())))
            }
        };
        match kind {
            ExperimentKind::Run | ExperimentKind::Surface => need(self.sampling.is_some(), "sampling")?,
            ExperimentKind::Batch => need(self.batch.is_some(), "batch")?,
            ExperimentKind::Oracle => need(self.oracle.is_some(), "oracle")?,
            ExperimentKind::PolicyEval => {
                need(self.policy_eval.is_some(), "policy_eval")?;
                let pe = self.policy_eval.as_ref().expect("checked above");
                need(self.sampling.is_some() || pe.starts.is_some(), "sampling")?;
                let p = pe.cuts.clone();
                if !p.is_file() {
                    return Err(Error::Config(format!("cut file {} does not exist", p.display())));
                }
            }
        }
        if let Some(b) = &self.batch {
            if b.systems.is_empty() || b.m_values.is_empty() {
                return Err(Error::Config("batch needs at least one system seed and one M".into()));
            }
        }
        if let Some(s) = &self.surface {
            if s.resolution < 2 || !(s.x_range[0] < s.x_range[1]) || !(s.u_range[0] < s.u_range[1]) {
                return Err(Error::Config("surface needs resolution >= 2 and increasing ranges".into()));
            }
        }
        Ok(())
    }

    fn load_instance(&self) -> Result<ClqrInstance> {
        match &self.instance {
            InstanceSource::Scalar => Ok(ClqrInstance::scalar_benchmark()),
            InstanceSource::File { path } => ClqrInstance::load(&path.clone()),
            InstanceSource::Random {
                seed,
                n_x,
                n_u,
                norm_cap,
            } => problem::random_instance(*seed, *n_x, *n_u, *norm_cap),
            InstanceSource::Inline { doc } => ClqrInstance::from_doc(doc),
        }
    }

    /// The configured instance, rejected unless its weights are PSD and its input set bounded.
    pub fn build_instance(&self) -> Result<ClqrInstance> {
        let inst = self.load_instance()?;
        let report = problem::validate_instance(&inst);
        if !report.usable() {
            return Err(Error::InvalidInstance(format!("instance checks failed:\n{report}")));
        }
        Ok(inst)
    }

    /// Sample points for the configured variant; Variant A draws an input per state.
    pub fn build_points(&self, inst: &ClqrInstance) -> Result<SamplePointSet> {
        let s = self
            .sampling
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sampling] section".into()))?;
        let spec = SamplingSpec {
            states: s.states.clone(),
            with_inputs: self.algorithm.variant == Variant::A,
        };
        problem::sample_points(s.seed, inst, s.m, &spec)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(self.out_dir.clone())
    }
}

/// Exit code for an error: bad input maps to 1, failures during a run to 3.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse(_)
        | Error::Io { .. }
        | Error::Precondition(_)
        | Error::Dimension(_)
        | Error::InvalidInstance(_)
        | Error::Csv(_) => EXIT_CONFIG,
        _ => EXIT_ABORTED,
    }
}

pub fn exit_code_for_outcome(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Terminated => EXIT_OK,
        Outcome::MaxIterations => EXIT_NOT_TERMINATED,
        Outcome::Aborted { .. } => EXIT_ABORTED,
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s.into_bytes()
}

/// `m,x_*,u_*`; input columns are empty for states-only sets.
pub fn write_points_csv<W: Write>(points: &SamplePointSet, n_u: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n_x = points.states.first().map_or(0, |x| x.len());
    let mut header = vec!["m".to_string()];
    header.extend((0..n_x).map(|i| format!("x_{i}")));
    header.extend((0..n_u).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    for (m, x) in points.states.iter().enumerate() {
        let mut row = vec![m.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        match &points.inputs {
            Some(inputs) => row.extend(inputs[m].iter().map(|v| v.to_string())),
            None => row.extend((0..n_u).map(|_| String::new())),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub variant: Variant,
    pub m: usize,
    pub seed: u64,
    pub sampling_seed: u64,
    #[serde(flatten)]
    pub summary: RunSummary,
}

pub struct RunArtifacts {
    pub instance: Arc<ClqrInstance>,
    pub points: SamplePointSet,
    pub q: PwmQFunction,
    pub log: RunLog,
}

/// Runs the configured algorithm without writing anything.
pub fn execute_run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let inst = Arc::new(cfg.build_instance()?);
    let points = cfg.build_points(&inst)?;
    let alg = cfg.algorithm.to_config(points.clone());
    let (q, log) = algorithm::run(Arc::clone(&inst), &alg)?;
    Ok(RunArtifacts {
        instance: inst,
        points,
        q,
        log,
    })
}

/// `run_log.csv`, `sweep.csv`, `cuts.csv`, `cuts.json`, `points.csv`,
/// `instance.json` and `summary.json` in `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, art: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (nx, nu) = (art.instance.n_x(), art.instance.n_u());
    write_atomic(
        &dir.join("run_log.csv"),
        &to_bytes(|b| art.log.write_iterations_csv(b, nx, nu))?,
    )?;
    write_atomic(&dir.join("sweep.csv"), &to_bytes(|b| art.log.write_sweeps_csv(b))?)?;
    write_atomic(&dir.join("cuts.csv"), &to_bytes(|b| art.q.write_csv(b))?)?;
    write_atomic(&dir.join("cuts.json"), art.q.to_json().as_bytes())?;
    write_atomic(&dir.join("points.csv"), &to_bytes(|b| write_points_csv(&art.points, nu, b))?)?;
    write_atomic(&dir.join("instance.json"), art.instance.to_json().as_bytes())?;
    let report = RunReport {
        variant: art.log.variant,
        m: art.points.len(),
        seed: cfg.algorithm.seed,
        sampling_seed: cfg.sampling.as_ref().map_or(0, |s| s.seed),
        summary: art.log.summary(),
    };
    write_atomic(&dir.join("summary.json"), &json_bytes(&report))
}

fn report_err(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

fn prepare(path: &Path, ov: &Overrides, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(ov);
    cfg.validate(kind)?;
    Ok(cfg)
}

pub fn cmd_run(path: &Path, ov: &Overrides) -> i32 {
    let result = prepare(path, ov, ExperimentKind::Run).and_then(|cfg| {
        let dir = cfg.out_dir()?;
        let art = execute_run(&cfg)?;
        write_run(&dir, &cfg, &art)?;
        Ok(art.log)
    });
    match result {
        Ok(log) => {
            let s = log.summary();
            if ov.verbose {
                eprintln!(
                    "{}: {} iterations, {} cuts, final max error {:.3e}, {:.2} s",
                    s.outcome.label(),
                    s.iterations,
                    s.cuts_added,
                    s.final_max_error.unwrap_or(f64::NAN),
                    s.total_seconds
                );
            }
            if let Outcome::Aborted { reason } = &s.outcome {
                eprintln!("run aborted: {reason}");
            }
            exit_code_for_outcome(&s.outcome)
        }
        Err(e) => report_err(&e),
    }
}

/// Geometric schedule `0, 1, 2, 4, …` up to `last`, plus `last`.
pub fn geometric_checkpoints(last: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut i = 1;
    while i < last {
        out.push(i);
        i *= 2;
    }
    if last > 0 {
        out.push(last);
    }
    out
}

/// `x,u,q,active` over a `resolution × resolution` grid.
pub fn write_surface_csv<W: Write>(q: &PwmQFunction, s: &SurfaceSection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "u", "q", "active"])?;
    let lin = |r: [f64; 2], i: usize| r[0] + (r[1] - r[0]) * i as f64 / (s.resolution - 1) as f64;
    for i in 0..s.resolution {
        let x = DVector::from_element(1, lin(s.x_range, i));
        for j in 0..s.resolution {
            let u = DVector::from_element(1, lin(s.u_range, j));
            let (v, active) = q.eval(&x, &u);
            w.write_record([x[0].to_string(), u[0].to_string(), v.to_string(), active.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn cmd_surface(path: &Path, ov: &Overrides) -> i32 {
    let result = prepare(path, ov, ExperimentKind::Surface).and_then(|cfg| {
        let inst = cfg.build_instance()?;
        if inst.n_x() != 1 || inst.n_u() != 1 {
            return Err(Error::Config(format!(
                "surface export needs n_x = n_u = 1, got {} and {}",
                inst.n_x(),
                inst.n_u()
            )));
        }
        let dir = cfg.out_dir()?;
        let art = execute_run(&cfg)?;
        write_run(&dir, &cfg, &art)?;
        let surface = cfg.surface.clone().unwrap_or_default();
        let last = art.log.final_iteration;
        let checkpoints = match &surface.checkpoints {
            Some(list) => list.iter().copied().filter(|&i| i <= last).collect(),
            None => geometric_checkpoints(last),
        };
        for &it in &checkpoints {
            write_surface_snapshot(&dir, &art, &surface, it, cfg.algorithm.solver_tol)?;
        }
        Ok(art.log.outcome)
    });
    match result {
        Ok(outcome) => exit_code_for_outcome(&outcome),
        Err(e) => report_err(&e),
    }
}

/// `surface_{I}.csv`, `visited_{I}.csv` (pairs visited before iteration I)
/// and `policy_{I}.csv` (greedy inputs of `Q_I` at the sample states).
fn write_surface_snapshot(
    dir: &Path,
    art: &RunArtifacts,
    surface: &SurfaceSection,
    iteration: usize,
    tol: f64,
) -> Result<()> {
    let q = art.q.prefix(art.log.cut_count_at(iteration));
    write_atomic(
        &dir.join(format!("surface_{iteration}.csv")),
        &to_bytes(|b| write_surface_csv(&q, surface, b))?,
    )?;
    let visited = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["iteration", "x", "u", "cut_added"])?;
        for r in art.log.records.iter().take(iteration) {
            if let Some(u) = &r.u {
                w.write_record([
                    r.iteration.to_string(),
                    r.x[0].to_string(),
                    u[0].to_string(),
                    u8::from(r.cut_added()).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    })?;
    write_atomic(&dir.join(format!("visited_{iteration}.csv")), &visited)?;
    let policy_rows = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["m", "x", "u", "q"])?;
        for (m, x) in art.points.states.iter().enumerate() {
            let (u, v) = policy::greedy_input(&q, x, tol)?;
            w.write_record([m.to_string(), x[0].to_string(), u[0].to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    })?;
    write_atomic(&dir.join(format!("policy_{iteration}.csv")), &policy_rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchRun {
    pub system: u64,
    pub m: usize,
    pub outcome: String,
    pub iterations: usize,
    pub cuts_added: usize,
    /// Cut generation only, sweeps excluded.
    pub cut_seconds: f64,
    pub total_seconds: f64,
    pub solves: usize,
    pub max_dual_sum_residual: f64,
    pub min_raw_multiplier: f64,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchRow {
    pub m: usize,
    pub runs: usize,
    pub excluded: usize,
    pub iterations_mean: f64,
    pub iterations_std: Option<f64>,
    pub seconds_mean: f64,
    pub seconds_std: Option<f64>,
    pub cuts_mean: f64,
    pub cuts_std: Option<f64>,
}

/// Mean and sample standard deviation; the deviation is undefined for one value.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// Aggregates per M over terminated runs; other runs count as excluded.
pub fn aggregate_batch(runs: &[BatchRun], m_values: &[usize]) -> Vec<BatchRow> {
    m_values
        .iter()
        .map(|&m| {
            let all: Vec<&BatchRun> = runs.iter().filter(|r| r.m == m).collect();
            let ok: Vec<&BatchRun> = all.iter().copied().filter(|r| r.outcome == "terminated").collect();
            let col = |f: fn(&BatchRun) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (im, is) = col(|r| r.iterations as f64);
            let (sm, ss) = col(|r| r.cut_seconds);
            let (cm, cs) = col(|r| r.cuts_added as f64);
            BatchRow {
                m,
                runs: ok.len(),
                excluded: all.len() - ok.len(),
                iterations_mean: im,
                iterations_std: is,
                seconds_mean: sm,
                seconds_std: ss,
                cuts_mean: cm,
                cuts_std: cs,
            }
        })
        .collect()
}

/// Runs every (system, M) pair on up to `workers` threads.
pub fn execute_batch(cfg: &ExperimentConfig, workers: usize, run_dir: Option<&Path>, verbose: bool) -> Result<Vec<BatchRun>> {
    let b = cfg
        .batch
        .as_ref()
        .ok_or_else(|| Error::Config("missing [batch] section".into()))?;
    let jobs: Vec<(u64, usize)> = b
        .systems
        .iter()
        .flat_map(|&s| b.m_values.iter().map(move |&m| (s, m)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BatchRun>>> = Mutex::new(vec![None; jobs.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(system, m)) = jobs.get(k) else { break };
                match batch_job(cfg, b, system, m, run_dir) {
                    Ok(run) => {
                        if verbose {
                            eprintln!(
                                "system {system} M = {m}: {} after {} iterations ({:.2} s)",
                                run.outcome, run.iterations, run.total_seconds
                            );
                        }
                        results.lock().expect("results lock")[k] = Some(run);
                    }
                    Err(e) => {
                        first_error.lock().expect("error lock").get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    Ok(results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job reported"))
        .collect())
}

fn batch_job(cfg: &ExperimentConfig, b: &BatchSection, system: u64, m: usize, run_dir: Option<&Path>) -> Result<BatchRun> {
    let inst = Arc::new(problem::random_instance(system, b.n_x, b.n_u, b.norm_cap)?);
    let spec = SamplingSpec {
        states: StateDistribution::Gaussian { std: b.std },
        with_inputs: false,
    };
    let points = problem::sample_points(system, &inst, m, &spec)?;
    let mut section = cfg.algorithm.clone();
    section.variant = Variant::B;
    let alg = section.to_config(points.clone());
    let (q, log) = match algorithm::run(Arc::clone(&inst), &alg) {
        Ok(r) => r,
        Err(e) if exit_code_for(&e) == EXIT_ABORTED => {
            return Ok(BatchRun {
                system,
                m,
                outcome: "aborted".into(),
                iterations: 0,
                cuts_added: 0,
                cut_seconds: 0.0,
                total_seconds: 0.0,
                solves: 0,
                max_dual_sum_residual: f64::NAN,
                min_raw_multiplier: f64::NAN,
                note: e.to_string(),
            })
        }
        Err(e) => return Err(e),
    };
    if let Some(root) = run_dir {
        let mut sub = cfg.clone();
        sub.algorithm = section;
        let art = RunArtifacts {
            instance: inst,
            points,
            q,
            log: log.clone(),
        };
        write_run(&root.join(format!("system{system}_m{m}")), &sub, &art)?;
    }
    Ok(BatchRun {
        system,
        m,
        outcome: log.outcome.label().into(),
        iterations: log.final_iteration,
        cuts_added: log.cuts_added,
        cut_seconds: log.cut_seconds,
        total_seconds: log.total_seconds,
        solves: log.solve_stats.solves,
        max_dual_sum_residual: log.solve_stats.max_dual_sum_residual,
        min_raw_multiplier: log.solve_stats.min_raw_multiplier,
        note: match &log.outcome {
            Outcome::Aborted { reason } => reason.clone(),
            _ => String::new(),
        },
    })
}

fn write_batch(dir: &Path, runs: &[BatchRun], rows: &[BatchRow]) -> Result<()> {
    let runs_csv = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for r in runs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    })?;
    write_atomic(&dir.join("batch_runs.csv"), &runs_csv)?;
    let table = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    })?;
    write_atomic(&dir.join("batch.csv"), &table)
}

pub fn cmd_batch(path: &Path, ov: &Overrides) -> i32 {
    let result = prepare(path, ov, ExperimentKind::Batch).and_then(|cfg| {
        let dir = cfg.out_dir()?;
        let workers = ov
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let runs = execute_batch(&cfg, workers, Some(&dir.join("runs")), ov.verbose)?;
        let rows = aggregate_batch(&runs, &cfg.batch.as_ref().expect("validated").m_values);
        write_batch(&dir, &runs, &rows)?;
        Ok(runs)
    });
    match result {
        Ok(runs) => {
            let excluded: Vec<&BatchRun> = runs.iter().filter(|r| r.outcome != "terminated").collect();
            if !excluded.is_empty() {
                eprintln!("{} run(s) excluded from the aggregates:", excluded.len());
                for r in &excluded {
                    eprintln!("  system {} M = {}: {} {}", r.system, r.m, r.outcome, r.note);
                }
            }
            if runs.iter().any(|r| r.outcome == "aborted") {
                EXIT_ABORTED
            } else if excluded.is_empty() {
                EXIT_OK
            } else {
                EXIT_NOT_TERMINATED
            }
        }
        Err(e) => report_err(&e),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyStart {
    pub start: usize,
    pub greedy_cost: Option<f64>,
    pub greedy_horizon: usize,
    pub lqr_cost: Option<f64>,
    pub lqr_horizon: usize,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyEvalReport {
    pub starts: Vec<PolicyStart>,
    pub greedy_average: f64,
    pub lqr_average: f64,
    /// `(greedy − lqr) / lqr` over starts where both policies completed.
    pub relative_gap: f64,
    pub excluded: usize,
}

/// Closed-loop costs of the greedy policy of `q` and the clipped LQR policy.
pub fn evaluate_policies(
    q: &PwmQFunction,
    starts: &[DVector<f64>],
    horizon_cap: usize,
    tail_tol: f64,
    solver_tol: f64,
) -> Result<PolicyEvalReport> {
    let inst = q.instance();
    let gain = oracle::riccati_gain(inst)?.k;
    let greedy = GreedyPolicy { q, tol: solver_tol };
    let lqr = ClippedLqr { inst, gain };
    let mut rows = Vec::with_capacity(starts.len());
    for (i, x0) in starts.iter().enumerate() {
        let mut note = Vec::new();
        let mut sim = |p: &dyn policy::Policy, name: &str| -> Result<Option<TrajectoryRecord>> {
            match policy::simulate(p, inst, x0, horizon_cap, tail_tol) {
                Ok(r) => Ok(Some(r)),
                Err(Error::Infeasible(msg)) => {
                    note.push(format!("{name}: {msg}"));
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let g = sim(&greedy, "greedy")?;
        let l = sim(&lqr, "lqr")?;
        rows.push(PolicyStart {
            start: i,
            greedy_cost: g.as_ref().map(|r| r.total_cost),
            greedy_horizon: g.as_ref().map_or(0, |r| r.horizon),
            lqr_cost: l.as_ref().map(|r| r.total_cost),
            lqr_horizon: l.as_ref().map_or(0, |r| r.horizon),
            note: note.join("; "),
        });
    }
    let both: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.greedy_cost?, r.lqr_cost?)))
        .collect();
    let n = both.len() as f64;
    let greedy_average = both.iter().map(|p| p.0).sum::<f64>() / n;
    let lqr_average = both.iter().map(|p| p.1).sum::<f64>() / n;
    let relative_gap = if lqr_average == 0.0 {
        if greedy_average == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (greedy_average - lqr_average) / lqr_average
    };
    Ok(PolicyEvalReport {
        excluded: rows.len() - both.len(),
        starts: rows,
        greedy_average,
        lqr_average,
        relative_gap,
    })
}

pub fn load_cuts(inst: Arc<ClqrInstance>, path: &Path) -> Result<PwmQFunction> {
    if path.extension().is_some_and(|e| e == "csv") {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        PwmQFunction::read_csv(inst, f)
    } else {
        PwmQFunction::load_json(inst, path)
    }
}

pub fn cmd_policy_eval(path: &Path, ov: &Overrides) -> i32 {
    let result = prepare(path, ov, ExperimentKind::PolicyEval).and_then(|cfg| {
        let pe = cfg.policy_eval.clone().expect("validated");
        let inst = Arc::new(cfg.build_instance()?);
        let q = load_cuts(Arc::clone(&inst), &pe.cuts)?;
        let starts: Vec<DVector<f64>> = match &pe.starts {
            Some(list) => list.iter().map(|x| DVector::from_vec(x.clone())).collect(),
            None => cfg.build_points(&inst)?.states,
        };
        if let Some(x) = starts.iter().find(|x| x.len() != inst.n_x()) {
            return Err(Error::Config(format!("start state of length {}, n_x = {}", x.len(), inst.n_x())));
        }
        let dir = cfg.out_dir()?;
        let report = evaluate_policies(&q, &starts, pe.horizon_cap, pe.tail_tol, cfg.algorithm.solver_tol)?;
        let csv_bytes = to_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            let mut header = vec!["start".to_string()];
            header.extend((0..inst.n_x()).map(|i| format!("x_{i}")));
            header.extend(
                ["greedy_cost", "greedy_horizon", "lqr_cost", "lqr_horizon", "note"].map(String::from),
            );
            w.write_record(&header)?;
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            for r in &report.starts {
                let mut row = vec![r.start.to_string()];
                row.extend(starts[r.start].iter().map(|v| v.to_string()));
                row.push(opt(r.greedy_cost));
                row.push(r.greedy_horizon.to_string());
                row.push(opt(r.lqr_cost));
                row.push(r.lqr_horizon.to_string());
                row.push(r.note.clone());
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io("<csv>", e))?;
            Ok(())
        })?;
        write_atomic(&dir.join("policy_eval.csv"), &csv_bytes)?;
        #[derive(Serialize)]
        struct Summary {
            greedy_average: f64,
            lqr_average: f64,
            relative_gap: f64,
            starts: usize,
            excluded: usize,
        }
        write_atomic(
            &dir.join("policy_eval.json"),
            &json_bytes(&Summary {
                greedy_average: report.greedy_average,
                lqr_average: report.lqr_average,
                relative_gap: report.relative_gap,
                starts: report.starts.len(),
                excluded: report.excluded,
            }),
        )?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            println!(
                "greedy {:.6}  clipped-lqr {:.6}  relative gap {:.3e}  excluded {}",
                report.greedy_average, report.lqr_average, report.relative_gap, report.excluded
            );
            for r in report.starts.iter().filter(|r| !r.note.is_empty()) {
                eprintln!("start {}: {}", r.start, r.note);
            }
            EXIT_OK
        }
        Err(e) => report_err(&e),
    }
}

pub fn cmd_oracle(path: &Path, ov: &Overrides) -> i32 {
    let result = prepare(path, ov, ExperimentKind::Oracle).and_then(|cfg| {
        let o = cfg.oracle.clone().expect("validated");
        let inst = cfg.build_instance()?;
        let axes = o
            .axes
            .iter()
            .map(|a| GridAxis::new(a.min, a.max, a.count))
            .collect::<Result<Vec<_>>>()?;
        let grid = InputGrid {
            count: o.u_count,
            refine: o.refine,
        };
        let vf = oracle::value_iteration(&inst, &axes, grid, o.vi_tol, o.max_sweeps)?;
        let dir = cfg.out_dir()?;
        write_atomic(&dir.join("oracle.csv"), &to_bytes(|b| vf.write_csv(b))?)?;
        #[derive(Serialize)]
        struct Summary {
            iterations: usize,
            residual: f64,
            interpolation_bound: f64,
            clamped_nodes: usize,
        }
        let summary = Summary {
            iterations: vf.iterations,
            residual: vf.residual,
            interpolation_bound: vf.interpolation_bound(),
            clamped_nodes: vf.clamped.iter().filter(|c| **c).count(),
        };
        write_atomic(&dir.join("oracle.json"), &json_bytes(&summary))?;
        Ok(summary.residual)
    });
    match result {
        Ok(residual) => {
            if ov.verbose {
                eprintln!("value iteration residual {residual:.3e}");
            }
            EXIT_OK
        }
        Err(e) => report_err(&e),
    }
}

/// Parses the config for whichever kind it names and prints the instance checks.
pub fn cmd_validate(path: &Path, ov: &Overrides) -> i32 {
    let result = ExperimentConfig::load(path).and_then(|mut cfg| {
        cfg.apply(ov);
        if let Some(kind) = cfg.kind {
            cfg.validate(kind)?;
        }
        match (&cfg.batch, cfg.kind) {
            (Some(b), Some(ExperimentKind::Batch)) => b
                .systems
                .iter()
                .map(|&s| {
                    let inst = problem::random_instance(s, b.n_x, b.n_u, b.norm_cap)?;
                    Ok((format!("system {s}"), problem::validate_instance(&inst)))
                })
                .collect::<Result<Vec<_>>>(),
            _ => Ok(vec![("instance".to_string(), problem::validate_instance(&cfg.load_instance()?))]),
        }
    });
    match result {
        Ok(reports) => {
            for (label, report) in &reports {
                println!("{label}");
                print!("{report}");
            }
            if reports.iter().all(|(_, r)| r.usable()) {
                EXIT_OK
            } else {
                EXIT_CONFIG
            }
        }
        Err(e) => report_err(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
kind = "run"
out_dir = "out"

[sampling]
m = 5
seed = 3
states = { kind = "uniform-box", low = [0.0], high = [3.0] }

[algorithm]
variant = "B"
"#;

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        assert_eq!(cfg.instance, InstanceSource::Scalar);
        assert_eq!(cfg.algorithm.eps_tol, 1e-3);
        assert_eq!(cfg.algorithm.skip_threshold, 1e-5);
        assert_eq!(cfg.algorithm.solver_tol, 1e-8);
        cfg.validate(ExperimentKind::Run).unwrap();
        assert!(cfg.validate(ExperimentKind::Batch).is_err());
    }

    #[test]
    fn unknown_field_reports_location() {
        let text = SCALAR.replace("variant = \"B\"", "variant = \"B\"\nepsilon = 1");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("epsilon") && err.contains("line"), "{err}");
    }

    #[test]
    fn instance_sources_parse() {
        let text = "out_dir = \"o\"\n[instance]\nsource = \"random\"\nseed = 4\nn_x = 3\nn_u = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let inst = cfg.build_instance().unwrap();
        assert_eq!((inst.n_x(), inst.n_u()), (3, 2));
        let doc = toml::to_string(&ExperimentConfig {
            instance: InstanceSource::Inline {
                doc: ClqrInstance::scalar_benchmark().to_doc(),
            },
            ..cfg
        })
        .unwrap();
        let back = ExperimentConfig::parse(&doc).unwrap();
        assert_eq!(back.build_instance().unwrap(), ClqrInstance::scalar_benchmark());
    }

    #[test]
    fn seed_override_reaches_both_streams() {
        let mut cfg = ExperimentConfig::parse(SCALAR).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!(cfg.algorithm.seed, 9);
        assert_eq!(cfg.sampling.unwrap().seed, 9);
    }

    #[test]
    fn checkpoints_are_geometric() {
        assert_eq!(geometric_checkpoints(0), vec![0]);
        assert_eq!(geometric_checkpoints(10), vec![0, 1, 2, 4, 8, 10]);
        assert_eq!(geometric_checkpoints(8), vec![0, 1, 2, 4, 8]);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[4.0]), (4.0, None));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn aggregation_excludes_unfinished_runs() {
        let run = |m, outcome: &str, it| BatchRun {
            system: 0,
            m,
            outcome: outcome.into(),
            iterations: it,
            cuts_added: it / 2,
            cut_seconds: 0.1,
            total_seconds: 0.2,
            solves: 0,
            max_dual_sum_residual: 0.0,
            min_raw_multiplier: 0.0,
            note: String::new(),
        };
        let runs = vec![run(10, "terminated", 100), run(10, "aborted", 0), run(20, "terminated", 300)];
        let rows = aggregate_batch(&runs, &[10, 20]);
        assert_eq!((rows[0].runs, rows[0].excluded), (1, 1));
        assert_eq!(rows[0].iterations_mean, 100.0);
        assert_eq!(rows[0].iterations_std, None);
        assert_eq!(rows[1].cuts_mean, 150.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code_for(&Error::NumericFailure("x".into())), EXIT_ABORTED);
        assert_eq!(exit_code_for_outcome(&Outcome::MaxIterations), EXIT_NOT_TERMINATED);
    }

    #[test]
    fn origin_start_costs_nothing() {
        let q = PwmQFunction::new(Arc::new(ClqrInstance::scalar_benchmark()));
        let r = evaluate_policies(&q, &[DVector::zeros(1)], HORIZON_CAP, TAIL_TOL, DEFAULT_TOL).unwrap();
        assert_eq!(r.starts[0].greedy_cost, Some(0.0));
        assert_eq!(r.starts[0].lqr_cost, Some(0.0));
        assert_eq!(r.relative_gap, 0.0);
    }
}
