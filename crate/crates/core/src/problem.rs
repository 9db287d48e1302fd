//! Constrained linear-quadratic problem instances and sample-point sets.
//!
//! An instance is `x⁺ = A x + B u`, stage cost `½xᵀQx + ½uᵀRu`, constraints
//! `D x + E u ≤ h̄` and discount `γ ∈ (0, 1]`.
//!
//! Random generation uses ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`; instances draw from stream 0 and sample points from
//! stream 1, so one seed can drive both without correlation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConvexQcqp, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{self, matrix_to_rows, rows_to_matrix};

pub const PSD_FLOOR: f64 = -1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ClqrInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub hbar: DVector<f64>,
    pub gamma: f64,
}

impl ClqrInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DMatrix<f64>,
        hbar: DVector<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let nx = a.nrows();
        let nu = b.ncols();
        let nc = hbar.len();
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Dimension(what.to_string()))
            }
        };
        check(a.ncols() == nx, &format!("A is {}x{}, must be square", a.nrows(), a.ncols()))?;
        check(
            b.nrows() == nx,
            &format!("A/B: A is {nx}x{nx} but B has {} rows", b.nrows()),
        )?;
        check(
            q.nrows() == nx && q.ncols() == nx,
            &format!("A/Q: Q is {}x{}, expected {nx}x{nx}", q.nrows(), q.ncols()),
        )?;
        check(
            r.nrows() == nu && r.ncols() == nu,
            &format!("B/R: R is {}x{}, expected {nu}x{nu}", r.nrows(), r.ncols()),
        )?;
        check(
            d.nrows() == nc && d.ncols() == nx,
            &format!("D/hbar: D is {}x{}, expected {nc}x{nx}", d.nrows(), d.ncols()),
        )?;
        check(
            e.nrows() == nc && e.ncols() == nu,
            &format!("E/hbar: E is {}x{}, expected {nc}x{nu}", e.nrows(), e.ncols()),
        )?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInstance(format!("gamma = {gamma} outside (0, 1]")));
        }
        Ok(ClqrInstance {
            a,
            b,
            q,
            r,
            d,
            e,
            hbar,
            gamma,
        })
    }

    /// `x⁺ = 0.9x + u`, unit weights, `|u| ≤ 1`, γ = 1.
    pub fn scalar_benchmark() -> Self {
        Self::new(
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            1.0,
        )
        .expect("benchmark dimensions are consistent")
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_c(&self) -> usize {
        self.hbar.len()
    }

    pub fn check_point(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_x() || u.len() != self.n_u() {
            return Err(Error::Dimension(format!(
                "point has |x| = {}, |u| = {}; instance has n_x = {}, n_u = {}",
                x.len(),
                u.len(),
                self.n_x(),
                self.n_u()
            )));
        }
        Ok(())
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + 0.5 * u.dot(&(&self.r * u))
    }

    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// `max_j (D x + E u − h̄)_j`, or −∞ without constraints.
    pub fn constraint_violation(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        if self.n_c() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.d * x + &self.e * u - &self.hbar).max()
    }

    pub fn is_feasible(&self, x: &DVector<f64>, u: &DVector<f64>, tol: f64) -> bool {
        self.constraint_violation(x, u) <= tol
    }

    /// Right-hand side of the input constraint `E u ≤ h̄ − D x`.
    pub fn input_rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hbar - &self.d * x
    }

    /// Whether the constraints touch the state at all.
    pub fn has_state_constraints(&self) -> bool {
        self.d.iter().any(|&v| v != 0.0)
    }

    pub fn to_doc(&self) -> InstanceDoc {
        InstanceDoc {
            dims: Dims {
                n_x: self.n_x(),
                n_u: self.n_u(),
                n_c: self.n_c(),
            },
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
            q: matrix_to_rows(&self.q),
            r: matrix_to_rows(&self.r),
            d: matrix_to_rows(&self.d),
            e: matrix_to_rows(&self.e),
            hbar: self.hbar.iter().copied().collect(),
            gamma: self.gamma,
        }
    }

    pub fn from_doc(doc: &InstanceDoc) -> Result<Self> {
        let Dims { n_x, n_u, n_c } = doc.dims;
        if doc.hbar.len() != n_c {
            return Err(Error::Dimension(format!(
                "hbar has {} entries, dims.n_c = {n_c}",
                doc.hbar.len()
            )));
        }
        Self::new(
            rows_to_matrix(&doc.a, n_x, n_x, "A")?,
            rows_to_matrix(&doc.b, n_x, n_u, "B")?,
            rows_to_matrix(&doc.q, n_x, n_x, "Q")?,
            rows_to_matrix(&doc.r, n_u, n_u, "R")?,
            rows_to_matrix(&doc.d, n_c, n_x, "D")?,
            rows_to_matrix(&doc.e, n_c, n_u, "E")?,
            DVector::from_vec(doc.hbar.clone()),
            doc.gamma,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("instance: {e}")))?;
        Self::from_doc(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_c: usize,
}

/// Serialized instance: row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub dims: Dims,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    pub hbar: Vec<f64>,
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// PSD and boundedness are hard requirements; stability is advisory.
    pub fn usable(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.name != "stability")
            .all(|c| c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<12} {:<4} {:>12.5e}  {}",
                c.name,
                if c.passed { "ok" } else { "FAIL" },
                c.value,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// PSD weights, bounded input set at x = 0, and γ‖A‖₂ < 1.
pub fn validate_instance(inst: &ClqrInstance) -> ValidationReport {
    let mut checks = Vec::new();
    for (name, m) in [("psd_q", &inst.q), ("psd_r", &inst.r)] {
        let min_eig = linalg::min_sym_eigenvalue(m);
        let asym = linalg::asymmetry(m);
        checks.push(Check {
            name,
            passed: min_eig >= PSD_FLOOR && asym <= 1e-9,
            value: min_eig,
            detail: format!("min eigenvalue {min_eig:.3e}, asymmetry {asym:.1e}"),
        });
    }
    checks.push(input_boundedness(inst));
    let gn = inst.gamma * linalg::spectral_norm(&inst.a);
    checks.push(Check {
        name: "stability",
        passed: gn < 1.0,
        value: gn,
        detail: format!("gamma*||A||_2 = {gn:.6}"),
    });
    ValidationReport { checks }
}

/// Maximizes ±u_j over `E u ≤ h̄` with 2·n_u linear programs.
fn input_boundedness(inst: &ClqrInstance) -> Check {
    let nu = inst.n_u();
    let name = "bounded_u";
    if inst.n_c() == 0 {
        return Check {
            name,
            passed: false,
            value: f64::INFINITY,
            detail: "no input constraints".into(),
        };
    }
    let mut widest: f64 = 0.0;
    for j in 0..nu {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(nu);
            c[j] = -sign;
            let lp = ConvexQcqp::new(c)
                .with_inequalities(inst.e.clone(), inst.hbar.clone())
                .expect("E and hbar agree by construction");
            let out = match conic::solve_with_duals(&lp, 1e-9) {
                Ok(o) => o,
                Err(e) => {
                    return Check {
                        name,
                        passed: false,
                        value: f64::NAN,
                        detail: e.to_string(),
                    }
                }
            };
            match out.status {
                SolveStatus::Optimal => widest = widest.max(-out.objective.unwrap()),
                status => {
                    return Check {
                        name,
                        passed: false,
                        value: f64::INFINITY,
                        detail: format!("{}u_{j} is {status:?}", if sign > 0.0 { "+" } else { "-" }),
                    }
                }
            }
        }
    }
    Check {
        name,
        passed: true,
        value: widest,
        detail: format!("max |u_j| over the input set at x = 0: {widest:.4}"),
    }
}

/// Per-component input bounds at `x`. Needs every row of `E` to touch a
/// single input so the admissible set is a box.
pub fn input_box(inst: &ClqrInstance, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let nu = inst.n_u();
    let rhs = inst.input_rhs(x);
    let mut lo = DVector::from_element(nu, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(nu, f64::INFINITY);
    for r in 0..inst.n_c() {
        let nz: Vec<usize> = (0..nu).filter(|&j| inst.e[(r, j)] != 0.0).collect();
        match nz.as_slice() {
            [] => {
                if rhs[r] < 0.0 {
                    return Err(Error::Infeasible(format!("state constraint row {r} violated")));
                }
            }
            [j] => {
                let b = rhs[r] / inst.e[(r, *j)];
                if inst.e[(r, *j)] > 0.0 {
                    hi[*j] = hi[*j].min(b);
                } else {
                    lo[*j] = lo[*j].max(b);
                }
            }
            _ => {
                return Err(Error::Precondition(format!(
                    "constraint row {r} couples several inputs; a box input set is required"
                )))
            }
        }
    }
    if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("input set is not bounded in every component".into()));
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
        return Err(Error::Infeasible(format!("empty input box at x = {:?}", x.as_slice())));
    }
    Ok((lo, hi))
}

fn chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random system: standard-normal `A` rescaled so `‖A‖₂ ≤ norm_cap`,
/// standard-normal `B`, identity weights, `‖u‖_∞ ≤ 1`, γ = 1.
pub fn random_instance(seed: u64, n_x: usize, n_u: usize, norm_cap: f64) -> Result<ClqrInstance> {
    if n_x == 0 || n_u == 0 {
        return Err(Error::Precondition("n_x and n_u must be at least 1".into()));
    }
    if !(norm_cap > 0.0) {
        return Err(Error::Precondition(format!("norm_cap = {norm_cap} must be positive")));
    }
    let mut rng = chacha(seed, 0);
    let mut a = DMatrix::from_fn(n_x, n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(n_x, n_u, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = linalg::spectral_norm(&a);
    if norm > norm_cap {
        a *= norm_cap / norm;
    }
    ClqrInstance::new(
        a,
        b,
        DMatrix::identity(n_x, n_x),
        DMatrix::identity(n_u, n_u),
        DMatrix::zeros(2 * n_u, n_x),
        box_rows(n_u),
        DVector::from_element(2 * n_u, 1.0),
        1.0,
    )
}

/// `[I; −I]`, encoding `‖u‖_∞ ≤ 1` against `h̄ = 1`.
pub fn box_rows(n_u: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(2 * n_u, n_u);
    for j in 0..n_u {
        e[(j, j)] = 1.0;
        e[(n_u + j, j)] = -1.0;
    }
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateDistribution {
    UniformBox { low: Vec<f64>, high: Vec<f64> },
    Gaussian { std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub states: StateDistribution,
    /// Attach a uniformly drawn feasible input to every state (Variant A).
    #[serde(default)]
    pub with_inputs: bool,
}

pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePointSet {
    pub states: Vec<DVector<f64>>,
    pub inputs: Option<Vec<DVector<f64>>>,
}

impl SamplePointSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Fixed state-input pairs; every pair must be feasible.
    pub fn pairs(inst: &ClqrInstance, states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() || states.is_empty() {
            return Err(Error::Precondition(format!(
                "need matching non-empty states and inputs, got {} and {}",
                states.len(),
                inputs.len()
            )));
        }
        for (m, (x, u)) in states.iter().zip(&inputs).enumerate() {
            inst.check_point(x, u)?;
            if !inst.is_feasible(x, u, 1e-9) {
                return Err(Error::Precondition(format!(
                    "pair {m} violates the constraints by {:.3e}",
                    inst.constraint_violation(x, u)
                )));
            }
        }
        Ok(SamplePointSet {
            states,
            inputs: Some(inputs),
        })
    }

    pub fn states_only(inst: &ClqrInstance, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Precondition("empty state set".into()));
        }
        if let Some(x) = states.iter().find(|x| x.len() != inst.n_x()) {
            return Err(Error::Dimension(format!("state of length {}, n_x = {}", x.len(), inst.n_x())));
        }
        Ok(SamplePointSet { states, inputs: None })
    }
}

pub fn sample_points(seed: u64, inst: &ClqrInstance, m: usize, spec: &SamplingSpec) -> Result<SamplePointSet> {
    if m == 0 {
        return Err(Error::Precondition("M must be at least 1".into()));
    }
    let nx = inst.n_x();
    let nu = inst.n_u();
    let mut rng = chacha(seed, 1);
    let mut states = Vec::with_capacity(m);
    match &spec.states {
        StateDistribution::UniformBox { low, high } => {
            if low.len() != nx || high.len() != nx {
                return Err(Error::Dimension(format!(
                    "uniform box bounds have lengths {}/{}, n_x = {nx}",
                    low.len(),
                    high.len()
                )));
            }
            if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                return Err(Error::Precondition("uniform box needs low <= high".into()));
            }
            for _ in 0..m {
                states.push(DVector::from_fn(nx, |i, _| {
                    low[i] + (high[i] - low[i]) * rng.random::<f64>()
                }));
            }
        }
        StateDistribution::Gaussian { std } => {
            if !(*std > 0.0) {
                return Err(Error::Precondition(format!("gaussian std = {std} must be positive")));
            }
            for _ in 0..m {
                states.push(DVector::from_fn(nx, |_, _| std * rng.sample::<f64, _>(StandardNormal)));
            }
        }
    }
    let inputs = if spec.with_inputs {
        let mut inputs = Vec::with_capacity(m);
        for (k, x) in states.iter().enumerate() {
            let mut found = None;
            for _ in 0..MAX_REJECTIONS {
                let u = DVector::from_fn(nu, |_, _| rng.random_range(-1.0..=1.0));
                if inst.is_feasible(x, &u, 0.0) {
                    found = Some(u);
                    break;
                }
            }
            match found {
                Some(u) => inputs.push(u),
                None => {
                    return Err(Error::Precondition(format!(
                        "no feasible input for point {k} after {MAX_REJECTIONS} draws; constraint set too tight"
                    )))
                }
            }
        }
        Some(inputs)
    } else {
        None
    };
    Ok(SamplePointSet { states, inputs })
}
