//! Convex QCQP solve primitive with Lagrange multipliers.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀz
//! subject to  A z = b                         (multipliers ν, Lagrangian term νᵀ(b − A z))
//!             G z ≤ h                         (multipliers λ_c ≥ 0)
//!             ½ zᵀ P_i z + p_iᵀ z + c_i ≤ z[e]  (multipliers λ_α ≥ 0)
//! ```
//!
//! where `e` is a single epigraph column shared by every quadratic row. The
//! equality multipliers follow the `νᵀ(b − A z)` convention, so that a
//! dynamics row `x' = f(x̂, û)` yields exactly the ν of `νᵀ(f(x̂, û) − x')`.
//!
//! The solver is a primal-dual interior-point method on the convex
//! inequalities directly (see [`ipm`]). Hessians are shared between rows
//! through `Arc`, which the solver uses to group curvature terms.

mod ipm;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Multipliers above this negativity are clamped to zero on return.
pub const CLAMP_NEGATIVE: f64 = 1e-9;

/// `½ zᵀ P z + pᵀ z + c ≤ z[epigraph]`.
#[derive(Clone, Debug)]
pub struct QuadraticConstraint {
    pub hessian: Arc<DMatrix<f64>>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

impl QuadraticConstraint {
    /// Left-hand side value, without the epigraph variable.
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(self.hessian.as_ref() * z)) + self.linear.dot(z) + self.offset
    }
}

#[derive(Clone, Debug)]
pub struct ConvexQcqp {
    objective: DVector<f64>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
    quadratic: Vec<QuadraticConstraint>,
    epigraph: Option<usize>,
}

impl ConvexQcqp {
    pub fn new(objective: DVector<f64>) -> Self {
        let n = objective.len();
        ConvexQcqp {
            objective,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            quadratic: Vec::new(),
            epigraph: None,
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "equality block is {}x{} with rhs {}, decision dimension {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim()
            )));
        }
        self.eq_matrix = a;
        self.eq_rhs = b;
        Ok(self)
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.ncols() != self.dim() || g.nrows() != h.len() {
            return Err(Error::Dimension(format!(
                "inequality block is {}x{} with rhs {}, decision dimension {}",
                g.nrows(),
                g.ncols(),
                h.len(),
                self.dim()
            )));
        }
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        Ok(self)
    }

    pub fn with_epigraph(mut self, column: usize) -> Result<Self> {
        if column >= self.dim() {
            return Err(Error::Dimension(format!(
                "epigraph column {column} outside decision dimension {}",
                self.dim()
            )));
        }
        self.epigraph = Some(column);
        Ok(self)
    }

    pub fn push_quadratic(&mut self, qc: QuadraticConstraint) -> Result<()> {
        let n = self.dim();
        if qc.hessian.nrows() != n || qc.hessian.ncols() != n || qc.linear.len() != n {
            return Err(Error::Dimension(format!(
                "quadratic constraint {} has hessian {}x{} and linear term {}, decision dimension {n}",
                self.quadratic.len(),
                qc.hessian.nrows(),
                qc.hessian.ncols(),
                qc.linear.len()
            )));
        }
        self.quadratic.push(qc);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &DVector<f64> {
        &self.objective
    }

    pub fn equalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.eq_matrix, &self.eq_rhs)
    }

    pub fn inequalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.ineq_matrix, &self.ineq_rhs)
    }

    pub fn quadratic(&self) -> &[QuadraticConstraint] {
        &self.quadratic
    }

    pub fn epigraph(&self) -> Option<usize> {
        self.epigraph
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.ineq_rhs.len()
    }

    /// Checks convexity (PSD floor −1e-9 on every distinct Hessian) and
    /// that quadratic rows have an epigraph column.
    pub fn validate(&self) -> Result<()> {
        if !self.quadratic.is_empty() && self.epigraph.is_none() {
            return Err(Error::Precondition(
                "quadratic constraints need a designated epigraph column".into(),
            ));
        }
        let mut seen: Vec<*const DMatrix<f64>> = Vec::new();
        for (i, qc) in self.quadratic.iter().enumerate() {
            let ptr = Arc::as_ptr(&qc.hessian);
            if seen.contains(&ptr) {
                continue;
            }
            seen.push(ptr);
            let asym = linalg::asymmetry(&qc.hessian);
            if asym > 1e-9 {
                return Err(Error::Precondition(format!(
                    "hessian of quadratic constraint {i} is not symmetric (max asymmetry {asym:.3e})"
                )));
            }
            let min_eig = linalg::min_sym_eigenvalue(&qc.hessian);
            if min_eig < -1e-9 {
                return Err(Error::Precondition(format!(
                    "hessian of quadratic constraint {i} is not PSD (min eigenvalue {min_eig:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// Structured-text dump for cross-checking with external solvers.
    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct QuadDump {
            hessian: Vec<Vec<f64>>,
            linear: Vec<f64>,
            offset: f64,
        }
        #[derive(Serialize)]
        struct Dump {
            dim: usize,
            objective: Vec<f64>,
            eq_matrix: Vec<Vec<f64>>,
            eq_rhs: Vec<f64>,
            ineq_matrix: Vec<Vec<f64>>,
            ineq_rhs: Vec<f64>,
            epigraph: Option<usize>,
            quadratic: Vec<QuadDump>,
        }
        let dump = Dump {
            dim: self.dim(),
            objective: self.objective.iter().copied().collect(),
            eq_matrix: linalg::matrix_to_rows(&self.eq_matrix),
            eq_rhs: self.eq_rhs.iter().copied().collect(),
            ineq_matrix: linalg::matrix_to_rows(&self.ineq_matrix),
            ineq_rhs: self.ineq_rhs.iter().copied().collect(),
            epigraph: self.epigraph,
            quadratic: self
                .quadratic
                .iter()
                .map(|q| QuadDump {
                    hessian: linalg::matrix_to_rows(&q.hessian),
                    linear: q.linear.iter().copied().collect(),
                    offset: q.offset,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("plain data serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericFailure,
}

#[derive(Clone, Debug)]
pub struct Duals {
    /// ν, one per equality row.
    pub equality: DVector<f64>,
    /// λ_c, one per affine inequality row.
    pub inequality: DVector<f64>,
    /// λ_α, one per quadratic row.
    pub quadratic: DVector<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub primal: Option<DVector<f64>>,
    pub objective: Option<f64>,
    pub duals: Option<Duals>,
    pub residuals: KktResiduals,
    /// Smallest multiplier before clamping.
    pub min_raw_multiplier: f64,
    pub iterations: usize,
}

impl SolveOutcome {
    pub(crate) fn failed(status: SolveStatus, iterations: usize) -> Self {
        SolveOutcome {
            status,
            primal: None,
            objective: None,
            duals: None,
            residuals: KktResiduals::default(),
            min_raw_multiplier: 0.0,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `prob` to relative tolerance `tol` and returns primal and dual
/// solutions. Infeasible, unbounded and stalled solves are reported in the
/// status, not as errors; errors are reserved for malformed input.
pub fn solve_with_duals(prob: &ConvexQcqp, tol: f64) -> Result<SolveOutcome> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::Precondition(format!(
            "solver tolerance {tol:e} outside [1e-12, 1e-4]"
        )));
    }
    prob.validate()?;
    let mut outcome = ipm::solve(prob, tol);
    if outcome.status == SolveStatus::Optimal {
        finalize(prob, tol, &mut outcome);
    }
    Ok(outcome)
}

/// Clamps tiny negative multipliers, recomputes residuals on the original
/// problem and downgrades the status if they miss tolerance.
fn finalize(prob: &ConvexQcqp, tol: f64, outcome: &mut SolveOutcome) {
    let Some(duals) = outcome.duals.as_mut() else {
        return;
    };
    let min_raw = duals
        .inequality
        .iter()
        .chain(duals.quadratic.iter())
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    outcome.min_raw_multiplier = if min_raw.is_finite() { min_raw } else { 0.0 };
    if outcome.min_raw_multiplier < -CLAMP_NEGATIVE {
        outcome.status = SolveStatus::NumericFailure;
        return;
    }
    duals.inequality.apply(|v| *v = v.max(0.0));
    duals.quadratic.apply(|v| *v = v.max(0.0));

    let z = outcome.primal.as_ref().expect("optimal outcome has a primal");
    let duals = outcome.duals.as_ref().unwrap();
    let res = kkt_residuals(prob, z, duals);
    outcome.residuals = res;
    let obj = prob.objective.dot(z);
    outcome.objective = Some(obj);
    let scale = 1.0 + obj.abs();
    let feas_scale = 1.0 + linalg::inf_norm(&prob.eq_rhs).max(linalg::inf_norm(&prob.ineq_rhs));
    let ok = res.primal <= tol * feas_scale
        && res.dual <= tol * (1.0 + linalg::inf_norm(&prob.objective))
        && res.gap <= tol * scale;
    if !ok {
        outcome.status = SolveStatus::NumericFailure;
    }
}

/// Gradient of the Lagrangian with respect to z, in the `νᵀ(b − A z)` convention.
fn lagrangian_gradient(prob: &ConvexQcqp, z: &DVector<f64>, duals: &Duals) -> DVector<f64> {
    let mut g = prob.objective.clone();
    if prob.num_equalities() > 0 {
        g -= prob.eq_matrix.transpose() * &duals.equality;
    }
    if prob.num_inequalities() > 0 {
        g += prob.ineq_matrix.transpose() * &duals.inequality;
    }
    for (qc, &mu) in prob.quadratic.iter().zip(duals.quadratic.iter()) {
        if mu == 0.0 {
            continue;
        }
        g += (qc.hessian.as_ref() * z + &qc.linear) * mu;
        if let Some(e) = prob.epigraph {
            g[e] -= mu;
        }
    }
    g
}

/// KKT residuals of a primal-dual pair on the original problem.
pub fn kkt_residuals(prob: &ConvexQcqp, z: &DVector<f64>, duals: &Duals) -> KktResiduals {
    let mut primal: f64 = 0.0;
    if prob.num_equalities() > 0 {
        primal = primal.max(linalg::inf_norm(&(&prob.eq_matrix * z - &prob.eq_rhs)));
    }
    let mut comp: f64 = 0.0;
    let mut gap = 0.0;
    if prob.num_inequalities() > 0 {
        let slack = &prob.ineq_matrix * z - &prob.ineq_rhs;
        for (s, l) in slack.iter().zip(duals.inequality.iter()) {
            primal = primal.max(s.max(0.0));
            comp = comp.max((s * l).abs());
            gap -= s * l;
        }
    }
    let alpha = prob.epigraph.map(|e| z[e]).unwrap_or(0.0);
    for (qc, l) in prob.quadratic.iter().zip(duals.quadratic.iter()) {
        let s = qc.value(z) - alpha;
        primal = primal.max(s.max(0.0));
        comp = comp.max((s * l).abs());
        gap -= s * l;
    }
    let dual = linalg::inf_norm(&lagrangian_gradient(prob, z, duals));
    KktResiduals {
        primal,
        dual,
        complementarity: comp,
        gap: gap.abs(),
    }
}

/// Dual objective `inf_z L(z, ν, λ_c, λ_α)` reconstructed from multipliers.
#[derive(Clone, Copy, Debug)]
pub struct DualValue {
    pub value: f64,
    /// Norm of the Lagrangian's linear term outside the range of its
    /// Hessian; zero for exactly dual-feasible multipliers.
    pub null_residual: f64,
}

pub fn dual_objective(prob: &ConvexQcqp, duals: &Duals) -> DualValue {
    let n = prob.dim();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut lin = prob.objective.clone();
    let mut constant = 0.0;
    if prob.num_equalities() > 0 {
        lin -= prob.eq_matrix.transpose() * &duals.equality;
        constant += duals.equality.dot(&prob.eq_rhs);
    }
    if prob.num_inequalities() > 0 {
        lin += prob.ineq_matrix.transpose() * &duals.inequality;
        constant -= duals.inequality.dot(&prob.ineq_rhs);
    }
    for (qc, &mu) in prob.quadratic.iter().zip(duals.quadratic.iter()) {
        hess += qc.hessian.as_ref() * mu;
        lin += &qc.linear * mu;
        if let Some(e) = prob.epigraph {
            lin[e] -= mu;
        }
        constant += mu * qc.offset;
    }
    let eig = hess.symmetric_eigen();
    let thr = 1e-10 * (1.0 + eig.eigenvalues.amax());
    let mut value = constant;
    let mut null_sq = 0.0;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let g = eig.eigenvectors.column(k).dot(&lin);
        if ev > thr {
            value -= 0.5 * g * g / ev;
        } else {
            null_sq += g * g;
        }
    }
    DualValue {
        value,
        null_residual: null_sq.sqrt(),
    }
}
