//! The one-stage epigraph problem, the Bellman operator on Q-functions and
//! cut extraction.
//!
//! For a point `(x̂, û)` the program over `z = (x', u', α)` is
//!
//! ```text
//! minimize    γ α
//! subject to  x' = A x̂ + B û
//!             D x' + E u' ≤ h̄
//!             q_i(x', u') ≤ α      i = 0, …, I
//! ```
//!
//! and `T_Q Q_I(x̂, û) = ℓ(x̂, û) + γ α⋆`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conic::{self, ConvexQcqp, QuadraticConstraint, SolveOutcome, SolveStatus};
use crate::problem::input_box;
use crate::error::{Error, Result};
use crate::qfunction::{BendersCut, PwmQFunction};

/// Bellman errors in `[-NEG_TOL, 0)` are rounding noise and read as 0.
pub const NEG_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct StageDuals {
    pub nu: DVector<f64>,
    pub lambda_c: DVector<f64>,
    pub lambda_alpha: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveDiagnostics {
    /// `|Σλ_α − γ|`.
    pub dual_sum_residual: f64,
    pub min_raw_multiplier: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct OneStageSolution {
    pub feasible: bool,
    /// `T_Q Q_I(x̂, û)`.
    pub value: f64,
    pub successor: DVector<f64>,
    pub next_input: DVector<f64>,
    pub alpha: f64,
    pub duals: Option<StageDuals>,
    pub diagnostics: SolveDiagnostics,
}

pub fn build_one_stage(q: &PwmQFunction, x_hat: &DVector<f64>, u_hat: &DVector<f64>) -> Result<ConvexQcqp> {
    build_one_stage_subset(q, x_hat, u_hat, None)
}

/// The one-stage program restricted to the cuts in `subset`.
pub fn build_one_stage_subset(
    q: &PwmQFunction,
    x_hat: &DVector<f64>,
    u_hat: &DVector<f64>,
    subset: Option<&[usize]>,
) -> Result<ConvexQcqp> {
    let inst = q.instance();
    inst.check_point(x_hat, u_hat)?;
    let (nx, nu, nc) = (inst.n_x(), inst.n_u(), inst.n_c());
    let n = nx + nu + 1;
    let ia = nx + nu;

    let mut objective = DVector::zeros(n);
    objective[ia] = inst.gamma;

    let mut eq = DMatrix::zeros(nx, n);
    eq.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let rhs = inst.dynamics(x_hat, u_hat);

    let mut g = DMatrix::zeros(nc, n);
    g.view_mut((0, 0), (nc, nx)).copy_from(&inst.d);
    g.view_mut((0, nx), (nc, nu)).copy_from(&inst.e);

    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (nx, nx)).copy_from(&inst.q);
    p.view_mut((nx, nx), (nu, nu)).copy_from(&inst.r);
    let p = Arc::new(p);

    let mut prob = ConvexQcqp::new(objective)
        .with_equalities(eq, rhs)?
        .with_inequalities(g, inst.hbar.clone())?
        .with_epigraph(ia)?;
    let all: Vec<usize>;
    let subset = match subset {
        Some(s) => s,
        None => {
            all = (0..q.len()).collect();
            &all
        }
    };
    for &i in subset {
        let (cut, (at_nu, bt_nu)) = (&q.cuts()[i], &q.slopes()[i]);
        let mut linear = DVector::zeros(n);
        linear.rows_mut(0, nx).copy_from(at_nu);
        linear.rows_mut(nx, nu).copy_from(bt_nu);
        prob.push_quadratic(QuadraticConstraint {
            hessian: Arc::clone(&p),
            linear,
            offset: cut.xi,
        })?;
    }
    Ok(prob)
}

/// Solves the one-stage problem at `(x̂, û)`.
///
/// An infeasible program is reported through `feasible = false`; a solver
/// stall is an [`Error::NumericFailure`].
pub fn apply_bellman(q: &PwmQFunction, x_hat: &DVector<f64>, u_hat: &DVector<f64>, tol: f64) -> Result<OneStageSolution> {
    apply_bellman_hinted(q, x_hat, u_hat, tol, None)
}

/// [`apply_bellman`] with a guess of the next input used to pick the
/// initial working set of cuts.
pub fn apply_bellman_hinted(
    q: &PwmQFunction,
    x_hat: &DVector<f64>,
    u_hat: &DVector<f64>,
    tol: f64,
    hint: Option<&DVector<f64>>,
) -> Result<OneStageSolution> {
    let inst = q.instance();
    inst.check_point(x_hat, u_hat)?;
    let viol = inst.constraint_violation(x_hat, u_hat);
    if viol > 1e-9 {
        return Err(Error::Precondition(format!("point violates the constraints by {viol:.3e}")));
    }
    let (nx, nu) = (inst.n_x(), inst.n_u());
    let successor = inst.dynamics(x_hat, u_hat);
    let out = solve_screened(q, &successor, nx, nx + nu, hint, tol, |subset| {
        build_one_stage_subset(q, x_hat, u_hat, subset)
    })?;
    match out.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Ok(OneStageSolution {
                feasible: false,
                value: f64::NAN,
                successor: DVector::zeros(0),
                next_input: DVector::zeros(0),
                alpha: f64::NAN,
                duals: None,
                diagnostics: SolveDiagnostics {
                    dual_sum_residual: 0.0,
                    min_raw_multiplier: 0.0,
                    gap: 0.0,
                    iterations: out.iterations,
                },
            });
        }
        SolveStatus::Unbounded | SolveStatus::NumericFailure => {
            return Err(Error::NumericFailure(format!(
                "one-stage solve with {} cuts ended as {:?} after {} iterations",
                q.len(),
                out.status,
                out.iterations
            )));
        }
    }
    let z = out.primal.expect("optimal outcome carries a primal");
    let d = out.duals.expect("optimal outcome carries duals");
    let alpha = z[nx + nu];
    let dual_sum_residual = (d.quadratic.sum() - inst.gamma).abs();
    Ok(OneStageSolution {
        feasible: true,
        value: inst.stage_cost(x_hat, u_hat) + inst.gamma * alpha,
        successor: z.rows(0, nx).into_owned(),
        next_input: z.rows(nx, nu).into_owned(),
        alpha,
        duals: Some(StageDuals {
            nu: d.equality,
            lambda_c: d.inequality,
            lambda_alpha: d.quadratic,
        }),
        diagnostics: SolveDiagnostics {
            dual_sum_residual,
            min_raw_multiplier: out.min_raw_multiplier,
            gap: out.residuals.gap,
            iterations: out.iterations,
        },
    })
}

/// Programs with fewer cuts are always solved in full.
pub const SCREEN_MIN_CUTS: usize = 32;
const MAX_SCREEN_ROUNDS: usize = 50;

/// Solves an epigraph program `min …` s.t. `q_i(state, u) ≤ z[epigraph]` over
/// a working set of cuts, adding every cut the working-set solution violates
/// until none is. The returned outcome carries multipliers for all cuts, zero
/// for those left out. `build(None)` must give the full program.
pub(crate) fn solve_screened(
    q: &PwmQFunction,
    state: &DVector<f64>,
    input_at: usize,
    epigraph: usize,
    hint: Option<&DVector<f64>>,
    tol: f64,
    build: impl Fn(Option<&[usize]>) -> Result<ConvexQcqp>,
) -> Result<SolveOutcome> {
    let k = q.len();
    if k < SCREEN_MIN_CUTS {
        return conic::solve_with_duals(&build(None)?, tol);
    }
    let inst = q.instance();
    let nu = inst.n_u();
    let per_round = 2 * (nu + 1);

    let mut candidates = vec![DVector::zeros(nu)];
    candidates.extend(hint.filter(|h| h.len() == nu).cloned());
    if nu <= 3 {
        if let Ok((lo, hi)) = input_box(inst, state) {
            for mask in 0..(1usize << nu) {
                candidates.push(DVector::from_fn(nu, |j, _| if (mask >> j) & 1 == 1 { hi[j] } else { lo[j] }));
            }
        }
    }
    let mut in_set = vec![false; k];
    for u in &candidates {
        for i in top_indices(&q.offsets(state, u), 2 * per_round, |_| true) {
            in_set[i] = true;
        }
    }

    for _ in 0..MAX_SCREEN_ROUNDS {
        let subset: Vec<usize> = (0..k).filter(|&i| in_set[i]).collect();
        let out = conic::solve_with_duals(&build(Some(&subset))?, tol)?;
        match out.status {
            SolveStatus::Optimal => {}
            // the affine constraints are all present, so infeasibility carries over
            SolveStatus::Infeasible => return Ok(out),
            _ => break,
        }
        let z = out.primal.as_ref().expect("optimal outcome carries a primal");
        let u = z.rows(input_at, nu).into_owned();
        let level = z[epigraph] - inst.stage_cost(state, &u);
        let offsets = q.offsets(state, &u);
        let violated = top_indices(&offsets, per_round, |i| !in_set[i] && offsets[i] > level);
        if violated.is_empty() {
            let mut out = out;
            if let Some(d) = out.duals.as_mut() {
                let mut full = DVector::zeros(k);
                for (j, &i) in subset.iter().enumerate() {
                    full[i] = d.quadratic[j];
                }
                d.quadratic = full;
            }
            return Ok(out);
        }
        for i in violated {
            in_set[i] = true;
        }
    }
    conic::solve_with_duals(&build(None)?, tol)
}

/// Indices of the `count` largest values among those passing `keep`, ascending.
fn top_indices(values: &[f64], count: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| keep(i)).collect();
    if idx.len() > count {
        idx.select_nth_unstable_by(count - 1, |&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        idx.truncate(count);
    }
    idx.sort_unstable();
    idx
}

/// The cut `ℓ + νᵀf + ξ` with `ξ = γα − νᵀ f(x̂, û)`, indexed as the next cut of `q`.
pub fn extract_cut(sol: &OneStageSolution, q: &PwmQFunction, x_hat: &DVector<f64>, u_hat: &DVector<f64>) -> Result<BendersCut> {
    let duals = sol
        .duals
        .as_ref()
        .filter(|_| sol.feasible)
        .ok_or_else(|| Error::Precondition("cut extraction needs a feasible solution with duals".into()))?;
    let inst = q.instance();
    inst.check_point(x_hat, u_hat)?;
    let xi = sol.value - inst.stage_cost(x_hat, u_hat) - duals.nu.dot(&inst.dynamics(x_hat, u_hat));
    Ok(BendersCut {
        index: q.len(),
        nu: duals.nu.clone(),
        xi,
    })
}

/// Evaluates ξ as the infimum over `(x', u')` of the Lagrangian terms that do
/// not depend on `(x̂, û)`. Returns `None` when `Σλ_α · blkdiag(Q, R)` is not
/// positive definite. Debug cross-check for [`extract_cut`].
pub fn xi_direct(q: &PwmQFunction, duals: &StageDuals) -> Option<f64> {
    let inst = q.instance();
    let (nx, nu) = (inst.n_x(), inst.n_u());
    let s = duals.lambda_alpha.sum();
    let mut h = DMatrix::zeros(nx + nu, nx + nu);
    h.view_mut((0, 0), (nx, nx)).copy_from(&(&inst.q * s));
    h.view_mut((nx, nx), (nu, nu)).copy_from(&(&inst.r * s));
    let mut g = DVector::zeros(nx + nu);
    let mut gx = -&duals.nu + inst.d.tr_mul(&duals.lambda_c);
    let mut gu = inst.e.tr_mul(&duals.lambda_c);
    let mut constant = -duals.lambda_c.dot(&inst.hbar);
    for (lam, (cut, (at_nu, bt_nu))) in duals.lambda_alpha.iter().zip(q.cuts().iter().zip(q.slopes())) {
        gx += at_nu * *lam;
        gu += bt_nu * *lam;
        constant += lam * cut.xi;
    }
    g.rows_mut(0, nx).copy_from(&gx);
    g.rows_mut(nx, nu).copy_from(&gu);
    let chol = h.cholesky()?;
    let sol = chol.solve(&g);
    Some(constant - 0.5 * g.dot(&sol))
}

#[derive(Clone, Debug)]
pub struct BellmanEvaluation {
    /// Error after clamping small negatives to zero.
    pub error: f64,
    pub raw_error: f64,
    /// `Q_I(x, u)`.
    pub q_value: f64,
    pub solution: OneStageSolution,
}

/// Bellman error together with the solve that produced it.
pub fn evaluate_bellman(q: &PwmQFunction, x: &DVector<f64>, u: &DVector<f64>, tol: f64) -> Result<BellmanEvaluation> {
    evaluate_bellman_hinted(q, x, u, tol, None)
}

pub fn evaluate_bellman_hinted(
    q: &PwmQFunction,
    x: &DVector<f64>,
    u: &DVector<f64>,
    tol: f64,
    hint: Option<&DVector<f64>>,
) -> Result<BellmanEvaluation> {
    let solution = apply_bellman_hinted(q, x, u, tol, hint)?;
    if !solution.feasible {
        return Err(Error::Infeasible(format!(
            "one-stage problem infeasible at x = {:?}, u = {:?}",
            x.as_slice(),
            u.as_slice()
        )));
    }
    let q_value = q.eval(x, u).0;
    let raw_error = solution.value - q_value;
    let error = clamp_error(raw_error)?;
    Ok(BellmanEvaluation {
        error,
        raw_error,
        q_value,
        solution,
    })
}

pub fn bellman_error(q: &PwmQFunction, x: &DVector<f64>, u: &DVector<f64>, tol: f64) -> Result<f64> {
    Ok(evaluate_bellman(q, x, u, tol)?.error)
}

fn clamp_error(raw: f64) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -NEG_TOL {
        Ok(0.0)
    } else {
        Err(Error::InvariantViolation(format!(
            "Bellman error {raw:.3e} below -{NEG_TOL:e}"
        )))
    }
}
