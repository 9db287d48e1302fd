//! Greedy policies induced by Q-functions and closed-loop simulation.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conic::{ConvexQcqp, QuadraticConstraint, SolveStatus};
use crate::one_stage::solve_screened;
use crate::error::{Error, Result};
use crate::problem::ClqrInstance;
use crate::qfunction::PwmQFunction;

pub const HORIZON_CAP: usize = 1000;
pub const TAIL_TOL: f64 = 1e-12;

/// `argmin_u Q(x, u)` over `E u ≤ h̄ − D x`, as the epigraph program
/// `min β s.t. q_i(x, u) ≤ β`. Returns the input and `Q(x, u)` at it.
pub fn greedy_input(q: &PwmQFunction, x: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, f64)> {
    greedy_input_hinted(q, x, tol, None)
}

/// [`greedy_input`] with a guess of the minimizer used to pick the initial
/// working set of cuts.
pub fn greedy_input_hinted(
    q: &PwmQFunction,
    x: &DVector<f64>,
    tol: f64,
    hint: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, f64)> {
    let inst = q.instance();
    if x.len() != inst.n_x() {
        return Err(Error::Dimension(format!("|x| = {}, n_x = {}", x.len(), inst.n_x())));
    }
    let (nu, nc) = (inst.n_u(), inst.n_c());
    let n = nu + 1;
    let mut objective = DVector::zeros(n);
    objective[nu] = 1.0;
    let mut g = DMatrix::zeros(nc, n);
    g.view_mut((0, 0), (nc, nu)).copy_from(&inst.e);
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (nu, nu)).copy_from(&inst.r);
    let p = Arc::new(p);

    let ax = &inst.a * x;
    let state_cost = 0.5 * x.dot(&(&inst.q * x));
    let build = |subset: Option<&[usize]>| -> Result<ConvexQcqp> {
        let mut prob = ConvexQcqp::new(objective.clone())
            .with_inequalities(g.clone(), inst.input_rhs(x))?
            .with_epigraph(nu)?;
        let all: Vec<usize>;
        let subset = match subset {
            Some(s) => s,
            None => {
                all = (0..q.len()).collect();
                &all
            }
        };
        for &i in subset {
            let (cut, (_, bt_nu)) = (&q.cuts()[i], &q.slopes()[i]);
            let mut linear = DVector::zeros(n);
            linear.rows_mut(0, nu).copy_from(bt_nu);
            prob.push_quadratic(QuadraticConstraint {
                hessian: Arc::clone(&p),
                linear,
                offset: state_cost + cut.nu.dot(&ax) + cut.xi,
            })?;
        }
        Ok(prob)
    };
    let out = solve_screened(q, x, 0, nu, hint, tol, build)?;
    match out.status {
        SolveStatus::Optimal => {
            let z = out.primal.expect("optimal outcome carries a primal");
            let u = z.rows(0, nu).into_owned();
            let value = q.eval(x, &u).0;
            Ok((u, value))
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "no admissible input at x = {:?}",
            x.as_slice()
        ))),
        status => Err(Error::NumericFailure(format!(
            "greedy input solve ended as {status:?} after {} iterations",
            out.iterations
        ))),
    }
}

pub trait Policy {
    fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// `π(x; Q)` for a fixed Q-function estimate.
pub struct GreedyPolicy<'a> {
    pub q: &'a PwmQFunction,
    pub tol: f64,
}

impl Policy for GreedyPolicy<'_> {
    fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        greedy_input(self.q, x, self.tol).map(|(u, _)| u)
    }
}

impl<F> Policy for F
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self(x)
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    /// `Σ γᵗ ℓ_t` over the simulated steps.
    pub total_cost: f64,
    pub horizon: usize,
    /// Estimated discounted cost beyond the horizon; not part of `total_cost`.
    pub tail_bound: f64,
}

impl TrajectoryRecord {
    /// `t,x_0,…,u_0,…,stage_cost`, one row per applied input.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let nx = self.states.first().map_or(0, |x| x.len());
        let nu = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x_{i}")));
        header.extend((0..nu).map(|i| format!("u_{i}")));
        header.push("stage_cost".into());
        w.write_record(&header)?;
        for (t, (u, c)) in self.inputs.iter().zip(&self.stage_costs).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| v.to_string()));
            row.extend(u.iter().map(|v| v.to_string()));
            row.push(c.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Rolls `policy` forward from `x0` until a stage cost drops below `tail_tol`
/// or `horizon_cap` inputs have been applied.
pub fn simulate(
    policy: &dyn Policy,
    inst: &ClqrInstance,
    x0: &DVector<f64>,
    horizon_cap: usize,
    tail_tol: f64,
) -> Result<TrajectoryRecord> {
    if horizon_cap == 0 {
        return Err(Error::Precondition("horizon_cap must be at least 1".into()));
    }
    if x0.len() != inst.n_x() {
        return Err(Error::Dimension(format!("|x0| = {}, n_x = {}", x0.len(), inst.n_x())));
    }
    let gamma = inst.gamma;
    let mut x = x0.clone();
    let mut states = vec![x.clone()];
    let mut inputs = Vec::new();
    let mut costs = Vec::new();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..horizon_cap {
        let u = policy.input(&x).map_err(|e| match e {
            Error::Infeasible(msg) | Error::NumericFailure(msg) => {
                Error::Infeasible(format!("step {t}, state {:?}: {msg}", x.as_slice()))
            }
            other => other,
        })?;
        if u.len() != inst.n_u() || !inst.is_feasible(&x, &u, 1e-8) {
            return Err(Error::Infeasible(format!(
                "step {t}, state {:?}: policy input {:?} is not admissible",
                x.as_slice(),
                u.as_slice()
            )));
        }
        let cost = inst.stage_cost(&x, &u);
        total += discount * cost;
        discount *= gamma;
        x = inst.dynamics(&x, &u);
        states.push(x.clone());
        inputs.push(u);
        costs.push(cost);
        if cost < tail_tol {
            break;
        }
    }
    let horizon = costs.len();
    let tail_bound = tail_estimate(&costs, gamma);
    Ok(TrajectoryRecord {
        states,
        inputs,
        stage_costs: costs,
        total_cost: total,
        horizon,
        tail_bound,
    })
}

/// `c_T γ^T / (1 − γρ)` with ρ the geometric-mean cost ratio over the last
/// ten steps.
fn tail_estimate(costs: &[f64], gamma: f64) -> f64 {
    let Some(&last) = costs.last() else {
        return 0.0;
    };
    if last == 0.0 {
        return 0.0;
    }
    let t = costs.len() - 1;
    let k = t.min(10);
    let rho = if k == 0 || costs[t - k] <= 0.0 {
        0.0
    } else {
        (last / costs[t - k]).powf(1.0 / k as f64)
    };
    if gamma * rho >= 1.0 {
        return f64::INFINITY;
    }
    last * gamma.powi(t as i32 + 1) / (1.0 - gamma * rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::DEFAULT_TOL;
    use crate::one_stage::{apply_bellman, extract_cut};

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn scalar_q() -> PwmQFunction {
        PwmQFunction::new(Arc::new(ClqrInstance::scalar_benchmark()))
    }

    #[test]
    fn base_cut_policy_is_zero() {
        let q = scalar_q();
        for x in [0.0, 1.0, -2.7] {
            let (u, val) = greedy_input(&q, &v(x), DEFAULT_TOL).unwrap();
            assert!(u[0].abs() < 1e-6, "x = {x}: u = {}", u[0]);
            assert!((val - 0.5 * x * x).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_matches_grid_minimum() {
        let mut q = scalar_q();
        for &(x, u) in &[(2.0, 0.0), (-1.0, 0.5), (3.0, -1.0), (1.0, -0.5)] {
            let sol = apply_bellman(&q, &v(x), &v(u), DEFAULT_TOL).unwrap();
            let cut = extract_cut(&sol, &q, &v(x), &v(u)).unwrap();
            q.add_cut(cut).unwrap();
        }
        for x in [-2.0, 0.4, 1.0, 2.5] {
            let (u, val) = greedy_input(&q, &v(x), DEFAULT_TOL).unwrap();
            assert!(u[0].abs() <= 1.0 + 1e-8);
            let grid = (0..=20_000)
                .map(|k| q.eval(&v(x), &v(-1.0 + 1e-4 * k as f64)).0)
                .fold(f64::INFINITY, f64::min);
            assert!(val <= grid + 1e-7 && val >= grid - 1e-6, "{val} vs {grid}");
        }
    }

    #[test]
    fn origin_trajectory_is_free() {
        let inst = ClqrInstance::scalar_benchmark();
        let zero = |_: &DVector<f64>| -> Result<DVector<f64>> { Ok(v(0.0)) };
        let rec = simulate(&zero, &inst, &v(0.0), HORIZON_CAP, TAIL_TOL).unwrap();
        assert_eq!(rec.total_cost, 0.0);
        assert_eq!(rec.horizon, 1);
        assert_eq!(rec.tail_bound, 0.0);
    }

    #[test]
    fn open_loop_decay_and_dynamics() {
        let inst = ClqrInstance::scalar_benchmark();
        let zero = |_: &DVector<f64>| -> Result<DVector<f64>> { Ok(v(0.0)) };
        let rec = simulate(&zero, &inst, &v(1.0), HORIZON_CAP, TAIL_TOL).unwrap();
        // Σ ½ 0.81ᵗ = 0.5 / 0.19
        assert!((rec.total_cost - 0.5 / 0.19).abs() < 1e-10);
        for t in 0..rec.horizon {
            let next = inst.dynamics(&rec.states[t], &rec.inputs[t]);
            assert!((next - &rec.states[t + 1]).amax() <= 1e-12);
        }
        assert!(rec.tail_bound < 1e-10);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_0,u_0,stage_cost\n"));
        assert_eq!(text.lines().count(), rec.horizon + 1);
    }

    #[test]
    fn inadmissible_input_reports_step() {
        let inst = ClqrInstance::scalar_benchmark();
        let bad = |x: &DVector<f64>| -> Result<DVector<f64>> { Ok(-x * 2.0) };
        let err = simulate(&bad, &inst, &v(1.0), 10, TAIL_TOL).unwrap_err();
        assert!(err.to_string().contains("step 0"), "{err}");
    }
}
