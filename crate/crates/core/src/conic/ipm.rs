//! Primal-dual interior-point method for convex inequality-constrained
//! problems with affine equalities (infeasible-equality start, strictly
//! feasible inequality start).
//!
//! Pipeline: singleton equality rows fix their variable and are eliminated
//! (their multipliers are recovered from stationarity afterwards); a
//! strictly feasible start is found by lifting the epigraph column or, when
//! that is not possible, by a phase-I solve; the core iteration then follows
//! the standard primal-dual search direction with a backtracking line search
//! on the residual norm.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ConvexQcqp, Duals, KktResiduals, SolveOutcome, SolveStatus};
use crate::linalg::inf_norm;

const MU: f64 = 10.0;
const LS_ALPHA: f64 = 0.01;
const LS_BETA: f64 = 0.5;
const MAX_ITER: usize = 200;
const DIVERGENCE: f64 = 1e12;
/// Minimum slack required before the start is considered well inside.
const START_MARGIN: f64 = 1e-6;

struct QuadGroup {
    hessian: DMatrix<f64>,
    /// One row per constraint; the epigraph −1 is folded in.
    linear: DMatrix<f64>,
    offset: DVector<f64>,
}

struct Core {
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    groups: Vec<QuadGroup>,
}

impl Core {
    fn num_ineq(&self) -> usize {
        self.h.len() + self.groups.iter().map(|g| g.offset.len()).sum::<usize>()
    }

    /// Constraint values `f(z) ≤ 0` and the per-group products `P z`.
    fn eval(&self, z: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let mut f = DVector::zeros(self.num_ineq());
        let ml = self.h.len();
        if ml > 0 {
            f.rows_mut(0, ml).copy_from(&(&self.g * z - &self.h));
        }
        let mut pz = Vec::with_capacity(self.groups.len());
        let mut off = ml;
        for grp in &self.groups {
            let p = &grp.hessian * z;
            let quad = 0.5 * z.dot(&p);
            let k = grp.offset.len();
            let mut vals = &grp.linear * z + &grp.offset;
            vals.add_scalar_mut(quad);
            f.rows_mut(off, k).copy_from(&vals);
            off += k;
            pz.push(p);
        }
        (f, pz)
    }

    fn dual_residual(
        &self,
        pz: &[DVector<f64>],
        lam: &DVector<f64>,
        nu: &DVector<f64>,
    ) -> DVector<f64> {
        let mut r = self.c.clone();
        let ml = self.h.len();
        if ml > 0 {
            r += self.g.tr_mul(&lam.rows(0, ml).into_owned());
        }
        let mut off = ml;
        for (grp, p) in self.groups.iter().zip(pz) {
            let k = grp.offset.len();
            let l = lam.rows(off, k).into_owned();
            r += p * l.sum();
            r += grp.linear.tr_mul(&l);
            off += k;
        }
        if !self.b.is_empty() {
            r += self.a.tr_mul(nu);
        }
        r
    }

    /// Constraint gradients as rows.
    fn jacobian(&self, pz: &[DVector<f64>]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.num_ineq(), self.n);
        let ml = self.h.len();
        if ml > 0 {
            j.rows_mut(0, ml).copy_from(&self.g);
        }
        let mut off = ml;
        for (grp, p) in self.groups.iter().zip(pz) {
            let k = grp.offset.len();
            let mut block = j.rows_mut(off, k);
            block.copy_from(&grp.linear);
            for mut row in block.row_iter_mut() {
                row += p.transpose();
            }
            off += k;
        }
        j
    }

    fn residual_norm(
        &self,
        z: &DVector<f64>,
        lam: &DVector<f64>,
        nu: &DVector<f64>,
        t: f64,
    ) -> Option<f64> {
        let (f, pz) = self.eval(z);
        if f.iter().any(|&v| v >= 0.0) {
            return None;
        }
        let rd = self.dual_residual(&pz, lam, nu);
        let mut sq = rd.norm_squared();
        for (fi, li) in f.iter().zip(lam.iter()) {
            let rc = -li * fi - 1.0 / t;
            sq += rc * rc;
        }
        if !self.b.is_empty() {
            sq += (&self.a * z - &self.b).norm_squared();
        }
        Some(sq.sqrt())
    }
}

impl Core {
    /// Whether `d` is a feasible descent ray: `c·d < 0`, `A d = 0` and every
    /// constraint is non-increasing along `d`.
    fn is_recession_ray(&self, d: &DVector<f64>) -> bool {
        let norm = d.norm();
        if norm == 0.0 || !norm.is_finite() {
            return false;
        }
        let d = d / norm;
        let eps = 1e-9;
        if self.c.dot(&d) >= -eps * (1.0 + self.c.norm()) {
            return false;
        }
        if !self.b.is_empty() && inf_norm(&(&self.a * &d)) > eps {
            return false;
        }
        if !self.h.is_empty() && (&self.g * &d).max() > eps {
            return false;
        }
        self.groups.iter().all(|grp| {
            inf_norm(&(&grp.hessian * &d)) <= eps && (&grp.linear * &d).max() <= eps
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoreStatus {
    Converged,
    Stopped,
    Unbounded,
    Stalled,
}

struct CoreResult {
    status: CoreStatus,
    z: DVector<f64>,
    lam: DVector<f64>,
    nu: DVector<f64>,
    iterations: usize,
}

fn solve_kkt(
    hess: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rz: &DVector<f64>,
    rp: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = hess.nrows();
    let p = a.nrows();
    let scale = 1.0 + hess.diagonal().amax();
    for reg in [0.0, 1e-13, 1e-10, 1e-7] {
        let delta = reg * scale;
        if p == 0 {
            let mut hm = hess.clone();
            for i in 0..n {
                hm[(i, i)] += delta;
            }
            if let Some(ch) = hm.clone().cholesky() {
                return Some((ch.solve(rz), DVector::zeros(0)));
            }
            if let Some(x) = hm.lu().solve(rz) {
                if x.iter().all(|v| v.is_finite()) {
                    return Some((x, DVector::zeros(0)));
                }
            }
            continue;
        }
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(hess);
        k.view_mut((n, 0), (p, n)).copy_from(a);
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        for i in 0..n {
            k[(i, i)] += delta;
        }
        for i in 0..p {
            k[(n + i, n + i)] -= delta;
        }
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(rz);
        rhs.rows_mut(n, p).copy_from(rp);
        if let Some(x) = k.lu().solve(&rhs) {
            if x.iter().all(|v| v.is_finite()) {
                return Some((x.rows(0, n).into_owned(), x.rows(n, p).into_owned()));
            }
        }
    }
    None
}

/// Runs the primal-dual iteration from a point strictly inside every
/// inequality. `stop` is polled after each accepted step.
fn run(core: &Core, z0: DVector<f64>, tol: f64, stop: &dyn Fn(&DVector<f64>) -> bool) -> CoreResult {
    let m = core.num_ineq();
    let mut z = z0;
    let (f0, _) = core.eval(&z);
    debug_assert!(f0.iter().all(|&v| v < 0.0));
    let mut lam = f0.map(|v| 1.0 / (-v).max(1e-12));
    let mut nu = DVector::zeros(core.b.len());

    let pri_tol = tol * (1.0 + inf_norm(&core.b));
    let dual_tol = tol * (1.0 + inf_norm(&core.c));

    for it in 0..MAX_ITER {
        let (f, pz) = core.eval(&z);
        let eta = -f.dot(&lam);
        let rd = core.dual_residual(&pz, &lam, &nu);
        let rp = if core.b.is_empty() {
            DVector::zeros(0)
        } else {
            &core.a * &z - &core.b
        };
        let obj = core.c.dot(&z);
        if inf_norm(&rp) <= pri_tol && inf_norm(&rd) <= dual_tol && eta <= tol * (1.0 + obj.abs()) {
            return CoreResult {
                status: CoreStatus::Converged,
                z,
                lam,
                nu,
                iterations: it,
            };
        }
        if z.amax() > DIVERGENCE || obj < -DIVERGENCE {
            return CoreResult {
                status: CoreStatus::Unbounded,
                z,
                lam,
                nu,
                iterations: it,
            };
        }

        let t = if m > 0 { MU * m as f64 / eta.max(f64::MIN_POSITIVE) } else { 1.0 };
        let jac = core.jacobian(&pz);

        // H = Σ_g (Σ λ) P_g + Jᵀ diag(λ / −f) J
        let mut hess = DMatrix::zeros(core.n, core.n);
        let mut off = core.h.len();
        for grp in &core.groups {
            let k = grp.offset.len();
            let s: f64 = lam.rows(off, k).sum();
            hess += &grp.hessian * s;
            off += k;
        }
        let mut scaled = jac.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= (lam[i] / -f[i]).sqrt();
        }
        hess += scaled.tr_mul(&scaled);

        // rhs = −c + Σ ∇f_i / (t f_i)   (the multiplier term enters via ν⁺)
        let inv_tf = f.map(|v| 1.0 / (t * v));
        let rz = -&core.c + jac.tr_mul(&inv_tf);
        let Some((dz, nu_plus)) = solve_kkt(&hess, &core.a, &rz, &(-&rp)) else {
            return CoreResult {
                status: CoreStatus::Stalled,
                z,
                lam,
                nu,
                iterations: it,
            };
        };
        let dnu = &nu_plus - &nu;
        let jdz = &jac * &dz;
        let mut dlam = DVector::zeros(m);
        for i in 0..m {
            let rc = -lam[i] * f[i] - 1.0 / t;
            dlam[i] = (rc - lam[i] * jdz[i]) / f[i];
        }

        let mut s_max: f64 = 1.0;
        for i in 0..m {
            if dlam[i] < 0.0 {
                s_max = s_max.min(-lam[i] / dlam[i]);
            }
        }
        let mut s = 0.99 * s_max;
        let r0 = core
            .residual_norm(&z, &lam, &nu, t)
            .expect("current iterate is strictly feasible");
        let mut accepted = false;
        while s > 1e-14 {
            let zt = &z + &dz * s;
            let lt = &lam + &dlam * s;
            let nt = &nu + &dnu * s;
            if let Some(r) = core.residual_norm(&zt, &lt, &nt, t) {
                if r <= (1.0 - LS_ALPHA * s) * r0 {
                    z = zt;
                    lam = lt;
                    nu = nt;
                    accepted = true;
                    break;
                }
            }
            s *= LS_BETA;
        }
        if !accepted {
            let status = if core.is_recession_ray(&dz) {
                CoreStatus::Unbounded
            } else {
                CoreStatus::Stalled
            };
            return CoreResult {
                status,
                z,
                lam,
                nu,
                iterations: it,
            };
        }
        if stop(&z) {
            return CoreResult {
                status: CoreStatus::Stopped,
                z,
                lam,
                nu,
                iterations: it + 1,
            };
        }
    }
    CoreResult {
        status: CoreStatus::Stalled,
        z,
        lam,
        nu,
        iterations: MAX_ITER,
    }
}

/// Variable elimination for equality rows with a single nonzero.
struct Presolve {
    fixed: Vec<Option<f64>>,
    fixed_by: Vec<Option<usize>>,
    free: Vec<usize>,
    eq_rows: Vec<usize>,
    ineq_rows: Vec<usize>,
    /// Per quadratic constraint: (group, row within group).
    quad_slot: Vec<(usize, usize)>,
    epigraph: Option<usize>,
}

impl Presolve {
    fn new(prob: &ConvexQcqp) -> Result<Self, SolveStatus> {
        let n = prob.dim();
        let (a, b) = prob.equalities();
        let (g, h) = prob.inequalities();
        let mut fixed = vec![None; n];
        let mut fixed_by = vec![None; n];
        let mut singleton = vec![false; a.nrows()];
        for r in 0..a.nrows() {
            let nz: Vec<usize> = (0..n).filter(|&j| a[(r, j)] != 0.0).collect();
            if nz.len() == 1 {
                let j = nz[0];
                let v = b[r] / a[(r, j)];
                singleton[r] = true;
                match fixed[j] {
                    None => {
                        fixed[j] = Some(v);
                        fixed_by[j] = Some(r);
                    }
                    Some(prev) => {
                        if (prev - v).abs() > 1e-9 * (1.0 + prev.abs()) {
                            return Err(SolveStatus::Infeasible);
                        }
                    }
                }
            } else if nz.is_empty() && b[r].abs() > 1e-9 * (1.0 + b[r].abs()) {
                return Err(SolveStatus::Infeasible);
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
        let fixed_val = |j: usize| fixed[j].unwrap_or(0.0);

        let mut eq_rows = Vec::new();
        for r in 0..a.nrows() {
            if singleton[r] {
                continue;
            }
            if free.iter().any(|&j| a[(r, j)] != 0.0) {
                eq_rows.push(r);
            } else {
                let resid: f64 = b[r] - (0..n).map(|j| a[(r, j)] * fixed_val(j)).sum::<f64>();
                if resid.abs() > 1e-9 * (1.0 + b[r].abs()) {
                    return Err(SolveStatus::Infeasible);
                }
            }
        }
        let mut ineq_rows = Vec::new();
        for r in 0..g.nrows() {
            if free.iter().any(|&j| g[(r, j)] != 0.0) {
                ineq_rows.push(r);
            } else {
                let slack: f64 = h[r] - (0..n).map(|j| g[(r, j)] * fixed_val(j)).sum::<f64>();
                if slack < -1e-9 * (1.0 + h[r].abs()) {
                    return Err(SolveStatus::Infeasible);
                }
            }
        }

        let mut groups: Vec<*const DMatrix<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut quad_slot = Vec::with_capacity(prob.quadratic().len());
        for qc in prob.quadratic() {
            let ptr = Arc::as_ptr(&qc.hessian);
            let gi = match groups.iter().position(|&p| p == ptr) {
                Some(i) => i,
                None => {
                    groups.push(ptr);
                    counts.push(0);
                    groups.len() - 1
                }
            };
            quad_slot.push((gi, counts[gi]));
            counts[gi] += 1;
        }

        let epigraph = prob
            .epigraph()
            .and_then(|e| free.iter().position(|&j| j == e));
        Ok(Presolve {
            fixed,
            fixed_by,
            free,
            eq_rows,
            ineq_rows,
            quad_slot,
            epigraph,
        })
    }

    fn z_fixed(&self) -> Vec<(usize, f64)> {
        self.fixed
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.map(|v| (j, v)))
            .collect()
    }

    fn core(&self, prob: &ConvexQcqp) -> Core {
        let nf = self.free.len();
        let fixed = self.z_fixed();
        let (a, b) = prob.equalities();
        let (g, h) = prob.inequalities();
        let c = DVector::from_iterator(nf, self.free.iter().map(|&j| prob.objective()[j]));

        let ra = DMatrix::from_fn(self.eq_rows.len(), nf, |r, k| a[(self.eq_rows[r], self.free[k])]);
        let rb = DVector::from_iterator(
            self.eq_rows.len(),
            self.eq_rows.iter().map(|&r| b[r] - fixed.iter().map(|&(j, v)| a[(r, j)] * v).sum::<f64>()),
        );
        let rg = DMatrix::from_fn(self.ineq_rows.len(), nf, |r, k| g[(self.ineq_rows[r], self.free[k])]);
        let rh = DVector::from_iterator(
            self.ineq_rows.len(),
            self.ineq_rows.iter().map(|&r| h[r] - fixed.iter().map(|&(j, v)| g[(r, j)] * v).sum::<f64>()),
        );

        let n_groups = self.quad_slot.iter().map(|s| s.0 + 1).max().unwrap_or(0);
        let mut groups: Vec<QuadGroup> = Vec::with_capacity(n_groups);
        let mut shift: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n_groups);
        for gi in 0..n_groups {
            let count = self.quad_slot.iter().filter(|s| s.0 == gi).count();
            let first = self.quad_slot.iter().position(|s| s.0 == gi).unwrap();
            let p = &prob.quadratic()[first].hessian;
            let hess = DMatrix::from_fn(nf, nf, |r, k| p[(self.free[r], self.free[k])]);
            // P[free, fixed] z_fixed and ½ z_fixedᵀ P[fixed, fixed] z_fixed
            let w = DVector::from_fn(nf, |r, _| {
                fixed.iter().map(|&(j, v)| p[(self.free[r], j)] * v).sum::<f64>()
            });
            let mut cst = 0.0;
            for &(i, vi) in &fixed {
                for &(j, vj) in &fixed {
                    cst += 0.5 * vi * p[(i, j)] * vj;
                }
            }
            shift.push((w, cst));
            groups.push(QuadGroup {
                hessian: hess,
                linear: DMatrix::zeros(count, nf),
                offset: DVector::zeros(count),
            });
        }
        let epi_full = prob.epigraph();
        for (qc, &(gi, row)) in prob.quadratic().iter().zip(&self.quad_slot) {
            let mut lin = qc.linear.clone();
            if let Some(e) = epi_full {
                lin[e] -= 1.0;
            }
            let (w, cst) = &shift[gi];
            let grp = &mut groups[gi];
            for (k, &j) in self.free.iter().enumerate() {
                grp.linear[(row, k)] = lin[j] + w[k];
            }
            grp.offset[row] = qc.offset + cst + fixed.iter().map(|&(j, v)| lin[j] * v).sum::<f64>();
        }
        Core {
            n: nf,
            c,
            a: ra,
            b: rb,
            g: rg,
            h: rh,
            groups,
        }
    }
}

/// Phase I: minimize s subject to f_i(z) ≤ s over (z, s).
fn phase_one(core: &Core, z0: &DVector<f64>, tol: f64) -> Result<DVector<f64>, SolveStatus> {
    let n = core.n;
    let (f0, _) = core.eval(z0);
    let s0 = f0.max() + 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let a = if core.b.is_empty() {
        DMatrix::zeros(0, n + 1)
    } else {
        let mut a = DMatrix::zeros(core.a.nrows(), n + 1);
        a.view_mut((0, 0), (core.a.nrows(), n)).copy_from(&core.a);
        a
    };
    let mut g = DMatrix::zeros(core.h.len(), n + 1);
    g.view_mut((0, 0), (core.h.len(), n)).copy_from(&core.g);
    g.column_mut(n).fill(-1.0);
    let groups = core
        .groups
        .iter()
        .map(|grp| {
            let k = grp.offset.len();
            let mut hess = DMatrix::zeros(n + 1, n + 1);
            hess.view_mut((0, 0), (n, n)).copy_from(&grp.hessian);
            let mut lin = DMatrix::zeros(k, n + 1);
            lin.view_mut((0, 0), (k, n)).copy_from(&grp.linear);
            lin.column_mut(n).fill(-1.0);
            QuadGroup {
                hessian: hess,
                linear: lin,
                offset: grp.offset.clone(),
            }
        })
        .collect();
    let p1 = Core {
        n: n + 1,
        c,
        a,
        b: core.b.clone(),
        g,
        h: core.h.clone(),
        groups,
    };
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(z0);
    start[n] = s0;
    let scale = 1.0 + inf_norm(&core.h);
    let res = run(&p1, start, tol.min(1e-9), &|z| z[n] < -scale);
    let s = res.z[n];
    match res.status {
        CoreStatus::Stopped | CoreStatus::Converged | CoreStatus::Unbounded if s < -1e-10 * scale => {
            let z = res.z.rows(0, n).into_owned();
            let (f, _) = core.eval(&z);
            if f.iter().all(|&v| v < 0.0) {
                Ok(z)
            } else {
                Err(SolveStatus::NumericFailure)
            }
        }
        CoreStatus::Converged if s > 1e-7 * scale => Err(SolveStatus::Infeasible),
        _ => Err(SolveStatus::NumericFailure),
    }
}

/// Column `e` only enters quadratic rows, each with coefficient −1.
fn epigraph_liftable(core: &Core, e: usize) -> bool {
    (0..core.a.nrows()).all(|r| core.a[(r, e)] == 0.0)
        && (0..core.g.nrows()).all(|r| core.g[(r, e)] == 0.0)
        && core.groups.iter().all(|grp| {
            (0..core.n).all(|k| grp.hessian[(e, k)] == 0.0 && grp.hessian[(k, e)] == 0.0)
                && grp.linear.column(e).iter().all(|&v| v == -1.0)
        })
}

fn initial_point(core: &Core, epigraph: Option<usize>, tol: f64) -> Result<DVector<f64>, SolveStatus> {
    let n = core.n;
    let mut z = if core.b.is_empty() {
        DVector::zeros(n)
    } else {
        let svd = core.a.clone().svd(true, true);
        let z = svd
            .solve(&core.b, 1e-12 * (1.0 + core.a.amax()))
            .map_err(|_| SolveStatus::NumericFailure)?;
        if inf_norm(&(&core.a * &z - &core.b)) > 1e-9 * (1.0 + inf_norm(&core.b)) {
            return Err(SolveStatus::Infeasible);
        }
        z
    };
    let ml = core.h.len();
    let lin_ok = |z: &DVector<f64>| {
        ml == 0
            || (&core.g * z - &core.h)
                .iter()
                .zip(core.h.iter())
                .all(|(s, h)| *s < -START_MARGIN * (1.0 + h.abs()))
    };
    let has_quad = !core.groups.is_empty();
    let liftable = epigraph.filter(|&e| has_quad && epigraph_liftable(core, e));

    if let Some(e) = liftable {
        if !lin_ok(&z) {
            let lin_only = Core {
                n,
                c: DVector::zeros(n),
                a: core.a.clone(),
                b: core.b.clone(),
                g: core.g.clone(),
                h: core.h.clone(),
                groups: Vec::new(),
            };
            z = phase_one(&lin_only, &z, tol)?;
        }
        let (f, _) = core.eval(&z);
        let worst = f.rows(ml, f.len() - ml).max();
        z[e] += worst + 1.0;
        return Ok(z);
    }
    let (f, _) = core.eval(&z);
    if f.is_empty() || f.iter().all(|&v| v < -START_MARGIN) {
        return Ok(z);
    }
    phase_one(core, &z, tol)
}

pub(super) fn solve(prob: &ConvexQcqp, tol: f64) -> SolveOutcome {
    let pre = match Presolve::new(prob) {
        Ok(p) => p,
        Err(status) => return SolveOutcome::failed(status, 0),
    };
    let core = pre.core(prob);
    let z0 = match initial_point(&core, pre.epigraph, tol) {
        Ok(z) => z,
        Err(status) => return SolveOutcome::failed(status, 0),
    };
    let res = run(&core, z0, tol, &|_| false);
    match res.status {
        CoreStatus::Converged => {}
        CoreStatus::Unbounded => return SolveOutcome::failed(SolveStatus::Unbounded, res.iterations),
        _ => return SolveOutcome::failed(SolveStatus::NumericFailure, res.iterations),
    }
    recover(prob, &pre, &core, res)
}

/// Maps the reduced solution back onto the original variables and rows.
fn recover(prob: &ConvexQcqp, pre: &Presolve, core: &Core, res: CoreResult) -> SolveOutcome {
    let n = prob.dim();
    let mut z = DVector::zeros(n);
    for (j, v) in pre.fixed.iter().enumerate() {
        if let Some(v) = v {
            z[j] = *v;
        }
    }
    for (k, &j) in pre.free.iter().enumerate() {
        z[j] = res.z[k];
    }
    let mut lam_lin = DVector::zeros(prob.num_inequalities());
    for (k, &r) in pre.ineq_rows.iter().enumerate() {
        lam_lin[r] = res.lam[k];
    }
    let ml = core.h.len();
    let mut offsets = Vec::with_capacity(core.groups.len());
    let mut off = ml;
    for grp in &core.groups {
        offsets.push(off);
        off += grp.offset.len();
    }
    let lam_quad = DVector::from_iterator(
        pre.quad_slot.len(),
        pre.quad_slot.iter().map(|&(gi, row)| res.lam[offsets[gi] + row]),
    );
    let mut nu = DVector::zeros(prob.num_equalities());
    for (k, &r) in pre.eq_rows.iter().enumerate() {
        nu[r] = -res.nu[k];
    }
    let mut duals = Duals {
        equality: nu,
        inequality: lam_lin,
        quadratic: lam_quad,
    };
    // Multipliers of eliminated rows from stationarity in their variable.
    if pre.fixed_by.iter().any(|r| r.is_some()) {
        let grad = super::lagrangian_gradient(prob, &z, &duals);
        let (a, _) = prob.equalities();
        for (j, r) in pre.fixed_by.iter().enumerate() {
            if let Some(r) = *r {
                duals.equality[r] = grad[j] / a[(r, j)];
            }
        }
    }
    SolveOutcome {
        status: SolveStatus::Optimal,
        objective: Some(prob.objective().dot(&z)),
        primal: Some(z),
        duals: Some(duals),
        residuals: KktResiduals::default(),
        min_raw_multiplier: 0.0,
        iterations: res.iterations,
    }
}
