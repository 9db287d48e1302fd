//! Independent reference computations: grid value iteration for one- and
//! two-state systems, the discounted Riccati solution, clipped LQR and the
//! ν-norm bound.
//!
//! The grid value function interpolates multilinearly. For a convex value
//! function this overestimates between nodes, and an inexact minimization
//! over u overestimates too, so the grid oracle errs on the high side.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::Policy;
use crate::problem::{input_box, ClqrInstance};
use crate::qfunction::BendersCut;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 3 || !(min < max) {
            return Err(Error::Precondition(format!(
                "grid axis needs min < max and at least 3 points, got [{min}, {max}] x {count}"
            )));
        }
        Ok(GridAxis { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min + self.step() * i as f64
    }

    /// Cell index and weight of the upper node, after clamping into the axis.
    fn locate(&self, x: f64) -> (usize, f64, bool) {
        let clamped = x < self.min || x > self.max;
        let x = x.clamp(self.min, self.max);
        let s = (x - self.min) / self.step();
        let i = (s.floor() as usize).min(self.count - 2);
        (i, s - i as f64, clamped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputGrid {
    /// Points per input dimension.
    pub count: usize,
    /// Golden-section refinement around the best grid input (single input only).
    pub refine: bool,
}

#[derive(Clone, Debug)]
pub struct GridValueFunction {
    pub axes: Vec<GridAxis>,
    /// Row-major over the axes, last axis fastest.
    pub values: Vec<f64>,
    /// Nodes whose minimizing successor left the grid.
    pub clamped: Vec<bool>,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    /// Largest second difference divided by h², per axis.
    curvature: Vec<f64>,
}

impl GridValueFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn node_coords(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for k in (0..self.axes.len()).rev() {
            idx[k] = flat % self.axes[k].count;
            flat /= self.axes[k].count;
        }
        idx
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    pub fn node(&self, flat: usize) -> DVector<f64> {
        let idx = self.node_coords(flat);
        DVector::from_iterator(idx.len(), idx.iter().zip(&self.axes).map(|(&i, a)| a.point(i)))
    }

    /// Interpolated value and whether `x` was clamped into the grid.
    pub fn value(&self, x: &DVector<f64>) -> (f64, bool) {
        interpolate(&self.axes, &self.values, x)
    }

    /// Single-cell interpolation error bound `Σ_k h_k²/8 · C_k`, with `C_k`
    /// the largest second difference over `h_k²` anywhere on the grid.
    pub fn interpolation_bound(&self) -> f64 {
        self.axes
            .iter()
            .zip(&self.curvature)
            .map(|(a, c)| a.step().powi(2) / 8.0 * c)
            .sum()
    }

    /// `coord_0,…,value,clamped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.axes.len()).map(|k| format!("x_{k}")).collect();
        header.push("value".into());
        header.push("clamped".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.node(i).iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            row.push(u8::from(self.clamped[i]).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn interpolate(axes: &[GridAxis], values: &[f64], x: &DVector<f64>) -> (f64, bool) {
    let cells: Vec<(usize, f64, bool)> = axes.iter().zip(x.iter()).map(|(a, &xi)| a.locate(xi)).collect();
    let clamped = cells.iter().any(|c| c.2);
    let mut total = 0.0;
    for mask in 0..(1usize << axes.len()) {
        let mut weight = 1.0;
        let mut flat = 0;
        for (k, (axis, &(i, t, _))) in axes.iter().zip(&cells).enumerate() {
            let upper = (mask >> k) & 1 == 1;
            weight *= if upper { t } else { 1.0 - t };
            flat = flat * axis.count + i + usize::from(upper);
        }
        if weight != 0.0 {
            total += weight * values[flat];
        }
    }
    (total, clamped)
}

const GOLDEN_STEPS: usize = 60;

/// Value iteration `V ← min_u ℓ(x, u) + γ V(Ax + Bu)` on a state grid, from `V = 0`.
pub fn value_iteration(
    inst: &ClqrInstance,
    axes: &[GridAxis],
    u_grid: InputGrid,
    vi_tol: f64,
    max_sweeps: usize,
) -> Result<GridValueFunction> {
    let nx = inst.n_x();
    let nu = inst.n_u();
    if nx > 2 {
        return Err(Error::Precondition(format!("grid oracle supports n_x <= 2, got {nx}")));
    }
    if axes.len() != nx {
        return Err(Error::Dimension(format!("{} grid axes for n_x = {nx}", axes.len())));
    }
    if u_grid.count < 2 || u_grid.count.saturating_pow(nu as u32) > 1_000_000 {
        return Err(Error::Precondition(format!("input grid of {} points per axis is unusable", u_grid.count)));
    }
    if !(vi_tol > 0.0) {
        return Err(Error::Precondition("vi_tol must be positive".into()));
    }
    let total: usize = axes.iter().map(|a| a.count).product();
    let mut vf = GridValueFunction {
        axes: axes.to_vec(),
        values: vec![0.0; total],
        clamped: vec![false; total],
        iterations: 0,
        residual: f64::INFINITY,
        residual_history: Vec::new(),
        curvature: Vec::new(),
    };

    struct Node {
        x: DVector<f64>,
        ax: DVector<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    }
    let nodes: Vec<Node> = (0..total)
        .map(|i| {
            let x = vf.node(i);
            let (lo, hi) = input_box(inst, &x)?;
            Ok(Node {
                ax: &inst.a * &x,
                x,
                lo,
                hi,
            })
        })
        .collect::<Result<_>>()?;

    let mut next = vec![0.0; total];
    for sweep in 1..=max_sweeps {
        let values = &vf.values;
        let eval = |node: &Node, u: &DVector<f64>| -> (f64, bool) {
            let succ = &node.ax + &inst.b * u;
            let (v, c) = interpolate(axes, values, &succ);
            (inst.stage_cost(&node.x, u) + inst.gamma * v, c)
        };
        for (i, node) in nodes.iter().enumerate() {
            let (best_u, mut best, mut clamped) = grid_minimum(&node.lo, &node.hi, u_grid.count, |u| eval(node, u));
            if u_grid.refine && nu == 1 {
                let h = (node.hi[0] - node.lo[0]) / (u_grid.count - 1) as f64;
                let (a, b) = ((best_u[0] - h).max(node.lo[0]), (best_u[0] + h).min(node.hi[0]));
                let f = |u: f64| eval(node, &DVector::from_element(1, u));
                let (u, val) = golden(a, b, |u| f(u).0);
                if val < best {
                    best = val;
                    clamped = f(u).1;
                }
            }
            next[i] = best;
            vf.clamped[i] = clamped;
        }
        let residual = next
            .iter()
            .zip(&vf.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut vf.values, &mut next);
        vf.residual_history.push(residual);
        vf.residual = residual;
        vf.iterations = sweep;
        if residual <= vi_tol {
            vf.curvature = curvature(&vf);
            return Ok(vf);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_sweeps,
        residual: vf.residual,
        history: vf.residual_history,
    })
}

fn grid_minimum(
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    count: usize,
    mut f: impl FnMut(&DVector<f64>) -> (f64, bool),
) -> (DVector<f64>, f64, bool) {
    let nu = lo.len();
    let mut best = (DVector::zeros(nu), f64::INFINITY, false);
    let combos = count.pow(nu as u32);
    let mut u = DVector::zeros(nu);
    for mut c in 0..combos {
        for j in 0..nu {
            let k = c % count;
            c /= count;
            u[j] = lo[j] + (hi[j] - lo[j]) * k as f64 / (count - 1) as f64;
        }
        let (v, clamped) = f(&u);
        if v < best.1 {
            best = (u.clone(), v, clamped);
        }
    }
    best
}

fn golden(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_STEPS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn curvature(vf: &GridValueFunction) -> Vec<f64> {
    let mut out = Vec::with_capacity(vf.axes.len());
    for (k, axis) in vf.axes.iter().enumerate() {
        let h2 = axis.step().powi(2);
        let mut ck: f64 = 0.0;
        for i in 0..vf.values.len() {
            let mut idx = vf.node_coords(i);
            let ik = idx[k];
            if ik == 0 || ik + 1 == axis.count {
                continue;
            }
            idx[k] = ik - 1;
            let lo = vf.values[vf.flat(&idx)];
            idx[k] = ik + 1;
            let hi = vf.values[vf.flat(&idx)];
            ck = ck.max((hi - 2.0 * vf.values[i] + lo).abs() / h2);
        }
        out.push(ck);
    }
    out
}

/// How far outside the grid a successor may fall, as a fraction of the axis span.
pub const CLAMP_MARGIN: f64 = 0.05;

/// Multiple of the single-cell interpolation bound allowed in the oracle margin.
pub const ACCUMULATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleQ {
    pub value: f64,
    /// Comparison margin for interpolation and value-iteration error.
    pub tol: f64,
    pub clamped: bool,
}

/// `Q⋆(x, u) ≈ ℓ(x, u) + γ V(Ax + Bu)` with an error margin.
pub fn q_star_from_v(vf: &GridValueFunction, inst: &ClqrInstance, x: &DVector<f64>, u: &DVector<f64>) -> Result<OracleQ> {
    inst.check_point(x, u)?;
    if vf.axes.len() != inst.n_x() {
        return Err(Error::Dimension(format!("grid has {} axes, n_x = {}", vf.axes.len(), inst.n_x())));
    }
    let succ = inst.dynamics(x, u);
    for (k, (a, &s)) in vf.axes.iter().zip(succ.iter()).enumerate() {
        let margin = CLAMP_MARGIN * (a.max - a.min);
        if s < a.min - margin || s > a.max + margin {
            return Err(Error::Precondition(format!(
                "successor component {k} = {s} is outside the grid [{}, {}]",
                a.min, a.max
            )));
        }
    }
    let (v, clamped) = vf.value(&succ);
    // node values carry interpolation error from earlier backups as well
    let tol = inst.gamma * (ACCUMULATION * vf.interpolation_bound() + 10.0 * vf.residual);
    Ok(OracleQ {
        value: inst.stage_cost(x, u) + inst.gamma * v,
        tol,
        clamped,
    })
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// LQR gain, `u = −K x`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 100_000;

/// Discounted Riccati fixed point
/// `P = Q + γAᵀPA − γ²AᵀPB(R + γBᵀPB)⁻¹BᵀPA`, `K = γ(R + γBᵀPB)⁻¹BᵀPA`.
pub fn riccati_gain(inst: &ClqrInstance) -> Result<RiccatiSolution> {
    let (a, b, q, r, g) = (&inst.a, &inst.b, &inst.q, &inst.r, inst.gamma);
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.tr_mul(p) * b * g;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Precondition("R + γBᵀPB is not positive definite".into()))?;
        Ok(chol.solve(&(b.tr_mul(p) * a)) * g)
    };
    let mut p = q.clone();
    let mut history = Vec::new();
    for it in 1..=RICCATI_MAX_ITER {
        let k = gain(&p)?;
        let next = q + a.tr_mul(&p) * a * g - a.tr_mul(&p) * b * &k * g;
        let next = (&next + next.transpose()) * 0.5;
        let residual = (&next - &p).amax();
        p = next;
        if history.len() < 1000 {
            history.push(residual);
        }
        if !residual.is_finite() {
            break;
        }
        if residual <= RICCATI_TOL * p.amax().max(1.0) {
            let k = gain(&p)?;
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// `−Kx` clamped componentwise into the input box at `x`.
pub fn clipped_lqr_policy(inst: &ClqrInstance, k: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if k.nrows() != inst.n_u() || k.ncols() != inst.n_x() || x.len() != inst.n_x() {
        return Err(Error::Dimension(format!(
            "K is {}x{}, x has length {}; expected {}x{} and {}",
            k.nrows(),
            k.ncols(),
            x.len(),
            inst.n_u(),
            inst.n_x(),
            inst.n_x()
        )));
    }
    let (lo, hi) = input_box(inst, x)?;
    let u = -(k * x);
    Ok(DVector::from_fn(u.len(), |j, _| u[j].clamp(lo[j], hi[j])))
}

pub struct ClippedLqr<'a> {
    pub inst: &'a ClqrInstance,
    pub gain: DMatrix<f64>,
}

impl Policy for ClippedLqr<'_> {
    fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        clipped_lqr_policy(self.inst, &self.gain, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuBoundReport {
    pub max_nu_norm: f64,
    pub bound: Option<f64>,
    pub applicable: bool,
    pub passed: bool,
    pub note: String,
}

/// Compares the largest cut slope with `γX‖Q‖ / (1 − γ‖A‖)`, the bound for
/// instances without state constraints. `x_bound` bounds the successor
/// norms of the one-stage solutions; `u_bound` does not enter when D = 0.
pub fn nu_bound_diagnostic(cuts: &[BendersCut], inst: &ClqrInstance, x_bound: f64, u_bound: f64) -> NuBoundReport {
    let max_nu_norm = cuts.iter().map(|c| c.nu.norm()).fold(0.0, f64::max);
    let inapplicable = |note: String| NuBoundReport {
        max_nu_norm,
        bound: None,
        applicable: false,
        passed: false,
        note,
    };
    if inst.has_state_constraints() {
        return inapplicable("only the D = 0 case is implemented".into());
    }
    let ga = inst.gamma * linalg::spectral_norm(&inst.a);
    if ga >= 1.0 {
        return inapplicable(format!("gamma*|A| = {ga} >= 1, bound undefined"));
    }
    let bound = inst.gamma * x_bound * linalg::spectral_norm(&inst.q) / (1.0 - ga);
    NuBoundReport {
        max_nu_norm,
        bound: Some(bound),
        applicable: true,
        passed: max_nu_norm <= bound,
        note: format!("X = {x_bound}, U = {u_bound} (U unused when D = 0)"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn scalar_vf(count: usize) -> GridValueFunction {
        let inst = ClqrInstance::scalar_benchmark();
        value_iteration(
            &inst,
            &[GridAxis::new(-4.0, 4.0, count).unwrap()],
            InputGrid { count: 201, refine: true },
            1e-9,
            500,
        )
        .unwrap()
    }

    /// Scalar recursion p ← q + a²p − a²p²/(r + p), iterated independently.
    fn scalar_riccati() -> f64 {
        let mut p = 1.0f64;
        for _ in 0..10_000 {
            p = 1.0 + 0.81 * p - 0.81 * p * p / (1.0 + p);
        }
        p
    }

    #[test]
    fn riccati_scalar_benchmark() {
        let sol = riccati_gain(&ClqrInstance::scalar_benchmark()).unwrap();
        let p = scalar_riccati();
        assert!((sol.p[(0, 0)] - p).abs() < 1e-10);
        assert!((sol.k[(0, 0)] - 0.9 * p / (1.0 + p)).abs() < 1e-10);
        assert!((sol.p[(0, 0)] - 1.4839).abs() < 1e-4);
        assert_eq!(format!("{:.4}", sol.k[(0, 0)]), "0.5377");
    }

    #[test]
    fn riccati_deadbeat_and_scaling() {
        let mut inst = crate::problem::random_instance(3, 3, 2, 0.9).unwrap();
        inst.a = DMatrix::zeros(3, 3);
        let sol = riccati_gain(&inst).unwrap();
        assert!((&sol.p - &inst.q).amax() < 1e-14);
        assert!(sol.k.amax() < 1e-14);

        let inst = crate::problem::random_instance(5, 3, 2, 0.9).unwrap();
        let k1 = riccati_gain(&inst).unwrap().k;
        let mut scaled = inst.clone();
        scaled.q *= 7.5;
        scaled.r *= 7.5;
        let k2 = riccati_gain(&scaled).unwrap().k;
        assert!((k1 - k2).amax() < 1e-10);
    }

    #[test]
    fn clipped_lqr_examples() {
        let inst = ClqrInstance::scalar_benchmark();
        let k = DMatrix::from_element(1, 1, 0.5377);
        assert!((clipped_lqr_policy(&inst, &k, &v(1.0)).unwrap()[0] + 0.5377).abs() < 1e-15);
        assert_eq!(clipped_lqr_policy(&inst, &k, &v(3.0)).unwrap()[0], -1.0);
        assert_eq!(clipped_lqr_policy(&inst, &k, &v(0.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn value_iteration_scalar() {
        let vf = scalar_vf(801);
        assert!(vf.residual <= 1e-9);
        assert_eq!(vf.value(&v(0.0)).0, 0.0);
        assert!(vf.values.iter().all(|&x| x >= 0.0));
        // nondecreasing in |x|
        let mid = 400;
        for i in mid..800 {
            assert!(vf.values[i + 1] >= vf.values[i] - 1e-12);
            assert!(vf.values[mid - (i - mid) - 1] >= vf.values[mid - (i - mid)] - 1e-12);
        }
        // unsaturated region matches ½ p x²
        let p = scalar_riccati();
        for x in [-1.5, -0.7, 0.3, 1.2, 1.8] {
            let exact = 0.5 * p * x * x;
            let got = vf.value(&v(x)).0;
            let tol = vf.interpolation_bound() * ACCUMULATION + 1e-8;
            assert!(got >= exact - 1e-9 && got - exact <= tol, "x = {x}: {got} vs {exact} (tol {tol})");
        }
    }

    #[test]
    fn q_star_examples_and_refinement() {
        let inst = ClqrInstance::scalar_benchmark();
        let coarse = scalar_vf(201);
        let mid = scalar_vf(401);
        let fine = scalar_vf(801);
        assert_eq!(q_star_from_v(&fine, &inst, &v(0.0), &v(0.0)).unwrap().value, 0.0);
        assert!(q_star_from_v(&fine, &inst, &v(2.0), &v(0.0)).unwrap().value >= 3.62);
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        for &(x, u) in &[(2.73, -0.41), (-1.91, 0.77), (3.0, -1.0), (-0.37, 0.13)] {
            let (x, u) = (v(x), v(u));
            let c = q_star_from_v(&coarse, &inst, &x, &u).unwrap().value;
            let m = q_star_from_v(&mid, &inst, &x, &u).unwrap().value;
            let f = q_star_from_v(&fine, &inst, &x, &u).unwrap();
            d1 = d1.max((c - m).abs());
            d2 = d2.max((m - f.value).abs());
            // coarser grids sit above finer ones
            assert!(c >= m - 1e-9 && m >= f.value - 1e-9);
            let mt = q_star_from_v(&mid, &inst, &x, &u).unwrap().tol;
            assert!(m - f.value <= mt + 1e-9);
        }
        assert!(d1 > 2.5 * d2, "refinement ratio {}", d1 / d2);
        assert!(q_star_from_v(&fine, &inst, &v(10.0), &v(1.0)).is_err());
    }

    #[test]
    fn value_iteration_rejects_three_states() {
        let inst = crate::problem::random_instance(1, 3, 1, 0.9).unwrap();
        let axes = vec![GridAxis::new(-1.0, 1.0, 5).unwrap(); 3];
        assert!(value_iteration(&inst, &axes, InputGrid { count: 5, refine: false }, 1e-6, 10).is_err());
    }

    #[test]
    fn two_state_grid_runs() {
        let inst = ClqrInstance::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            1.0,
        )
        .unwrap();
        let axes = vec![GridAxis::new(-2.0, 2.0, 41).unwrap(); 2];
        let vf = value_iteration(&inst, &axes, InputGrid { count: 41, refine: true }, 1e-8, 500).unwrap();
        assert_eq!(vf.value(&DVector::zeros(2)).0, 0.0);
        // unsaturated near the origin: close to the Riccati value
        let p = riccati_gain(&inst).unwrap().p;
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let exact = 0.5 * x.dot(&(&p * &x));
        let got = vf.value(&x).0;
        assert!(got >= exact - 1e-8 && got - exact < 0.01, "{got} vs {exact}");
        let mut buf = Vec::new();
        vf.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 41 * 41 + 1);
    }

    #[test]
    fn nu_bound_cases() {
        let inst = ClqrInstance::scalar_benchmark();
        let base = [BendersCut::base(1)];
        let rep = nu_bound_diagnostic(&base, &inst, 1.0, 1.0);
        assert!(rep.applicable && rep.passed && rep.max_nu_norm == 0.0);
        let mut unit = inst.clone();
        unit.a[(0, 0)] = 1.0;
        let rep = nu_bound_diagnostic(&base, &unit, 1.0, 1.0);
        assert!(!rep.applicable && rep.bound.is_none());
    }
}
