//! Pointwise-maximum Q-function estimates built from quadratic cuts.
//!
//! Cut `i` is `q_i(x, u) = ½xᵀQx + ½uᵀRu + ν_iᵀ(Ax + Bu) + ξ_i`; only
//! `(ν_i, ξ_i)` are stored, the stage cost and dynamics come from the shared
//! instance. Cut 0 is the stage cost itself (`ν = 0`, `ξ = 0`).

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ClqrInstance;

#[derive(Clone, Debug, PartialEq)]
pub struct BendersCut {
    pub index: usize,
    pub nu: DVector<f64>,
    pub xi: f64,
}

impl BendersCut {
    pub fn base(n_x: usize) -> Self {
        BendersCut {
            index: 0,
            nu: DVector::zeros(n_x),
            xi: 0.0,
        }
    }
}

/// `½xᵀQx + ½uᵀRu + νᵀ(Ax + Bu) + ξ`.
pub fn eval_cut(cut: &BendersCut, inst: &ClqrInstance, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    inst.check_point(x, u)?;
    if cut.nu.len() != inst.n_x() {
        return Err(Error::Dimension(format!(
            "cut {} has |nu| = {}, n_x = {}",
            cut.index,
            cut.nu.len(),
            inst.n_x()
        )));
    }
    Ok(inst.stage_cost(x, u) + cut.nu.dot(&inst.dynamics(x, u)) + cut.xi)
}

#[derive(Clone, Debug)]
pub struct PwmQFunction {
    instance: Arc<ClqrInstance>,
    cuts: Vec<BendersCut>,
    /// Cached `(Aᵀν_i, Bᵀν_i)` per cut for building subproblems.
    slopes: Vec<(DVector<f64>, DVector<f64>)>,
}

impl PwmQFunction {
    /// Base function `Q_0 = ℓ`.
    pub fn new(instance: Arc<ClqrInstance>) -> Self {
        let base = BendersCut::base(instance.n_x());
        let slopes = vec![(DVector::zeros(instance.n_x()), DVector::zeros(instance.n_u()))];
        PwmQFunction {
            instance,
            cuts: vec![base],
            slopes,
        }
    }

    /// Rebuilds a function from a stored cut list (indices must be 0..k).
    pub fn from_cuts(instance: Arc<ClqrInstance>, cuts: Vec<BendersCut>) -> Result<Self> {
        let mut iter = cuts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Precondition("cut list is empty".into()))?;
        if first != BendersCut::base(instance.n_x()) {
            return Err(Error::Precondition("cut 0 must be the base cut (nu = 0, xi = 0)".into()));
        }
        let mut q = PwmQFunction::new(instance);
        for cut in iter {
            q.add_cut(cut)?;
        }
        Ok(q)
    }

    pub fn instance(&self) -> &ClqrInstance {
        &self.instance
    }

    pub fn instance_arc(&self) -> &Arc<ClqrInstance> {
        &self.instance
    }

    pub fn cuts(&self) -> &[BendersCut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub(crate) fn slopes(&self) -> &[(DVector<f64>, DVector<f64>)] {
        &self.slopes
    }

    /// `Q_I = max_i q_i` and the smallest index attaining it.
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> (f64, usize) {
        let inst = &self.instance;
        let stage = inst.stage_cost(x, u);
        let next = inst.dynamics(x, u);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, cut) in self.cuts.iter().enumerate() {
            let v = cut.nu.dot(&next) + cut.xi;
            if v > best {
                best = v;
                arg = i;
            }
        }
        (stage + best, arg)
    }

    /// `ν_iᵀ f(x, u) + ξ_i` per cut, so that `q_i = ℓ + offset_i`.
    pub(crate) fn offsets(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
        let next = self.instance.dynamics(x, u);
        self.cuts.iter().map(|c| c.nu.dot(&next) + c.xi).collect()
    }

    /// Dimension-checked [`eval`](Self::eval).
    pub fn eval_q(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, usize)> {
        self.instance.check_point(x, u)?;
        Ok(self.eval(x, u))
    }

    pub fn add_cut(&mut self, cut: BendersCut) -> Result<()> {
        if cut.index != self.cuts.len() {
            return Err(Error::CutIndex {
                expected: self.cuts.len(),
                got: cut.index,
            });
        }
        if cut.nu.len() != self.instance.n_x() {
            return Err(Error::Dimension(format!(
                "cut has |nu| = {}, n_x = {}",
                cut.nu.len(),
                self.instance.n_x()
            )));
        }
        let at = self.instance.a.tr_mul(&cut.nu);
        let bt = self.instance.b.tr_mul(&cut.nu);
        self.slopes.push((at, bt));
        self.cuts.push(cut);
        Ok(())
    }

    /// The function formed by the first `n` cuts, i.e. an earlier iterate.
    pub fn prefix(&self, n: usize) -> PwmQFunction {
        let n = n.clamp(1, self.cuts.len());
        PwmQFunction {
            instance: Arc::clone(&self.instance),
            cuts: self.cuts[..n].to_vec(),
            slopes: self.slopes[..n].to_vec(),
        }
    }

    /// Cuts never attaining the maximum on `probes` (diagnostic only).
    pub fn inactive_cuts(&self, probes: &[(DVector<f64>, DVector<f64>)]) -> Vec<usize> {
        let mut active = vec![false; self.cuts.len()];
        for (x, u) in probes {
            active[self.eval(x, u).1] = true;
        }
        (0..self.cuts.len()).filter(|&i| !active[i]).collect()
    }

    pub fn to_json(&self) -> String {
        let doc = CutListDoc {
            n_x: self.instance.n_x(),
            cuts: self
                .cuts
                .iter()
                .map(|c| CutRecord {
                    index: c.index,
                    nu: c.nu.iter().copied().collect(),
                    xi: c.xi,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }

    pub fn from_json(instance: Arc<ClqrInstance>, text: &str) -> Result<Self> {
        let doc: CutListDoc = serde_json::from_str(text).map_err(|e| Error::Parse(format!("cut list: {e}")))?;
        if doc.n_x != instance.n_x() {
            return Err(Error::Dimension(format!(
                "cut list has n_x = {}, instance n_x = {}",
                doc.n_x,
                instance.n_x()
            )));
        }
        let cuts = doc
            .cuts
            .into_iter()
            .map(|c| BendersCut {
                index: c.index,
                nu: DVector::from_vec(c.nu),
                xi: c.xi,
            })
            .collect();
        Self::from_cuts(instance, cuts)
    }

    pub fn load_json(instance: Arc<ClqrInstance>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(instance, &text)
    }

    /// `index,xi,nu_0,…,nu_{n_x−1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string(), "xi".to_string()];
        header.extend((0..self.instance.n_x()).map(|i| format!("nu_{i}")));
        w.write_record(&header)?;
        for c in &self.cuts {
            let mut row = vec![c.index.to_string(), c.xi.to_string()];
            row.extend(c.nu.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(instance: Arc<ClqrInstance>, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let n_x = instance.n_x();
        let mut cuts = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != n_x + 2 {
                return Err(Error::Parse(format!("cut row has {} fields, expected {}", rec.len(), n_x + 2)));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("cut field {i}: {e}")))
            };
            let index = rec[0]
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("cut index: {e}")))?;
            let nu = DVector::from_iterator(n_x, (0..n_x).map(|k| num(k + 2)).collect::<Result<Vec<_>>>()?);
            cuts.push(BendersCut { index, nu, xi: num(1)? });
        }
        Self::from_cuts(instance, cuts)
    }
}

#[derive(Serialize, Deserialize)]
struct CutRecord {
    index: usize,
    nu: Vec<f64>,
    xi: f64,
}

#[derive(Serialize, Deserialize)]
struct CutListDoc {
    n_x: usize,
    cuts: Vec<CutRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar() -> Arc<ClqrInstance> {
        Arc::new(ClqrInstance::scalar_benchmark())
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn base_cut_is_stage_cost() {
        let inst = scalar();
        let val = eval_cut(&BendersCut::base(1), &inst, &v(2.0), &v(1.0)).unwrap();
        assert!((val - 2.5).abs() < 1e-15);
    }

    #[test]
    fn direct_substitution() {
        let inst = scalar();
        let cut = BendersCut {
            index: 1,
            nu: v(1.0),
            xi: -0.3,
        };
        let val = eval_cut(&cut, &inst, &v(1.0), &v(0.0)).unwrap();
        assert!((val - 1.1).abs() < 1e-12);
        // origin leaves only ξ
        assert_eq!(eval_cut(&cut, &inst, &v(0.0), &v(0.0)).unwrap(), -0.3);
    }

    #[test]
    fn eval_q_base_only_and_dominated_cut() {
        let mut q = PwmQFunction::new(scalar());
        assert_eq!(q.eval_q(&v(2.0), &v(1.0)).unwrap(), (2.5, 0));
        q.add_cut(BendersCut {
            index: 1,
            nu: v(0.0),
            xi: -5.0,
        })
        .unwrap();
        for x in [-3.0, 0.0, 1.7] {
            for u in [-1.0, 0.3] {
                assert_eq!(q.eval(&v(x), &v(u)).1, 0);
            }
        }
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        let mut q = PwmQFunction::new(scalar());
        q.add_cut(BendersCut {
            index: 1,
            nu: v(0.0),
            xi: 0.0,
        })
        .unwrap();
        assert_eq!(q.eval(&v(1.0), &v(0.0)).1, 0);
    }

    #[test]
    fn add_cut_checks_index() {
        let mut q = PwmQFunction::new(scalar());
        q.add_cut(BendersCut {
            index: 1,
            nu: v(0.5),
            xi: 0.1,
        })
        .unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.cuts().iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1]);
        let err = q
            .add_cut(BendersCut {
                index: 1,
                nu: v(0.5),
                xi: 0.1,
            })
            .unwrap_err();
        assert!(matches!(err, Error::CutIndex { expected: 2, got: 1 }));
    }

    #[test]
    fn eval_cut_matches_expanded_scalar_form() {
        let inst = scalar();
        let cut = BendersCut {
            index: 3,
            nu: v(1.37),
            xi: -0.42,
        };
        for &(x, u) in &[(0.3, -0.7), (-2.9, 1.0), (2.5, 0.25)] {
            let expanded = 0.5 * x * x + 0.5 * u * u + 1.37 * 0.9 * x + 1.37 * u - 0.42;
            let got = eval_cut(&cut, &inst, &v(x), &v(u)).unwrap();
            assert!((got - expanded).abs() <= 1e-12 * (1.0 + expanded.abs()));
        }
    }

    #[test]
    fn serialization_roundtrips() {
        let mut q = PwmQFunction::new(scalar());
        q.add_cut(BendersCut {
            index: 1,
            nu: v(0.123456789),
            xi: -1.0 / 3.0,
        })
        .unwrap();
        let back = PwmQFunction::from_json(scalar(), &q.to_json()).unwrap();
        assert_eq!(back.cuts(), q.cuts());
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,xi,nu_0\n"));
        let back = PwmQFunction::read_csv(scalar(), buf.as_slice()).unwrap();
        assert_eq!(back.cuts(), q.cuts());
    }

    proptest! {
        #[test]
        fn adding_cuts_never_decreases(
            cuts in prop::collection::vec((-3.0f64..3.0, -5.0f64..1.0), 1..8),
            probes in prop::collection::vec((-4.0f64..4.0, -1.0f64..1.0), 100),
        ) {
            let mut q = PwmQFunction::new(scalar());
            for (nu, xi) in cuts {
                let before: Vec<f64> = probes.iter().map(|&(x, u)| q.eval(&v(x), &v(u)).0).collect();
                let idx = q.len();
                q.add_cut(BendersCut { index: idx, nu: v(nu), xi }).unwrap();
                for (&(x, u), b) in probes.iter().zip(before) {
                    prop_assert!(q.eval(&v(x), &v(u)).0 >= b);
                }
            }
        }
    }
}
