//! Concrete potential functions with log-space evaluation, restriction, and
//! canonical color signatures.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::formula::Formula;

/// Domain kind of one scope position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Discrete(usize),
    Continuous,
}

/// One slot of an assignment: a discrete state or a (possibly differentiable)
/// real value.
#[derive(Debug, Clone, Copy)]
pub enum SlotVal<R> {
    State(usize),
    Real(R),
}

/// Default parameter quantum used when canonicalizing signatures.
pub const DEFAULT_QUANTUM: f64 = 1e-12;

pub(crate) fn quantize(v: f64, quantum: f64) -> i64 {
    if v == f64::INFINITY {
        i64::MAX
    } else if v == f64::NEG_INFINITY {
        i64::MIN
    } else {
        (v / quantum).round() as i64
    }
}

/// Dense discrete factor over log values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePotential {
    pub cardinalities: Vec<usize>,
    #[serde(with = "crate::ext::vec")]
    pub log_values: Vec<f64>,
}

/// `log psi(x) = -x' A x + b' x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPotential {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

/// `log psi(x1, x2) = -(x1 - a*x2 - m)^2 / var`, arity 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPotential {
    pub a: f64,
    pub m: f64,
    pub var: f64,
}

/// `log psi(x) = weight * f(x)` for a hybrid-logic formula `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridFormulaPotential {
    pub weight: f64,
    pub slots: Vec<SlotDecl>,
    pub formula: Formula,
}

/// Serializable slot kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotDecl {
    Discrete { k: usize },
    Continuous,
}

impl From<SlotDecl> for SlotKind {
    fn from(d: SlotDecl) -> SlotKind {
        match d {
            SlotDecl::Discrete { k } => SlotKind::Discrete(k),
            SlotDecl::Continuous => SlotKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Table(TablePotential),
    Quadratic(QuadraticPotential),
    LinearGaussian(LinearGaussianPotential),
    HybridFormula(HybridFormulaPotential),
    /// Arity-0 constant (e.g. a fully restricted factor).
    Constant {
        #[serde(with = "crate::ext")]
        log_value: f64,
    },
}

impl Potential {
    pub fn linear_gaussian(a: f64, m: f64, var: f64) -> Potential {
        Potential::LinearGaussian(LinearGaussianPotential { a, m, var })
    }

    pub fn arity(&self) -> usize {
        match self {
            Potential::Table(t) => t.cardinalities.len(),
            Potential::Quadratic(q) => q.b.len(),
            Potential::LinearGaussian(_) => 2,
            Potential::HybridFormula(h) => h.slots.len(),
            Potential::Constant { .. } => 0,
        }
    }

    pub fn slots(&self) -> Vec<SlotKind> {
        match self {
            Potential::Table(t) => t.cardinalities.iter().map(|&k| SlotKind::Discrete(k)).collect(),
            Potential::Quadratic(q) => vec![SlotKind::Continuous; q.b.len()],
            Potential::LinearGaussian(_) => vec![SlotKind::Continuous; 2],
            Potential::HybridFormula(h) => h.slots.iter().map(|&s| s.into()).collect(),
            Potential::Constant { .. } => vec![],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Table(t) => {
                let n: usize = t.cardinalities.iter().product();
                if t.cardinalities.iter().any(|&k| k == 0) {
                    return Err(Error::InvalidDeclaration("table cardinality of zero".into()));
                }
                if t.log_values.len() != n {
                    return Err(Error::InvalidDeclaration(format!(
                        "table has {} entries, expected {}",
                        t.log_values.len(),
                        n
                    )));
                }
                if t.log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return Err(Error::InvalidDeclaration(
                        "table entries must be finite or -inf".into(),
                    ));
                }
                Ok(())
            }
            Potential::Quadratic(q) => {
                let d = q.b.len();
                if q.a.len() != d || q.a.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidDeclaration(
                        "quadratic matrix shape does not match the linear term".into(),
                    ));
                }
                Ok(())
            }
            Potential::LinearGaussian(lg) => {
                if lg.var > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidDeclaration(
                        "linear Gaussian variance must be positive".into(),
                    ))
                }
            }
            Potential::HybridFormula(h) => {
                let slots: Vec<SlotKind> = h.slots.iter().map(|&s| s.into()).collect();
                h.formula.validate(&slots)
            }
            Potential::Constant { .. } => Ok(()),
        }
    }

    /// `log psi` at an assignment; `-inf` encodes a zero potential value.
    pub fn log_value(&self, xs: &[SlotVal<f64>]) -> Result<f64> {
        self.check_assignment(xs)?;
        Ok(self.log_value_unchecked(xs, 0.0))
    }

    /// Generic log evaluation; discrete slots are concrete states, continuous
    /// slots carry the scalar type. Caller guarantees slot kinds match.
    pub fn log_value_unchecked<R: Real>(&self, xs: &[SlotVal<R>], seed: R) -> R {
        match self {
            Potential::Table(t) => {
                let mut idx = 0usize;
                for (x, &k) in xs.iter().zip(&t.cardinalities) {
                    let s = match x {
                        SlotVal::State(s) => *s,
                        SlotVal::Real(_) => unreachable!("checked: discrete slot"),
                    };
                    idx = idx * k + s;
                }
                seed.c(t.log_values[idx])
            }
            Potential::Quadratic(q) => {
                let x: Vec<R> = xs
                    .iter()
                    .map(|v| match v {
                        SlotVal::Real(r) => *r,
                        SlotVal::State(_) => unreachable!("checked: continuous slot"),
                    })
                    .collect();
                let mut acc = seed.c(q.c);
                for (i, xi) in x.iter().enumerate() {
                    acc = acc + xi.scale(q.b[i]);
                    for (j, xj) in x.iter().enumerate() {
                        if q.a[i][j] != 0.0 {
                            acc = acc - (*xi * *xj).scale(q.a[i][j]);
                        }
                    }
                }
                acc
            }
            Potential::LinearGaussian(lg) => {
                let (x1, x2) = match (&xs[0], &xs[1]) {
                    (SlotVal::Real(a), SlotVal::Real(b)) => (*a, *b),
                    _ => unreachable!("checked: continuous slots"),
                };
                let r = x1 - x2.scale(lg.a) - seed.c(lg.m);
                -r.sq().scale(1.0 / lg.var)
            }
            Potential::HybridFormula(h) => h.formula.eval(xs, seed).scale(h.weight),
            Potential::Constant { log_value } => seed.c(*log_value),
        }
    }

    fn check_assignment<R>(&self, xs: &[SlotVal<R>]) -> Result<()> {
        let slots = self.slots();
        if xs.len() != slots.len() {
            return Err(Error::DomainMismatch(format!(
                "assignment length {} does not match arity {}",
                xs.len(),
                slots.len()
            )));
        }
        for (i, (x, k)) in xs.iter().zip(&slots).enumerate() {
            match (x, k) {
                (SlotVal::State(s), SlotKind::Discrete(card)) => {
                    if s >= card {
                        return Err(Error::DomainMismatch(format!(
                            "state {s} out of range at position {i}"
                        )));
                    }
                }
                (SlotVal::Real(_), SlotKind::Continuous) => {}
                _ => {
                    return Err(Error::DomainMismatch(format!(
                        "slot kind mismatch at position {i}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Fix a subset of positions; the result has reduced arity and agrees with
    /// the original wherever the fixed slots take the given values.
    pub fn restrict(&self, fixed: &BTreeMap<usize, SlotVal<f64>>) -> Result<Potential> {
        let slots = self.slots();
        for (&pos, v) in fixed {
            if pos >= slots.len() {
                return Err(Error::DomainMismatch(format!(
                    "restriction position {pos} beyond arity {}",
                    slots.len()
                )));
            }
            match (v, slots[pos]) {
                (SlotVal::State(s), SlotKind::Discrete(k)) if *s < k => {}
                (SlotVal::Real(_), SlotKind::Continuous) => {}
                _ => {
                    return Err(Error::DomainMismatch(format!(
                        "restriction value mismatch at position {pos}"
                    )))
                }
            }
        }
        if fixed.len() == slots.len() {
            let xs: Vec<SlotVal<f64>> = (0..slots.len()).map(|i| fixed[&i]).collect();
            return Ok(Potential::Constant {
                log_value: self.log_value(&xs)?,
            });
        }
        // New position of each kept slot.
        let mut remap = vec![None; slots.len()];
        let mut next = 0usize;
        for (i, r) in remap.iter_mut().enumerate() {
            if !fixed.contains_key(&i) {
                *r = Some(next);
                next += 1;
            }
        }
        let kept: Vec<usize> = (0..slots.len()).filter(|i| !fixed.contains_key(i)).collect();
        let out = match self {
            Potential::Table(t) => {
                let kept_cards: Vec<usize> = kept.iter().map(|&i| t.cardinalities[i]).collect();
                let n: usize = kept_cards.iter().product();
                let mut log_values = Vec::with_capacity(n);
                let mut idx = vec![0usize; kept.len()];
                loop {
                    let mut full = vec![0usize; slots.len()];
                    for (&pos, v) in fixed {
                        full[pos] = match v {
                            SlotVal::State(s) => *s,
                            SlotVal::Real(_) => unreachable!(),
                        };
                    }
                    for (j, &pos) in kept.iter().enumerate() {
                        full[pos] = idx[j];
                    }
                    let mut flat = 0usize;
                    for (s, &k) in full.iter().zip(&t.cardinalities) {
                        flat = flat * k + s;
                    }
                    log_values.push(t.log_values[flat]);
                    // Odometer over kept dims, last fastest (row-major).
                    let mut carry = true;
                    for j in (0..kept.len()).rev() {
                        if carry {
                            idx[j] += 1;
                            if idx[j] == kept_cards[j] {
                                idx[j] = 0;
                            } else {
                                carry = false;
                            }
                        }
                    }
                    if carry {
                        break;
                    }
                }
                Potential::Table(TablePotential {
                    cardinalities: kept_cards,
                    log_values,
                })
            }
            Potential::Quadratic(q) => {
                let fval = |pos: usize| match fixed[&pos] {
                    SlotVal::Real(r) => r,
                    SlotVal::State(_) => unreachable!(),
                };
                let d = kept.len();
                let mut a = vec![vec![0.0; d]; d];
                let mut b = vec![0.0; d];
                let mut c = q.c;
                for (i_new, &i) in kept.iter().enumerate() {
                    b[i_new] = q.b[i];
                    for (j_new, &j) in kept.iter().enumerate() {
                        a[i_new][j_new] = q.a[i][j];
                    }
                    for &f in fixed.keys() {
                        let v = fval(f);
                        b[i_new] -= (q.a[i][f] + q.a[f][i]) * v;
                    }
                }
                for &f in fixed.keys() {
                    let v = fval(f);
                    c += q.b[f] * v;
                    for &g in fixed.keys() {
                        c -= q.a[f][g] * v * fval(g);
                    }
                }
                Potential::Quadratic(QuadraticPotential { a, b, c })
            }
            Potential::LinearGaussian(lg) => {
                let (pos, v) = {
                    let (&pos, val) = fixed.iter().next().unwrap();
                    let v = match val {
                        SlotVal::Real(r) => *r,
                        SlotVal::State(_) => unreachable!(),
                    };
                    (pos, v)
                };
                // -(x1 - a*x2 - m)^2 / var as a 1-d quadratic in the free slot.
                let (coef, offset) = if pos == 1 {
                    // free x1: -(x1 - (a v + m))^2 / var
                    (1.0, lg.a * v + lg.m)
                } else {
                    // free x2: -(a x2 - (v - m))^2 / var
                    (lg.a, v - lg.m)
                };
                let inv = 1.0 / lg.var;
                Potential::Quadratic(QuadraticPotential {
                    a: vec![vec![coef * coef * inv]],
                    b: vec![2.0 * coef * offset * inv],
                    c: -offset * offset * inv,
                })
            }
            Potential::HybridFormula(h) => {
                let formula = h.formula.restrict(fixed, &remap);
                let slots_new: Vec<SlotDecl> = kept.iter().map(|&i| h.slots[i]).collect();
                Potential::HybridFormula(HybridFormulaPotential {
                    weight: h.weight,
                    slots: slots_new,
                    formula,
                })
            }
            Potential::Constant { log_value } => Potential::Constant {
                log_value: *log_value,
            },
        };
        Ok(out)
    }

    /// Canonical byte string; equal iff kind and quantized parameters agree.
    pub fn signature(&self) -> Vec<u8> {
        self.signature_with_quantum(DEFAULT_QUANTUM)
    }

    pub fn signature_with_quantum(&self, quantum: f64) -> Vec<u8> {
        let mut out = Vec::new();
        let q = |v: f64, out: &mut Vec<u8>| out.extend_from_slice(&quantize(v, quantum).to_le_bytes());
        match self {
            Potential::Table(t) => {
                out.push(1);
                out.extend_from_slice(&(t.cardinalities.len() as u32).to_le_bytes());
                for &k in &t.cardinalities {
                    out.extend_from_slice(&(k as u32).to_le_bytes());
                }
                for &v in &t.log_values {
                    q(v, &mut out);
                }
            }
            Potential::Quadratic(qp) => {
                out.push(2);
                out.extend_from_slice(&(qp.b.len() as u32).to_le_bytes());
                for row in &qp.a {
                    for &v in row {
                        q(v, &mut out);
                    }
                }
                for &v in &qp.b {
                    q(v, &mut out);
                }
                q(qp.c, &mut out);
            }
            Potential::LinearGaussian(lg) => {
                out.push(3);
                q(lg.a, &mut out);
                q(lg.m, &mut out);
                q(lg.var, &mut out);
            }
            Potential::HybridFormula(h) => {
                out.push(4);
                q(h.weight, &mut out);
                out.extend_from_slice(&(h.slots.len() as u32).to_le_bytes());
                for s in &h.slots {
                    match s {
                        SlotDecl::Discrete { k } => {
                            out.push(0);
                            out.extend_from_slice(&(*k as u32).to_le_bytes());
                        }
                        SlotDecl::Continuous => out.push(1),
                    }
                }
                h.formula.encode(&mut out, quantum);
            }
            Potential::Constant { log_value } => {
                out.push(5);
                q(*log_value, &mut out);
            }
        }
        out
    }
}
