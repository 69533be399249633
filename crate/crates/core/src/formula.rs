//! Expression trees for weighted hybrid-logic potentials.
//!
//! Boolean subtrees evaluate in {0,1} over discrete scope positions; feature
//! subtrees evaluate to reals. `Eq` is the soft equality feature `-(a-b)^2`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::potentials::{SlotKind, SlotVal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Formula {
    /// Truth value of a binary discrete slot (state 1 = true).
    Atom { pos: usize },
    Not { arg: Box<Formula> },
    And { args: Vec<Formula> },
    /// Material implication, evaluated as an indicator.
    Implies { lhs: Box<Formula>, rhs: Box<Formula> },
    /// `-(x_a - x_b)^2` over two continuous slots.
    Eq { a_pos: usize, b_pos: usize },
    /// `-(x_pos - value)^2` against a fixed real.
    EqConst { pos: usize, value: f64 },
    /// Boolean gate times a real feature.
    Mul { cond: Box<Formula>, feature: Box<Formula> },
    Sum { args: Vec<Formula> },
    BoolConst { value: bool },
    RealConst { value: f64 },
}

impl Formula {
    pub fn not(arg: Formula) -> Formula {
        Formula::Not { arg: Box::new(arg) }
    }

    pub fn implies(lhs: Formula, rhs: Formula) -> Formula {
        Formula::Implies {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn mul(cond: Formula, feature: Formula) -> Formula {
        Formula::Mul {
            cond: Box::new(cond),
            feature: Box::new(feature),
        }
    }

    fn is_boolean(&self) -> bool {
        matches!(
            self,
            Formula::Atom { .. }
                | Formula::Not { .. }
                | Formula::And { .. }
                | Formula::Implies { .. }
                | Formula::BoolConst { .. }
        )
    }

    /// Check slot usage against the declared scope kinds.
    pub fn validate(&self, slots: &[SlotKind]) -> Result<()> {
        let check_pos = |pos: usize| {
            if pos >= slots.len() {
                Err(Error::DomainMismatch(format!(
                    "formula references position {pos} beyond arity {}",
                    slots.len()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Formula::Atom { pos } => {
                check_pos(*pos)?;
                match slots[*pos] {
                    SlotKind::Discrete(2) => Ok(()),
                    _ => Err(Error::DomainMismatch(format!(
                        "atom at position {pos} requires a binary discrete slot"
                    ))),
                }
            }
            Formula::Not { arg } => {
                require_boolean(arg)?;
                arg.validate(slots)
            }
            Formula::And { args } => {
                for a in args {
                    require_boolean(a)?;
                    a.validate(slots)?;
                }
                Ok(())
            }
            Formula::Implies { lhs, rhs } => {
                require_boolean(lhs)?;
                require_boolean(rhs)?;
                lhs.validate(slots)?;
                rhs.validate(slots)
            }
            Formula::Eq { a_pos, b_pos } => {
                for &p in [a_pos, b_pos] {
                    check_pos(p)?;
                    if !matches!(slots[p], SlotKind::Continuous) {
                        return Err(Error::DomainMismatch(format!(
                            "equality feature at position {p} requires a continuous slot"
                        )));
                    }
                }
                Ok(())
            }
            Formula::EqConst { pos, .. } => {
                check_pos(*pos)?;
                if !matches!(slots[*pos], SlotKind::Continuous) {
                    return Err(Error::DomainMismatch(format!(
                        "equality feature at position {pos} requires a continuous slot"
                    )));
                }
                Ok(())
            }
            Formula::Mul { cond, feature } => {
                require_boolean(cond)?;
                cond.validate(slots)?;
                feature.validate(slots)
            }
            Formula::Sum { args } => {
                for a in args {
                    a.validate(slots)?;
                }
                Ok(())
            }
            Formula::BoolConst { .. } | Formula::RealConst { .. } => Ok(()),
        }
    }

    fn eval_bool<R: Real>(&self, xs: &[SlotVal<R>]) -> bool {
        match self {
            Formula::Atom { pos } => match xs[*pos] {
                SlotVal::State(s) => s == 1,
                SlotVal::Real(_) => unreachable!("validated: atom over discrete slot"),
            },
            Formula::Not { arg } => !arg.eval_bool(xs),
            Formula::And { args } => args.iter().all(|a| a.eval_bool(xs)),
            Formula::Implies { lhs, rhs } => !lhs.eval_bool(xs) || rhs.eval_bool(xs),
            Formula::BoolConst { value } => *value,
            _ => unreachable!("validated: boolean subtree"),
        }
    }

    /// Feature value of the tree; boolean trees coerce to 0/1.
    pub fn eval<R: Real>(&self, xs: &[SlotVal<R>], seed: R) -> R {
        match self {
            Formula::Eq { a_pos, b_pos } => {
                let a = slot_real(xs, *a_pos, seed);
                let b = slot_real(xs, *b_pos, seed);
                -(a - b).sq()
            }
            Formula::EqConst { pos, value } => {
                let a = slot_real(xs, *pos, seed);
                -a.shift(-*value).sq()
            }
            Formula::Mul { cond, feature } => {
                if cond.eval_bool(xs) {
                    feature.eval(xs, seed)
                } else {
                    seed.c(0.0)
                }
            }
            Formula::Sum { args } => {
                let mut acc = seed.c(0.0);
                for a in args {
                    acc = acc + a.eval(xs, seed);
                }
                acc
            }
            Formula::RealConst { value } => seed.c(*value),
            boolean => seed.c(if boolean.eval_bool(xs) { 1.0 } else { 0.0 }),
        }
    }

    /// Substitute fixed slot values and renumber the remaining positions.
    /// `remap[pos]` gives the new position of an unfixed slot.
    pub fn restrict(&self, fixed: &BTreeMap<usize, SlotVal<f64>>, remap: &[Option<usize>]) -> Formula {
        match self {
            Formula::Atom { pos } => match fixed.get(pos) {
                Some(SlotVal::State(s)) => Formula::BoolConst { value: *s == 1 },
                Some(SlotVal::Real(_)) => unreachable!("validated: atom over discrete slot"),
                None => Formula::Atom {
                    pos: remap[*pos].expect("unfixed slot has a new position"),
                },
            },
            Formula::Not { arg } => Formula::not(arg.restrict(fixed, remap)),
            Formula::And { args } => Formula::And {
                args: args.iter().map(|a| a.restrict(fixed, remap)).collect(),
            },
            Formula::Implies { lhs, rhs } => {
                Formula::implies(lhs.restrict(fixed, remap), rhs.restrict(fixed, remap))
            }
            Formula::Eq { a_pos, b_pos } => {
                let fa = fixed.get(a_pos).map(fixed_real);
                let fb = fixed.get(b_pos).map(fixed_real);
                match (fa, fb) {
                    (Some(a), Some(b)) => Formula::RealConst {
                        value: -(a - b) * (a - b),
                    },
                    (Some(a), None) => Formula::EqConst {
                        pos: remap[*b_pos].unwrap(),
                        value: a,
                    },
                    (None, Some(b)) => Formula::EqConst {
                        pos: remap[*a_pos].unwrap(),
                        value: b,
                    },
                    (None, None) => Formula::Eq {
                        a_pos: remap[*a_pos].unwrap(),
                        b_pos: remap[*b_pos].unwrap(),
                    },
                }
            }
            Formula::EqConst { pos, value } => match fixed.get(pos) {
                Some(v) => {
                    let x = fixed_real(v);
                    Formula::RealConst {
                        value: -(x - value) * (x - value),
                    }
                }
                None => Formula::EqConst {
                    pos: remap[*pos].unwrap(),
                    value: *value,
                },
            },
            Formula::Mul { cond, feature } => {
                Formula::mul(cond.restrict(fixed, remap), feature.restrict(fixed, remap))
            }
            Formula::Sum { args } => Formula::Sum {
                args: args.iter().map(|a| a.restrict(fixed, remap)).collect(),
            },
            Formula::BoolConst { value } => Formula::BoolConst { value: *value },
            Formula::RealConst { value } => Formula::RealConst { value: *value },
        }
    }

    /// Canonical byte encoding for color signatures.
    pub fn encode(&self, out: &mut Vec<u8>, quantum: f64) {
        let q = |v: f64, out: &mut Vec<u8>| {
            out.extend_from_slice(&crate::potentials::quantize(v, quantum).to_le_bytes())
        };
        match self {
            Formula::Atom { pos } => {
                out.push(1);
                out.extend_from_slice(&(*pos as u32).to_le_bytes());
            }
            Formula::Not { arg } => {
                out.push(2);
                arg.encode(out, quantum);
            }
            Formula::And { args } => {
                out.push(3);
                out.extend_from_slice(&(args.len() as u32).to_le_bytes());
                for a in args {
                    a.encode(out, quantum);
                }
            }
            Formula::Implies { lhs, rhs } => {
                out.push(4);
                lhs.encode(out, quantum);
                rhs.encode(out, quantum);
            }
            Formula::Eq { a_pos, b_pos } => {
                out.push(5);
                out.extend_from_slice(&(*a_pos as u32).to_le_bytes());
                out.extend_from_slice(&(*b_pos as u32).to_le_bytes());
            }
            Formula::EqConst { pos, value } => {
                out.push(6);
                out.extend_from_slice(&(*pos as u32).to_le_bytes());
                q(*value, out);
            }
            Formula::Mul { cond, feature } => {
                out.push(7);
                cond.encode(out, quantum);
                feature.encode(out, quantum);
            }
            Formula::Sum { args } => {
                out.push(8);
                out.extend_from_slice(&(args.len() as u32).to_le_bytes());
                for a in args {
                    a.encode(out, quantum);
                }
            }
            Formula::BoolConst { value } => {
                out.push(9);
                out.push(*value as u8);
            }
            Formula::RealConst { value } => {
                out.push(10);
                q(*value, out);
            }
        }
    }
}

fn require_boolean(f: &Formula) -> Result<()> {
    if f.is_boolean() {
        Ok(())
    } else {
        Err(Error::DomainMismatch(
            "expected a boolean-valued subtree".into(),
        ))
    }
}

fn slot_real<R: Real>(xs: &[SlotVal<R>], pos: usize, seed: R) -> R {
    match xs[pos] {
        SlotVal::Real(r) => r,
        SlotVal::State(s) => seed.c(s as f64),
    }
}

fn fixed_real(v: &SlotVal<f64>) -> f64 {
    match v {
        SlotVal::Real(r) => *r,
        SlotVal::State(s) => *s as f64,
    }
}
