//! Hybrid factor graphs: variables, factors, evidence, and conditioning.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::potentials::{Potential, SlotKind, SlotVal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Discrete {
        k: usize,
    },
    Continuous {
        #[serde(with = "crate::ext")]
        lo: f64,
        #[serde(with = "crate::ext")]
        hi: f64,
    },
}

impl Domain {
    pub fn slot_kind(&self) -> SlotKind {
        match self {
            Domain::Discrete { k } => SlotKind::Discrete(*k),
            Domain::Continuous { .. } => SlotKind::Continuous,
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Domain::Discrete { k }, Value::State(s)) => s < k,
            (Domain::Continuous { lo, hi }, Value::Real(x)) => x.is_finite() && *lo <= *x && *x <= *hi,
            _ => false,
        }
    }
}

/// An observed or assigned value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    State(usize),
    Real(f64),
}

impl Value {
    pub fn slot(&self) -> SlotVal<f64> {
        match self {
            Value::State(s) => SlotVal::State(*s),
            Value::Real(x) => SlotVal::Real(*x),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::State(v) => s.serialize_u64(*v as u64),
            Value::Real(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) => {
                if let Some(u) = n.as_u64() {
                    // Integers are read back as discrete states; graph-side
                    // validation reinterprets them per domain.
                    Ok(Value::State(u as usize))
                } else {
                    Ok(Value::Real(n.as_f64().unwrap()))
                }
            }
            _ => Err(serde::de::Error::custom("evidence value must be a number")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub id: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl VariableDecl {
    pub fn discrete(id: impl Into<String>, k: usize) -> Self {
        VariableDecl {
            id: id.into(),
            domain: Domain::Discrete { k },
            label: None,
        }
    }

    pub fn continuous(id: impl Into<String>, lo: f64, hi: f64) -> Self {
        VariableDecl {
            id: id.into(),
            domain: Domain::Continuous { lo, hi },
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDecl {
    pub id: String,
    pub scope: Vec<String>,
    pub potential: Potential,
}

/// Evidence: observed values keyed by variable id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evidence {
    pub entries: BTreeMap<String, Value>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: impl Into<String>, v: Value) {
        self.entries.insert(id.into(), v);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A validated hybrid factor graph with deterministic adjacency.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct FactorGraph {
    variables: Vec<VariableDecl>,
    factors: Vec<FactorDecl>,
    log_constant: f64,
    #[serde(skip)]
    var_index: HashMap<String, usize>,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    variables: Vec<VariableDecl>,
    factors: Vec<FactorDecl>,
    #[serde(default)]
    log_constant: f64,
}

impl TryFrom<GraphDoc> for FactorGraph {
    type Error = Error;
    fn try_from(doc: GraphDoc) -> Result<Self> {
        let mut g = FactorGraph::build(doc.variables, doc.factors)?;
        g.log_constant = doc.log_constant;
        Ok(g)
    }
}

impl From<FactorGraph> for GraphDoc {
    fn from(g: FactorGraph) -> GraphDoc {
        GraphDoc {
            variables: g.variables,
            factors: g.factors,
            log_constant: g.log_constant,
        }
    }
}

impl FactorGraph {
    /// Validate the declarations and build adjacency in declaration order.
    pub fn build(variables: Vec<VariableDecl>, factors: Vec<FactorDecl>) -> Result<Self> {
        let mut var_index = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            match v.domain {
                Domain::Discrete { k } if k < 2 => {
                    return Err(Error::InvalidDeclaration(format!(
                        "variable `{}`: discrete cardinality must be at least 2",
                        v.id
                    )))
                }
                Domain::Continuous { lo, hi } if !(lo < hi) => {
                    return Err(Error::InvalidDeclaration(format!(
                        "variable `{}`: continuous bounds must satisfy lo < hi",
                        v.id
                    )))
                }
                _ => {}
            }
            if var_index.insert(v.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(v.id.clone()));
            }
        }
        let mut factor_ids = HashMap::new();
        let mut adjacency = vec![Vec::new(); variables.len()];
        for (fi, f) in factors.iter().enumerate() {
            if factor_ids.insert(f.id.clone(), fi).is_some() {
                return Err(Error::DuplicateId(f.id.clone()));
            }
            if f.scope.is_empty() && f.potential.arity() != 0 {
                return Err(Error::InvalidDeclaration(format!(
                    "factor `{}` has an empty scope",
                    f.id
                )));
            }
            f.potential.validate()?;
            let slots = f.potential.slots();
            if slots.len() != f.scope.len() {
                return Err(Error::ArityMismatch {
                    factor: f.id.clone(),
                    potential_arity: slots.len(),
                    scope_len: f.scope.len(),
                });
            }
            let mut seen = std::collections::HashSet::new();
            for (pos, vid) in f.scope.iter().enumerate() {
                if !seen.insert(vid) {
                    return Err(Error::InvalidDeclaration(format!(
                        "factor `{}` scope repeats variable `{vid}`",
                        f.id
                    )));
                }
                let &vi = var_index
                    .get(vid)
                    .ok_or_else(|| Error::UnknownVariable(vid.clone()))?;
                if variables[vi].domain.slot_kind() != slots[pos] {
                    return Err(Error::DomainMismatch(format!(
                        "factor `{}` position {pos}: potential slot kind does not match `{vid}`",
                        f.id
                    )));
                }
                adjacency[vi].push((fi, pos));
            }
        }
        Ok(FactorGraph {
            variables,
            factors,
            log_constant: 0.0,
            var_index,
            adjacency,
        })
    }

    pub fn variables(&self) -> &[VariableDecl] {
        &self.variables
    }

    pub fn factors(&self) -> &[FactorDecl] {
        &self.factors
    }

    pub fn log_constant(&self) -> f64 {
        self.log_constant
    }

    pub fn var_index(&self, id: &str) -> Option<usize> {
        self.var_index.get(id).copied()
    }

    /// Ordered `(factor index, position in scope)` pairs for a variable.
    pub fn adjacency(&self, var: usize) -> &[(usize, usize)] {
        &self.adjacency[var]
    }

    /// Factor-neighbor count `|nb(i)|`.
    pub fn degree(&self, var: usize) -> usize {
        self.adjacency[var].len()
    }

    /// Indices of each scope variable of a factor.
    pub fn scope_indices(&self, factor: usize) -> Vec<usize> {
        self.factors[factor]
            .scope
            .iter()
            .map(|id| self.var_index[id])
            .collect()
    }

    pub fn validate_evidence(&self, evidence: &Evidence) -> Result<()> {
        for (id, v) in &evidence.entries {
            let &vi = self
                .var_index
                .get(id)
                .ok_or_else(|| Error::UnknownVariable(id.clone()))?;
            let v = coerce(&self.variables[vi].domain, v);
            if !self.variables[vi].domain.contains(&v) {
                return Err(Error::InvalidEvidenceValue {
                    variable: id.clone(),
                    reason: format!("{v:?} outside {:?}", self.variables[vi].domain),
                });
            }
        }
        Ok(())
    }

    /// Evidence values keyed by variable index, coerced to the domain kind.
    pub fn evidence_by_index(&self, evidence: &Evidence) -> Result<BTreeMap<usize, Value>> {
        self.validate_evidence(evidence)?;
        Ok(evidence
            .entries
            .iter()
            .map(|(id, v)| {
                let vi = self.var_index[id];
                (vi, coerce(&self.variables[vi].domain, v))
            })
            .collect())
    }

    /// Absorb evidence: restrict factors, drop observed variables, and record
    /// fully observed factors as an additive log constant.
    pub fn condition(&self, evidence: &Evidence) -> Result<FactorGraph> {
        let by_index = self.evidence_by_index(evidence)?;
        let mut log_constant = self.log_constant;
        let keep_vars: Vec<VariableDecl> = self
            .variables
            .iter()
            .enumerate()
            .filter(|(i, _)| !by_index.contains_key(i))
            .map(|(_, v)| v.clone())
            .collect();
        let mut factors = Vec::new();
        for f in &self.factors {
            let mut fixed = BTreeMap::new();
            let mut kept_scope = Vec::new();
            for (pos, vid) in f.scope.iter().enumerate() {
                let vi = self.var_index[vid];
                match by_index.get(&vi) {
                    Some(v) => {
                        fixed.insert(pos, v.slot());
                    }
                    None => kept_scope.push(vid.clone()),
                }
            }
            if fixed.is_empty() {
                factors.push(f.clone());
            } else if kept_scope.is_empty() {
                let xs: Vec<SlotVal<f64>> = (0..f.scope.len()).map(|p| fixed[&p]).collect();
                log_constant += f.potential.log_value(&xs)?;
            } else {
                factors.push(FactorDecl {
                    id: f.id.clone(),
                    scope: kept_scope,
                    potential: f.potential.restrict(&fixed)?,
                });
            }
        }
        let mut g = FactorGraph::build(keep_vars, factors)?;
        g.log_constant = log_constant;
        Ok(g)
    }

    /// `log` of the unnormalized density at a full assignment (by index),
    /// including the recorded constant.
    pub fn log_density(&self, assignment: &BTreeMap<usize, Value>) -> Result<f64> {
        let mut total = self.log_constant;
        for (fi, f) in self.factors.iter().enumerate() {
            let xs: Vec<SlotVal<f64>> = self
                .scope_indices(fi)
                .iter()
                .map(|vi| {
                    assignment
                        .get(vi)
                        .map(|v| v.slot())
                        .ok_or_else(|| Error::UnknownVariable(self.variables[*vi].id.clone()))
                })
                .collect::<Result<_>>()?;
            total += f.potential.log_value(&xs)?;
        }
        Ok(total)
    }
}

/// JSON integers deserialize as `State`; reinterpret for continuous domains.
fn coerce(domain: &Domain, v: &Value) -> Value {
    match (domain, v) {
        (Domain::Continuous { .. }, Value::State(s)) => Value::Real(*s as f64),
        _ => *v,
    }
}
