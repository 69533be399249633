//! Mixture-of-mean-field variational family and free-energy objectives.
//!
//! A `MixtureMeanField` is a K-component mixture in which every component
//! fully factorizes over sites; a site is either a ground variable or a super
//! variable of a compressed graph. Both the Bethe and the Jensen entropy
//! approximations are provided, together with exact gradients of the
//! quadrature-discretized objective.

mod engine;

pub use engine::clique_expectation;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Domain, FactorGraph, Value};
use crate::lifting::CompressedGraph;
use crate::potentials::Potential;
use crate::quadrature::QuadratureRule;

/// Which entropy approximation the free energy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    Bethe,
    Jensen,
}

/// Free-energy configuration for one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub entropy: EntropyKind,
    pub quad_order: usize,
    /// Density floor inside logarithms.
    pub delta: f64,
    /// Hybrid cliques enumerate a discrete x quadrature tensor grid, so the
    /// factor arity is soft-limited.
    pub max_factor_arity: usize,
}

impl ObjectiveSpec {
    pub fn new(entropy: EntropyKind) -> Self {
        ObjectiveSpec {
            entropy,
            quad_order: 8,
            delta: 1e-300,
            max_factor_arity: 4,
        }
    }

    pub fn rule(&self) -> QuadratureRule {
        QuadratureRule::gauss_hermite(self.quad_order)
    }
}

/// A site whose marginal is fixed rather than optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clamp {
    Gaussian { mean: f64, var: f64 },
    State { state: usize },
}

/// One optimization site: a ground variable or a super variable with a
/// member count and the shared ground degree.
#[derive(Debug, Clone)]
pub struct Site {
    pub domain: Domain,
    pub count: f64,
    pub degree: usize,
    pub clamp: Option<Clamp>,
}

/// One energy/entropy term: a ground factor or a counted super factor.
#[derive(Debug, Clone)]
pub struct FactorTerm {
    pub count: f64,
    /// Site index per scope position (may repeat for super factors).
    pub scope: Vec<usize>,
    pub potential: Potential,
}

/// The structure a free energy is computed over. Ground graphs use unit
/// counts; compressed graphs carry `#(i)` and `#(c)`.
#[derive(Debug, Clone)]
pub struct ObjectiveModel {
    pub sites: Vec<Site>,
    pub factors: Vec<FactorTerm>,
    pub log_constant: f64,
}

impl ObjectiveModel {
    pub fn ground(graph: &FactorGraph) -> Self {
        Self::ground_with_clamps(graph, &[])
    }

    /// Ground model with selected variables clamped (index, clamp) pairs.
    pub fn ground_with_clamps(graph: &FactorGraph, clamps: &[(usize, Clamp)]) -> Self {
        let mut clamp_by_var = vec![None; graph.variables().len()];
        for (i, c) in clamps {
            clamp_by_var[*i] = Some(*c);
        }
        let sites = graph
            .variables()
            .iter()
            .enumerate()
            .map(|(i, v)| Site {
                domain: v.domain,
                count: 1.0,
                degree: graph.degree(i),
                clamp: clamp_by_var[i],
            })
            .collect();
        let factors = (0..graph.factors().len())
            .map(|fi| FactorTerm {
                count: 1.0,
                scope: graph.scope_indices(fi),
                potential: graph.factors()[fi].potential.clone(),
            })
            .collect();
        ObjectiveModel {
            sites,
            factors,
            log_constant: graph.log_constant(),
        }
    }

    /// Lifted model: one site per super variable, one counted term per super
    /// factor. `clamps` is indexed by super variable.
    pub fn lifted(cg: &CompressedGraph, graph: &FactorGraph, clamps: &[Option<Clamp>]) -> Self {
        let sites = cg
            .super_variables
            .iter()
            .enumerate()
            .map(|(i, sv)| Site {
                domain: sv.domain,
                count: sv.count as f64,
                degree: sv.ground_degree,
                clamp: clamps.get(i).copied().flatten(),
            })
            .collect();
        let factors = cg
            .super_factors
            .iter()
            .map(|sf| FactorTerm {
                count: sf.count as f64,
                scope: sf.scope.clone(),
                potential: graph.factors()[sf.members[0]].potential.clone(),
            })
            .collect();
        ObjectiveModel {
            sites,
            factors,
            log_constant: graph.log_constant(),
        }
    }
}

/// Marginal parameters of one site in one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian { mean: f64, log_std: f64 },
    Categorical { logits: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteMarginals {
    /// One marginal per mixture component.
    Free { components: Vec<Marginal> },
    Clamped { clamp: Clamp },
}

/// The variational distribution `q(x) = sum_k w_k prod_i q_i^k(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMeanField {
    pub weight_logits: Vec<f64>,
    pub sites: Vec<SiteMarginals>,
}

/// Bounds applied to the Gaussian log-std parameterization.
pub const LOG_STD_MIN: f64 = -9.210340371976182; // ln(1e-4)
pub const LOG_STD_MAX: f64 = 9.210340371976184; // ln(1e4)

impl MixtureMeanField {
    pub fn k(&self) -> usize {
        self.weight_logits.len()
    }

    /// Mixture weights (softmax of the logits).
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.weight_logits)
    }

    /// Random initialization: means uniform over the domain when bounded,
    /// otherwise [-1, 1]; unit std; small logit noise to break ties.
    pub fn init(model: &ObjectiveModel, k: usize, rng: &mut impl Rng) -> Self {
        let sites = model
            .sites
            .iter()
            .map(|site| match site.clamp {
                Some(clamp) => SiteMarginals::Clamped { clamp },
                None => {
                    let components = (0..k)
                        .map(|_| match site.domain {
                            Domain::Continuous { lo, hi } => {
                                let (a, b) = if lo.is_finite() && hi.is_finite() {
                                    (lo, hi)
                                } else {
                                    (-1.0, 1.0)
                                };
                                Marginal::Gaussian {
                                    mean: rng.gen_range(a..b),
                                    log_std: 0.0,
                                }
                            }
                            Domain::Discrete { k: card } => Marginal::Categorical {
                                logits: (0..card)
                                    .map(|_| 0.1 * normal_sample(rng))
                                    .collect(),
                            },
                        })
                        .collect();
                    SiteMarginals::Free { components }
                }
            })
            .collect();
        MixtureMeanField {
            weight_logits: vec![0.0; k],
            sites,
        }
    }

    /// Univariate mixture density/mass at a point.
    pub fn marginal_density(&self, site: usize, x: &Value) -> Result<f64> {
        let w = self.weights();
        match (&self.sites[site], x) {
            (SiteMarginals::Free { components }, _) => {
                let mut total = 0.0;
                for (wk, m) in w.iter().zip(components) {
                    total += wk * marginal_point(m, x)?;
                }
                Ok(total)
            }
            (SiteMarginals::Clamped { clamp }, _) => match (clamp, x) {
                (Clamp::Gaussian { mean, var }, Value::Real(x)) => {
                    let std = var.sqrt().max(1e-6);
                    Ok(gauss_pdf(*x, *mean, std))
                }
                (Clamp::State { state }, Value::State(s)) => {
                    Ok(if s == state { 1.0 } else { 0.0 })
                }
                _ => Err(Error::DomainMismatch("clamp/value kind mismatch".into())),
            },
        }
    }

    /// Flatten the optimized parameters per `layout`.
    pub fn pack(&self, layout: &Layout) -> Vec<f64> {
        let mut out = vec![0.0; layout.len];
        out[..layout.k].copy_from_slice(&self.weight_logits);
        for (site, entry) in layout.entries.iter().enumerate() {
            let Some(entry) = entry else { continue };
            let SiteMarginals::Free { components } = &self.sites[site] else {
                panic!("layout says site {site} is free but marginals are clamped");
            };
            for (comp, m) in components.iter().enumerate() {
                let base = entry.offset + comp * entry.per_comp;
                match m {
                    Marginal::Gaussian { mean, log_std } => {
                        out[base] = *mean;
                        out[base + 1] = *log_std;
                    }
                    Marginal::Categorical { logits } => {
                        out[base..base + logits.len()].copy_from_slice(logits);
                    }
                }
            }
        }
        out
    }

    /// Rebuild from a flat parameter vector.
    pub fn unpack(layout: &Layout, model: &ObjectiveModel, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), layout.len);
        let weight_logits = flat[..layout.k].to_vec();
        let sites = model
            .sites
            .iter()
            .enumerate()
            .map(|(site, s)| match (&layout.entries[site], s.clamp) {
                (Some(entry), _) => {
                    let components = (0..layout.k)
                        .map(|comp| {
                            let base = entry.offset + comp * entry.per_comp;
                            match s.domain {
                                Domain::Continuous { .. } => Marginal::Gaussian {
                                    mean: flat[base],
                                    log_std: flat[base + 1],
                                },
                                Domain::Discrete { k } => Marginal::Categorical {
                                    logits: flat[base..base + k].to_vec(),
                                },
                            }
                        })
                        .collect();
                    SiteMarginals::Free { components }
                }
                (None, Some(clamp)) => SiteMarginals::Clamped { clamp },
                (None, None) => unreachable!("unclamped site missing from layout"),
            })
            .collect();
        MixtureMeanField {
            weight_logits,
            sites,
        }
    }
}

fn marginal_point(m: &Marginal, x: &Value) -> Result<f64> {
    match (m, x) {
        (Marginal::Gaussian { mean, log_std }, Value::Real(x)) => {
            let std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
            Ok(gauss_pdf(*x, *mean, std))
        }
        (Marginal::Categorical { logits }, Value::State(s)) => {
            let p = softmax(logits);
            p.get(*s)
                .copied()
                .ok_or_else(|| Error::DomainMismatch(format!("state {s} out of range")))
        }
        _ => Err(Error::DomainMismatch("marginal/value kind mismatch".into())),
    }
}

pub(crate) fn gauss_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn normal_sample(rng: &mut impl Rng) -> f64 {
    // Box-Muller; good enough for init noise.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Flat-parameter layout: `[weight logits | per free site, per component]`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub k: usize,
    pub entries: Vec<Option<SiteOffset>>,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SiteOffset {
    pub offset: usize,
    pub per_comp: usize,
}

impl Layout {
    pub fn new(model: &ObjectiveModel, k: usize) -> Self {
        assert!(k >= 1);
        let mut len = k;
        let entries = model
            .sites
            .iter()
            .map(|s| {
                if s.clamp.is_some() {
                    None
                } else {
                    let per_comp = match s.domain {
                        Domain::Continuous { .. } => 2,
                        Domain::Discrete { k } => k,
                    };
                    let e = SiteOffset {
                        offset: len,
                        per_comp,
                    };
                    len += k * per_comp;
                    Some(e)
                }
            })
            .collect();
        Layout { k, entries, len }
    }
}

/// Free energy `F(q)` of a model under the given spec.
pub fn free_energy(
    q: &MixtureMeanField,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    engine::free_energy_flat(&flat, &layout, model, spec)
}

/// Energy term `-sum_c #(c) sum_k w_k E[log psi_c]` plus recorded constants.
pub fn energy(q: &MixtureMeanField, model: &ObjectiveModel, spec: &ObjectiveSpec) -> Result<f64> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    engine::energy_flat(&flat, &layout, model, spec)
}

/// Bethe entropy `sum_c #(c) H[q_c] + sum_i #(i) (1 - |nb(i)|) H[q_i]`.
pub fn bethe_entropy(
    q: &MixtureMeanField,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    engine::bethe_entropy_flat(&flat, &layout, model, spec)
}

/// Jensen entropy with closed-form component overlaps (counted per site).
pub fn jensen_entropy(
    q: &MixtureMeanField,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    engine::jensen_entropy_flat(&flat, &layout, model, spec)
}

/// Objective value and exact gradient with respect to the flat parameters.
pub fn value_and_gradient(
    flat: &[f64],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = tape.vars(flat);
    let out = engine::free_energy_generic(&vars, layout, model, spec)?;
    let value = crate::autodiff::Real::val(out);
    if value.is_nan() {
        return Err(Error::DivergenceDetected);
    }
    let adj = tape.gradient(out);
    let grad: Vec<f64> = vars.iter().map(|v| adj[v.index()]).collect();
    Ok((value, grad))
}

/// Gradient of `free_energy` with respect to a mixture's flat parameters.
pub fn gradient(
    q: &MixtureMeanField,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<Vec<f64>> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    Ok(value_and_gradient(&flat, &layout, model, spec)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FactorGraph, VariableDecl};
    use crate::potentials::{
        LinearGaussianPotential, QuadraticPotential, SlotVal, TablePotential,
    };
    use approx::assert_relative_eq;

    fn unary_quadratic(a: f64) -> Potential {
        Potential::Quadratic(QuadraticPotential {
            a: vec![vec![a]],
            b: vec![0.0],
            c: 0.0,
        })
    }

    fn single_var_graph(factor: Option<Potential>) -> FactorGraph {
        let vars = vec![VariableDecl::continuous(
            "x",
            f64::NEG_INFINITY,
            f64::INFINITY,
        )];
        let factors = factor
            .map(|p| {
                vec![crate::graph::FactorDecl {
                    id: "f".into(),
                    scope: vec!["x".into()],
                    potential: p,
                }]
            })
            .unwrap_or_default();
        FactorGraph::build(vars, factors).unwrap()
    }

    fn pair_graph() -> FactorGraph {
        let vars = vec![
            VariableDecl::continuous("x1", f64::NEG_INFINITY, f64::INFINITY),
            VariableDecl::continuous("x2", f64::NEG_INFINITY, f64::INFINITY),
        ];
        let factors = vec![crate::graph::FactorDecl {
            id: "f".into(),
            scope: vec!["x1".into(), "x2".into()],
            potential: Potential::LinearGaussian(LinearGaussianPotential {
                a: 1.0,
                m: 0.0,
                var: 1.0,
            }),
        }];
        FactorGraph::build(vars, factors).unwrap()
    }

    /// One continuous site; a component per `(mean, log_std)` pair.
    fn gaussian_q(params: &[(f64, f64)]) -> MixtureMeanField {
        MixtureMeanField {
            weight_logits: vec![0.0; params.len()],
            sites: vec![SiteMarginals::Free {
                components: params
                    .iter()
                    .map(|&(mean, log_std)| Marginal::Gaussian { mean, log_std })
                    .collect(),
            }],
        }
    }

    fn std_normal_pair_q() -> MixtureMeanField {
        MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![
                SiteMarginals::Free {
                    components: vec![Marginal::Gaussian {
                        mean: 0.0,
                        log_std: 0.0,
                    }],
                },
                SiteMarginals::Free {
                    components: vec![Marginal::Gaussian {
                        mean: 0.0,
                        log_std: 0.0,
                    }],
                },
            ],
        }
    }

    #[test]
    fn marginal_density_standard_normal() {
        let q = gaussian_q(&[(0.0, 0.0)]);
        let d = q.marginal_density(0, &Value::Real(0.0)).unwrap();
        assert_relative_eq!(d, 0.3989422804014327, epsilon = 1e-12);
    }

    #[test]
    fn marginal_density_two_point_masses() {
        let q = MixtureMeanField {
            weight_logits: vec![0.0, 0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![
                    Marginal::Categorical {
                        logits: vec![100.0, 0.0],
                    },
                    Marginal::Categorical {
                        logits: vec![0.0, 100.0],
                    },
                ],
            }],
        };
        let p0 = q.marginal_density(0, &Value::State(0)).unwrap();
        let p1 = q.marginal_density(0, &Value::State(1)).unwrap();
        assert_relative_eq!(p0, 0.5, epsilon = 1e-12);
        assert_relative_eq!(p1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn marginal_density_gaussian_mixture() {
        let q = gaussian_q(&[(0.0, 0.0), (2.0, 0.0)]);
        let d = q.marginal_density(0, &Value::Real(1.0)).unwrap();
        assert_relative_eq!(d, 0.24197072451914337, epsilon = 1e-9);
    }

    #[test]
    fn clique_expectation_polynomials() {
        let graph = single_var_graph(Some(unary_quadratic(1.0)));
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0)]);
        let rule = QuadratureRule::gauss_hermite(8);
        let e = clique_expectation(&q, &model, 0, 0, &rule, &|xs| match xs[0] {
            SlotVal::Real(x) => x * x,
            _ => unreachable!(),
        })
        .unwrap();
        assert_relative_eq!(e, 1.0, epsilon = 1e-12);
        let one = clique_expectation(&q, &model, 0, 0, &rule, &|_| 1.0).unwrap();
        assert_relative_eq!(one, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clique_expectation_pairwise() {
        let graph = pair_graph();
        let model = ObjectiveModel::ground(&graph);
        let q = std_normal_pair_q();
        let rule = QuadratureRule::gauss_hermite(8);
        let e = clique_expectation(&q, &model, 0, 0, &rule, &|xs| {
            match (xs[0], xs[1]) {
                (SlotVal::Real(a), SlotVal::Real(b)) => -(a - b) * (a - b),
                _ => unreachable!(),
            }
        })
        .unwrap();
        assert_relative_eq!(e, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_examples() {
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        // Unary log psi(x) = -x^2, q = N(0,1): energy = E[x^2] = 1.
        let graph = single_var_graph(Some(unary_quadratic(1.0)));
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0)]);
        assert_relative_eq!(energy(&q, &model, &spec).unwrap(), 1.0, epsilon = 1e-10);
        // No factors: zero.
        let graph = single_var_graph(None);
        let model = ObjectiveModel::ground(&graph);
        assert_relative_eq!(energy(&q, &model, &spec).unwrap(), 0.0, epsilon = 1e-12);
        // Pairwise chain: E[(x1 - x2)^2] = 2.
        let graph = pair_graph();
        let model = ObjectiveModel::ground(&graph);
        let q = std_normal_pair_q();
        assert_relative_eq!(energy(&q, &model, &spec).unwrap(), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn bethe_entropy_examples() {
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        let half_log_2pie = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        // Single var with one unary factor, K=1 Gaussian: H = 1/2 log(2 pi e).
        let graph = single_var_graph(Some(unary_quadratic(1.0)));
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0)]);
        assert_relative_eq!(
            bethe_entropy(&q, &model, &spec).unwrap(),
            half_log_2pie,
            epsilon = 1e-9
        );
        // Uniform categorical over 2 with one unary factor: log 2.
        let vars = vec![VariableDecl::discrete("d", 2)];
        let factors = vec![crate::graph::FactorDecl {
            id: "f".into(),
            scope: vec!["d".into()],
            potential: Potential::Table(TablePotential {
                cardinalities: vec![2],
                log_values: vec![0.0, 0.0],
            }),
        }];
        let graph = FactorGraph::build(vars, factors).unwrap();
        let model = ObjectiveModel::ground(&graph);
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![Marginal::Categorical {
                    logits: vec![0.0, 0.0],
                }],
            }],
        };
        assert_relative_eq!(
            bethe_entropy(&q, &model, &spec).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // Two-var tree, K=1: H = H[q_1] + H[q_2].
        let graph = pair_graph();
        let model = ObjectiveModel::ground(&graph);
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![
                SiteMarginals::Free {
                    components: vec![Marginal::Gaussian {
                        mean: 1.0,
                        log_std: 0.0,
                    }],
                },
                SiteMarginals::Free {
                    components: vec![Marginal::Gaussian {
                        mean: -2.0,
                        log_std: 0.3,
                    }],
                },
            ],
        };
        assert_relative_eq!(
            bethe_entropy(&q, &model, &spec).unwrap(),
            2.0 * half_log_2pie + 0.3,
            epsilon = 1e-9
        );
    }

    #[test]
    fn jensen_entropy_examples() {
        let spec = ObjectiveSpec::new(EntropyKind::Jensen);
        let self_overlap = 0.5 * (4.0 * std::f64::consts::PI).ln();
        let graph = single_var_graph(None);
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0)]);
        assert_relative_eq!(
            jensen_entropy(&q, &model, &spec).unwrap(),
            self_overlap,
            epsilon = 1e-12
        );
        // Uniform categorical, K=1: log 2.
        let vars = vec![VariableDecl::discrete("d", 2)];
        let graph = FactorGraph::build(vars, vec![]).unwrap();
        let model = ObjectiveModel::ground(&graph);
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![Marginal::Categorical {
                    logits: vec![0.0, 0.0],
                }],
            }],
        };
        assert_relative_eq!(
            jensen_entropy(&q, &model, &spec).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // Far-separated equal-weight pair: log 2 + self-overlap term.
        let graph = single_var_graph(None);
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0), (100.0, 0.0)]);
        assert_relative_eq!(
            jensen_entropy(&q, &model, &spec).unwrap(),
            std::f64::consts::LN_2 + self_overlap,
            epsilon = 1e-6
        );
    }

    #[test]
    fn free_energy_examples() {
        let half_log_2pie = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        // Degree-0 variable: F = -H[q_i].
        let graph = single_var_graph(None);
        let model = ObjectiveModel::ground(&graph);
        let q = gaussian_q(&[(0.0, 0.0)]);
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        assert_relative_eq!(
            free_energy(&q, &model, &spec).unwrap(),
            -half_log_2pie,
            epsilon = 1e-9
        );
        // Standard-normal unary factor, q = N(0,1).
        let graph = single_var_graph(Some(unary_quadratic(0.5)));
        let model = ObjectiveModel::ground(&graph);
        let log_z = (2.0 * std::f64::consts::PI).sqrt().ln();
        let fb = free_energy(&q, &model, &spec).unwrap();
        assert_relative_eq!(fb, 0.5 - half_log_2pie, epsilon = 1e-9);
        assert_relative_eq!(fb, -log_z, epsilon = 1e-9);
        let jspec = ObjectiveSpec::new(EntropyKind::Jensen);
        let fj = free_energy(&q, &model, &jspec).unwrap();
        assert_relative_eq!(
            fj,
            0.5 - 0.5 * (4.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-9
        );
        // Jensen gives a lower bound: -F_J <= log Z.
        assert!(-fj <= log_z + 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Hybrid model: one continuous site with a unary factor, one
        // 3-state discrete site with a non-uniform table, K=2.
        let vars = vec![
            VariableDecl::continuous("x", f64::NEG_INFINITY, f64::INFINITY),
            VariableDecl::discrete("d", 3),
        ];
        let factors = vec![
            crate::graph::FactorDecl {
                id: "fx".into(),
                scope: vec!["x".into()],
                potential: unary_quadratic(0.7),
            },
            crate::graph::FactorDecl {
                id: "fd".into(),
                scope: vec!["d".into()],
                potential: Potential::Table(TablePotential {
                    cardinalities: vec![3],
                    log_values: vec![0.1, -0.4, 0.6],
                }),
            },
        ];
        let graph = FactorGraph::build(vars, factors).unwrap();
        let model = ObjectiveModel::ground(&graph);
        let q = MixtureMeanField {
            weight_logits: vec![0.2, -0.1],
            sites: vec![
                SiteMarginals::Free {
                    components: vec![
                        Marginal::Gaussian {
                            mean: 0.5,
                            log_std: -0.2,
                        },
                        Marginal::Gaussian {
                            mean: -0.8,
                            log_std: 0.1,
                        },
                    ],
                },
                SiteMarginals::Free {
                    components: vec![
                        Marginal::Categorical {
                            logits: vec![0.3, 0.0, -0.2],
                        },
                        Marginal::Categorical {
                            logits: vec![-0.1, 0.4, 0.0],
                        },
                    ],
                },
            ],
        };
        for entropy in [EntropyKind::Bethe, EntropyKind::Jensen] {
            let spec = ObjectiveSpec::new(entropy);
            let layout = Layout::new(&model, q.k());
            let flat = q.pack(&layout);
            let (_, grad) = value_and_gradient(&flat, &layout, &model, &spec).unwrap();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[i] += h;
                minus[i] -= h;
                let fp = engine::free_energy_flat(&plus, &layout, &model, &spec).unwrap();
                let fm = engine::free_energy_flat(&minus, &layout, &model, &spec).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(1.0);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-4,
                    "{entropy:?} param {i}: ad {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn lifted_counts_scale_terms() {
        // A super factor with count 3 contributes exactly 3x the single term.
        let graph = single_var_graph(Some(unary_quadratic(1.0)));
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        let q = gaussian_q(&[(0.4, -0.1)]);
        let mut model = ObjectiveModel::ground(&graph);
        let e1 = energy(&q, &model, &spec).unwrap();
        model.factors[0].count = 3.0;
        let e3 = energy(&q, &model, &spec).unwrap();
        assert_relative_eq!(e3, 3.0 * e1, epsilon = 1e-10);
    }

    #[test]
    fn arity_limit_enforced() {
        let vars: Vec<VariableDecl> = (0..5)
            .map(|i| VariableDecl::discrete(format!("d{i}"), 2))
            .collect();
        let factors = vec![crate::graph::FactorDecl {
            id: "f".into(),
            scope: (0..5).map(|i| format!("d{i}")).collect(),
            potential: Potential::Table(TablePotential {
                cardinalities: vec![2; 5],
                log_values: vec![0.0; 32],
            }),
        }];
        let graph = FactorGraph::build(vars, factors).unwrap();
        let model = ObjectiveModel::ground(&graph);
        let q = MixtureMeanField::init(&model, 1, &mut rand::thread_rng());
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        assert!(matches!(
            free_energy(&q, &model, &spec),
            Err(Error::ArityLimit { arity: 5, limit: 4 })
        ));
    }

    #[test]
    fn clamped_site_is_fixed() {
        // Clamping x to N(2, 0.25) makes the energy use that distribution.
        let graph = single_var_graph(Some(unary_quadratic(1.0)));
        let model = ObjectiveModel::ground_with_clamps(
            &graph,
            &[(0, Clamp::Gaussian { mean: 2.0, var: 0.25 })],
        );
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Clamped {
                clamp: Clamp::Gaussian { mean: 2.0, var: 0.25 },
            }],
        };
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        // E[x^2] = mean^2 + var = 4.25.
        assert_relative_eq!(energy(&q, &model, &spec).unwrap(), 4.25, epsilon = 1e-9);
        let layout = Layout::new(&model, 1);
        assert_eq!(layout.len, 1); // only the weight logit remains
    }
}
