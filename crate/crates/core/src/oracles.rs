//! Independent ground truth at desk scale: exact Gaussian inference by
//! linear algebra, and brute-force enumeration/integration for small hybrid
//! models. Used to validate the variational pipeline.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{Domain, FactorGraph};
use crate::potentials::{Potential, SlotVal};

/// Exact posterior of a Gaussian model: mean, covariance, log partition.
#[derive(Debug, Clone)]
pub struct GaussianGroundTruth {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub log_z: f64,
}

/// Assemble the joint precision from Quadratic/LinearGaussian factors and
/// solve exactly. `log p(x) = -1/2 x'Jx + h'x + const`.
pub fn gaussian_exact(graph: &FactorGraph) -> Result<GaussianGroundTruth> {
    let d = graph.variables().len();
    for v in graph.variables() {
        if !matches!(v.domain, Domain::Continuous { .. }) {
            return Err(Error::NotGaussian(format!(
                "variable {} is discrete",
                v.id
            )));
        }
    }
    let mut j = DMatrix::<f64>::zeros(d, d);
    let mut h = DVector::<f64>::zeros(d);
    let mut constant = graph.log_constant();

    for fi in 0..graph.factors().len() {
        let scope = graph.scope_indices(fi);
        match &graph.factors()[fi].potential {
            Potential::Quadratic(q) => {
                // log psi = -x'Ax + b'x + c => J += A + A', h += b.
                for (p, &vp) in scope.iter().enumerate() {
                    for (r, &vr) in scope.iter().enumerate() {
                        j[(vp, vr)] += q.a[p][r] + q.a[r][p];
                    }
                    h[vp] += q.b[p];
                }
                constant += q.c;
            }
            Potential::LinearGaussian(lg) => {
                // log psi = -(x1 - a*x2 - m)^2 / var.
                let (v1, v2) = (scope[0], scope[1]);
                let s = 2.0 / lg.var;
                j[(v1, v1)] += s;
                j[(v2, v2)] += s * lg.a * lg.a;
                j[(v1, v2)] -= s * lg.a;
                j[(v2, v1)] -= s * lg.a;
                h[v1] += s * lg.m;
                h[v2] -= s * lg.a * lg.m;
                constant -= lg.m * lg.m / lg.var;
            }
            Potential::Constant { log_value } => constant += log_value,
            other => {
                return Err(Error::NotGaussian(format!(
                    "factor {} has non-Gaussian potential of arity {}",
                    graph.factors()[fi].id,
                    other.arity()
                )))
            }
        }
    }

    let chol = Cholesky::new(j.clone()).ok_or(Error::NotPositiveDefinite)?;
    let mean = chol.solve(&h);
    let covariance = chol.inverse();
    let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    let log_z = 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det + h.dot(&mean))
        + constant;
    Ok(GaussianGroundTruth {
        mean,
        covariance,
        log_z,
    })
}

/// Grid used per unbounded continuous dimension by the brute-force oracle.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 2001,
            lo: -30.0,
            hi: 30.0,
        }
    }
}

/// One exact univariate marginal from enumeration.
#[derive(Debug, Clone)]
pub enum ExactMarginal {
    Discrete {
        probs: Vec<f64>,
    },
    Continuous {
        grid: Vec<f64>,
        /// Normalized density at each grid point.
        density: Vec<f64>,
        mean: f64,
        variance: f64,
    },
}

#[derive(Debug, Clone)]
pub struct BruteForceTruth {
    /// One marginal per graph variable, in declaration order.
    pub marginals: Vec<ExactMarginal>,
    pub log_z: f64,
}

/// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    fn new() -> Self {
        LogAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

const MAX_DISCRETE_CONFIGS: u64 = 1 << 20;
const MAX_CONTINUOUS_DIMS: usize = 4;

/// Exact marginals and log partition by discrete enumeration combined with
/// dense trapezoid integration over the continuous dimensions.
///
/// Unbounded domains use the `grid` window; when any domain is unbounded the
/// run is repeated on a doubled window and must agree (mass convergence).
pub fn brute_force_hybrid(graph: &FactorGraph, grid: &GridSpec) -> Result<BruteForceTruth> {
    let has_unbounded = graph.variables().iter().any(|v| match v.domain {
        Domain::Continuous { lo, hi } => !(lo.is_finite() && hi.is_finite()),
        _ => false,
    });
    let truth = brute_force_window(graph, grid, 1.0)?;
    if has_unbounded {
        let wide = brute_force_window(graph, grid, 2.0)?;
        let rel = (truth.log_z - wide.log_z).abs() / (1.0 + truth.log_z.abs());
        if !(rel < 1e-3) {
            return Err(Error::NonIntegrable);
        }
    }
    Ok(truth)
}

fn brute_force_window(
    graph: &FactorGraph,
    grid: &GridSpec,
    widen: f64,
) -> Result<BruteForceTruth> {
    let n = graph.variables().len();
    let mut disc_vars = Vec::new();
    let mut cont_vars = Vec::new();
    for (i, v) in graph.variables().iter().enumerate() {
        match v.domain {
            Domain::Discrete { k } => disc_vars.push((i, k)),
            Domain::Continuous { lo, hi } => cont_vars.push((i, lo, hi)),
        }
    }
    let configs = disc_vars
        .iter()
        .try_fold(1u64, |acc, &(_, k)| acc.checked_mul(k as u64))
        .unwrap_or(u64::MAX);
    if configs > MAX_DISCRETE_CONFIGS {
        return Err(Error::TooLarge(format!(
            "{configs} discrete configurations (limit {MAX_DISCRETE_CONFIGS})"
        )));
    }
    if cont_vars.len() > MAX_CONTINUOUS_DIMS {
        return Err(Error::TooLarge(format!(
            "{} continuous dimensions (limit {MAX_CONTINUOUS_DIMS})",
            cont_vars.len()
        )));
    }

    // Per-continuous-dim grids with trapezoid log-weights.
    let grids: Vec<Vec<f64>> = cont_vars
        .iter()
        .map(|&(_, lo, hi)| {
            let (a, b) = if lo.is_finite() && hi.is_finite() {
                (lo, hi)
            } else {
                (grid.lo * widen, grid.hi * widen)
            };
            (0..grid.points)
                .map(|m| a + (b - a) * m as f64 / (grid.points - 1) as f64)
                .collect()
        })
        .collect();
    let log_w: Vec<Vec<f64>> = grids
        .iter()
        .map(|g| {
            let h = g[1] - g[0];
            (0..g.len())
                .map(|m| {
                    if m == 0 || m == g.len() - 1 {
                        (h / 2.0).ln()
                    } else {
                        h.ln()
                    }
                })
                .collect()
        })
        .collect();

    // Factor scopes as variable indices, for direct evaluation.
    let scopes: Vec<Vec<usize>> = (0..graph.factors().len())
        .map(|fi| graph.scope_indices(fi))
        .collect();

    let mut z = LogAcc::new();
    let mut disc_acc: Vec<Vec<LogAcc>> = disc_vars
        .iter()
        .map(|&(_, k)| vec![LogAcc::new(); k])
        .collect();
    let mut cont_acc: Vec<Vec<LogAcc>> = cont_vars
        .iter()
        .map(|_| vec![LogAcc::new(); grid.points])
        .collect();

    let mut assignment: Vec<SlotVal<f64>> = vec![SlotVal::State(0); n];
    let mut disc_idx = vec![0usize; disc_vars.len()];
    loop {
        for (pos, &(vi, _)) in disc_vars.iter().enumerate() {
            assignment[vi] = SlotVal::State(disc_idx[pos]);
        }
        // Tensor iteration over the continuous grid.
        let mut cont_idx = vec![0usize; cont_vars.len()];
        loop {
            let mut weight = 0.0;
            for (pos, &(vi, _, _)) in cont_vars.iter().enumerate() {
                assignment[vi] = SlotVal::Real(grids[pos][cont_idx[pos]]);
                weight += log_w[pos][cont_idx[pos]];
            }
            let mut log_f = graph.log_constant();
            for (fi, scope) in scopes.iter().enumerate() {
                let xs: Vec<SlotVal<f64>> = scope.iter().map(|&v| assignment[v]).collect();
                log_f += graph.factors()[fi].potential.log_value_unchecked(&xs, 0.0);
                if log_f == f64::NEG_INFINITY {
                    break;
                }
            }
            if log_f.is_nan() {
                return Err(Error::NonFiniteIntegrand);
            }
            let term = log_f + weight;
            z.add(term);
            for (pos, &s) in disc_idx.iter().enumerate() {
                disc_acc[pos][s].add(term);
            }
            for (pos, &m) in cont_idx.iter().enumerate() {
                // Density at the point: drop this dim's own cell weight.
                cont_acc[pos][m].add(term - log_w[pos][m]);
            }
            // Advance the continuous odometer.
            let mut p = 0;
            loop {
                if p == cont_vars.len() {
                    break;
                }
                cont_idx[p] += 1;
                if cont_idx[p] < grid.points {
                    break;
                }
                cont_idx[p] = 0;
                p += 1;
            }
            if p == cont_vars.len() {
                break;
            }
        }
        // Advance the discrete odometer.
        let mut p = 0;
        loop {
            if p == disc_vars.len() {
                break;
            }
            disc_idx[p] += 1;
            if disc_idx[p] < disc_vars[p].1 {
                break;
            }
            disc_idx[p] = 0;
            p += 1;
        }
        if p == disc_vars.len() {
            break;
        }
    }

    let log_z = z.value();
    if log_z == f64::NEG_INFINITY || !log_z.is_finite() {
        return Err(Error::NonIntegrable);
    }

    let mut marginals: Vec<Option<ExactMarginal>> = vec![None; n];
    for (pos, &(vi, k)) in disc_vars.iter().enumerate() {
        let probs: Vec<f64> = (0..k)
            .map(|s| (disc_acc[pos][s].value() - log_z).exp())
            .collect();
        marginals[vi] = Some(ExactMarginal::Discrete { probs });
    }
    for (pos, &(vi, _, _)) in cont_vars.iter().enumerate() {
        let g = grids[pos].clone();
        let density: Vec<f64> = (0..grid.points)
            .map(|m| (cont_acc[pos][m].value() - log_z).exp())
            .collect();
        // Moments by the same trapezoid weights.
        let mut mass = 0.0;
        let mut mean = 0.0;
        for m in 0..grid.points {
            let w = log_w[pos][m].exp() * density[m];
            mass += w;
            mean += w * g[m];
        }
        mean /= mass;
        let mut variance = 0.0;
        for m in 0..grid.points {
            let w = log_w[pos][m].exp() * density[m];
            variance += w * (g[m] - mean) * (g[m] - mean);
        }
        variance /= mass;
        marginals[vi] = Some(ExactMarginal::Continuous {
            grid: g,
            density,
            mean,
            variance,
        });
    }

    Ok(BruteForceTruth {
        marginals: marginals.into_iter().map(Option::unwrap).collect(),
        log_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FactorDecl, VariableDecl};
    use crate::potentials::{LinearGaussianPotential, QuadraticPotential, TablePotential};
    use approx::assert_relative_eq;

    fn quad(scope: Vec<&str>, a: Vec<Vec<f64>>) -> FactorDecl {
        let b = vec![0.0; a.len()];
        FactorDecl {
            id: format!("q{}", scope.join("_")),
            scope: scope.into_iter().map(String::from).collect(),
            potential: Potential::Quadratic(QuadraticPotential { a, b, c: 0.0 }),
        }
    }

    #[test]
    fn standard_normal_exact() {
        let graph = FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![quad(vec!["x"], vec![vec![0.5]])],
        )
        .unwrap();
        let t = gaussian_exact(&graph).unwrap();
        assert_relative_eq!(t.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.covariance[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            t.log_z,
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn two_var_chain_covariance() {
        // log p ~ -x1^2/2 - (x2 - x1)^2/2; precision [[2,-1],[-1,1]].
        let graph = FactorGraph::build(
            vec![
                VariableDecl::continuous("x1", f64::NEG_INFINITY, f64::INFINITY),
                VariableDecl::continuous("x2", f64::NEG_INFINITY, f64::INFINITY),
            ],
            vec![
                quad(vec!["x1"], vec![vec![0.5]]),
                quad(
                    vec!["x1", "x2"],
                    vec![vec![0.5, -0.5], vec![-0.5, 0.5]],
                ),
            ],
        )
        .unwrap();
        let t = gaussian_exact(&graph).unwrap();
        assert_relative_eq!(t.covariance[(1, 1)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.covariance[(0, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.covariance[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_precision_rejected() {
        let graph = FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![quad(vec!["x"], vec![vec![-1.0]])],
        )
        .unwrap();
        assert!(matches!(
            gaussian_exact(&graph),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn discrete_variable_rejected() {
        let graph =
            FactorGraph::build(vec![VariableDecl::discrete("d", 2)], vec![]).unwrap();
        assert!(matches!(gaussian_exact(&graph), Err(Error::NotGaussian(_))));
    }

    #[test]
    fn discrete_enumeration_matches_table() {
        let table = TablePotential {
            cardinalities: vec![2, 2],
            log_values: vec![0.0, 1.0, -0.5, 0.3],
        };
        let graph = FactorGraph::build(
            vec![VariableDecl::discrete("a", 2), VariableDecl::discrete("b", 2)],
            vec![FactorDecl {
                id: "f".into(),
                scope: vec!["a".into(), "b".into()],
                potential: Potential::Table(table.clone()),
            }],
        )
        .unwrap();
        let t = brute_force_hybrid(&graph, &GridSpec::default()).unwrap();
        let w: Vec<f64> = table.log_values.iter().map(|v| v.exp()).collect();
        let z: f64 = w.iter().sum();
        assert_relative_eq!(t.log_z, z.ln(), epsilon = 1e-12);
        // Row-major layout: index = a * 2 + b.
        match &t.marginals[0] {
            ExactMarginal::Discrete { probs } => {
                assert_relative_eq!(probs[0], (w[0] + w[1]) / z, epsilon = 1e-12);
                assert_relative_eq!(probs[1], (w[2] + w[3]) / z, epsilon = 1e-12);
            }
            _ => panic!("expected discrete marginal"),
        }
    }

    #[test]
    fn single_gaussian_marginal() {
        let graph = FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![quad(vec!["x"], vec![vec![0.5]])],
        )
        .unwrap();
        let t = brute_force_hybrid(&graph, &GridSpec::default()).unwrap();
        assert_relative_eq!(t.log_z, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-6);
        match &t.marginals[0] {
            ExactMarginal::Continuous { mean, variance, grid, density } => {
                assert_relative_eq!(*mean, 0.0, epsilon = 1e-6);
                assert_relative_eq!(*variance, 1.0, epsilon = 1e-6);
                let mid = grid.len() / 2;
                assert_relative_eq!(density[mid], 0.3989422804014327, epsilon = 1e-6);
            }
            _ => panic!("expected continuous marginal"),
        }
    }

    #[test]
    fn oracles_agree_on_gaussian_chain() {
        // Includes a LinearGaussian factor with offset and slope to exercise
        // the precision expansion.
        let graph = FactorGraph::build(
            vec![
                VariableDecl::continuous("x1", f64::NEG_INFINITY, f64::INFINITY),
                VariableDecl::continuous("x2", f64::NEG_INFINITY, f64::INFINITY),
            ],
            vec![
                quad(vec!["x1"], vec![vec![0.5]]),
                quad(vec!["x2"], vec![vec![0.1]]),
                FactorDecl {
                    id: "lg".into(),
                    scope: vec!["x2".into(), "x1".into()],
                    potential: Potential::LinearGaussian(LinearGaussianPotential {
                        a: 0.7,
                        m: 0.3,
                        var: 1.5,
                    }),
                },
            ],
        )
        .unwrap();
        let exact = gaussian_exact(&graph).unwrap();
        let bf = brute_force_hybrid(&graph, &GridSpec::default()).unwrap();
        assert_relative_eq!(exact.log_z, bf.log_z, epsilon = 1e-4);
        for i in 0..2 {
            match &bf.marginals[i] {
                ExactMarginal::Continuous { mean, variance, .. } => {
                    assert_relative_eq!(*mean, exact.mean[i], epsilon = 1e-4);
                    assert_relative_eq!(*variance, exact.covariance[(i, i)], epsilon = 1e-4);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn too_large_limits() {
        let vars: Vec<VariableDecl> = (0..21)
            .map(|i| VariableDecl::discrete(format!("d{i}"), 2))
            .collect();
        let graph = FactorGraph::build(vars, vec![]).unwrap();
        assert!(matches!(
            brute_force_hybrid(&graph, &GridSpec::default()),
            Err(Error::TooLarge(_))
        ));
        let vars: Vec<VariableDecl> = (0..5)
            .map(|i| VariableDecl::continuous(format!("x{i}"), -1.0, 1.0))
            .collect();
        let graph = FactorGraph::build(vars, vec![]).unwrap();
        assert!(matches!(
            brute_force_hybrid(&graph, &GridSpec::default()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn non_integrable_detected() {
        // Flat density over the whole line: mass grows with the window.
        let graph = FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            brute_force_hybrid(&graph, &GridSpec::default()),
            Err(Error::NonIntegrable)
        ));
    }
}
