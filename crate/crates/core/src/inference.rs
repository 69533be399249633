//! Queries against a fitted variational distribution, and evaluation
//! metrics against exact references.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Value};
use crate::oracles::ExactMarginal;
use crate::potentials::SlotVal;
use crate::variational::{softmax, Clamp, Marginal, MixtureMeanField, SiteMarginals};
use crate::variational::{LOG_STD_MAX, LOG_STD_MIN};

fn comp_log_density(m: &Marginal, x: &Value) -> Result<f64> {
    match (m, x) {
        (Marginal::Gaussian { mean, log_std }, Value::Real(x)) => {
            let rho = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (x - mean) / rho.exp();
            Ok(-0.5 * z * z - rho - 0.5 * (2.0 * std::f64::consts::PI).ln())
        }
        (Marginal::Categorical { logits }, Value::State(s)) => {
            if *s >= logits.len() {
                return Err(Error::DomainMismatch(format!("state {s} out of range")));
            }
            let lse = {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
            };
            Ok(logits[*s] - lse)
        }
        _ => Err(Error::DomainMismatch("marginal/value kind mismatch".into())),
    }
}

fn clamp_log_density(c: &Clamp, x: &Value) -> Result<f64> {
    match (c, x) {
        (Clamp::Gaussian { mean, var }, Value::Real(x)) => {
            let std = var.sqrt().max(1e-6);
            let z = (x - mean) / std;
            Ok(-0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
        }
        (Clamp::State { state }, Value::State(s)) => Ok(if s == state {
            0.0
        } else {
            f64::NEG_INFINITY
        }),
        _ => Err(Error::DomainMismatch("clamp/value kind mismatch".into())),
    }
}

/// A product-form mixture over a subset of sites, produced by
/// [`query_marginal`].
#[derive(Debug, Clone)]
pub struct JointMarginal {
    pub weights: Vec<f64>,
    /// `(site index, marginals)` per queried site.
    pub sites: Vec<(usize, SiteMarginals)>,
}

impl JointMarginal {
    /// Joint density/mass at one value per queried site.
    pub fn density(&self, xs: &[Value]) -> Result<f64> {
        assert_eq!(xs.len(), self.sites.len());
        let mut total = 0.0;
        for (k, &wk) in self.weights.iter().enumerate() {
            let mut logp = 0.0;
            for ((_, site), x) in self.sites.iter().zip(xs) {
                logp += match site {
                    SiteMarginals::Free { components } => comp_log_density(&components[k], x)?,
                    SiteMarginals::Clamped { clamp } => clamp_log_density(clamp, x)?,
                };
            }
            total += wk * logp.exp();
        }
        Ok(total)
    }

    /// Draw one assignment (a value per queried site).
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<Value> {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        self.sites
            .iter()
            .map(|(_, site)| match site {
                SiteMarginals::Free { components } => match &components[comp] {
                    Marginal::Gaussian { mean, log_std } => {
                        let std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        Value::Real(mean + std * normal_draw(rng))
                    }
                    Marginal::Categorical { logits } => {
                        let p = softmax(logits);
                        let u: f64 = rng.gen_range(0.0..1.0);
                        let mut acc = 0.0;
                        let mut s = p.len() - 1;
                        for (i, pi) in p.iter().enumerate() {
                            acc += pi;
                            if u < acc {
                                s = i;
                                break;
                            }
                        }
                        Value::State(s)
                    }
                },
                SiteMarginals::Clamped { clamp } => match clamp {
                    Clamp::Gaussian { mean, var } => {
                        Value::Real(mean + var.sqrt() * normal_draw(rng))
                    }
                    Clamp::State { state } => Value::State(*state),
                },
            })
            .collect()
    }
}

fn normal_draw(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Restrict the fitted mixture to the queried sites.
pub fn query_marginal(q: &MixtureMeanField, sites: &[usize]) -> Result<JointMarginal> {
    let picked = sites
        .iter()
        .map(|&i| {
            q.sites
                .get(i)
                .cloned()
                .map(|s| (i, s))
                .ok_or_else(|| Error::UnknownVariable(format!("site index {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointMarginal {
        weights: q.weights(),
        sites: picked,
    })
}

const MAP_COORD_TOL: f64 = 1e-8;

/// MAP estimate over the queried sites by coordinate ascent on `log q*`,
/// multi-started from every component's means. Clamped sites contribute
/// their fixed value.
pub fn map_estimate(q: &MixtureMeanField, sites: &[usize]) -> Result<Vec<Value>> {
    let joint = query_marginal(q, sites)?;
    let k = q.k();
    let log_w: Vec<f64> = q.weights().iter().map(|w| w.ln()).collect();

    let start_for = |comp: usize| -> Vec<Value> {
        joint
            .sites
            .iter()
            .map(|(_, site)| match site {
                SiteMarginals::Free { components } => match &components[comp] {
                    Marginal::Gaussian { mean, .. } => Value::Real(*mean),
                    Marginal::Categorical { logits } => Value::State(argmax(logits)),
                },
                SiteMarginals::Clamped { clamp } => match clamp {
                    Clamp::Gaussian { mean, .. } => Value::Real(*mean),
                    Clamp::State { state } => Value::State(*state),
                },
            })
            .collect()
    };

    // log q at an assignment, tracked per component for coordinate updates.
    let comp_logs = |xs: &[Value]| -> Result<Vec<f64>> {
        (0..k)
            .map(|c| {
                let mut l = log_w[c];
                for ((_, site), x) in joint.sites.iter().zip(xs) {
                    l += match site {
                        SiteMarginals::Free { components } => comp_log_density(&components[c], x)?,
                        SiteMarginals::Clamped { clamp } => clamp_log_density(clamp, x)?,
                    };
                }
                Ok(l)
            })
            .collect()
    };
    let lse = |ls: &[f64]| {
        let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + ls.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
        }
    };

    let mut best: Option<(f64, Vec<Value>)> = None;
    for comp in 0..k {
        let mut xs = start_for(comp);
        let mut logs = comp_logs(&xs)?;
        for _sweep in 0..100 {
            let mut moved = false;
            for (pos, (_, site)) in joint.sites.iter().enumerate() {
                let SiteMarginals::Free { components } = site else { continue };
                // Component scores with this coordinate removed.
                let rest: Vec<f64> = (0..k)
                    .map(|c| logs[c] - comp_log_density(&components[c], &xs[pos]).unwrap())
                    .collect();
                match &components[0] {
                    Marginal::Categorical { logits } => {
                        let card = logits.len();
                        let (mut best_s, mut best_v) = (0, f64::NEG_INFINITY);
                        for s in 0..card {
                            let v = lse(&(0..k)
                                .map(|c| {
                                    rest[c]
                                        + comp_log_density(&components[c], &Value::State(s))
                                            .unwrap()
                                })
                                .collect::<Vec<_>>());
                            if v > best_v {
                                best_v = v;
                                best_s = s;
                            }
                        }
                        if xs[pos] != Value::State(best_s) {
                            xs[pos] = Value::State(best_s);
                            moved = true;
                        }
                    }
                    Marginal::Gaussian { .. } => {
                        let Value::Real(mut x) = xs[pos] else { unreachable!() };
                        let g = |x: f64| {
                            lse(&(0..k)
                                .map(|c| {
                                    rest[c]
                                        + comp_log_density(&components[c], &Value::Real(x))
                                            .unwrap()
                                })
                                .collect::<Vec<_>>())
                        };
                        let grad = |x: f64| {
                            // d/dx of the univariate mixture log-density.
                            let terms: Vec<f64> = (0..k)
                                .map(|c| {
                                    rest[c]
                                        + comp_log_density(&components[c], &Value::Real(x))
                                            .unwrap()
                                })
                                .collect();
                            let total = lse(&terms);
                            (0..k)
                                .map(|c| {
                                    let Marginal::Gaussian { mean, log_std } = &components[c]
                                    else {
                                        unreachable!()
                                    };
                                    let var = (2.0
                                        * log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))
                                    .exp();
                                    (terms[c] - total).exp() * (mean - x) / var
                                })
                                .sum::<f64>()
                        };
                        let sigma_max = components
                            .iter()
                            .map(|m| match m {
                                Marginal::Gaussian { log_std, .. } => {
                                    log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()
                                }
                                _ => unreachable!(),
                            })
                            .fold(0.0, f64::max);
                        let mut fx = g(x);
                        loop {
                            let d = grad(x);
                            if d == 0.0 {
                                break;
                            }
                            let dir = d.signum();
                            let mut step = 0.5 * sigma_max;
                            let mut accepted = false;
                            while step >= MAP_COORD_TOL {
                                let cand = x + dir * step;
                                let fc = g(cand);
                                if fc > fx {
                                    x = cand;
                                    fx = fc;
                                    accepted = true;
                                    moved = true;
                                    break;
                                }
                                step *= 0.5;
                            }
                            if !accepted {
                                break;
                            }
                        }
                        xs[pos] = Value::Real(x);
                    }
                }
                logs = comp_logs(&xs)?;
            }
            if !moved {
                break;
            }
        }
        let score = lse(&logs);
        let better = best.as_ref().map_or(true, |(b, _)| score > *b);
        if better {
            best = Some((score, xs));
        }
    }
    Ok(best.expect("at least one component").1)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

/// `-sum_c log psi_c(x)` plus recorded constants; `+inf` when any factor is
/// violated with probability zero.
pub fn energy_of_assignment(graph: &FactorGraph, xs: &[Value]) -> Result<f64> {
    assert_eq!(xs.len(), graph.variables().len());
    let mut total = -graph.log_constant();
    for fi in 0..graph.factors().len() {
        let slot_vals: Vec<SlotVal<f64>> = graph
            .scope_indices(fi)
            .iter()
            .map(|&v| match xs[v] {
                Value::State(s) => SlotVal::State(s),
                Value::Real(x) => SlotVal::Real(x),
            })
            .collect();
        total -= graph.factors()[fi].potential.log_value(&slot_vals)?;
    }
    Ok(total)
}

/// Reference univariate marginal for KL evaluation.
#[derive(Debug, Clone)]
pub enum RefMarginal {
    Gaussian { mean: f64, var: f64 },
    Discrete { probs: Vec<f64> },
    Grid { grid: Vec<f64>, density: Vec<f64> },
}

impl From<&ExactMarginal> for RefMarginal {
    fn from(m: &ExactMarginal) -> Self {
        match m {
            ExactMarginal::Discrete { probs } => RefMarginal::Discrete {
                probs: probs.clone(),
            },
            ExactMarginal::Continuous { grid, density, .. } => RefMarginal::Grid {
                grid: grid.clone(),
                density: density.clone(),
            },
        }
    }
}

const KL_GRID_POINTS: usize = 4096;
const KL_DELTA: f64 = 1e-300;

/// Mean of `D_KL(p_i || q_i)` over the given `(reference, site)` pairs.
/// Continuous cases integrate on a fixed grid over the reference's support;
/// the approximate density is floored to keep the integrand finite.
pub fn avg_univariate_kl(
    refs: &[(RefMarginal, usize)],
    q: &MixtureMeanField,
) -> Result<f64> {
    assert!(!refs.is_empty());
    let mut total = 0.0;
    for (r, site) in refs {
        total += match r {
            RefMarginal::Discrete { probs } => {
                let mut kl = 0.0;
                for (s, &p) in probs.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let qv = q.marginal_density(*site, &Value::State(s))?.max(KL_DELTA);
                    kl += p * (p / qv).ln();
                }
                kl
            }
            RefMarginal::Gaussian { mean, var } => {
                let std = var.sqrt();
                let (lo, hi) = (mean - 8.0 * std, mean + 8.0 * std);
                grid_kl(lo, hi, KL_GRID_POINTS, q, *site, |x| {
                    let z = (x - mean) / std;
                    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
                })?
            }
            RefMarginal::Grid { grid, density } => {
                if grid.len() < 2 {
                    return Err(Error::SupportMismatch("reference grid too small".into()));
                }
                let h = grid[1] - grid[0];
                let mut kl = 0.0;
                for (m, (&x, &p)) in grid.iter().zip(density).enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let w = if m == 0 || m == grid.len() - 1 { h / 2.0 } else { h };
                    let qv = q.marginal_density(*site, &Value::Real(x))?.max(KL_DELTA);
                    kl += w * p * (p / qv).ln();
                }
                kl
            }
        };
    }
    Ok(total / refs.len() as f64)
}

fn grid_kl(
    lo: f64,
    hi: f64,
    points: usize,
    q: &MixtureMeanField,
    site: usize,
    p: impl Fn(f64) -> f64,
) -> Result<f64> {
    let h = (hi - lo) / (points - 1) as f64;
    let mut kl = 0.0;
    for m in 0..points {
        let x = lo + h * m as f64;
        let pv = p(x);
        if pv <= 0.0 {
            continue;
        }
        let w = if m == 0 || m == points - 1 { h / 2.0 } else { h };
        let qv = q.marginal_density(site, &Value::Real(x))?.max(KL_DELTA);
        kl += w * pv * (pv / qv).ln();
    }
    Ok(kl)
}

/// Mean absolute error; discrete coordinates contribute 0/1 mismatch.
pub fn avg_l1_error(reference: &[Value], estimate: &[Value]) -> f64 {
    assert_eq!(reference.len(), estimate.len());
    if reference.is_empty() {
        return 0.0;
    }
    let total: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| match (r, e) {
            (Value::Real(a), Value::Real(b)) => (a - b).abs(),
            (Value::State(a), Value::State(b)) => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            _ => 1.0,
        })
        .sum();
    total / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FactorDecl, VariableDecl};
    use crate::potentials::{Potential, QuadraticPotential, TablePotential};
    use approx::assert_relative_eq;

    fn two_comp_two_site(w_logit: f64, mu: [[f64; 2]; 2]) -> MixtureMeanField {
        MixtureMeanField {
            weight_logits: vec![w_logit, 0.0],
            sites: (0..2)
                .map(|i| SiteMarginals::Free {
                    components: (0..2)
                        .map(|c| Marginal::Gaussian {
                            mean: mu[c][i],
                            log_std: 0.0,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_site_query_matches_marginal_density() {
        let q = two_comp_two_site(0.4, [[0.0, 1.0], [2.0, -1.0]]);
        let j = query_marginal(&q, &[0]).unwrap();
        for x in [-1.0, 0.3, 2.2] {
            assert_relative_eq!(
                j.density(&[Value::Real(x)]).unwrap(),
                q.marginal_density(0, &Value::Real(x)).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn empty_query_has_unit_density() {
        let q = two_comp_two_site(0.0, [[0.0, 0.0], [0.0, 0.0]]);
        let j = query_marginal(&q, &[]).unwrap();
        assert_relative_eq!(j.density(&[]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_density_hand_check() {
        let q = two_comp_two_site(0.0, [[0.0, 1.0], [2.0, -1.0]]);
        let j = query_marginal(&q, &[0, 1]).unwrap();
        let phi = |x: f64, m: f64| {
            (-0.5 * (x - m) * (x - m)).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let x = [0.3, -0.4];
        let expect = 0.5 * phi(x[0], 0.0) * phi(x[1], 1.0)
            + 0.5 * phi(x[0], 2.0) * phi(x[1], -1.0);
        assert_relative_eq!(
            j.density(&[Value::Real(x[0]), Value::Real(x[1])]).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn marginalization_consistency() {
        // Integrating the pair density over site 1 matches the single-site
        // density (mixture algebra), checked by quadrature.
        let q = two_comp_two_site(0.7, [[0.0, 1.0], [2.0, -1.0]]);
        let pair = query_marginal(&q, &[0, 1]).unwrap();
        let single = query_marginal(&q, &[0]).unwrap();
        for x0 in [-0.5, 0.9] {
            // Integrate over x1 on a wide dense grid covering both modes.
            let n = 20_001;
            let (lo, hi) = (-12.0, 12.0);
            let h = (hi - lo) / (n - 1) as f64;
            let mut total = 0.0;
            for m in 0..n {
                let x1 = lo + h * m as f64;
                let w = if m == 0 || m == n - 1 { h / 2.0 } else { h };
                total += w
                    * pair
                        .density(&[Value::Real(x0), Value::Real(x1)])
                        .unwrap();
            }
            assert_relative_eq!(
                total,
                single.density(&[Value::Real(x0)]).unwrap(),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn map_returns_means_for_k1() {
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![
                SiteMarginals::Free {
                    components: vec![Marginal::Gaussian {
                        mean: 1.5,
                        log_std: 0.2,
                    }],
                },
                SiteMarginals::Free {
                    components: vec![Marginal::Categorical {
                        logits: vec![0.1, 0.9, -0.3],
                    }],
                },
            ],
        };
        let xs = map_estimate(&q, &[0, 1]).unwrap();
        assert_eq!(xs[1], Value::State(1));
        match xs[0] {
            Value::Real(x) => assert_relative_eq!(x, 1.5, epsilon = 1e-6),
            _ => panic!(),
        }
    }

    #[test]
    fn map_picks_dominant_mode() {
        // Weights (0.9, 0.1) with well-separated means.
        let w_logit = (0.9f64 / 0.1).ln();
        let q = two_comp_two_site(w_logit, [[5.0, -5.0], [-5.0, 5.0]]);
        let xs = map_estimate(&q, &[0, 1]).unwrap();
        match (&xs[0], &xs[1]) {
            (Value::Real(a), Value::Real(b)) => {
                assert_relative_eq!(*a, 5.0, epsilon = 1e-4);
                assert_relative_eq!(*b, -5.0, epsilon = 1e-4);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn map_symmetric_mixture_finds_a_mode() {
        let q = MixtureMeanField {
            weight_logits: vec![0.0, 0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![
                    Marginal::Gaussian {
                        mean: -1.0,
                        log_std: 0.0,
                    },
                    Marginal::Gaussian {
                        mean: 1.0,
                        log_std: 0.0,
                    },
                ],
            }],
        };
        let xs = map_estimate(&q, &[0]).unwrap();
        let Value::Real(found) = xs[0] else { panic!() };
        let dens = |x: f64| q.marginal_density(0, &Value::Real(x)).unwrap();
        // No grid point beats the found mode.
        let best_grid = (0..4001)
            .map(|i| dens(-2.0 + i as f64 / 1000.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(dens(found) >= best_grid - 1e-9);
        assert!(dens(found) >= dens(0.0));
    }

    #[test]
    fn energy_examples() {
        let graph = crate::graph::FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![FactorDecl {
                id: "f".into(),
                scope: vec!["x".into()],
                potential: Potential::Quadratic(QuadraticPotential {
                    a: vec![vec![1.0]],
                    b: vec![0.0],
                    c: 0.0,
                }),
            }],
        )
        .unwrap();
        let e = energy_of_assignment(&graph, &[Value::Real(2.0)]).unwrap();
        assert_relative_eq!(e, 4.0, epsilon = 1e-12);

        let graph = crate::graph::FactorGraph::build(
            vec![VariableDecl::discrete("d", 2)],
            vec![FactorDecl {
                id: "f".into(),
                scope: vec!["d".into()],
                potential: Potential::Table(TablePotential {
                    cardinalities: vec![2],
                    log_values: vec![f64::NEG_INFINITY, 0.0],
                }),
            }],
        )
        .unwrap();
        let e = energy_of_assignment(&graph, &[Value::State(0)]).unwrap();
        assert_eq!(e, f64::INFINITY);
    }

    #[test]
    fn kl_zero_for_identical() {
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![Marginal::Gaussian {
                    mean: 0.3,
                    log_std: 0.0,
                }],
            }],
        };
        let refs = vec![(
            RefMarginal::Gaussian {
                mean: 0.3,
                var: 1.0,
            },
            0usize,
        )];
        let kl = avg_univariate_kl(&refs, &q).unwrap();
        assert!(kl.abs() < 1e-8, "{kl}");
    }

    #[test]
    fn kl_closed_form_gaussians() {
        // KL(N(0,1) || N(1,1)) = 1/2.
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![Marginal::Gaussian {
                    mean: 1.0,
                    log_std: 0.0,
                }],
            }],
        };
        let refs = vec![(
            RefMarginal::Gaussian {
                mean: 0.0,
                var: 1.0,
            },
            0usize,
        )];
        let kl = avg_univariate_kl(&refs, &q).unwrap();
        assert_relative_eq!(kl, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn kl_mixture_against_numeric_integral() {
        // p = equal mixture N(+-2, 1), q = N(0, 5).
        let q = MixtureMeanField {
            weight_logits: vec![0.0],
            sites: vec![SiteMarginals::Free {
                components: vec![Marginal::Gaussian {
                    mean: 0.0,
                    log_std: 0.5 * 5.0f64.ln(),
                }],
            }],
        };
        let phi = |x: f64, m: f64| {
            (-0.5 * (x - m) * (x - m)).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let p = |x: f64| 0.5 * phi(x, -2.0) + 0.5 * phi(x, 2.0);
        let n = 200_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / (n - 1) as f64;
        let mut expect = 0.0;
        for m in 0..n {
            let x = lo + h * m as f64;
            let pv = p(x);
            let qv = phi(x / 5.0f64.sqrt(), 0.0) / 5.0f64.sqrt();
            let w = if m == 0 || m == n - 1 { h / 2.0 } else { h };
            expect += w * pv * (pv / qv).ln();
        }
        // The reference marginal on a grid, as the oracle would provide it.
        let grid: Vec<f64> = (0..4096).map(|m| lo + (hi - lo) * m as f64 / 4095.0).collect();
        let density: Vec<f64> = grid.iter().map(|&x| p(x)).collect();
        let refs = vec![(RefMarginal::Grid { grid, density }, 0usize)];
        let kl = avg_univariate_kl(&refs, &q).unwrap();
        assert_relative_eq!(kl, expect, epsilon = 1e-4);
    }

    #[test]
    fn l1_examples() {
        let a = vec![Value::Real(0.0), Value::Real(0.0)];
        assert_eq!(avg_l1_error(&a, &a), 0.0);
        let b = vec![Value::Real(1.0), Value::Real(3.0)];
        assert_eq!(avg_l1_error(&a, &b), 2.0);
        let c = vec![Value::State(0), Value::State(1)];
        let d = vec![Value::State(0), Value::State(0)];
        assert_eq!(avg_l1_error(&c, &d), 0.5);
    }
}
