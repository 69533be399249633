//! Generic free-energy evaluation shared by the `f64` and autodiff paths.

use super::{Clamp, EntropyKind, Layout, MixtureMeanField, ObjectiveModel, ObjectiveSpec};
use super::{LOG_STD_MAX, LOG_STD_MIN};
use crate::autodiff::{logsumexp, Real};
use crate::error::{Error, Result};
use crate::graph::Domain;
use crate::potentials::SlotVal;
use crate::quadrature::QuadratureRule;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

enum SiteView<R> {
    Gauss {
        mu: Vec<R>,
        sigma: Vec<R>,
        inv_sigma: Vec<R>,
        log_sigma: Vec<R>,
    },
    Cat {
        logp: Vec<Vec<R>>,
    },
    ClampGauss {
        mean: f64,
        std: f64,
    },
    ClampState {
        state: usize,
    },
}

struct View<'m, R> {
    k: usize,
    logw: Vec<R>,
    w: Vec<R>,
    sites: Vec<SiteView<R>>,
    model: &'m ObjectiveModel,
    seed: R,
}

fn build_view<'m, R: Real>(flat: &[R], layout: &Layout, model: &'m ObjectiveModel) -> View<'m, R> {
    let seed = flat[0];
    let logits = &flat[..layout.k];
    let lse = logsumexp(logits);
    let logw: Vec<R> = logits.iter().map(|l| *l - lse).collect();
    let w: Vec<R> = logw.iter().map(|l| l.exp()).collect();
    let sites = model
        .sites
        .iter()
        .zip(&layout.entries)
        .map(|(site, entry)| match (entry, site.clamp) {
            (Some(e), _) => match site.domain {
                Domain::Continuous { .. } => {
                    let mut mu = Vec::with_capacity(layout.k);
                    let mut sigma = Vec::with_capacity(layout.k);
                    let mut inv_sigma = Vec::with_capacity(layout.k);
                    let mut log_sigma = Vec::with_capacity(layout.k);
                    for comp in 0..layout.k {
                        let base = e.offset + comp * e.per_comp;
                        let rho = flat[base + 1].clamp_c(LOG_STD_MIN, LOG_STD_MAX);
                        mu.push(flat[base]);
                        sigma.push(rho.exp());
                        inv_sigma.push((-rho).exp());
                        log_sigma.push(rho);
                    }
                    SiteView::Gauss {
                        mu,
                        sigma,
                        inv_sigma,
                        log_sigma,
                    }
                }
                Domain::Discrete { k: card } => {
                    let logp = (0..layout.k)
                        .map(|comp| {
                            let base = e.offset + comp * e.per_comp;
                            let logits = &flat[base..base + card];
                            let lse = logsumexp(logits);
                            logits.iter().map(|l| *l - lse).collect()
                        })
                        .collect();
                    SiteView::Cat { logp }
                }
            },
            (None, Some(Clamp::Gaussian { mean, var })) => SiteView::ClampGauss {
                mean,
                std: var.sqrt().max(1e-6),
            },
            (None, Some(Clamp::State { state })) => SiteView::ClampState { state },
            (None, None) => unreachable!("unclamped site missing from layout"),
        })
        .collect();
    View {
        k: layout.k,
        logw,
        w,
        sites,
        model,
        seed,
    }
}

impl<'m, R: Real> View<'m, R> {
    /// `log q_site^comp` at a slot value.
    fn site_log_density(&self, site: usize, comp: usize, x: &SlotVal<R>) -> R {
        match (&self.sites[site], x) {
            (
                SiteView::Gauss {
                    mu,
                    inv_sigma,
                    log_sigma,
                    ..
                },
                SlotVal::Real(x),
            ) => {
                let z = (*x - mu[comp]) * inv_sigma[comp];
                -z.sq().scale(0.5) - log_sigma[comp].shift(HALF_LN_2PI)
            }
            (SiteView::ClampGauss { mean, std }, SlotVal::Real(x)) => {
                let z = x.shift(-mean).scale(1.0 / std);
                -z.sq().scale(0.5) - self.seed.c(std.ln() + HALF_LN_2PI)
            }
            (SiteView::Cat { logp }, SlotVal::State(s)) => logp[comp][*s],
            (SiteView::ClampState { state }, SlotVal::State(s)) => {
                if s == state {
                    self.seed.c(0.0)
                } else {
                    self.seed.c(f64::NEG_INFINITY)
                }
            }
            _ => unreachable!("slot kind mismatch"),
        }
    }

    /// `log q_c` of the mixture clique marginal at a tensor point.
    fn clique_log_density(&self, scope: &[usize], xs: &[SlotVal<R>]) -> R {
        let terms: Vec<R> = (0..self.k)
            .map(|j| {
                let mut t = self.logw[j];
                for (pos, &site) in scope.iter().enumerate() {
                    t = t + self.site_log_density(site, j, &xs[pos]);
                }
                t
            })
            .collect();
        logsumexp(&terms)
    }

    /// Univariate mixture log density at a point of one site.
    fn site_mixture_log_density(&self, site: usize, x: &SlotVal<R>) -> R {
        let terms: Vec<R> = (0..self.k)
            .map(|j| self.logw[j] + self.site_log_density(site, j, x))
            .collect();
        logsumexp(&terms)
    }

    /// Integration points of one site under component `comp`:
    /// discrete states with log mass, or quadrature nodes with constant weight.
    fn points(&self, site: usize, comp: usize, rule: &QuadratureRule) -> Vec<(SlotVal<R>, PointW<R>)> {
        match &self.sites[site] {
            SiteView::Gauss { mu, sigma, .. } => rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &wq)| {
                    let x = mu[comp] + sigma[comp].scale(std::f64::consts::SQRT_2 * t);
                    (
                        SlotVal::Real(x),
                        PointW::Const(wq / std::f64::consts::PI.sqrt()),
                    )
                })
                .collect(),
            SiteView::ClampGauss { mean, std } => rule
                .gaussian_points(*mean, *std)
                .map(|(x, w)| (SlotVal::Real(self.seed.c(x)), PointW::Const(w)))
                .collect(),
            SiteView::Cat { logp } => (0..logp[comp].len())
                .map(|s| (SlotVal::State(s), PointW::LogProb(logp[comp][s])))
                .collect(),
            SiteView::ClampState { state } => vec![(SlotVal::State(*state), PointW::Const(1.0))],
        }
    }

    /// `sum_points weight * f(xs)` over the tensor grid of a clique under
    /// component `comp`.
    fn clique_sum(
        &self,
        comp: usize,
        scope: &[usize],
        rule: &QuadratureRule,
        f: &mut dyn FnMut(&[SlotVal<R>]) -> R,
    ) -> R {
        let per_pos: Vec<Vec<(SlotVal<R>, PointW<R>)>> = scope
            .iter()
            .map(|&site| self.points(site, comp, rule))
            .collect();
        let mut acc = self.seed.c(0.0);
        let mut xs: Vec<SlotVal<R>> = Vec::with_capacity(scope.len());
        self.clique_sum_rec(&per_pos, 0, 0.0, None, &mut xs, rule, f, &mut acc);
        acc
    }

    #[allow(clippy::too_many_arguments)]
    fn clique_sum_rec(
        &self,
        per_pos: &[Vec<(SlotVal<R>, PointW<R>)>],
        pos: usize,
        const_w: f64,
        logp: Option<R>,
        xs: &mut Vec<SlotVal<R>>,
        rule: &QuadratureRule,
        f: &mut dyn FnMut(&[SlotVal<R>]) -> R,
        acc: &mut R,
    ) {
        if pos == per_pos.len() {
            let fv = f(xs);
            let mut term = if const_w == 0.0 {
                fv
            } else {
                fv.scale(const_w.exp())
            };
            if let Some(lp) = logp {
                if lp.val() == f64::NEG_INFINITY {
                    return;
                }
                term = term * lp.exp();
            }
            *acc = *acc + term;
            return;
        }
        for (x, w) in &per_pos[pos] {
            let (cw, lp) = match w {
                PointW::Const(c) => (const_w + c.ln(), logp),
                PointW::LogProb(l) => (
                    const_w,
                    Some(match logp {
                        Some(acc_lp) => acc_lp + *l,
                        None => *l,
                    }),
                ),
            };
            xs.push(*x);
            self.clique_sum_rec(per_pos, pos + 1, cw, lp, xs, rule, f, acc);
            xs.pop();
        }
    }

    /// Clip a tensor point to the scope's domain bounds for potential
    /// evaluation; quadrature nodes of unbounded sites pass through.
    fn clip_for_potential(&self, scope: &[usize], xs: &[SlotVal<R>]) -> Vec<SlotVal<R>> {
        scope
            .iter()
            .zip(xs)
            .map(|(&site, x)| match (self.model.sites[site].domain, x) {
                (Domain::Continuous { lo, hi }, SlotVal::Real(r))
                    if lo.is_finite() || hi.is_finite() =>
                {
                    SlotVal::Real(r.clamp_c(lo, hi))
                }
                _ => *x,
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
enum PointW<R> {
    Const(f64),
    LogProb(R),
}

fn check_arity(model: &ObjectiveModel, spec: &ObjectiveSpec) -> Result<()> {
    for f in &model.factors {
        if f.scope.len() > spec.max_factor_arity {
            return Err(Error::ArityLimit {
                arity: f.scope.len(),
                limit: spec.max_factor_arity,
            });
        }
    }
    Ok(())
}

/// Energy: `-sum_c #(c) sum_k w_k E_k[log psi_c] - log_constant`.
fn energy_generic<R: Real>(view: &View<R>, rule: &QuadratureRule) -> R {
    let mut acc = view.seed.c(-view.model.log_constant);
    for term in &view.model.factors {
        for comp in 0..view.k {
            let e = view.clique_sum(comp, &term.scope, rule, &mut |xs| {
                let clipped = view.clip_for_potential(&term.scope, xs);
                term.potential.log_value_unchecked(&clipped, view.seed)
            });
            acc = acc - (view.w[comp] * e).scale(term.count);
        }
    }
    acc
}

/// Bethe entropy of the mixture.
fn bethe_entropy_generic<R: Real>(view: &View<R>, spec: &ObjectiveSpec, rule: &QuadratureRule) -> R {
    let log_delta = spec.delta.ln();
    let mut acc = view.seed.c(0.0);
    for term in &view.model.factors {
        for comp in 0..view.k {
            let e = view.clique_sum(comp, &term.scope, rule, &mut |xs| {
                view.clique_log_density(&term.scope, xs).floor_at(log_delta)
            });
            acc = acc - (view.w[comp] * e).scale(term.count);
        }
    }
    for (site_idx, site) in view.model.sites.iter().enumerate() {
        let coef = site.count * (1.0 - site.degree as f64);
        if coef == 0.0 {
            continue;
        }
        for comp in 0..view.k {
            let e = view.clique_sum(comp, &[site_idx], rule, &mut |xs| {
                view.site_mixture_log_density(site_idx, &xs[0])
                    .floor_at(log_delta)
            });
            acc = acc - (view.w[comp] * e).scale(coef);
        }
    }
    acc
}

/// Jensen entropy with closed-form overlaps; per-site overlaps are raised to
/// the site count (exponent in log space).
fn jensen_entropy_generic<R: Real>(view: &View<R>, spec: &ObjectiveSpec) -> R {
    let mut acc = view.seed.c(0.0);
    for k in 0..view.k {
        let inner: Vec<R> = (0..view.k)
            .map(|j| {
                let mut t = view.logw[j];
                for (site_idx, site) in view.model.sites.iter().enumerate() {
                    t = t + view
                        .log_overlap(site_idx, k, j, spec)
                        .scale(site.count);
                }
                t
            })
            .collect();
        acc = acc - view.w[k] * logsumexp(&inner);
    }
    acc
}

impl<'m, R: Real> View<'m, R> {
    /// `log <q_site^k, q_site^j>` in closed form.
    fn log_overlap(&self, site: usize, k: usize, j: usize, spec: &ObjectiveSpec) -> R {
        match &self.sites[site] {
            SiteView::Gauss { mu, sigma, .. } => {
                let v = sigma[k].sq() + sigma[j].sq();
                let diff = mu[k] - mu[j];
                -v.ln().scale(0.5).shift(HALF_LN_2PI) - diff.sq() / v.scale(2.0)
            }
            SiteView::ClampGauss { std, .. } => {
                let v = 2.0 * std * std;
                self.seed
                    .c(-0.5 * v.ln() - HALF_LN_2PI)
            }
            SiteView::Cat { logp } => {
                let mut s = self.seed.c(0.0);
                for (a, b) in logp[k].iter().zip(&logp[j]) {
                    s = s + (*a + *b).exp();
                }
                s.floor_at(spec.delta).ln()
            }
            SiteView::ClampState { .. } => self.seed.c(0.0),
        }
    }
}

pub(super) fn free_energy_generic<R: Real>(
    flat: &[R],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<R> {
    check_arity(model, spec)?;
    let rule = spec.rule();
    let view = build_view(flat, layout, model);
    let entropy = match spec.entropy {
        EntropyKind::Bethe => bethe_entropy_generic(&view, spec, &rule),
        EntropyKind::Jensen => jensen_entropy_generic(&view, spec),
    };
    Ok(energy_generic(&view, &rule) - entropy)
}

pub(super) fn free_energy_flat(
    flat: &[f64],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    free_energy_generic(flat, layout, model, spec)
}

pub(super) fn energy_flat(
    flat: &[f64],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    check_arity(model, spec)?;
    let rule = spec.rule();
    let view = build_view(flat, layout, model);
    Ok(energy_generic(&view, &rule))
}

pub(super) fn bethe_entropy_flat(
    flat: &[f64],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    check_arity(model, spec)?;
    let rule = spec.rule();
    let view = build_view(flat, layout, model);
    Ok(bethe_entropy_generic(&view, spec, &rule))
}

pub(super) fn jensen_entropy_flat(
    flat: &[f64],
    layout: &Layout,
    model: &ObjectiveModel,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    check_arity(model, spec)?;
    let view = build_view(flat, layout, model);
    Ok(jensen_entropy_generic(&view, spec))
}

/// Tensor-product expectation of an arbitrary integrand over the clique of
/// `model.factors[factor]` under mixture component `comp`.
pub fn clique_expectation(
    q: &MixtureMeanField,
    model: &ObjectiveModel,
    comp: usize,
    factor: usize,
    rule: &QuadratureRule,
    f: &dyn Fn(&[SlotVal<f64>]) -> f64,
) -> Result<f64> {
    let layout = Layout::new(model, q.k());
    let flat = q.pack(&layout);
    let view = build_view(flat.as_slice(), &layout, model);
    let scope = &model.factors[factor].scope;
    let mut bad = false;
    let out = view.clique_sum(comp, scope, rule, &mut |xs| {
        let v = f(xs);
        if v.is_nan() || v == f64::INFINITY {
            bad = true;
        }
        v
    });
    if bad {
        return Err(Error::NonFiniteIntegrand);
    }
    Ok(out)
}
