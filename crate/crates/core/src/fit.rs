//! End-to-end fitting: conditioning, optional compression, optimization,
//! and the coarse-to-fine refinement loop.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Evidence, FactorGraph, Value};
use crate::lifting::{
    color_passing, init_colors, resume_color_passing, Coloring, CompressedGraph,
    EvidenceClustering,
};
use crate::optimizer::{
    minimize, multi_start, AdamState, MinimizeConfig, MinimizeResult, RunTrace,
};
use crate::variational::{
    value_and_gradient, Clamp, EntropyKind, Layout, MixtureMeanField, ObjectiveModel,
    ObjectiveSpec,
};

/// How the objective is structured before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ground,
    Lifted,
    CoarseToFine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub entropy: EntropyKind,
    pub mode: Mode,
    pub k: usize,
    pub quad_order: usize,
    pub delta: f64,
    pub minimize: MinimizeConfig,
    pub n_starts: usize,
    /// Optimizer iterations per coarse-to-fine stage.
    pub stage_iters: u64,
    /// Cluster-variance threshold; `None` derives `epsilon_frac * range^2`.
    pub epsilon: Option<f64>,
    pub epsilon_frac: f64,
    /// Initial evidence-cluster count.
    pub initial_clusters: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(entropy: EntropyKind, mode: Mode, k: usize) -> Self {
        FitConfig {
            entropy,
            mode,
            k,
            quad_order: 8,
            delta: 1e-300,
            minimize: MinimizeConfig::default(),
            n_starts: 1,
            stage_iters: 50,
            epsilon: None,
            epsilon_frac: 0.05,
            initial_clusters: 1,
            seed: 0,
        }
    }

    fn spec(&self) -> ObjectiveSpec {
        let mut spec = ObjectiveSpec::new(self.entropy);
        spec.quad_order = self.quad_order;
        spec.delta = self.delta;
        spec
    }
}

/// Derive an independent seed stream from the master seed.
pub fn substream(master: u64, tag: u64) -> u64 {
    master
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub const STREAM_GENERATION: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_OPTIMIZER: u64 = 3;

/// Compression and refinement summary of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftReport {
    pub mode: Mode,
    pub ground_variables: usize,
    pub ground_factors: usize,
    pub super_variables: usize,
    pub super_factors: usize,
    pub compression_ratio: f64,
    pub cp_rounds: usize,
    pub stages: usize,
    pub split_events: usize,
    pub final_clusters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// The graph the fitted distribution is defined over (evidence absorbed).
    pub graph: FactorGraph,
    pub q: MixtureMeanField,
    pub objective: f64,
    pub trace: RunTrace,
    pub report: LiftReport,
}

/// Copy each super site's marginals onto every ground member.
pub fn expand_to_ground(q: &MixtureMeanField, cg: &CompressedGraph) -> MixtureMeanField {
    let map = cg.variable_map();
    MixtureMeanField {
        weight_logits: q.weight_logits.clone(),
        sites: map.iter().map(|&sv| q.sites[sv].clone()).collect(),
    }
}

fn optimize_model(
    model: &ObjectiveModel,
    config: &FitConfig,
    minimize_cfg: &MinimizeConfig,
) -> Result<(MixtureMeanField, MinimizeResult, Layout)> {
    let spec = config.spec();
    let layout = Layout::new(model, config.k);
    let objective = |flat: &[f64]| value_and_gradient(flat, &layout, model, &spec);
    let init_seed = substream(config.seed, STREAM_INIT);
    let result = multi_start(
        objective,
        |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            MixtureMeanField::init(model, config.k, &mut rng).pack(&layout)
        },
        config.n_starts,
        init_seed,
        minimize_cfg,
    )?;
    let q = MixtureMeanField::unpack(&layout, model, &result.params);
    Ok((q, result, layout))
}

pub fn fit(graph: &FactorGraph, evidence: &Evidence, config: &FitConfig) -> Result<FitResult> {
    match config.mode {
        Mode::Ground => fit_ground(graph, evidence, config),
        Mode::Lifted => fit_lifted(graph, evidence, config),
        Mode::CoarseToFine => fit_c2f(graph, evidence, config),
    }
}

fn fit_ground(graph: &FactorGraph, evidence: &Evidence, config: &FitConfig) -> Result<FitResult> {
    let g = graph.condition(evidence)?;
    let model = ObjectiveModel::ground(&g);
    let (q, result, _) = optimize_model(&model, config, &config.minimize)?;
    let report = LiftReport {
        mode: Mode::Ground,
        ground_variables: g.variables().len(),
        ground_factors: g.factors().len(),
        super_variables: g.variables().len(),
        super_factors: g.factors().len(),
        compression_ratio: 1.0,
        cp_rounds: 0,
        stages: 1,
        split_events: 0,
        final_clusters: 0,
    };
    Ok(FitResult {
        graph: g,
        q,
        objective: result.objective,
        trace: result.trace,
        report,
    })
}

fn fit_lifted(graph: &FactorGraph, evidence: &Evidence, config: &FitConfig) -> Result<FitResult> {
    let g = graph.condition(evidence)?;
    let init = init_colors(&g, &Evidence::new(), None)?;
    let (coloring, cg) = color_passing(&g, &init, usize::MAX);
    let clamps = vec![None; cg.super_variables.len()];
    let model = ObjectiveModel::lifted(&cg, &g, &clamps);
    let (q, result, _) = optimize_model(&model, config, &config.minimize)?;
    let report = LiftReport {
        mode: Mode::Lifted,
        ground_variables: g.variables().len(),
        ground_factors: g.factors().len(),
        super_variables: cg.super_variables.len(),
        super_factors: cg.super_factors.len(),
        compression_ratio: cg.compression_ratio(),
        cp_rounds: coloring.round,
        stages: 1,
        split_events: 0,
        final_clusters: 0,
    };
    Ok(FitResult {
        graph: g,
        q: expand_to_ground(&q, &cg),
        objective: result.objective,
        trace: result.trace,
        report,
    })
}

/// Split evidence into discrete and continuous parts.
fn partition_evidence(graph: &FactorGraph, evidence: &Evidence) -> Result<(Evidence, Evidence)> {
    // Validate and coerce against declared domains first.
    graph.evidence_by_index(evidence)?;
    let mut discrete = Evidence::new();
    let mut continuous = Evidence::new();
    for (id, v) in &evidence.entries {
        match v {
            Value::State(_) => discrete.set(id.clone(), *v),
            Value::Real(_) => continuous.set(id.clone(), *v),
        }
    }
    Ok((discrete, continuous))
}

fn cluster_threshold(g: &FactorGraph, observed: &BTreeMap<usize, f64>, config: &FitConfig) -> f64 {
    if let Some(eps) = config.epsilon {
        return eps;
    }
    let mut range: f64 = 0.0;
    for &i in observed.keys() {
        if let crate::graph::Domain::Continuous { lo, hi } = g.variables()[i].domain {
            if lo.is_finite() && hi.is_finite() {
                range = range.max(hi - lo);
                continue;
            }
        }
        let lo = observed.values().cloned().fold(f64::INFINITY, f64::min);
        let hi = observed.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        range = range.max(hi - lo);
    }
    if range == 0.0 {
        range = 1.0;
    }
    config.epsilon_frac * range * range
}

fn cluster_clamps(cg: &CompressedGraph, clustering: &EvidenceClustering) -> Vec<Option<Clamp>> {
    let mut cluster_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (ci, c) in clustering.clusters.iter().enumerate() {
        for &m in &c.members {
            cluster_of.insert(m, ci);
        }
    }
    cg.super_variables
        .iter()
        .map(|sv| {
            cluster_of.get(&sv.members[0]).map(|&ci| {
                let c = &clustering.clusters[ci];
                Clamp::Gaussian {
                    mean: c.mean,
                    var: c.variance,
                }
            })
        })
        .collect()
}

/// Transfer packed parameters from a parent compression level onto a refined
/// one: every refined super site inherits its parent's slice.
fn inherit_flat(
    old_flat: &[f64],
    old_layout: &Layout,
    old_coloring: &Coloring,
    new_layout: &Layout,
    new_cg: &CompressedGraph,
) -> Vec<f64> {
    let mut flat = vec![0.0; new_layout.len];
    flat[..new_layout.k].copy_from_slice(&old_flat[..old_layout.k]);
    for (site, entry) in new_layout.entries.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let parent = old_coloring.variable_colors[new_cg.super_variables[site].members[0]];
        let old = old_layout.entries[parent].expect("free child of clamped parent");
        let n = entry.per_comp * new_layout.k;
        flat[entry.offset..entry.offset + n]
            .copy_from_slice(&old_flat[old.offset..old.offset + n]);
    }
    flat
}

/// Transfer Adam moments the same way parameters are inherited.
fn inherit_adam(
    old: &AdamState,
    old_layout: &Layout,
    old_coloring: &Coloring,
    new_layout: &Layout,
    new_cg: &CompressedGraph,
) -> AdamState {
    let mut adam = AdamState {
        t: old.t,
        m: vec![0.0; new_layout.len],
        v: vec![0.0; new_layout.len],
        lr: old.lr,
        beta1: old.beta1,
        beta2: old.beta2,
        eps: old.eps,
    };
    adam.m[..new_layout.k].copy_from_slice(&old.m[..old_layout.k]);
    adam.v[..new_layout.k].copy_from_slice(&old.v[..old_layout.k]);
    for (site, entry) in new_layout.entries.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let parent = old_coloring.variable_colors[new_cg.super_variables[site].members[0]];
        let old_entry = old_layout.entries[parent].expect("free child of clamped parent");
        let n = entry.per_comp * new_layout.k;
        adam.m[entry.offset..entry.offset + n]
            .copy_from_slice(&old.m[old_entry.offset..old_entry.offset + n]);
        adam.v[entry.offset..entry.offset + n]
            .copy_from_slice(&old.v[old_entry.offset..old_entry.offset + n]);
    }
    adam
}

fn fit_c2f(graph: &FactorGraph, evidence: &Evidence, config: &FitConfig) -> Result<FitResult> {
    let (discrete_ev, cont_ev) = partition_evidence(graph, evidence)?;
    let g = graph.condition(&discrete_ev)?;
    let observed: BTreeMap<usize, f64> = g
        .evidence_by_index(&cont_ev)?
        .into_iter()
        .map(|(i, v)| match v {
            Value::Real(x) => (i, x),
            Value::State(_) => unreachable!("discrete evidence already absorbed"),
        })
        .collect();
    if observed.is_empty() {
        // Nothing to refine: the coarse-to-fine path degenerates to lifted.
        let mut result = fit_lifted(graph, evidence, config)?;
        result.report.mode = Mode::CoarseToFine;
        return Ok(result);
    }

    let spec = config.spec();
    let eps = cluster_threshold(&g, &observed, config);
    let cluster_seed = substream(config.seed, STREAM_GENERATION);
    let mut clustering =
        EvidenceClustering::build(&g, &cont_ev, config.initial_clusters, eps, cluster_seed)?;
    let init = init_colors(&g, &cont_ev, Some(&clustering))?;
    let (mut coloring, mut cg) = color_passing(&g, &init, usize::MAX);

    let stage_cfg = MinimizeConfig {
        max_iters: config.stage_iters,
        ..config.minimize
    };

    // Stage 0: multi-started on the coarsest structure.
    let mut model = ObjectiveModel::lifted(&cg, &g, &cluster_clamps(&cg, &clustering));
    let mut layout = Layout::new(&model, config.k);
    let first = {
        let objective = |flat: &[f64]| value_and_gradient(flat, &layout, &model, &spec);
        multi_start(
            objective,
            |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                MixtureMeanField::init(&model, config.k, &mut rng).pack(&layout)
            },
            config.n_starts,
            substream(config.seed, STREAM_INIT),
            &stage_cfg,
        )?
    };
    let mut flat = first.params;
    let mut adam = first.adam;
    let mut trace = first.trace;
    let mut stages = 1usize;
    let mut split_events = 0usize;

    loop {
        let over = clustering.over_threshold();
        if over.is_empty() {
            break;
        }
        for (step, idx) in over.iter().enumerate() {
            clustering.split(*idx, &observed, substream(cluster_seed, stages as u64 * 131 + step as u64))?;
        }
        split_events += over.len();

        // Recolor every clustered variable; marks are dense over
        // (cluster, previous color) so refinement is preserved.
        let mut marks: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut recolored = Vec::new();
        for (ci, c) in clustering.clusters.iter().enumerate() {
            for &v in &c.members {
                let key = (ci, coloring.variable_colors[v]);
                let next = marks.len();
                let mark = *marks.entry(key).or_insert(next);
                recolored.push((v, mark));
            }
        }
        let (new_coloring, new_cg) = resume_color_passing(&g, &coloring, &recolored)?;
        let new_model = ObjectiveModel::lifted(&new_cg, &g, &cluster_clamps(&new_cg, &clustering));
        let new_layout = Layout::new(&new_model, config.k);
        flat = inherit_flat(&flat, &layout, &coloring, &new_layout, &new_cg);
        adam = inherit_adam(&adam, &layout, &coloring, &new_layout, &new_cg);
        coloring = new_coloring;
        cg = new_cg;
        model = new_model;
        layout = new_layout;

        let result = {
            let objective = |f: &[f64]| value_and_gradient(f, &layout, &model, &spec);
            minimize(objective, &flat, &stage_cfg, Some(adam))?
        };
        let mark = trace.records.len();
        trace.extend_shifted(&result.trace);
        if let Some(rec) = trace.records.get_mut(mark) {
            rec.event = format!("split:{}", clustering.clusters.len());
        }
        flat = result.params;
        adam = result.adam;
        stages += 1;
    }

    // Final stage: absorb the exact evidence values and polish at ground
    // level until full convergence.
    let q_lifted = MixtureMeanField::unpack(&layout, &model, &flat);
    let q_ground_all = expand_to_ground(&q_lifted, &cg);
    let g2 = g.condition(&cont_ev)?;
    let keep: Vec<usize> = (0..g.variables().len())
        .filter(|i| !observed.contains_key(i))
        .collect();
    let model2 = ObjectiveModel::ground(&g2);
    let layout2 = Layout::new(&model2, config.k);
    let q_init = MixtureMeanField {
        weight_logits: q_lifted.weight_logits.clone(),
        sites: keep.iter().map(|&i| q_ground_all.sites[i].clone()).collect(),
    };
    let flat2 = q_init.pack(&layout2);
    let mut adam2 = AdamState {
        t: adam.t,
        m: vec![0.0; layout2.len],
        v: vec![0.0; layout2.len],
        lr: adam.lr,
        beta1: adam.beta1,
        beta2: adam.beta2,
        eps: adam.eps,
    };
    adam2.m[..config.k].copy_from_slice(&adam.m[..config.k]);
    adam2.v[..config.k].copy_from_slice(&adam.v[..config.k]);
    for (pos, entry) in layout2.entries.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let sv = coloring.variable_colors[keep[pos]];
        let old_entry = layout.entries[sv].expect("unobserved site must be free");
        let n = entry.per_comp * config.k;
        adam2.m[entry.offset..entry.offset + n]
            .copy_from_slice(&adam.m[old_entry.offset..old_entry.offset + n]);
        adam2.v[entry.offset..entry.offset + n]
            .copy_from_slice(&adam.v[old_entry.offset..old_entry.offset + n]);
    }
    let result = {
        let objective = |f: &[f64]| value_and_gradient(f, &layout2, &model2, &spec);
        minimize(objective, &flat2, &config.minimize, Some(adam2))?
    };
    let mark = trace.records.len();
    trace.extend_shifted(&result.trace);
    if let Some(rec) = trace.records.get_mut(mark) {
        rec.event = "absorb".into();
    }
    stages += 1;

    let q = MixtureMeanField::unpack(&layout2, &model2, &result.params);
    let report = LiftReport {
        mode: Mode::CoarseToFine,
        ground_variables: g.variables().len(),
        ground_factors: g.factors().len(),
        super_variables: cg.super_variables.len(),
        super_factors: cg.super_factors.len(),
        compression_ratio: cg.compression_ratio(),
        cp_rounds: coloring.round,
        stages,
        split_events,
        final_clusters: clustering.clusters.len(),
    };
    Ok(FitResult {
        graph: g2,
        q,
        objective: result.objective,
        trace,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FactorDecl, VariableDecl};
    use crate::potentials::{Potential, QuadraticPotential};
    use crate::variational::{free_energy, Marginal, SiteMarginals};
    use approx::assert_relative_eq;

    fn unary_precision(id: &str, var: &str, half_precision: f64) -> FactorDecl {
        FactorDecl {
            id: id.into(),
            scope: vec![var.into()],
            potential: Potential::Quadratic(QuadraticPotential {
                a: vec![vec![half_precision]],
                b: vec![0.0],
                c: 0.0,
            }),
        }
    }

    fn star(n: usize) -> FactorGraph {
        let mut vars = vec![VariableDecl::continuous(
            "hub",
            f64::NEG_INFINITY,
            f64::INFINITY,
        )];
        let mut factors = vec![unary_precision("prior", "hub", 0.5)];
        for i in 0..n {
            let leaf = format!("leaf{i}");
            vars.push(VariableDecl::continuous(
                &leaf,
                f64::NEG_INFINITY,
                f64::INFINITY,
            ));
            factors.push(FactorDecl {
                id: format!("edge{i}"),
                scope: vec![leaf.clone(), "hub".into()],
                potential: Potential::linear_gaussian(1.0, 0.0, 2.0),
            });
        }
        FactorGraph::build(vars, factors).unwrap()
    }

    #[test]
    fn ground_fit_single_gaussian_is_exact() {
        // psi(x) = exp(-x^2): posterior N(0, 1/2), log Z = (ln 2pi - ln 2)/2.
        let g = FactorGraph::build(
            vec![VariableDecl::continuous(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
            )],
            vec![unary_precision("f", "x", 1.0)],
        )
        .unwrap();
        let config = FitConfig::new(EntropyKind::Bethe, Mode::Ground, 1);
        let fit = fit_ground(&g, &Evidence::new(), &config).unwrap();
        let truth = crate::oracles::gaussian_exact(&g).unwrap();
        assert_relative_eq!(fit.objective, -truth.log_z, epsilon = 1e-6);
        match &fit.q.sites[0] {
            SiteMarginals::Free { components } => match &components[0] {
                Marginal::Gaussian { mean, log_std } => {
                    assert_relative_eq!(*mean, 0.0, epsilon = 1e-5);
                    assert_relative_eq!((2.0 * log_std).exp(), 0.5, epsilon = 1e-4);
                }
                _ => panic!(),
            },
            _ => panic!(),
        }
    }

    #[test]
    fn lifted_matches_ground_on_symmetric_star() {
        let g = star(6);
        let mut config = FitConfig::new(EntropyKind::Bethe, Mode::Ground, 1);
        config.seed = 7;
        let ground = fit_ground(&g, &Evidence::new(), &config).unwrap();
        let lifted = fit_lifted(&g, &Evidence::new(), &config).unwrap();
        assert!(lifted.report.super_variables < lifted.report.ground_variables);
        assert_relative_eq!(ground.objective, lifted.objective, epsilon = 1e-5);
        // The expanded lifted q reproduces its objective on the ground model.
        let model = ObjectiveModel::ground(&g);
        let spec = ObjectiveSpec::new(EntropyKind::Bethe);
        let f = free_energy(&lifted.q, &model, &spec).unwrap();
        assert_relative_eq!(f, lifted.objective, epsilon = 1e-10);
    }

    #[test]
    fn c2f_without_continuous_evidence_degenerates_to_lifted() {
        let g = star(5);
        let mut config = FitConfig::new(EntropyKind::Bethe, Mode::CoarseToFine, 1);
        config.seed = 3;
        let c2f = fit(&g, &Evidence::new(), &config).unwrap();
        config.mode = Mode::Lifted;
        let lifted = fit(&g, &Evidence::new(), &config).unwrap();
        assert_eq!(c2f.report.mode, Mode::CoarseToFine);
        assert_relative_eq!(c2f.objective, lifted.objective, epsilon = 1e-12);
    }

    #[test]
    fn c2f_splits_and_matches_ground() {
        // Two well-separated groups of observed leaves force exactly one
        // split from the single initial cluster.
        let g = star(10);
        let mut evidence = Evidence::new();
        for i in 0..5 {
            evidence.set(format!("leaf{i}"), Value::Real(0.01 * i as f64));
        }
        for i in 5..10 {
            evidence.set(format!("leaf{i}"), Value::Real(8.0 + 0.01 * i as f64));
        }
        let mut config = FitConfig::new(EntropyKind::Bethe, Mode::CoarseToFine, 1);
        config.seed = 11;
        let c2f = fit(&g, &evidence, &config).unwrap();
        assert!(c2f.report.split_events >= 1, "{:?}", c2f.report);
        assert_eq!(c2f.report.final_clusters, 2);
        assert!(c2f
            .trace
            .records
            .iter()
            .any(|r| r.event.starts_with("split:")));
        assert!(c2f.trace.records.iter().any(|r| r.event == "absorb"));

        config.mode = Mode::Ground;
        let ground = fit(&g, &evidence, &config).unwrap();
        assert_relative_eq!(c2f.objective, ground.objective, epsilon = 1e-4);
        // Hub marginal mean agrees between modes.
        let mean_of = |r: &FitResult| match &r.q.sites[0] {
            SiteMarginals::Free { components } => match &components[0] {
                Marginal::Gaussian { mean, .. } => *mean,
                _ => panic!(),
            },
            _ => panic!(),
        };
        assert!((mean_of(&c2f) - mean_of(&ground)).abs() < 1e-2);
    }

    #[test]
    fn substreams_are_distinct() {
        let s = 42;
        let a = substream(s, STREAM_GENERATION);
        let b = substream(s, STREAM_INIT);
        let c = substream(s, STREAM_OPTIMIZER);
        assert!(a != b && b != c && a != c);
    }
}
