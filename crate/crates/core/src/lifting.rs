//! Symmetry detection by color passing, compressed graphs with counts, and
//! 1-D clustering of continuous evidence for coarse-to-fine refinement.

use std::collections::BTreeMap;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Domain, Evidence, FactorGraph, Value};
use crate::potentials::{quantize, DEFAULT_QUANTUM};

/// A stable (or in-progress) node coloring of a factor graph. Colors are
/// dense integers starting at 0, separately for variables and factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coloring {
    pub variable_colors: Vec<usize>,
    pub factor_colors: Vec<usize>,
    pub round: usize,
}

impl Coloring {
    pub fn num_variable_colors(&self) -> usize {
        self.variable_colors.iter().max().map_or(0, |m| m + 1)
    }

    pub fn num_factor_colors(&self) -> usize {
        self.factor_colors.iter().max().map_or(0, |m| m + 1)
    }
}

/// Variables sharing a color at the fixed point; `count` is `#(i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperVariable {
    pub members: Vec<usize>,
    pub count: usize,
    pub domain: Domain,
    pub ground_degree: usize,
}

/// Factors sharing a color at the fixed point; `count` is `#(c)` and `scope`
/// lists the super-variable index at each position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperFactor {
    pub members: Vec<usize>,
    pub count: usize,
    pub scope: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressedGraph {
    pub super_variables: Vec<SuperVariable>,
    pub super_factors: Vec<SuperFactor>,
    pub provenance: Coloring,
}

impl CompressedGraph {
    /// Ground variable index -> super variable index.
    pub fn variable_map(&self) -> Vec<usize> {
        let n: usize = self.super_variables.iter().map(|sv| sv.count).sum();
        let mut map = vec![0; n];
        for (si, sv) in self.super_variables.iter().enumerate() {
            for &m in &sv.members {
                map[m] = si;
            }
        }
        map
    }

    pub fn compression_ratio(&self) -> f64 {
        let ground: usize = self.super_variables.iter().map(|sv| sv.count).sum();
        if ground == 0 {
            return 1.0;
        }
        self.super_variables.len() as f64 / ground as f64
    }
}

/// Assign dense ids to keys in first-seen order.
struct Relabel<K> {
    map: HashMap<K, usize>,
}

impl<K: std::hash::Hash + Eq> Relabel<K> {
    fn new() -> Self {
        Relabel {
            map: HashMap::new(),
        }
    }

    fn id(&mut self, key: K) -> usize {
        let next = self.map.len();
        *self.map.entry(key).or_insert(next)
    }
}

/// Initial coloring from domains, evidence, and potential signatures.
///
/// Continuous-evidence variables take the color of their evidence cluster
/// when a clustering is supplied, otherwise their quantized observed value.
pub fn init_colors(
    graph: &FactorGraph,
    evidence: &Evidence,
    clustering: Option<&EvidenceClustering>,
) -> Result<Coloring> {
    let observed = graph.evidence_by_index(evidence)?;
    if let Some(cl) = clustering {
        let mut covered: Vec<usize> = cl
            .clusters
            .iter()
            .flat_map(|c| c.members.iter().copied())
            .collect();
        covered.sort_unstable();
        let mut expected: Vec<usize> = observed
            .iter()
            .filter(|(_, v)| matches!(v, Value::Real(_)))
            .map(|(&i, _)| i)
            .collect();
        expected.sort_unstable();
        if covered != expected {
            return Err(Error::ClusterCoverage(
                "clusters must cover exactly the continuous-evidence variables".into(),
            ));
        }
    }
    let cluster_of: HashMap<usize, usize> = clustering
        .map(|cl| {
            cl.clusters
                .iter()
                .enumerate()
                .flat_map(|(ci, c)| c.members.iter().map(move |&m| (m, ci)))
                .collect()
        })
        .unwrap_or_default();

    let mut relabel = Relabel::new();
    let variable_colors = graph
        .variables()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut key = Vec::new();
            match v.domain {
                Domain::Discrete { k } => {
                    key.push(0u8);
                    key.extend_from_slice(&(k as u64).to_le_bytes());
                }
                Domain::Continuous { lo, hi } => {
                    key.push(1u8);
                    key.extend_from_slice(&quantize(lo, DEFAULT_QUANTUM).to_le_bytes());
                    key.extend_from_slice(&quantize(hi, DEFAULT_QUANTUM).to_le_bytes());
                }
            }
            match observed.get(&i) {
                None => key.push(0u8),
                Some(Value::State(s)) => {
                    key.push(1u8);
                    key.extend_from_slice(&(*s as u64).to_le_bytes());
                }
                Some(Value::Real(x)) => {
                    key.push(2u8);
                    match cluster_of.get(&i) {
                        Some(ci) => key.extend_from_slice(&(*ci as u64).to_le_bytes()),
                        None => key.extend_from_slice(&quantize(*x, DEFAULT_QUANTUM).to_le_bytes()),
                    }
                }
            }
            relabel.id(key)
        })
        .collect();

    let mut frelabel = Relabel::new();
    let factor_colors = graph
        .factors()
        .iter()
        .map(|f| frelabel.id(f.potential.signature()))
        .collect();

    Ok(Coloring {
        variable_colors,
        factor_colors,
        round: 0,
    })
}

/// One round of the color-passing update. Returns the refined coloring;
/// keys include the node's own color, so classes only ever split.
fn cp_round(graph: &FactorGraph, c: &Coloring) -> Coloring {
    // Factor update: own color + neighbor variable colors in scope order.
    let mut frelabel = Relabel::new();
    let factor_colors: Vec<usize> = (0..graph.factors().len())
        .map(|fi| {
            let mut key = vec![c.factor_colors[fi]];
            key.extend(graph.scope_indices(fi).iter().map(|&v| c.variable_colors[v]));
            frelabel.id(key)
        })
        .collect();
    // Variable update: own color + sorted multiset of incident factor colors.
    let mut vrelabel = Relabel::new();
    let variable_colors: Vec<usize> = (0..graph.variables().len())
        .map(|vi| {
            let mut incident: Vec<usize> = graph
                .adjacency(vi)
                .iter()
                .map(|&(f, _)| factor_colors[f])
                .collect();
            incident.sort_unstable();
            let mut key = vec![c.variable_colors[vi]];
            key.extend(incident);
            vrelabel.id(key)
        })
        .collect();
    Coloring {
        variable_colors,
        factor_colors,
        round: c.round + 1,
    }
}

/// Iterate the color-passing update until no class splits (or `max_rounds`),
/// then build the induced compressed graph.
pub fn color_passing(
    graph: &FactorGraph,
    init: &Coloring,
    max_rounds: usize,
) -> (Coloring, CompressedGraph) {
    let mut current = normalize(init.clone());
    for _ in 0..max_rounds {
        let next = cp_round(graph, &current);
        let stable = next.num_variable_colors() == current.num_variable_colors()
            && next.num_factor_colors() == current.num_factor_colors();
        current = next;
        if stable {
            break;
        }
    }
    let cg = compress(graph, &current);
    (current, cg)
}

/// Re-index an arbitrary coloring to dense first-seen ids.
fn normalize(c: Coloring) -> Coloring {
    let mut vr = Relabel::new();
    let variable_colors = c.variable_colors.iter().map(|&x| vr.id(x)).collect();
    let mut fr = Relabel::new();
    let factor_colors = c.factor_colors.iter().map(|&x| fr.id(x)).collect();
    Coloring {
        variable_colors,
        factor_colors,
        round: c.round,
    }
}

/// Restart color passing from a previous fixed point with some variables
/// recolored. The recoloring must only split existing classes; the result
/// equals running from scratch on the refined initial colors.
pub fn resume_color_passing(
    graph: &FactorGraph,
    previous: &Coloring,
    recolored: &[(usize, usize)],
) -> Result<(Coloring, CompressedGraph)> {
    let n = previous.variable_colors.len();
    let mut by_new: BTreeMap<usize, usize> = BTreeMap::new();
    for &(var, new_color) in recolored {
        if var >= n {
            return Err(Error::UnknownVariable(format!("variable index {var}")));
        }
        let prev = previous.variable_colors[var];
        match by_new.get(&new_color) {
            Some(&p) if p != prev => {
                return Err(Error::NonRefinement(format!(
                    "new color {new_color} would merge previous classes {p} and {prev}"
                )))
            }
            _ => {
                by_new.insert(new_color, prev);
            }
        }
    }
    let marks: BTreeMap<usize, usize> = recolored.iter().copied().collect();
    let mut vr = Relabel::new();
    let variable_colors = (0..n)
        .map(|i| vr.id((previous.variable_colors[i], marks.get(&i).copied())))
        .collect();
    let init = Coloring {
        variable_colors,
        factor_colors: previous.factor_colors.clone(),
        round: 0,
    };
    Ok(color_passing(graph, &init, usize::MAX))
}

/// Group a stable coloring into super variables and super factors.
fn compress(graph: &FactorGraph, coloring: &Coloring) -> CompressedGraph {
    let nvc = coloring.num_variable_colors();
    let mut var_members: Vec<Vec<usize>> = vec![Vec::new(); nvc];
    for (i, &c) in coloring.variable_colors.iter().enumerate() {
        var_members[c].push(i);
    }
    let super_variables: Vec<SuperVariable> = var_members
        .into_iter()
        .map(|members| {
            let rep = members[0];
            let domain = graph.variables()[rep].domain;
            let ground_degree = graph.degree(rep);
            debug_assert!(members.iter().all(|&m| graph.degree(m) == ground_degree
                && graph.variables()[m].domain.slot_kind() == domain.slot_kind()));
            SuperVariable {
                count: members.len(),
                members,
                domain,
                ground_degree,
            }
        })
        .collect();

    let nfc = coloring.num_factor_colors();
    let mut fac_members: Vec<Vec<usize>> = vec![Vec::new(); nfc];
    for (i, &c) in coloring.factor_colors.iter().enumerate() {
        fac_members[c].push(i);
    }
    let super_factors: Vec<SuperFactor> = fac_members
        .into_iter()
        .map(|members| {
            let rep = members[0];
            let scope: Vec<usize> = graph
                .scope_indices(rep)
                .iter()
                .map(|&v| coloring.variable_colors[v])
                .collect();
            debug_assert!(members.iter().all(|&m| {
                graph
                    .scope_indices(m)
                    .iter()
                    .map(|&v| coloring.variable_colors[v])
                    .collect::<Vec<_>>()
                    == scope
            }));
            SuperFactor {
                count: members.len(),
                members,
                scope,
            }
        })
        .collect();

    CompressedGraph {
        super_variables,
        super_factors,
        provenance: coloring.clone(),
    }
}

/// One k-means cluster over scalar inputs; `indices` point into the input
/// slice and `variance` is the population variance of the members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCluster {
    pub indices: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

fn cluster_stats(indices: Vec<usize>, values: &[f64]) -> ScalarCluster {
    let n = indices.len() as f64;
    let mean = indices.iter().map(|&i| values[i]).sum::<f64>() / n;
    let variance = indices
        .iter()
        .map(|&i| (values[i] - mean).powi(2))
        .sum::<f64>()
        / n;
    ScalarCluster {
        indices,
        mean,
        variance,
    }
}

/// Lloyd's algorithm on scalars with seeded k-means++ initialization.
/// Empty clusters are dropped; output is sorted by mean.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Vec<ScalarCluster> {
    assert!(k >= 1 && !values.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding.
    let mut centers = vec![values[rng.gen_range(0..values.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&v| {
                centers
                    .iter()
                    .map(|&c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            break; // fewer distinct values than centers
        }
        let mut r = rng.gen_range(0.0..total);
        let mut pick = values.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        centers.push(values[pick]);
    }

    let mut assign = vec![usize::MAX; values.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (i, &v) in values.iter().enumerate() {
            let best = centers
                .iter()
                .enumerate()
                .min_by(|a, b| (v - a.1).abs().total_cmp(&(v - b.1).abs()))
                .map(|(ci, _)| ci)
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (ci, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = values
                .iter()
                .enumerate()
                .filter(|&(i, _)| assign[i] == ci)
                .map(|(_, &v)| v)
                .collect();
            if !members.is_empty() {
                *c = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
    }

    let mut clusters: Vec<ScalarCluster> = (0..centers.len())
        .filter_map(|ci| {
            let indices: Vec<usize> =
                (0..values.len()).filter(|&i| assign[i] == ci).collect();
            if indices.is_empty() {
                None
            } else {
                Some(cluster_stats(indices, values))
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    clusters
}

/// Within-cluster sum of squares of a clustering over `values`.
pub fn wcss(clusters: &[ScalarCluster], values: &[f64]) -> f64 {
    clusters
        .iter()
        .map(|c| {
            c.indices
                .iter()
                .map(|&i| (values[i] - c.mean).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Divide a cluster's values in two with k-means; errors when every value is
/// identical.
pub fn split_cluster(values: &[f64], seed: u64) -> Result<(ScalarCluster, ScalarCluster)> {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(Error::Unsplittable);
    }
    let clusters = kmeans_1d(values, 2, seed);
    assert_eq!(clusters.len(), 2, "distinct values must yield two clusters");
    let mut it = clusters.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

/// One group of observed continuous variables treated as sharing the
/// evidence distribution `N(mean, variance)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceCluster {
    pub members: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

/// A partition of the continuous-evidence variables into clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceClustering {
    pub clusters: Vec<EvidenceCluster>,
    pub threshold: f64,
}

impl EvidenceClustering {
    /// Cluster the continuous-evidence values of `evidence` into `s` groups.
    pub fn build(
        graph: &FactorGraph,
        evidence: &Evidence,
        s: usize,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        let observed = graph.evidence_by_index(evidence)?;
        let (vars, values): (Vec<usize>, Vec<f64>) = observed
            .iter()
            .filter_map(|(&i, v)| match v {
                Value::Real(x) => Some((i, *x)),
                Value::State(_) => None,
            })
            .unzip();
        let clusters = if vars.is_empty() {
            Vec::new()
        } else {
            kmeans_1d(&values, s, seed)
                .into_iter()
                .map(|c| EvidenceCluster {
                    members: c.indices.iter().map(|&i| vars[i]).collect(),
                    mean: c.mean,
                    variance: c.variance,
                })
                .collect()
        };
        Ok(EvidenceClustering {
            clusters,
            threshold,
        })
    }

    /// Indices of clusters whose variance exceeds the threshold.
    pub fn over_threshold(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.variance > self.threshold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Replace cluster `idx` by its two k-means halves.
    pub fn split(&mut self, idx: usize, values_of: &BTreeMap<usize, f64>, seed: u64) -> Result<()> {
        let cluster = self.clusters[idx].clone();
        let vals: Vec<f64> = cluster.members.iter().map(|m| values_of[m]).collect();
        let (a, b) = split_cluster(&vals, seed)?;
        let to_cluster = |c: ScalarCluster| EvidenceCluster {
            members: c.indices.iter().map(|&i| cluster.members[i]).collect(),
            mean: c.mean,
            variance: c.variance,
        };
        self.clusters[idx] = to_cluster(a);
        self.clusters.push(to_cluster(b));
        Ok(())
    }
}
