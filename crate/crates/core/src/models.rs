//! Seeded generators for the benchmark model families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formula::Formula;
use crate::graph::{Evidence, FactorGraph, FactorDecl, Value, VariableDecl};
use crate::potentials::{
    HybridFormulaPotential, LinearGaussianPotential, Potential, QuadraticPotential, SlotDecl,
};

fn hybrid(weight: f64, slots: Vec<SlotDecl>, formula: Formula) -> Potential {
    Potential::HybridFormula(HybridFormulaPotential {
        weight,
        slots,
        formula,
    })
}

fn gaussian_prior(precision_half: f64) -> Potential {
    Potential::Quadratic(QuadraticPotential {
        a: vec![vec![precision_half]],
        b: vec![0.0],
        c: 0.0,
    })
}

/// Toy attraction domain: binary `in`/`attracted` predicates plus continuous
/// positions in [-5, 5].
///
/// Rule 1 (weight 0.1): in(a, box) and in(b, box) implies attracted(a, b).
/// Rule 2 (weight 0.2): not attracted(a, b) gates position a toward p1, and
/// attracted(a, b) gates position b toward p2. With `tied_positions` a single
/// (p1, p2) pair is shared by all groundings (preserving symmetry); otherwise
/// each grounding draws its own from U(-1, 1).
pub fn gen_toy_hmln(
    n_a: usize,
    n_b: usize,
    n_box: usize,
    tied_positions: bool,
    seed: u64,
) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = Vec::new();
    for a in 0..n_a {
        for bx in 0..n_box {
            vars.push(VariableDecl::discrete(format!("in_a{a}_box{bx}"), 2));
        }
    }
    for b in 0..n_b {
        for bx in 0..n_box {
            vars.push(VariableDecl::discrete(format!("in_b{b}_box{bx}"), 2));
        }
    }
    for a in 0..n_a {
        for b in 0..n_b {
            vars.push(VariableDecl::discrete(format!("attr_a{a}_b{b}"), 2));
        }
    }
    for a in 0..n_a {
        vars.push(VariableDecl::continuous(format!("pos_a{a}"), -5.0, 5.0));
    }
    for b in 0..n_b {
        vars.push(VariableDecl::continuous(format!("pos_b{b}"), -5.0, 5.0));
    }

    let tied = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut factors = Vec::new();
    for a in 0..n_a {
        for b in 0..n_b {
            for bx in 0..n_box {
                factors.push(FactorDecl {
                    id: format!("r1_a{a}_b{b}_box{bx}"),
                    scope: vec![
                        format!("in_a{a}_box{bx}"),
                        format!("in_b{b}_box{bx}"),
                        format!("attr_a{a}_b{b}"),
                    ],
                    potential: hybrid(
                        0.1,
                        vec![
                            SlotDecl::Discrete { k: 2 },
                            SlotDecl::Discrete { k: 2 },
                            SlotDecl::Discrete { k: 2 },
                        ],
                        Formula::implies(
                            Formula::And {
                                args: vec![Formula::Atom { pos: 0 }, Formula::Atom { pos: 1 }],
                            },
                            Formula::Atom { pos: 2 },
                        ),
                    ),
                });
            }
        }
    }
    for a in 0..n_a {
        for b in 0..n_b {
            let (p1, p2) = if tied_positions {
                tied
            } else {
                (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            };
            factors.push(FactorDecl {
                id: format!("r2_a{a}_b{b}"),
                scope: vec![
                    format!("attr_a{a}_b{b}"),
                    format!("pos_a{a}"),
                    format!("pos_b{b}"),
                ],
                potential: hybrid(
                    0.2,
                    vec![
                        SlotDecl::Discrete { k: 2 },
                        SlotDecl::Continuous,
                        SlotDecl::Continuous,
                    ],
                    Formula::Sum {
                        args: vec![
                            Formula::mul(
                                Formula::not(Formula::Atom { pos: 0 }),
                                Formula::EqConst { pos: 1, value: p1 },
                            ),
                            Formula::mul(
                                Formula::Atom { pos: 0 },
                                Formula::EqConst { pos: 2, value: p2 },
                            ),
                        ],
                    },
                ),
            });
        }
    }
    FactorGraph::build(vars, factors).expect("generated toy model must validate")
}

/// Paper/topic popularity domain over [0, 10] with boolean `SameSession` and
/// `In` relations, plus the published evidence recipe (70% observed
/// popularity, Bernoulli(0.5) relations).
pub fn gen_paper_popularity(
    n_papers: usize,
    n_topics: usize,
    seed: u64,
) -> (FactorGraph, Evidence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = Vec::new();
    for p in 0..n_papers {
        vars.push(VariableDecl::continuous(format!("paper{p}"), 0.0, 10.0));
    }
    for t in 0..n_topics {
        vars.push(VariableDecl::continuous(format!("topic{t}"), 0.0, 10.0));
    }
    for t1 in 0..n_topics {
        for t2 in 0..n_topics {
            if t1 != t2 {
                vars.push(VariableDecl::discrete(format!("same{t1}_{t2}"), 2));
            }
        }
    }
    for p in 0..n_papers {
        for t in 0..n_topics {
            vars.push(VariableDecl::discrete(format!("in{p}_{t}"), 2));
        }
    }

    let mut factors = Vec::new();
    for p in 0..n_papers {
        factors.push(FactorDecl {
            id: format!("prior{p}"),
            scope: vec![format!("paper{p}")],
            potential: hybrid(
                0.3,
                vec![SlotDecl::Continuous],
                Formula::EqConst { pos: 0, value: 1.0 },
            ),
        });
    }
    for t1 in 0..n_topics {
        for t2 in 0..n_topics {
            if t1 != t2 {
                factors.push(FactorDecl {
                    id: format!("sess{t1}_{t2}"),
                    scope: vec![
                        format!("same{t1}_{t2}"),
                        format!("topic{t1}"),
                        format!("topic{t2}"),
                    ],
                    potential: hybrid(
                        0.5,
                        vec![
                            SlotDecl::Discrete { k: 2 },
                            SlotDecl::Continuous,
                            SlotDecl::Continuous,
                        ],
                        Formula::mul(
                            Formula::Atom { pos: 0 },
                            Formula::Eq { a_pos: 1, b_pos: 2 },
                        ),
                    ),
                });
            }
        }
    }
    for p in 0..n_papers {
        for t in 0..n_topics {
            factors.push(FactorDecl {
                id: format!("memb{p}_{t}"),
                scope: vec![format!("in{p}_{t}"), format!("paper{p}"), format!("topic{t}")],
                potential: hybrid(
                    0.5,
                    vec![
                        SlotDecl::Discrete { k: 2 },
                        SlotDecl::Continuous,
                        SlotDecl::Continuous,
                    ],
                    Formula::mul(
                        Formula::Atom { pos: 0 },
                        Formula::Eq { a_pos: 1, b_pos: 2 },
                    ),
                ),
            });
        }
    }
    let graph = FactorGraph::build(vars, factors).expect("generated model must validate");

    let mut evidence = Evidence::new();
    let observed_papers: Vec<bool> = (0..n_papers).map(|_| rng.gen_bool(0.7)).collect();
    for (p, &obs) in observed_papers.iter().enumerate() {
        if obs {
            evidence.set(format!("paper{p}"), Value::Real(rng.gen_range(0.0..10.0)));
        }
    }
    for t in 0..n_topics {
        if rng.gen_bool(0.7) {
            evidence.set(format!("topic{t}"), Value::Real(rng.gen_range(0.0..10.0)));
        }
    }
    for t1 in 0..n_topics {
        for t2 in 0..n_topics {
            if t1 != t2 {
                evidence.set(
                    format!("same{t1}_{t2}"),
                    Value::State(rng.gen_bool(0.5) as usize),
                );
            }
        }
    }
    for (p, &obs) in observed_papers.iter().enumerate() {
        if obs {
            for t in 0..n_topics {
                evidence.set(
                    format!("in{p}_{t}"),
                    Value::State(rng.gen_bool(0.5) as usize),
                );
            }
        }
    }
    (graph, evidence)
}

/// Relational Gaussian recession domain: Recession -> Market(s) ->
/// Loss(s, b) -> Revenue(b) chains of pairwise linear-Gaussian potentials.
/// Edge variances are drawn once per relational edge type (preserving
/// symmetry); a unit-Gaussian prior on Recession keeps the precision
/// positive definite.
pub fn gen_rgm(n_markets: usize, n_banks: usize, seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var_rm: f64 = rng.gen_range(1.0..5.0);
    let var_ml: f64 = rng.gen_range(1.0..5.0);
    let var_lr: f64 = rng.gen_range(1.0..5.0);
    let inf = f64::INFINITY;

    let mut vars = vec![VariableDecl::continuous("recession", -inf, inf)];
    for s in 0..n_markets {
        vars.push(VariableDecl::continuous(format!("market{s}"), -inf, inf));
    }
    for s in 0..n_markets {
        for b in 0..n_banks {
            vars.push(VariableDecl::continuous(format!("loss{s}_{b}"), -inf, inf));
        }
    }
    for b in 0..n_banks {
        vars.push(VariableDecl::continuous(format!("revenue{b}"), -inf, inf));
    }

    let lg = |var: f64| {
        Potential::LinearGaussian(LinearGaussianPotential { a: 1.0, m: 0.0, var })
    };
    let mut factors = vec![FactorDecl {
        id: "recession_prior".into(),
        scope: vec!["recession".into()],
        potential: gaussian_prior(0.5),
    }];
    for s in 0..n_markets {
        factors.push(FactorDecl {
            id: format!("rm{s}"),
            scope: vec![format!("market{s}"), "recession".into()],
            potential: lg(var_rm),
        });
    }
    for s in 0..n_markets {
        for b in 0..n_banks {
            factors.push(FactorDecl {
                id: format!("ml{s}_{b}"),
                scope: vec![format!("loss{s}_{b}"), format!("market{s}")],
                potential: lg(var_ml),
            });
        }
    }
    for s in 0..n_markets {
        for b in 0..n_banks {
            factors.push(FactorDecl {
                id: format!("lr{s}_{b}"),
                scope: vec![format!("revenue{b}"), format!("loss{s}_{b}")],
                potential: lg(var_lr),
            });
        }
    }
    FactorGraph::build(vars, factors).expect("generated model must validate")
}

/// Observe a fraction of the loss variables of an RGM with synthetic values.
pub fn gen_rgm_evidence(graph: &FactorGraph, frac: f64, seed: u64) -> Evidence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evidence = Evidence::new();
    for v in graph.variables() {
        if v.id.starts_with("loss") && rng.gen_bool(frac) {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let draw = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            evidence.set(v.id.clone(), Value::Real(2.0 * draw));
        }
    }
    evidence
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkfStructure {
    Tree,
    Cycle,
}

/// Relational Kalman filter: per-well state chains `x[w, t+1] ~ N(a x[w,t],
/// q)` with observations `o[w,t] ~ N(x[w,t], r)`; all wells share the same
/// transition/observation parameters. The cycle variant adds a ring of
/// same-timestep couplings between adjacent wells (and uses a = alpha +
/// 0.01). Observations are simulated from the model and returned as
/// evidence on the `o` variables.
pub fn gen_rkf(
    n_wells: usize,
    n_steps: usize,
    structure: RkfStructure,
    seed: u64,
) -> (FactorGraph, Evidence) {
    assert!(n_steps >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: f64 = rng.gen_range(0.5..1.0);
    let beta: f64 = rng.gen_range(5.0..10.0);
    let gamma: f64 = rng.gen_range(1.0..5.0);
    let a = match structure {
        RkfStructure::Tree => alpha,
        RkfStructure::Cycle => alpha + 0.01,
    };
    let inf = f64::INFINITY;

    let mut vars = Vec::new();
    for w in 0..n_wells {
        for t in 0..n_steps {
            vars.push(VariableDecl::continuous(format!("x{w}_{t}"), -inf, inf));
        }
    }
    for w in 0..n_wells {
        for t in 0..n_steps {
            vars.push(VariableDecl::continuous(format!("o{w}_{t}"), -inf, inf));
        }
    }

    // Log-density factors: N(mean, v) contributes -(x - mean)^2 / (2v).
    let mut factors = Vec::new();
    for w in 0..n_wells {
        factors.push(FactorDecl {
            id: format!("init{w}"),
            scope: vec![format!("x{w}_0")],
            potential: gaussian_prior(0.5 / beta),
        });
        for t in 0..n_steps - 1 {
            factors.push(FactorDecl {
                id: format!("trans{w}_{t}"),
                scope: vec![format!("x{w}_{}", t + 1), format!("x{w}_{t}")],
                potential: Potential::LinearGaussian(LinearGaussianPotential {
                    a,
                    m: 0.0,
                    var: 2.0 * beta,
                }),
            });
        }
        for t in 0..n_steps {
            factors.push(FactorDecl {
                id: format!("obs{w}_{t}"),
                scope: vec![format!("o{w}_{t}"), format!("x{w}_{t}")],
                potential: Potential::LinearGaussian(LinearGaussianPotential {
                    a: 1.0,
                    m: 0.0,
                    var: 2.0 * gamma,
                }),
            });
        }
    }
    if structure == RkfStructure::Cycle && n_wells >= 2 {
        for w in 0..n_wells {
            let w2 = (w + 1) % n_wells;
            for t in 0..n_steps {
                factors.push(FactorDecl {
                    id: format!("ring{w}_{t}"),
                    scope: vec![format!("x{w}_{t}"), format!("x{w2}_{t}")],
                    potential: Potential::LinearGaussian(LinearGaussianPotential {
                        a: 1.0,
                        m: 0.0,
                        var: 2.0 * beta,
                    }),
                });
            }
        }
    }
    let graph = FactorGraph::build(vars, factors).expect("generated model must validate");

    // Simulate the dynamics to produce observation evidence.
    let normal = |std: f64, rng: &mut ChaCha8Rng| {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut evidence = Evidence::new();
    for w in 0..n_wells {
        let mut x = normal(beta.sqrt(), &mut rng);
        for t in 0..n_steps {
            if t > 0 {
                x = a * x + normal(beta.sqrt(), &mut rng);
            }
            let o = x + normal(gamma.sqrt(), &mut rng);
            evidence.set(format!("o{w}_{t}"), Value::Real(o));
        }
    }
    (graph, evidence)
}
