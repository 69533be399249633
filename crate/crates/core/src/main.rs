//! Command-line interface: generate models, fit, query, evaluate, and
//! inspect compression.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lhvi::fit::{fit, substream, FitConfig, FitResult, Mode, STREAM_GENERATION};
use lhvi::graph::{Evidence, FactorGraph, Value};
use lhvi::inference::{
    avg_l1_error, avg_univariate_kl, energy_of_assignment, map_estimate, query_marginal,
    RefMarginal,
};
use lhvi::lifting::{color_passing, init_colors};
use lhvi::optimizer::MinimizeConfig;
use lhvi::variational::EntropyKind;
use lhvi::{Error, Result};

#[derive(Parser)]
#[command(name = "lhvi", version, about = "Variational inference for hybrid factor graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a model family instance (model.json + evidence.json).
    Gen(GenArgs),
    /// Fit a variational distribution (fitted.json, trace.csv, lift_report.json).
    Fit(FitArgs),
    /// Query marginals / MAP from a fitted file.
    Query(QueryArgs),
    /// Evaluate a fitted file against an exact oracle (metrics.json).
    Eval(EvalArgs),
    /// Report graph compression without fitting.
    LiftReport(LiftReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    ToyHmln,
    Popularity,
    Rgm,
    Rkf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StructureArg {
    Tree,
    Cycle,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// toy-hmln: number of A-type objects.
    #[arg(long, default_value_t = 2)]
    n_a: usize,
    /// toy-hmln: number of B-type objects.
    #[arg(long, default_value_t = 3)]
    n_b: usize,
    /// toy-hmln: number of boxes.
    #[arg(long, default_value_t = 2)]
    n_box: usize,
    /// toy-hmln: share formula parameters across groundings.
    #[arg(long, default_value_t = false)]
    tied_positions: bool,
    #[arg(long, default_value_t = 300)]
    n_papers: usize,
    #[arg(long, default_value_t = 10)]
    n_topics: usize,
    #[arg(long, default_value_t = 100)]
    n_markets: usize,
    #[arg(long, default_value_t = 5)]
    n_banks: usize,
    /// rgm: fraction of loss variables observed.
    #[arg(long, default_value_t = 0.0)]
    evidence_frac: f64,
    #[arg(long, default_value_t = 10)]
    n_wells: usize,
    #[arg(long, default_value_t = 20)]
    n_steps: usize,
    #[arg(long, value_enum, default_value_t = StructureArg::Tree)]
    structure: StructureArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Optional fit settings; a JSON config file may supply any subset and
/// command-line flags win on conflict.
#[derive(Args, Serialize, Deserialize, Default, Clone)]
struct FitFlags {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    evidence: Option<PathBuf>,
    /// bethe | jensen
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<String>,
    /// ground | lifted | c2f
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quad_order: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_iters: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad_tol: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obj_tol: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_starts: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage_iters: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon_frac: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_clusters: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

impl FitFlags {
    fn merge(self, fallback: FitFlags) -> FitFlags {
        FitFlags {
            model: self.model.or(fallback.model),
            evidence: self.evidence.or(fallback.evidence),
            objective: self.objective.or(fallback.objective),
            mode: self.mode.or(fallback.mode),
            k: self.k.or(fallback.k),
            quad_order: self.quad_order.or(fallback.quad_order),
            max_iters: self.max_iters.or(fallback.max_iters),
            grad_tol: self.grad_tol.or(fallback.grad_tol),
            obj_tol: self.obj_tol.or(fallback.obj_tol),
            lr: self.lr.or(fallback.lr),
            n_starts: self.n_starts.or(fallback.n_starts),
            stage_iters: self.stage_iters.or(fallback.stage_iters),
            epsilon: self.epsilon.or(fallback.epsilon),
            epsilon_frac: self.epsilon_frac.or(fallback.epsilon_frac),
            initial_clusters: self.initial_clusters.or(fallback.initial_clusters),
            seed: self.seed.or(fallback.seed),
            threads: self.threads.or(fallback.threads),
            out: self.out.or(fallback.out),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// JSON file holding any of the fit flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    fitted: PathBuf,
    /// Variables to report marginal mixtures for.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    marginal: Option<Vec<String>>,
    /// Variables for a MAP assignment (bare flag = all variables).
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    map: Option<Vec<String>>,
    /// Dump a (x, density) CSV curve for one continuous variable.
    #[arg(long)]
    curve: Option<String>,
    #[arg(long, default_value_t = 4096)]
    curve_points: usize,
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Gaussian,
    BruteForce,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fitted: PathBuf,
    #[arg(long, value_enum)]
    oracle: OracleKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LiftReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    evidence: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error(&Error::InvalidConfig(e.to_string()));
            return ExitCode::from(2);
        }
    };
    let result = match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::Query(args) => cmd_query(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::LiftReport(args) => cmd_lift_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            emit_error(&e);
            ExitCode::from(code)
        }
    }
}

fn emit_error(e: &Error) {
    let line = json!({ "error": e.to_string(), "kind": error_kind(e) });
    eprintln!("{line}");
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidConfig(_) => "invalid_config",
        Error::DivergenceDetected => "divergence",
        Error::NonFiniteGradient => "divergence",
        Error::UnknownVariable(_) => "unknown_variable",
        Error::NotGaussian(_)
        | Error::NotPositiveDefinite
        | Error::TooLarge(_)
        | Error::NonIntegrable => "oracle_unsupported",
        _ => "error",
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::DivergenceDetected | Error::NonFiniteGradient => 3,
        Error::UnknownVariable(_) => 4,
        Error::NotGaussian(_)
        | Error::NotPositiveDefinite
        | Error::TooLarge(_)
        | Error::NonIntegrable => 5,
        _ => 1,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let (graph, evidence) = match args.family {
        Family::ToyHmln => (
            lhvi::models::gen_toy_hmln(args.n_a, args.n_b, args.n_box, args.tied_positions, args.seed),
            Evidence::new(),
        ),
        Family::Popularity => {
            lhvi::models::gen_paper_popularity(args.n_papers, args.n_topics, args.seed)
        }
        Family::Rgm => {
            let graph = lhvi::models::gen_rgm(args.n_markets, args.n_banks, args.seed);
            if !(0.0..=1.0).contains(&args.evidence_frac) {
                return Err(Error::InvalidConfig("evidence_frac must be in [0, 1]".into()));
            }
            let evidence = lhvi::models::gen_rgm_evidence(
                &graph,
                args.evidence_frac,
                substream(args.seed, STREAM_GENERATION),
            );
            (graph, evidence)
        }
        Family::Rkf => {
            if args.n_steps < 2 {
                return Err(Error::InvalidConfig("rkf requires n_steps >= 2".into()));
            }
            let structure = match args.structure {
                StructureArg::Tree => lhvi::models::RkfStructure::Tree,
                StructureArg::Cycle => lhvi::models::RkfStructure::Cycle,
            };
            lhvi::models::gen_rkf(args.n_wells, args.n_steps, structure, args.seed)
        }
    };
    write_json(&args.out.join("model.json"), &graph)?;
    write_json(&args.out.join("evidence.json"), &evidence)?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file_flags: FitFlags = match &args.config {
        Some(path) => read_json(path)?,
        None => FitFlags::default(),
    };
    let f = args.flags.merge(file_flags);
    let model_path = f
        .model
        .ok_or_else(|| Error::InvalidConfig("--model is required".into()))?;
    let out = f
        .out
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?;
    let entropy = match f.objective.as_deref().unwrap_or("bethe") {
        "bethe" => EntropyKind::Bethe,
        "jensen" => EntropyKind::Jensen,
        other => {
            return Err(Error::InvalidConfig(format!("unknown objective '{other}'")));
        }
    };
    let mode = match f.mode.as_deref().unwrap_or("ground") {
        "ground" => Mode::Ground,
        "lifted" => Mode::Lifted,
        "c2f" => Mode::CoarseToFine,
        other => return Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
    };
    let k = f.k.unwrap_or(1);
    if k < 1 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let threads = std::env::var("LHVI_THREADS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| Error::InvalidConfig("LHVI_THREADS must be an integer".into()))
        })
        .transpose()?
        .or(f.threads)
        .unwrap_or(1);
    if threads < 1 {
        return Err(Error::InvalidConfig("threads must be >= 1".into()));
    }

    let graph: FactorGraph = read_json(&model_path)?;
    let evidence: Evidence = match &f.evidence {
        Some(p) => read_json(p)?,
        None => Evidence::new(),
    };

    let mut config = FitConfig::new(entropy, mode, k);
    config.quad_order = f.quad_order.unwrap_or(config.quad_order);
    config.minimize = MinimizeConfig {
        max_iters: f.max_iters.unwrap_or(2000),
        grad_tol: f.grad_tol.unwrap_or(1e-5),
        obj_tol: f.obj_tol.unwrap_or(1e-8),
        lr: f.lr.unwrap_or(0.2),
    };
    config.n_starts = f.n_starts.unwrap_or(1);
    config.stage_iters = f.stage_iters.unwrap_or(50);
    config.epsilon = f.epsilon;
    config.epsilon_frac = f.epsilon_frac.unwrap_or(0.05);
    config.initial_clusters = f.initial_clusters.unwrap_or(1);
    config.seed = f.seed.unwrap_or(0);
    if config.n_starts < 1 {
        return Err(Error::InvalidConfig("n_starts must be >= 1".into()));
    }

    fs::create_dir_all(&out)?;
    let result = fit(&graph, &evidence, &config)?;
    write_json(&out.join("fitted.json"), &result)?;
    write_json(&out.join("lift_report.json"), &result.report)?;
    let csv = fs::File::create(out.join("trace.csv"))?;
    result.trace.write_csv(csv)?;
    Ok(())
}

fn site_indices(fitted: &FitResult, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            fitted
                .graph
                .var_index(id)
                .ok_or_else(|| Error::UnknownVariable(id.clone()))
        })
        .collect()
}

fn value_json(graph: &FactorGraph, idx: usize, v: &Value) -> (String, serde_json::Value) {
    let id = graph.variables()[idx].id.clone();
    let val = match v {
        Value::State(s) => json!(s),
        Value::Real(x) => json!(x),
    };
    (id, val)
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let fitted: FitResult = read_json(&args.fitted)?;
    let mut output = serde_json::Map::new();

    if let Some(ids) = &args.marginal {
        let ids: Vec<String> = if ids.is_empty() {
            fitted.graph.variables().iter().map(|v| v.id.clone()).collect()
        } else {
            ids.clone()
        };
        let sites = site_indices(&fitted, &ids)?;
        let joint = query_marginal(&fitted.q, &sites)?;
        let entries: Vec<serde_json::Value> = ids
            .iter()
            .zip(&joint.sites)
            .map(|(id, (_, m))| json!({ "variable": id, "marginals": m }))
            .collect();
        output.insert("weights".into(), json!(joint.weights));
        output.insert("marginal".into(), json!(entries));
    }

    if let Some(ids) = &args.map {
        let all = ids.is_empty();
        let ids: Vec<String> = if all {
            fitted.graph.variables().iter().map(|v| v.id.clone()).collect()
        } else {
            ids.clone()
        };
        let sites = site_indices(&fitted, &ids)?;
        let assignment = map_estimate(&fitted.q, &sites)?;
        let map_json: serde_json::Map<String, serde_json::Value> = sites
            .iter()
            .zip(&assignment)
            .map(|(&i, v)| value_json(&fitted.graph, i, v))
            .collect();
        output.insert("map".into(), json!(map_json));
        if all {
            let energy = energy_of_assignment(&fitted.graph, &assignment)?;
            output.insert("energy".into(), json!(energy));
        }
    }

    if let Some(id) = &args.curve {
        let site = fitted
            .graph
            .var_index(id)
            .ok_or_else(|| Error::UnknownVariable(id.clone()))?;
        let (lo, hi) = curve_range(&fitted, site)?;
        let mut rows = String::from("x,density\n");
        for m in 0..args.curve_points {
            let x = lo + (hi - lo) * m as f64 / (args.curve_points - 1) as f64;
            let d = fitted.q.marginal_density(site, &Value::Real(x))?;
            rows.push_str(&format!("{x},{d}\n"));
        }
        match &args.curve_out {
            Some(path) => fs::write(path, rows)?,
            None => print!("{rows}"),
        }
        output.insert("curve".into(), json!({ "variable": id, "points": args.curve_points }));
    }

    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

/// Plot range for a continuous marginal: component means +- 8 std.
fn curve_range(fitted: &FitResult, site: usize) -> Result<(f64, f64)> {
    use lhvi::variational::{Marginal, SiteMarginals, LOG_STD_MAX, LOG_STD_MIN};
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    match &fitted.q.sites[site] {
        SiteMarginals::Free { components } => {
            for m in components {
                match m {
                    Marginal::Gaussian { mean, log_std } => {
                        let std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        lo = lo.min(mean - 8.0 * std);
                        hi = hi.max(mean + 8.0 * std);
                    }
                    Marginal::Categorical { .. } => {
                        return Err(Error::DomainMismatch(
                            "curve requires a continuous variable".into(),
                        ))
                    }
                }
            }
        }
        SiteMarginals::Clamped { .. } => {
            return Err(Error::DomainMismatch("curve requires a free variable".into()))
        }
    }
    Ok((lo, hi))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let fitted: FitResult = read_json(&args.fitted)?;
    let graph = &fitted.graph;
    let n = graph.variables().len();
    let all_sites: Vec<usize> = (0..n).collect();

    let (refs, exact_point, log_z) = match args.oracle {
        OracleKind::Gaussian => {
            let truth = lhvi::oracles::gaussian_exact(graph)?;
            let refs: Vec<(RefMarginal, usize)> = (0..n)
                .map(|i| {
                    (
                        RefMarginal::Gaussian {
                            mean: truth.mean[i],
                            var: truth.covariance[(i, i)],
                        },
                        i,
                    )
                })
                .collect();
            let point: Vec<Value> = (0..n).map(|i| Value::Real(truth.mean[i])).collect();
            (refs, point, truth.log_z)
        }
        OracleKind::BruteForce => {
            let truth =
                lhvi::oracles::brute_force_hybrid(graph, &lhvi::oracles::GridSpec::default())?;
            let refs: Vec<(RefMarginal, usize)> = truth
                .marginals
                .iter()
                .enumerate()
                .map(|(i, m)| (RefMarginal::from(m), i))
                .collect();
            let point: Vec<Value> = truth
                .marginals
                .iter()
                .map(|m| match m {
                    lhvi::oracles::ExactMarginal::Discrete { probs } => Value::State(
                        probs
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(i, _)| i)
                            .unwrap(),
                    ),
                    lhvi::oracles::ExactMarginal::Continuous { mean, .. } => Value::Real(*mean),
                })
                .collect();
            (refs, point, truth.log_z)
        }
    };

    let avg_kl = avg_univariate_kl(&refs, &fitted.q)?;
    let map = map_estimate(&fitted.q, &all_sites)?;
    let avg_l1 = avg_l1_error(&exact_point, &map);
    let map_energy = energy_of_assignment(graph, &map)?;

    let metrics = json!({
        "avg_kl": avg_kl,
        "avg_l1": avg_l1,
        "map_energy": map_energy,
        "log_z": log_z,
        "objective": fitted.objective,
    });
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("metrics.json"), &metrics)?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn cmd_lift_report(args: LiftReportArgs) -> Result<()> {
    let graph: FactorGraph = read_json(&args.model)?;
    let evidence: Evidence = match &args.evidence {
        Some(p) => read_json(p)?,
        None => Evidence::new(),
    };
    let init = init_colors(&graph, &evidence, None)?;
    let (final_coloring, cg) = color_passing(&graph, &init, usize::MAX);

    // Re-run with capped round counts to expose per-round class counts.
    let mut per_round: Vec<serde_json::Value> = Vec::new();
    for r in 0..=final_coloring.round {
        let (c, _) = color_passing(&graph, &init, r);
        per_round.push(json!({
            "round": r,
            "variable_classes": c.num_variable_colors(),
            "factor_classes": c.num_factor_colors(),
        }));
    }

    let counts: BTreeMap<String, usize> = [
        ("ground_variables".to_string(), graph.variables().len()),
        ("ground_factors".to_string(), graph.factors().len()),
        ("super_variables".to_string(), cg.super_variables.len()),
        ("super_factors".to_string(), cg.super_factors.len()),
    ]
    .into_iter()
    .collect();
    let report = json!({
        "counts": counts,
        "compression_ratio": cg.compression_ratio(),
        "rounds": per_round,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
