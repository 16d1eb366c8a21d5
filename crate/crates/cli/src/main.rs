//! Command-line front end for the causal transition model pipeline:
//! universe generation, the estimation stages, planning, and the seeded
//! experiment drivers.
//!
//! Every subcommand is a thin wrapper over the library: read JSON
//! inputs, call one core entry point, write JSON/CSV/DOT outputs.
//! Configuration problems (bad flags, unreadable or malformed files)
//! exit with code 2; runtime estimation failures exit with 3.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use ctm_core::bn_estimation::estimate_bn;
use ctm_core::ctm_pipeline::{
    estimate_ctm, estimate_ctm_with_budgets, mixture_sampler, CtmResult, TAG_STRUCTURE,
};
use ctm_core::experiment::{
    run_model_experiment, run_structure_experiment, run_value_experiment, write_experiment_outputs,
    write_universe, ExperimentConfig, ExperimentOutput, RewardSpec,
};
use ctm_core::factored_mdp::{FactoredTransitionModel, TransitionModel};
use ctm_core::planning::{evaluate_policy, suboptimality_gap, value_iteration, PlanningTask, Policy};
use ctm_core::rng::stream;
use ctm_core::structure_learning::{estimate_structure, graph_edit_distance, intersect_graphs};
use ctm_core::universe_gen::{
    random_universe, wellness_universe_spec, GeneratedUniverse, NoiseMode, UniverseSpec,
};
use ctm_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctm",
    version,
    about = "Causal transition models over classes of factored MDPs: estimation, planning, experiments"
)]
struct Cli {
    /// Worker threads for parallel phases (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic universe and write it with its causal pattern.
    GenUniverse(GenUniverseArgs),
    /// Estimate per-environment dependency graphs and their intersection.
    EstimateStructure(EstimateStructureArgs),
    /// Estimate a Bayesian network over a known graph from the class mixture.
    EstimateBn(EstimateBnArgs),
    /// Run the full pipeline: structure, intersection, network.
    EstimateCtm(EstimateCtmArgs),
    /// Plan on an estimated or exact model with exact value iteration.
    Plan(PlanArgs),
    /// Evaluate a stored policy on a model, against that model's optimum.
    Evaluate(EvaluateArgs),
    /// Run a seeded experiment sweep and write CSV, manifest, and universe.
    #[command(subcommand)]
    Experiment(ExperimentKind),
}

#[derive(Args)]
struct GenUniverseArgs {
    /// Universe specification JSON; omit for the built-in wellness domain.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environments in the built-in wellness class.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Use exactly cancelling perturbation pairs (evenness by construction).
    #[arg(long)]
    mirrored: bool,
    /// Generation seed; overrides the spec file's seed when given.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateStructureArgs {
    /// Generated universe JSON (from gen-universe).
    #[arg(long)]
    universe: PathBuf,
    /// Samples drawn per environment; all feature pairs share the batch.
    #[arg(long)]
    samples: u64,
    /// Detection scale: tests cut at eps / 2.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateBnArgs {
    /// Generated universe JSON; the declared causal graph is used.
    #[arg(long)]
    universe: PathBuf,
    /// Total sample budget, split evenly over parent cells.
    #[arg(long)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateCtmArgs {
    /// Generated universe JSON.
    #[arg(long)]
    universe: PathBuf,
    /// Structure-phase samples per environment (explicit-budget mode).
    #[arg(long)]
    samples_structure: Option<u64>,
    /// Network-phase total samples (explicit-budget mode).
    #[arg(long)]
    samples_bn: Option<u64>,
    /// Derive both budgets from the closed-form sample-complexity
    /// formulas instead of explicit counts.
    #[arg(long)]
    formula: bool,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Failure budget for formula-derived sample sizes.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Leading constant of the structure-phase budget formula.
    #[arg(long, default_value_t = 1.0)]
    c_structure: f64,
    /// Leading constant of the network-phase budget formula.
    #[arg(long, default_value_t = 1.0)]
    c_bn: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    /// State feature whose target value earns reward 1.
    #[arg(long)]
    goal_feature: Option<usize>,
    /// Target value for the goal feature.
    #[arg(long)]
    goal_value: Option<usize>,
    /// CSV of `state,action,value` triples; unlisted pairs are 0.
    #[arg(long)]
    reward_table: Option<PathBuf>,
}

impl RewardArgs {
    fn to_spec(&self) -> Result<RewardSpec> {
        match (self.goal_feature, self.goal_value, &self.reward_table) {
            (Some(feature), Some(value), None) => Ok(RewardSpec::GoalFeature { feature, value }),
            (None, None, Some(path)) => Ok(RewardSpec::TableFile {
                path: path.to_string_lossy().into_owned(),
            }),
            _ => Err(Error::ConfigError(
                "give either --goal-feature with --goal-value, or --reward-table".into(),
            )),
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    /// Transition model JSON (model.json from the estimation commands).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Transition model JSON to evaluate on.
    #[arg(long)]
    model: PathBuf,
    /// Policy JSON (policy.json from plan).
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[command(flatten)]
    reward: RewardArgs,
    /// Optional output directory for evaluation.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Graph recovery error against sample size.
    Structure(ExperimentRunArgs),
    /// Network estimation error against sample size.
    Model(ExperimentRunArgs),
    /// Planning transfer onto a held-out environment against sample size.
    Value(ExperimentRunArgs),
}

#[derive(Args)]
struct ExperimentRunArgs {
    /// Experiment configuration JSON; omit for the wellness preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per grid point (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated sample grid (overrides the config).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u64>>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// With the built-in preset: use the mirrored-noise wellness universe.
    #[arg(long)]
    mirrored: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs < 1 {
            return Err(Error::ConfigError("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::ConfigError(format!("cannot size the worker pool: {e}")))?;
    }
    match cli.command {
        Command::GenUniverse(args) => gen_universe(args),
        Command::EstimateStructure(args) => cmd_estimate_structure(args),
        Command::EstimateBn(args) => cmd_estimate_bn(args),
        Command::EstimateCtm(args) => cmd_estimate_ctm(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(kind) => cmd_experiment(kind),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ConfigError(format!("cannot read {what} `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::ConfigError(format!("cannot parse {what} `{}`: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

fn load_universe(path: &Path) -> Result<GeneratedUniverse> {
    let universe: GeneratedUniverse = read_json(path, "universe")?;
    universe.class.validate().map_err(|e| {
        Error::ConfigError(format!("universe `{}` fails validation: {e}", path.display()))
    })?;
    Ok(universe)
}

fn uniform_initial(model: &FactoredTransitionModel) -> Result<Vec<f64>> {
    let states = model.state_space().dense_size()?;
    Ok(vec![1.0 / states as f64; states])
}

fn gen_universe(args: GenUniverseArgs) -> Result<()> {
    let spec = match &args.config {
        Some(path) => {
            let mut spec: UniverseSpec = read_json(path, "universe spec")?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        None => {
            let mut spec = wellness_universe_spec(args.m, args.seed.unwrap_or(0));
            if args.mirrored {
                spec.noise_mode = NoiseMode::MirroredEvenness;
            }
            spec
        }
    };
    let universe = random_universe(&spec)?;
    write_universe(&args.out, &universe)?;
    println!(
        "universe: {} environments, {} attempts, lambda {:.6}, evenness {:?}",
        universe.class.size(),
        universe.attempts_used,
        universe.lambda,
        universe.evenness
    );
    println!("wrote {}", args.out.join("universe.json").display());
    Ok(())
}

fn cmd_estimate_structure(args: EstimateStructureArgs) -> Result<()> {
    let universe = load_universe(&args.universe)?;
    let class = &universe.class;
    let mut reports = Vec::with_capacity(class.size());
    for (i, env) in class.environments().iter().enumerate() {
        let mut rng = stream(args.seed, &[TAG_STRUCTURE, i as u64]);
        reports.push(estimate_structure(env, args.samples, args.eps, &mut rng)?);
    }
    let graphs: Vec<_> = reports.iter().map(|r| r.graph.clone()).collect();
    let estimated = intersect_graphs(&graphs)?;
    let ged = class
        .causal_graph()
        .map(|declared| graph_edit_distance(declared, &estimated))
        .transpose()?;
    let output = json!({
        "estimated": estimated,
        "reports": reports,
        "ged_vs_declared": ged,
    });
    let path = write_json(&args.out, "structure.json", &output)?;
    fs::write(args.out.join("estimated.dot"), estimated.to_dot())?;
    println!(
        "estimated graph: {} edges from {} samples per environment",
        estimated.num_edges(),
        args.samples
    );
    if let Some(ged) = ged {
        println!("edit distance to the declared graph: {ged}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_estimate_bn(args: EstimateBnArgs) -> Result<()> {
    let universe = load_universe(&args.universe)?;
    let class = &universe.class;
    let graph = class.causal_graph().ok_or_else(|| {
        Error::ConfigError("universe lacks a declared graph to estimate over".into())
    })?;
    let mixture = mixture_sampler(class);
    let estimate = estimate_bn(&mixture, graph, args.samples, args.seed)?;
    println!(
        "network over {} edges: {} samples ({} per cell)",
        graph.num_edges(),
        estimate.total_samples,
        estimate.per_cell
    );
    write_json(&args.out, "model.json", &estimate.model)?;
    let path = write_json(&args.out, "bn.json", &estimate)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_estimate_ctm(args: EstimateCtmArgs) -> Result<()> {
    let universe = load_universe(&args.universe)?;
    let class = &universe.class;
    let result: CtmResult = if args.formula {
        estimate_ctm(
            class,
            args.eps,
            args.delta,
            universe.spec.z,
            args.c_structure,
            args.c_bn,
            args.seed,
        )?
    } else {
        let (k_structure, k_bn) = match (args.samples_structure, args.samples_bn) {
            (Some(s), Some(b)) => (s, b),
            _ => {
                return Err(Error::ConfigError(
                    "give --samples-structure and --samples-bn, or --formula".into(),
                ))
            }
        };
        estimate_ctm_with_budgets(class, k_structure, args.eps, k_bn, args.seed)?
    };
    println!(
        "estimated graph: {} edges; samples: {} structure + {} network = {}",
        result.graph.num_edges(),
        result.samples_structure,
        result.samples_bn,
        result.total_samples
    );
    if let Some(budget) = &result.budget {
        println!(
            "formula budgets: {} per test and environment, {} network",
            budget.k_structure, budget.k_bn
        );
    }
    write_json(&args.out, "model.json", result.model())?;
    fs::write(args.out.join("estimated.dot"), result.graph.to_dot())?;
    let path = write_json(&args.out, "ctm.json", &result)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let model: FactoredTransitionModel = read_json(&args.model, "transition model")?;
    model
        .validate()
        .map_err(|e| Error::ConfigError(format!("model fails validation: {e}")))?;
    let reward_spec = args.reward.to_spec()?;
    let reward =
        ctm_core::experiment::build_reward(&reward_spec, model.state_space(), model.action_space())?;
    let task = PlanningTask::new(reward, args.horizon)?;
    let (policy, table) = value_iteration(&model, &task)?;
    let mu = uniform_initial(&model)?;
    let value = table.initial_value(&mu)?;
    write_json(&args.out, "value_table.json", &table)?;
    let path = write_json(&args.out, "policy.json", &policy)?;
    println!(
        "planned value {value:.6} at horizon {} under the uniform initial distribution",
        args.horizon
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model: FactoredTransitionModel = read_json(&args.model, "transition model")?;
    model
        .validate()
        .map_err(|e| Error::ConfigError(format!("model fails validation: {e}")))?;
    let policy: Policy = read_json(&args.policy, "policy")?;
    let reward_spec = args.reward.to_spec()?;
    let reward =
        ctm_core::experiment::build_reward(&reward_spec, model.state_space(), model.action_space())?;
    let task = PlanningTask::new(reward, args.horizon)?;
    let mu = uniform_initial(&model)?;
    let value = evaluate_policy(&model, &task, &policy, &mu)?;
    let gap = suboptimality_gap(&model, &task, &mu, &policy)?.max(0.0);
    println!("policy value {value:.6}, optimal {:.6}, gap {gap:.6}", value + gap);
    if let Some(out) = &args.out {
        let output = json!({
            "value": value,
            "optimal_value": value + gap,
            "suboptimality_gap": gap,
        });
        let path = write_json(out, "evaluation.json", &output)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_experiment(kind: ExperimentKind) -> Result<()> {
    let (name, args, preset): (_, _, fn(u64) -> ExperimentConfig) = match &kind {
        ExperimentKind::Structure(args) => ("structure", args, ExperimentConfig::wellness_structure),
        ExperimentKind::Model(args) => (
            "model",
            args,
            if args.mirrored {
                ExperimentConfig::wellness_model_mirrored
            } else {
                ExperimentConfig::wellness_model
            },
        ),
        ExperimentKind::Value(args) => ("value", args, ExperimentConfig::wellness_value),
    };
    let mut config = match &args.config {
        Some(path) => read_json(path, "experiment config")?,
        None => preset(args.seed.unwrap_or(0)),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(grid) = &args.grid {
        config.grid = grid.clone();
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(name));
    let output: ExperimentOutput = match kind {
        ExperimentKind::Structure(_) => run_structure_experiment(&config)?,
        ExperimentKind::Model(_) => run_model_experiment(&config)?,
        ExperimentKind::Value(_) => run_value_experiment(&config)?,
    };
    write_experiment_outputs(&out_dir, &output)?;
    println!(
        "{name} experiment: {} raw rows over grid {:?}, lambda {:.6}",
        output.rows.len(),
        config.grid,
        output.universe.lambda
    );
    for aggregate in &output.aggregates {
        println!(
            "  samples {:>10}  {:<18} mean {:.6}  std {:.6}",
            aggregate.samples,
            aggregate.metric.as_str(),
            aggregate.mean,
            aggregate.std
        );
    }
    println!("wrote {}", out_dir.join("results.csv").display());
    Ok(())
}
