//! Seeded experiment drivers over generated universes, with stable CSV
//! and manifest outputs.
//!
//! Three experiments share one shape: generate a universe, sweep a
//! sample-size grid with repeated estimation runs, and report one or
//! two metrics per run. `structure` tracks graph edit distance of the
//! recovered causal graph, `model` tracks worst-case conditional L1
//! error of the estimated network against the pattern, and `value`
//! tracks planning transfer onto an evaluation environment. Every run
//! is a pure function of its configuration: seeds for each (repetition,
//! grid point) task derive from the master seed, tasks run in parallel,
//! and outputs are assembled by a deterministic ordered merge.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bn_estimation::bn_l1_error;
use crate::ctm_pipeline::{estimate_ctm_with_budgets, TAG_STRUCTURE};
use crate::error::{Error, Result};
use crate::factored_mdp::{Environment, FactoredSpace};
use crate::planning::{epsilon_lambda_bound, suboptimality_gap, value_iteration, PlanningTask};
use crate::rng::{derive_seed, stream};
use crate::structure_learning::{estimate_structure, graph_edit_distance, intersect_graphs};
use crate::universe_gen::{
    held_out_environment, random_universe, wellness_universe_spec, GeneratedUniverse, NoiseMode,
    UniverseSpec,
};

/// Seed tag for the universe draw; one master seed pins one universe
/// across all three experiments.
const TAG_EXPERIMENT_UNIVERSE: u64 = 100;
/// Seed tag for the held-out evaluation environment, disjoint from
/// every class and task stream.
const TAG_HELD_OUT: u64 = 101;
/// Experiment identifiers entering per-task seed derivation as
/// `(master seed, experiment, rep, grid index)`.
const EXPERIMENT_STRUCTURE: u64 = 1;
const EXPERIMENT_MODEL: u64 = 2;
const EXPERIMENT_VALUE: u64 = 3;

/// Metric vocabulary of the result schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ged,
    ModelL1,
    ValueError,
    SuboptimalityGap,
    Lambda,
    EvennessResidual,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Ged => "ged",
            Metric::ModelL1 => "model_l1",
            Metric::ValueError => "value_error",
            Metric::SuboptimalityGap => "suboptimality_gap",
            Metric::Lambda => "lambda",
            Metric::EvennessResidual => "evenness_residual",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ged" => Ok(Metric::Ged),
            "model_l1" => Ok(Metric::ModelL1),
            "value_error" => Ok(Metric::ValueError),
            "suboptimality_gap" => Ok(Metric::SuboptimalityGap),
            "lambda" => Ok(Metric::Lambda),
            "evenness_residual" => Ok(Metric::EvennessResidual),
            other => Err(Error::ConfigError(format!("unknown metric `{other}`"))),
        }
    }
}

/// One raw measurement: experiment id, repetition, nominal sample
/// budget, metric, value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub rep: usize,
    pub samples: u64,
    pub metric: Metric,
    pub value: f64,
}

/// Mean and sample standard deviation (n - 1) of one (samples, metric)
/// group of raw rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub samples: u64,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

fn row_key(r: &ResultRow) -> (u64, usize, &'static str) {
    (r.samples, r.rep, r.metric.as_str())
}

/// Aggregates raw rows into per-(samples, metric) mean and standard
/// deviation, with the n - 1 denominator and zero deviation for a
/// single repetition. Values are accumulated in (samples, rep, metric)
/// order regardless of input order, so the result is deterministic.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    let mut groups: BTreeMap<(u64, &'static str), (String, Metric, Vec<f64>)> = BTreeMap::new();
    for row in sorted {
        groups
            .entry((row.samples, row.metric.as_str()))
            .or_insert_with(|| (row.experiment.clone(), row.metric, Vec::new()))
            .2
            .push(row.value);
    }
    groups
        .into_iter()
        .map(|((samples, _), (experiment, metric, values))| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                experiment,
                samples,
                metric,
                mean,
                std,
            }
        })
        .collect()
}

fn compose_csv(rows: &[ResultRow], aggregates: &[AggregateRow]) -> String {
    let mut out = String::from("experiment,rep,samples,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.experiment,
            r.rep,
            r.samples,
            r.metric.as_str(),
            r.value
        ));
    }
    for a in aggregates {
        out.push_str(&format!(
            "{},mean,{},{},{}\n",
            a.experiment,
            a.samples,
            a.metric.as_str(),
            a.mean
        ));
        out.push_str(&format!(
            "{},std,{},{},{}\n",
            a.experiment,
            a.samples,
            a.metric.as_str(),
            a.std
        ));
    }
    out
}

/// Renders rows to the stable CSV schema: header
/// `experiment,rep,samples,metric,value`, raw rows sorted by
/// (samples, rep, metric), then mean and std rows per group.
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    let aggregates = aggregate_rows(&sorted);
    compose_csv(&sorted, &aggregates)
}

/// Where the universe under study comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UniverseSource {
    /// The built-in wellness domain with `m` environments; `mirrored`
    /// switches the perturbations to exactly cancelling pairs.
    Wellness {
        m: usize,
        #[serde(default)]
        mirrored: bool,
    },
    /// An explicit universe specification; its own seed drives
    /// generation, while the master seed drives estimation only.
    Spec { spec: UniverseSpec },
}

impl UniverseSource {
    /// The concrete spec to generate, with the wellness seed derived
    /// from the master seed.
    pub fn resolve_spec(&self, master_seed: u64) -> UniverseSpec {
        match self {
            UniverseSource::Wellness { m, mirrored } => {
                let seed = derive_seed(master_seed, &[TAG_EXPERIMENT_UNIVERSE]);
                let mut spec = wellness_universe_spec(*m, seed);
                if *mirrored {
                    spec.noise_mode = NoiseMode::MirroredEvenness;
                }
                spec
            }
            UniverseSource::Spec { spec } => spec.clone(),
        }
    }
}

/// Reward specification for the value experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// 1 whenever the target state feature holds `value`, else 0, for
    /// every action.
    GoalFeature { feature: usize, value: usize },
    /// Dense reward matrix `rows[state][action]`.
    Table { rows: Vec<Vec<f64>> },
    /// CSV file of `state,action,value` triples (optional header);
    /// unlisted pairs are 0.
    TableFile { path: String },
}

/// Materializes a reward specification as the dense table planning
/// consumes. All specification problems surface as configuration
/// errors.
pub fn build_reward(
    spec: &RewardSpec,
    states: &FactoredSpace,
    actions: &FactoredSpace,
) -> Result<Vec<Vec<f64>>> {
    let num_states = states.dense_size()?;
    let num_actions = actions.dense_size()?;
    match spec {
        RewardSpec::GoalFeature { feature, value } => {
            if *feature >= states.num_features() {
                return Err(Error::ConfigError(format!(
                    "goal feature {feature} out of range for {} state features",
                    states.num_features()
                )));
            }
            if *value >= states.arity() {
                return Err(Error::ConfigError(format!(
                    "goal value {value} out of range for arity {}",
                    states.arity()
                )));
            }
            let mut table = Vec::with_capacity(num_states);
            for s in 0..num_states {
                let assignment = states.assignment_at(s)?;
                let r = if assignment[*feature] == *value { 1.0 } else { 0.0 };
                table.push(vec![r; num_actions]);
            }
            Ok(table)
        }
        RewardSpec::Table { rows } => {
            if rows.len() != num_states || rows.iter().any(|r| r.len() != num_actions) {
                return Err(Error::ConfigError(format!(
                    "reward table must be {num_states} x {num_actions}"
                )));
            }
            for row in rows {
                for &r in row {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::ConfigError(format!(
                            "reward entries must lie in [0, 1], got {r}"
                        )));
                    }
                }
            }
            Ok(rows.clone())
        }
        RewardSpec::TableFile { path } => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::ConfigError(format!("cannot read reward table `{path}`: {e}"))
            })?;
            let mut table = vec![vec![0.0; num_actions]; num_states];
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if lineno == 0 && fields[0].parse::<usize>().is_err() {
                    continue;
                }
                if fields.len() != 3 {
                    return Err(Error::ConfigError(format!(
                        "reward line {} must be `state,action,value`",
                        lineno + 1
                    )));
                }
                let parse = |what: &str, field: &str| -> Result<usize> {
                    field.parse().map_err(|_| {
                        Error::ConfigError(format!(
                            "bad {what} `{field}` on reward line {}",
                            lineno + 1
                        ))
                    })
                };
                let s = parse("state", fields[0])?;
                let a = parse("action", fields[1])?;
                let v: f64 = fields[2].parse().map_err(|_| {
                    Error::ConfigError(format!(
                        "bad value `{}` on reward line {}",
                        fields[2],
                        lineno + 1
                    ))
                })?;
                if s >= num_states || a >= num_actions {
                    return Err(Error::ConfigError(format!(
                        "reward entry ({s}, {a}) outside the {num_states} x {num_actions} table"
                    )));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ConfigError(format!(
                        "reward entries must lie in [0, 1], got {v}"
                    )));
                }
                table[s][a] = v;
            }
            Ok(table)
        }
    }
}

fn default_structure_fraction() -> f64 {
    0.1
}

/// Full experiment configuration; serializable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub universe: UniverseSource,
    pub reps: usize,
    /// Per-environment sample counts for the structure experiment;
    /// total sample budgets for the model and value experiments.
    pub grid: Vec<u64>,
    /// Detection scale: independence tests cut at `eps / 2`.
    pub eps: f64,
    /// Failure budget recorded with the run.
    pub delta: f64,
    /// Declared parent-set sparsity; enters the value-loss bound.
    pub z: usize,
    /// Share of each total budget spent on the structure phase in the
    /// model and value experiments.
    #[serde(default = "default_structure_fraction")]
    pub structure_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSpec>,
    /// Evaluate on class member 0 instead of a held-out draw.
    #[serde(default)]
    pub eval_in_class: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::ConfigError("need at least one repetition".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::ConfigError("sample grid is empty".into()));
        }
        if self.grid[0] < 1 {
            return Err(Error::ConfigError("sample grid entries must be >= 1".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigError(
                "sample grid must be strictly increasing".into(),
            ));
        }
        if !(self.eps > 0.0 && self.eps <= 2.0) {
            return Err(Error::ConfigError(format!(
                "eps must lie in (0, 2], got {}",
                self.eps
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::ConfigError(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.z < 1 {
            return Err(Error::ConfigError("sparsity bound must be >= 1".into()));
        }
        if !(self.structure_fraction > 0.0 && self.structure_fraction < 1.0) {
            return Err(Error::ConfigError(format!(
                "structure fraction must lie in (0, 1), got {}",
                self.structure_fraction
            )));
        }
        if let Some(h) = self.horizon {
            if h < 1 {
                return Err(Error::ConfigError("horizon must be >= 1".into()));
            }
        }
        if let UniverseSource::Wellness { m, .. } = self.universe {
            if m < 1 {
                return Err(Error::ConfigError(
                    "wellness universe needs at least one environment".into(),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structure-recovery run on the wellness domain: graph edit
    /// distance against per-environment sample counts.
    pub fn wellness_structure(seed: u64) -> Self {
        ExperimentConfig {
            universe: UniverseSource::Wellness {
                m: 3,
                mirrored: false,
            },
            reps: 10,
            grid: vec![1250, 2500, 5000, 10_000, 20_000],
            eps: 0.1,
            delta: 0.1,
            z: 4,
            structure_fraction: default_structure_fraction(),
            horizon: None,
            reward: None,
            eval_in_class: false,
            out_dir: None,
            seed,
        }
    }

    /// Model-estimation run on the wellness domain: network error
    /// against total sample budgets.
    pub fn wellness_model(seed: u64) -> Self {
        ExperimentConfig {
            grid: vec![30_000, 100_000, 300_000],
            ..Self::wellness_structure(seed)
        }
    }

    /// The evenness ablation: the same run on the mirrored-noise
    /// wellness universe, where environment factors cancel exactly.
    pub fn wellness_model_mirrored(seed: u64) -> Self {
        ExperimentConfig {
            universe: UniverseSource::Wellness {
                m: 3,
                mirrored: true,
            },
            grid: vec![100_000, 400_000, 1_600_000],
            ..Self::wellness_structure(seed)
        }
    }

    /// Planning-transfer run on the wellness domain: reach high
    /// activity over horizon 3, evaluated on a held-out environment.
    pub fn wellness_value(seed: u64) -> Self {
        ExperimentConfig {
            grid: vec![1000, 3000, 10_000, 50_000],
            structure_fraction: 0.3,
            horizon: Some(3),
            reward: Some(RewardSpec::GoalFeature {
                feature: 0,
                value: 2,
            }),
            ..Self::wellness_structure(seed)
        }
    }
}

/// Nominal per-phase sample counts for one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    /// The grid point's nominal total budget as reported in the CSV.
    pub samples: u64,
    /// Structure-phase draws summed over environments.
    pub structure: u64,
    /// Network-phase budget requested from the mixture.
    pub bn: u64,
}

/// Everything needed to reproduce and interpret a run; equal manifests
/// imply byte-equal CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub reps: usize,
    pub grid: Vec<u64>,
    pub metrics: Vec<String>,
    pub universe_attempts: u64,
    /// Largest sup-L1 gap between an environment and the pattern.
    pub lambda: f64,
    /// Per-feature evenness residuals of the generated class.
    pub evenness: Vec<f64>,
    pub phase_split: Vec<PhaseSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSpec>,
    /// Value-loss bound `2 lambda H^3 d_S n^(2Z+1)` at the measured
    /// lambda, for context next to the value rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_lambda_bound: Option<f64>,
    /// Exact optimal value of the evaluation environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_value_eval: Option<f64>,
}

/// One experiment's complete output.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    /// Raw rows in (samples, rep, metric) order.
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    /// The rendered CSV, schema `experiment,rep,samples,metric,value`.
    pub csv: String,
    pub manifest: Manifest,
    pub universe: GeneratedUniverse,
}

fn finish(
    experiment: &str,
    config: &ExperimentConfig,
    universe: GeneratedUniverse,
    mut rows: Vec<ResultRow>,
    phase_split: Vec<PhaseSplit>,
    epsilon_lambda: Option<f64>,
    optimal_value_eval: Option<f64>,
) -> ExperimentOutput {
    rows.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    let aggregates = aggregate_rows(&rows);
    let csv = compose_csv(&rows, &aggregates);
    let mut metrics: Vec<String> = rows.iter().map(|r| r.metric.as_str().to_owned()).collect();
    metrics.sort();
    metrics.dedup();
    let manifest = Manifest {
        experiment: experiment.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: config.config_hash(),
        seed: config.seed,
        reps: config.reps,
        grid: config.grid.clone(),
        metrics,
        universe_attempts: universe.attempts_used,
        lambda: universe.lambda,
        evenness: universe.evenness.clone(),
        phase_split,
        horizon: config.horizon,
        reward: config.reward.clone(),
        epsilon_lambda_bound: epsilon_lambda,
        optimal_value_eval,
    };
    ExperimentOutput {
        rows,
        aggregates,
        csv,
        manifest,
        universe,
    }
}

/// All (grid index, repetition) tasks in deterministic order.
fn task_list(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    let mut tasks = Vec::with_capacity(config.grid.len() * config.reps);
    for gi in 0..config.grid.len() {
        for rep in 0..config.reps {
            tasks.push((gi, rep));
        }
    }
    tasks
}

/// Splits a total budget between the structure phase (per-environment
/// draw counts) and the network phase, honoring the structure fraction
/// and keeping both phases nonempty.
fn budget_split(k_total: u64, m: u64, fraction: f64) -> (u64, u64) {
    let per_env = ((fraction * k_total as f64) / m as f64).floor() as u64;
    let k_struct = per_env.max(1);
    let k_bn = k_total.saturating_sub(k_struct * m).max(1);
    (k_struct, k_bn)
}

/// Structure recovery against sample size: for each grid point (a
/// per-environment sample count) and repetition, estimate every
/// environment's dependency graph on its own derived stream, intersect,
/// and report the edit distance to the declared causal pattern. CSV
/// sample counts are totals over environments.
pub fn run_structure_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let universe = random_universe(&config.universe.resolve_spec(config.seed))?;
    let class = &universe.class;
    let declared = class
        .causal_graph()
        .ok_or_else(|| Error::MissingGroundTruth("universe lacks a declared graph".into()))?
        .clone();
    let m = class.size() as u64;
    let rows = task_list(config)
        .into_par_iter()
        .map(|(gi, rep)| {
            let k = config.grid[gi];
            let seed = derive_seed(
                config.seed,
                &[EXPERIMENT_STRUCTURE, rep as u64, gi as u64],
            );
            let mut graphs = Vec::with_capacity(class.size());
            for (i, env) in class.environments().iter().enumerate() {
                let mut rng = stream(seed, &[TAG_STRUCTURE, i as u64]);
                graphs.push(estimate_structure(env, k, config.eps, &mut rng)?.graph);
            }
            let estimated = intersect_graphs(&graphs)?;
            let ged = graph_edit_distance(&declared, &estimated)? as f64;
            Ok(ResultRow {
                experiment: "structure".into(),
                rep,
                samples: m * k,
                metric: Metric::Ged,
                value: ged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let phase_split = config
        .grid
        .iter()
        .map(|&k| PhaseSplit {
            samples: m * k,
            structure: m * k,
            bn: 0,
        })
        .collect();
    Ok(finish("structure", config, universe, rows, phase_split, None, None))
}

/// Network estimation against sample size: each grid point is a total
/// budget split between the phases; the metric is the worst-case
/// conditional L1 distance of the estimated network from the pattern.
pub fn run_model_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let universe = random_universe(&config.universe.resolve_spec(config.seed))?;
    let class = &universe.class;
    let pattern = class
        .causal_model()
        .ok_or_else(|| Error::MissingGroundTruth("universe lacks a causal model".into()))?;
    let m = class.size() as u64;
    let rows = task_list(config)
        .into_par_iter()
        .map(|(gi, rep)| {
            let k_total = config.grid[gi];
            let (k_struct, k_bn) = budget_split(k_total, m, config.structure_fraction);
            let seed = derive_seed(config.seed, &[EXPERIMENT_MODEL, rep as u64, gi as u64]);
            let result = estimate_ctm_with_budgets(class, k_struct, config.eps, k_bn, seed)?;
            let err = bn_l1_error(result.model(), pattern)?;
            Ok(ResultRow {
                experiment: "model".into(),
                rep,
                samples: k_total,
                metric: Metric::ModelL1,
                value: err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let phase_split = model_phase_split(config, m);
    Ok(finish("model", config, universe, rows, phase_split, None, None))
}

fn model_phase_split(config: &ExperimentConfig, m: u64) -> Vec<PhaseSplit> {
    config
        .grid
        .iter()
        .map(|&k_total| {
            let (k_struct, k_bn) = budget_split(k_total, m, config.structure_fraction);
            PhaseSplit {
                samples: k_total,
                structure: k_struct * m,
                bn: k_bn,
            }
        })
        .collect()
}

/// Planning transfer against sample size: estimate the causal model on
/// each budget, plan against it, and score the resulting policy on an
/// evaluation environment drawn from the universe but outside the class
/// (or class member 0 under `eval_in_class`). Reports the clamped
/// optimality gap and the absolute error of the planned value against
/// the evaluation optimum.
pub fn run_value_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let horizon = config
        .horizon
        .ok_or_else(|| Error::ConfigError("value experiment needs a horizon".into()))?;
    let reward_spec = config
        .reward
        .as_ref()
        .ok_or_else(|| Error::ConfigError("value experiment needs a reward".into()))?;
    let spec = config.universe.resolve_spec(config.seed);
    let universe = random_universe(&spec)?;
    let class = &universe.class;
    let eval_env: Environment = if config.eval_in_class {
        class.environments()[0].clone()
    } else {
        held_out_environment(&spec, derive_seed(config.seed, &[TAG_HELD_OUT]))?
    };
    let reward = build_reward(reward_spec, class.state_space(), class.action_space())?;
    let task = PlanningTask::new(reward, horizon)?;
    let mu: Vec<f64> = class.initial_distribution().to_vec();
    let (_, eval_table) = value_iteration(&eval_env.model, &task)?;
    let v_star_eval = eval_table.initial_value(&mu)?;
    let m = class.size() as u64;
    let nested = task_list(config)
        .into_par_iter()
        .map(|(gi, rep)| {
            let k_total = config.grid[gi];
            let (k_struct, k_bn) = budget_split(k_total, m, config.structure_fraction);
            let seed = derive_seed(config.seed, &[EXPERIMENT_VALUE, rep as u64, gi as u64]);
            let ctm = estimate_ctm_with_budgets(class, k_struct, config.eps, k_bn, seed)?;
            let (policy, table) = value_iteration(ctm.model(), &task)?;
            let v_hat = table.initial_value(&mu)?;
            let gap = suboptimality_gap(&eval_env.model, &task, &mu, &policy)?.max(0.0);
            Ok([
                ResultRow {
                    experiment: "value".into(),
                    rep,
                    samples: k_total,
                    metric: Metric::SuboptimalityGap,
                    value: gap,
                },
                ResultRow {
                    experiment: "value".into(),
                    rep,
                    samples: k_total,
                    metric: Metric::ValueError,
                    value: (v_hat - v_star_eval).abs(),
                },
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = nested.into_iter().flatten().collect();
    let bound = epsilon_lambda_bound(universe.lambda, horizon, spec.d_s, spec.n, config.z)?;
    let phase_split = model_phase_split(config, m);
    Ok(finish(
        "value",
        config,
        universe,
        rows,
        phase_split,
        Some(bound),
        Some(v_star_eval),
    ))
}

/// Writes a generated universe for later inspection: the full JSON
/// record plus the causal pattern as DOT.
pub fn write_universe(dir: &Path, universe: &GeneratedUniverse) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(universe)?;
    json.push('\n');
    fs::write(dir.join("universe.json"), json)?;
    if let Some(graph) = universe.class.causal_graph() {
        fs::write(dir.join("pattern.dot"), graph.to_dot())?;
    }
    Ok(())
}

/// Writes one experiment's outputs under `dir`: `results.csv`,
/// `manifest.json`, and the generated universe.
pub fn write_experiment_outputs(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), &output.csv)?;
    let mut manifest = serde_json::to_string_pretty(&output.manifest)?;
    manifest.push('\n');
    fs::write(dir.join("manifest.json"), manifest)?;
    write_universe(dir, &output.universe)
}
