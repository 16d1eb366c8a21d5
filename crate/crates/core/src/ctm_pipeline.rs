//! End-to-end causal transition model estimation over a class of
//! environments, with the class-level diagnostics the guarantees lean
//! on.
//!
//! The pipeline runs per-environment structure estimation, intersects
//! the recovered graphs, and estimates a Bayesian network over the
//! intersection from the uniform mixture of all environments. Budgets
//! for both phases come from closed-form sample-complexity formulas
//! with configurable leading constants. Diagnostics quantify how far a
//! class strays from the assumptions behind those guarantees: shared
//! structure (diversity), bounded model gaps (sufficiency), and
//! mixture factors averaging to one (evenness).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bn_estimation::{estimate_bn, BnEstimate};
use crate::error::{Error, Result};
use crate::factored_mdp::{
    sup_l1_distance, Environment, FactoredSpace, FactoredTransitionModel, FeatureVector,
    TransitionModel,
};
use crate::rng::{derive_seed, stream};
use crate::structure_learning::{
    estimate_structure, intersect_graphs, CausalGraph, StructureReport,
};

/// Stream tag for the per-environment structure phase: environment `i`
/// draws from `stream(seed, [TAG_STRUCTURE, i])`. Public so that
/// structure-only runs can reproduce the pipeline's streams exactly.
pub const TAG_STRUCTURE: u64 = 1;
/// Stream tag for the Bayesian network phase, seeded with
/// `derive_seed(seed, [TAG_BN])`.
pub const TAG_BN: u64 = 2;

/// An ordered collection of environments sharing spaces and initial
/// distribution, with optional generator-provided ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentClass {
    environments: Vec<Environment>,
    causal_graph: Option<CausalGraph>,
    causal_model: Option<FactoredTransitionModel>,
}

impl EnvironmentClass {
    pub fn new(
        environments: Vec<Environment>,
        causal_graph: Option<CausalGraph>,
        causal_model: Option<FactoredTransitionModel>,
    ) -> Result<Self> {
        let class = EnvironmentClass {
            environments,
            causal_graph,
            causal_model,
        };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .environments
            .first()
            .ok_or_else(|| Error::EmptyInput("an environment class needs members".into()))?;
        first.validate()?;
        let s = *first.model.state_space();
        let a = *first.model.action_space();
        for env in &self.environments[1..] {
            env.validate()?;
            if *env.model.state_space() != s || *env.model.action_space() != a {
                return Err(Error::DimensionMismatch(
                    "class members must share state and action spaces".into(),
                ));
            }
            if env.initial_distribution != first.initial_distribution {
                return Err(Error::DimensionMismatch(
                    "class members must share the initial state distribution".into(),
                ));
            }
        }
        if let Some(g) = &self.causal_graph {
            if g.num_state_features() != s.num_features()
                || g.num_action_features() != a.num_features()
                || g.arity() != s.arity()
            {
                return Err(Error::DimensionMismatch(
                    "declared causal graph disagrees with the class spaces".into(),
                ));
            }
        }
        if let Some(m) = &self.causal_model {
            m.validate()?;
            if *m.state_space() != s || *m.action_space() != a {
                return Err(Error::DimensionMismatch(
                    "declared causal model disagrees with the class spaces".into(),
                ));
            }
            if let Some(g) = &self.causal_graph {
                if m.scopes() != g.scopes().as_slice() {
                    return Err(Error::DimensionMismatch(
                        "causal model scopes disagree with the declared graph".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn environments(&self) -> &[Environment] {
        &self.environments
    }

    pub fn size(&self) -> usize {
        self.environments.len()
    }

    pub fn state_space(&self) -> &FactoredSpace {
        self.environments[0].model.state_space()
    }

    pub fn action_space(&self) -> &FactoredSpace {
        self.environments[0].model.action_space()
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.environments[0].initial_distribution
    }

    pub fn causal_graph(&self) -> Option<&CausalGraph> {
        self.causal_graph.as_ref()
    }

    pub fn causal_model(&self) -> Option<&FactoredTransitionModel> {
        self.causal_model.as_ref()
    }
}

/// Sample budgets for the two pipeline phases, kept with the inputs
/// that produced them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub eps: f64,
    pub delta: f64,
    pub m: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub n: usize,
    pub z: usize,
    pub c_structure: f64,
    pub c_bn: f64,
    /// Structure-phase samples per environment.
    pub k_structure: u64,
    /// Bayesian-network-phase samples on the mixture.
    pub k_bn: u64,
}

/// Pairwise testing threshold used by the structure phase:
/// `eps / (3 d_S Z)`.
pub fn structure_epsilon(eps: f64, d_s: usize, z: usize) -> f64 {
    eps / (3.0 * d_s as f64 * z as f64)
}

/// Evaluates the closed-form budgets.
///
/// Structure (per environment):
/// `K' = ceil(C' d_S^2 Z^2 n ln(2 M d_S^2 d_A / delta) / eps^2)`;
/// network (on the mixture):
/// `K'' = ceil(C'' d_S^3 n^{3Z+1} ln(4 d_S n^Z / delta) / eps^2)`.
/// Logarithms are natural.
pub fn compute_budgets(
    eps: f64,
    delta: f64,
    m: usize,
    d_s: usize,
    d_a: usize,
    n: usize,
    z: usize,
    c_structure: f64,
    c_bn: f64,
) -> Result<Budget> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "accuracy target must be positive, got {eps}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence must lie in (0, 1), got {delta}"
        )));
    }
    if m < 1 || d_s < 1 || d_a < 1 || n < 2 || z < 1 {
        return Err(Error::InvalidParameter(
            "all dimensions must be at least 1 (arity at least 2)".into(),
        ));
    }
    if !(c_structure > 0.0 && c_bn > 0.0) {
        return Err(Error::InvalidParameter(
            "budget constants must be positive".into(),
        ));
    }
    let eps2 = eps * eps;
    let structure_log = (2.0 * m as f64 * (d_s * d_s) as f64 * d_a as f64 / delta).ln();
    let k_structure = (c_structure * (d_s * d_s) as f64 * (z * z) as f64 * n as f64
        * structure_log
        / eps2)
        .ceil();
    let bn_pow = (n as f64).powi(3 * z as i32 + 1);
    let bn_log = (4.0 * d_s as f64 * (n as f64).powi(z as i32) / delta).ln();
    let k_bn = (c_bn * (d_s as f64).powi(3) * bn_pow * bn_log / eps2).ceil();
    Ok(Budget {
        eps,
        delta,
        m,
        d_s,
        d_a,
        n,
        z,
        c_structure,
        c_bn,
        k_structure: (k_structure as u64).max(1),
        k_bn: (k_bn as u64).max(1),
    })
}

/// The uniform mixture of a class's transition models, usable wherever
/// a single conditional sampler is expected.
pub struct MixtureSampler<'a> {
    class: &'a EnvironmentClass,
}

/// Builds the mixture sampler `(1/M) sum_i P_i(Y|X)`.
pub fn mixture_sampler(class: &EnvironmentClass) -> MixtureSampler<'_> {
    MixtureSampler { class }
}

impl TransitionModel for MixtureSampler<'_> {
    fn state_space(&self) -> &FactoredSpace {
        self.class.state_space()
    }

    fn action_space(&self) -> &FactoredSpace {
        self.class.action_space()
    }

    fn transition_prob(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
        let mut acc = 0.0;
        for env in self.class.environments() {
            acc += env.model.transition_prob(x, y)?;
        }
        Ok(acc / self.class.size() as f64)
    }

    fn sample_transition(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Result<FeatureVector> {
        // A single member needs no index draw, so the degenerate mixture
        // consumes randomness exactly like the member itself.
        let envs = self.class.environments();
        if envs.len() == 1 {
            return envs[0].model.sample_transition(x, rng);
        }
        let i = rng.gen_range(0..envs.len());
        envs[i].model.sample_transition(x, rng)
    }

    fn feature_marginal(&self, j: usize, x: &FeatureVector) -> Result<Vec<f64>> {
        let n = self.state_space().arity();
        let mut acc = vec![0.0; n];
        for env in self.class.environments() {
            for (slot, p) in acc.iter_mut().zip(env.model.feature_marginal(j, x)?) {
                *slot += p;
            }
        }
        let m = self.class.size() as f64;
        acc.iter_mut().for_each(|p| *p /= m);
        Ok(acc)
    }

    fn next_distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let states = self.state_space().dense_size()?;
        let mut acc = vec![0.0; states];
        for env in self.class.environments() {
            for (slot, p) in acc.iter_mut().zip(env.model.next_distribution(x)?) {
                *slot += p;
            }
        }
        let m = self.class.size() as f64;
        acc.iter_mut().for_each(|p| *p /= m);
        Ok(acc)
    }
}

/// Everything one pipeline run produces: the intersected graph, the
/// network estimated over it, per-environment reports, and the exact
/// sampling effort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtmResult {
    pub graph: CausalGraph,
    pub bn: BnEstimate,
    pub structure_reports: Vec<StructureReport>,
    /// Structure samples per environment.
    pub k_structure: u64,
    /// Pairwise threshold used by the structure phase.
    pub structure_epsilon: f64,
    pub samples_structure: u64,
    pub samples_bn: u64,
    pub total_samples: u64,
    /// Present when the budgets came from the closed-form formulas.
    pub budget: Option<Budget>,
    pub seed: u64,
}

impl CtmResult {
    pub fn model(&self) -> &FactoredTransitionModel {
        &self.bn.model
    }
}

/// Runs the pipeline with explicit phase budgets: `k_structure` samples
/// per environment at pairwise threshold `structure_eps`, then `k_bn`
/// mixture samples over the intersected graph.
///
/// Environment `i`'s structure stream and the network phase's seed are
/// derived from `seed` independently, so the per-environment runs can
/// execute in parallel without affecting results; with a single
/// environment the composition is bit-identical to running structure
/// estimation and network estimation back to back by hand.
pub fn estimate_ctm_with_budgets(
    class: &EnvironmentClass,
    k_structure: u64,
    structure_eps: f64,
    k_bn: u64,
    seed: u64,
) -> Result<CtmResult> {
    let structure_reports: Vec<StructureReport> = class
        .environments()
        .par_iter()
        .enumerate()
        .map(|(i, env)| {
            let mut rng = stream(seed, &[TAG_STRUCTURE, i as u64]);
            estimate_structure(env, k_structure, structure_eps, &mut rng)
        })
        .collect::<Result<_>>()?;
    let graphs: Vec<CausalGraph> = structure_reports.iter().map(|r| r.graph.clone()).collect();
    let graph = intersect_graphs(&graphs)?;
    let sampler = mixture_sampler(class);
    let bn = estimate_bn(&sampler, &graph, k_bn, derive_seed(seed, &[TAG_BN]))?;
    let samples_structure = k_structure * class.size() as u64;
    let samples_bn = bn.total_samples;
    Ok(CtmResult {
        graph,
        structure_reports,
        k_structure,
        structure_epsilon: structure_eps,
        samples_structure,
        samples_bn,
        total_samples: samples_structure + samples_bn,
        budget: None,
        seed,
        bn,
    })
}

/// Runs the full pipeline with budgets from [`compute_budgets`].
///
/// `z` is the assumed sparsity bound of the shared structure; the
/// pairwise threshold is `eps / (3 d_S Z)` and the per-test confidence
/// split follows `delta/2` to the structure phase (divided across
/// environments and pairs) and `delta/2` to the network phase.
pub fn estimate_ctm(
    class: &EnvironmentClass,
    eps: f64,
    delta: f64,
    z: usize,
    c_structure: f64,
    c_bn: f64,
    seed: u64,
) -> Result<CtmResult> {
    let d_s = class.state_space().num_features();
    let d_a = class.action_space().num_features();
    let n = class.state_space().arity();
    let budget = compute_budgets(
        eps,
        delta,
        class.size(),
        d_s,
        d_a,
        n,
        z,
        c_structure,
        c_bn,
    )?;
    let eps_structure = structure_epsilon(eps, d_s, z);
    let mut result = estimate_ctm_with_budgets(
        class,
        budget.k_structure,
        eps_structure,
        budget.k_bn,
        seed,
    )?;
    result.budget = Some(budget);
    Ok(result)
}

/// How far the class strays from its shared causal model: the largest
/// sup-L1 gap `max_i sup_x ||P_G(.|x) - P_i(.|x)||_1`, in `[0, 2]`.
pub fn lambda_sufficiency<M: TransitionModel>(
    class: &EnvironmentClass,
    causal_model: &M,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for env in class.environments() {
        worst = worst.max(sup_l1_distance(causal_model, &env.model)?);
    }
    Ok(worst)
}

/// Per-feature evenness residual of a class against its causal model.
///
/// Writing each environment as `P_i = P_G * F_i`, evenness asks the
/// mixture factor `mean_i F_i` to be one everywhere. Entry `j` is
/// `max_{x, y_j} |mean_i P_i(y_j|x) / P_G_factor(y_j|x[Z_j]) - 1|`,
/// with cells where both sides carry zero mass skipped. Cells whose
/// reference mass is subnormal are also skipped: progressive underflow
/// leaves too few significand bits for the ratio to mean anything.
pub fn evenness_residual(
    class: &EnvironmentClass,
    causal_model: &FactoredTransitionModel,
) -> Result<Vec<f64>> {
    let d_s = causal_model.state_space().num_features();
    let inputs = causal_model.input_space().enumerate()?;
    let m = class.size() as f64;
    let mut residuals = vec![0.0f64; d_s];
    for x in &inputs {
        for j in 0..d_s {
            let mut mean = vec![0.0f64; causal_model.state_space().arity()];
            for env in class.environments() {
                for (slot, p) in mean.iter_mut().zip(env.model.feature_marginal(j, x)?) {
                    *slot += p;
                }
            }
            mean.iter_mut().for_each(|p| *p /= m);
            let causal_row = causal_model.factor_row(j, x)?;
            for (y, (&avg, &pg)) in mean.iter().zip(causal_row).enumerate() {
                if pg == 0.0 {
                    if avg > 0.0 {
                        return Err(Error::DivisionByZeroSupport(format!(
                            "feature {j}, input {:?}, value {y}: causal mass 0, mixture mass {avg}",
                            x.values()
                        )));
                    }
                    continue;
                }
                if pg < f64::MIN_POSITIVE {
                    continue;
                }
                residuals[j] = residuals[j].max((avg / pg - 1.0).abs());
            }
        }
    }
    Ok(residuals)
}

/// Full-joint evenness residual: `max_{x, y} |mean_i P_i(y|x) /
/// P_G(y|x) - 1|`. A stricter companion diagnostic to the per-feature
/// residual; cells with zero or subnormal reference mass are skipped
/// the same way.
pub fn evenness_residual_joint<M: TransitionModel>(
    class: &EnvironmentClass,
    causal_model: &M,
) -> Result<f64> {
    let inputs = causal_model.input_space().enumerate()?;
    let states = causal_model.state_space().enumerate()?;
    let m = class.size() as f64;
    let mut residual = 0.0f64;
    for x in &inputs {
        for y in &states {
            let mut mean = 0.0;
            for env in class.environments() {
                mean += env.model.transition_prob(x, y)?;
            }
            mean /= m;
            let pg = causal_model.transition_prob(x, y)?;
            if pg == 0.0 {
                if mean > 0.0 {
                    return Err(Error::DivisionByZeroSupport(format!(
                        "input {:?}, next state {:?}: causal mass 0, mixture mass {mean}",
                        x.values(),
                        y.values()
                    )));
                }
                continue;
            }
            if pg < f64::MIN_POSITIVE {
                continue;
            }
            residual = residual.max((mean / pg - 1.0).abs());
        }
    }
    Ok(residual)
}

/// Outcome of a diversity check: whether the recorded per-environment
/// graphs intersect to exactly the declared structure, and a witness
/// edge from the symmetric difference when they do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityVerdict {
    pub pass: bool,
    pub witness: Option<(usize, usize)>,
}

/// Checks that the intersection of recorded environment graphs equals
/// the class's declared causal graph.
pub fn diversity_check(class: &EnvironmentClass) -> Result<DiversityVerdict> {
    let declared = class.causal_graph().ok_or_else(|| {
        Error::MissingGroundTruth("the class declares no causal graph".into())
    })?;
    let graphs: Vec<CausalGraph> = class
        .environments()
        .iter()
        .enumerate()
        .map(|(i, env)| {
            env.true_graph.clone().ok_or_else(|| {
                Error::MissingGroundTruth(format!("environment {i} records no graph"))
            })
        })
        .collect::<Result<_>>()?;
    let intersection = intersect_graphs(&graphs)?;
    if &intersection == declared {
        return Ok(DiversityVerdict {
            pass: true,
            witness: None,
        });
    }
    let in_both: std::collections::BTreeSet<_> = intersection.edges().collect();
    let declared_edges: std::collections::BTreeSet<_> = declared.edges().collect();
    let witness = in_both
        .symmetric_difference(&declared_edges)
        .next()
        .copied();
    Ok(DiversityVerdict {
        pass: false,
        witness,
    })
}

/// The infinite-sample limit of network estimation on the mixture over
/// `graph`: each CPT row is the exact uniform average, over inputs
/// consistent with the parent cell, of the mixture's feature marginal.
pub fn exact_mixture_bn(
    class: &EnvironmentClass,
    graph: &CausalGraph,
) -> Result<FactoredTransitionModel> {
    let s = *class.state_space();
    let a = *class.action_space();
    let n = s.arity();
    if graph.num_state_features() != s.num_features()
        || graph.num_action_features() != a.num_features()
        || graph.arity() != n
    {
        return Err(Error::DimensionMismatch(
            "graph dimensions disagree with the class spaces".into(),
        ));
    }
    let sampler = mixture_sampler(class);
    let inputs = FactoredSpace::new(s.num_features() + a.num_features(), n)?.enumerate()?;
    let mut cpts = Vec::with_capacity(s.num_features());
    for j in 0..s.num_features() {
        let scope = graph.parent_scope(j);
        let cells = n.pow(scope.len() as u32);
        let mut rows = vec![vec![0.0f64; n]; cells];
        let mut hits = vec![0u64; cells];
        let cell_space = if scope.is_empty() {
            None
        } else {
            Some(FactoredSpace::new(scope.len(), n)?)
        };
        for x in &inputs {
            let cell_idx = match &cell_space {
                None => 0,
                Some(space) => space.index_of(x.project(&scope)?.values())?,
            };
            for (slot, p) in rows[cell_idx]
                .iter_mut()
                .zip(sampler.feature_marginal(j, x)?)
            {
                *slot += p;
            }
            hits[cell_idx] += 1;
        }
        for (row, &h) in rows.iter_mut().zip(&hits) {
            row.iter_mut().for_each(|p| *p /= h as f64);
        }
        cpts.push(rows);
    }
    FactoredTransitionModel::new(s, a, graph.scopes(), cpts)
}
