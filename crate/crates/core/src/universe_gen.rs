//! Synthetic universe construction: linear Gaussian feature dynamics
//! binned through the Gaussian CDF, with per-environment perturbations
//! and margin-enforced regeneration.
//!
//! A universe is an environment class built around a shared causal
//! pattern. The pattern is a linear Gaussian model per next-state
//! feature (`mu_j = intercept_j + sum_z c_{j,z} x_z`, noise `sigma`,
//! values binned at fixed thresholds); its nonzero coefficients define
//! the causal graph. Each environment perturbs the pattern, either by
//! adding independent noise to every coefficient or by skewing CPT rows
//! in exactly cancelling pairs. The generator rejects draws whose exact
//! dependence structure is ambiguous: every causal edge must stay
//! clearly detectable in every environment and every non-edge clearly
//! absent somewhere, so the recorded per-environment graphs provably
//! intersect back to the pattern.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ctm_pipeline::{evenness_residual, lambda_sufficiency, EnvironmentClass};
use crate::error::{Error, Result};
use crate::factored_mdp::{
    Environment, EnvironmentModel, FactoredSpace, FactoredTransitionModel, TransitionModel,
};
use crate::rng::stream;
use crate::structure_learning::{dependence_table, epsilon_dependency_subgraph, CausalGraph};

/// Threshold at which per-environment graphs are recorded.
pub const DEFAULT_GRAPH_EPSILON: f64 = 0.05;
/// Minimum exact dependence every causal edge must show in every
/// environment.
pub const DEFAULT_DETECT_FLOOR: f64 = 0.08;
/// Maximum exact dependence a non-edge may show in its most favorable
/// environment.
pub const DEFAULT_ELIM_CEILING: f64 = 0.025;
/// Rejection rounds before a spec is declared infeasible.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 10_000;

/// Cap on the per-row skew factors used by mirrored perturbations,
/// keeping every perturbed row a valid distribution.
const MAX_FACTOR_SKEW: f64 = 0.3;

fn default_graph_epsilon() -> f64 {
    DEFAULT_GRAPH_EPSILON
}

fn default_detect_floor() -> f64 {
    DEFAULT_DETECT_FLOOR
}

fn default_elim_ceiling() -> f64 {
    DEFAULT_ELIM_CEILING
}

fn default_max_attempts() -> u64 {
    DEFAULT_MAX_ATTEMPTS
}

/// Linear Gaussian dynamics for the next-state features: feature `j`
/// is drawn from `N(intercept_j + sum_z coefficients[j][z] x_z,
/// sigma^2)` and binned at `thresholds`. Zero coefficients mark absent
/// causal edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSpec {
    pub intercepts: Vec<f64>,
    /// One row per next-state feature, one column per joint input
    /// feature (state features first, then action features).
    pub coefficients: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Ascending bin boundaries; values land in bins
    /// `(-inf, t_0], (t_0, t_1], ..., (t_{n-2}, inf)`.
    pub thresholds: Vec<f64>,
}

impl LinearGaussianSpec {
    pub fn validate(&self, d_s: usize, d_a: usize, n: usize) -> Result<()> {
        if self.intercepts.len() != d_s {
            return Err(Error::DimensionMismatch(format!(
                "{} intercepts for {} state features",
                self.intercepts.len(),
                d_s
            )));
        }
        if self.coefficients.len() != d_s {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient rows for {} state features",
                self.coefficients.len(),
                d_s
            )));
        }
        for (j, row) in self.coefficients.iter().enumerate() {
            if row.len() != d_s + d_a {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient row {} has {} entries, expected {}",
                    j,
                    row.len(),
                    d_s + d_a
                )));
            }
            if row.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "coefficient row {j} contains a non-finite entry"
                )));
            }
        }
        if self.intercepts.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "intercepts must be finite".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise level must be positive and finite, got {}",
                self.sigma
            )));
        }
        check_thresholds(&self.thresholds, n)?;
        Ok(())
    }

    /// Sorted nonzero-coefficient indices per next-state feature.
    pub fn scopes(&self) -> Vec<Vec<usize>> {
        self.coefficients
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(z, _)| z)
                    .collect()
            })
            .collect()
    }

    pub fn max_in_degree(&self) -> usize {
        self.scopes().iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// How environments perturb the causal pattern.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent Gaussian noise on every coefficient of every
    /// environment, including zero coefficients; environment dynamics
    /// then depend on every input feature.
    #[default]
    Independent,
    /// Row-level skew factors drawn in exactly cancelling pairs, so the
    /// uniform mixture over environments reproduces the causal pattern
    /// bit for bit; an odd class gets one exact copy of the pattern.
    MirroredEvenness,
}

/// Everything needed to draw a universe: spaces, the causal pattern,
/// the perturbation mode and magnitude, class size, seed, and the
/// margins the rejection loop enforces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub d_s: usize,
    pub d_a: usize,
    pub n: usize,
    pub causal: LinearGaussianSpec,
    /// Standard deviation of the per-environment perturbations.
    pub noise_scale: f64,
    /// Number of environments.
    pub m: usize,
    /// Declared sparsity bound; the causal pattern must respect it.
    pub z: usize,
    pub seed: u64,
    /// Initial state distribution; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_graph_epsilon")]
    pub graph_epsilon: f64,
    #[serde(default = "default_detect_floor")]
    pub detect_floor: f64,
    #[serde(default = "default_elim_ceiling")]
    pub elim_ceiling: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
}

impl UniverseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_s < 1 || self.d_a < 1 {
            return Err(Error::InvalidParameter(
                "state and action spaces need at least one feature each".into(),
            ));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "feature arity must be at least 2, got {}",
                self.n
            )));
        }
        if self.m < 1 {
            return Err(Error::InvalidParameter(
                "a universe needs at least one environment".into(),
            ));
        }
        self.causal.validate(self.d_s, self.d_a, self.n)?;
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "perturbation scale must be nonnegative and finite, got {}",
                self.noise_scale
            )));
        }
        if !(self.graph_epsilon > 0.0 && self.graph_epsilon <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "graph recording threshold must lie in (0, 2], got {}",
                self.graph_epsilon
            )));
        }
        if !(self.detect_floor >= self.graph_epsilon && self.detect_floor <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "detection floor {} must lie in [graph threshold {}, 2]",
                self.detect_floor, self.graph_epsilon
            )));
        }
        if !(self.elim_ceiling >= 0.0 && self.elim_ceiling < self.graph_epsilon) {
            return Err(Error::InvalidParameter(format!(
                "elimination ceiling {} must lie in [0, graph threshold {})",
                self.elim_ceiling, self.graph_epsilon
            )));
        }
        if self.max_attempts < 1 {
            return Err(Error::InvalidParameter(
                "at least one generation attempt is needed".into(),
            ));
        }
        if let Some(mu) = &self.mu {
            let states = FactoredSpace::new(self.d_s, self.n)?.dense_size()?;
            if mu.len() != states {
                return Err(Error::DimensionMismatch(format!(
                    "initial distribution has {} entries for {} states",
                    mu.len(),
                    states
                )));
            }
        }
        Ok(())
    }

    /// The causal pattern's graph: one edge per nonzero coefficient,
    /// without a sparsity bound attached.
    pub fn pattern_graph(&self) -> Result<CausalGraph> {
        let mut edges = Vec::new();
        for (j, scope) in self.causal.scopes().iter().enumerate() {
            for &z in scope {
                edges.push((z, j));
            }
        }
        CausalGraph::from_edges(self.d_s, self.d_a, self.n, edges)
    }

    /// The exact transition model of the causal pattern.
    pub fn pattern_model(&self) -> Result<FactoredTransitionModel> {
        linear_gaussian_model(
            self.d_s,
            self.d_a,
            self.n,
            &self.causal.intercepts,
            &self.causal.coefficients,
            self.causal.sigma,
            &self.causal.thresholds,
        )
    }

    fn initial_distribution(&self) -> Result<Vec<f64>> {
        match &self.mu {
            Some(mu) => Ok(mu.clone()),
            None => {
                let states = FactoredSpace::new(self.d_s, self.n)?.dense_size()?;
                Ok(vec![1.0 / states as f64; states])
            }
        }
    }
}

fn check_thresholds(thresholds: &[f64], n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "binning needs at least 2 values, got {n}"
        )));
    }
    if thresholds.len() != n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {} bins",
            thresholds.len(),
            n
        )));
    }
    for w in thresholds.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must ascend strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("thresholds must be finite".into()));
    }
    Ok(())
}

/// Mass of `N(mu, sigma^2)` in each of the bins cut at `thresholds`:
/// `(-inf, t_0], (t_0, t_1], ..., (t_{n-2}, inf)`.
pub fn gaussian_bin_cpt_at(mu: f64, sigma: f64, thresholds: &[f64]) -> Result<Vec<f64>> {
    check_thresholds(thresholds, thresholds.len() + 1)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bin masses need a positive finite noise level, got {sigma}"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bin masses need a finite mean, got {mu}"
        )));
    }
    let standard = Normal::new(0.0, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("invalid Gaussian: {e}")))?;
    let phi = |v: f64| standard.cdf(v);
    let z: Vec<f64> = thresholds.iter().map(|t| (t - mu) / sigma).collect();
    let n = z.len() + 1;
    let mut row = Vec::with_capacity(n);
    row.push(phi(z[0]).max(0.0));
    for k in 1..n - 1 {
        // Evaluate each interior bin from the nearer tail so masses far
        // from the mean keep full precision instead of cancelling to 0.
        let (za, zb) = (z[k - 1], z[k]);
        let mass = if za + zb <= 0.0 {
            phi(zb) - phi(za)
        } else {
            phi(-za) - phi(-zb)
        };
        row.push(mass.max(0.0));
    }
    row.push(phi(-z[n - 2]).max(0.0));
    Ok(row)
}

/// Mass of `N(mu, sigma^2)` in `n` bins cut at the half-integers
/// `0.5, 1.5, ..., n - 1.5`, so bin `v` collects the mass rounding to
/// value `v` (with saturating boundary bins).
pub fn gaussian_bin_cpt(mu: f64, sigma: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "binning needs at least 2 values, got {n}"
        )));
    }
    let thresholds: Vec<f64> = (0..n - 1).map(|v| v as f64 + 0.5).collect();
    gaussian_bin_cpt_at(mu, sigma, &thresholds)
}

fn linear_gaussian_model(
    d_s: usize,
    d_a: usize,
    n: usize,
    intercepts: &[f64],
    coefficients: &[Vec<f64>],
    sigma: f64,
    thresholds: &[f64],
) -> Result<FactoredTransitionModel> {
    let state_space = FactoredSpace::new(d_s, n)?;
    let action_space = FactoredSpace::new(d_a, n)?;
    let mut scopes = Vec::with_capacity(d_s);
    let mut cpts = Vec::with_capacity(d_s);
    for j in 0..d_s {
        let scope: Vec<usize> = coefficients[j]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(z, _)| z)
            .collect();
        let mut rows;
        if scope.is_empty() {
            rows = vec![gaussian_bin_cpt_at(intercepts[j], sigma, thresholds)?];
        } else {
            let cell_space = FactoredSpace::new(scope.len(), n)?;
            let cells = cell_space.dense_size()?;
            rows = Vec::with_capacity(cells);
            for cell in 0..cells {
                let assignment = cell_space.assignment_at(cell)?;
                let mut mu = intercepts[j];
                for (value, &z) in assignment.iter().zip(&scope) {
                    mu += coefficients[j][z] * *value as f64;
                }
                rows.push(gaussian_bin_cpt_at(mu, sigma, thresholds)?);
            }
        }
        scopes.push(scope);
        cpts.push(rows);
    }
    FactoredTransitionModel::new(state_space, action_space, scopes, cpts)
}

/// Environment models under independent coefficient noise: every
/// coefficient entry, zero or not, gets `noise_scale` Gaussian noise;
/// draws are consumed sequentially per environment, feature-major.
fn independent_models(
    spec: &UniverseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FactoredTransitionModel>> {
    let d_in = spec.d_s + spec.d_a;
    let mut models = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let mut coefficients = spec.causal.coefficients.clone();
        for row in coefficients.iter_mut().take(spec.d_s) {
            for c in row.iter_mut().take(d_in) {
                let e: f64 = rng.sample(StandardNormal);
                *c += spec.noise_scale * e;
            }
        }
        models.push(linear_gaussian_model(
            spec.d_s,
            spec.d_a,
            spec.n,
            &spec.causal.intercepts,
            &coefficients,
            spec.causal.sigma,
            &spec.causal.thresholds,
        )?);
    }
    Ok(models)
}

/// Environment models under mirrored row skews. Pair `2t, 2t+1` shares
/// per-row factors `1 + g` and `1 - g` with `g` recentered to keep row
/// sums exact and clamped to `MAX_FACTOR_SKEW`; the pair average
/// reproduces the pattern row exactly. Odd classes end with an exact
/// pattern copy.
fn mirrored_models(
    spec: &UniverseSpec,
    pattern: &FactoredTransitionModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FactoredTransitionModel>> {
    let n = spec.n;
    let mut models = Vec::with_capacity(spec.m);
    for _ in 0..spec.m / 2 {
        let mut plus_cpts = Vec::with_capacity(spec.d_s);
        let mut minus_cpts = Vec::with_capacity(spec.d_s);
        for j in 0..spec.d_s {
            let base = pattern.cpt(j);
            let mut plus_rows = Vec::with_capacity(base.len());
            let mut minus_rows = Vec::with_capacity(base.len());
            for row in base {
                let u: Vec<f64> = (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        1.5 * spec.noise_scale * e
                    })
                    .collect();
                let centered: f64 = row.iter().zip(&u).map(|(p, v)| p * v).sum();
                let mut g: Vec<f64> = u.iter().map(|v| v - centered).collect();
                let worst = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                if worst > MAX_FACTOR_SKEW {
                    let scale = MAX_FACTOR_SKEW / worst;
                    g.iter_mut().for_each(|v| *v *= scale);
                }
                plus_rows.push(row.iter().zip(&g).map(|(p, v)| p * (1.0 + v)).collect());
                minus_rows.push(row.iter().zip(&g).map(|(p, v)| p * (1.0 - v)).collect());
            }
            plus_cpts.push(plus_rows);
            minus_cpts.push(minus_rows);
        }
        for cpts in [plus_cpts, minus_cpts] {
            models.push(FactoredTransitionModel::new(
                *pattern.state_space(),
                *pattern.action_space(),
                pattern.scopes().to_vec(),
                cpts,
            )?);
        }
    }
    if spec.m % 2 == 1 {
        models.push(pattern.clone());
    }
    Ok(models)
}

fn perturbed_models(
    spec: &UniverseSpec,
    pattern: &FactoredTransitionModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FactoredTransitionModel>> {
    match spec.noise_mode {
        NoiseMode::Independent => independent_models(spec, rng),
        NoiseMode::MirroredEvenness => mirrored_models(spec, pattern, rng),
    }
}

/// Margin check the rejection loop enforces: every causal edge shows
/// exact dependence at least `detect_floor` in every environment, and
/// every non-edge shows at most `elim_ceiling` in at least one.
fn margins_hold(
    spec: &UniverseSpec,
    pattern_graph: &CausalGraph,
    models: &[FactoredTransitionModel],
) -> Result<bool> {
    let d_in = spec.d_s + spec.d_a;
    let mut weakest = vec![vec![f64::INFINITY; spec.d_s]; d_in];
    for model in models {
        let table = dependence_table(model)?;
        for (z, row) in table.iter().enumerate() {
            for (j, &dep) in row.iter().enumerate() {
                if pattern_graph.contains(z, j) {
                    if dep < spec.detect_floor {
                        return Ok(false);
                    }
                } else if dep < weakest[z][j] {
                    weakest[z][j] = dep;
                }
            }
        }
    }
    for z in 0..d_in {
        for j in 0..spec.d_s {
            if !pattern_graph.contains(z, j) && weakest[z][j] > spec.elim_ceiling {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A generated universe: the class itself, the spec that produced it,
/// and the achieved diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedUniverse {
    pub class: EnvironmentClass,
    pub spec: UniverseSpec,
    pub attempts_used: u64,
    /// Largest sup-L1 gap between an environment and the pattern.
    pub lambda: f64,
    /// Per-feature evenness residual of the class against the pattern.
    pub evenness: Vec<f64>,
}

fn assemble(
    spec: &UniverseSpec,
    pattern: FactoredTransitionModel,
    pattern_graph: CausalGraph,
    models: Vec<FactoredTransitionModel>,
    attempts_used: u64,
) -> Result<GeneratedUniverse> {
    let mu = spec.initial_distribution()?;
    let environments = models
        .into_iter()
        .map(|model| {
            let recorded = epsilon_dependency_subgraph(&model, spec.graph_epsilon)?;
            Environment::new(
                EnvironmentModel::Factored(model),
                Some(recorded),
                mu.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let class = EnvironmentClass::new(environments, Some(pattern_graph), Some(pattern))?;
    let pattern = class.causal_model().expect("pattern attached above");
    let lambda = lambda_sufficiency(&class, pattern)?;
    let evenness = evenness_residual(&class, pattern)?;
    Ok(GeneratedUniverse {
        spec: spec.clone(),
        attempts_used,
        lambda,
        evenness,
        class,
    })
}

/// Draws a universe from `spec`, rejecting attempts until the
/// dependence margins hold; the margins make the recorded environment
/// graphs intersect to exactly the causal pattern.
///
/// Attempt `a` derives its stream from `(seed, a)`, so the result is a
/// deterministic function of the spec.
pub fn random_universe(spec: &UniverseSpec) -> Result<GeneratedUniverse> {
    spec.validate()?;
    let pattern_graph = spec.pattern_graph()?;
    if pattern_graph.max_in_degree() > spec.z {
        return Err(Error::SpecInfeasible(format!(
            "declared sparsity {} below the causal pattern's max in-degree {}",
            spec.z,
            pattern_graph.max_in_degree()
        )));
    }
    let pattern = spec.pattern_model()?;
    for attempt in 0..spec.max_attempts {
        let mut rng = stream(spec.seed, &[attempt]);
        let models = perturbed_models(spec, &pattern, &mut rng)?;
        if margins_hold(spec, &pattern_graph, &models)? {
            return assemble(spec, pattern, pattern_graph, models, attempt + 1);
        }
    }
    Err(Error::SpecInfeasible(format!(
        "no attempt out of {} met the dependence margins",
        spec.max_attempts
    )))
}

/// The wellness domain spec: two ternary state features (activity,
/// wellbeing) and five ternary lifestyle action features (physical,
/// social, diet, cognitive, stress management).
///
/// Next activity centers on `A + 0.5 S + 0.2 D + 0.8 St - 0.8`; next
/// wellbeing on `W - 0.5 P - 0.5 D + 1`; both with noise 0.1 and bins
/// cut at 0.5 and 1.5. The causal graph has seven edges and max
/// in-degree 4. Environments add independent noise of scale 0.1 to
/// every coefficient.
pub fn wellness_universe_spec(m: usize, seed: u64) -> UniverseSpec {
    UniverseSpec {
        d_s: 2,
        d_a: 5,
        n: 3,
        causal: LinearGaussianSpec {
            intercepts: vec![-0.8, 1.0],
            coefficients: vec![
                vec![1.0, 0.0, 0.0, 0.5, 0.2, 0.0, 0.8],
                vec![0.0, 1.0, -0.5, 0.0, -0.5, 0.0, 0.0],
            ],
            sigma: 0.1,
            thresholds: vec![0.5, 1.5],
        },
        noise_scale: 0.1,
        m,
        z: 4,
        seed,
        mu: None,
        noise_mode: NoiseMode::Independent,
        graph_epsilon: DEFAULT_GRAPH_EPSILON,
        detect_floor: DEFAULT_DETECT_FLOOR,
        elim_ceiling: DEFAULT_ELIM_CEILING,
        max_attempts: DEFAULT_MAX_ATTEMPTS,
    }
}

/// Builds the wellness universe directly, without the margin-enforced
/// rejection loop: the construction for a given `(m, seed)` is pure and
/// identical to [`random_universe`]'s first attempt on the wellness
/// spec.
pub fn build_wellness_universe(m: usize, seed: u64) -> Result<GeneratedUniverse> {
    let spec = wellness_universe_spec(m, seed);
    spec.validate()?;
    let pattern = spec.pattern_model()?;
    let pattern_graph = spec.pattern_graph()?;
    let mut rng = stream(seed, &[0]);
    let models = perturbed_models(&spec, &pattern, &mut rng)?;
    assemble(&spec, pattern, pattern_graph, models, 1)
}

/// Draws one additional environment from the universe's noise law,
/// outside any generated class.
///
/// The draw shares spaces, initial distribution, and causal pattern
/// with classes built from `spec`, but its stream depends only on
/// `seed`, so with a seed disjoint from the class streams it serves as
/// a held-out evaluation environment. No margin conditioning is
/// applied: this is a plain draw from the perturbation law.
///
/// In mirrored mode a fresh pair is drawn and its first member
/// returned, so the draw follows a class member's marginal law instead
/// of collapsing to the exact pattern copy a one-member mirrored class
/// would produce.
pub fn held_out_environment(spec: &UniverseSpec, seed: u64) -> Result<Environment> {
    spec.validate()?;
    let pattern = spec.pattern_model()?;
    let mut draw_spec = spec.clone();
    draw_spec.m = match spec.noise_mode {
        NoiseMode::Independent => 1,
        NoiseMode::MirroredEvenness => 2,
    };
    let mut rng = stream(seed, &[0]);
    let models = perturbed_models(&draw_spec, &pattern, &mut rng)?;
    let model = models.into_iter().next().expect("draw produced a model");
    let recorded = epsilon_dependency_subgraph(&model, spec.graph_epsilon)?;
    Environment::new(
        EnvironmentModel::Factored(model),
        Some(recorded),
        spec.initial_distribution()?,
    )
}
