//! Factored state/action spaces and discrete transition models.
//!
//! A factored space holds `d` features, each taking values in
//! `{0, .., n-1}`. Assignments are indexed in mixed radix with the last
//! feature least significant, so enumeration order is lexicographic.
//! Transition models come in two representations: a factored model with
//! one conditional probability table per next-state feature (rows
//! indexed by the feature's parent scope), and a dense tabular model
//! over the full joint space. Both implement [`TransitionModel`] so
//! estimators, planners, and diagnostics can treat them uniformly.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;
use crate::structure_learning::CausalGraph;

/// Hard cap on entries any dense enumeration may materialize or scan.
pub const ENUMERATION_LIMIT: u128 = 100_000_000;

/// Tolerance for probability rows and distributions summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A space of `d` discrete features with shared arity `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactoredSpace {
    d: usize,
    n: usize,
}

impl FactoredSpace {
    /// Creates a space with `d >= 1` features of arity `n >= 2`.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter(
                "a factored space needs at least one feature".into(),
            ));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "feature arity must be at least 2, got {n}"
            )));
        }
        Ok(FactoredSpace { d, n })
    }

    pub fn num_features(&self) -> usize {
        self.d
    }

    pub fn arity(&self) -> usize {
        self.n
    }

    /// Number of assignments, `n^d`, as a u128 to survive large spaces.
    pub fn size(&self) -> Result<u128> {
        (self.n as u128)
            .checked_pow(self.d as u32)
            .ok_or_else(|| Error::InvalidParameter("space size overflows u128".into()))
    }

    /// Number of assignments as a usize, enforcing the enumeration limit.
    /// Use before any dense pass over the space.
    pub fn dense_size(&self) -> Result<usize> {
        let size = self.size()?;
        if size > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                entries: size,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(size as usize)
    }

    pub fn validate(&self) -> Result<()> {
        FactoredSpace::new(self.d, self.n).map(|_| ())
    }

    /// Mixed-radix rank of an assignment; the last feature is least
    /// significant.
    pub fn index_of(&self, values: &[usize]) -> Result<usize> {
        if values.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "assignment has {} features, space has {}",
                values.len(),
                self.d
            )));
        }
        self.dense_size()?;
        let mut idx = 0usize;
        for &v in values {
            if v >= self.n {
                return Err(Error::OutOfRange {
                    value: v,
                    bound: self.n,
                });
            }
            idx = idx * self.n + v;
        }
        Ok(idx)
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn assignment_at(&self, index: usize) -> Result<Vec<usize>> {
        let size = self.dense_size()?;
        if index >= size {
            return Err(Error::OutOfRange {
                value: index,
                bound: size,
            });
        }
        let mut values = vec![0usize; self.d];
        let mut rem = index;
        for slot in values.iter_mut().rev() {
            *slot = rem % self.n;
            rem /= self.n;
        }
        Ok(values)
    }

    /// All assignments in index (lexicographic) order.
    pub fn enumerate(&self) -> Result<Vec<FeatureVector>> {
        let size = self.dense_size()?;
        let mut out = Vec::with_capacity(size);
        for idx in 0..size {
            out.push(FeatureVector(self.assignment_at(idx)?));
        }
        Ok(out)
    }
}

/// An assignment of one value per feature.
///
/// The wrapper is deliberately thin: invariants live in the spaces, and
/// every model operation revalidates conformance on entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<usize>);

impl FeatureVector {
    /// Builds a vector after checking it conforms to `space`.
    pub fn new(values: Vec<usize>, space: &FactoredSpace) -> Result<Self> {
        let fv = FeatureVector(values);
        fv.check_conforms(space)?;
        Ok(fv)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn conforms(&self, space: &FactoredSpace) -> bool {
        self.0.len() == space.num_features() && self.0.iter().all(|&v| v < space.arity())
    }

    pub fn check_conforms(&self, space: &FactoredSpace) -> Result<()> {
        if self.0.len() != space.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has {} entries, space has {} features",
                self.0.len(),
                space.num_features()
            )));
        }
        for &v in &self.0 {
            if v >= space.arity() {
                return Err(Error::OutOfRange {
                    value: v,
                    bound: space.arity(),
                });
            }
        }
        Ok(())
    }

    /// Restriction to the listed feature indices, in the listed order.
    pub fn project(&self, scope: &[usize]) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(scope.len());
        for &i in scope {
            let v = *self.0.get(i).ok_or(Error::OutOfRange {
                value: i,
                bound: self.0.len(),
            })?;
            values.push(v);
        }
        Ok(FeatureVector(values))
    }

    /// Concatenation of a state and an action into a joint input vector.
    pub fn join(state: &FeatureVector, action: &FeatureVector) -> FeatureVector {
        let mut values = state.0.clone();
        values.extend_from_slice(&action.0);
        FeatureVector(values)
    }
}

/// Mixed-radix rank of a scope projection, last scope entry least
/// significant. Empty scopes rank to the single cell 0.
fn scope_cell_rank(values: &[usize], scope: &[usize], n: usize) -> Result<usize> {
    let mut idx = 0usize;
    for &i in scope {
        let v = *values.get(i).ok_or(Error::OutOfRange {
            value: i,
            bound: values.len(),
        })?;
        if v >= n {
            return Err(Error::OutOfRange { value: v, bound: n });
        }
        idx = idx * n + v;
    }
    Ok(idx)
}

fn check_probability_row(row: &[f64], n: usize, what: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {n}",
            row.len()
        )));
    }
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} contains a negative or non-finite probability"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, expected 1 within {ROW_SUM_TOLERANCE}"
        )));
    }
    Ok(())
}

/// Common interface over transition model representations.
///
/// Inputs are joint state+action vectors over the input space of
/// `d_S + d_A` features; outputs are next-state vectors over the state
/// space.
pub trait TransitionModel {
    fn state_space(&self) -> &FactoredSpace;
    fn action_space(&self) -> &FactoredSpace;

    /// The combined input space: state features followed by action
    /// features, shared arity.
    fn input_space(&self) -> FactoredSpace {
        let d = self.state_space().num_features() + self.action_space().num_features();
        FactoredSpace {
            d,
            n: self.state_space().arity(),
        }
    }

    /// `P(y | x)` for a joint input `x` and next state `y`.
    fn transition_prob(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64>;

    /// Draws a next state from `P(. | x)`.
    fn sample_transition(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Result<FeatureVector>;

    /// Marginal distribution of next-state feature `j` given input `x`.
    fn feature_marginal(&self, j: usize, x: &FeatureVector) -> Result<Vec<f64>>;

    /// Dense next-state distribution over state indices for input `x`.
    fn next_distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let states = self.state_space().enumerate()?;
        let mut row = Vec::with_capacity(states.len());
        for y in &states {
            row.push(self.transition_prob(x, y)?);
        }
        Ok(row)
    }
}

/// A transition model factored per next-state feature.
///
/// Feature `j` of the next state depends on the joint input only through
/// the parent scope `scopes[j]` (indices into the input vector), with
/// one probability row per parent-cell assignment:
/// `P(y | x) = prod_j P_j(y[j] | x[scopes[j]])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredTransitionModel {
    state_space: FactoredSpace,
    action_space: FactoredSpace,
    scopes: Vec<Vec<usize>>,
    cpts: Vec<Vec<Vec<f64>>>,
}

impl FactoredTransitionModel {
    /// Builds and validates a factored model.
    ///
    /// `scopes[j]` must be strictly increasing indices into the joint
    /// input vector, and `cpts[j]` must hold one probability row of
    /// length `n` per parent cell, in parent-cell index order
    /// (`n^{|scopes[j]|}` rows).
    pub fn new(
        state_space: FactoredSpace,
        action_space: FactoredSpace,
        scopes: Vec<Vec<usize>>,
        cpts: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let model = FactoredTransitionModel {
            state_space,
            action_space,
            scopes,
            cpts,
        };
        model.validate()?;
        Ok(model)
    }

    /// Revalidates all structural invariants; call after deserializing.
    pub fn validate(&self) -> Result<()> {
        self.state_space.validate()?;
        self.action_space.validate()?;
        let n = self.state_space.arity();
        if self.action_space.arity() != n {
            return Err(Error::DimensionMismatch(format!(
                "state features have arity {n}, action features have arity {}",
                self.action_space.arity()
            )));
        }
        let d_s = self.state_space.num_features();
        let d_in = d_s + self.action_space.num_features();
        if self.scopes.len() != d_s || self.cpts.len() != d_s {
            return Err(Error::DimensionMismatch(format!(
                "expected {d_s} scopes and tables, got {} and {}",
                self.scopes.len(),
                self.cpts.len()
            )));
        }
        for (j, scope) in self.scopes.iter().enumerate() {
            for w in scope.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidParameter(format!(
                        "scope of feature {j} must be strictly increasing"
                    )));
                }
            }
            if let Some(&last) = scope.last() {
                if last >= d_in {
                    return Err(Error::OutOfRange {
                        value: last,
                        bound: d_in,
                    });
                }
            }
            let cells = (n as u128)
                .checked_pow(scope.len() as u32)
                .filter(|&c| c <= ENUMERATION_LIMIT)
                .ok_or(Error::EnumerationTooLarge {
                    entries: u128::MAX,
                    limit: ENUMERATION_LIMIT,
                })? as usize;
            if self.cpts[j].len() != cells {
                return Err(Error::DimensionMismatch(format!(
                    "feature {j} has {} parent cells, expected {cells}",
                    self.cpts[j].len()
                )));
            }
            for (cell, row) in self.cpts[j].iter().enumerate() {
                check_probability_row(row, n, &format!("row {cell} of feature {j}"))?;
            }
        }
        Ok(())
    }

    pub fn scopes(&self) -> &[Vec<usize>] {
        &self.scopes
    }

    pub fn cpt(&self, j: usize) -> &[Vec<f64>] {
        &self.cpts[j]
    }

    /// Largest parent-scope size across next-state features.
    pub fn max_in_degree(&self) -> usize {
        self.scopes.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Parent-cell index of input `x` for next-state feature `j`.
    pub fn scope_cell_index(&self, j: usize, x: &FeatureVector) -> Result<usize> {
        let scope = self.scopes.get(j).ok_or(Error::OutOfRange {
            value: j,
            bound: self.scopes.len(),
        })?;
        x.check_conforms(&self.input_space())?;
        scope_cell_rank(x.values(), scope, self.state_space.arity())
    }

    /// The probability row of feature `j` at input `x`.
    pub fn factor_row(&self, j: usize, x: &FeatureVector) -> Result<&[f64]> {
        let cell = self.scope_cell_index(j, x)?;
        Ok(&self.cpts[j][cell])
    }

    /// Expands to a dense tabular model over the joint spaces.
    pub fn to_tabular(&self) -> Result<TabularTransitionModel> {
        let inputs = self.input_space().enumerate()?;
        let states = self.state_space.enumerate()?;
        let entries = inputs.len() as u128 * states.len() as u128;
        if entries > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                entries,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut rows = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let mut row = Vec::with_capacity(states.len());
            for y in &states {
                row.push(self.transition_prob(x, y)?);
            }
            rows.push(row);
        }
        TabularTransitionModel::new(self.state_space, self.action_space, rows)
    }
}

impl TransitionModel for FactoredTransitionModel {
    fn state_space(&self) -> &FactoredSpace {
        &self.state_space
    }

    fn action_space(&self) -> &FactoredSpace {
        &self.action_space
    }

    fn transition_prob(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
        y.check_conforms(&self.state_space)?;
        let mut p = 1.0;
        for j in 0..self.scopes.len() {
            let row = self.factor_row(j, x)?;
            p *= row[y.0[j]];
        }
        Ok(p)
    }

    fn sample_transition(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(self.scopes.len());
        for j in 0..self.scopes.len() {
            let row = self.factor_row(j, x)?;
            values.push(sample_categorical(row, rng));
        }
        Ok(FeatureVector(values))
    }

    fn feature_marginal(&self, j: usize, x: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.factor_row(j, x)?.to_vec())
    }
}

/// A dense transition model: one next-state distribution per joint input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularTransitionModel {
    state_space: FactoredSpace,
    action_space: FactoredSpace,
    rows: Vec<Vec<f64>>,
}

impl TabularTransitionModel {
    pub fn new(
        state_space: FactoredSpace,
        action_space: FactoredSpace,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let model = TabularTransitionModel {
            state_space,
            action_space,
            rows,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.state_space.validate()?;
        self.action_space.validate()?;
        if self.state_space.arity() != self.action_space.arity() {
            return Err(Error::DimensionMismatch(
                "state and action features must share one arity".into(),
            ));
        }
        let inputs = self.input_space().dense_size()?;
        let states = self.state_space.dense_size()?;
        if self.rows.len() != inputs {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for {inputs} joint inputs",
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            check_probability_row(row, states, &format!("row {i}"))?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

impl TransitionModel for TabularTransitionModel {
    fn state_space(&self) -> &FactoredSpace {
        &self.state_space
    }

    fn action_space(&self) -> &FactoredSpace {
        &self.action_space
    }

    fn transition_prob(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
        let xi = self.input_space().index_of(x.values())?;
        let yi = self.state_space.index_of(y.values())?;
        Ok(self.rows[xi][yi])
    }

    fn sample_transition(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Result<FeatureVector> {
        let xi = self.input_space().index_of(x.values())?;
        let yi = sample_categorical(&self.rows[xi], rng);
        Ok(FeatureVector(self.state_space.assignment_at(yi)?))
    }

    fn feature_marginal(&self, j: usize, x: &FeatureVector) -> Result<Vec<f64>> {
        let d_s = self.state_space.num_features();
        if j >= d_s {
            return Err(Error::OutOfRange {
                value: j,
                bound: d_s,
            });
        }
        let xi = self.input_space().index_of(x.values())?;
        let n = self.state_space.arity();
        // Stride of feature j in the state index (last feature least
        // significant).
        let stride = n.pow((d_s - 1 - j) as u32);
        let mut marginal = vec![0.0; n];
        for (yi, &p) in self.rows[xi].iter().enumerate() {
            marginal[(yi / stride) % n] += p;
        }
        Ok(marginal)
    }

    fn next_distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let xi = self.input_space().index_of(x.values())?;
        Ok(self.rows[xi].clone())
    }
}

/// Either transition model representation, as stored by environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentModel {
    Factored(FactoredTransitionModel),
    Tabular(TabularTransitionModel),
}

impl EnvironmentModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvironmentModel::Factored(m) => m.validate(),
            EnvironmentModel::Tabular(m) => m.validate(),
        }
    }

    pub fn as_factored(&self) -> Option<&FactoredTransitionModel> {
        match self {
            EnvironmentModel::Factored(m) => Some(m),
            EnvironmentModel::Tabular(_) => None,
        }
    }
}

impl TransitionModel for EnvironmentModel {
    fn state_space(&self) -> &FactoredSpace {
        match self {
            EnvironmentModel::Factored(m) => m.state_space(),
            EnvironmentModel::Tabular(m) => m.state_space(),
        }
    }

    fn action_space(&self) -> &FactoredSpace {
        match self {
            EnvironmentModel::Factored(m) => m.action_space(),
            EnvironmentModel::Tabular(m) => m.action_space(),
        }
    }

    fn transition_prob(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
        match self {
            EnvironmentModel::Factored(m) => m.transition_prob(x, y),
            EnvironmentModel::Tabular(m) => m.transition_prob(x, y),
        }
    }

    fn sample_transition(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Result<FeatureVector> {
        match self {
            EnvironmentModel::Factored(m) => m.sample_transition(x, rng),
            EnvironmentModel::Tabular(m) => m.sample_transition(x, rng),
        }
    }

    fn feature_marginal(&self, j: usize, x: &FeatureVector) -> Result<Vec<f64>> {
        match self {
            EnvironmentModel::Factored(m) => m.feature_marginal(j, x),
            EnvironmentModel::Tabular(m) => m.feature_marginal(j, x),
        }
    }

    fn next_distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        match self {
            EnvironmentModel::Factored(m) => m.next_distribution(x),
            EnvironmentModel::Tabular(m) => m.next_distribution(x),
        }
    }
}

/// One member environment: a transition model, an optional recorded
/// causal graph (available for synthetic environments), and an initial
/// state distribution over state indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub model: EnvironmentModel,
    pub true_graph: Option<CausalGraph>,
    pub initial_distribution: Vec<f64>,
}

impl Environment {
    pub fn new(
        model: EnvironmentModel,
        true_graph: Option<CausalGraph>,
        initial_distribution: Vec<f64>,
    ) -> Result<Self> {
        let env = Environment {
            model,
            true_graph,
            initial_distribution,
        };
        env.validate()?;
        Ok(env)
    }

    /// A uniform initial distribution for the model's state space.
    pub fn uniform_initial(model: &EnvironmentModel) -> Result<Vec<f64>> {
        let states = model.state_space().dense_size()?;
        Ok(vec![1.0 / states as f64; states])
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let states = self.model.state_space().dense_size()?;
        check_probability_row(&self.initial_distribution, states, "initial distribution")?;
        if let Some(g) = &self.true_graph {
            let d_s = self.model.state_space().num_features();
            let d_a = self.model.action_space().num_features();
            if g.num_state_features() != d_s || g.num_action_features() != d_a {
                return Err(Error::DimensionMismatch(
                    "recorded graph shape disagrees with the model spaces".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Largest L1 distance between next-state distributions over all joint
/// inputs: `sup_x sum_y |p(y|x) - q(y|x)|`.
///
/// A pseudometric on transition models sharing spaces; zero means the
/// models agree on every input.
pub fn sup_l1_distance<P, Q>(p: &P, q: &Q) -> Result<f64>
where
    P: TransitionModel + ?Sized,
    Q: TransitionModel + ?Sized,
{
    if p.state_space() != q.state_space() || p.action_space() != q.action_space() {
        return Err(Error::DimensionMismatch(
            "models must share state and action spaces".into(),
        ));
    }
    let inputs = p.input_space().enumerate()?;
    let states = p.state_space().dense_size()?;
    let entries = inputs.len() as u128 * states as u128;
    if entries > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            entries,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut sup = 0.0f64;
    for x in &inputs {
        let pr = p.next_distribution(x)?;
        let qr = q.next_distribution(x)?;
        let l1: f64 = pr.iter().zip(&qr).map(|(a, b)| (a - b).abs()).sum();
        sup = sup.max(l1);
    }
    Ok(sup)
}
