//! Bipartite causal structure estimation and graph algebra.
//!
//! The causal structure of a factored MDP is a directed bipartite graph
//! from input features `X0..X{d_S+d_A-1}` (current state then action)
//! to next-state features `Y0..Y{d_S-1}`. Structure estimation draws
//! one batch of iid transitions with uniformly distributed inputs and
//! runs the pairwise L1 independence tester on every (input feature,
//! next feature) pair; an edge is recorded exactly when the tester says
//! Dependent. Graph intersection across environments and edit distance
//! against ground truth support the multi-environment pipeline and its
//! evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factored_mdp::{Environment, FactoredTransitionModel, TransitionModel};
use crate::independence_testing::{independence_test, EmpiricalJoint, TestVerdict, Verdict};

/// A directed bipartite dependency graph over feature pairs `(z, j)`,
/// `z` indexing the joint input vector and `j` the next state.
///
/// Only X-to-Y edges are representable, so acyclicity and orientation
/// hold by construction. An optional sparsity bound caps the in-degree
/// of every next-state feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    d_s: usize,
    d_a: usize,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_sparsity: Option<usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl CausalGraph {
    /// An empty graph over `d_s` next-state features and `d_s + d_a`
    /// input features of arity `n`.
    pub fn new(d_s: usize, d_a: usize, n: usize) -> Result<Self> {
        if d_s == 0 || d_a == 0 {
            return Err(Error::InvalidParameter(
                "a causal graph needs at least one state and one action feature".into(),
            ));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "feature arity must be at least 2, got {n}"
            )));
        }
        Ok(CausalGraph {
            d_s,
            d_a,
            n,
            z_sparsity: None,
            edges: BTreeSet::new(),
        })
    }

    /// Like [`new`](Self::new), but every next feature's in-degree is
    /// capped at `z`; inserts beyond the cap fail.
    pub fn with_sparsity(d_s: usize, d_a: usize, n: usize, z: usize) -> Result<Self> {
        let mut g = CausalGraph::new(d_s, d_a, n)?;
        g.z_sparsity = Some(z);
        Ok(g)
    }

    /// Builds a graph from an edge list.
    pub fn from_edges<I>(d_s: usize, d_a: usize, n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = CausalGraph::new(d_s, d_a, n)?;
        for (z, j) in edges {
            g.insert_edge(z, j)?;
        }
        Ok(g)
    }

    /// Adds the edge `X_z -> Y_j`. Idempotent for existing edges.
    pub fn insert_edge(&mut self, z: usize, j: usize) -> Result<()> {
        if z >= self.d_s + self.d_a {
            return Err(Error::OutOfRange {
                value: z,
                bound: self.d_s + self.d_a,
            });
        }
        if j >= self.d_s {
            return Err(Error::OutOfRange {
                value: j,
                bound: self.d_s,
            });
        }
        if let Some(cap) = self.z_sparsity {
            if !self.edges.contains(&(z, j)) && self.in_degree(j) >= cap {
                return Err(Error::InvalidParameter(format!(
                    "next feature {j} already has the maximum in-degree {cap}"
                )));
            }
        }
        self.edges.insert((z, j));
        Ok(())
    }

    pub fn num_state_features(&self) -> usize {
        self.d_s
    }

    pub fn num_action_features(&self) -> usize {
        self.d_a
    }

    pub fn arity(&self) -> usize {
        self.n
    }

    pub fn sparsity_bound(&self) -> Option<usize> {
        self.z_sparsity
    }

    pub fn contains(&self, z: usize, j: usize) -> bool {
        self.edges.contains(&(z, j))
    }

    /// Edges in ascending `(z, j)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.edges.iter().filter(|&&(_, jj)| jj == j).count()
    }

    /// Largest in-degree over next-state features.
    pub fn max_in_degree(&self) -> usize {
        (0..self.d_s).map(|j| self.in_degree(j)).max().unwrap_or(0)
    }

    /// The sorted parent set of next feature `j`.
    pub fn parent_scope(&self, j: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, jj)| jj == j)
            .map(|&(z, _)| z)
            .collect()
    }

    /// Parent scopes for all next features, in feature order. This is
    /// the scope list a factored model over this graph uses.
    pub fn scopes(&self) -> Vec<Vec<usize>> {
        (0..self.d_s).map(|j| self.parent_scope(j)).collect()
    }

    pub fn same_shape(&self, other: &CausalGraph) -> bool {
        self.d_s == other.d_s && self.d_a == other.d_a && self.n == other.n
    }

    pub fn validate(&self) -> Result<()> {
        let mut checked = CausalGraph::new(self.d_s, self.d_a, self.n)?;
        checked.z_sparsity = self.z_sparsity;
        for &(z, j) in &self.edges {
            checked.insert_edge(z, j)?;
        }
        Ok(())
    }

    /// GraphViz rendering with stable node and edge order, suitable for
    /// byte-wise comparison.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph causal {\n");
        for z in 0..self.d_s + self.d_a {
            let _ = writeln!(out, "  X{z};");
        }
        for j in 0..self.d_s {
            let _ = writeln!(out, "  Y{j};");
        }
        for &(z, j) in &self.edges {
            let _ = writeln!(out, "  X{z} -> Y{j};");
        }
        out.push_str("}\n");
        out
    }
}

/// One pairwise test inside a structure report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub z: usize,
    pub j: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Outcome of one structure estimation run: the recovered graph, every
/// pairwise test in ascending `(z, j)` order, and the samples drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub graph: CausalGraph,
    pub tests: Vec<PairTest>,
    pub samples: u64,
}

/// Estimates the dependency graph of `model` from `k` iid transitions
/// with inputs uniform over the joint state-action space.
///
/// All `(d_S + d_A) * d_S` feature pairs are tested on the same batch;
/// an edge is recorded exactly for Dependent verdicts at threshold
/// `eps / 2`. Callers account for the shared batch by union-bounding
/// their confidence across tests (`delta' = delta / (d_S^2 d_A)`).
pub fn estimate_structure_of_model<M: TransitionModel>(
    model: &M,
    k: u64,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StructureReport> {
    if k < 1 {
        return Err(Error::InvalidParameter(
            "structure estimation needs at least one sample".into(),
        ));
    }
    let input_space = model.input_space();
    let d_in = input_space.num_features();
    let d_s = model.state_space().num_features();
    let d_a = model.action_space().num_features();
    let n = input_space.arity();
    let input_size = input_space.dense_size()?;

    let mut joints: Vec<Vec<EmpiricalJoint>> = (0..d_in)
        .map(|_| {
            (0..d_s)
                .map(|_| EmpiricalJoint::new(n).expect("arity checked above"))
                .collect()
        })
        .collect();

    for _ in 0..k {
        let xi = rng.gen_range(0..input_size);
        let x = crate::factored_mdp::FeatureVector(input_space.assignment_at(xi)?);
        let y = model.sample_transition(&x, rng)?;
        for (z, row) in joints.iter_mut().enumerate() {
            for (j, joint) in row.iter_mut().enumerate() {
                joint.accumulate(x.0[z], y.0[j])?;
            }
        }
    }

    let mut graph = CausalGraph::new(d_s, d_a, n)?;
    let mut tests = Vec::with_capacity(d_in * d_s);
    for (z, row) in joints.iter().enumerate() {
        for (j, joint) in row.iter().enumerate() {
            let TestVerdict {
                verdict,
                statistic,
                threshold,
            } = independence_test(joint, eps)?;
            if verdict == Verdict::Dependent {
                graph.insert_edge(z, j)?;
            }
            tests.push(PairTest {
                z,
                j,
                statistic,
                threshold,
                verdict,
            });
        }
    }
    Ok(StructureReport {
        graph,
        tests,
        samples: k,
    })
}

/// [`estimate_structure_of_model`] applied to an environment's model.
pub fn estimate_structure(
    env: &Environment,
    k: u64,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StructureReport> {
    estimate_structure_of_model(&env.model, k, eps, rng)
}

/// Edge-set intersection of graphs sharing dimensions.
pub fn intersect_graphs(graphs: &[CausalGraph]) -> Result<CausalGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::EmptyInput("no graphs to intersect".into()))?;
    let mut edges: BTreeSet<(usize, usize)> = first.edges.clone();
    for g in &graphs[1..] {
        if !g.same_shape(first) {
            return Err(Error::DimensionMismatch(
                "graphs with different dimensions cannot be intersected".into(),
            ));
        }
        edges = edges.intersection(&g.edges).copied().collect();
    }
    CausalGraph::from_edges(first.d_s, first.d_a, first.n, edges)
}

/// Size of the edge symmetric difference. With node sets fixed by the
/// spaces, this is the graph edit distance between the two structures.
pub fn graph_edit_distance(g1: &CausalGraph, g2: &CausalGraph) -> Result<usize> {
    if !g1.same_shape(g2) {
        return Err(Error::DimensionMismatch(
            "graphs with different dimensions are incomparable".into(),
        ));
    }
    Ok(g1.edges.symmetric_difference(&g2.edges).count())
}

/// Exact L1 dependence of every feature pair under uniform inputs.
///
/// Entry `[z][j]` is the L1 distance between the exact joint of
/// `(X[z], Y[j])` and the product of its marginals, computed by
/// enumerating the input space.
pub fn dependence_table(model: &FactoredTransitionModel) -> Result<Vec<Vec<f64>>> {
    let input_space = model.input_space();
    let d_in = input_space.num_features();
    let d_s = model.state_space().num_features();
    let n = input_space.arity();
    let inputs = input_space.enumerate()?;
    let weight = 1.0 / inputs.len() as f64;

    // joint[z][j][a][b] = P(X[z] = a, Y[j] = b).
    let mut joint = vec![vec![vec![vec![0.0f64; n]; n]; d_s]; d_in];
    for x in &inputs {
        for j in 0..d_s {
            let marginal = model.feature_marginal(j, x)?;
            for z in 0..d_in {
                let a = x.0[z];
                for (b, &p) in marginal.iter().enumerate() {
                    joint[z][j][a][b] += weight * p;
                }
            }
        }
    }

    let mut table = vec![vec![0.0f64; d_s]; d_in];
    for z in 0..d_in {
        for j in 0..d_s {
            table[z][j] = l1_to_product(&joint[z][j]);
        }
    }
    Ok(table)
}

/// L1 distance between an exact probability table over pairs and the
/// product of its marginals.
fn l1_to_product(joint: &[Vec<f64>]) -> f64 {
    let n = joint.len();
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            row[a] += joint[a][b];
            col[b] += joint[a][b];
        }
    }
    let mut dist = 0.0;
    for a in 0..n {
        for b in 0..n {
            dist += (joint[a][b] - row[a] * col[b]).abs();
        }
    }
    dist
}

/// The subgraph of pairs whose exact dependence reaches `eps`, computed
/// by enumeration. With `eps = 0` every pair qualifies.
pub fn epsilon_dependency_subgraph(
    model: &FactoredTransitionModel,
    eps: f64,
) -> Result<CausalGraph> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "dependence threshold must lie in [0, 2], got {eps}"
        )));
    }
    let table = dependence_table(model)?;
    let d_s = model.state_space().num_features();
    let d_a = model.action_space().num_features();
    let mut graph = CausalGraph::new(d_s, d_a, model.state_space().arity())?;
    for (z, row) in table.iter().enumerate() {
        for (j, &dep) in row.iter().enumerate() {
            if dep >= eps {
                graph.insert_edge(z, j)?;
            }
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored_mdp::{EnvironmentModel, FactoredSpace};
    use crate::independence_testing::tester_sample_size;
    use crate::rng::stream;
    use proptest::prelude::*;

    /// d_S = 2, d_A = 1, n = 2; feature 0 copies input 0 with flip
    /// probability 0.1, feature 1 copies input 2 likewise. Exact
    /// dependence of both edges is 0.8; all other pairs are 0.
    fn channel_model() -> FactoredTransitionModel {
        let s = FactoredSpace::new(2, 2).unwrap();
        let a = FactoredSpace::new(1, 2).unwrap();
        FactoredTransitionModel::new(
            s,
            a,
            vec![vec![0], vec![2]],
            vec![
                vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            ],
        )
        .unwrap()
    }

    fn constant_model() -> FactoredTransitionModel {
        let s = FactoredSpace::new(2, 2).unwrap();
        let a = FactoredSpace::new(1, 2).unwrap();
        FactoredTransitionModel::new(
            s,
            a,
            vec![vec![], vec![]],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.3, 0.7]]],
        )
        .unwrap()
    }

    fn graph_with(edges: &[(usize, usize)]) -> CausalGraph {
        CausalGraph::from_edges(2, 1, 2, edges.iter().copied()).unwrap()
    }

    #[test]
    fn graph_rejects_out_of_range_edges() {
        let mut g = CausalGraph::new(2, 1, 2).unwrap();
        assert!(g.insert_edge(3, 0).is_err());
        assert!(g.insert_edge(0, 2).is_err());
        assert!(g.insert_edge(2, 1).is_ok());
        assert!(g.contains(2, 1));
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn sparsity_bound_caps_in_degree() {
        let mut g = CausalGraph::with_sparsity(2, 2, 2, 1).unwrap();
        g.insert_edge(0, 0).unwrap();
        // Re-inserting the same edge stays fine.
        g.insert_edge(0, 0).unwrap();
        assert!(g.insert_edge(1, 0).is_err());
        g.insert_edge(1, 1).unwrap();
        assert_eq!(g.max_in_degree(), 1);
    }

    #[test]
    fn scopes_are_sorted_parent_sets() {
        let g = graph_with(&[(2, 0), (0, 0), (1, 1)]);
        assert_eq!(g.parent_scope(0), vec![0, 2]);
        assert_eq!(g.scopes(), vec![vec![0, 2], vec![1]]);
        assert_eq!(g.max_in_degree(), 2);
    }

    #[test]
    fn dot_export_is_stable() {
        let g = graph_with(&[(2, 0), (0, 0)]);
        let dot = g.to_dot();
        assert_eq!(
            dot,
            "digraph causal {\n  X0;\n  X1;\n  X2;\n  Y0;\n  Y1;\n  X0 -> Y0;\n  X2 -> Y0;\n}\n"
        );
    }

    #[test]
    fn intersection_follows_set_algebra() {
        let g1 = graph_with(&[(0, 0), (1, 0)]);
        let g2 = graph_with(&[(1, 0), (2, 1)]);
        let both = intersect_graphs(&[g1.clone(), g2]).unwrap();
        assert_eq!(both.edges().collect::<Vec<_>>(), vec![(1, 0)]);
        let same = intersect_graphs(&[g1.clone(), g1.clone()]).unwrap();
        assert_eq!(same, g1);
        assert!(intersect_graphs(&[]).is_err());
        let other_shape = CausalGraph::new(3, 1, 2).unwrap();
        assert!(intersect_graphs(&[g1, other_shape]).is_err());
    }

    #[test]
    fn edit_distance_counts_symmetric_difference() {
        let g1 = graph_with(&[(0, 0), (1, 0)]);
        let g2 = graph_with(&[(1, 0), (2, 1)]);
        assert_eq!(graph_edit_distance(&g1, &g1).unwrap(), 0);
        assert_eq!(graph_edit_distance(&g1, &g2).unwrap(), 2);
        let empty = CausalGraph::new(2, 1, 2).unwrap();
        let three = graph_with(&[(0, 0), (1, 0), (2, 1)]);
        assert_eq!(graph_edit_distance(&empty, &three).unwrap(), 3);
    }

    #[test]
    fn exact_dependence_of_channel_model() {
        let table = dependence_table(&channel_model()).unwrap();
        // Binary symmetric channel with flip 0.1 under uniform input:
        // joint [[0.45, 0.05], [0.05, 0.45]], product 0.25 -> L1 = 0.8.
        assert!((table[0][0] - 0.8).abs() < 1e-12, "{}", table[0][0]);
        assert!((table[2][1] - 0.8).abs() < 1e-12);
        for (z, j) in [(0, 1), (1, 0), (1, 1), (2, 0)] {
            assert!(table[z][j].abs() < 1e-12, "pair ({z},{j})");
        }
    }

    #[test]
    fn dependency_subgraph_thresholds_exact_dependence() {
        let m = channel_model();
        let g = epsilon_dependency_subgraph(&m, 0.05).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 0), (2, 1)]);
        // eps = 0 includes every pair.
        let g0 = epsilon_dependency_subgraph(&m, 0.0).unwrap();
        assert_eq!(g0.num_edges(), 6);
        // A model that ignores its inputs has no dependence at all.
        let gc = epsilon_dependency_subgraph(&constant_model(), 0.05).unwrap();
        assert_eq!(gc.num_edges(), 0);
    }

    #[test]
    fn structure_estimation_recovers_channel_edges() {
        let m = channel_model();
        let env = Environment::new(
            EnvironmentModel::Factored(m.clone()),
            None,
            vec![0.25; 4],
        )
        .unwrap();
        let eps = 0.25;
        let delta_prime = 0.2 / 4.0;
        let k = tester_sample_size(2, eps, delta_prime).unwrap();
        let mut rng = stream(31_337, &[0]);
        let report = estimate_structure(&env, k, eps, &mut rng).unwrap();
        let expected = epsilon_dependency_subgraph(&m, eps).unwrap();
        assert_eq!(report.graph, expected);
        assert_eq!(report.tests.len(), 6);
        assert_eq!(report.samples, k);
        // Tests are ordered by (z, j) and cover each pair once.
        let order: Vec<(usize, usize)> = report.tests.iter().map(|t| (t.z, t.j)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
    }

    #[test]
    fn structure_estimation_is_deterministic() {
        let env = Environment::new(
            EnvironmentModel::Factored(channel_model()),
            None,
            vec![0.25; 4],
        )
        .unwrap();
        let mut rng1 = stream(7, &[1]);
        let mut rng2 = stream(7, &[1]);
        let r1 = estimate_structure(&env, 5_000, 0.25, &mut rng1).unwrap();
        let r2 = estimate_structure(&env, 5_000, 0.25, &mut rng2).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn constant_model_yields_empty_graph() {
        let env = Environment::new(
            EnvironmentModel::Factored(constant_model()),
            None,
            vec![0.25; 4],
        )
        .unwrap();
        let k = tester_sample_size(2, 0.25, 0.05).unwrap();
        let mut rng = stream(99, &[2]);
        let report = estimate_structure(&env, k, 0.25, &mut rng).unwrap();
        assert_eq!(report.graph.num_edges(), 0);
    }

    #[test]
    fn estimation_is_consistent_at_large_sample_sizes() {
        // Every true edge has dependence 0.8 >= 2 * eps and every
        // non-edge exactly 0; at 4x the calibrated K the recovered
        // graph should match the exact dependency subgraph in nearly
        // every trial.
        let m = channel_model();
        let env =
            Environment::new(EnvironmentModel::Factored(m.clone()), None, vec![0.25; 4]).unwrap();
        let eps = 0.25;
        let delta = 0.2;
        let delta_prime = delta / 4.0;
        let k = 4 * tester_sample_size(2, eps, delta_prime).unwrap();
        let expected = epsilon_dependency_subgraph(&m, eps).unwrap();
        let trials = 20;
        let mut mismatches = 0;
        for t in 0..trials {
            let mut rng = stream(555, &[t]);
            let report = estimate_structure(&env, k, eps, &mut rng).unwrap();
            if report.graph != expected {
                mismatches += 1;
            }
        }
        let allowed = ((delta + 0.1) * trials as f64).floor() as usize;
        assert!(mismatches <= allowed, "{mismatches} mismatched trials");
    }

    prop_compose! {
        fn arb_edges()(mask in 0u32..64) -> Vec<(usize, usize)> {
            // Six possible edges in the 2x1 shape.
            let all = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)];
            all.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &e)| e)
                .collect()
        }
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in arb_edges(), b in arb_edges(), c in arb_edges()) {
            let ga = graph_with(&a);
            let gb = graph_with(&b);
            let gc = graph_with(&c);
            let ab = graph_edit_distance(&ga, &gb).unwrap();
            let ba = graph_edit_distance(&gb, &ga).unwrap();
            let ac = graph_edit_distance(&ga, &gc).unwrap();
            let cb = graph_edit_distance(&gc, &gb).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb);
            prop_assert_eq!(graph_edit_distance(&ga, &ga).unwrap(), 0);
            prop_assert_eq!(ab == 0, ga == gb);
        }

        #[test]
        fn intersection_is_commutative_associative_idempotent(
            a in arb_edges(),
            b in arb_edges(),
            c in arb_edges(),
        ) {
            let ga = graph_with(&a);
            let gb = graph_with(&b);
            let gc = graph_with(&c);
            let ab = intersect_graphs(&[ga.clone(), gb.clone()]).unwrap();
            let ba = intersect_graphs(&[gb.clone(), ga.clone()]).unwrap();
            prop_assert_eq!(&ab, &ba);
            let abc1 = intersect_graphs(&[ab.clone(), gc.clone()]).unwrap();
            let abc2 = intersect_graphs(&[ga.clone(), intersect_graphs(&[gb, gc]).unwrap()]).unwrap();
            prop_assert_eq!(abc1, abc2);
            prop_assert_eq!(intersect_graphs(&[ga.clone(), ga.clone()]).unwrap(), ga);
        }
    }
}
