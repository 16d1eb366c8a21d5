//! Exact finite-horizon planning: dense value iteration, exact policy
//! evaluation, and the closed-form value-loss bounds used to judge
//! planning on an estimated model.
//!
//! The planner enumerates states and actions and runs the backward
//! recursion `Q_h(s,a) = r(s,a) + sum_{s'} P(s'|s,a) V_{h+1}(s')`
//! exactly, so desk-scale spaces need no simulation or approximation
//! layer. Policies are deterministic and nonstationary; an optimal one
//! always exists in that class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factored_mdp::{FeatureVector, TransitionModel, ENUMERATION_LIMIT};

/// A reward function and horizon. Rewards are indexed by dense state
/// and action indices and must lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningTask {
    /// `reward[s][a]` for dense state index `s` and action index `a`.
    pub reward: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl PlanningTask {
    pub fn new(reward: Vec<Vec<f64>>, horizon: usize) -> Result<Self> {
        let task = PlanningTask { reward, horizon };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter(
                "planning needs a horizon of at least 1".into(),
            ));
        }
        if self.reward.is_empty() {
            return Err(Error::EmptyInput("reward table has no states".into()));
        }
        let actions = self.reward[0].len();
        if actions == 0 {
            return Err(Error::EmptyInput("reward table has no actions".into()));
        }
        for row in &self.reward {
            if row.len() != actions {
                return Err(Error::DimensionMismatch(
                    "reward rows must all cover the same actions".into(),
                ));
            }
            for &r in row {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidParameter(format!(
                        "rewards must lie in [0, 1], got {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_spaces<M: TransitionModel>(&self, model: &M) -> Result<(usize, usize)> {
        let states = model.state_space().dense_size()?;
        let actions = model.action_space().dense_size()?;
        if self.reward.len() != states || self.reward[0].len() != actions {
            return Err(Error::DimensionMismatch(format!(
                "reward table is {}x{}, model has {} states and {} actions",
                self.reward.len(),
                self.reward[0].len(),
                states,
                actions
            )));
        }
        let work = states as u128 * actions as u128 * states as u128;
        if work > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                entries: work,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok((states, actions))
    }
}

/// A deterministic nonstationary policy: `actions[h][s]` is the dense
/// action index taken in dense state `s` at step `h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<Vec<usize>>,
}

impl Policy {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    fn check(&self, states: usize, actions: usize, horizon: usize) -> Result<()> {
        if self.actions.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "policy covers {} steps, task horizon is {}",
                self.actions.len(),
                horizon
            )));
        }
        for step in &self.actions {
            if step.len() != states {
                return Err(Error::DimensionMismatch(format!(
                    "policy step covers {} states, model has {}",
                    step.len(),
                    states
                )));
            }
            for &a in step {
                if a >= actions {
                    return Err(Error::OutOfRange {
                        value: a,
                        bound: actions,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Step-indexed state values: `values[h][s]` for `h` in `0..=H`, with
/// the terminal row identically zero. For rewards in `[0, 1]`, row `h`
/// lies in `[0, H - h]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    /// The value of the start of the episode under initial state
    /// distribution `mu`.
    pub fn initial_value(&self, mu: &[f64]) -> Result<f64> {
        let first = self
            .values
            .first()
            .ok_or_else(|| Error::EmptyInput("empty value table".into()))?;
        if mu.len() != first.len() {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution over {} states, table over {}",
                mu.len(),
                first.len()
            )));
        }
        Ok(first.iter().zip(mu).map(|(v, w)| v * w).sum())
    }
}

/// Dense transition rows `P(.|s,a)` for every state-action pair,
/// computed once so the backward recursion is pure arithmetic.
fn dense_rows<M: TransitionModel + Sync>(
    model: &M,
    states: usize,
    actions: usize,
) -> Result<Vec<Vec<f64>>> {
    let state_vs: Vec<FeatureVector> = model.state_space().enumerate()?;
    let action_vs: Vec<FeatureVector> = model.action_space().enumerate()?;
    (0..states * actions)
        .into_par_iter()
        .map(|idx| {
            let x = FeatureVector::join(&state_vs[idx / actions], &action_vs[idx % actions]);
            model.next_distribution(&x)
        })
        .collect()
}

/// Exact value iteration: returns the optimal deterministic
/// nonstationary policy (lowest action index on ties) and its exact
/// value table under the given model.
pub fn value_iteration<M: TransitionModel + Sync>(
    model: &M,
    task: &PlanningTask,
) -> Result<(Policy, ValueTable)> {
    task.validate()?;
    let (states, actions) = task.check_spaces(model)?;
    let rows = dense_rows(model, states, actions)?;
    let mut values = vec![vec![0.0f64; states]];
    let mut policy_steps: Vec<Vec<usize>> = Vec::with_capacity(task.horizon);
    for _ in 0..task.horizon {
        let next = &values[0];
        let backed: Vec<(usize, f64)> = (0..states)
            .into_par_iter()
            .map(|s| {
                let mut best_a = 0usize;
                let mut best_q = f64::NEG_INFINITY;
                for a in 0..actions {
                    let row = &rows[s * actions + a];
                    let continuation: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
                    let q = task.reward[s][a] + continuation;
                    if q > best_q {
                        best_q = q;
                        best_a = a;
                    }
                }
                (best_a, best_q)
            })
            .collect();
        policy_steps.push(backed.iter().map(|&(a, _)| a).collect());
        values.insert(0, backed.iter().map(|&(_, q)| q).collect());
    }
    policy_steps.reverse();
    Ok((
        Policy {
            actions: policy_steps,
        },
        ValueTable { values },
    ))
}

/// Exact value of a fixed policy on a model, from the initial state
/// distribution `mu`. Pure dynamic programming; no sampling.
pub fn evaluate_policy<M: TransitionModel + Sync>(
    model: &M,
    task: &PlanningTask,
    policy: &Policy,
    mu: &[f64],
) -> Result<f64> {
    task.validate()?;
    let (states, actions) = task.check_spaces(model)?;
    policy.check(states, actions, task.horizon)?;
    if mu.len() != states {
        return Err(Error::DimensionMismatch(format!(
            "initial distribution over {} states, model has {}",
            mu.len(),
            states
        )));
    }
    let rows = dense_rows(model, states, actions)?;
    let mut next = vec![0.0f64; states];
    for step in policy.actions.iter().rev() {
        let current: Vec<f64> = (0..states)
            .map(|s| {
                let a = step[s];
                let row = &rows[s * actions + a];
                let continuation: f64 = row.iter().zip(&next).map(|(p, v)| p * v).sum();
                task.reward[s][a] + continuation
            })
            .collect();
        next = current;
    }
    Ok(next.iter().zip(mu).map(|(v, w)| v * w).sum())
}

/// How far a policy falls short of optimal on `true_model`:
/// `V*_1 - V^pi_1` under `mu`. Returned raw; tiny negative values from
/// floating-point are possible and are clamped only in reports.
pub fn suboptimality_gap<M: TransitionModel + Sync>(
    true_model: &M,
    task: &PlanningTask,
    mu: &[f64],
    policy: &Policy,
) -> Result<f64> {
    let (_, table) = value_iteration(true_model, task)?;
    let v_star = table.initial_value(mu)?;
    let v_pi = evaluate_policy(true_model, task, policy, mu)?;
    Ok(v_star - v_pi)
}

/// Value-loss budget for planning on a model estimated over a sparse
/// structure: `2 lambda H^3 d_S n^(2Z+1)`.
pub fn epsilon_lambda_bound(lambda: f64, h: usize, d_s: usize, n: usize, z: usize) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "model gap must be nonnegative and finite, got {lambda}"
        )));
    }
    if h < 1 || d_s < 1 || n < 2 {
        return Err(Error::InvalidParameter(
            "bound needs horizon >= 1, d_S >= 1, arity >= 2".into(),
        ));
    }
    Ok(2.0 * lambda * (h as f64).powi(3) * d_s as f64 * (n as f64).powi(2 * z as i32 + 1))
}

/// Tabular variant of the value-loss budget: `2 lambda S A H^3`.
pub fn epsilon_lambda_bound_tabular(lambda: f64, s: usize, a: usize, h: usize) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "model gap must be nonnegative and finite, got {lambda}"
        )));
    }
    if s < 1 || a < 1 || h < 1 {
        return Err(Error::InvalidParameter(
            "bound needs at least one state, one action, and horizon 1".into(),
        ));
    }
    Ok(2.0 * lambda * s as f64 * a as f64 * (h as f64).powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored_mdp::{
        sup_l1_distance, FactoredSpace, FactoredTransitionModel, TabularTransitionModel,
    };
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    /// Random dense model over the given spaces, rows from a seeded
    /// stream.
    fn random_tabular(
        d_s: usize,
        d_a: usize,
        n: usize,
        seed: u64,
    ) -> TabularTransitionModel {
        let s = FactoredSpace::new(d_s, n).unwrap();
        let a = FactoredSpace::new(d_a, n).unwrap();
        let states = s.dense_size().unwrap();
        let actions = a.dense_size().unwrap();
        let mut rng = stream(seed, &[0]);
        let rows = (0..states * actions)
            .map(|_| {
                let mut row: Vec<f64> = (0..states).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                let correction = 1.0 - row.iter().sum::<f64>();
                row[0] += correction;
                row
            })
            .collect();
        TabularTransitionModel::new(s, a, rows).unwrap()
    }

    fn random_reward(states: usize, actions: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[1]);
        (0..states)
            .map(|_| (0..actions).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect()
    }

    /// Self-loop model: every state maps to itself under every action.
    fn absorbing_model(d_s: usize, d_a: usize, n: usize) -> TabularTransitionModel {
        let s = FactoredSpace::new(d_s, n).unwrap();
        let a = FactoredSpace::new(d_a, n).unwrap();
        let states = s.dense_size().unwrap();
        let actions = a.dense_size().unwrap();
        let rows = (0..states * actions)
            .map(|idx| {
                let mut row = vec![0.0; states];
                row[idx / actions] = 1.0;
                row
            })
            .collect();
        TabularTransitionModel::new(s, a, rows).unwrap()
    }

    #[test]
    fn forced_choice_collects_full_reward() {
        // Two absorbing states, two actions; action 0 pays 1, action 1
        // pays 0. Start in state 0.
        let model = absorbing_model(1, 1, 2);
        let task = PlanningTask::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]], 2).unwrap();
        let (policy, table) = value_iteration(&model, &task).unwrap();
        assert_eq!(table.values[0], vec![2.0, 2.0]);
        assert_eq!(table.values[2], vec![0.0, 0.0]);
        assert_eq!(policy.actions, vec![vec![0, 0], vec![0, 0]]);
        assert_abs_diff_eq!(
            table.initial_value(&[1.0, 0.0]).unwrap(),
            2.0,
            epsilon = 0.0
        );

        // The worst policy forgoes everything; its gap is the full value.
        let worst = Policy {
            actions: vec![vec![1, 1], vec![1, 1]],
        };
        let gap = suboptimality_gap(&model, &task, &[1.0, 0.0], &worst).unwrap();
        assert_abs_diff_eq!(gap, 2.0, epsilon = 0.0);
        let opt_gap = suboptimality_gap(&model, &task, &[1.0, 0.0], &policy).unwrap();
        assert!(opt_gap.abs() <= 1e-9);
    }

    #[test]
    fn zero_reward_gives_zero_values_and_first_actions() {
        let model = random_tabular(1, 1, 3, 7);
        let task = PlanningTask::new(vec![vec![0.0; 3]; 3], 3).unwrap();
        let (policy, table) = value_iteration(&model, &task).unwrap();
        for row in &table.values {
            assert!(row.iter().all(|&v| v == 0.0));
        }
        for step in &policy.actions {
            assert!(step.iter().all(|&a| a == 0), "tie-break must pick action 0");
        }
    }

    #[test]
    fn backward_values_respect_horizon_bounds() {
        for seed in 0..20 {
            let model = random_tabular(2, 1, 2, seed);
            let task = PlanningTask::new(random_reward(4, 2, seed), 4).unwrap();
            let (_, table) = value_iteration(&model, &task).unwrap();
            assert_eq!(table.values.len(), 5);
            for (h, row) in table.values.iter().enumerate() {
                let cap = (task.horizon - h) as f64;
                for &v in row {
                    assert!((0.0..=cap + 1e-12).contains(&v), "V_{h} = {v} > {cap}");
                }
            }
        }
    }

    #[test]
    fn planner_matches_exhaustive_policy_enumeration() {
        // Every instance with |S| x |A| <= 12 and H <= 3 must match the
        // brute-force oracle: maximize over all A^(S H) deterministic
        // nonstationary policies.
        let instances = [(2usize, 1usize, 2usize, 11u64), (1, 1, 3, 13)];
        for (d_s, d_a, n, seed) in instances {
            let model = random_tabular(d_s, d_a, n, seed);
            let states = model.state_space().dense_size().unwrap();
            let actions = model.action_space().dense_size().unwrap();
            let task = PlanningTask::new(random_reward(states, actions, seed), 3).unwrap();
            let mu = vec![1.0 / states as f64; states];
            let (_, table) = value_iteration(&model, &task).unwrap();
            let v_star = table.initial_value(&mu).unwrap();

            let step_maps = actions.pow(states as u32);
            let mut best = f64::NEG_INFINITY;
            let decode = |code: usize| -> Vec<usize> {
                (0..states).map(|s| code / actions.pow(s as u32) % actions).collect()
            };
            for c0 in 0..step_maps {
                for c1 in 0..step_maps {
                    for c2 in 0..step_maps {
                        let policy = Policy {
                            actions: vec![decode(c0), decode(c1), decode(c2)],
                        };
                        let v = evaluate_policy(&model, &task, &policy, &mu).unwrap();
                        best = best.max(v);
                    }
                }
            }
            assert_abs_diff_eq!(v_star, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimal_policy_evaluates_to_its_planned_value() {
        let model = random_tabular(2, 1, 2, 3);
        let task = PlanningTask::new(random_reward(4, 2, 3), 5).unwrap();
        let mu = [0.4, 0.3, 0.2, 0.1];
        let (policy, table) = value_iteration(&model, &task).unwrap();
        let planned = table.initial_value(&mu).unwrap();
        let evaluated = evaluate_policy(&model, &task, &policy, &mu).unwrap();
        assert_abs_diff_eq!(planned, evaluated, epsilon = 1e-12);
    }

    #[test]
    fn single_step_policy_average_matches_closed_form() {
        // At H = 1 the mean value over all deterministic policies is the
        // action-average reward under mu.
        let model = random_tabular(1, 1, 2, 17);
        let reward = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        let task = PlanningTask::new(reward.clone(), 1).unwrap();
        let mu = [0.25, 0.75];
        let mut total = 0.0;
        let mut count = 0u32;
        for a0 in 0..2 {
            for a1 in 0..2 {
                let policy = Policy {
                    actions: vec![vec![a0, a1]],
                };
                total += evaluate_policy(&model, &task, &policy, &mu).unwrap();
                count += 1;
            }
        }
        let by_hand: f64 = mu[0] * (reward[0][0] + reward[0][1]) / 2.0
            + mu[1] * (reward[1][0] + reward[1][1]) / 2.0;
        assert_abs_diff_eq!(total / count as f64, by_hand, epsilon = 1e-12);
    }

    #[test]
    fn tie_break_ignores_equal_action_payloads() {
        // Both actions have identical rows and rewards; swapping their
        // payloads changes nothing, and the policy stays at index 0.
        let s = FactoredSpace::new(1, 2).unwrap();
        let a = FactoredSpace::new(1, 2).unwrap();
        let rows = vec![
            vec![0.3, 0.7],
            vec![0.3, 0.7],
            vec![0.6, 0.4],
            vec![0.6, 0.4],
        ];
        let swapped = vec![
            rows[1].clone(),
            rows[0].clone(),
            rows[3].clone(),
            rows[2].clone(),
        ];
        let task = PlanningTask::new(vec![vec![0.5, 0.5], vec![0.2, 0.2]], 3).unwrap();
        let m1 = TabularTransitionModel::new(s, a, rows).unwrap();
        let m2 = TabularTransitionModel::new(s, a, swapped).unwrap();
        let (p1, t1) = value_iteration(&m1, &task).unwrap();
        let (p2, t2) = value_iteration(&m2, &task).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        for step in &p1.actions {
            assert!(step.iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn value_error_obeys_the_simulation_bound() {
        // Planning values transfer between models up to H^2 times the
        // sup-L1 model distance.
        for seed in 0..10 {
            let m1 = random_tabular(2, 1, 2, 100 + seed);
            let m2 = random_tabular(2, 1, 2, 200 + seed);
            let task = PlanningTask::new(random_reward(4, 2, seed), 3).unwrap();
            let mu = [0.25; 4];
            let (policy, _) = value_iteration(&m1, &task).unwrap();
            let v1 = evaluate_policy(&m1, &task, &policy, &mu).unwrap();
            let v2 = evaluate_policy(&m2, &task, &policy, &mu).unwrap();
            let dist = sup_l1_distance(&m1, &m2).unwrap();
            let h = task.horizon as f64;
            assert!(
                (v1 - v2).abs() <= h * h * dist + 1e-12,
                "gap {} exceeds H^2 sup-L1 {}",
                (v1 - v2).abs(),
                h * h * dist
            );
        }
    }

    #[test]
    fn factored_and_tabular_planning_agree() {
        let s = FactoredSpace::new(2, 2).unwrap();
        let a = FactoredSpace::new(1, 2).unwrap();
        let factored = FactoredTransitionModel::new(
            s,
            a,
            vec![vec![0], vec![2]],
            vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            ],
        )
        .unwrap();
        let tabular = factored.to_tabular().unwrap();
        let task = PlanningTask::new(random_reward(4, 2, 5), 4).unwrap();
        let (pf, tf) = value_iteration(&factored, &task).unwrap();
        let (pt, tt) = value_iteration(&tabular, &task).unwrap();
        assert_eq!(pf, pt);
        for (rf, rt) in tf.values.iter().zip(&tt.values) {
            for (vf, vt) in rf.iter().zip(rt) {
                assert_abs_diff_eq!(vf, vt, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn loss_bounds_match_hand_evaluations() {
        assert_abs_diff_eq!(
            epsilon_lambda_bound(0.1, 2, 2, 3, 1).unwrap(),
            86.4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            epsilon_lambda_bound_tabular(0.1, 4, 2, 2).unwrap(),
            12.8,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(epsilon_lambda_bound(0.0, 5, 3, 4, 2).unwrap(), 0.0);
        assert!(epsilon_lambda_bound(-0.1, 2, 2, 3, 1).is_err());
        assert!(epsilon_lambda_bound(0.1, 0, 2, 3, 1).is_err());
        assert!(epsilon_lambda_bound_tabular(0.1, 0, 2, 2).is_err());
    }

    #[test]
    fn invalid_tasks_and_policies_are_rejected() {
        assert!(PlanningTask::new(vec![vec![0.5]], 0).is_err());
        assert!(PlanningTask::new(vec![vec![1.5]], 1).is_err());
        assert!(PlanningTask::new(vec![vec![-0.1]], 1).is_err());
        assert!(PlanningTask::new(vec![vec![0.5], vec![0.5, 0.5]], 1).is_err());
        assert!(PlanningTask::new(vec![], 1).is_err());

        let model = random_tabular(1, 1, 2, 1);
        let task = PlanningTask::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 2).unwrap();
        // Wrong horizon, wrong state count, action out of range.
        let bad = Policy {
            actions: vec![vec![0, 0]],
        };
        assert!(evaluate_policy(&model, &task, &bad, &[0.5, 0.5]).is_err());
        let bad = Policy {
            actions: vec![vec![0], vec![0]],
        };
        assert!(evaluate_policy(&model, &task, &bad, &[0.5, 0.5]).is_err());
        let bad = Policy {
            actions: vec![vec![0, 2], vec![0, 0]],
        };
        assert!(evaluate_policy(&model, &task, &bad, &[0.5, 0.5]).is_err());
        let good = Policy {
            actions: vec![vec![0, 0], vec![0, 0]],
        };
        assert!(evaluate_policy(&model, &task, &good, &[0.5]).is_err());

        // A reward table sized for a different model is refused.
        let wrong = PlanningTask::new(vec![vec![0.5, 0.5]; 3], 2).unwrap();
        assert!(value_iteration(&model, &wrong).is_err());
    }

    #[test]
    fn oversized_spaces_refuse_planning() {
        // Twelve 10-ary state features give 10^12 states; the dense
        // state pass alone exceeds the enumeration limit.
        let s = FactoredSpace::new(12, 10).unwrap();
        let a = FactoredSpace::new(1, 10).unwrap();
        let task = PlanningTask {
            reward: vec![vec![0.0; 10]; 1000],
            horizon: 1,
        };
        let err = task.check_spaces(&HugeModel { s, a }).unwrap_err();
        assert!(matches!(err, Error::EnumerationTooLarge { .. }));
    }

    struct HugeModel {
        s: FactoredSpace,
        a: FactoredSpace,
    }

    impl TransitionModel for HugeModel {
        fn state_space(&self) -> &FactoredSpace {
            &self.s
        }
        fn action_space(&self) -> &FactoredSpace {
            &self.a
        }
        fn transition_prob(&self, _: &FeatureVector, _: &FeatureVector) -> Result<f64> {
            unreachable!("huge model never evaluates")
        }
        fn sample_transition(
            &self,
            _: &FeatureVector,
            _: &mut rand_chacha::ChaCha8Rng,
        ) -> Result<FeatureVector> {
            unreachable!("huge model never samples")
        }
        fn feature_marginal(&self, _: usize, _: &FeatureVector) -> Result<Vec<f64>> {
            unreachable!("huge model never marginalizes")
        }
    }
}
