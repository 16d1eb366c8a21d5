//! Empirical joints over value pairs and an L1 independence tester.
//!
//! The tester is a plug-in rule: accumulate an empirical joint over
//! `[n] x [n]`, measure the L1 distance between the joint and the
//! product of its marginals, and declare dependence when the statistic
//! reaches `eps / 2`. The sample size from [`tester_sample_size`] makes
//! both error modes fail with probability at most `delta`: by the
//! triangle inequality the statistic is within
//! `||Phat - P|| + ||Phat_A - P_A|| + ||Phat_B - P_B||` of the true
//! distance, and K large enough to drive each term below `eps / 6` with
//! probability `1 - delta / 3` gives `K = ceil(72 n^2 ln(6/delta) / eps^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of observed value pairs over `[n] x [n]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalJoint {
    n: usize,
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl EmpiricalJoint {
    /// An empty joint over pairs of values in `[0, n)`.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "joint arity must be at least 2, got {n}"
            )));
        }
        Ok(EmpiricalJoint {
            n,
            counts: vec![vec![0; n]; n],
            total: 0,
        })
    }

    pub fn arity(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts[a][b]
    }

    /// Records one observed pair.
    pub fn accumulate(&mut self, a: usize, b: usize) -> Result<()> {
        for v in [a, b] {
            if v >= self.n {
                return Err(Error::OutOfRange {
                    value: v,
                    bound: self.n,
                });
            }
        }
        self.counts[a][b] += 1;
        self.total += 1;
        Ok(())
    }

    /// L1 distance between the empirical joint and the product of its
    /// empirical marginals: `sum_{a,b} |Phat(a,b) - Phat_A(a) Phat_B(b)|`.
    ///
    /// Lies in `[0, 2]` and is invariant to scaling all counts by a
    /// common factor.
    pub fn l1_to_product_of_marginals(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyJoint);
        }
        let total = self.total as f64;
        let mut row_sums = vec![0.0f64; self.n];
        let mut col_sums = vec![0.0f64; self.n];
        for a in 0..self.n {
            for b in 0..self.n {
                let c = self.counts[a][b] as f64;
                row_sums[a] += c;
                col_sums[b] += c;
            }
        }
        let mut dist = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                let joint = self.counts[a][b] as f64 / total;
                let product = (row_sums[a] / total) * (col_sums[b] / total);
                dist += (joint - product).abs();
            }
        }
        Ok(dist)
    }
}

/// Verdict of one independence test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Independent,
    Dependent,
}

/// A verdict together with the statistic and cutoff that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub verdict: Verdict,
    pub statistic: f64,
    pub threshold: f64,
}

/// Samples sufficient for the plug-in tester to separate independence
/// from L1 dependence at least `eps`, each with failure probability at
/// most `delta`: `ceil(72 n^2 ln(6/delta) / eps^2)`.
pub fn tester_sample_size(n: usize, eps: f64, delta: f64) -> Result<u64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "tester arity must be at least 2, got {n}"
        )));
    }
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "tester threshold must lie in (0, 2], got {eps}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tester confidence must lie in (0, 1), got {delta}"
        )));
    }
    let k = (72.0 * (n * n) as f64 * (6.0 / delta).ln() / (eps * eps)).ceil();
    Ok((k as u64).max(1))
}

/// Applies the plug-in rule to an accumulated joint: Dependent iff the
/// statistic reaches `eps / 2` (boundary inclusive).
pub fn independence_test(joint: &EmpiricalJoint, eps: f64) -> Result<TestVerdict> {
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "tester threshold must lie in (0, 2], got {eps}"
        )));
    }
    let statistic = joint.l1_to_product_of_marginals()?;
    let threshold = eps / 2.0;
    let verdict = if statistic >= threshold {
        Verdict::Dependent
    } else {
        Verdict::Independent
    };
    Ok(TestVerdict {
        verdict,
        statistic,
        threshold,
    })
}
