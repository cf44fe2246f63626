//! Pass@1 / Pass@k scoring and recovery analysis over refinement traces.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refine::{FinalStatus, RefinementTrace};
use crate::sandbox::{first_failure, TestStatus};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("pass@k undefined for n={n}, c={c}, k={k}")]
    Domain { n: u64, c: u64, k: u64 },
}

/// Which output counts as the top-1 submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Only the first generation, before any feedback.
    StrictFirstAttempt,
    /// The output after the feedback loop.
    WithFeedback,
}

/// An exact solved/total ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub solved: u64,
    pub total: u64,
}

impl Score {
    pub fn ratio(&self) -> Ratio<u64> {
        if self.total == 0 {
            Ratio::zero()
        } else {
            Ratio::new(self.solved, self.total)
        }
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.solved as f64 / self.total as f64
        }
    }

    /// Three-decimal rendering, e.g. `0.934`.
    pub fn rounded(&self) -> String {
        format!("{:.3}", self.value())
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{})", self.rounded(), self.solved, self.total)
    }
}

pub fn pass_at_1(traces: &[RefinementTrace], scoring: Scoring) -> Result<Score, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let solved = traces
        .iter()
        .filter(|t| match scoring {
            Scoring::StrictFirstAttempt => t.first_attempt_passed(),
            Scoring::WithFeedback => t.final_status == FinalStatus::Solved,
        })
        .count() as u64;
    Ok(Score {
        solved,
        total: traces.len() as u64,
    })
}

fn check_domain(n: u64, c: u64, k: u64) -> Result<(), MetricsError> {
    if c > n || k == 0 || k > n {
        Err(MetricsError::Domain { n, c, k })
    } else {
        Ok(())
    }
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, evaluated as
/// `1 - prod_{i=n-c+1..=n} (1 - k/i)` to stay finite for large `n`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    check_domain(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Exact pass@k as a rational.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<BigRational, MetricsError> {
    check_domain(n, c, k)?;
    let miss = BigRational::new(binomial(n - c, k).into(), binomial(n, k).into());
    Ok(BigRational::one() - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub total: u64,
    pub solved: u64,
    pub pass_at_1: f64,
    pub strict_first_attempt: Score,
    pub with_feedback: Score,
    /// with_feedback minus strict, in absolute percentage points.
    pub feedback_gain_points: f64,
    /// Tasks that failed attempt 1 and were solved later.
    pub recovered: u64,
    pub solved_by_attempt: BTreeMap<u32, u64>,
    /// First-failure status of the best attempt of each unsolved task.
    pub failure_histogram: BTreeMap<TestStatus, u64>,
}

pub fn recovery_report(traces: &[RefinementTrace]) -> EvalSummary {
    let total = traces.len() as u64;
    let count = |f: &dyn Fn(&RefinementTrace) -> bool| traces.iter().filter(|t| f(t)).count() as u64;
    let strict = Score {
        solved: count(&|t| t.first_attempt_passed()),
        total,
    };
    let with_feedback = Score {
        solved: count(&|t| t.final_status == FinalStatus::Solved),
        total,
    };
    let mut solved_by_attempt = BTreeMap::new();
    let mut failure_histogram = BTreeMap::new();
    for trace in traces {
        match trace.solving_attempt {
            Some(k) => *solved_by_attempt.entry(k).or_insert(0) += 1,
            None => {
                if let Some(failed) = trace.best().and_then(|a| first_failure(&a.report)) {
                    *failure_histogram.entry(failed.status).or_insert(0) += 1;
                }
            }
        }
    }
    let gain = (with_feedback.ratio() - strict.ratio()) * Ratio::from_integer(100);
    EvalSummary {
        total,
        solved: with_feedback.solved,
        pass_at_1: with_feedback.value(),
        strict_first_attempt: strict,
        with_feedback,
        feedback_gain_points: *gain.numer() as f64 / *gain.denom() as f64,
        recovered: with_feedback.solved - strict.solved,
        solved_by_attempt,
        failure_histogram,
    }
}

/// Absolute difference `score - baseline` in percentage points.
pub fn delta_points(score: &Score, baseline: &Score) -> f64 {
    (score.value() - baseline.value()) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(5, 5, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(2, 1, 1).unwrap(), 0.5);
        assert_eq!(pass_at_k(4, 0, 2).unwrap(), 0.0);
        assert_eq!(pass_at_k_exact(2, 1, 1).unwrap(), BigRational::new(1.into(), 2.into()));
        assert!(matches!(pass_at_k(3, 4, 1), Err(MetricsError::Domain { .. })));
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(10, 0), BigUint::one());
        assert_eq!(binomial(3, 4), BigUint::zero());
        assert_eq!(binomial(52, 5), BigUint::from(2_598_960u32));
    }

    #[test]
    fn score_rendering() {
        let s = Score { solved: 467, total: 500 };
        assert_eq!(s.rounded(), "0.934");
        assert_eq!(s.ratio(), Ratio::new(467, 500));
        assert_eq!(s.to_string(), "0.934 (467/500)");
    }

    #[test]
    fn empty_summary() {
        let s = recovery_report(&[]);
        assert_eq!(s.total, 0);
        assert!(s.failure_histogram.is_empty());
        assert!(matches!(pass_at_1(&[], Scoring::WithFeedback), Err(MetricsError::EmptyCorpus)));
    }
}
