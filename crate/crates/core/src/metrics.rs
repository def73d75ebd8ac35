//! Evaluation metrics: in-sample regret, best-arm identification
//! probability, expected policy regret, and the per-round trajectories.

use serde::{Deserialize, Serialize};

use crate::engine::TrialResult;

/// A Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Sample mean with standard error `sd / sqrt(n)` (sd with `n - 1`).
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub policy: String,
    pub seed: u64,
    pub isr: f64,
    pub recommended_arm: usize,
    /// New infections in rounds `0..=T`.
    pub infections_by_round: Vec<u64>,
    /// `[t][k]` assignment counts for rounds `0..=T`.
    pub assignments_by_round: Vec<Vec<u64>>,
    /// `[t][k]` policy assignment probabilities for rounds `0..=T`.
    pub probabilities_by_round: Vec<Vec<f64>>,
}

impl ReplicationResult {
    pub fn from_trial(policy: String, seed: u64, trial: &TrialResult, thetas: &[f64]) -> Self {
        let horizon = trial.rounds.len();
        Self {
            isr: in_sample_regret(&trial.assignments_by_round, thetas, horizon),
            policy,
            seed,
            recommended_arm: trial.recommendation,
            infections_by_round: trial.infections_by_round(),
            assignments_by_round: trial.assignments_by_round.clone(),
            probabilities_by_round: trial.probabilities_by_round.clone(),
        }
    }

    pub fn total_infections(&self) -> u64 {
        self.infections_by_round.iter().sum()
    }

    pub fn total_assigned(&self) -> u64 {
        self.assignments_by_round.iter().flatten().sum()
    }
}

/// `(1/T) sum_t sum_k m_{t,k} (theta* - theta_k)`: regret of every assignment
/// in a round, averaged over rounds.
pub fn in_sample_regret(assignments_by_round: &[Vec<u64>], thetas: &[f64], horizon: usize) -> f64 {
    let best = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = assignments_by_round
        .iter()
        .map(|row| {
            row.iter()
                .zip(thetas)
                .map(|(&m, &th)| m as f64 * (best - th))
                .sum::<f64>()
        })
        .sum();
    total / horizon as f64
}

/// Fraction of replications recommending `best`, with binomial standard error.
pub fn best_arm_probability(results: &[ReplicationResult], best: usize) -> Estimate {
    let b = results.len() as f64;
    let p = results.iter().filter(|r| r.recommended_arm == best).count() as f64 / b;
    Estimate {
        mean: p,
        se: (p * (1.0 - p) / b).sqrt(),
    }
}

/// Mean gap `theta* - theta_a` of the recommended arm across replications.
pub fn expected_policy_regret(results: &[ReplicationResult], thetas: &[f64]) -> Estimate {
    let best = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = results.iter().map(|r| best - thetas[r.recommended_arm]).collect();
    Estimate::from_samples(&gaps)
}

/// Share of replications recommending each arm.
pub fn recommendation_shares(results: &[ReplicationResult], arms: usize) -> Vec<f64> {
    let mut shares = vec![0.0; arms];
    for r in results {
        shares[r.recommended_arm] += 1.0;
    }
    let b = results.len() as f64;
    shares.iter_mut().for_each(|s| *s /= b);
    shares
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub policy: String,
    pub replications: usize,
    pub best_arm: usize,
    pub isr: Estimate,
    pub bip: Estimate,
    pub epr: Estimate,
    pub recommendation_shares: Vec<f64>,
    pub mean_total_infections: f64,
    /// `[t][k]` mean assignment probability.
    pub mean_probabilities: Vec<Vec<f64>>,
    /// `[t]` mean cumulative infections through round `t`.
    pub mean_cumulative_infections: Vec<f64>,
}

/// Aggregates replications. The reduction runs in slice order, so callers
/// that sort by replication index get identical output however the
/// replications were scheduled.
pub fn aggregate(results: &[ReplicationResult], thetas: &[f64]) -> AggregateSummary {
    assert!(!results.is_empty(), "aggregate needs at least one replication");
    let k = thetas.len();
    let best = crate::argmax(thetas);
    let b = results.len() as f64;
    let rounds = results[0].probabilities_by_round.len();

    let isr: Vec<f64> = results.iter().map(|r| r.isr).collect();
    let mut mean_probabilities = vec![vec![0.0; k]; rounds];
    let mut mean_cumulative_infections = vec![0.0; rounds];
    for r in results {
        for (acc, row) in mean_probabilities.iter_mut().zip(&r.probabilities_by_round) {
            for (a, p) in acc.iter_mut().zip(row) {
                *a += p / b;
            }
        }
        let mut cum = 0u64;
        for (acc, &n) in mean_cumulative_infections.iter_mut().zip(&r.infections_by_round) {
            cum += n;
            *acc += cum as f64 / b;
        }
    }

    AggregateSummary {
        policy: results[0].policy.clone(),
        replications: results.len(),
        best_arm: best,
        isr: Estimate::from_samples(&isr),
        bip: best_arm_probability(results, best),
        epr: expected_policy_regret(results, thetas),
        recommendation_shares: recommendation_shares(results, k),
        mean_total_infections: results.iter().map(|r| r.total_infections() as f64).sum::<f64>() / b,
        mean_probabilities,
        mean_cumulative_infections,
    }
}
