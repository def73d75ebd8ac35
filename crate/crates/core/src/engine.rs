//! Discrete-time trial simulator.
//!
//! Round `t` runs in two steps. First the policy assigns the `m_t` arrivals
//! (none at `t = T`). Then, for `t >= 1`, infections are drawn among
//! participants enrolled in earlier rounds, so an arrival first faces risk in
//! the round after it enrolls.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{ArmModel, BaselineHazard};
use crate::policies::Policy;
use crate::TrialRng;

/// Risk set and new infections for one round `t >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// `o_{t,k}`: participants at risk when the round's infections are drawn.
    pub at_risk: Vec<u64>,
    /// `n_{t,k}`.
    pub infections: Vec<u64>,
}

impl RoundRecord {
    pub fn total_infections(&self) -> u64 {
        self.infections.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "round")]
pub enum ParticipantStatus {
    Active,
    Infected(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub enroll_round: usize,
    pub arm: usize,
    /// Probability the policy gave to this arm when the participant enrolled.
    pub assign_prob: f64,
    pub status: ParticipantStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub arm: usize,
    pub prob: f64,
}

/// A policy's output for one round: its per-participant distribution over
/// arms and the realized assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub probabilities: Vec<f64>,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub arms: ArmModel,
    pub hazard: BaselineHazard,
    /// Arrivals for rounds `0..T`; nobody arrives at `T`.
    pub arrivals: Vec<usize>,
}

impl TrialConfig {
    /// Constant schedule `m_t = M / T`.
    pub fn constant(arms: ArmModel, hazard: BaselineHazard, participants: usize) -> Result<Self> {
        let horizon = hazard.horizon();
        if horizon == 0 {
            return Err(Error::Config("trial horizon must be at least 1".into()));
        }
        if participants % horizon != 0 {
            return Err(Error::Config(format!(
                "participants {participants} not divisible by horizon {horizon}"
            )));
        }
        Ok(Self {
            arms,
            hazard,
            arrivals: vec![participants / horizon; horizon],
        })
    }

    pub fn horizon(&self) -> usize {
        self.arrivals.len()
    }

    pub fn participants(&self) -> usize {
        self.arrivals.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arrivals.is_empty() {
            return Err(Error::Config("arrival schedule is empty".into()));
        }
        self.hazard.ensure_horizon(self.horizon())
    }
}

#[derive(Debug, Clone)]
pub struct TrialState {
    pub t: usize,
    /// `o_{t,k}`
    pub at_risk: Vec<u64>,
    /// `M_{t,k}`
    pub cum_assigned: Vec<u64>,
    /// `N_{t,k}`
    pub cum_infected: Vec<u64>,
    pub participants: Vec<ParticipantRecord>,
    active: Vec<Vec<usize>>,
}

impl TrialState {
    pub fn new(arms: usize) -> Self {
        Self {
            t: 0,
            at_risk: vec![0; arms],
            cum_assigned: vec![0; arms],
            cum_infected: vec![0; arms],
            participants: Vec::new(),
            active: vec![Vec::new(); arms],
        }
    }

    pub fn arms(&self) -> usize {
        self.at_risk.len()
    }

    pub fn enroll(&mut self, round: usize, a: Assignment) -> Result<()> {
        if a.arm >= self.arms() {
            return Err(Error::OutOfRange {
                what: "arm",
                index: a.arm,
                len: self.arms(),
            });
        }
        let id = self.participants.len();
        self.participants.push(ParticipantRecord {
            enroll_round: round,
            arm: a.arm,
            assign_prob: a.prob,
            status: ParticipantStatus::Active,
        });
        self.active[a.arm].push(id);
        self.at_risk[a.arm] += 1;
        self.cum_assigned[a.arm] += 1;
        Ok(())
    }
}

/// Draws round `t`'s infections in every arm, removes the infected from the
/// risk set and returns `(n_{t,k}, ids of infected participants)`.
pub fn draw_infections(
    state: &mut TrialState,
    baseline: &BaselineHazard,
    arms: &ArmModel,
    t: usize,
    rng: &mut TrialRng,
) -> Result<(Vec<u64>, Vec<usize>)> {
    debug_assert!(t >= 1);
    let h = baseline.get(t)?;
    let mut counts = vec![0u64; state.arms()];
    let mut infected = Vec::new();
    for k in 0..state.arms() {
        let o = state.at_risk[k];
        if o == 0 || h == 0.0 {
            continue;
        }
        let p = -(-h * (-arms.theta(k)?).exp()).exp_m1();
        let n = Binomial::new(o, p)
            .map_err(|e| Error::Hazard(format!("infection probability {p}: {e}")))?
            .sample(rng);
        let pool = &mut state.active[k];
        for _ in 0..n {
            let idx = rng.random_range(0..pool.len());
            let id = pool.swap_remove(idx);
            state.participants[id].status = ParticipantStatus::Infected(t);
            infected.push(id);
        }
        counts[k] = n;
        state.at_risk[k] -= n;
        state.cum_infected[k] += n;
    }
    Ok((counts, infected))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    /// One record per round `t = 1..=T`.
    pub rounds: Vec<RoundRecord>,
    /// `m_{t,k}` for `t = 0..=T`.
    pub assignments_by_round: Vec<Vec<u64>>,
    /// The policy's per-participant distribution in each round `t = 0..=T`.
    pub probabilities_by_round: Vec<Vec<f64>>,
    pub cum_assigned: Vec<u64>,
    pub cum_infected: Vec<u64>,
    pub survivors: Vec<u64>,
    pub recommendation: usize,
    #[serde(skip)]
    pub participants: Vec<ParticipantRecord>,
}

impl TrialResult {
    /// New infections per round `t = 0..=T` summed over arms.
    pub fn infections_by_round(&self) -> Vec<u64> {
        let mut v = vec![0];
        v.extend(self.rounds.iter().map(RoundRecord::total_infections));
        v
    }

    pub fn total_infections(&self) -> u64 {
        self.cum_infected.iter().sum()
    }

    /// JSON rendering; the per-participant ledger is included on request.
    pub fn to_json(&self, with_ledger: bool) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if with_ledger {
            v["participants"] = serde_json::to_value(&self.participants)?;
        }
        Ok(v)
    }
}

pub fn run_trial(config: &TrialConfig, policy: &mut dyn Policy, rng: &mut TrialRng) -> Result<TrialResult> {
    config.validate()?;
    let k = config.arms.arms();
    let horizon = config.horizon();
    let mut state = TrialState::new(k);
    let mut rounds = Vec::with_capacity(horizon);
    let mut assignments_by_round = Vec::with_capacity(horizon + 1);
    let mut probabilities_by_round = Vec::with_capacity(horizon + 1);

    for t in 0..=horizon {
        state.t = t;
        let m = if t < horizon { config.arrivals[t] } else { 0 };
        let batch = policy.assign_batch(m, t, rng)?;
        if batch.assignments.len() != m || batch.probabilities.len() != k {
            return Err(Error::Config(format!(
                "policy returned {} assignments over {} arms, expected {m} over {k}",
                batch.assignments.len(),
                batch.probabilities.len()
            )));
        }

        if t >= 1 {
            let at_risk = state.at_risk.clone();
            let (infections, infected) = draw_infections(&mut state, &config.hazard, &config.arms, t, rng)?;
            let record = RoundRecord { t, at_risk, infections };
            let infected: Vec<ParticipantRecord> = infected.iter().map(|&i| state.participants[i]).collect();
            policy.observe(&record, &infected)?;
            rounds.push(record);
        }

        let mut counts = vec![0u64; k];
        for a in &batch.assignments {
            state.enroll(t, *a)?;
            counts[a.arm] += 1;
        }
        assignments_by_round.push(counts);
        probabilities_by_round.push(batch.probabilities);
    }

    let recommendation = policy.recommend()?;
    Ok(TrialResult {
        rounds,
        assignments_by_round,
        probabilities_by_round,
        survivors: state.at_risk.clone(),
        cum_assigned: state.cum_assigned,
        cum_infected: state.cum_infected,
        recommendation,
        participants: state.participants,
    })
}
