//! Allocation policies: uniform randomization (RCT), partial-likelihood
//! Thompson sampling, its top-two variant, and delayed exponential weights.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::engine::{Assignment, Batch, ParticipantRecord, RoundRecord};
use crate::error::{Error, Result};
use crate::likelihood::{self, EventHistory, PosteriorApprox, DEFAULT_PRIOR_PRECISION};
use crate::{argmax, TrialRng};

/// Auxiliary posterior draws per round used to estimate assignment
/// probabilities for Thompson-type policies.
pub const AUX_DRAWS: usize = 1000;
/// Cap on top-two redraws before falling back to the runner-up coordinate.
pub const MAX_REDRAWS: usize = 1000;
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Top-two redraw loops that hit [`MAX_REDRAWS`].
    pub redraw_cap_hits: u64,
    /// Newton solves stopped by the iteration cap.
    pub nonconverged_solves: u64,
}

pub trait Policy: Send {
    fn label(&self) -> String;

    /// Assigns `m` arrivals in round `t`. Called for every round including
    /// `t = T` with `m = 0`, so the per-round distribution is always reported.
    fn assign_batch(&mut self, m: usize, t: usize, rng: &mut TrialRng) -> Result<Batch>;

    fn observe(&mut self, record: &RoundRecord, infected: &[ParticipantRecord]) -> Result<()>;

    fn recommend(&mut self) -> Result<usize>;

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

fn uniform_batch(k: usize, m: usize, rng: &mut TrialRng) -> Batch {
    let p = 1.0 / k as f64;
    Batch {
        probabilities: vec![p; k],
        assignments: (0..m)
            .map(|_| Assignment {
                arm: rng.random_range(0..k),
                prob: p,
            })
            .collect(),
    }
}

/// Index of the smallest value, lowest index on ties, skipping `None`.
fn argmin_some(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Uniform randomization throughout the trial.
#[derive(Debug, Clone)]
pub struct Rct {
    assigned: Vec<u64>,
    infected: Vec<u64>,
}

impl Rct {
    pub fn new(arms: usize) -> Self {
        Self {
            assigned: vec![0; arms],
            infected: vec![0; arms],
        }
    }
}

/// Arm with the lowest infection rate `N_k / M_k`; arms with nobody assigned
/// are skipped.
pub fn rct_recommend(assigned: &[u64], infected: &[u64]) -> Result<usize> {
    let rates: Vec<Option<f64>> = assigned
        .iter()
        .zip(infected)
        .map(|(&m, &n)| (m > 0).then(|| n as f64 / m as f64))
        .collect();
    argmin_some(&rates).ok_or(Error::NoAssignments)
}

impl Policy for Rct {
    fn label(&self) -> String {
        "rct".into()
    }

    fn assign_batch(&mut self, m: usize, _t: usize, rng: &mut TrialRng) -> Result<Batch> {
        let batch = uniform_batch(self.assigned.len(), m, rng);
        for a in &batch.assignments {
            self.assigned[a.arm] += 1;
        }
        Ok(batch)
    }

    fn observe(&mut self, record: &RoundRecord, _infected: &[ParticipantRecord]) -> Result<()> {
        for (acc, &n) in self.infected.iter_mut().zip(&record.infections) {
            *acc += n;
        }
        Ok(())
    }

    fn recommend(&mut self) -> Result<usize> {
        rct_recommend(&self.assigned, &self.infected)
    }
}

/// Arm with the largest posterior mode, counting the placebo's fixed 0.
pub fn recommend_from_mode(mode: &[f64]) -> usize {
    let mut full = Vec::with_capacity(mode.len() + 1);
    full.push(0.0);
    full.extend_from_slice(mode);
    argmax(&full)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Variant {
    Standard,
    TopTwo { beta: f64 },
}

/// Thompson sampling on the Laplace-approximated partial-likelihood
/// posterior. Until the first infection anywhere it randomizes uniformly.
#[derive(Debug, Clone)]
pub struct Thompson {
    arms: usize,
    lambda: f64,
    variant: Variant,
    history: EventHistory,
    warm_start: Vec<f64>,
    diagnostics: Diagnostics,
}

impl Thompson {
    pub fn plts(arms: usize, lambda: f64) -> Result<Self> {
        Self::build(arms, lambda, Variant::Standard)
    }

    pub fn top_two(arms: usize, lambda: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("beta = {beta} must lie in (0, 1]")));
        }
        Self::build(arms, lambda, Variant::TopTwo { beta })
    }

    fn build(arms: usize, lambda: f64, variant: Variant) -> Result<Self> {
        if arms < 2 {
            return Err(Error::Config("need at least 2 arms".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {lambda} must be finite and >= 0")));
        }
        Ok(Self {
            arms,
            lambda,
            variant,
            history: EventHistory::new(arms),
            warm_start: vec![0.0; arms - 1],
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn history(&self) -> &EventHistory {
        &self.history
    }

    fn posterior(&mut self) -> Result<PosteriorApprox> {
        let post = likelihood::laplace_from(&self.history, self.lambda, &self.warm_start)?;
        if !post.converged() {
            self.diagnostics.nonconverged_solves += 1;
        }
        self.warm_start = post.mode().to_vec();
        Ok(post)
    }
}

fn sampled_argmax(post: &PosteriorApprox, rng: &mut TrialRng) -> usize {
    argmax(&likelihood::sample_posterior(post, rng))
}

/// One participant under standard Thompson sampling.
pub fn plts_draw(post: &PosteriorApprox, rng: &mut TrialRng) -> usize {
    sampled_argmax(post, rng)
}

/// One participant under top-two sampling. Returns the arm and whether the
/// redraw cap was hit.
pub fn ttplts_draw(post: &PosteriorApprox, beta: f64, rng: &mut TrialRng) -> (usize, bool) {
    let leader = sampled_argmax(post, rng);
    if rng.random_bool(beta) {
        return (leader, false);
    }
    let mut last = Vec::new();
    for _ in 0..MAX_REDRAWS {
        last = likelihood::sample_posterior(post, rng);
        let challenger = argmax(&last);
        if challenger != leader {
            return (challenger, false);
        }
    }
    (runner_up(&last, leader), true)
}

/// Largest coordinate other than `leader`, lowest index on ties.
fn runner_up(values: &[f64], leader: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if i != leader && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(leader, |(i, _)| i)
}

/// Smoothed argmax frequencies over `draws` posterior samples. The +1/2
/// smoothing keeps every probability strictly positive.
pub fn argmax_frequencies(post: &PosteriorApprox, draws: usize, rng: &mut TrialRng) -> Vec<f64> {
    let k = post.dim() + 1;
    let mut counts = vec![0.0; k];
    for _ in 0..draws {
        counts[sampled_argmax(post, rng)] += 1.0;
    }
    let denom = draws as f64 + 0.5 * k as f64;
    counts.iter().map(|c| (c + 0.5) / denom).collect()
}

/// Per-participant distribution of top-two sampling implied by argmax
/// probabilities `q`: `beta q_i + (1 - beta) sum_{j != i} q_j q_i / (1 - q_j)`.
pub fn top_two_probabilities(q: &[f64], beta: f64) -> Vec<f64> {
    let k = q.len();
    let mut p: Vec<f64> = q.iter().map(|qi| beta * qi).collect();
    for j in 0..k {
        let rest = 1.0 - q[j];
        if rest <= 0.0 {
            continue;
        }
        for i in 0..k {
            if i != j {
                p[i] += (1.0 - beta) * q[j] * q[i] / rest;
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|x| x / total).collect()
}

impl Policy for Thompson {
    fn label(&self) -> String {
        match self.variant {
            Variant::Standard => "plts".into(),
            Variant::TopTwo { .. } => "ttplts".into(),
        }
    }

    fn assign_batch(&mut self, m: usize, _t: usize, rng: &mut TrialRng) -> Result<Batch> {
        if self.history.is_empty() {
            return Ok(uniform_batch(self.arms, m, rng));
        }
        let post = self.posterior()?;
        let q = argmax_frequencies(&post, AUX_DRAWS, rng);
        let probabilities = match self.variant {
            Variant::Standard => q,
            Variant::TopTwo { beta } => top_two_probabilities(&q, beta),
        };
        let mut assignments = Vec::with_capacity(m);
        for _ in 0..m {
            let arm = match self.variant {
                Variant::Standard => plts_draw(&post, rng),
                Variant::TopTwo { beta } => {
                    let (arm, capped) = ttplts_draw(&post, beta, rng);
                    if capped {
                        self.diagnostics.redraw_cap_hits += 1;
                    }
                    arm
                }
            };
            assignments.push(Assignment {
                arm,
                prob: probabilities[arm],
            });
        }
        Ok(Batch {
            probabilities,
            assignments,
        })
    }

    fn observe(&mut self, record: &RoundRecord, _infected: &[ParticipantRecord]) -> Result<()> {
        self.history.push(record.clone())
    }

    fn recommend(&mut self) -> Result<usize> {
        if self.history.is_empty() {
            return Ok(recommend_from_mode(&vec![0.0; self.arms - 1]));
        }
        let map = likelihood::newton_map(&self.history, self.lambda, &self.warm_start)?;
        if !map.converged {
            self.diagnostics.nonconverged_solves += 1;
        }
        Ok(recommend_from_mode(&map.mode))
    }

    fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }
}

/// Delayed exponential weights, kept as log-weights.
#[derive(Debug, Clone)]
pub struct Dew {
    eta: f64,
    log_weights: Vec<f64>,
}

impl Dew {
    pub fn new(arms: usize, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta = {eta} must be finite and >= 0")));
        }
        if arms < 2 {
            return Err(Error::Config("need at least 2 arms".into()));
        }
        Ok(Self {
            eta,
            log_weights: vec![0.0; arms],
        })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    /// Applies one observed infection of a participant who enrolled in `arm`
    /// with probability `prob`.
    pub fn record_infection(&mut self, arm: usize, prob: f64) {
        self.log_weights[arm] -= self.eta / prob;
    }
}

fn sample_categorical(p: &[f64], rng: &mut TrialRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

impl Policy for Dew {
    fn label(&self) -> String {
        format!("dew(eta={})", self.eta)
    }

    fn assign_batch(&mut self, m: usize, _t: usize, rng: &mut TrialRng) -> Result<Batch> {
        let probabilities = self.probabilities();
        let assignments = (0..m)
            .map(|_| {
                let arm = sample_categorical(&probabilities, rng);
                Assignment {
                    arm,
                    prob: probabilities[arm],
                }
            })
            .collect();
        Ok(Batch {
            probabilities,
            assignments,
        })
    }

    fn observe(&mut self, _record: &RoundRecord, infected: &[ParticipantRecord]) -> Result<()> {
        for p in infected {
            self.record_infection(p.arm, p.assign_prob);
        }
        Ok(())
    }

    fn recommend(&mut self) -> Result<usize> {
        Ok(argmax(&self.log_weights))
    }
}

/// Policy selection as it appears in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    Rct,
    Plts {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Ttplts {
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Dew {
        eta: f64,
    },
}

fn default_lambda() -> f64 {
    DEFAULT_PRIOR_PRECISION
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl PolicySpec {
    pub fn build(&self, arms: usize) -> Result<Box<dyn Policy>> {
        Ok(match *self {
            PolicySpec::Rct => Box::new(Rct::new(arms)),
            PolicySpec::Plts { lambda } => Box::new(Thompson::plts(arms, lambda)?),
            PolicySpec::Ttplts { beta, lambda } => Box::new(Thompson::top_two(arms, lambda, beta)?),
            PolicySpec::Dew { eta } => Box::new(Dew::new(arms, eta)?),
        })
    }
}
