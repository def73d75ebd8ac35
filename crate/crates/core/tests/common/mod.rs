//! Independent oracles shared by the integration tests. Nothing here calls
//! into the implementation paths it is used to check.

#![allow(dead_code)]

use plts_core::engine::RoundRecord;
use plts_core::likelihood::EventHistory;
use plts_core::TrialRng;
use rand::{Rng, SeedableRng};

pub const DEFAULT_THETAS: [f64; 6] = [0.0, 1.2, 1.5, 2.2, 2.4, 3.0];

pub fn rng(seed: u64) -> TrialRng {
    TrialRng::seed_from_u64(seed)
}

/// Random history. With `ties = false` every round has exactly one event.
pub fn random_history(rng: &mut TrialRng, arms: usize, rounds: usize, max_risk: u64, ties: bool) -> EventHistory {
    let mut h = EventHistory::new(arms);
    for t in 1..=rounds {
        let at_risk: Vec<u64> = (0..arms).map(|_| rng.random_range(1..=max_risk)).collect();
        let mut infections = vec![0u64; arms];
        if ties {
            let total: u64 = rng.random_range(1..=4);
            for _ in 0..total {
                let k = rng.random_range(0..arms);
                if infections[k] < at_risk[k] {
                    infections[k] += 1;
                }
            }
        } else {
            infections[rng.random_range(0..arms)] = 1;
        }
        h.push(RoundRecord { t, at_risk, infections }).unwrap();
    }
    h
}

pub fn random_thetas(rng: &mut TrialRng, arms: usize, spread: f64) -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((1..arms).map(|_| rng.random_range(-spread..spread)));
    v
}

/// Log of the tie-free partial likelihood as a plain product of per-event
/// conditional probabilities `e^{-theta_I} / sum_k o_k e^{-theta_k}`.
pub fn tie_free_product(h: &EventHistory, thetas: &[f64]) -> f64 {
    let mut prod = 1.0f64;
    let mut log_acc = 0.0;
    for r in h.records() {
        for (k, &n) in r.infections.iter().enumerate() {
            for _ in 0..n {
                let denom: f64 = r.at_risk.iter().zip(thetas).map(|(&o, &th)| o as f64 * (-th).exp()).sum();
                prod *= (-thetas[k]).exp() / denom;
                // renormalize to stay in range
                if prod < 1e-200 {
                    log_acc += prod.ln();
                    prod = 1.0;
                }
            }
        }
    }
    log_acc + prod.ln()
}

/// Exact tied-event likelihood by explicit enumeration of every subset of
/// the risk set with the round's event count.
pub fn exact_ties_by_subsets(h: &EventHistory, thetas: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in h.records() {
        let members: Vec<f64> = r
            .at_risk
            .iter()
            .enumerate()
            .flat_map(|(k, &o)| std::iter::repeat_n(thetas[k], o as usize))
            .collect();
        let n = r.total_infections() as usize;
        let mut denom = 0.0;
        let size = members.len();
        for mask in 0u64..(1u64 << size) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let s: f64 = (0..size).filter(|i| mask >> i & 1 == 1).map(|i| members[i]).sum();
            denom += (-s).exp();
        }
        let num: f64 = r.infections.iter().zip(thetas).map(|(&c, &th)| c as f64 * th).sum();
        total += -num - denom.ln();
    }
    total
}

/// Mean and variance of the 1-D density proportional to `exp(logf)` by
/// composite Simpson quadrature on `[lo, hi]`.
pub fn quadrature_moments(logf: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> (f64, f64) {
    let steps = steps + steps % 2;
    let dx = (hi - lo) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * dx).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| logf(x)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (i, (&x, &l)) in xs.iter().zip(&logs).enumerate() {
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let f = w * (l - peak).exp();
        z += f;
        m1 += f * x;
        m2 += f * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Distribution of total infections for a trial with `arrivals[t]` uniform
/// arrivals at rounds `t = 0..T` and per-round infection probabilities
/// `probs[t - 1][k]` for rounds `1..=T`, by exhaustive enumeration of every
/// assignment and infection branch.
pub fn total_infection_distribution(arrivals: &[usize], probs: &[Vec<f64>]) -> Vec<f64> {
    let arms = probs[0].len();
    let total: usize = arrivals.iter().sum();
    let mut dist = vec![0.0; total + 1];
    // state: active counts per arm, infections so far, probability
    fn recurse(
        t: usize,
        active: Vec<usize>,
        infected: usize,
        weight: f64,
        arrivals: &[usize],
        probs: &[Vec<f64>],
        dist: &mut [f64],
    ) {
        let horizon = arrivals.len();
        let arms = active.len();
        // assignment branches for round t
        let mut branches = vec![(active.clone(), weight)];
        if t < horizon {
            for _ in 0..arrivals[t] {
                let mut next = Vec::new();
                for (a, w) in &branches {
                    for k in 0..arms {
                        let mut b = a.clone();
                        b[k] += 1;
                        next.push((b, w / arms as f64));
                    }
                }
                branches = next;
            }
        }
        for (after_assign, w) in branches {
            if t == 0 {
                recurse(1, after_assign, infected, w, arrivals, probs, dist);
                continue;
            }
            // infections among those active before this round's arrivals
            let mut outcomes = vec![(vec![0usize; arms], 1.0)];
            for k in 0..arms {
                let p = probs[t - 1][k];
                let mut next = Vec::new();
                for (cnt, pw) in &outcomes {
                    // binomial over active[k] individuals, expanded one by one
                    let mut local = vec![(0usize, *pw)];
                    for _ in 0..active[k] {
                        let mut grow = Vec::new();
                        for (c, q) in &local {
                            grow.push((c + 1, q * p));
                            grow.push((*c, q * (1.0 - p)));
                        }
                        local = grow;
                    }
                    for (c, q) in local {
                        let mut nc = cnt.clone();
                        nc[k] = c;
                        next.push((nc, q));
                    }
                }
                outcomes = next;
            }
            for (cnt, q) in outcomes {
                let next_active: Vec<usize> = after_assign.iter().zip(&cnt).map(|(a, c)| a - c).collect();
                let new_inf = infected + cnt.iter().sum::<usize>();
                if t == horizon {
                    dist[new_inf] += w * q;
                } else {
                    recurse(t + 1, next_active, new_inf, w * q, arrivals, probs, dist);
                }
            }
        }
    }
    recurse(0, vec![0; arms], 0, 1.0, arrivals, probs, &mut dist);
    dist
}
