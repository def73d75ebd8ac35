//! Breslow partial likelihood for batched proportional-hazards data, the
//! penalized Newton MAP solver, and the Laplace posterior built on it.
//!
//! Parameters are passed as full-length vectors `thetas[0..K]` with the
//! placebo `thetas[0] = 0`; gradients, Hessians and posterior modes cover the
//! free coordinates `1..K` only.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::RoundRecord;
use crate::error::{Error, Result};

pub const DEFAULT_PRIOR_PRECISION: f64 = 0.01;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 100;

const MAX_TIED_EVENTS: u64 = 12;
const MAX_TIED_RISK_SET: u64 = 30;

/// Rounds with at least one infection, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHistory {
    arms: usize,
    records: Vec<RoundRecord>,
    events_per_arm: Vec<u64>,
}

impl EventHistory {
    pub fn new(arms: usize) -> Self {
        Self {
            arms,
            records: Vec::new(),
            events_per_arm: vec![0; arms],
        }
    }

    pub fn from_records<'a>(arms: usize, records: impl IntoIterator<Item = &'a RoundRecord>) -> Result<Self> {
        let mut h = Self::new(arms);
        for r in records {
            h.push(r.clone())?;
        }
        Ok(h)
    }

    /// Appends a round. Rounds without infections carry no information for the
    /// partial likelihood and are dropped.
    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        if record.at_risk.len() != self.arms || record.infections.len() != self.arms {
            return Err(Error::Config(format!(
                "round {} has {} risk counts and {} infection counts, expected {}",
                record.t,
                record.at_risk.len(),
                record.infections.len(),
                self.arms
            )));
        }
        for (k, (&n, &o)) in record.infections.iter().zip(&record.at_risk).enumerate() {
            if n > o {
                return Err(Error::Config(format!(
                    "round {}: arm {k} has {n} infections but only {o} at risk",
                    record.t
                )));
            }
        }
        if record.total_infections() == 0 {
            return Ok(());
        }
        for (acc, &n) in self.events_per_arm.iter_mut().zip(&record.infections) {
            *acc += n;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events_per_arm(&self) -> &[u64] {
        &self.events_per_arm
    }

    pub fn total_events(&self) -> u64 {
        self.events_per_arm.iter().sum()
    }
}

/// Per-round risk-set weights `w_k = o_k e^{-theta_k} / sum_i o_i e^{-theta_i}`
/// and the log of the denominator, via log-sum-exp over arms with `o > 0`.
fn risk_weights(at_risk: &[u64], thetas: &[f64], w: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (k, &o) in at_risk.iter().enumerate() {
        if o > 0 {
            max = max.max((o as f64).ln() - thetas[k]);
        }
    }
    let mut sum = 0.0;
    for (k, &o) in at_risk.iter().enumerate() {
        w[k] = if o > 0 {
            ((o as f64).ln() - thetas[k] - max).exp()
        } else {
            0.0
        };
        sum += w[k];
    }
    for wk in w.iter_mut() {
        *wk /= sum;
    }
    max + sum.ln()
}

fn check_thetas(h: &EventHistory, thetas: &[f64]) {
    assert_eq!(thetas.len(), h.arms, "theta vector must have one entry per arm");
}

pub fn log_breslow(h: &EventHistory, thetas: &[f64]) -> f64 {
    check_thetas(h, thetas);
    let mut w = vec![0.0; h.arms];
    h.records
        .iter()
        .map(|r| {
            let log_denom = risk_weights(&r.at_risk, thetas, &mut w);
            let linear: f64 = r.infections.iter().zip(thetas).map(|(&n, &th)| n as f64 * th).sum();
            -linear - r.total_infections() as f64 * log_denom
        })
        .sum()
}

pub fn grad_log_breslow(h: &EventHistory, thetas: &[f64]) -> DVector<f64> {
    check_thetas(h, thetas);
    let d = h.arms - 1;
    let mut g = DVector::zeros(d);
    let mut w = vec![0.0; h.arms];
    for r in &h.records {
        risk_weights(&r.at_risk, thetas, &mut w);
        let nt = r.total_infections() as f64;
        for k in 1..h.arms {
            g[k - 1] += nt * w[k] - r.infections[k] as f64;
        }
    }
    g
}

pub fn hessian_log_breslow(h: &EventHistory, thetas: &[f64]) -> DMatrix<f64> {
    check_thetas(h, thetas);
    let d = h.arms - 1;
    let mut hess = DMatrix::zeros(d, d);
    let mut w = vec![0.0; h.arms];
    for r in &h.records {
        risk_weights(&r.at_risk, thetas, &mut w);
        let nt = r.total_infections() as f64;
        for j in 1..h.arms {
            for k in 1..h.arms {
                let delta = if j == k { w[j] } else { 0.0 };
                hess[(j - 1, k - 1)] -= nt * (delta - w[j] * w[k]);
            }
        }
    }
    hess
}

/// Log of the exact discrete-time partial likelihood, whose denominator sums
/// over every size-`n_t` subset of the risk set. The subset sum depends only
/// on how many selected members come from each arm, so it is accumulated as a
/// truncated polynomial product over arms. Only small instances are accepted.
pub fn log_exact_ties(h: &EventHistory, thetas: &[f64]) -> Result<f64> {
    check_thetas(h, thetas);
    let mut total = 0.0;
    for r in &h.records {
        let n = r.total_infections();
        let o: u64 = r.at_risk.iter().sum();
        if n > MAX_TIED_EVENTS || o > MAX_TIED_RISK_SET {
            return Err(Error::SizeGuard(format!(
                "round {} has {n} events among {o} at risk (limits {MAX_TIED_EVENTS} and {MAX_TIED_RISK_SET})",
                r.t
            )));
        }
        let n = n as usize;
        // Shift by the smallest theta present so every factor is <= 1.
        let shift = r
            .at_risk
            .iter()
            .zip(thetas)
            .filter(|(&o, _)| o > 0)
            .map(|(_, &th)| th)
            .fold(f64::INFINITY, f64::min);
        let mut poly = vec![0.0; n + 1];
        poly[0] = 1.0;
        for (k, &ok) in r.at_risk.iter().enumerate() {
            if ok == 0 {
                continue;
            }
            let x = (-(thetas[k] - shift)).exp();
            let mut next = vec![0.0; n + 1];
            for (c, slot) in next.iter_mut().enumerate() {
                let mut coef = 1.0;
                let mut pow = 1.0;
                for j in 0..=c.min(ok as usize) {
                    *slot += poly[c - j] * coef * pow;
                    coef *= (ok - j as u64) as f64 / (j + 1) as f64;
                    pow *= x;
                }
            }
            poly = next;
        }
        let linear: f64 = r.infections.iter().zip(thetas).map(|(&c, &th)| c as f64 * th).sum();
        total += -linear - (poly[n].ln() - n as f64 * shift);
    }
    Ok(total)
}

fn full_thetas(free: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(free.len() + 1);
    v.push(0.0);
    v.extend_from_slice(free);
    v
}

fn penalized(h: &EventHistory, lambda: f64, free: &[f64]) -> f64 {
    let sq: f64 = free.iter().map(|x| x * x).sum();
    log_breslow(h, &full_thetas(free)) - 0.5 * lambda * sq
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    /// Free coordinates `theta_1..theta_{K-1}`.
    pub mode: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes `log_breslow(theta) - lambda/2 * |theta|^2` over the free
/// coordinates with damped Newton steps.
pub fn newton_map(h: &EventHistory, lambda: f64, init: &[f64]) -> Result<MapEstimate> {
    let d = h.arms - 1;
    if init.len() != d {
        return Err(Error::Config(format!(
            "initial point has length {}, expected {d}",
            init.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("prior precision {lambda} must be finite and >= 0")));
    }
    if lambda == 0.0 {
        if let Some(arm) = h.events_per_arm.iter().position(|&n| n == 0) {
            return Err(Error::Unbounded { arm });
        }
    }

    let mut x = init.to_vec();
    let mut f = penalized(h, lambda, &x);
    for iter in 0..MAX_NEWTON_ITERATIONS {
        let full = full_thetas(&x);
        let mut g = grad_log_breslow(h, &full);
        for i in 0..d {
            g[i] -= lambda * x[i];
        }
        if g.amax() < GRADIENT_TOLERANCE {
            return Ok(MapEstimate {
                mode: x,
                iterations: iter,
                converged: true,
            });
        }
        let mut neg_hess = -hessian_log_breslow(h, &full);
        for i in 0..d {
            neg_hess[(i, i)] += lambda;
        }
        let step = match Cholesky::new(neg_hess.clone()) {
            Some(c) => c.solve(&g),
            None => {
                // Flat direction: regularize just enough to factor.
                let jitter = 1e-8 * neg_hess.diagonal().amax().max(1.0);
                for i in 0..d {
                    neg_hess[(i, i)] += jitter;
                }
                Cholesky::new(neg_hess).map(|c| c.solve(&g)).unwrap_or_else(|| g.clone())
            }
        };

        // Objective changes below this are rounding noise near the optimum.
        let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            let fc = penalized(h, lambda, &cand);
            if fc >= f - slack {
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent possible at machine precision.
            return Ok(MapEstimate {
                mode: x,
                iterations: iter + 1,
                converged: g.amax() < GRADIENT_TOLERANCE * 1e3,
            });
        }
    }
    let mut g = grad_log_breslow(h, &full_thetas(&x));
    for i in 0..d {
        g[i] -= lambda * x[i];
    }
    Ok(MapEstimate {
        converged: g.amax() < GRADIENT_TOLERANCE,
        mode: x,
        iterations: MAX_NEWTON_ITERATIONS,
    })
}

/// Gaussian approximation to the posterior over the free coordinates.
#[derive(Debug, Clone)]
pub struct PosteriorApprox {
    mode: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    prior_precision: f64,
    converged: bool,
}

impl PosteriorApprox {
    /// Validates `covariance` by factoring it.
    pub fn new(mode: Vec<f64>, covariance: DMatrix<f64>, prior_precision: f64) -> Result<Self> {
        let d = mode.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Config(format!(
                "covariance is {}x{}, mode has length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let chol: Cholesky<f64, Dyn> = Cholesky::new(sym.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            mode: DVector::from_vec(mode),
            factor: chol.l(),
            covariance: sym,
            prior_precision,
            converged: true,
        })
    }

    pub fn mode(&self) -> &[f64] {
        self.mode.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    /// Whether the Newton solve behind the mode met its gradient tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }
}

/// MAP mode plus covariance `(-H + lambda I)^{-1}` at the mode.
pub fn laplace(h: &EventHistory, lambda: f64) -> Result<PosteriorApprox> {
    laplace_from(h, lambda, &vec![0.0; h.arms - 1])
}

/// As [`laplace`], warm-starting Newton at `init`.
pub fn laplace_from(h: &EventHistory, lambda: f64, init: &[f64]) -> Result<PosteriorApprox> {
    let map = newton_map(h, lambda, init)?;
    let d = map.mode.len();
    let mut precision = -hessian_log_breslow(h, &full_thetas(&map.mode));
    for i in 0..d {
        precision[(i, i)] += lambda;
    }
    let chol = Cholesky::new(precision).ok_or(Error::NotPositiveDefinite)?;
    let covariance = chol.inverse();
    let mut post = PosteriorApprox::new(map.mode, covariance, lambda)?;
    post.converged = map.converged;
    Ok(post)
}

/// One posterior draw as a full-length vector with the placebo's 0 prepended.
pub fn sample_posterior<R: Rng + ?Sized>(p: &PosteriorApprox, rng: &mut R) -> Vec<f64> {
    let d = p.dim();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let draw = &p.mode + &p.factor * z;
    let mut out = Vec::with_capacity(d + 1);
    out.push(0.0);
    out.extend(draw.iter());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, at_risk: &[u64], infections: &[u64]) -> RoundRecord {
        RoundRecord {
            t,
            at_risk: at_risk.to_vec(),
            infections: infections.to_vec(),
        }
    }

    fn hist(arms: usize, recs: &[RoundRecord]) -> EventHistory {
        EventHistory::from_records(arms, recs).unwrap()
    }

    #[test]
    fn single_event_symmetric() {
        let h = hist(2, &[rec(1, &[10, 10], &[1, 0])]);
        assert!((log_breslow(&h, &[0.0, 0.0]) - (1.0f64 / 20.0).ln()).abs() < 1e-14);
        assert!((log_breslow(&h, &[0.0, 60.0]) - (0.1f64).ln()).abs() < 1e-12);
        let g = grad_log_breslow(&h, &[0.0, 0.0]);
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_history_is_zero() {
        let h = EventHistory::new(3);
        assert_eq!(log_breslow(&h, &[0.0, 1.0, 2.0]), 0.0);
        assert_eq!(log_exact_ties(&h, &[0.0, 1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_event_rounds_are_dropped() {
        let mut h = EventHistory::new(2);
        h.push(rec(1, &[5, 5], &[0, 0])).unwrap();
        assert!(h.is_empty());
        assert!(h.push(rec(2, &[1, 5], &[2, 0])).is_err());
        assert!(h.push(rec(2, &[1, 5, 3], &[0, 0, 1])).is_err());
    }

    #[test]
    fn exact_ties_uniform_pairs() {
        let h = hist(2, &[rec(1, &[2, 2], &[2, 0])]);
        let v = log_exact_ties(&h, &[0.0, 0.0]).unwrap();
        assert!((v + 6.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exact_ties_size_guard() {
        let h = hist(2, &[rec(1, &[20, 20], &[1, 0])]);
        assert!(matches!(log_exact_ties(&h, &[0.0, 0.0]), Err(Error::SizeGuard(_))));
        let h = hist(2, &[rec(1, &[15, 15], &[7, 6])]);
        assert!(log_exact_ties(&h, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn balanced_data_has_zero_gradient() {
        // o = (10, 10), theta = 0: w = 1/2 each, n = (1, 1).
        let h = hist(2, &[rec(1, &[10, 10], &[1, 1]), rec(2, &[9, 9], &[2, 2])]);
        let g = grad_log_breslow(&h, &[0.0, 0.0]);
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn flat_direction_in_hessian() {
        // Arm 2 never appears in a risk set.
        let h = hist(3, &[rec(1, &[10, 10, 0], &[1, 0, 0]), rec(2, &[9, 10, 0], &[0, 1, 0])]);
        let hs = hessian_log_breslow(&h, &[0.0, 0.3, 1.0]);
        assert_eq!(hs[(1, 1)], 0.0);
        assert_eq!(hs[(0, 1)], 0.0);
        assert!(hs[(0, 0)] < 0.0);
    }

    #[test]
    fn symmetric_data_gives_zero_mode() {
        let h = hist(
            3,
            &[rec(1, &[10, 10, 10], &[1, 1, 1]), rec(2, &[9, 9, 9], &[2, 2, 2])],
        );
        let m = newton_map(&h, 0.0, &[1.0, -2.0]).unwrap();
        assert!(m.converged);
        assert!(m.mode.iter().all(|x| x.abs() < 1e-7), "{:?}", m.mode);
    }

    #[test]
    fn strong_prior_pulls_mode_to_zero() {
        let h = hist(2, &[rec(1, &[10, 10], &[3, 0]), rec(2, &[7, 10], &[2, 0])]);
        let m = newton_map(&h, 1e8, &[0.0]).unwrap();
        assert!(m.mode[0].abs() < 1e-6);
        let p = laplace(&h, 1e8).unwrap();
        assert!((p.covariance()[(0, 0)] * 1e8 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_prior_without_events_is_unbounded() {
        let h = hist(3, &[rec(1, &[10, 10, 10], &[1, 1, 0])]);
        assert!(matches!(newton_map(&h, 0.0, &[0.0, 0.0]), Err(Error::Unbounded { arm: 2 })));
        assert!(newton_map(&h, 0.01, &[0.0, 0.0]).unwrap().converged);
    }

    #[test]
    fn bad_init_length() {
        let h = hist(3, &[rec(1, &[10, 10, 10], &[1, 1, 1])]);
        assert!(newton_map(&h, 0.01, &[0.0]).is_err());
    }

    #[test]
    fn degenerate_covariance_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(PosteriorApprox::new(vec![0.0, 0.0], c, 0.0).is_err());
    }

    #[test]
    fn tiny_covariance_draws_sit_on_mode() {
        use rand::SeedableRng;
        let p = PosteriorApprox::new(vec![1.0, 2.0], DMatrix::identity(2, 2) * 1e-20, 1e20).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = sample_posterior(&p, &mut rng);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 1.0).abs() < 1e-8 && (d[2] - 2.0).abs() < 1e-8);
    }
}
