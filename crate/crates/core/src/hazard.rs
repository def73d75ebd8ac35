//! Baseline hazard series and the proportional-hazards arm model.
//!
//! Arms are indexed from 0; arm 0 is the placebo and its efficiency parameter
//! is pinned to zero, so `h_k(t) = h_0(t) * exp(-theta_k)`.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardSource {
    File,
    Synthetic,
}

/// Per-day placebo hazard for days `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    values: Vec<f64>,
    source: HazardSource,
}

impl BaselineHazard {
    pub fn new(values: Vec<f64>, source: HazardSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Hazard("hazard series is empty".into()));
        }
        for (t, &h) in values.iter().enumerate() {
            if !h.is_finite() || h < 0.0 {
                return Err(Error::Hazard(format!(
                    "hazard at day {t} is {h}; must be finite and non-negative"
                )));
            }
            if h >= 1.0 {
                return Err(Error::Hazard(format!(
                    "hazard at day {t} is {h}; a per-day hazard must be below 1"
                )));
            }
        }
        Ok(Self { values, source })
    }

    /// Constant hazard over `horizon + 1` days.
    pub fn constant(h: f64, horizon: usize) -> Result<Self> {
        Self::new(vec![h; horizon + 1], HazardSource::Synthetic)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> HazardSource {
        self.source
    }

    /// Trial horizon `T`; the series covers days `0..=T`.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, t: usize) -> Result<f64> {
        self.values.get(t).copied().ok_or(Error::OutOfRange {
            what: "day",
            index: t,
            len: self.values.len(),
        })
    }

    pub fn ensure_horizon(&self, horizon: usize) -> Result<()> {
        if self.horizon() != horizon {
            return Err(Error::Config(format!(
                "hazard covers {} days but the trial horizon needs {}",
                self.values.len(),
                horizon + 1
            )));
        }
        Ok(())
    }
}

/// Efficiency parameters for every arm, placebo first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ArmModel {
    thetas: Vec<f64>,
}

impl ArmModel {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 arms, got {}",
                thetas.len()
            )));
        }
        if thetas[0] != 0.0 {
            return Err(Error::Config(format!(
                "placebo theta must be 0, got {}",
                thetas[0]
            )));
        }
        if let Some(bad) = thetas.iter().find(|t| !t.is_finite()) {
            return Err(Error::Config(format!("theta {bad} is not finite")));
        }
        Ok(Self { thetas })
    }

    /// Builds the model from the non-placebo parameters only.
    pub fn from_vaccines(vaccines: &[f64]) -> Result<Self> {
        let mut thetas = Vec::with_capacity(vaccines.len() + 1);
        thetas.push(0.0);
        thetas.extend_from_slice(vaccines);
        Self::new(thetas)
    }

    pub fn arms(&self) -> usize {
        self.thetas.len()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn theta(&self, arm: usize) -> Result<f64> {
        self.thetas.get(arm).copied().ok_or(Error::OutOfRange {
            what: "arm",
            index: arm,
            len: self.thetas.len(),
        })
    }

    /// Arm with the largest theta, lowest index on ties.
    pub fn best_arm(&self) -> usize {
        crate::argmax(&self.thetas)
    }
}

impl TryFrom<Vec<f64>> for ArmModel {
    type Error = Error;

    fn try_from(thetas: Vec<f64>) -> Result<Self> {
        Self::new(thetas)
    }
}

impl From<ArmModel> for Vec<f64> {
    fn from(m: ArmModel) -> Self {
        m.thetas
    }
}

pub fn arm_hazard(baseline: &BaselineHazard, arms: &ArmModel, t: usize, arm: usize) -> Result<f64> {
    Ok(baseline.get(t)? * (-arms.theta(arm)?).exp())
}

/// `1 - exp(-theta)`: one minus the hazard ratio against placebo.
pub fn vaccine_efficiency(theta: f64) -> f64 {
    -(-theta).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyCount {
    pub date: NaiveDate,
    pub count: f64,
}

/// Reads a `date,count` CSV with ISO-8601 dates.
pub fn read_counts_csv(path: &Path) -> Result<Vec<DailyCount>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        let row: DailyCount = rec.map_err(|e| Error::Hazard(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Trailing moving average of `counts` over `window` days. The first
/// `window - 1` entries average whatever prefix is available.
pub fn trailing_mean(counts: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(counts.len());
    let mut sum = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        sum += c;
        if i >= window {
            sum -= counts[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

/// Baseline hazard from daily case counts: trailing `window`-day mean divided
/// by `population`, truncated to the first `horizon + 1` days.
pub fn load_daily_counts(
    rows: &[DailyCount],
    population: u64,
    window: usize,
    horizon: usize,
) -> Result<BaselineHazard> {
    if window == 0 {
        return Err(Error::Hazard("moving-average window must be positive".into()));
    }
    if population == 0 {
        return Err(Error::Hazard("population must be positive".into()));
    }
    if rows.len() < horizon + 1 {
        return Err(Error::Hazard(format!(
            "series has {} days, need at least {}",
            rows.len(),
            horizon + 1
        )));
    }
    for pair in rows.windows(2) {
        if pair[1].date.signed_duration_since(pair[0].date).num_days() != 1 {
            return Err(Error::Hazard(format!(
                "dates are not consecutive: {} followed by {}",
                pair[0].date, pair[1].date
            )));
        }
    }
    let mut max = 0.0f64;
    for r in rows {
        if !r.count.is_finite() || r.count < 0.0 {
            return Err(Error::Hazard(format!(
                "count on {} is {}; must be non-negative",
                r.date, r.count
            )));
        }
        max = max.max(r.count);
    }
    if max >= population as f64 {
        return Err(Error::Hazard(format!(
            "population {population} does not exceed the largest daily count {max}"
        )));
    }

    let counts: Vec<f64> = rows.iter().map(|r| r.count).collect();
    let pop = population as f64;
    let values = trailing_mean(&counts, window)
        .into_iter()
        .take(horizon + 1)
        .map(|c| c / pop)
        .collect();
    BaselineHazard::new(values, HazardSource::File)
}

/// Two Gaussian bumps standing in for a two-wave epidemic curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoWave {
    pub peak1: f64,
    pub day1: usize,
    pub width1: f64,
    pub peak2: f64,
    pub day2: usize,
    pub width2: f64,
}

impl Default for TwoWave {
    fn default() -> Self {
        Self {
            peak1: 2e-4,
            day1: 35,
            width1: 12.0,
            peak2: 6e-4,
            day2: 140,
            width2: 20.0,
        }
    }
}

impl TwoWave {
    fn validate(&self, horizon: usize) -> Result<()> {
        for (name, peak) in [("peak1", self.peak1), ("peak2", self.peak2)] {
            // peak2 = 0 is accepted so a single bump can be expressed.
            let ok = if name == "peak1" {
                peak > 0.0 && peak < 1.0
            } else {
                (0.0..1.0).contains(&peak)
            };
            if !ok {
                return Err(Error::Hazard(format!("{name} = {peak} must lie in (0, 1)")));
            }
        }
        for (name, w) in [("width1", self.width1), ("width2", self.width2)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Hazard(format!("{name} = {w} must be positive")));
            }
        }
        if !(self.day1 < self.day2 && self.day2 <= horizon) {
            return Err(Error::Hazard(format!(
                "wave days must satisfy 0 <= day1 < day2 <= T, got {} and {} with T = {horizon}",
                self.day1, self.day2
            )));
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let bump = |peak: f64, day: usize, width: f64| {
            let d = t - day as f64;
            peak * (-d * d / (2.0 * width * width)).exp()
        };
        let h = bump(self.peak1, self.day1, self.width1) + bump(self.peak2, self.day2, self.width2);
        h.clamp(0.0, 1.0 - f64::EPSILON)
    }
}

pub fn synthetic_two_wave(params: &TwoWave, horizon: usize) -> Result<BaselineHazard> {
    params.validate(horizon)?;
    let values = (0..=horizon).map(|t| params.value_at(t as f64)).collect();
    BaselineHazard::new(values, HazardSource::Synthetic)
}
