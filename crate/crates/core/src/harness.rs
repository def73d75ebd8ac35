//! Experiment configuration, seeded replication runner and output writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_trial, TrialConfig};
use crate::error::{Error, Result};
use crate::hazard::{self, ArmModel, BaselineHazard, TwoWave, DEFAULT_WINDOW};
use crate::metrics::{aggregate, AggregateSummary, ReplicationResult};
use crate::policies::PolicySpec;
use crate::TrialRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardSpec {
    Synthetic(TwoWave),
    Csv {
        path: PathBuf,
        population: u64,
        #[serde(default = "default_window")]
        window: usize,
    },
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for HazardSpec {
    fn default() -> Self {
        HazardSpec::Synthetic(TwoWave::default())
    }
}

impl HazardSpec {
    /// Relative CSV paths resolve against `base` (the config file's directory).
    pub fn load(&self, horizon: usize, base: Option<&Path>) -> Result<BaselineHazard> {
        match self {
            HazardSpec::Synthetic(p) => hazard::synthetic_two_wave(p, horizon),
            HazardSpec::Csv {
                path,
                population,
                window,
            } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let rows = hazard::read_counts_csv(&path).map_err(|e| match e {
                    Error::Io { path, source } => Error::Hazard(format!("{}: {source}", path.display())),
                    other => other,
                })?;
                hazard::load_daily_counts(&rows, *population, *window, horizon)
            }
        }
    }
}

fn default_horizon() -> usize {
    200
}
fn default_participants() -> usize {
    60_000
}
fn default_thetas() -> Vec<f64> {
    vec![0.0, 1.2, 1.5, 2.2, 2.4, 3.0]
}
fn default_replications() -> usize {
    1000
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `T`
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// `M`
    #[serde(default = "default_participants")]
    pub participants: usize,
    /// Optional `K`; must match `thetas` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<usize>,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub hazard: HazardSpec,
    pub policy: PolicySpec,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(policy: PolicySpec) -> Self {
        Self {
            horizon: default_horizon(),
            participants: default_participants(),
            arms: None,
            thetas: default_thetas(),
            hazard: HazardSpec::default(),
            policy,
            replications: default_replications(),
            seed: 0,
            output_dir: default_output(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let HazardSpec::Csv { path: csv, .. } = &mut cfg.hazard {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.participants % self.horizon != 0 {
            return Err(Error::Config(format!(
                "participants ({}) must be divisible by horizon ({})",
                self.participants, self.horizon
            )));
        }
        if let Some(k) = self.arms {
            if k != self.thetas.len() {
                return Err(Error::Config(format!(
                    "arms = {k} but {} thetas given",
                    self.thetas.len()
                )));
            }
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        ArmModel::new(self.thetas.clone())?;
        self.policy.build(self.thetas.len())?;
        Ok(())
    }

    pub fn trial_config(&self) -> Result<TrialConfig> {
        let hazard = self.hazard.load(self.horizon, None)?;
        TrialConfig::constant(ArmModel::new(self.thetas.clone())?, hazard, self.participants)
    }
}

/// Seed for replication `index`, a SplitMix64 hash of the master seed and the
/// index. Each replication owns an independent stream and can run in any order.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_replication(cfg: &ExperimentConfig, trial: &TrialConfig, index: u64) -> Result<ReplicationResult> {
    let seed = replication_seed(cfg.seed, index);
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut policy = cfg.policy.build(trial.arms.arms())?;
    let result = run_trial(trial, policy.as_mut(), &mut rng)?;
    Ok(ReplicationResult::from_trial(policy.label(), seed, &result, trial.arms.thetas()))
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hazard: BaselineHazard,
    pub results: Vec<ReplicationResult>,
    pub summary: AggregateSummary,
}

/// Runs every replication on `workers` threads (0 = rayon default) and
/// aggregates in replication order.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Experiment> {
    cfg.validate()?;
    let trial = cfg.trial_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<ReplicationResult> = pool.install(|| {
        (0..cfg.replications as u64)
            .into_par_iter()
            .map(|b| run_replication(cfg, &trial, b))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = aggregate(&results, trial.arms.thetas());
    Ok(Experiment {
        config: cfg.clone(),
        hazard: trial.hazard,
        results,
        summary,
    })
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

#[derive(Serialize)]
struct RoundedEstimate {
    mean: f64,
    se: f64,
}

impl From<crate::metrics::Estimate> for RoundedEstimate {
    fn from(e: crate::metrics::Estimate) -> Self {
        Self {
            mean: round_sig(e.mean, 4),
            se: round_sig(e.se, 4),
        }
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    policy: &'a str,
    replications: usize,
    best_arm: usize,
    isr: RoundedEstimate,
    bip: RoundedEstimate,
    epr: RoundedEstimate,
    recommendation_shares: Vec<f64>,
    mean_total_infections: f64,
    config: &'a ExperimentConfig,
}

pub fn summary_json(exp: &Experiment) -> Result<String> {
    let s = &exp.summary;
    let file = SummaryFile {
        policy: &s.policy,
        replications: s.replications,
        best_arm: s.best_arm,
        isr: s.isr.into(),
        bip: s.bip.into(),
        epr: s.epr.into(),
        recommendation_shares: s.recommendation_shares.iter().map(|&x| round_sig(x, 4)).collect(),
        mean_total_infections: round_sig(s.mean_total_infections, 4),
        config: &exp.config,
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn replications_csv(results: &[ReplicationResult]) -> String {
    let mut out = String::from("replication,seed,isr,recommended_arm,total_infections\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            r.seed,
            r.isr,
            r.recommended_arm,
            r.total_infections()
        );
    }
    out
}

pub fn trajectories_csv(summary: &AggregateSummary) -> String {
    let k = summary.mean_probabilities.first().map_or(0, Vec::len);
    let mut out = String::from("round");
    for a in 0..k {
        let _ = write!(out, ",share_arm{a}");
    }
    out.push_str(",cumulative_infections\n");
    for (t, (probs, cum)) in summary
        .mean_probabilities
        .iter()
        .zip(&summary.mean_cumulative_infections)
        .enumerate()
    {
        let _ = write!(out, "{t}");
        for p in probs {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{cum}");
    }
    out
}

pub fn hazard_csv(h: &BaselineHazard) -> String {
    let mut out = String::from("day,hazard\n");
    for (t, v) in h.values().iter().enumerate() {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

pub const OUTPUT_FILES: [&str; 4] = ["summary.json", "replications.csv", "trajectories.csv", "hazard.csv"];

/// Writes summary.json, replications.csv, trajectories.csv and hazard.csv.
pub fn emit_outputs(exp: &Experiment, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let contents = [
        summary_json(exp)?,
        replications_csv(&exp.results),
        trajectories_csv(&exp.summary),
        hazard_csv(&exp.hazard),
    ];
    let mut written = Vec::new();
    for (name, body) in OUTPUT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
