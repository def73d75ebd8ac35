//! Adaptive vaccine-trial simulation under the proportional hazards model.
//!
//! The modules follow the data flow of a simulated trial: [`hazard`] builds
//! the baseline infection risk and arm model, [`engine`] runs the
//! discrete-time trial, [`likelihood`] turns observed infections into a
//! Laplace-approximated posterior, [`policies`] allocate participants,
//! [`metrics`] score finished trials and [`harness`] runs seeded
//! replications end to end.

pub mod engine;
pub mod error;
pub mod harness;
pub mod hazard;
pub mod likelihood;
pub mod metrics;
pub mod policies;

pub use error::{Error, Result};

/// Random stream owned by one trial replication.
pub type TrialRng = rand_chacha::ChaCha8Rng;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
