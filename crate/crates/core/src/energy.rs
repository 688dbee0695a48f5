//! Energy-arrival models and realized per-user arrival traces.
//!
//! Each user harvests energy at discrete iterations. A trace is the binary
//! sequence of arrival indicators over the run horizon; the inter-arrival view
//! around an iteration `t` gives the most recent arrival at or before `t`, the
//! next arrival strictly after `t`, and the length of the interval between
//! them, which is what uniform-slot scheduling scales gradients by.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Purpose, Stream};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("invalid arrival model ({field}): {reason}")]
    InvalidModel { field: &'static str, reason: String },
}

/// Per-user energy-arrival specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Arrivals at a known, strictly increasing list of iterations.
    #[serde(rename = "deterministic")]
    DeterministicSchedule { times: Vec<usize> },
    /// Independent unit arrival with probability `beta` at every iteration.
    Bernoulli { beta: f64 },
    /// Exactly one arrival, uniformly placed, in every window of `period`
    /// consecutive iterations.
    UniformWindow { period: usize },
}

impl ArrivalModel {
    /// Check the model invariants against a run horizon.
    pub fn validate(&self, horizon: usize) -> Result<(), EnergyError> {
        match self {
            ArrivalModel::DeterministicSchedule { times } => {
                for pair in times.windows(2) {
                    if pair[0] >= pair[1] {
                        return Err(EnergyError::InvalidModel {
                            field: "times",
                            reason: format!(
                                "schedule must be strictly increasing, got {} then {}",
                                pair[0], pair[1]
                            ),
                        });
                    }
                }
                if let Some(&last) = times.last() {
                    if last >= horizon {
                        return Err(EnergyError::InvalidModel {
                            field: "times",
                            reason: format!("schedule time {last} exceeds horizon {horizon}"),
                        });
                    }
                }
                Ok(())
            }
            ArrivalModel::Bernoulli { beta } => {
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(EnergyError::InvalidModel {
                        field: "beta",
                        reason: format!("beta must lie in (0, 1], got {beta}"),
                    });
                }
                Ok(())
            }
            ArrivalModel::UniformWindow { period } => {
                if *period == 0 {
                    return Err(EnergyError::InvalidModel {
                        field: "period",
                        reason: "period must be at least 1".into(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Realized binary arrival sequence of one user over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub user_id: usize,
    pub horizon: usize,
    arrivals: Vec<bool>,
    // Sorted arrival indices, kept alongside the bitmap for O(log n) queries.
    times: Vec<usize>,
}

impl EnergyTrace {
    fn from_times(user_id: usize, horizon: usize, times: Vec<usize>) -> Self {
        let mut arrivals = vec![false; horizon];
        for &t in &times {
            arrivals[t] = true;
        }
        EnergyTrace {
            user_id,
            horizon,
            arrivals,
            times,
        }
    }

    #[inline]
    pub fn arrival_at(&self, t: usize) -> bool {
        self.arrivals[t]
    }

    pub fn arrivals(&self) -> &[bool] {
        &self.arrivals
    }

    pub fn arrival_times(&self) -> &[usize] {
        &self.times
    }

    /// Largest realized inter-arrival gap over the horizon, with the tail
    /// interval counted as `horizon - last_arrival`. `None` if the user never
    /// receives energy.
    pub fn max_gap(&self) -> Option<usize> {
        let last = *self.times.last()?;
        let interior = self.times.windows(2).map(|w| w[1] - w[0]).max();
        Some(interior.unwrap_or(0).max(self.horizon - last))
    }
}

/// Iteration of the next arrival strictly after `t`, or the horizon when no
/// further arrival exists (the tail interval is closed off at the horizon so
/// the final gap stays well defined).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextArrival {
    At(usize),
    HorizonEnd(usize),
}

impl NextArrival {
    /// The index used for gap computation in either case.
    pub fn bound(&self) -> usize {
        match *self {
            NextArrival::At(t) | NextArrival::HorizonEnd(t) => t,
        }
    }
}

/// Inter-arrival view around an iteration `t`.
///
/// `prev` is the most recent arrival at or before `t` (`None` before the
/// first arrival, in which case the user has never held energy and the
/// scheduling layer treats it as inactive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterArrival {
    pub prev: Option<usize>,
    pub next: NextArrival,
}

impl InterArrival {
    /// Interval length `next - prev`; `None` before the first arrival.
    pub fn gap(&self) -> Option<usize> {
        self.prev.map(|p| self.next.bound() - p)
    }
}

/// Realize an arrival model into a binary trace.
///
/// Deterministic given `(model, horizon, master_seed, user_id)`: stochastic
/// draws come from counter-based streams keyed by iteration (Bernoulli) or
/// window index (uniform windows), so traces do not depend on evaluation
/// order.
pub fn realize_trace(
    model: &ArrivalModel,
    user_id: usize,
    horizon: usize,
    master_seed: u64,
) -> Result<EnergyTrace, EnergyError> {
    assert!(horizon >= 1, "horizon must be at least 1");
    model.validate(horizon)?;
    let times = match model {
        ArrivalModel::DeterministicSchedule { times } => times.clone(),
        ArrivalModel::Bernoulli { beta } => (0..horizon)
            .filter(|&t| {
                Stream::new(master_seed, user_id as u64, Purpose::ArrivalTrace, t as u64)
                    .gen_bool(*beta)
            })
            .collect(),
        ArrivalModel::UniformWindow { period } => {
            let mut times = Vec::with_capacity(horizon / period + 1);
            let mut window = 0usize;
            while window * period < horizon {
                let mut stream = Stream::new(
                    master_seed,
                    user_id as u64,
                    Purpose::ArrivalTrace,
                    window as u64,
                );
                let pos = window * period + stream.gen_range(*period as u64) as usize;
                // A draw in a truncated final window may land past the horizon
                // and is then lost.
                if pos < horizon {
                    times.push(pos);
                }
                window += 1;
            }
            times
        }
    };
    Ok(EnergyTrace::from_times(user_id, horizon, times))
}

/// Inter-arrival view of `trace` around iteration `t` (`0 <= t < horizon`).
pub fn inter_arrival(trace: &EnergyTrace, t: usize) -> InterArrival {
    assert!(t < trace.horizon, "t out of range");
    let times = &trace.times;
    // First arrival index strictly after t.
    let after = times.partition_point(|&x| x <= t);
    let prev = after.checked_sub(1).map(|i| times[i]);
    let next = match times.get(after) {
        Some(&n) => NextArrival::At(n),
        None => NextArrival::HorizonEnd(trace.horizon),
    };
    InterArrival { prev, next }
}
