//! Participation decision layer: unit-battery accounting and the scheduling
//! policies.
//!
//! Every user owns a battery that stores exactly one gradient step's worth of
//! energy; arrivals while the battery is full are wasted. A policy turns
//! arrivals into per-iteration `(participate?, weight)` decisions, where the
//! weight is the scale applied to the local gradient so the aggregate stays
//! an unbiased estimator of the full weighted gradient:
//!
//! - uniform-slot: on each arrival, pick one slot uniformly inside the
//!   current inter-arrival interval and participate only there, scaled by the
//!   interval length;
//! - best-effort: participate the moment energy arrives, scaled by `1/beta`
//!   (Bernoulli arrivals) or the window length (uniform-window arrivals);
//! - naive-unscaled and wait-for-all: the two energy-agnostic benchmarks;
//! - full participation: the conventional every-user-every-round oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{ArrivalModel, InterArrival};
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum SchedulingError {
    #[error("inter-arrival gap undefined at t={t} under uniform-slot scheduling")]
    MissingGap { t: usize },
    #[error("policy `{policy}` cannot run on {model} arrivals")]
    IncompatibleModel {
        policy: &'static str,
        model: &'static str,
    },
}

/// Participation decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Uniform-slot scheduling over known inter-arrival intervals.
    #[serde(rename = "alg1")]
    DeterministicUniformSlot,
    /// Participate on arrival, scaled by the inverse participation rate.
    BestEffort,
    /// Benchmark 1: participate on arrival, no scaling.
    #[serde(rename = "naive")]
    NaiveUnscaled,
    /// Benchmark 2: a synchronized round only when every battery is full.
    WaitForAll,
    /// Oracle: every user participates every round.
    #[serde(rename = "full")]
    FullParticipation,
}

impl SchedulerPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerPolicy::DeterministicUniformSlot => "alg1",
            SchedulerPolicy::BestEffort => "best_effort",
            SchedulerPolicy::NaiveUnscaled => "naive",
            SchedulerPolicy::WaitForAll => "wait_for_all",
            SchedulerPolicy::FullParticipation => "full",
        }
    }

    /// Whether the policy consults energy traces at all.
    pub fn uses_traces(self) -> bool {
        !matches!(self, SchedulerPolicy::FullParticipation)
    }

    /// Policy/model compatibility: uniform-slot needs arrivals known in
    /// advance; best-effort scaling needs a stochastic arrival rate.
    pub fn check_model(self, model: &ArrivalModel) -> Result<(), SchedulingError> {
        let model_name = match model {
            ArrivalModel::DeterministicSchedule { .. } => "deterministic",
            ArrivalModel::Bernoulli { .. } => "bernoulli",
            ArrivalModel::UniformWindow { .. } => "uniform_window",
        };
        let ok = match self {
            SchedulerPolicy::DeterministicUniformSlot => {
                matches!(model, ArrivalModel::DeterministicSchedule { .. })
            }
            SchedulerPolicy::BestEffort => matches!(
                model,
                ArrivalModel::Bernoulli { .. } | ArrivalModel::UniformWindow { .. }
            ),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(SchedulingError::IncompatibleModel {
                policy: self.name(),
                model: model_name,
            })
        }
    }

    /// Fixed gradient scale for policies whose weight does not depend on the
    /// realized interval (1 for the benchmarks and the oracle). Uniform-slot
    /// ignores this and uses the interval length captured on arrival.
    pub fn steady_weight(self, model: &ArrivalModel) -> f64 {
        match self {
            SchedulerPolicy::BestEffort => match model {
                ArrivalModel::Bernoulli { beta } => 1.0 / beta,
                ArrivalModel::UniformWindow { period } => *period as f64,
                ArrivalModel::DeterministicSchedule { .. } => 1.0,
            },
            _ => 1.0,
        }
    }
}

/// Per-user battery and pending-slot state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserEnergyState {
    battery: bool,
    pending_slot: Option<usize>,
    pending_weight: Option<f64>,
}

impl UserEnergyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn battery_full(&self) -> bool {
        self.battery
    }

    pub fn pending_slot(&self) -> Option<usize> {
        self.pending_slot
    }
}

/// Outcome of an energy arrival at the battery layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyOutcome {
    /// Arrival hit an already-full battery and was lost.
    pub wasted: bool,
}

/// What a user does at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipationDecision {
    pub participates: bool,
    /// Gradient scale; positive iff participating.
    pub weight: f64,
}

impl ParticipationDecision {
    fn no() -> Self {
        ParticipationDecision {
            participates: false,
            weight: 0.0,
        }
    }

    fn yes(weight: f64) -> Self {
        debug_assert!(weight > 0.0);
        ParticipationDecision {
            participates: true,
            weight,
        }
    }
}

/// Read-only per-iteration context supplied by the training loop.
#[derive(Debug, Clone, Copy)]
pub struct DecisionCtx {
    /// Scale used by best-effort (and 1 for the benchmarks).
    pub steady_weight: f64,
    /// Snapshot of all batteries after this iteration's arrivals.
    pub all_batteries_full: bool,
}

/// Process an energy arrival at iteration `t` (`inter` must be the
/// inter-arrival view at `t`, so `inter.prev == Some(t)`).
///
/// The battery fills (excess wasted if already full). Under uniform-slot
/// scheduling a participation slot is drawn uniformly from the current
/// interval and the interval length is captured as the gradient scale; the
/// previous slot is necessarily already consumed because slots never reach
/// the next arrival.
pub fn on_energy(
    state: &mut UserEnergyState,
    policy: SchedulerPolicy,
    t: usize,
    inter: &InterArrival,
    stream: &mut Stream,
) -> Result<EnergyOutcome, SchedulingError> {
    debug_assert_eq!(inter.prev, Some(t), "on_energy called away from an arrival");
    let wasted = state.battery;
    state.battery = true;
    if policy == SchedulerPolicy::DeterministicUniformSlot {
        let gap = inter.gap().ok_or(SchedulingError::MissingGap { t })?;
        debug_assert!(
            state.pending_slot.is_none(),
            "unconsumed slot would be overwritten"
        );
        let offset = stream.gen_range(gap as u64) as usize;
        state.pending_slot = Some(t + offset);
        state.pending_weight = Some(gap as f64);
    }
    Ok(EnergyOutcome { wasted })
}

/// Decide participation at iteration `t` and update the battery.
pub fn decide(
    state: &mut UserEnergyState,
    policy: SchedulerPolicy,
    t: usize,
    ctx: &DecisionCtx,
) -> ParticipationDecision {
    let decision = match policy {
        SchedulerPolicy::DeterministicUniformSlot => {
            if state.pending_slot == Some(t) {
                debug_assert!(state.battery, "pending slot without stored energy");
                state.pending_slot = None;
                state.battery = false;
                ParticipationDecision::yes(state.pending_weight.take().expect("weight set"))
            } else {
                ParticipationDecision::no()
            }
        }
        SchedulerPolicy::BestEffort | SchedulerPolicy::NaiveUnscaled => {
            // Energy is spent the same iteration it arrives.
            if state.battery {
                state.battery = false;
                ParticipationDecision::yes(ctx.steady_weight)
            } else {
                ParticipationDecision::no()
            }
        }
        SchedulerPolicy::WaitForAll => {
            if ctx.all_batteries_full {
                state.battery = false;
                ParticipationDecision::yes(1.0)
            } else {
                ParticipationDecision::no()
            }
        }
        SchedulerPolicy::FullParticipation => ParticipationDecision::yes(1.0),
    };
    debug_assert!(!state.battery || policy != SchedulerPolicy::FullParticipation);
    decision
}
