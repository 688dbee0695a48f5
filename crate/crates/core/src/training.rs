//! Discrete-time training loop and run configuration.
//!
//! Each iteration broadcasts the current model, lets every user process its
//! energy arrival and participation decision, collects scaled stochastic
//! gradients from the participants, and applies the server update
//! `w <- w - eta_t * sum_{i in S_t} p_i * gamma_i * g_i`. An iteration with no
//! participants still advances the clock with the model unchanged. Gradients
//! are drawn for participants only, so gradient evaluations and energy spent
//! coincide. A run is fully determined by its config and master seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{inter_arrival, realize_trace, ArrivalModel, EnergyError, EnergyTrace};
use crate::objective::{
    make_synthetic, ConstantsProbe, Objective, ObjectiveError, ProblemConstants, SyntheticSpec,
};
use crate::par::{map_collect, Exec};
use crate::rng::{Purpose, Stream};
use crate::scheduling::{
    decide, on_energy, DecisionCtx, SchedulerPolicy, SchedulingError, UserEnergyState,
};
use crate::vecops::{axpy, dist};

/// Config invariant violation, tagged with the offending field path.
#[derive(Debug, Error)]
#[error("invalid config at `{path}`: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Scheduling(#[from] SchedulingError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("gradient dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("wait-for-all starved: no synchronized round within {horizon} iterations")]
    StarvationDetected { horizon: usize },
    #[error(
        "learning rate {eta} violates the constant-rate premise eta <= min(1/(2 mu), 1/L) = {max_allowed}"
    )]
    LearningRatePremise { eta: f64, max_allowed: f64 },
}

fn default_cadence() -> usize {
    1
}

/// Full experiment description.
///
/// Arrival patterns come either from `arrivals` (one model per user, or a
/// single model broadcast to everyone) or from `arrival_periods`: period list
/// `(tau_0, ..., tau_{K-1})` assigning user `i` to group `i mod K` with
/// deterministic arrivals at every multiple of `tau_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub num_users: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Constant learning rate, or the initial rate when decay is enabled.
    pub eta: f64,
    /// Optional decay `eta_t = eta / (1 + kappa t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_decay_kappa: Option<f64>,
    pub policy: SchedulerPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<Vec<ArrivalModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_periods: Option<Vec<usize>>,
    pub objective: SyntheticSpec,
    /// Record metrics every this many iterations (the final state is always
    /// recorded).
    #[serde(default = "default_cadence")]
    pub metric_cadence: usize,
    /// Reject the run if the learning rate violates the convergence-bound
    /// premise instead of silently running.
    #[serde(default)]
    pub bound_check: bool,
    /// Initial model; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
    /// Keep the model vector of every recorded iteration in the trace.
    #[serde(default)]
    pub record_models: bool,
    /// Probe for gradient-norm constants; an instance-derived default is used
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants_probe: Option<ConstantsProbe>,
}

impl RunConfig {
    /// Validate every config invariant, reporting the offending field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_users == 0 {
            return Err(ConfigError::new("N", "need at least one user"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::new("horizon", "need at least one iteration"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ConfigError::new(
                "eta",
                format!(
                    "learning rate must be positive and finite, got {}",
                    self.eta
                ),
            ));
        }
        if let Some(kappa) = self.eta_decay_kappa {
            if !(kappa >= 0.0 && kappa.is_finite()) {
                return Err(ConfigError::new(
                    "eta_decay_kappa",
                    format!("decay must be nonnegative, got {kappa}"),
                ));
            }
        }
        if self.metric_cadence == 0 {
            return Err(ConfigError::new("metric_cadence", "must be at least 1"));
        }
        self.objective.validate().map_err(|e| match e {
            ObjectiveError::InvalidSpec { field, reason } => {
                ConfigError::new(format!("objective.{field}"), reason)
            }
            other => ConfigError::new("objective", other.to_string()),
        })?;
        if let Some(w0) = &self.w0 {
            if w0.len() != self.objective.dim {
                return Err(ConfigError::new(
                    "w0",
                    format!(
                        "initial model has dimension {}, objective has {}",
                        w0.len(),
                        self.objective.dim
                    ),
                ));
            }
        }
        if let Some(p) = &self.constants_probe {
            if p.ball_radius <= 0.0 || !p.ball_radius.is_finite() {
                return Err(ConfigError::new(
                    "constants_probe.ball_radius",
                    "must be positive",
                ));
            }
            if p.directions == 0 {
                return Err(ConfigError::new(
                    "constants_probe.directions",
                    "need at least one direction",
                ));
            }
        }

        match (&self.arrivals, &self.arrival_periods) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new(
                    "arrivals",
                    "give either `arrivals` or `arrival_periods`, not both",
                ));
            }
            (Some(models), None) => {
                if models.len() != 1 && models.len() != self.num_users {
                    return Err(ConfigError::new(
                        "arrivals",
                        format!(
                            "need 1 or {} arrival models, got {}",
                            self.num_users,
                            models.len()
                        ),
                    ));
                }
                for (i, m) in models.iter().enumerate() {
                    m.validate(self.horizon).map_err(|e| match e {
                        EnergyError::InvalidModel { field, reason } => {
                            ConfigError::new(format!("arrivals[{i}].{field}"), reason)
                        }
                    })?;
                    self.policy
                        .check_model(m)
                        .map_err(|e| ConfigError::new("policy", e.to_string()))?;
                }
            }
            (None, Some(periods)) => {
                if periods.is_empty() {
                    return Err(ConfigError::new("arrival_periods", "must be non-empty"));
                }
                for (k, &tau) in periods.iter().enumerate() {
                    if tau == 0 {
                        return Err(ConfigError::new(
                            format!("arrival_periods[{k}]"),
                            "period must be at least 1",
                        ));
                    }
                }
                // Periods expand to deterministic schedules.
                let probe = ArrivalModel::DeterministicSchedule { times: vec![0] };
                self.policy
                    .check_model(&probe)
                    .map_err(|e| ConfigError::new("policy", e.to_string()))?;
            }
            (None, None) => {
                if self.policy.uses_traces() {
                    return Err(ConfigError::new(
                        "arrivals",
                        format!(
                            "policy `{}` needs arrival models (or arrival_periods)",
                            self.policy.name()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Per-user arrival models after broadcasting/expansion. For the
    /// full-participation oracle without arrivals this is an every-step
    /// schedule (unused by the run, but it keeps reductions exercisable).
    pub fn resolved_models(&self) -> Vec<ArrivalModel> {
        if let Some(models) = &self.arrivals {
            if models.len() == 1 {
                return vec![models[0].clone(); self.num_users];
            }
            return models.clone();
        }
        if let Some(periods) = &self.arrival_periods {
            return (0..self.num_users)
                .map(|i| {
                    let tau = periods[i % periods.len()];
                    ArrivalModel::DeterministicSchedule {
                        times: (0..self.horizon).step_by(tau).collect(),
                    }
                })
                .collect();
        }
        vec![
            ArrivalModel::DeterministicSchedule {
                times: (0..self.horizon).collect(),
            };
            self.num_users
        ]
    }

    /// Group index per user: `i mod K` under `arrival_periods`, else one
    /// group.
    pub fn group_assignment(&self) -> Vec<usize> {
        match &self.arrival_periods {
            Some(periods) => (0..self.num_users).map(|i| i % periods.len()).collect(),
            None => vec![0; self.num_users],
        }
    }

    pub fn num_groups(&self) -> usize {
        self.arrival_periods.as_ref().map_or(1, |p| p.len())
    }

    pub fn schedule(&self) -> LearningRate {
        match self.eta_decay_kappa {
            None => LearningRate::Constant { eta: self.eta },
            Some(kappa) => LearningRate::Decay {
                eta0: self.eta,
                kappa,
            },
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant {
        eta: f64,
    },
    /// `eta_t = eta0 / (1 + kappa t)`
    Decay {
        eta0: f64,
        kappa: f64,
    },
}

pub fn learning_rate(schedule: &LearningRate, t: usize) -> f64 {
    match *schedule {
        LearningRate::Constant { eta } => eta,
        LearningRate::Decay { eta0, kappa } => eta0 / (1.0 + kappa * t as f64),
    }
}

/// One participating user's scaled-gradient contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub user_id: usize,
    /// Data weight `p_i`.
    pub data_weight: f64,
    /// Scheduling scale `gamma_i^t`.
    pub scale: f64,
    pub gradient: Vec<f64>,
}

/// All contributions of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionBatch {
    pub t: usize,
    pub entries: Vec<Contribution>,
}

/// Apply the scaled-gradient server update; an empty batch leaves the model
/// unchanged.
pub fn server_update(w: &[f64], batch: &ContributionBatch, eta: f64) -> Result<Vec<f64>, RunError> {
    let mut next = w.to_vec();
    for c in &batch.entries {
        if c.gradient.len() != w.len() {
            return Err(RunError::DimensionMismatch {
                expected: w.len(),
                got: c.gradient.len(),
            });
        }
        axpy(-eta * c.data_weight * c.scale, &c.gradient, &mut next);
    }
    Ok(next)
}

/// Metrics of one recorded iteration (model state before that iteration's
/// update, events and cumulative counters of that iteration).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub global_loss: f64,
    pub loss_gap: f64,
    pub participants: Vec<u32>,
    pub group_counts: Vec<u32>,
    pub energy_spent: u64,
    pub energy_wasted: u64,
}

impl MetricsRow {
    pub fn num_participants(&self) -> usize {
        self.participants.len()
    }
}

/// Per-iteration metrics of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub rows: Vec<MetricsRow>,
    pub final_model: Vec<f64>,
    pub f_star: f64,
    pub seed: u64,
    pub total_participations: u64,
    pub energy_spent: u64,
    pub energy_wasted: u64,
    pub gradient_draws: u64,
    /// Iterations with a nonempty participant set.
    pub update_rounds: u64,
    /// Recorded model vectors (empty unless `record_models`).
    pub models: Vec<Vec<f64>>,
}

impl MetricsTrace {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().expect("trace has rows").global_loss
    }

    pub fn final_gap(&self) -> f64 {
        self.rows.last().expect("trace has rows").loss_gap
    }

    /// Fixed-schema CSV:
    /// `iteration,global_loss,loss_gap,num_participants,energy_spent,energy_wasted`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "iteration,global_loss,loss_gap,num_participants,energy_spent,energy_wasted"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                r.global_loss,
                r.loss_gap,
                r.num_participants(),
                r.energy_spent,
                r.energy_wasted
            )?;
        }
        Ok(())
    }
}

/// Everything shareable across seeds of the same experiment: the objective,
/// its optimum, resolved arrival models, and derived constants.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub objective: Objective,
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub w0: Vec<f64>,
    pub models: Vec<ArrivalModel>,
    pub group_of: Vec<usize>,
    pub num_groups: usize,
    pub steady_weights: Vec<f64>,
    pub schedule: LearningRate,
    pub constants: ProblemConstants,
    pub constants_probe: ConstantsProbe,
}

/// Validate a config and build the shared run state.
pub fn prepare(config: &RunConfig) -> Result<Prepared, RunError> {
    config.validate()?;
    let objective = make_synthetic(config.num_users, &config.objective)?;
    let (w_star, f_star) = objective.solve_optimum()?;
    let w0 = config
        .w0
        .clone()
        .unwrap_or_else(|| vec![0.0; objective.dim()]);

    let probe = config.constants_probe.unwrap_or_else(|| {
        // Default ball: generously covers the start-to-optimum distance and
        // the data spread so the probed bound holds along trajectories.
        let spread = objective
            .datasets()
            .iter()
            .flat_map(|ds| ds.points.iter())
            .map(|p| dist(&p.features, &w_star))
            .fold(0.0, f64::max);
        ConstantsProbe {
            ball_radius: 2.0 * (dist(&w0, &w_star) + spread).max(1.0),
            directions: 64,
        }
    });
    let constants = objective.estimate_constants(&probe, config.seed)?;

    if config.bound_check {
        let max_allowed = (1.0 / (2.0 * constants.mu)).min(1.0 / constants.smoothness);
        if config.eta > max_allowed {
            return Err(RunError::LearningRatePremise {
                eta: config.eta,
                max_allowed,
            });
        }
    }

    let models = config.resolved_models();
    let steady_weights = models
        .iter()
        .map(|m| config.policy.steady_weight(m))
        .collect();
    Ok(Prepared {
        config: config.clone(),
        group_of: config.group_assignment(),
        num_groups: config.num_groups(),
        schedule: config.schedule(),
        objective,
        w_star,
        f_star,
        w0,
        models,
        steady_weights,
        constants,
        constants_probe: probe,
    })
}

/// Execute one run with the given master seed.
pub fn run_prepared(prep: &Prepared, seed: u64) -> Result<MetricsTrace, RunError> {
    let cfg = &prep.config;
    let n = cfg.num_users;
    let policy = cfg.policy;
    let horizon = cfg.horizon;

    let traces: Option<Vec<EnergyTrace>> = if policy.uses_traces() {
        Some(
            prep.models
                .iter()
                .enumerate()
                .map(|(i, m)| realize_trace(m, i, horizon, seed))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };

    let mut states = vec![UserEnergyState::new(); n];
    let mut w = prep.w0.clone();
    let mut rows = Vec::with_capacity(horizon / cfg.metric_cadence + 2);
    let mut recorded_models = Vec::new();
    let mut energy_spent = 0u64;
    let mut energy_wasted = 0u64;
    let mut total_participations = 0u64;
    let mut gradient_draws = 0u64;
    let mut update_rounds = 0u64;

    for t in 0..horizon {
        if let Some(traces) = &traces {
            for (i, trace) in traces.iter().enumerate() {
                if trace.arrival_at(t) {
                    let inter = inter_arrival(trace, t);
                    let mut stream = Stream::new(seed, i as u64, Purpose::SlotDraw, t as u64);
                    let outcome = on_energy(&mut states[i], policy, t, &inter, &mut stream)?;
                    if outcome.wasted {
                        energy_wasted += 1;
                    }
                }
            }
        }
        let all_full = states.iter().all(UserEnergyState::battery_full);

        let mut entries = Vec::new();
        let mut group_counts = vec![0u32; prep.num_groups];
        for i in 0..n {
            let ctx = DecisionCtx {
                steady_weight: prep.steady_weights[i],
                all_batteries_full: all_full,
            };
            let decision = decide(&mut states[i], policy, t, &ctx);
            if decision.participates {
                let mut stream = Stream::new(seed, i as u64, Purpose::DataSample, t as u64);
                let gradient = prep.objective.stochastic_gradient(i, &w, &mut stream)?;
                gradient_draws += 1;
                group_counts[prep.group_of[i]] += 1;
                entries.push(Contribution {
                    user_id: i,
                    data_weight: prep.objective.weights()[i],
                    scale: decision.weight,
                    gradient,
                });
            }
        }
        energy_spent += entries.len() as u64;
        total_participations += entries.len() as u64;
        if !entries.is_empty() {
            update_rounds += 1;
        }

        if t % cfg.metric_cadence == 0 {
            let loss = prep.objective.global_loss(&w)?;
            rows.push(MetricsRow {
                iteration: t,
                global_loss: loss,
                loss_gap: loss - prep.f_star,
                participants: entries.iter().map(|c| c.user_id as u32).collect(),
                group_counts: group_counts.clone(),
                energy_spent,
                energy_wasted,
            });
            if cfg.record_models {
                recorded_models.push(w.clone());
            }
        }

        let batch = ContributionBatch { t, entries };
        w = server_update(&w, &batch, learning_rate(&prep.schedule, t))?;
    }

    // Final state row.
    let loss = prep.objective.global_loss(&w)?;
    rows.push(MetricsRow {
        iteration: horizon,
        global_loss: loss,
        loss_gap: loss - prep.f_star,
        participants: Vec::new(),
        group_counts: vec![0; prep.num_groups],
        energy_spent,
        energy_wasted,
    });
    if cfg.record_models {
        recorded_models.push(w.clone());
    }

    if policy == SchedulerPolicy::WaitForAll && update_rounds == 0 {
        return Err(RunError::StarvationDetected { horizon });
    }

    Ok(MetricsTrace {
        rows,
        final_model: w,
        f_star: prep.f_star,
        seed,
        total_participations,
        energy_spent,
        energy_wasted,
        gradient_draws,
        update_rounds,
        models: recorded_models,
    })
}

/// Validate, prepare, and execute a single run with the config's own seed.
pub fn run(config: &RunConfig) -> Result<MetricsTrace, RunError> {
    let prep = prepare(config)?;
    run_prepared(&prep, config.seed)
}

/// Run one experiment across many seeds, sharing preparation; parallel when
/// the `parallel` feature is enabled.
pub fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<Vec<MetricsTrace>, RunError> {
    run_seeds_exec(Exec::Auto, config, seeds)
}

/// Sequential twin of [`run_seeds`]; produces bitwise-identical traces.
pub fn run_seeds_sequential(
    config: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<MetricsTrace>, RunError> {
    run_seeds_exec(Exec::Sequential, config, seeds)
}

fn run_seeds_exec(
    exec: Exec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<MetricsTrace>, RunError> {
    let prep = prepare(config)?;
    map_collect(exec, seeds.len(), |k| run_prepared(&prep, seeds[k]))
        .into_iter()
        .collect()
}
