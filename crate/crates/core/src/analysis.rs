//! Convergence-bound evaluation and Monte Carlo verifiers.
//!
//! The trained model's expected suboptimality after `T` iterations obeys
//!
//! ```text
//! (L/mu) (1 - eta mu)^T (F(w0) - F* - eta C / 2) + eta L C / (2 mu)
//! ```
//!
//! with `C = (sum_i (Tmax_i - 1) p_i^2 + sum_i sum_j p_i p_j) G^2`, where
//! `Tmax_i` is the user's largest inter-arrival interval (or its stochastic
//! stand-in `1/beta_i`, resp. the window length). The verifiers check, by
//! simulation against frozen gradients, the three statements behind that
//! bound: the scaled aggregate is unbiased, each slot of an interval is hit
//! with equal probability, and the aggregate's variance stays below
//! `sum_i p_i^2 (Tmax_i - 1) G^2`. Statistical checks pass at 3 standard
//! errors; negative controls are reported with `pass = false` by design.

use serde::Serialize;
use thiserror::Error;

use crate::energy::{ArrivalModel, InterArrival, NextArrival};
use crate::objective::ProblemConstants;
use crate::par::{map_collect, Exec};
use crate::rng::{Purpose, Stream};
use crate::scheduling::{
    decide, on_energy, DecisionCtx, ParticipationDecision, SchedulerPolicy, UserEnergyState,
};
use crate::training::{self, RunConfig, RunError};
use crate::vecops::{axpy, norm_sq};

/// Trials per accumulation block; block sums are reduced in index order so
/// parallel and sequential evaluation agree bitwise.
const BLOCK: usize = 4096;

/// Additive numerical floor for statistical tolerances, covering float
/// accumulation error in zero-variance (deterministic) cases.
const TOLERANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("participation weights sum to {sum}, expected 1 within 1e-9")]
    InvalidWeights { sum: f64 },
    #[error("learning rate {eta} violates the premise eta <= min(1/(2 mu), 1/L) = {max_allowed}")]
    PremiseViolated { eta: f64, max_allowed: f64 },
    #[error("user {user} never receives energy; interval maximum undefined")]
    NoArrivals { user: usize },
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Error constant of the convergence bound:
/// `C = (sum_i (Tmax_i - 1) p_i^2 + sum_i sum_j p_i p_j) G^2`.
///
/// The double sum is evaluated literally (it collapses to 1 for any weight
/// vector on the simplex, which tests assert).
pub fn compute_c(
    weights: &[f64],
    interval_maxima: &[f64],
    grad_bound: f64,
) -> Result<f64, AnalysisError> {
    assert_eq!(weights.len(), interval_maxima.len());
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::InvalidWeights { sum });
    }
    debug_assert!(interval_maxima.iter().all(|&t| t >= 1.0));
    let variance_term: f64 = weights
        .iter()
        .zip(interval_maxima)
        .map(|(p, t)| (t - 1.0) * p * p)
        .sum();
    let mut double_sum = 0.0;
    for pi in weights {
        for pj in weights {
            double_sum += pi * pj;
        }
    }
    Ok((variance_term + double_sum) * grad_bound * grad_bound)
}

/// Inputs of the convergence bound.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub mu: f64,
    pub smoothness: f64,
    pub eta: f64,
    pub horizon: usize,
    /// `F(w0) - F*`.
    pub initial_gap: f64,
    pub weights: Vec<f64>,
    pub interval_maxima: Vec<f64>,
    pub grad_bound: f64,
}

impl BoundInputs {
    fn check_premise(&self) -> Result<(), AnalysisError> {
        let max_allowed = (1.0 / (2.0 * self.mu)).min(1.0 / self.smoothness);
        if self.eta > max_allowed {
            return Err(AnalysisError::PremiseViolated {
                eta: self.eta,
                max_allowed,
            });
        }
        Ok(())
    }
}

/// Vanishing part of the bound:
/// `(L/mu) (1 - eta mu)^T (initial_gap - eta C / 2)`.
///
/// The power is accumulated by iterated multiplication, so the term at `T`
/// equals exactly `(1 - eta mu)` times the term at `T - 1`.
pub fn geometric_term(inputs: &BoundInputs) -> Result<f64, AnalysisError> {
    inputs.check_premise()?;
    let c = compute_c(&inputs.weights, &inputs.interval_maxima, inputs.grad_bound)?;
    let factor = 1.0 - inputs.eta * inputs.mu;
    let mut term = inputs.smoothness / inputs.mu * (inputs.initial_gap - inputs.eta * c / 2.0);
    for _ in 0..inputs.horizon {
        term *= factor;
    }
    Ok(term)
}

/// Non-vanishing error floor `eta L C / (2 mu)`.
pub fn error_floor(inputs: &BoundInputs) -> Result<f64, AnalysisError> {
    let c = compute_c(&inputs.weights, &inputs.interval_maxima, inputs.grad_bound)?;
    Ok(inputs.eta * inputs.smoothness * c / (2.0 * inputs.mu))
}

/// Full bound on `E[F(w^T)] - F*`.
pub fn convergence_bound(inputs: &BoundInputs) -> Result<f64, AnalysisError> {
    Ok(geometric_term(inputs)? + error_floor(inputs)?)
}

/// Interval maximum fed into the bound for one arrival model: the realized
/// maximum gap for known schedules, `1/beta` for Bernoulli arrivals, and the
/// window length for uniform-window arrivals.
pub fn interval_maximum(
    model: &ArrivalModel,
    user: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    match model {
        ArrivalModel::DeterministicSchedule { .. } => {
            let trace =
                crate::energy::realize_trace(model, user, horizon, seed).map_err(RunError::from)?;
            trace
                .max_gap()
                .map(|g| g as f64)
                .ok_or(AnalysisError::NoArrivals { user })
        }
        ArrivalModel::Bernoulli { beta } => Ok(1.0 / beta),
        ArrivalModel::UniformWindow { period } => Ok(*period as f64),
    }
}

/// Participation rule of one frozen-gradient user in a verifier trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule {
    /// Uniform-slot scheduling inside a known interval of this length.
    UniformSlot { interval: usize },
    /// Best-effort under Bernoulli arrivals (scale `1/beta`).
    BestEffortBernoulli { beta: f64 },
    /// Best-effort under uniform-window arrivals (scale = window length).
    BestEffortUniform { period: usize },
    /// Negative control: Bernoulli participation without scaling.
    UnscaledBernoulli { beta: f64 },
}

impl WeightRule {
    pub fn participation_probability(&self) -> f64 {
        match *self {
            WeightRule::UniformSlot { interval } => 1.0 / interval as f64,
            WeightRule::BestEffortBernoulli { beta } => beta,
            WeightRule::BestEffortUniform { period } => 1.0 / period as f64,
            WeightRule::UnscaledBernoulli { beta } => beta,
        }
    }

    /// Gradient scale applied when participating.
    pub fn scale(&self) -> f64 {
        match *self {
            WeightRule::UniformSlot { interval } => interval as f64,
            WeightRule::BestEffortBernoulli { beta } => 1.0 / beta,
            WeightRule::BestEffortUniform { period } => period as f64,
            WeightRule::UnscaledBernoulli { .. } => 1.0,
        }
    }

    /// The `Tmax` stand-in this rule contributes to the variance bound.
    pub fn interval_max_equivalent(&self) -> f64 {
        match *self {
            WeightRule::UniformSlot { interval } => interval as f64,
            WeightRule::BestEffortBernoulli { beta } => 1.0 / beta,
            WeightRule::BestEffortUniform { period } => period as f64,
            WeightRule::UnscaledBernoulli { beta } => 1.0 / beta,
        }
    }

    /// One participation draw, routed through the real battery/decision ops.
    fn draw(&self, stream: &mut Stream) -> ParticipationDecision {
        let mut state = UserEnergyState::new();
        match *self {
            WeightRule::UniformSlot { interval } => {
                let inter = InterArrival {
                    prev: Some(0),
                    next: NextArrival::At(interval),
                };
                on_energy(
                    &mut state,
                    SchedulerPolicy::DeterministicUniformSlot,
                    0,
                    &inter,
                    stream,
                )
                .expect("gap defined at arrival");
                // Probe slot 0: hit with probability 1/interval.
                decide(
                    &mut state,
                    SchedulerPolicy::DeterministicUniformSlot,
                    0,
                    &DecisionCtx {
                        steady_weight: 1.0,
                        all_batteries_full: false,
                    },
                )
            }
            WeightRule::BestEffortBernoulli { beta } => {
                self.draw_on_arrival(stream.gen_bool(beta), 1.0 / beta, state, stream)
            }
            WeightRule::BestEffortUniform { period } => self.draw_on_arrival(
                stream.gen_range(period as u64) == 0,
                period as f64,
                state,
                stream,
            ),
            WeightRule::UnscaledBernoulli { beta } => {
                let arrived = stream.gen_bool(beta);
                if arrived {
                    let inter = InterArrival {
                        prev: Some(0),
                        next: NextArrival::HorizonEnd(1),
                    };
                    on_energy(
                        &mut state,
                        SchedulerPolicy::NaiveUnscaled,
                        0,
                        &inter,
                        stream,
                    )
                    .expect("no gap needed");
                }
                decide(
                    &mut state,
                    SchedulerPolicy::NaiveUnscaled,
                    0,
                    &DecisionCtx {
                        steady_weight: 1.0,
                        all_batteries_full: false,
                    },
                )
            }
        }
    }

    fn draw_on_arrival(
        &self,
        arrived: bool,
        steady_weight: f64,
        mut state: UserEnergyState,
        stream: &mut Stream,
    ) -> ParticipationDecision {
        if arrived {
            let inter = InterArrival {
                prev: Some(0),
                next: NextArrival::HorizonEnd(1),
            };
            on_energy(&mut state, SchedulerPolicy::BestEffort, 0, &inter, stream)
                .expect("no gap needed");
        }
        decide(
            &mut state,
            SchedulerPolicy::BestEffort,
            0,
            &DecisionCtx {
                steady_weight,
                all_batteries_full: false,
            },
        )
    }
}

/// A user with a frozen gradient vector for Monte Carlo verification.
#[derive(Debug, Clone)]
pub struct FrozenUser {
    /// Data weight `p_i`.
    pub data_weight: f64,
    pub rule: WeightRule,
    pub gradient: Vec<f64>,
}

/// One verifier result; serialized as
/// `{test, estimate, target, stderr, pass}`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifierReport {
    pub test: String,
    pub estimate: f64,
    pub target: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// The aggregate all schemes estimate: `sum_i p_i g_i`.
pub fn target_aggregate(users: &[FrozenUser]) -> Vec<f64> {
    let dim = users.first().map_or(0, |u| u.gradient.len());
    let mut target = vec![0.0; dim];
    for u in users {
        axpy(u.data_weight * 1.0, &u.gradient, &mut target);
    }
    target
}

/// Expected value of the simulated aggregate: `sum_i P[alpha_i] p_i gamma_i
/// g_i` (differs from [`target_aggregate`] exactly when a rule is biased).
pub fn analytic_mean_aggregate(users: &[FrozenUser]) -> Vec<f64> {
    let dim = users.first().map_or(0, |u| u.gradient.len());
    let mut mean = vec![0.0; dim];
    for u in users {
        let coeff = u.data_weight * u.rule.scale() * u.rule.participation_probability();
        axpy(coeff, &u.gradient, &mut mean);
    }
    mean
}

/// Closed-form variance of the aggregate around the unbiased target:
/// `sum_i p_i^2 gamma_i^2 P_i (1 - P_i) ||g_i||^2`. Only meaningful when
/// every rule is unbiased (`gamma_i P_i = 1`), in which case the per-user
/// factor reduces to `Tmax_i - 1`.
pub fn exact_aggregate_variance(users: &[FrozenUser]) -> f64 {
    users
        .iter()
        .map(|u| {
            let p = u.rule.participation_probability();
            let s = u.rule.scale();
            u.data_weight * u.data_weight * s * s * p * (1.0 - p) * norm_sq(&u.gradient)
        })
        .sum()
}

/// The variance-decomposition upper bound
/// `sum_i p_i^2 (Tmax_i - 1) G^2` with `G^2 = max_i ||g_i||^2`.
pub fn variance_bound(users: &[FrozenUser]) -> f64 {
    let g_sq = users
        .iter()
        .map(|u| norm_sq(&u.gradient))
        .fold(0.0, f64::max);
    users
        .iter()
        .map(|u| u.data_weight * u.data_weight * (u.rule.interval_max_equivalent() - 1.0) * g_sq)
        .sum()
}

fn simulate_aggregate(users: &[FrozenUser], dim: usize, seed: u64, trial: u64) -> Vec<f64> {
    let mut agg = vec![0.0; dim];
    for (i, u) in users.iter().enumerate() {
        let mut stream = Stream::new(seed, i as u64, Purpose::Verifier, trial);
        let d = u.rule.draw(&mut stream);
        if d.participates {
            axpy(u.data_weight * d.weight, &u.gradient, &mut agg);
        }
    }
    agg
}

struct VecStats {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Componentwise mean of the simulated aggregate over `trials` draws,
/// checked against `sum_i p_i g_i` at 3 standard errors per component.
/// The reported scalars describe the worst component.
pub fn unbiasedness_test(
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
) -> VerifierReport {
    unbiasedness_test_exec(Exec::Auto, name, users, trials, seed)
}

/// Sequential twin of [`unbiasedness_test`] (bitwise-identical report).
pub fn unbiasedness_test_seq(
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
) -> VerifierReport {
    unbiasedness_test_exec(Exec::Sequential, name, users, trials, seed)
}

fn unbiasedness_test_exec(
    exec: Exec,
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
) -> VerifierReport {
    let dim = users.first().map_or(0, |u| u.gradient.len());
    let target = target_aggregate(users);
    let blocks = trials.div_ceil(BLOCK);
    let stats = map_collect(exec, blocks, |b| {
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(trials);
        let mut s = VecStats {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        };
        for m in lo..hi {
            let agg = simulate_aggregate(users, dim, seed, m as u64);
            for (k, &a) in agg.iter().enumerate() {
                s.sum[k] += a;
                s.sum_sq[k] += a * a;
            }
        }
        s
    });
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for s in stats {
        for k in 0..dim {
            sum[k] += s.sum[k];
            sum_sq[k] += s.sum_sq[k];
        }
    }

    let n = trials as f64;
    let mut pass = true;
    let mut worst = (0usize, 0.0f64);
    let mut report_stats = (0.0, 0.0, 0.0);
    for k in 0..dim {
        let mean = sum[k] / n;
        let var = ((sum_sq[k] - sum[k] * sum[k] / n) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let dev = (mean - target[k]).abs();
        let tol = 3.0 * se + TOLERANCE_FLOOR * (1.0 + target[k].abs());
        if dev > tol {
            pass = false;
        }
        let severity = dev / tol;
        if k == 0 || severity > worst.1 {
            worst = (k, severity);
            report_stats = (mean, target[k], se);
        }
    }
    let _ = worst;
    VerifierReport {
        test: name.to_string(),
        estimate: report_stats.0,
        target: report_stats.1,
        stderr: report_stats.2,
        pass,
    }
}

/// Monte Carlo estimate of `E || sum_{i in S} p_i gamma_i g_i - sum_i p_i
/// g_i ||^2`. With `expected = None` the report passes iff the estimate stays
/// below the variance-decomposition bound plus 3 standard errors; with a
/// closed-form value it passes iff the estimate matches it within 3 standard
/// errors.
pub fn variance_term_check(
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
    expected: Option<f64>,
) -> VerifierReport {
    variance_term_check_exec(Exec::Auto, name, users, trials, seed, expected)
}

/// Sequential twin of [`variance_term_check`].
pub fn variance_term_check_seq(
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
    expected: Option<f64>,
) -> VerifierReport {
    variance_term_check_exec(Exec::Sequential, name, users, trials, seed, expected)
}

fn variance_term_check_exec(
    exec: Exec,
    name: &str,
    users: &[FrozenUser],
    trials: usize,
    seed: u64,
    expected: Option<f64>,
) -> VerifierReport {
    let dim = users.first().map_or(0, |u| u.gradient.len());
    let target_vec = target_aggregate(users);
    let blocks = trials.div_ceil(BLOCK);
    let stats = map_collect(exec, blocks, |b| {
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(trials);
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for m in lo..hi {
            let agg = simulate_aggregate(users, dim, seed, m as u64);
            let dev: Vec<f64> = agg.iter().zip(&target_vec).map(|(a, t)| a - t).collect();
            let v = norm_sq(&dev);
            sum += v;
            sum_sq += v * v;
        }
        (sum, sum_sq)
    });
    let (sum, sum_sq) = stats
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));

    let n = trials as f64;
    let mean = sum / n;
    let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    let (target, pass) = match expected {
        Some(value) => {
            let tol = 3.0 * se + TOLERANCE_FLOOR * (1.0 + value.abs());
            (value, (mean - value).abs() <= tol)
        }
        None => {
            let bound = variance_bound(users);
            (bound, mean <= bound + 3.0 * se)
        }
    };
    VerifierReport {
        test: name.to_string(),
        estimate: mean,
        target,
        stderr: se,
        pass,
    }
}

/// Empirical hit frequency of every slot of a deterministic interval under
/// uniform-slot scheduling; one report per slot, checked against `1/length`
/// at 3 binomial standard errors.
pub fn participation_probability_check(
    interval: usize,
    trials: usize,
    seed: u64,
) -> Vec<VerifierReport> {
    assert!(interval >= 1);
    let blocks = trials.div_ceil(BLOCK);
    let counts = map_collect(Exec::Auto, blocks, |b| {
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(trials);
        let mut counts = vec![0u64; interval];
        for m in lo..hi {
            let mut state = UserEnergyState::new();
            let inter = InterArrival {
                prev: Some(0),
                next: NextArrival::At(interval),
            };
            let mut stream = Stream::new(seed, 0, Purpose::Verifier, m as u64);
            on_energy(
                &mut state,
                SchedulerPolicy::DeterministicUniformSlot,
                0,
                &inter,
                &mut stream,
            )
            .expect("gap defined");
            counts[state.pending_slot().expect("slot drawn")] += 1;
        }
        counts
    });
    let mut total = vec![0u64; interval];
    for c in counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }

    let p = 1.0 / interval as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    total
        .iter()
        .enumerate()
        .map(|(slot, &count)| {
            let freq = count as f64 / trials as f64;
            VerifierReport {
                test: format!("participation_slot_{slot}"),
                estimate: freq,
                target: p,
                stderr: se,
                pass: (freq - p).abs() <= 3.0 * se,
            }
        })
        .collect()
}

/// End-to-end bound experiment: run one config across seeds and compare the
/// mean final suboptimality gap against the convergence bound.
#[derive(Debug, Clone)]
pub struct BoundExperiment {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    /// Iteration pair `(a, b)` over which the empirical decay rate is
    /// fitted; both must be recorded iterations inside the phase where the
    /// geometric term dominates the floor.
    pub rate_window: (usize, usize),
    /// Slack on the decay-rate comparison (0.1 = 10%).
    pub rate_tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct BoundOutcome {
    pub mean_final_gap: f64,
    pub stderr_final_gap: f64,
    pub bound: f64,
    pub c_value: f64,
    pub constants: ProblemConstants,
    /// Geometric-mean per-step decay factor of the mean gap over the window.
    pub fitted_rate: f64,
    /// The bound's contraction factor `1 - eta mu`.
    pub rate_target: f64,
    pub reports: Vec<VerifierReport>,
}

/// Run the bound experiment. The decay-rate report passes when the empirical
/// decay is at least as fast as the bound's geometric rate, within the given
/// slack: the bound promises an upper envelope, so faster decay is consistent
/// with it and slower decay falsifies it.
pub fn run_bound_experiment(spec: &BoundExperiment) -> Result<BoundOutcome, AnalysisError> {
    let prep = training::prepare(&spec.config)?;
    let cfg = &spec.config;
    let constants = prep.constants;

    let interval_maxima: Vec<f64> = prep
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| interval_maximum(m, i, cfg.horizon, spec.seeds[0]))
        .collect::<Result<_, _>>()?;
    let inputs = BoundInputs {
        mu: constants.mu,
        smoothness: constants.smoothness,
        eta: cfg.eta,
        horizon: cfg.horizon,
        initial_gap: prep
            .objective
            .global_loss(&prep.w0)
            .map_err(RunError::from)?
            - prep.f_star,
        weights: prep.objective.weights().to_vec(),
        interval_maxima: interval_maxima.clone(),
        grad_bound: constants.grad_norm_bound,
    };
    let bound = convergence_bound(&inputs)?;
    let c_value = compute_c(&inputs.weights, &interval_maxima, inputs.grad_bound)?;

    let traces = map_collect(Exec::Auto, spec.seeds.len(), |k| {
        training::run_prepared(&prep, spec.seeds[k])
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let n = traces.len() as f64;
    let final_gaps: Vec<f64> = traces.iter().map(|t| t.final_gap()).collect();
    let mean_final_gap = final_gaps.iter().sum::<f64>() / n;
    let var = final_gaps
        .iter()
        .map(|g| (g - mean_final_gap).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let stderr_final_gap = (var / n).sqrt();

    let gap_at = |trace: &training::MetricsTrace, t: usize| -> f64 {
        trace
            .rows
            .iter()
            .find(|r| r.iteration == t)
            .unwrap_or_else(|| panic!("iteration {t} not recorded; lower metric_cadence"))
            .loss_gap
    };
    let (a, b) = spec.rate_window;
    assert!(b > a, "rate window must be increasing");
    let mean_gap_a = traces.iter().map(|t| gap_at(t, a)).sum::<f64>() / n;
    let mean_gap_b = traces.iter().map(|t| gap_at(t, b)).sum::<f64>() / n;
    let fitted_rate = (mean_gap_b / mean_gap_a).powf(1.0 / (b - a) as f64);
    let per_seed_rates: Vec<f64> = traces
        .iter()
        .map(|t| (gap_at(t, b) / gap_at(t, a)).powf(1.0 / (b - a) as f64))
        .collect();
    let rate_mean = per_seed_rates.iter().sum::<f64>() / n;
    let rate_var = per_seed_rates
        .iter()
        .map(|r| (r - rate_mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let rate_se = (rate_var / n).sqrt();

    let rate_target = 1.0 - cfg.eta * constants.mu;
    let reports = vec![
        VerifierReport {
            test: "bound_satisfaction".into(),
            estimate: mean_final_gap,
            target: bound,
            stderr: stderr_final_gap,
            pass: mean_final_gap <= bound + 3.0 * stderr_final_gap,
        },
        VerifierReport {
            test: "geometric_decay_rate".into(),
            estimate: fitted_rate,
            target: rate_target,
            stderr: rate_se,
            pass: fitted_rate <= rate_target * (1.0 + spec.rate_tolerance),
        },
    ];
    Ok(BoundOutcome {
        mean_final_gap,
        stderr_final_gap,
        bound,
        c_value,
        constants,
        fitted_rate,
        rate_target,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frozen(data_weight: f64, rule: WeightRule, gradient: &[f64]) -> FrozenUser {
        FrozenUser {
            data_weight,
            rule,
            gradient: gradient.to_vec(),
        }
    }

    #[test]
    fn compute_c_hand_values() {
        assert_eq!(compute_c(&[0.5, 0.5], &[1.0, 1.0], 1.0).unwrap(), 1.0);
        assert_eq!(compute_c(&[0.5, 0.5], &[3.0, 5.0], 2.0).unwrap(), 10.0);
    }

    #[test]
    fn compute_c_double_sum_collapses_to_g_squared() {
        let mut stream = Stream::new(0xC0, 0, Purpose::Fuzz, 0);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..17).map(|_| -stream.gen_f64().ln()).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let c = compute_c(&p, &[1.0; 17], 3.0).unwrap();
            assert!((c - 9.0).abs() <= 1e-12 * 9.0);
        }
    }

    #[test]
    fn compute_c_rejects_bad_weights() {
        assert!(matches!(
            compute_c(&[0.5, 0.4], &[1.0, 1.0], 1.0),
            Err(AnalysisError::InvalidWeights { .. })
        ));
    }

    fn simple_inputs(horizon: usize) -> BoundInputs {
        BoundInputs {
            mu: 1.0,
            smoothness: 1.0,
            eta: 0.5,
            horizon,
            initial_gap: 1.0,
            weights: vec![0.5, 0.5],
            interval_maxima: vec![1.0, 1.0],
            grad_bound: 1.0,
        }
    }

    #[test]
    fn bound_limit_is_the_error_floor() {
        // C = 1 here, so the floor is eta L C / (2 mu) = 0.25.
        let inputs = simple_inputs(200);
        assert_relative_eq!(convergence_bound(&inputs).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bound_at_zero_iterations_is_the_full_expression() {
        let inputs = simple_inputs(0);
        // (L/mu)(gap0 - eta C/2) + eta L C/(2 mu) = (1 - 0.25) + 0.25 = 1.
        assert_eq!(convergence_bound(&inputs).unwrap(), 1.0);
    }

    #[test]
    fn bound_is_non_increasing_when_the_geometric_term_is_positive() {
        let mut last = f64::INFINITY;
        for horizon in 0..60 {
            let b = convergence_bound(&simple_inputs(horizon)).unwrap();
            assert!(b <= last + 1e-15);
            last = b;
        }
    }

    #[test]
    fn geometric_term_recursion_is_exact() {
        for horizon in 1..50 {
            let long = geometric_term(&simple_inputs(horizon)).unwrap();
            let short = geometric_term(&simple_inputs(horizon - 1)).unwrap();
            assert_eq!(long, short * 0.5);
        }
    }

    #[test]
    fn premise_violation_is_rejected() {
        let mut inputs = simple_inputs(10);
        inputs.eta = 0.6;
        assert!(matches!(
            convergence_bound(&inputs),
            Err(AnalysisError::PremiseViolated { .. })
        ));
    }

    #[test]
    fn stochastic_interval_maxima_feed_the_same_formula() {
        // Fractional interval maxima (1/beta) are accepted unchanged.
        let c = compute_c(&[0.5, 0.5], &[2.0, 4.0], 1.0).unwrap();
        assert_relative_eq!(c, 0.25 + 0.75 + 1.0, epsilon = 1e-12);
        let inputs = BoundInputs {
            interval_maxima: vec![2.0, 4.0],
            ..simple_inputs(10)
        };
        assert!(convergence_bound(&inputs).is_ok());
    }

    #[test]
    fn interval_maximum_per_model() {
        let det = ArrivalModel::DeterministicSchedule {
            times: vec![0, 4, 10],
        };
        assert_eq!(interval_maximum(&det, 0, 12, 1).unwrap(), 6.0);
        let bern = ArrivalModel::Bernoulli { beta: 0.25 };
        assert_eq!(interval_maximum(&bern, 0, 12, 1).unwrap(), 4.0);
        let win = ArrivalModel::UniformWindow { period: 7 };
        assert_eq!(interval_maximum(&win, 0, 12, 1).unwrap(), 7.0);
        let never = ArrivalModel::DeterministicSchedule { times: vec![] };
        assert!(matches!(
            interval_maximum(&never, 3, 12, 1),
            Err(AnalysisError::NoArrivals { user: 3 })
        ));
    }

    #[test]
    fn single_user_two_outcome_unbiasedness() {
        let users = [frozen(
            1.0,
            WeightRule::BestEffortBernoulli { beta: 0.5 },
            &[1.0],
        )];
        let report = unbiasedness_test("single", &users, 50_000, 0xA11CE);
        assert!(report.pass, "{report:?}");
        assert_relative_eq!(report.target, 1.0);
    }

    #[test]
    fn uniform_slot_rule_scaled_mean_recovers_gradient() {
        let users = [frozen(1.0, WeightRule::UniformSlot { interval: 6 }, &[2.0])];
        let report = unbiasedness_test("slot6", &users, 100_000, 0xB0B);
        assert!(report.pass, "{report:?}");
        assert_relative_eq!(report.target, 2.0);
    }

    #[test]
    fn naive_unscaled_control_fails_the_check() {
        let users = [
            frozen(0.5, WeightRule::UnscaledBernoulli { beta: 1.0 }, &[1.0]),
            frozen(0.5, WeightRule::UnscaledBernoulli { beta: 0.2 }, &[1.0]),
        ];
        let report = unbiasedness_test("naive_control", &users, 100_000, 0xC0FFEE);
        assert!(!report.pass);
        // Mean lands on the analytic 0.5 + 0.1 = 0.6, not the target 1.0.
        let analytic = analytic_mean_aggregate(&users);
        assert_relative_eq!(analytic[0], 0.6);
        assert!((report.estimate - 0.6).abs() < 0.01);
        assert_relative_eq!(report.target, 1.0);
    }

    #[test]
    fn variance_zero_without_randomness() {
        let users = [
            frozen(0.5, WeightRule::UniformSlot { interval: 1 }, &[1.0, -2.0]),
            frozen(0.5, WeightRule::UniformSlot { interval: 1 }, &[0.5, 0.5]),
        ];
        let report = variance_term_check("always_on", &users, 10_000, 3, None);
        assert_eq!(report.estimate, 0.0);
        assert_eq!(report.target, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn variance_matches_two_outcome_expectation() {
        // Single user, deterministic interval 4, unit gradient:
        // E[(4 alpha - 1)^2] = 3 exactly.
        let users = [frozen(1.0, WeightRule::UniformSlot { interval: 4 }, &[1.0])];
        assert_eq!(exact_aggregate_variance(&users), 3.0);
        assert_eq!(variance_bound(&users), 3.0);
        let report = variance_term_check("det4", &users, 100_000, 0xD4, Some(3.0));
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn variance_matches_bernoulli_closed_form() {
        let users = [
            frozen(0.5, WeightRule::BestEffortBernoulli { beta: 0.5 }, &[1.0]),
            frozen(0.5, WeightRule::BestEffortBernoulli { beta: 0.25 }, &[1.0]),
        ];
        let expected = exact_aggregate_variance(&users);
        assert_relative_eq!(expected, 0.25 * 1.0 + 0.25 * 3.0, epsilon = 1e-12);
        let report = variance_term_check("mixed_bernoulli", &users, 100_000, 0xE5, Some(expected));
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn slot_probabilities_are_uniform() {
        let reports = participation_probability_check(6, 100_000, 0xF00D);
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn verifier_parallel_matches_sequential() {
        let users = [
            frozen(0.4, WeightRule::UniformSlot { interval: 3 }, &[1.0, 2.0]),
            frozen(
                0.6,
                WeightRule::BestEffortBernoulli { beta: 0.3 },
                &[-1.0, 0.5],
            ),
        ];
        let a = unbiasedness_test("par", &users, 20_000, 7);
        let b = unbiasedness_test_seq("par", &users, 20_000, 7);
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let va = variance_term_check("par", &users, 20_000, 7, None);
        let vb = variance_term_check_seq("par", &users, 20_000, 7, None);
        assert_eq!(va.estimate.to_bits(), vb.estimate.to_bits());
    }

    #[test]
    fn report_serializes_with_fixed_schema() {
        let report = VerifierReport {
            test: "x".into(),
            estimate: 1.0,
            target: 2.0,
            stderr: 0.5,
            pass: false,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"test":"x","estimate":1.0,"target":2.0,"stderr":0.5,"pass":false}"#
        );
    }
}
