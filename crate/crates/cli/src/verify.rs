//! Verifier suites: statistical checks of the unbiasedness, participation,
//! and variance claims, plus the end-to-end bound experiment.
//!
//! Each suite yields reports plus an expectation flag: negative controls are
//! supposed to fail, and the process exits nonzero if any positive check
//! fails or any negative control passes.

use std::path::Path;

use ehsgd_core::analysis::{
    self, participation_probability_check, run_bound_experiment, unbiasedness_test,
    variance_term_check, BoundExperiment, FrozenUser, VerifierReport, WeightRule,
};
use ehsgd_core::objective::{LossName, PartitionMode, SyntheticSpec};
use ehsgd_core::rng::{Purpose, Stream};
use ehsgd_core::scheduling::SchedulerPolicy;
use ehsgd_core::training::RunConfig;

use crate::config::CliError;
use crate::output;

/// A verifier result plus whether it is a negative control.
pub struct SuiteEntry {
    pub report: VerifierReport,
    pub expect_fail: bool,
}

impl SuiteEntry {
    fn positive(report: VerifierReport) -> Self {
        SuiteEntry {
            report,
            expect_fail: false,
        }
    }

    fn control(report: VerifierReport) -> Self {
        SuiteEntry {
            report,
            expect_fail: true,
        }
    }

    /// A check is in the expected state when positives pass and controls fail.
    pub fn as_expected(&self) -> bool {
        self.report.pass != self.expect_fail
    }
}

fn frozen_users(rules: &[WeightRule], dim: usize, seed: u64) -> Vec<FrozenUser> {
    let mut s = Stream::new(seed, 0, Purpose::Fuzz, 0);
    let raw: Vec<f64> = (0..rules.len()).map(|_| -s.gen_f64().ln()).collect();
    let total: f64 = raw.iter().sum();
    rules
        .iter()
        .zip(raw)
        .enumerate()
        .map(|(u, (&rule, w))| {
            let mut g = Stream::new(seed, u as u64, Purpose::Fuzz, 1);
            FrozenUser {
                data_weight: w / total,
                rule,
                gradient: (0..dim).map(|_| 2.0 * g.gen_f64() - 1.0).collect(),
            }
        })
        .collect()
}

const TRIALS: usize = 200_000;

fn unbiasedness_suite() -> Vec<SuiteEntry> {
    let mut entries = Vec::new();
    let cases: [(&str, Vec<WeightRule>); 3] = [
        (
            "unbiasedness_uniform_slot",
            [1usize, 2, 3, 4, 6]
                .iter()
                .map(|&t| WeightRule::UniformSlot { interval: t })
                .collect(),
        ),
        (
            "unbiasedness_bernoulli",
            [1.0, 0.5, 0.25, 0.2, 0.125]
                .iter()
                .map(|&beta| WeightRule::BestEffortBernoulli { beta })
                .collect(),
        ),
        (
            "unbiasedness_uniform_window",
            [1usize, 2, 3, 5, 8]
                .iter()
                .map(|&p| WeightRule::BestEffortUniform { period: p })
                .collect(),
        ),
    ];
    for (name, rules) in &cases {
        let users = frozen_users(rules, 8, 0xACC1);
        entries.push(SuiteEntry::positive(unbiasedness_test(
            name, &users, TRIALS, 0x11AA,
        )));
    }
    // Negative control: unscaled participation with heterogeneous rates.
    let control = [
        FrozenUser {
            data_weight: 0.5,
            rule: WeightRule::UnscaledBernoulli { beta: 1.0 },
            gradient: vec![1.0],
        },
        FrozenUser {
            data_weight: 0.5,
            rule: WeightRule::UnscaledBernoulli { beta: 0.2 },
            gradient: vec![1.0],
        },
    ];
    entries.push(SuiteEntry::control(unbiasedness_test(
        "unbiasedness_naive_control",
        &control,
        TRIALS,
        0xACCA,
    )));
    entries
}

fn participation_suite() -> Vec<SuiteEntry> {
    participation_probability_check(6, 100_000, 0xACC2)
        .into_iter()
        .map(SuiteEntry::positive)
        .collect()
}

fn variance_suite() -> Vec<SuiteEntry> {
    let mut entries = Vec::new();
    let single = [FrozenUser {
        data_weight: 1.0,
        rule: WeightRule::UniformSlot { interval: 4 },
        gradient: vec![1.0],
    }];
    entries.push(SuiteEntry::positive(variance_term_check(
        "variance_deterministic_T4",
        &single,
        TRIALS,
        0xACC3,
        Some(3.0),
    )));
    let mixed = [
        FrozenUser {
            data_weight: 0.5,
            rule: WeightRule::BestEffortBernoulli { beta: 0.5 },
            gradient: vec![1.0],
        },
        FrozenUser {
            data_weight: 0.5,
            rule: WeightRule::BestEffortBernoulli { beta: 0.25 },
            gradient: vec![1.0],
        },
    ];
    entries.push(SuiteEntry::positive(variance_term_check(
        "variance_mixed_bernoulli",
        &mixed,
        TRIALS,
        0xACC4,
        Some(analysis::exact_aggregate_variance(&mixed)),
    )));
    entries.push(SuiteEntry::positive(variance_term_check(
        "variance_upper_bound",
        &mixed,
        TRIALS,
        0xACC4,
        None,
    )));
    entries
}

/// The bound experiment the acceptance suite pins: a heterogeneous-period
/// quadratic instance with one point per user, 200 seeds.
pub fn bound_experiment_spec() -> BoundExperiment {
    BoundExperiment {
        config: RunConfig {
            num_users: 10,
            horizon: 2000,
            seed: 1,
            eta: 0.25,
            eta_decay_kappa: None,
            policy: SchedulerPolicy::DeterministicUniformSlot,
            arrivals: None,
            arrival_periods: Some(vec![1, 2, 3, 4, 5, 6, 7, 8]),
            objective: SyntheticSpec {
                kind: LossName::Quadratic,
                dim: 5,
                points_per_user: 1,
                mode: PartitionMode::Iid,
                lambda: 0.1,
                skew: 0.8,
                num_groups: 4,
                separation: 2.0,
                data_seed: 0xB00D,
            },
            metric_cadence: 1,
            bound_check: true,
            w0: Some(vec![6.0; 5]),
            record_models: false,
            constants_probe: None,
        },
        seeds: (1..=200).collect(),
        rate_window: (0, 5),
        rate_tolerance: 0.10,
    }
}

fn bound_suite() -> Result<Vec<SuiteEntry>, CliError> {
    let outcome = run_bound_experiment(&bound_experiment_spec())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(outcome
        .reports
        .into_iter()
        .map(SuiteEntry::positive)
        .collect())
}

/// Run a verifier suite; reports go to stdout and, when an output directory
/// is given, to `verify_<suite>.json`.
pub fn run_suite(name: &str, out_dir: Option<&Path>) -> Result<(), CliError> {
    let entries = match name {
        "unbiasedness" => unbiasedness_suite(),
        "participation" => participation_suite(),
        "variance" => variance_suite(),
        "bound" => bound_suite()?,
        "all" => {
            let mut all = unbiasedness_suite();
            all.extend(participation_suite());
            all.extend(variance_suite());
            all.extend(bound_suite()?);
            all
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown verifier suite `{other}` (available: unbiasedness, participation, variance, bound, all)"
            )));
        }
    };

    let mut unexpected = 0usize;
    for e in &entries {
        let status = if e.as_expected() { "ok " } else { "FAIL" };
        let kind = if e.expect_fail {
            " [negative control]"
        } else {
            ""
        };
        println!(
            "{status} {:<32} estimate={:<12.6} target={:<12.6} stderr={:.3e} pass={}{kind}",
            e.report.test, e.report.estimate, e.report.target, e.report.stderr, e.report.pass
        );
        if !e.as_expected() {
            unexpected += 1;
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let reports: Vec<&VerifierReport> = entries.iter().map(|e| &e.report).collect();
        output::write_json(&dir.join(format!("verify_{name}.json")), &reports)?;
    }
    if unexpected > 0 {
        return Err(CliError::VerificationFailed { failed: unexpected });
    }
    println!(
        "suite `{name}`: {} check(s) in the expected state",
        entries.len()
    );
    Ok(())
}
