//! Built-in experiment presets.

use ehsgd_core::objective::{LossName, PartitionMode, SyntheticSpec};
use ehsgd_core::scheduling::SchedulerPolicy;
use ehsgd_core::training::RunConfig;

use crate::config::CliError;

/// Policies compared by the `paper-sec5` preset, in report order.
pub const SEC5_POLICIES: [SchedulerPolicy; 4] = [
    SchedulerPolicy::FullParticipation,
    SchedulerPolicy::DeterministicUniformSlot,
    SchedulerPolicy::NaiveUnscaled,
    SchedulerPolicy::WaitForAll,
];

/// Desk-scale four-group experiment: 40 users split into groups with arrival
/// periods (1, 5, 10, 20), regularized logistic regression with group label
/// skew, and a 2000-iteration budget. One config per compared policy.
pub fn paper_sec5(policy: SchedulerPolicy) -> RunConfig {
    RunConfig {
        num_users: 40,
        horizon: 2000,
        seed: 1,
        eta: 0.005,
        eta_decay_kappa: None,
        policy,
        arrivals: None,
        arrival_periods: if policy == SchedulerPolicy::FullParticipation {
            None
        } else {
            Some(vec![1, 5, 10, 20])
        },
        objective: SyntheticSpec {
            kind: LossName::Logistic,
            dim: 20,
            points_per_user: 50,
            mode: PartitionMode::GroupLabelSkew,
            lambda: 0.1,
            skew: 0.8,
            num_groups: 4,
            separation: 2.0,
            data_seed: 0x5EED_DA7A,
        },
        metric_cadence: 20,
        bound_check: false,
        w0: None,
        record_models: false,
        constants_probe: None,
    }
}

pub fn lookup(name: &str) -> Result<Vec<RunConfig>, CliError> {
    match name {
        "paper-sec5" => Ok(SEC5_POLICIES.iter().map(|&p| paper_sec5(p)).collect()),
        other => Err(CliError::Usage(format!(
            "unknown preset `{other}` (available: paper-sec5)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sec5_expands_to_four_group_periods_and_four_policies() {
        let configs = lookup("paper-sec5").unwrap();
        assert_eq!(configs.len(), 4);
        for cfg in &configs {
            cfg.validate().unwrap();
            assert_eq!(cfg.num_users, 40);
            if cfg.policy != SchedulerPolicy::FullParticipation {
                assert_eq!(cfg.arrival_periods, Some(vec![1, 5, 10, 20]));
                // A_k = {i : i mod 4 = k}
                let groups = cfg.group_assignment();
                for (i, g) in groups.iter().enumerate() {
                    assert_eq!(*g, i % 4);
                }
            }
        }
    }

    #[test]
    fn unknown_preset_is_a_usage_error() {
        assert!(matches!(lookup("nope"), Err(CliError::Usage(_))));
    }
}
