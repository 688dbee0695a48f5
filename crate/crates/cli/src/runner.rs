//! Experiment orchestration: single runs, multi-seed sweeps, and presets.

use std::path::Path;

use ehsgd_core::par::{map_collect, Exec};
use ehsgd_core::training::{self, RunConfig};

use crate::config::CliError;
use crate::output::{self, Aggregate, SweepSummary};

/// Run one experiment into `dir`.
pub fn run_single(
    config: &RunConfig,
    dir: &Path,
    dump_data: bool,
) -> Result<output::RunSummary, CliError> {
    let prep = training::prepare(config)?;
    let trace = training::run_prepared(&prep, config.seed)?;
    let summary = output::write_run_outputs(dir, &prep, &trace, dump_data)?;
    println!(
        "wrote {} (policy {}, seed {}, final loss {:.6}, final gap {:.3e})",
        dir.display(),
        summary.policy,
        summary.seed,
        summary.final_loss,
        summary.final_gap
    );
    Ok(summary)
}

/// Run one experiment across a seed range; per-seed outputs land in
/// `dir/seed-NNNN/` and an aggregate summary at `dir/aggregate_summary.json`.
pub fn run_sweep(
    config: &RunConfig,
    seeds: &[u64],
    dir: &Path,
    dump_data: bool,
) -> Result<SweepSummary, CliError> {
    let prep = training::prepare(config)?;
    let results = map_collect(Exec::Auto, seeds.len(), |k| {
        let seed = seeds[k];
        let trace = training::run_prepared(&prep, seed)?;
        let subdir = dir.join(format!("seed-{seed:04}"));
        // Dump the (seed-independent) dataset only once.
        output::write_run_outputs(&subdir, &prep, &trace, dump_data && k == 0)
    });
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        summaries.push(r?);
    }
    let losses: Vec<f64> = summaries.iter().map(|s| s.final_loss).collect();
    let gaps: Vec<f64> = summaries.iter().map(|s| s.final_gap).collect();
    let sweep = SweepSummary {
        runs: summaries.len(),
        seeds: format!("{}..{}", seeds.first().unwrap(), seeds.last().unwrap()),
        policy: config.policy.name().to_string(),
        final_loss: output::aggregate(&losses),
        final_gap: output::aggregate(&gaps),
    };
    output::write_json(&dir.join("aggregate_summary.json"), &sweep)?;
    println!(
        "wrote {} ({} runs, policy {}, mean final loss {:.6} +- {:.2e})",
        dir.display(),
        sweep.runs,
        sweep.policy,
        sweep.final_loss.mean,
        sweep.final_loss.stderr
    );
    Ok(sweep)
}

/// Run every config of a preset (one subdirectory per policy) and write a
/// cross-policy comparison.
pub fn run_preset(
    name: &str,
    configs: &[RunConfig],
    seeds: Option<&[u64]>,
    dir: &Path,
    dump_data: bool,
) -> Result<(), CliError> {
    let mut comparison = serde_json::Map::new();
    for config in configs {
        let subdir = dir.join(config.policy.name());
        let (loss, gap) = match seeds {
            Some(seeds) => {
                let sweep = run_sweep(config, seeds, &subdir, dump_data)?;
                (sweep.final_loss, sweep.final_gap)
            }
            None => {
                let summary = run_single(config, &subdir, dump_data)?;
                (
                    Aggregate {
                        mean: summary.final_loss,
                        stderr: 0.0,
                    },
                    Aggregate {
                        mean: summary.final_gap,
                        stderr: 0.0,
                    },
                )
            }
        };
        comparison.insert(
            config.policy.name().to_string(),
            serde_json::json!({
                "final_loss": { "mean": loss.mean, "stderr": loss.stderr },
                "final_gap": { "mean": gap.mean, "stderr": gap.stderr },
            }),
        );
    }
    let report = serde_json::json!({ "preset": name, "policies": comparison });
    output::write_json(&dir.join("comparison.json"), &report)?;
    println!("wrote {}", dir.join("comparison.json").display());
    Ok(())
}
