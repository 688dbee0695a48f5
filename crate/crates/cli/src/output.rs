//! Output serialization: per-run metrics CSV, summary, manifest, and sweep
//! aggregates.

use std::fs;
use std::path::Path;

use serde::Serialize;

use ehsgd_core::analysis::{self, BoundInputs};
use ehsgd_core::objective::{ConstantsProbe, ProblemConstants};
use ehsgd_core::training::{MetricsTrace, Prepared, RunConfig};

use crate::config::CliError;

/// Derived constants recorded alongside every run. `error_constant` and
/// `bound` are null when undefined for the instance (a user without arrivals,
/// or a learning rate outside the premise).
#[derive(Debug, Serialize)]
pub struct DerivedConstants {
    pub mu: f64,
    pub smoothness: f64,
    pub grad_norm_bound: f64,
    pub grad_std_bound: f64,
    pub constants_probe: ConstantsProbe,
    pub error_constant: Option<f64>,
    pub bound: Option<f64>,
}

/// Everything needed to reproduce and interpret one run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub created_utc: String,
    pub seed: u64,
    pub derived: DerivedConstants,
    pub config: RunConfig,
}

pub fn build_manifest(prep: &Prepared, seed: u64) -> Manifest {
    let cfg = &prep.config;
    let ProblemConstants {
        mu,
        smoothness,
        grad_norm_bound,
        grad_std_bound,
    } = prep.constants;
    let interval_maxima: Option<Vec<f64>> = prep
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| analysis::interval_maximum(m, i, cfg.horizon, seed).ok())
        .collect();
    let error_constant = interval_maxima.as_ref().and_then(|maxima| {
        analysis::compute_c(prep.objective.weights(), maxima, grad_norm_bound).ok()
    });
    let bound = interval_maxima.and_then(|maxima| {
        let initial_gap = prep.objective.global_loss(&prep.w0).ok()? - prep.f_star;
        analysis::convergence_bound(&BoundInputs {
            mu,
            smoothness,
            eta: cfg.eta,
            horizon: cfg.horizon,
            initial_gap,
            weights: prep.objective.weights().to_vec(),
            interval_maxima: maxima,
            grad_bound: grad_norm_bound,
        })
        .ok()
    });
    Manifest {
        version: env!("CARGO_PKG_VERSION"),
        created_utc: chrono::Utc::now().to_rfc3339(),
        seed,
        derived: DerivedConstants {
            mu,
            smoothness,
            grad_norm_bound,
            grad_std_bound,
            constants_probe: prep.constants_probe,
            error_constant,
            bound,
        },
        config: {
            let mut c = cfg.clone();
            c.seed = seed;
            c
        },
    }
}

/// Scalar summary of one completed run.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_gap: f64,
    pub f_star: f64,
    pub total_participations: u64,
    pub update_rounds: u64,
    pub energy_spent: u64,
    pub energy_wasted: u64,
    pub mean_participants: f64,
}

pub fn summarize(prep: &Prepared, trace: &MetricsTrace) -> RunSummary {
    RunSummary {
        policy: prep.config.policy.name().to_string(),
        seed: trace.seed,
        iterations: prep.config.horizon,
        final_loss: trace.final_loss(),
        final_gap: trace.final_gap(),
        f_star: trace.f_star,
        total_participations: trace.total_participations,
        update_rounds: trace.update_rounds,
        energy_spent: trace.energy_spent,
        energy_wasted: trace.energy_wasted,
        mean_participants: trace.total_participations as f64 / prep.config.horizon as f64,
    }
}

/// Write `metrics.csv`, `summary.json`, and `manifest.json` (plus
/// `dataset.csv` on request) into `dir`.
pub fn write_run_outputs(
    dir: &Path,
    prep: &Prepared,
    trace: &MetricsTrace,
    dump_data: bool,
) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    fs::write(dir.join("metrics.csv"), csv)?;

    let summary = summarize(prep, trace);
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(
        &dir.join("manifest.json"),
        &build_manifest(prep, trace.seed),
    )?;

    if dump_data {
        let mut data = Vec::new();
        prep.objective.dump_csv(&mut data)?;
        fs::write(dir.join("dataset.csv"), data)?;
    }
    Ok(summary)
}

/// Mean and standard error of a statistic across runs.
#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Aggregate { mean, stderr }
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub runs: usize,
    pub seeds: String,
    pub policy: String,
    pub final_loss: Aggregate,
    pub final_gap: Aggregate,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
