use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ehsgd_cli::config::{env_seed_override, parse_seed_range, CliError};
use ehsgd_cli::{exit_code, parse_config, preset, runner, verify};

/// Simulator and statistical verifiers for distributed SGD over
/// energy-harvesting clients.
#[derive(Parser, Debug)]
#[command(name = "ehsgd", version, about)]
struct Cli {
    /// Run the experiment described by a JSON config (or a manifest).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run a built-in experiment preset (paper-sec5).
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    preset: Option<String>,

    /// Run a verifier suite: unbiasedness | participation | variance |
    /// bound | all.
    #[arg(long, value_name = "SUITE", conflicts_with_all = ["config", "preset"])]
    verify: Option<String>,

    /// Output directory (required for --config/--preset, optional for
    /// --verify).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Inclusive seed range A..B; fans the experiment out over one run per
    /// seed.
    #[arg(long, value_name = "A..B")]
    seeds: Option<String>,

    /// Override the config's policy: alg1 | best_effort | naive |
    /// wait_for_all | full.
    #[arg(long, value_name = "NAME")]
    policy: Option<String>,

    /// Cap on worker threads for sweeps and Monte Carlo trials.
    #[arg(long, value_name = "K")]
    jobs: Option<usize>,

    /// Also write the synthetic dataset as dataset.csv.
    #[arg(long)]
    dump_data: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool setup failed: {e}")))?;
    }
    let seeds = cli.seeds.as_deref().map(parse_seed_range).transpose()?;

    if let Some(suite) = &cli.verify {
        return verify::run_suite(suite, cli.output.as_deref());
    }

    let out_dir = cli
        .output
        .as_deref()
        .ok_or_else(|| CliError::Usage("--output DIR is required for runs".into()))?;

    if let Some(name) = &cli.preset {
        if cli.policy.is_some() {
            return Err(CliError::Usage(
                "--policy cannot override a preset (it already spans policies)".into(),
            ));
        }
        let configs = preset::lookup(name)?;
        return runner::run_preset(name, &configs, seeds.as_deref(), out_dir, cli.dump_data);
    }

    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("one of --config, --preset, --verify is required".into()))?;
    let mut config = parse_config(path)?;
    if let Some(policy) = &cli.policy {
        config.policy = serde_json::from_value(serde_json::Value::String(policy.clone()))
            .map_err(|_| CliError::Usage(format!("unknown policy `{policy}`")))?;
        config.validate()?;
    }
    match seeds {
        Some(seeds) => {
            runner::run_sweep(&config, &seeds, out_dir, cli.dump_data)?;
        }
        None => {
            if let Some(seed) = env_seed_override()? {
                config.seed = seed;
            }
            runner::run_single(&config, out_dir, cli.dump_data)?;
        }
    }
    Ok(())
}
