//! Command-line front end: analyze an operator, solve at probe points, run
//! verification experiments, sweep the jump size, summarize reports.
//!
//! Exit codes: 0 success, 1 a verification ran and failed, 2 usage or
//! runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oustab::harness::{self, Config, Report};
use oustab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "oustab",
    version,
    about = "Degenerate OU Cauchy problems with rough-in-time diffusion perturbations"
)]
struct Cli {
    /// Cap the worker-thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the Kalman block structure and driver diagnostics as JSON.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the solution at every configured probe point.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Jump size for scheduled problems (default: smallest configured).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Also write the values as a CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one named experiment, or all applicable ones.
    Verify {
        /// Experiment name, or "all". See `verify list`.
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the experiment rows as a CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shrink the jump size and report the distance to the reference value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a previously written CSV report.
    Report {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("error: thread pool already started");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Ok(false) means a verification ran to completion and failed.
fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Analyze { config } => {
            let cfg = Config::from_path(&config)?;
            let analysis = harness::analyze(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&analysis)
                    .map_err(|e| Error::numerical(format!("cannot render analysis: {e}")))?
            );
            Ok(true)
        }
        Cmd::Solve {
            config,
            seed,
            epsilon,
            out,
        } => {
            let cfg = Config::from_path(&config)?;
            let solves = harness::experiments::solve_probes(&cfg, seed, epsilon)?;
            let mut report = Report::new();
            println!("{:>8}  {:>24}  {:>14}  {:>10}  {:>12}  bound", "t", "x", "value", "stderr", "sup bound");
            for (t, x, est) in &solves {
                let xs: Vec<f64> = x.iter().copied().collect();
                println!(
                    "{t:>8.4}  {:>24}  {:>14.6e}  {:>10.2e}  {:>12.4e}  {}",
                    format!("{xs:?}"),
                    est.value,
                    est.std_error,
                    est.sup_bound,
                    if est.satisfies_max_principle() { "ok" } else { "VIOLATED" },
                );
                report.record(
                    "solve",
                    serde_json::json!({"t": t, "x": xs, "sup_bound": est.sup_bound}).to_string(),
                    est.value,
                    1.96 * est.std_error,
                    seed.unwrap_or(cfg.mc.seed),
                );
            }
            if let Some(path) = out {
                report.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(solves.iter().all(|(_, _, est)| est.satisfies_max_principle()))
        }
        Cmd::Verify {
            experiment,
            config,
            seed,
            out,
        } => {
            if experiment == "list" {
                for (name, what) in harness::EXPERIMENTS {
                    println!("{name:<18} {what}");
                }
                return Ok(true);
            }
            let config = config.ok_or_else(|| Error::config("--config is required"))?;
            let cfg = Config::from_path(&config)?;
            let names: Vec<&str> = if experiment == "all" {
                harness::experiment_names()
            } else {
                vec![experiment.as_str()]
            };
            let mut merged = Report::new();
            let mut all_passed = true;
            let mut ran = 0usize;
            for name in names {
                match harness::run_experiment(name, &cfg, seed) {
                    Ok(outcome) => {
                        ran += 1;
                        all_passed &= outcome.passed;
                        println!(
                            "{}: {} -- {}",
                            outcome.name,
                            if outcome.passed { "PASS" } else { "FAIL" },
                            outcome.summary
                        );
                        merged.extend(outcome.report);
                    }
                    // On "all", inapplicable experiments are reported and
                    // skipped; asking for one by name propagates the error.
                    Err(Error::Unsupported(why)) | Err(Error::Config(why))
                        if experiment == "all" =>
                    {
                        println!("{name}: SKIP -- {why}");
                    }
                    Err(e) => return Err(e),
                }
            }
            if ran == 0 {
                return Err(Error::config("no experiment was applicable to this config"));
            }
            if let Some(path) = out {
                merged.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(all_passed)
        }
        Cmd::Sweep { config, seed, out } => {
            let cfg = Config::from_path(&config)?;
            let outcome = harness::run_experiment("epsilon-sweep", &cfg, seed)?;
            for row in outcome.report.rows() {
                println!("{}  gap = {:.6e}  (ci half-width {:.2e})", row.param, row.value, row.ci_high - row.value);
            }
            println!(
                "epsilon-sweep: {} -- {}",
                if outcome.passed { "PASS" } else { "FAIL" },
                outcome.summary
            );
            if let Some(path) = out {
                outcome.report.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(outcome.passed)
        }
        Cmd::Report { input } => {
            let report = Report::read_csv(&input)?;
            let mut by_experiment: Vec<(String, usize, f64, f64)> = Vec::new();
            for row in report.rows() {
                match by_experiment.iter_mut().find(|e| e.0 == row.experiment) {
                    Some(entry) => {
                        entry.1 += 1;
                        entry.2 = entry.2.min(row.value);
                        entry.3 = entry.3.max(row.value);
                    }
                    None => by_experiment.push((
                        row.experiment.clone(),
                        1,
                        row.value,
                        row.value,
                    )),
                }
            }
            println!("{} rows", report.rows().len());
            for (name, count, lo, hi) in by_experiment {
                println!("{name:<18} {count:>5} rows   values in [{lo:.6e}, {hi:.6e}]");
            }
            Ok(true)
        }
    }
}
