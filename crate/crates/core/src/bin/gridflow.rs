use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridflow::controller::ControllerKind;
use gridflow::dynamics::TurbineModelKind;
use gridflow::runner::{self, RunError};
use gridflow::scenario::{load_scenario, ScenarioError};

/// Frequency-control and congestion-management simulator.
#[derive(Parser)]
#[command(name = "gridflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    scenario: PathBuf,
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Scenario overrides, e.g. --set controller.kind=duc --set horizon=100
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Time-domain run; writes one CSV of the recorded series.
    Run(Common),
    /// Closed-loop eigenvalue study; one re,im CSV per variant.
    Eigen {
        #[command(flatten)]
        common: Common,
        /// Variants as kind:turbine, comma separated.
        #[arg(
            long,
            default_value = "uc:first-order,uc:second-order,duc:second-order"
        )]
        variants: String,
    },
    /// Emulator-mismatch robustness sweep (decoupled controller).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Emulator time-constant multipliers.
        #[arg(long, default_value = "0.5,1,2", value_delimiter = ',')]
        factors: Vec<f64>,
    },
    /// Run to the horizon and compare against the dispatch optimum.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Match tolerance in pu.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn classify(e: &RunError) -> ExitCode {
    match e {
        RunError::Dynamics(_) => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn stem(path: &PathBuf) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Run(common) => {
            let scenario = load_scenario(&common.scenario, &common.set)?;
            let result = runner::run_scenario(&scenario)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join(format!("{}.csv", stem(&common.scenario)));
            runner::write_run_csv(&path, &result)?;
            println!(
                "run: {} samples of {} series -> {}",
                result.times.len(),
                result.series.len(),
                path.display()
            );
            println!(
                "settled: {} (settling time {}), max|omega| at end {:.3e}",
                result.settled,
                result
                    .settling_time
                    .map(|t| format!("{t:.2} s"))
                    .unwrap_or_else(|| "-".into()),
                result.max_abs_omega_end
            );
            for (label, rep) in &result.oscillation {
                println!(
                    "oscillation {label}: {} (ratio {:.3}, amplitude {:.4e})",
                    rep.oscillating, rep.decay_ratio, rep.amplitude
                );
            }
            if let Some(err) = &result.error {
                eprintln!("run aborted: {err}");
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eigen { common, variants } => {
            let scenario = load_scenario(&common.scenario, &common.set)?;
            let variants = parse_variants(&variants)?;
            let reports = runner::run_eigen_study(&scenario, &variants)?;
            std::fs::create_dir_all(&common.out)?;
            let mut failures = 0;
            println!("{:<6} {:<13} {:>14}  {}", "kind", "turbine", "abscissa", "class");
            for var in &reports {
                match &var.report {
                    Ok(rep) => {
                        let path = common.out.join(format!(
                            "{}.{}.{}.eig.csv",
                            stem(&common.scenario),
                            var.kind.as_str(),
                            var.turbine.as_str()
                        ));
                        runner::write_eigen_csv(&path, rep)?;
                        println!(
                            "{:<6} {:<13} {:>+14.6e}  {}",
                            var.kind.as_str(),
                            var.turbine.as_str(),
                            rep.spectral_abscissa,
                            rep.classification.as_str()
                        );
                    }
                    Err(e) => {
                        failures += 1;
                        println!("{:<6} {:<13} failed: {e}", var.kind.as_str(), var.turbine.as_str());
                    }
                }
            }
            Ok(if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Sweep { common, factors } => {
            let scenario = load_scenario(&common.scenario, &common.set)?;
            let points = runner::run_robustness_sweep(&scenario, &factors)?;
            println!(
                "{:>7} {:>8} {:>12} {:>10} {:>12}",
                "factor", "settled", "settle[s]", "overshoot", "oscillating"
            );
            let mut failures = 0;
            for p in &points {
                if let Some(err) = &p.error {
                    failures += 1;
                    println!("{:>7} failed: {err}", p.factor);
                } else {
                    println!(
                        "{:>7} {:>8} {:>12.2} {:>10.4} {:>12}",
                        p.factor, p.settled, p.settling_time, p.overshoot, p.oscillating
                    );
                }
            }
            Ok(if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Verify { common, tolerance } => {
            let scenario = load_scenario(&common.scenario, &common.set)?;
            let outcome = runner::verify_scenario(&scenario, tolerance)?;
            println!("dispatch status: {:?}", outcome.solution.status);
            println!(
                "kkt residual {:.3e}, objective {:.6}",
                outcome.solution.kkt_residual, outcome.solution.objective
            );
            let rep = &outcome.report;
            println!(
                "max |p_sim - p_opt| {:.3e}, max |P_sim - P_opt| {:.3e}, max |omega| {:.3e}",
                rep.max_dp, rep.max_dflow, rep.max_omega
            );
            println!(
                "equilibrium match within {:.1e}: {}",
                rep.tolerance,
                if rep.pass { "PASS" } else { "FAIL" }
            );
            if rep.sim_flow_violation > 0.0 {
                println!(
                    "simulated flows violate a line limit by {:.4} pu",
                    rep.sim_flow_violation
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_variants(s: &str) -> Result<Vec<(ControllerKind, TurbineModelKind)>, RunError> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let (kind, turbine) = item.split_once(':').ok_or_else(|| {
            RunError::Scenario(ScenarioError::Invalid(format!(
                "variant `{item}` must look like kind:turbine"
            )))
        })?;
        let kind = match kind {
            "uc" => ControllerKind::Uc,
            "duc" => ControllerKind::Duc,
            "agc" => ControllerKind::Agc,
            "droop" => ControllerKind::Droop,
            other => {
                return Err(RunError::Scenario(ScenarioError::Invalid(format!(
                    "unknown controller kind `{other}`"
                ))))
            }
        };
        let turbine = match turbine {
            "first-order" => TurbineModelKind::FirstOrder,
            "second-order" => TurbineModelKind::SecondOrder,
            other => {
                return Err(RunError::Scenario(ScenarioError::Invalid(format!(
                    "unknown turbine kind `{other}`"
                ))))
            }
        };
        out.push((kind, turbine));
    }
    Ok(out)
}
