use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voltsense::harness::{
    compare_runs, generate_dataset, run_scenario, ControlMode, HarnessError, RunOutcome, ScenarioConfig,
};

const DEFAULT_SCENARIO: &str = include_str!("../data/scenarios/feeder18_robust.toml");

#[derive(Parser)]
#[command(name = "voltsense", version, about = "Measurement-based voltage sensitivity estimation and robust PV control")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario TOML; the bundled 18-bus scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["0.2", "0.5", "1.0", "1", "none"])]
    it_class: Option<String>,
    #[arg(long, global = true, value_parser = ["ls", "rls-f", "rls-ct", "rls-sf", "rls-df"])]
    estimator: Option<String>,
    #[arg(long, global = true, value_parser = ["off", "nonrobust", "robust", "model-based"])]
    mode: Option<String>,
    /// Budget of uncertainty for every constrained node.
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Use the literal coverage penalty in CWC.
    #[arg(long, global = true)]
    cwc_literal: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write input series and an open-loop noisy measurement dataset.
    GenData,
    /// Open-loop estimation benchmark.
    Estimate,
    /// Closed-loop control run.
    Control,
    /// Full pipeline as configured.
    Run,
    /// Compare finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match &g.config {
        Some(p) => ScenarioConfig::load_unchecked(p)?,
        None => ScenarioConfig::parse_toml_str(DEFAULT_SCENARIO)?,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(c) = &g.it_class {
        cfg.measurement.it_class = c.clone();
    }
    if let Some(e) = &g.estimator {
        cfg.estimation.variants = vec![e.clone()];
        cfg.control.estimator = None;
    }
    if let Some(m) = &g.mode {
        cfg.control.mode = ControlMode::parse(m)?;
    }
    if let Some(o) = g.omega {
        cfg.control.omega = Some(o);
    }
    if g.cwc_literal {
        cfg.metrics.cwc_literal = true;
    }
    if let Some(o) = &g.out {
        cfg.output.dir = Some(o.clone());
    }
    Ok(cfg)
}

fn checked(cfg: ScenarioConfig) -> Result<ScenarioConfig, HarnessError> {
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(out: &RunOutcome) {
    let r = &out.report;
    println!("mode {} | IT class {} | seeds {:?}", r.mode, r.it_class, r.seeds);
    for (variant, rep) in &r.estimation {
        if let Some(m) = &rep.mean {
            println!(
                "  {variant:7} rmse {:.4}  picp {:.3}  pinaw {:.4}  cwc {:.4}  (row rmse {:.4})",
                m.rmse, m.picp, m.pinaw, m.cwc, m.rmse_row
            );
        }
    }
    let c = &r.control;
    println!(
        "  max V {:.4} p.u. | violation steps {} | curtailed {:.2} kWh of {:.2} kWh | fallbacks {}",
        c.max_voltage, c.violation_steps, c.curtailed_kwh, c.available_kwh, r.fallback_steps
    );
    if let Some(d) = &out.out_dir {
        println!("  outputs in {}", d.display());
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Report { runs } => {
            let cmp = compare_runs(&runs)?;
            print!("{}", cmp.render());
            if let Some(dir) = &cli.global.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("comparison.csv"), cmp.render())?;
                std::fs::write(
                    dir.join("comparison.json"),
                    serde_json::to_string_pretty(&cmp).expect("comparison serializes"),
                )?;
            }
            Ok(())
        }
        Command::GenData => {
            let cfg = checked(load_config(&cli.global)?)?;
            let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("dataset"));
            for name in generate_dataset(&cfg, &dir)? {
                println!("{}", dir.join(name).display());
            }
            Ok(())
        }
        Command::Estimate => {
            let mut cfg = load_config(&cli.global)?;
            cfg.control.mode = ControlMode::Off;
            summarize(&run_scenario(&checked(cfg)?)?);
            Ok(())
        }
        Command::Control => {
            let mut cfg = load_config(&cli.global)?;
            if cfg.control.mode == ControlMode::Off {
                cfg.control.mode = ControlMode::Robust;
            }
            summarize(&run_scenario(&checked(cfg)?)?);
            Ok(())
        }
        Command::Run => {
            let cfg = checked(load_config(&cli.global)?)?;
            summarize(&run_scenario(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
