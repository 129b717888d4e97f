use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obo_harness::{compare_solvers, run_experiment, run_probes, scaling_study, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "obo", about = "Online bilevel optimization experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every horizon of a config and write traces, summary and plots.
    Run {
        config: PathBuf,
        /// Dotted-path override, e.g. `solver.tau=1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regret and inner-iteration growth over several horizons.
    Scaling {
        config: PathBuf,
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs on the same problem and tabulate them side by side.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Penalty-gap, Lipschitz and finite-difference probes.
    Probes {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, set, out } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            let outcomes = run_experiment(&cfg, out.as_deref())?;
            for o in &outcomes {
                let s = &o.summary;
                println!(
                    "{}: reg_F={:.6} reg_L={} I_T={} grad={} hvp={}{}",
                    s.run_id,
                    s.reg_f,
                    fmt_opt(s.reg_l),
                    s.i_t,
                    s.grad_queries,
                    s.hvp_queries,
                    if o.failed() { " [aborted]" } else { "" }
                );
            }
        }
        Command::Scaling { config, horizons, set, out } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            let report = scaling_study(&cfg, &horizons, out.as_deref())?;
            println!("{:>8} {:>14} {:>12} {:>14} {:>12}", "T", "reg_F", "reg_F/T", "reg_F/sqrt(T)", "I_T");
            for r in &report.rows {
                println!(
                    "{:>8} {:>14.6} {:>12.6} {:>14.6} {:>12}",
                    r.t, r.reg_f, r.reg_f_over_t, r.reg_f_over_sqrt_t, r.i_t
                );
            }
            println!("reg_F exponent: {}", fmt_opt(report.reg_f_exponent));
            println!("I_T exponent:   {}", fmt_opt(report.i_t_exponent));
        }
        Command::Compare { configs, set, out } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p, &set))
                .collect::<Result<Vec<_>, _>>()?;
            for s in compare_solvers(&cfgs, out.as_deref())? {
                println!(
                    "{}: reg_F={:.6} grad={} hvp={}",
                    s.run_id, s.reg_f, s.grad_queries, s.hvp_queries
                );
            }
        }
        Command::Probes { config, set, out } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            let r = run_probes(&cfg, out.as_deref())?;
            println!("problem {}", r.problem);
            println!("y-gap bound excess (<= 0 holds): {:e}", r.gaps.y_gap_bound_excess);
            println!("slopes vs lambda: y {} value {} grad {}",
                fmt_opt(r.gaps.y_gap_slope), fmt_opt(r.gaps.value_gap_slope), fmt_opt(r.gaps.grad_gap_slope));
            println!("y* Lipschitz: max ratio {:.6} vs kappa {:.6}", r.lipschitz.max_ratio, r.lipschitz.kappa_g);
            println!("finite differences: worst relative error {:e} over {} points", r.fd.worst.max(), r.fd.points);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
