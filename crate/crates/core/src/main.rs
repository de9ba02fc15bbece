use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedldr::federation::StrategyKind;
use fedldr::harness::{self, ExperimentConfig, SweepParam, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
use fedldr::{Error, Result};

/// Federated graph forecasting simulator.
#[derive(Parser)]
#[command(name = "fedldr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run one experiment per value of a parameter.
    Sweep {
        config: PathBuf,
        /// `local_epochs` or `clients`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Run several strategies on the same data and seed.
    Compare {
        config: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long)]
        strategies: String,
    },
    /// Write synthetic readings as CSV.
    GenData {
        /// Spec file, or inline `key=value,key=value`.
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck { config: PathBuf },
}

fn list<T, E: std::fmt::Display>(
    raw: &str,
    field: &str,
    parse: impl Fn(&str) -> std::result::Result<T, E>,
) -> Result<Vec<T>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(s.trim()).map_err(|e| Error::Config(format!("{field}: invalid value `{s}` ({e})"))))
        .collect()
}

fn report_children(results: &[harness::ChildResult]) {
    for r in results {
        match &r.outcome {
            Ok((m, _, _)) => println!("{}: mae {:.4} rmse {:.4} mape {:.4} corr {:.4}", r.label, m.mae, m.rmse, m.mape, m.corr),
            Err(e) => eprintln!("{}: failed: {e}", r.label),
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = harness::run_experiment(&cfg)?;
            if let (Some(round), Some(m)) = (out.run.best_round, out.final_test()) {
                println!(
                    "best round {round}: test mae {:.4} rmse {:.4} mape {:.4} corr {:.4}",
                    m.mae, m.rmse, m.mape, m.corr
                );
            }
            println!("artifacts in {}", out.output_dir.display());
            Ok(true)
        }
        Command::Sweep { config, param, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param: SweepParam = param.parse()?;
            let values = list(&values, "values", |s| s.parse::<usize>())?;
            let results = harness::sweep(&cfg, param, &values)?;
            report_children(&results);
            Ok(true)
        }
        Command::Compare { config, strategies } => {
            let cfg = ExperimentConfig::load(&config)?;
            let strategies = list(&strategies, "strategies", |s| s.parse::<StrategyKind>())?;
            let results = harness::compare_strategies(&cfg, &strategies)?;
            report_children(&results);
            Ok(true)
        }
        Command::GenData { spec, out } => {
            let spec = harness::parse_synthetic_spec(&spec)?;
            let ds = harness::gen_data(&spec, &out)?;
            println!(
                "wrote {} steps × {} nodes to {} (graph in {})",
                ds.steps(),
                ds.nodes(),
                out.display(),
                harness::adjacency_path(&out).display()
            );
            Ok(true)
        }
        Command::GradCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let err = harness::grad_check(&cfg)?;
            let ok = err < GRAD_CHECK_TOLERANCE;
            println!(
                "max relative error {err:.3e} (h = {GRAD_CHECK_STEP:e}, tolerance {GRAD_CHECK_TOLERANCE:e}): {}",
                if ok { "ok" } else { "FAILED" }
            );
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
