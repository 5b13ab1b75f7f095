use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use coxq_harness::{exit_code, run, ExperimentConfig, HarnessError, Kind};

#[derive(Parser, Debug)]
#[command(
    name = "coxq",
    version,
    about = "Infinite-server queues in a resampled mixed-Poisson environment"
)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Kind,
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// output directory; defaults to the config's `output`, then `coxq-out`
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
}

fn execute(cli: &Cli) -> Result<i32, HarnessError> {
    let config = ExperimentConfig::load(&cli.config)?.with_overrides(cli.seed, cli.replications)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("coxq-out"));
    let output = run(cli.subcommand, &config)?;
    output.write_to(&out)?;
    let report = &output.report;
    for c in &report.criteria {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} {}: {} criteria, {} failed, output in {}",
        cli.subcommand.to_possible_value().expect("named").get_name(),
        if report.passed { "passed" } else { "failed" },
        report.criteria.len(),
        report.failures().count(),
        out.display()
    );
    Ok(exit_code(report))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
