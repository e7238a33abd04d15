use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use etfcl_cli::config::{ExperimentConfig, GridSpec};
use etfcl_cli::reports::render_summary;
use etfcl_cli::runner::{ablate_command, report_command, run_command};
use etfcl_cli::verify;

#[derive(Parser)]
#[command(
    name = "etfcl",
    about = "Continual representation learning on fixed equiangular prototypes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment cell over its seed list.
    Run {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Also dump relation matrices of the final model to CSV.
        #[arg(long)]
        dump_relations: bool,
    },
    /// Run an ablation grid over a base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// JSON grid file (explicit cells or a cartesian product).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the built-in verification suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Rebuild the summary table from report files in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Etf,
    Grad,
    Reservoir,
    Metrics,
    All,
}

fn resolve_out(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    match out.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)) {
        Some(dir) => Ok(dir),
        None => bail!("no output directory: pass --out or set output_dir in the config"),
    }
}

fn print_suite(report: &verify::SuiteReport) {
    for line in &report.lines {
        println!("  {line}");
    }
    println!(
        "suite {}: {}",
        report.name,
        if report.pass { "PASS" } else { "FAIL" }
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            dump_relations,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let out = resolve_out(&cfg, out)?;
            let row = run_command(&cfg, &out, seeds.as_deref(), dump_relations)?;
            print!("{}", render_summary(std::slice::from_ref(&row)));
            println!("reports written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            config,
            grid,
            out,
            seeds,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let grid = GridSpec::from_path(&grid)?;
            let out = resolve_out(&cfg, out)?;
            let rows = ablate_command(&cfg, &grid, &out, seeds.as_deref())?;
            print!("{}", render_summary(&rows));
            println!("summary written to {}", out.join("summary.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite } => {
            let mut all_pass = true;
            let reports: Vec<verify::SuiteReport> = match suite {
                Suite::Etf => vec![verify::etf_suite()],
                Suite::Grad => vec![verify::grad_suite(20)],
                Suite::Reservoir => vec![verify::reservoir_suite(10, 1000, 100_000)],
                Suite::Metrics => vec![verify::metrics_suite()],
                Suite::All => vec![
                    verify::etf_suite(),
                    verify::grad_suite(20),
                    verify::reservoir_suite(10, 1000, 100_000),
                    verify::metrics_suite(),
                ],
            };
            for report in &reports {
                print_suite(report);
                all_pass &= report.pass;
            }
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Report { out } => {
            let rows = report_command(&out)?;
            print!("{}", render_summary(&rows));
            Ok(ExitCode::SUCCESS)
        }
    }
}
