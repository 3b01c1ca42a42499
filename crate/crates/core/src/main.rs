use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agpr_gad::experiment::{emit_table, run_experiment, ExperimentConfig, Mode, Overrides};
use agpr_gad::problems::{oracle_critical_points, Problem};
use agpr_gad::Error;

#[derive(Parser)]
#[command(name = "agpr-gad", version, about = "Surrogate-accelerated saddle-point search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a key = value config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// reference | agpr
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Summarise report files into a CSV table.
    Table {
        reports: Vec<PathBuf>,
        #[arg(short, long, default_value = "table.csv")]
        output: PathBuf,
    },
    /// List the critical points of a benchmark found by grid-seeded Newton.
    Oracle {
        problem: String,
        #[arg(long, default_value_t = 40)]
        grid: usize,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("expected reference or agpr, got {s:?}"))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
            mode,
        } => {
            let overrides = Overrides {
                seed,
                output_dir,
                mode,
            };
            let cfg = ExperimentConfig::from_file(&config, &overrides)?;
            let out = run_experiment(&cfg)?;
            let r = &out.result;
            println!(
                "{}: x_sp = {:?}, cost = {}, updates = {}, converged = {}",
                out.dir.display(),
                r.x_sp.as_slice(),
                r.cost,
                r.updates,
                r.converged
            );
            Ok(if r.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Table { reports, output } => {
            let summary = emit_table(&reports, &output)?;
            for (path, reason) in &summary.skipped {
                eprintln!("warning: skipped {}: {reason}", path.display());
            }
            println!("{} rows written to {}", summary.rows.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { problem, grid } => {
            let p = Problem::by_name(&problem)
                .ok_or_else(|| Error::Config(vec![format!("problem: unknown {problem:?}")]))?;
            let points = oracle_critical_points(&p, grid);
            println!("x,index");
            for cp in points {
                let coords: Vec<String> = cp.point.iter().map(|c| format!("{c:.6}")).collect();
                println!("\"({})\",{}", coords.join(", "), cp.index);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Error::Config(errs)) => {
            eprintln!("error: invalid configuration");
            for e in errs {
                eprintln!("  {e}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
