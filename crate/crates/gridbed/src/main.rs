use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridbed::{load_scenario, read_scenario_source, report_from_trace, run_scenario, write_outputs, CliError};

const OUT_ENV: &str = "GRIDBED_OUT";
const DEFAULT_OUT: &str = "gridbed-out";

/// Smart-grid testbed simulator.
#[derive(Parser)]
#[command(name = "gridbed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario without running it.
    Validate(ScenarioArgs),
    /// Run a scenario and write trace, report and CSV extracts.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory (GRIDBED_OUT takes precedence).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the report from a trace file.
    Report {
        trace: PathBuf,
        /// Output directory (GRIDBED_OUT takes precedence); defaults to the trace's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or bundled:<name>.
    scenario: String,
    /// Dotted-path override, e.g. drm.threshold_kw=33. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

fn out_dir(flag: Option<PathBuf>, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).or(flag).unwrap_or_else(fallback)
}

fn load(args: &ScenarioArgs) -> Result<gridbed::scenario::ScenarioSpec, CliError> {
    let text = read_scenario_source(&args.scenario)?;
    load_scenario(&text, &args.scenario, &args.set, args.seed)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(args) => {
            let spec = load(&args)?;
            println!("ok: {} ({} units, horizon {} ms)", spec.name, spec.units.len(), spec.horizon_ms);
        }
        Command::Run { scenario, out } => {
            let spec = load(&scenario)?;
            let art = run_scenario(&spec)?;
            let dir =
                out_dir(out, || spec.output.dir.clone().map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from));
            let files = write_outputs(&dir, &spec.output, Some(&art.trace), &art.report)?;
            println!("trace sha256 {}", art.report.trace_sha256);
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Report { trace, out } => {
            let raw = std::fs::read(&trace).map_err(|source| CliError::Io { path: trace.clone(), source })?;
            let report = report_from_trace(&raw)?;
            let dir = out_dir(out, || trace.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            let spec = gridbed::tracefile::parse_trace(std::str::from_utf8(&raw).unwrap_or_default())?.scenario;
            for f in write_outputs(&dir, &spec.output, None, &report)? {
                println!("wrote {}", f.display());
            }
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
