//! `gridprice` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 non-convergence
//! (including failed `verify` properties and `compare` deviations above tolerance).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridprice::io::{self, Format};
use gridprice::runner::{self, RunOptions};
use gridprice::simulator::EquilibriumOptions;
use gridprice::welfare::{barrier_optimum, oracle_optimum, OracleOptions};
use gridprice::{Error, ErrorKind, Scenario, Variant};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "gridprice",
    version,
    about = "Market controllers on power networks: simulate, verify, compare"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write trajectory and report files.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Trajectory file format.
        #[arg(long, default_value = "csv", value_parser = parse_format)]
        format: Format,
    },
    /// Locate the closed-loop equilibrium and report its security and Hessian checks.
    Equilibrium {
        scenario: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Largest accepted closed-loop rate at the equilibrium.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[command(flatten)]
        out: OptionalOut,
    },
    /// Solve the welfare problem with the independent optimizer.
    Oracle {
        scenario: PathBuf,
        #[command(flatten)]
        out: OptionalOut,
    },
    /// Run the scenario and check every applicable closed-loop property.
    Verify {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OptionalOut,
    },
    /// Run two variants from consistent initial states and report their deviation.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant_a: Variant,
        #[arg(long, value_parser = parse_variant)]
        variant_b: Variant,
        #[command(flatten)]
        run: RunArgs,
        /// Largest accepted deviation.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[command(flatten)]
        out: OptionalOut,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Override the controller variant.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Seed for the initial perturbation draw.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            variant: self.variant,
            dt: self.dt,
            t_end: self.t_end,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "GRIDPRICE_OUT_DIR", default_value = "gridprice-out")]
    out: PathBuf,
}

#[derive(Args)]
struct OptionalOut {
    /// Also write the result as JSON into this directory.
    #[arg(long, env = "GRIDPRICE_OUT_DIR")]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant `{s}`, expected one of: {}", names.join(", "))
    })
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse::<Format>().map_err(|e| e.to_string())
}

/// Result of a command: JSON for stdout and whether its checks passed.
struct Outcome {
    summary: serde_json::Value,
    passed: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(outcome) => {
            let text = serde_json::to_string_pretty(&outcome.summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation | ErrorKind::Io => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::NonConvergence => 3,
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let kind = match e.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Numerical => "numerical",
        ErrorKind::NonConvergence => "non-convergence",
        ErrorKind::Io => "io",
    };
    let fields: Vec<_> = match e {
        Error::Invalid(list) => list.iter().map(|v| json!({ "path": v.path, "rule": v.rule })).collect(),
        _ => Vec::new(),
    };
    json!({ "error": { "kind": kind, "message": e.to_string(), "fields": fields } })
}

fn write_optional<T: Serialize>(out: &OptionalOut, name: &str, value: &T) -> Result<(), Error> {
    if let Some(dir) = &out.out {
        std::fs::create_dir_all(dir)?;
        io::write_json(dir.join(name), value)?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<Outcome, Error> {
    match command {
        Command::Simulate {
            scenario,
            run,
            out,
            format,
        } => simulate(&scenario, &run.options(), &out.out, format),
        Command::Equilibrium {
            scenario,
            variant,
            tolerance,
            out,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(v) = variant {
                s = s.with_variant(v);
            }
            let cl = s.build_closed_loop()?;
            let opts = EquilibriumOptions {
                acceptance: tolerance,
                ..Default::default()
            };
            let eq = cl.find_equilibrium(None, &opts)?;
            write_optional(&out, "equilibrium.json", &eq)?;
            let passed = eq.secure && eq.hessian_min_eigenvalue > 0.0;
            Ok(Outcome {
                summary: serde_json::to_value(&eq).map_err(json_error)?,
                passed,
            })
        }
        Command::Oracle { scenario, out } => {
            let s = Scenario::load(&scenario)?;
            let problem = s.welfare_problem()?;
            let constrained = oracle_optimum(&problem, &OracleOptions::default())?;
            let residual = problem.kkt_residual(&constrained.point)?;
            let barrier = match problem.nu() {
                Some(nu) => Some(barrier_optimum(&problem, nu)?),
                None => None,
            };
            let value = json!({
                "optimum": constrained,
                "kkt_residual": residual.norms(),
                "barrier_optimum": barrier,
            });
            write_optional(&out, "oracle.json", &value)?;
            Ok(Outcome {
                summary: value,
                passed: true,
            })
        }
        Command::Verify { scenario, run, out } => {
            let s = Scenario::load(&scenario)?;
            let report = runner::verify(&s, &run.options())?;
            write_optional(&out, "verify.json", &report)?;
            Ok(Outcome {
                passed: report.passed,
                summary: serde_json::to_value(&report).map_err(json_error)?,
            })
        }
        Command::Compare {
            scenario,
            variant_a,
            variant_b,
            run,
            tolerance,
            out,
        } => {
            let s = Scenario::load(&scenario)?;
            let report = runner::compare(&s, variant_a, variant_b, &run.options(), tolerance)?;
            write_optional(&out, "compare.json", &report)?;
            Ok(Outcome {
                passed: report.passed,
                summary: serde_json::to_value(&report).map_err(json_error)?,
            })
        }
    }
}

fn simulate(path: &Path, options: &RunOptions, out: &Path, format: Format) -> Result<Outcome, Error> {
    let s = Scenario::load(path)?;
    let r = runner::run(&s, options)?;
    std::fs::create_dir_all(out)?;
    let trajectory = out.join(format!("trajectory.{}", format.extension()));
    io::write_trajectory(&trajectory, format, &r.closed_loop, &r.trajectory, &r.diagnostics)?;
    io::write_json(out.join("report.json"), &r.diagnostics)?;
    let summary = json!({
        "trajectory": trajectory,
        "report": out.join("report.json"),
        "report_summary": r.diagnostics,
    });
    Ok(Outcome { summary, passed: true })
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}
