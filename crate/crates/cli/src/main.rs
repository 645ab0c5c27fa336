use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evmpc_core::model::price_to_per_kwh;
use evmpc_core::oracle::{self, OracleCap};
use evmpc_core::scenario::{parse_unvalidated, Scenario};
use evmpc_core::trace::{write_trace, SimulationTrace};
use evmpc_core::{mpc, Error};

const EXIT_INVALID: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

/// Decentralized price-based EV charging under receding-horizon control.
#[derive(Debug, Parser)]
#[command(name = "evmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the price-coordinated controller over the horizon and write the traces.
    Run(RunArgs),
    /// Run the charge-at-full-power baseline and write the traces.
    Uncontrolled(RunArgs),
    /// Compare one cleared market against the centralized optimum on a truncated instance.
    Verify(VerifyArgs),
    /// Check a scenario against every model invariant.
    Validate(ScenarioArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    scenario: PathBuf,
    /// Seed for the session generator.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Override a scenario value by dotted path, e.g. `solver.gamma=0.01` or `evs.0.energy=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Directory receiving slots.csv, evs.csv and summary.csv.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Maximum window length, in slots, handed to the centralized solver.
    #[arg(long, value_name = "N", default_value_t = OracleCap::default().slots)]
    oracle_cap: usize,
}

fn parse_key_value(raw: &str) -> Result<(String, String), String> {
    match raw.split_once('=') {
        Some((key, value)) if !key.trim().is_empty() => Ok((key.trim().to_string(), value.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{raw}`")),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_INVALID,
    }
}

fn with_path(err: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
}

fn load(args: &ScenarioArgs) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(&args.scenario).map_err(|e| with_path(e, &args.scenario))?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    parse_unvalidated(&text, &overrides)
}

fn simulate(args: &RunArgs, controlled: bool) -> Result<u8, Error> {
    let scenario = load(&args.scenario)?;
    scenario.validate()?;
    let trace = if controlled {
        mpc::run(&scenario)?
    } else {
        mpc::simulate_uncontrolled(&scenario)?
    };
    write_trace(&trace, &args.out).map_err(|e| match e {
        Error::Io(io) => with_path(io, &args.out),
        other => other,
    })?;
    report_run(&trace, &args.out);
    if trace.converged() {
        Ok(0)
    } else {
        eprintln!(
            "error: {} of {} slots did not clear within the iteration cap",
            trace.summary.nonconverged_slots,
            trace.records.len()
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn report_run(trace: &SimulationTrace, out: &Path) {
    let s = &trace.summary;
    println!("slots             {}", trace.records.len());
    println!("sessions          {}", trace.outcomes.len());
    println!("price mean        {:.4} cent/kWh", s.price_mean);
    println!("price stdev       {:.4} cent/kWh", s.price_stdev);
    println!("peak demand       {:.4} kW", s.peak_demand);
    println!("energy delivered  {:.4} kWh", s.total_energy);
    println!("unmet energy      {:.6} kWh", s.unmet_energy);
    println!("max iterations    {}", s.max_iterations);
    println!("traces written to {}", out.display());
}

fn verify(args: &VerifyArgs) -> Result<u8, Error> {
    let scenario = load(&args.scenario)?;
    let cap = OracleCap {
        slots: args.oracle_cap,
        ..OracleCap::default()
    };
    let report = oracle::verify(&scenario, cap)?;
    let hours = scenario.grid.slot_hours();
    println!("instance                {} EVs, {} slots", report.evs, report.slots);
    println!("oracle welfare          {:.6}", report.oracle_welfare);
    println!("decentralized welfare   {:.6}", report.decentralized_welfare);
    println!("welfare gap             {:.4}%", 100.0 * report.welfare_gap);
    println!("max balance residual    {:.6} kW", report.max_residual);
    println!("iterations              {}", report.iterations);
    println!(
        "first-slot price        {:.4} cent/kWh",
        price_to_per_kwh(report.first_price, hours)
    );
    if report.converged {
        Ok(0)
    } else {
        eprintln!("error: price loop stopped at the iteration cap");
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn validate(args: &ScenarioArgs) -> Result<u8, Error> {
    let scenario = load(args)?;
    let report = scenario.report();
    if report.is_ok() {
        println!(
            "{}: ok ({} sessions)",
            args.scenario.display(),
            scenario.sessions().len()
        );
        return Ok(0);
    }
    for violation in &report.violations {
        println!("{violation}");
    }
    eprintln!(
        "error: {} has {} invariant violation(s)",
        args.scenario.display(),
        report.violations.len()
    );
    Ok(EXIT_INVALID)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => simulate(args, true),
        Command::Uncontrolled(args) => simulate(args, false),
        Command::Verify(args) => verify(args),
        Command::Validate(args) => validate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
