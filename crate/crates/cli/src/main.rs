use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use cuckoo_core::harness::check_trace;
use cuckoo_core::{Expect, Outcome, Report, Scenario, Trace};
use rayon::prelude::*;

/// Runs a simulation scenario, checks the resulting trace and prints the
/// property report.
///
/// Exit status: 0 pass, 2 property FAIL, 3 usage/parse/validation error,
/// 4 collection violates the three-set cover condition, 5 run incomplete
/// after the quiet extension, 6 replacement search inconclusive.
#[derive(Parser, Debug)]
#[command(name = "cuckoo-sim", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(required_unless_present = "trace_in")]
    scenario: Option<PathBuf>,

    /// Check an existing JSONL trace instead of running a scenario.
    #[arg(long, conflicts_with_all = ["scenario", "sweep", "seed", "trace_out"])]
    trace_in: Option<PathBuf>,

    /// Override the scenario seed (first seed with --sweep).
    #[arg(long)]
    seed: Option<u64>,

    /// Write the trace here. With --sweep this is a directory.
    #[arg(long)]
    trace_out: Option<PathBuf>,

    /// Write the report as JSON here (one JSON array with --sweep).
    #[arg(long)]
    report_out: Option<PathBuf>,

    /// Event budget for the adversarial phase
    #[arg(long)]
    max_events: Option<u64>,

    /// Extra events allowed after the adversary goes idle
    #[arg(long)]
    quiet_extension: Option<u64>,

    /// Comma-separated property ids to report (default: all).
    #[arg(long, value_delimiter = ',')]
    check: Vec<String>,

    /// Run N consecutive seeds in parallel and print one line per seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    sweep: Option<u64>,

    /// Print only the summary line.
    #[arg(long, short)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Expect::Invalid.exit_code() as u8 } else { 0 });
        }
    };
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.1);
            ExitCode::from(e.0.exit_code() as u8)
        }
    }
}

type Failure = (Expect, String);

fn invalid(e: impl ToString) -> Failure {
    (Expect::Invalid, e.to_string())
}

fn run(args: &Args) -> Result<i32, Failure> {
    for id in &args.check {
        if !cuckoo_core::harness::PROPERTY_IDS.iter().any(|p| p.eq_ignore_ascii_case(id)) {
            return Err(invalid(format!("unknown property id `{id}`")));
        }
    }
    if let Some(path) = &args.trace_in {
        return check_existing(args, path);
    }
    let path = args.scenario.as_ref().expect("clap enforces a scenario");
    let mut sc = Scenario::load(path).map_err(invalid)?;
    if let Some(s) = args.seed {
        sc.seed = s;
    }
    if let Some(m) = args.max_events {
        sc.budget.max_events = m;
    }
    if let Some(q) = args.quiet_extension {
        sc.budget.quiet_extension = q;
    }
    sc.validate().map_err(|e| (Expect::of_error(&e), e.to_string()))?;
    match args.sweep {
        Some(count) => sweep(args, &sc, count),
        None => single(args, &sc),
    }
}

fn run_one(sc: &Scenario, check: &[String]) -> Result<Outcome, Failure> {
    let mut out = sc.run().map_err(|e| (Expect::of_error(&e), e.to_string()))?;
    if !check.is_empty() {
        out.report.retain(check);
    }
    Ok(out)
}

fn single(args: &Args, sc: &Scenario) -> Result<i32, Failure> {
    let out = run_one(sc, &args.check)?;
    if let Some(p) = &args.trace_out {
        write_trace(p, &out.trace)?;
    }
    if let Some(p) = &args.report_out {
        write_json(p, &out.report)?;
    }
    if !args.quiet {
        print!("{}", out.report);
    }
    let v = out.verdict();
    println!("{}: {v} (exit {})", sc.name, v.exit_code());
    Ok(v.exit_code())
}

fn sweep(args: &Args, sc: &Scenario, count: u64) -> Result<i32, Failure> {
    if let Some(dir) = &args.trace_out {
        std::fs::create_dir_all(dir).map_err(invalid)?;
    }
    let seeds: Vec<u64> = (0..count).map(|i| sc.seed.wrapping_add(i)).collect();
    let results: Vec<Result<Outcome, Failure>> = seeds
        .par_iter()
        .map(|s| {
            let out = run_one(&sc.with_seed(*s), &args.check)?;
            if let Some(dir) = &args.trace_out {
                write_trace(&dir.join(format!("{}.{s}.jsonl", sc.name)), &out.trace)?;
            }
            Ok(out)
        })
        .collect();
    let mut worst = 0;
    let mut reports: Vec<&Report> = Vec::new();
    for (seed, r) in seeds.iter().zip(&results) {
        let out = r.as_ref().map_err(Clone::clone)?;
        let v = out.verdict();
        let failed: Vec<&str> = out.report.failures().map(|p| p.id.as_str()).collect();
        if failed.is_empty() {
            println!("seed {seed}: {v}");
        } else {
            println!("seed {seed}: {v} [{}]", failed.join(","));
        }
        worst = worst.max(severity(v));
        reports.push(&out.report);
    }
    if let Some(p) = &args.report_out {
        write_json(p, &reports)?;
    }
    let passed = results.iter().filter(|r| r.as_ref().is_ok_and(|o| o.verdict() == Expect::Pass)).count();
    println!("{}: {passed}/{count} seeds passed", sc.name);
    Ok(worst_code(worst))
}

/// Orders outcomes so a sweep reports its worst seed.
fn severity(v: Expect) -> u8 {
    match v {
        Expect::Pass => 0,
        Expect::Inconclusive => 1,
        Expect::Incomplete => 2,
        Expect::Fail => 3,
        Expect::Invalid | Expect::PredicateViolation => 4,
    }
}

fn worst_code(s: u8) -> i32 {
    match s {
        0 => Expect::Pass,
        1 => Expect::Inconclusive,
        2 => Expect::Incomplete,
        3 => Expect::Fail,
        _ => Expect::Invalid,
    }
    .exit_code()
}

fn check_existing(args: &Args, path: &Path) -> Result<i32, Failure> {
    let f = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let trace = Trace::read_jsonl(BufReader::new(f)).map_err(invalid)?;
    let mut report = check_trace(&trace).map_err(invalid)?;
    if !args.check.is_empty() {
        report.retain(&args.check);
    }
    if let Some(p) = &args.report_out {
        write_json(p, &report)?;
    }
    if !args.quiet {
        print!("{report}");
    }
    let v = Expect::of_report(&report);
    println!("{}: {v} (exit {})", report.name, v.exit_code());
    Ok(v.exit_code())
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    trace.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(invalid)
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(invalid)?;
    writeln!(w).and_then(|_| w.flush()).map_err(invalid)
}
