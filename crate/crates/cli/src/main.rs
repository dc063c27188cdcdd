use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nsc_cli::report;
use nsc_cli::{preset, run_scenario, RunError, RunOutput, Scenario};
use nsc_core::trace;
use nsc_globalizer::{globalize_file, TransformConfig};

const RUNTIME_ERROR: u8 = 1;
const VALIDATION_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "nsc", version, about = "Network simulation cradle for constrained TCP/IP stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a built-in experiment preset.
    Preset {
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Variants run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Virtualize the globals of a preprocessed C file.
    Globalize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value = "NUM_STACKS")]
        dim: String,
        #[arg(long, default_value = "get_stack_id()")]
        accessor: String,
        #[arg(long, default_value = "global_")]
        prefix: String,
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long)]
        include: Vec<String>,
        #[arg(long = "init-fn", default_value = "globaliser_init_globals")]
        init_fn: String,
    },
    /// Compare two pcap traces after normalization.
    TraceDiff {
        a: PathBuf,
        b: PathBuf,
        /// Address whose packets count as direction A.
        #[arg(long = "endpoint-a")]
        endpoint_a: Option<Ipv4Addr>,
    },
    /// Summarize stats files.
    Report {
        #[arg(required = true)]
        files: Vec<String>,
        /// Also write the per-variant table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

fn runtime(msg: impl ToString) -> Failure {
    Failure { code: RUNTIME_ERROR, msg: msg.to_string() }
}

fn validation(msg: impl ToString) -> Failure {
    Failure { code: VALIDATION_ERROR, msg: msg.to_string() }
}

fn from_run(e: RunError) -> Failure {
    match e {
        RunError::Scenario(_) => validation(e),
        _ => runtime(e),
    }
}

fn summarize(out: &RunOutput, written: &[PathBuf]) {
    print!("{}", out.stats_csv());
    for p in written {
        eprintln!("wrote {}", p.display());
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut s = Scenario::load(scenario).map_err(validation)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    create_dir(out)?;
    let result = run_scenario(&s).map_err(from_run)?;
    let written = result.write(out).map_err(from_run)?;
    summarize(&result, &written);
    Ok(())
}

fn run_preset(name: &str, out: &Path, jobs: usize) -> Result<(), Failure> {
    let scenarios = preset(name).map_err(validation)?;
    create_dir(out)?;
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<RunOutput, RunError>>> = (0..scenarios.len()).map(|_| None).collect();
    for (chunk, slots) in scenarios.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            for (s, slot) in chunk.iter().zip(slots.iter_mut()) {
                scope.spawn(move || *slot = Some(run_scenario(s)));
            }
        });
    }
    for (s, r) in scenarios.iter().zip(results) {
        let result = r.expect("every variant ran").map_err(from_run)?;
        let file = out.join(format!("{}.scenario", s.name));
        std::fs::write(&file, s.to_string()).map_err(|e| runtime(format!("cannot write {}: {e}", file.display())))?;
        let mut written = vec![file];
        written.extend(result.write(out).map_err(from_run)?);
        summarize(&result, &written);
    }
    Ok(())
}

fn globalize(input: &Path, output: &Path, config: TransformConfig) -> Result<(), Failure> {
    match globalize_file(input, output, &config) {
        Ok(report) => {
            print!("{report}");
            Ok(())
        }
        Err(e) if e.is_diagnostic() => Err(validation(e)),
        Err(e) => Err(runtime(e)),
    }
}

fn trace_diff(a: &Path, b: &Path, endpoint_a: Option<Ipv4Addr>) -> Result<bool, Failure> {
    let load = |p: &Path| {
        let records = trace::read_file(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        trace::normalize(&records, endpoint_a).map_err(|e| validation(format!("{}: {e}", p.display())))
    };
    let verdict = trace::compare(&load(a)?, &load(b)?);
    println!("{verdict}");
    Ok(verdict.is_equal())
}

fn run_report(files: &[String], csv: Option<&Path>) -> Result<(), Failure> {
    let rows = report::read_stats(files).map_err(|e| match e {
        report::ReportError::Io { .. } => runtime(e),
        _ => validation(e),
    })?;
    let r = report::build(rows);
    print!("{}", r.text());
    if let Some(path) = csv {
        std::fs::write(path, r.csv()).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out } => run(&scenario, seed, &out),
        Command::Preset { name, out, jobs } => run_preset(&name, &out, jobs),
        Command::Globalize { input, output, dim, accessor, prefix, exclude, include, init_fn } => {
            let config = TransformConfig {
                dim_symbol: dim,
                accessor,
                prefix,
                include: (!include.is_empty()).then_some(include),
                exclude,
                init_fn_name: init_fn,
            };
            globalize(&input, &output, config)
        }
        Command::TraceDiff { a, b, endpoint_a } => match trace_diff(&a, &b, endpoint_a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(RUNTIME_ERROR),
            Err(e) => Err(e),
        },
        Command::Report { files, csv } => run_report(&files, csv.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
