//! Command-line front end.
//!
//! Exit codes: 0 no races (or checks passed), 1 input, usage or oracle-cap
//! error, 2 races found, 3 engines or oracle disagree.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::detect::{run_detector, Engine};
use crate::fuzz::{run_fuzz, FuzzConfig};
use crate::io::{event_lines, generate_random, parse, serialize, GenParams};
use crate::oracle::{all_schedulable_pairs, OracleConfig};
use crate::report::{build_report, pairs_for_engine, render, Format, RacePair, ReportKind};
use crate::trace::{sanitize, validate_well_formed, Trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_RACES: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "shb",
    version,
    about = "Predictive data race detection over execution traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one engine over a trace and report its races.
    Analyze(AnalyzeArgs),
    /// Run every engine over a trace and compare their results.
    Compare(CompareArgs),
    /// Compute the schedulable races of a small trace by exhaustive search.
    Oracle(OracleArgs),
    /// Generate a random well-formed trace, or fuzz the engines.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Trace file, or '-' for standard input.
    pub input: PathBuf,
    /// Drop ill-formed events instead of rejecting the trace.
    #[arg(long)]
    pub lenient: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print elapsed time to standard error.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: InputArgs,
    #[arg(long, default_value = "shb", value_parser = parse_from_str::<Engine>)]
    pub engine: Engine,
    #[arg(long, default_value = "warnings", value_parser = parse_from_str::<ReportKind>)]
    pub report: ReportKind,
    #[arg(long, default_value = "text", value_parser = parse_from_str::<Format>)]
    pub format: Format,
    /// Skip pair enumeration when a variable has more accesses than this.
    #[arg(long)]
    pub pair_cap: Option<usize>,
    /// Also print the per-event vector timestamps.
    #[arg(long)]
    pub record_timestamps: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: InputArgs,
    #[arg(long, default_value = "text", value_parser = parse_from_str::<Format>)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: InputArgs,
    /// Compare against the pairs derived from SHB timestamps.
    #[arg(long)]
    pub check: bool,
    /// Event cap; defaults to SHB_ORACLE_CAP or 24.
    #[arg(long)]
    pub max_events: Option<usize>,
    #[arg(long, default_value = "text", value_parser = parse_from_str::<Format>)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2)]
    pub threads: usize,
    #[arg(long, default_value_t = 8)]
    pub events: usize,
    #[arg(long, default_value_t = 2)]
    pub vars: usize,
    #[arg(long, default_value_t = 1)]
    pub locks: usize,
    /// Start every thread but T0 with a fork; allow joins.
    #[arg(long)]
    pub fork_join: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Instead of printing a trace, run this many differential checks.
    #[arg(long)]
    pub fuzz: Option<usize>,
    /// Largest trace generated while fuzzing.
    #[arg(long, default_value_t = 12)]
    pub max_events: usize,
    #[arg(long)]
    pub timing: bool,
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

/// Standard streams, injectable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

struct Failure(i32);

type CmdResult = Result<i32, Failure>;

fn fail(io: &mut Io, msg: impl std::fmt::Display) -> Failure {
    let _ = writeln!(io.stderr, "error: {msg}");
    Failure(EXIT_ERROR)
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, io: &mut Io) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                io.stderr.write_all(text.as_bytes())
            } else {
                io.stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => analyze(a, io),
        Command::Compare(a) => compare(a, io),
        Command::Oracle(a) => oracle(a, io),
        Command::Gen(a) => gen(a, io),
    };
    result.unwrap_or_else(|Failure(code)| code)
}

fn load(args: &InputArgs, io: &mut Io) -> Result<Trace, Failure> {
    let mut text = String::new();
    let read = if args.input.as_os_str() == "-" {
        io.stdin.read_to_string(&mut text).map(|_| ())
    } else {
        std::fs::read_to_string(&args.input).map(|t| text = t)
    };
    if let Err(e) = read {
        return Err(fail(
            io,
            format!("cannot read {}: {e}", args.input.display()),
        ));
    }
    let name = args.input.display().to_string();
    let trace = parse(&text).map_err(|e| fail(io, format!("{name}: {e}")))?;
    let lines = event_lines(&text);
    let report = validate_well_formed(&trace);
    if report.ok {
        return Ok(trace);
    }
    let level = if args.lenient { "warning" } else { "error" };
    for v in &report.violations {
        let _ = writeln!(
            io.stderr,
            "{level}: {name}:{}: {} ({})",
            lines[v.event], v.message, v.rule
        );
    }
    if args.lenient {
        let (clean, _) = sanitize(&trace);
        let _ = writeln!(
            io.stderr,
            "warning: dropped {} ill-formed event(s)",
            trace.len() - clean.len()
        );
        Ok(clean)
    } else {
        Err(Failure(EXIT_ERROR))
    }
}

fn emit(out: &Option<PathBuf>, text: &str, io: &mut Io) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| fail(io, format!("cannot write {}: {e}", path.display()))),
        None => io
            .stdout
            .write_all(text.as_bytes())
            .map_err(|e| fail(io, e)),
    }
}

fn timing(enabled: bool, start: Instant, io: &mut Io) {
    if enabled {
        let _ = writeln!(io.stderr, "time: {:.3}s", start.elapsed().as_secs_f64());
    }
}

fn analyze(args: &AnalyzeArgs, io: &mut Io) -> CmdResult {
    let trace = load(&args.common, io)?;
    let start = Instant::now();
    let report = build_report(&trace, args.engine, args.report, args.pair_cap);
    timing(args.common.timing, start, io);
    // Text reports carry the notice inline.
    if let (Some(n), false) = (&report.notice, args.format == Format::Text) {
        let _ = writeln!(io.stderr, "note: {n}");
    }
    let mut text = render(&report, args.report, args.format);
    if args.record_timestamps {
        // The epoch engine keeps no per-event clocks; its vector twin does.
        let engine = match args.engine {
            Engine::ShbEpoch => Engine::Shb,
            e => e,
        };
        let log = run_detector(&trace, engine, true)
            .timestamps
            .expect("recorded");
        let stamps: Vec<Vec<u64>> = log
            .stamps
            .iter()
            .map(|v| v.to_dense(trace.thread_count()))
            .collect();
        match args.format {
            Format::Json => {
                let mut v: serde_json::Value = serde_json::from_str(&text).expect("own output");
                v["timestamps"] = json!(stamps);
                text = format!("{v}\n");
            }
            Format::Csv => {
                text.push_str("event,timestamp\n");
                for (i, s) in stamps.iter().enumerate() {
                    let joined: Vec<String> = s.iter().map(u64::to_string).collect();
                    let _ = writeln!(text, "{i},{}", joined.join(" "));
                }
            }
            Format::Text => {
                for (i, s) in stamps.iter().enumerate() {
                    let _ = writeln!(text, "C{i} {s:?}");
                }
            }
        }
    }
    emit(&args.common.out, &text, io)?;
    Ok(if report.has_races() {
        EXIT_RACES
    } else {
        EXIT_OK
    })
}

fn show_pairs(pairs: &[RacePair]) -> String {
    if pairs.is_empty() {
        return "none".into();
    }
    pairs
        .iter()
        .map(RacePair::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn difference(a: &[RacePair], b: &[RacePair]) -> Vec<RacePair> {
    let b: BTreeSet<&RacePair> = b.iter().collect();
    a.iter().filter(|p| !b.contains(p)).copied().collect()
}

fn compare(args: &CompareArgs, io: &mut Io) -> CmdResult {
    let trace = load(&args.common, io)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    for engine in Engine::ALL {
        let warnings = run_detector(&trace, engine, false).warnings;
        let pairs = pairs_for_engine(&trace, engine, None).expect("no cap");
        rows.push((engine, warnings, pairs));
    }
    timing(args.common.timing, start, io);
    let get = |e: Engine| rows.iter().find(|r| r.0 == e).expect("all engines ran");
    let (_, shb_w, shb_p) = get(Engine::Shb);
    let (_, epoch_w, _) = get(Engine::ShbEpoch);
    let (_, _, hb_p) = get(Engine::Hb);
    let (_, _, fhb_p) = get(Engine::Fhb);
    let agree = shb_w == epoch_w;
    let hb_only = difference(hb_p, shb_p);
    let shb_only = difference(shb_p, fhb_p);

    let text = match args.format {
        Format::Json => {
            let engines: serde_json::Map<String, serde_json::Value> = rows
                .iter()
                .map(|(e, w, p)| {
                    (
                        e.name().to_owned(),
                        json!({"warnings": w.len(), "pairs": p}),
                    )
                })
                .collect();
            let v = json!({
                "event_count": trace.len(),
                "engines": engines,
                "hb_not_shb": hb_only,
                "shb_not_fhb": shb_only,
                "epoch_agrees": agree,
            });
            format!("{v}\n")
        }
        Format::Csv => {
            let mut s = String::from("engine,warnings,pairs\n");
            for (e, w, p) in &rows {
                let _ = writeln!(s, "{e},{},{}", w.len(), p.len());
            }
            s
        }
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "{:<10} {:>8} {:>8}", "engine", "warnings", "pairs");
            for (e, w, p) in &rows {
                let _ = writeln!(s, "{:<10} {:>8} {:>8}", e.name(), w.len(), p.len());
            }
            let _ = writeln!(s, "hb pairs not in shb: {}", show_pairs(&hb_only));
            let _ = writeln!(s, "shb pairs not in fhb: {}", show_pairs(&shb_only));
            let _ = writeln!(
                s,
                "shb-epoch {} shb",
                if agree {
                    "agrees with"
                } else {
                    "DISAGREES with"
                }
            );
            s
        }
    };
    emit(&args.common.out, &text, io)?;
    Ok(if agree { EXIT_OK } else { EXIT_MISMATCH })
}

fn oracle(args: &OracleArgs, io: &mut Io) -> CmdResult {
    let trace = load(&args.common, io)?;
    let mut cfg = OracleConfig::from_env();
    if let Some(n) = args.max_events {
        cfg.max_events = n;
    }
    let start = Instant::now();
    let pairs: Vec<RacePair> = all_schedulable_pairs(&trace, &cfg)
        .map_err(|e| fail(io, e))?
        .into_iter()
        .collect();
    timing(args.common.timing, start, io);
    let count = |n: usize| {
        if n == 1 {
            "1 pair".to_owned()
        } else {
            format!("{n} pairs")
        }
    };
    let mut text = String::new();
    let mut code = if pairs.is_empty() {
        EXIT_OK
    } else {
        EXIT_RACES
    };
    let mut verdict = None;
    if args.check {
        let engine = pairs_for_engine(&trace, Engine::Shb, None).expect("no cap");
        if engine == pairs {
            verdict = Some(format!("MATCH: {}", count(pairs.len())));
            code = EXIT_OK;
        } else {
            verdict = Some(format!(
                "MISMATCH: engine only {}; oracle only {}",
                show_pairs(&difference(&engine, &pairs)),
                show_pairs(&difference(&pairs, &engine))
            ));
            code = EXIT_MISMATCH;
        }
    }
    match args.format {
        Format::Json => {
            let v = json!({
                "event_count": trace.len(),
                "pairs": pairs,
                "check": verdict,
            });
            let _ = writeln!(text, "{v}");
        }
        Format::Csv => {
            text.push_str("e1,e2\n");
            for p in &pairs {
                let _ = writeln!(text, "{},{}", p.e1, p.e2);
            }
        }
        Format::Text => {
            let _ = writeln!(text, "oracle: {}", count(pairs.len()));
            for p in &pairs {
                let _ = writeln!(text, "{} {}", p.e1, p.e2);
            }
            if let Some(v) = &verdict {
                let _ = writeln!(text, "{v}");
            }
        }
    }
    emit(&args.common.out, &text, io)?;
    Ok(code)
}

fn gen(args: &GenArgs, io: &mut Io) -> CmdResult {
    let start = Instant::now();
    if let Some(runs) = args.fuzz {
        let cfg = FuzzConfig {
            runs,
            max_events: args.max_events,
            max_threads: args.threads.max(1),
            max_vars: args.vars.max(1),
            max_locks: args.locks,
            seed: args.seed,
            oracle: OracleConfig::from_env(),
        };
        let outcome = run_fuzz(&cfg).map_err(|e| fail(io, e))?;
        timing(args.timing, start, io);
        let mut text = String::new();
        let code = match &outcome.failure {
            None => {
                let _ = writeln!(text, "{}/{} OK", outcome.passed, outcome.runs);
                EXIT_OK
            }
            Some(f) => {
                let _ = writeln!(text, "{}/{} OK", outcome.passed, outcome.runs);
                let _ = writeln!(text, "MISMATCH at run {}: {}", f.run, f.mismatch);
                let _ = writeln!(text, "params: {:?}", f.params);
                let _ = writeln!(text, "shrunk trace:");
                text.push_str(&serialize(&f.shrunk));
                EXIT_MISMATCH
            }
        };
        emit(&args.out, &text, io)?;
        return Ok(code);
    }
    let trace = generate_random(&GenParams {
        threads: args.threads,
        events: args.events,
        vars: args.vars,
        locks: args.locks,
        fork_join: args.fork_join,
        seed: args.seed,
    });
    timing(args.timing, start, io);
    emit(&args.out, &serialize(&trace), io)?;
    Ok(EXIT_OK)
}
