//! Text trace format and the random trace generator.
//!
//! One event per line:
//!
//! ```text
//! # comment
//! <thread> <op> <target> [<location>]
//! ```
//!
//! where `op` is one of `r w acq rel fork join`. Fields are separated by
//! spaces or tabs; identifiers match `[A-Za-z0-9_.:$-]+`. Blank lines and
//! lines starting with `#` are skipped. LF and CRLF are both accepted.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{OpKind, Trace, TraceBuilder};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown op '{op}' at line {line}")]
    UnknownOp { line: usize, op: String },
    #[error("expected 3 or 4 fields, found {found} at line {line}")]
    Arity { line: usize, found: usize },
    #[error("invalid identifier '{ident}' at line {line}")]
    BadIdentifier { line: usize, ident: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::UnknownOp { line, .. }
            | ParseError::Arity { line, .. }
            | ParseError::BadIdentifier { line, .. } => *line,
        }
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"_.:$-".contains(&b))
}

pub fn parse(text: &str) -> Result<Trace, ParseError> {
    let mut builder = TraceBuilder::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content
            .split([' ', '\t'])
            .filter(|f| !f.is_empty())
            .collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(ParseError::Arity {
                line,
                found: fields.len(),
            });
        }
        let kind = OpKind::from_mnemonic(fields[1]).ok_or_else(|| ParseError::UnknownOp {
            line,
            op: fields[1].to_owned(),
        })?;
        for &ident in [fields[0], fields[2]].iter().chain(fields.get(3)) {
            if !is_identifier(ident) {
                return Err(ParseError::BadIdentifier {
                    line,
                    ident: ident.to_owned(),
                });
            }
        }
        let location = fields.get(3).map(|s| s.to_string());
        builder
            .push(fields[0], kind, fields[2], location)
            .expect("identifiers checked above");
    }
    Ok(builder.build())
}

/// Source line number (1-based) of every event in `text`, in order.
pub fn event_lines(text: &str) -> Vec<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(i, _)| i + 1)
        .collect()
}

pub fn serialize(trace: &Trace) -> String {
    let mut out = String::new();
    for e in trace.events() {
        out.push_str(trace.thread_name(e.thread));
        out.push(' ');
        out.push_str(e.op.kind().mnemonic());
        out.push(' ');
        out.push_str(trace.target_name(e));
        if let Some(loc) = &e.location {
            out.push(' ');
            out.push_str(loc);
        }
        out.push('\n');
    }
    out
}

/// Parameters for [`generate_random`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenParams {
    pub threads: usize,
    pub events: usize,
    pub vars: usize,
    pub locks: usize,
    pub fork_join: bool,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            threads: 2,
            events: 8,
            vars: 2,
            locks: 1,
            fork_join: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Unforked,
    Running,
    Joined,
}

struct GenThread {
    status: Status,
    held: Vec<usize>,
}

/// Generate a well-formed random trace of exactly `params.events` events.
///
/// About 70% of events are accesses (reads outnumber writes). Every lock
/// acquired is released before the trace ends. With `fork_join`, thread
/// `T0` is the only initial thread; others start with a fork issued by a
/// running thread and may later be joined, after which they are silent.
pub fn generate_random(params: &GenParams) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nthreads = params.threads.max(1);
    let nvars = params.vars.max(1);
    let mut threads: Vec<GenThread> = (0..nthreads)
        .map(|i| GenThread {
            status: if params.fork_join && i > 0 {
                Status::Unforked
            } else {
                Status::Running
            },
            held: Vec::new(),
        })
        .collect();
    let mut lock_free = vec![true; params.locks];
    let mut builder = TraceBuilder::new();
    let tname = |i: usize| format!("T{i}");

    while builder.len() < params.events {
        let remaining = params.events - builder.len();
        let held_total: usize = threads.iter().map(|t| t.held.len()).sum();
        let running: Vec<usize> = (0..nthreads)
            .filter(|&i| threads[i].status == Status::Running)
            .collect();

        // Close open critical sections once the budget only covers them.
        if remaining <= held_total {
            let i = *running
                .iter()
                .find(|&&i| !threads[i].held.is_empty())
                .expect("a running thread holds a lock");
            let l = threads[i].held.pop().unwrap();
            lock_free[l] = true;
            builder
                .push(&tname(i), OpKind::Release, &format!("L{l}"), None)
                .unwrap();
            continue;
        }

        let t = *running.choose(&mut rng).expect("T0 never stops running");
        let roll: f64 = rng.gen();
        let mut kinds: Vec<OpKind> = Vec::new();
        if roll < 0.7 {
            kinds.push(if rng.gen_bool(0.6) {
                OpKind::Read
            } else {
                OpKind::Write
            });
        } else {
            if remaining > held_total + 1 && lock_free.iter().any(|&f| f) {
                kinds.push(OpKind::Acquire);
            }
            if !threads[t].held.is_empty() {
                kinds.push(OpKind::Release);
            }
            if params.fork_join {
                if threads.iter().any(|th| th.status == Status::Unforked) {
                    kinds.push(OpKind::Fork);
                }
                if (0..nthreads).any(|u| {
                    u != t && threads[u].status == Status::Running && threads[u].held.is_empty()
                }) && t == 0
                {
                    kinds.push(OpKind::Join);
                }
            }
            if kinds.is_empty() {
                kinds.push(OpKind::Read);
            }
        }
        let kind = *kinds.choose(&mut rng).unwrap();
        let target = match kind {
            OpKind::Read | OpKind::Write => format!("x{}", rng.gen_range(0..nvars)),
            OpKind::Acquire => {
                let free: Vec<usize> = (0..params.locks).filter(|&l| lock_free[l]).collect();
                let l = *free.choose(&mut rng).unwrap();
                lock_free[l] = false;
                threads[t].held.push(l);
                format!("L{l}")
            }
            OpKind::Release => {
                let l = threads[t].held.pop().unwrap();
                lock_free[l] = true;
                format!("L{l}")
            }
            OpKind::Fork => {
                let u = (0..nthreads)
                    .find(|&u| threads[u].status == Status::Unforked)
                    .unwrap();
                threads[u].status = Status::Running;
                tname(u)
            }
            OpKind::Join => {
                let candidates: Vec<usize> = (0..nthreads)
                    .filter(|&u| {
                        u != t && threads[u].status == Status::Running && threads[u].held.is_empty()
                    })
                    .collect();
                let u = *candidates.choose(&mut rng).unwrap();
                threads[u].status = Status::Joined;
                tname(u)
            }
        };
        builder.push(&tname(t), kind, &target, None).unwrap();
    }
    builder.build()
}
