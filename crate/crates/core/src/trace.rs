//! Event and trace model.
//!
//! A [`Trace`] is an immutable sequence of [`Event`]s together with three
//! interned identifier namespaces (threads, locks, variables). Indices are
//! dense and assigned in first-appearance order, so two parses of the same
//! text always produce the same ids.
//!
//! Fork and join events are events of *both* participating threads. This
//! matters for thread projections and for [`Trace::last_thread_event`].

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Dense thread index.
    ThreadId
);
id_type!(
    /// Dense lock index.
    LockId
);
id_type!(
    /// Dense shared-variable index.
    VarId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write,
    Acquire,
    Release,
    Fork,
    Join,
}

impl OpKind {
    /// Mnemonic used by the text trace format.
    pub fn mnemonic(self) -> &'static str {
        match self {
            OpKind::Read => "r",
            OpKind::Write => "w",
            OpKind::Acquire => "acq",
            OpKind::Release => "rel",
            OpKind::Fork => "fork",
            OpKind::Join => "join",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<OpKind> {
        Some(match s {
            "r" => OpKind::Read,
            "w" => OpKind::Write,
            "acq" => OpKind::Acquire,
            "rel" => OpKind::Release,
            "fork" => OpKind::Fork,
            "join" => OpKind::Join,
            _ => return None,
        })
    }
}

/// An operation together with its namespace-appropriate target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Read(VarId),
    Write(VarId),
    Acquire(LockId),
    Release(LockId),
    Fork(ThreadId),
    Join(ThreadId),
}

impl Op {
    pub fn kind(self) -> OpKind {
        match self {
            Op::Read(_) => OpKind::Read,
            Op::Write(_) => OpKind::Write,
            Op::Acquire(_) => OpKind::Acquire,
            Op::Release(_) => OpKind::Release,
            Op::Fork(_) => OpKind::Fork,
            Op::Join(_) => OpKind::Join,
        }
    }

    /// The variable accessed, for reads and writes.
    pub fn var(self) -> Option<VarId> {
        match self {
            Op::Read(x) | Op::Write(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_access(self) -> bool {
        matches!(self, Op::Read(_) | Op::Write(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    /// Position in the owning trace; doubles as the unique event id.
    pub idx: usize,
    pub thread: ThreadId,
    pub op: Op,
    pub location: Option<String>,
}

impl Event {
    /// The second thread this event belongs to, if it is a fork or join.
    #[inline]
    pub fn partner(&self) -> Option<ThreadId> {
        match self.op {
            Op::Fork(u) | Op::Join(u) => Some(u),
            _ => None,
        }
    }

    /// Whether this is an event of thread `t` (fork/join count for both sides).
    #[inline]
    pub fn belongs_to(&self, t: ThreadId) -> bool {
        self.thread == t || self.partner() == Some(t)
    }

    #[inline]
    pub fn is_read(&self) -> bool {
        matches!(self.op, Op::Read(_))
    }

    #[inline]
    pub fn is_write(&self) -> bool {
        matches!(self.op, Op::Write(_))
    }

    /// Same variable, different threads, at least one write.
    pub fn conflicts_with(&self, other: &Event) -> bool {
        match (self.op.var(), other.op.var()) {
            (Some(x), Some(y)) => {
                x == y && self.thread != other.thread && (self.is_write() || other.is_write())
            }
            _ => false,
        }
    }

    /// Location used in reports: the recorded one, else the event index.
    pub fn display_location(&self) -> String {
        self.location
            .clone()
            .unwrap_or_else(|| self.idx.to_string())
    }
}

/// Free-function form of [`Event::conflicts_with`].
pub fn conflicting(e1: &Event, e2: &Event) -> bool {
    e1.conflicts_with(e2)
}

#[derive(Clone, Debug, Default)]
struct Registry {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Registry {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    fn lookup(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("empty identifier")]
    EmptyIdentifier,
    #[error("event {0} is out of range")]
    OutOfRange(usize),
    #[error("event {idx} is a {kind:?}, expected a read")]
    NotARead { idx: usize, kind: OpKind },
}

/// Incremental trace construction with identifier interning.
#[derive(Debug, Default)]
pub struct TraceBuilder {
    events: Vec<Event>,
    threads: Registry,
    locks: Registry,
    vars: Registry,
}

impl TraceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one event; returns its index.
    pub fn push(
        &mut self,
        thread: &str,
        kind: OpKind,
        target: &str,
        location: Option<String>,
    ) -> Result<usize, TraceError> {
        if thread.is_empty() || target.is_empty() {
            return Err(TraceError::EmptyIdentifier);
        }
        let t = ThreadId(self.threads.intern(thread));
        let op = match kind {
            OpKind::Read => Op::Read(VarId(self.vars.intern(target))),
            OpKind::Write => Op::Write(VarId(self.vars.intern(target))),
            OpKind::Acquire => Op::Acquire(LockId(self.locks.intern(target))),
            OpKind::Release => Op::Release(LockId(self.locks.intern(target))),
            OpKind::Fork => Op::Fork(ThreadId(self.threads.intern(target))),
            OpKind::Join => Op::Join(ThreadId(self.threads.intern(target))),
        };
        let idx = self.events.len();
        self.events.push(Event {
            idx,
            thread: t,
            op,
            location,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn build(self) -> Trace {
        Trace {
            events: self.events,
            threads: self.threads,
            locks: self.locks,
            vars: self.vars,
            last_write: OnceLock::new(),
            last_thread_event: OnceLock::new(),
        }
    }
}

/// A recorded execution. Immutable once built.
#[derive(Debug)]
pub struct Trace {
    events: Vec<Event>,
    threads: Registry,
    locks: Registry,
    vars: Registry,
    last_write: OnceLock<Vec<Option<usize>>>,
    last_thread_event: OnceLock<Vec<Option<usize>>>,
}

impl Clone for Trace {
    fn clone(&self) -> Self {
        Trace {
            events: self.events.clone(),
            threads: self.threads.clone(),
            locks: self.locks.clone(),
            vars: self.vars.clone(),
            last_write: OnceLock::new(),
            last_thread_event: OnceLock::new(),
        }
    }
}

impl PartialEq for Trace {
    /// Event-for-event equality over symbolic names.
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.events.iter().zip(&other.events).all(|(a, b)| {
                self.thread_name(a.thread) == other.thread_name(b.thread)
                    && a.op.kind() == b.op.kind()
                    && self.target_name(a) == other.target_name(b)
                    && a.location == b.location
            })
    }
}

impl Eq for Trace {}

impl Trace {
    pub fn builder() -> TraceBuilder {
        TraceBuilder::new()
    }

    pub fn empty() -> Trace {
        TraceBuilder::new().build()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, idx: usize) -> &Event {
        &self.events[idx]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn thread_count(&self) -> usize {
        self.threads.names.len()
    }

    pub fn lock_count(&self) -> usize {
        self.locks.names.len()
    }

    pub fn var_count(&self) -> usize {
        self.vars.names.len()
    }

    pub fn thread_name(&self, t: ThreadId) -> &str {
        &self.threads.names[t.index()]
    }

    pub fn lock_name(&self, l: LockId) -> &str {
        &self.locks.names[l.index()]
    }

    pub fn var_name(&self, x: VarId) -> &str {
        &self.vars.names[x.index()]
    }

    pub fn thread_id(&self, name: &str) -> Option<ThreadId> {
        self.threads.lookup(name).map(ThreadId)
    }

    pub fn lock_id(&self, name: &str) -> Option<LockId> {
        self.locks.lookup(name).map(LockId)
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars.lookup(name).map(VarId)
    }

    /// Symbolic name of the event's target.
    pub fn target_name(&self, e: &Event) -> &str {
        match e.op {
            Op::Read(x) | Op::Write(x) => self.var_name(x),
            Op::Acquire(l) | Op::Release(l) => self.lock_name(l),
            Op::Fork(u) | Op::Join(u) => self.thread_name(u),
        }
    }

    /// Rebuild a trace from the events accepted by `keep`, re-indexing them
    /// and re-interning identifiers in the new first-appearance order.
    pub fn filtered(&self, mut keep: impl FnMut(&Event) -> bool) -> Trace {
        let mut b = TraceBuilder::new();
        for e in self.events.iter().filter(|e| keep(e)) {
            b.push(
                self.thread_name(e.thread),
                e.op.kind(),
                self.target_name(e),
                e.location.clone(),
            )
            .expect("names come from an existing trace");
        }
        b.build()
    }

    /// Last write to the same variable strictly before read `idx`.
    pub fn last_write(&self, idx: usize) -> Result<Option<usize>, TraceError> {
        let e = self.events.get(idx).ok_or(TraceError::OutOfRange(idx))?;
        if !e.is_read() {
            return Err(TraceError::NotARead {
                idx,
                kind: e.op.kind(),
            });
        }
        Ok(self.last_write_table()[idx])
    }

    /// Per-event table: for reads, the index of the last prior write to the
    /// same variable; `None` for non-reads and for reads with no prior write.
    pub fn last_write_table(&self) -> &[Option<usize>] {
        self.last_write.get_or_init(|| {
            let mut latest: Vec<Option<usize>> = vec![None; self.var_count()];
            self.events
                .iter()
                .map(|e| match e.op {
                    Op::Read(x) => latest[x.index()],
                    Op::Write(x) => {
                        latest[x.index()] = Some(e.idx);
                        None
                    }
                    _ => None,
                })
                .collect()
        })
    }

    /// Latest earlier event sharing a thread with event `idx`, under the
    /// rule that fork/join events belong to both threads involved.
    pub fn last_thread_event(&self, idx: usize) -> Option<usize> {
        self.last_thread_event_table()[idx]
    }

    pub fn last_thread_event_table(&self) -> &[Option<usize>] {
        self.last_thread_event.get_or_init(|| {
            let mut latest: Vec<Option<usize>> = vec![None; self.thread_count()];
            self.events
                .iter()
                .map(|e| {
                    let mut prev = latest[e.thread.index()];
                    if let Some(u) = e.partner() {
                        prev = prev.max(latest[u.index()]);
                        latest[u.index()] = Some(e.idx);
                    }
                    latest[e.thread.index()] = Some(e.idx);
                    prev
                })
                .collect()
        })
    }

    /// Indices of the events of thread `t`, in trace order.
    pub fn thread_projection(&self, t: ThreadId) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.belongs_to(t))
            .map(|e| e.idx)
            .collect()
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::io::serialize(self))
    }
}

/// The rule a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    ReleaseWithoutAcquire,
    ReleaseByNonOwner,
    ReentrantAcquire,
    AcquireOfHeldLock,
    ForkOfStartedThread,
    SelfForkJoin,
    JoinOfUnstartedThread,
    EventAfterJoin,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::ReleaseWithoutAcquire => "release without acquire",
            Rule::ReleaseByNonOwner => "release of lock held by another thread",
            Rule::ReentrantAcquire => "reentrant acquire",
            Rule::AcquireOfHeldLock => "acquire of lock held by another thread",
            Rule::ForkOfStartedThread => "fork of started thread",
            Rule::SelfForkJoin => "self fork/join",
            Rule::JoinOfUnstartedThread => "join of thread with no events",
            Rule::EventAfterJoin => "event after join",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub event: usize,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: {}: {}", self.event, self.rule, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Streaming well-formedness checker. An event that violates a rule is
/// reported and does not change the checker's state, so checking can resume
/// on the next event as if the offending one had been dropped.
struct Checker {
    holder: Vec<Option<ThreadId>>,
    started: Vec<bool>,
    forked: Vec<bool>,
    joined: Vec<bool>,
}

impl Checker {
    fn new(trace: &Trace) -> Self {
        let t = trace.thread_count();
        Checker {
            holder: vec![None; trace.lock_count()],
            started: vec![false; t],
            forked: vec![false; t],
            joined: vec![false; t],
        }
    }

    fn check(&mut self, trace: &Trace, e: &Event) -> Option<Violation> {
        let violation = |rule: Rule, message: String| {
            Some(Violation {
                event: e.idx,
                rule,
                message,
            })
        };
        let t = e.thread;
        let tname = trace.thread_name(t);
        if self.joined[t.index()] {
            return violation(
                Rule::EventAfterJoin,
                format!("thread {tname} performs an event after being joined"),
            );
        }
        match e.op {
            Op::Acquire(l) => match self.holder[l.index()] {
                Some(h) if h == t => {
                    return violation(
                        Rule::ReentrantAcquire,
                        format!("{tname} re-acquires {}", trace.lock_name(l)),
                    )
                }
                Some(h) => {
                    return violation(
                        Rule::AcquireOfHeldLock,
                        format!(
                            "{tname} acquires {} held by {}",
                            trace.lock_name(l),
                            trace.thread_name(h)
                        ),
                    )
                }
                None => self.holder[l.index()] = Some(t),
            },
            Op::Release(l) => match self.holder[l.index()] {
                None => {
                    return violation(
                        Rule::ReleaseWithoutAcquire,
                        format!("{tname} releases {} which is not held", trace.lock_name(l)),
                    )
                }
                Some(h) if h != t => {
                    return violation(
                        Rule::ReleaseByNonOwner,
                        format!(
                            "{tname} releases {} held by {}",
                            trace.lock_name(l),
                            trace.thread_name(h)
                        ),
                    )
                }
                Some(_) => self.holder[l.index()] = None,
            },
            Op::Fork(u) | Op::Join(u) if u == t => {
                return violation(Rule::SelfForkJoin, format!("{tname} targets itself"))
            }
            Op::Fork(u) => {
                let uname = trace.thread_name(u);
                if self.joined[u.index()] {
                    return violation(
                        Rule::EventAfterJoin,
                        format!("fork of {uname} after it was joined"),
                    );
                }
                if self.started[u.index()] || self.forked[u.index()] {
                    return violation(
                        Rule::ForkOfStartedThread,
                        format!("{uname} already has events or was already forked"),
                    );
                }
                self.forked[u.index()] = true;
                self.started[u.index()] = true;
            }
            Op::Join(u) => {
                let uname = trace.thread_name(u);
                if self.joined[u.index()] {
                    return violation(
                        Rule::EventAfterJoin,
                        format!("{uname} is joined a second time"),
                    );
                }
                if !self.started[u.index()] {
                    return violation(
                        Rule::JoinOfUnstartedThread,
                        format!("{uname} has no events before its join"),
                    );
                }
                self.joined[u.index()] = true;
            }
            Op::Read(_) | Op::Write(_) => {}
        }
        self.started[t.index()] = true;
        None
    }
}

/// Check lock well-formedness and the fork/join sanity rules.
pub fn validate_well_formed(trace: &Trace) -> ValidationReport {
    let mut checker = Checker::new(trace);
    let violations: Vec<Violation> = trace
        .events()
        .iter()
        .filter_map(|e| checker.check(trace, e))
        .collect();
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Drop every event that breaks a well-formedness rule (judged against the
/// events kept so far) and return the resulting trace with the report.
pub fn sanitize(trace: &Trace) -> (Trace, ValidationReport) {
    let report = validate_well_formed(trace);
    if report.ok {
        return (trace.clone(), report);
    }
    let mut dropped = report.violations.iter().map(|v| v.event).peekable();
    let kept = trace.filtered(|e| {
        if dropped.peek() == Some(&e.idx) {
            dropped.next();
            false
        } else {
            true
        }
    });
    (kept, report)
}
