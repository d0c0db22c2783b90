//! Streaming vector-clock race detectors.
//!
//! Three engines share one state layout:
//!
//! * [`Engine::Shb`] orders every read after the last write it observed, so
//!   every warning corresponds to a race that some reordering of the trace
//!   can actually schedule back to back.
//! * [`Engine::Hb`] is the same algorithm without the last-write clock; it
//!   reports every happens-before race, including unschedulable ones.
//! * [`Engine::Fhb`] orders the two events of every detected race before
//!   continuing (force ordering); sound but incomplete. The forced join
//!   brings in the full clocks of the racing accesses, and every access
//!   ends its thread's local epoch, so a clock knows an access exactly when
//!   the access is ordered before it.
//!
//! The epoch-optimized SHB engine lives in [`crate::epoch`].

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::trace::{Event, Op, Trace};
use crate::vclock::VectorTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Engine {
    Hb,
    Shb,
    ShbEpoch,
    Fhb,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Hb, Engine::Shb, Engine::ShbEpoch, Engine::Fhb];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Hb => "hb",
            Engine::Shb => "shb",
            Engine::ShbEpoch => "shb-epoch",
            Engine::Fhb => "fhb",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown engine '{s}' (expected hb, shb, shb-epoch or fhb)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceKind {
    /// The access races with an earlier read.
    WithRead,
    /// The access races with an earlier write.
    WithWrite,
}

impl RaceKind {
    pub fn name(self) -> &'static str {
        match self {
            RaceKind::WithRead => "with_read",
            RaceKind::WithWrite => "with_write",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RaceWarning {
    pub event: usize,
    pub kind: RaceKind,
}

/// Warnings raised by one handler invocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepWarnings {
    pub with_read: bool,
    pub with_write: bool,
}

impl StepWarnings {
    pub fn any(self) -> bool {
        self.with_read || self.with_write
    }

    pub(crate) fn push_into(self, event: usize, out: &mut Vec<RaceWarning>) {
        if self.with_read {
            out.push(RaceWarning {
                event,
                kind: RaceKind::WithRead,
            });
        }
        if self.with_write {
            out.push(RaceWarning {
                event,
                kind: RaceKind::WithWrite,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EventStats {
    pub reads: usize,
    pub writes: usize,
    pub acquires: usize,
    pub releases: usize,
    pub forks: usize,
    pub joins: usize,
}

impl EventStats {
    pub fn of(trace: &Trace) -> Self {
        let mut s = EventStats::default();
        for e in trace.events() {
            match e.op {
                Op::Read(_) => s.reads += 1,
                Op::Write(_) => s.writes += 1,
                Op::Acquire(_) => s.acquires += 1,
                Op::Release(_) => s.releases += 1,
                Op::Fork(_) => s.forks += 1,
                Op::Join(_) => s.joins += 1,
            }
        }
        s
    }
}

/// Clocks the force-ordering engine compared against at an access, before
/// any force-ordering join.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForceChecks {
    /// Clock checked against the read history (writes only).
    pub against_reads: Option<VectorTime>,
    /// Clock checked against the write history.
    pub against_writes: VectorTime,
}

/// Per-event timestamps `C_e`.
///
/// For reads, acquires and joins the timestamp is the thread clock after
/// the handler. For writes, releases and forks it is the clock before the
/// local increment. [`Engine::Fhb`] also increments after reads; their
/// timestamp is likewise taken before the increment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimestampLog {
    pub stamps: Vec<VectorTime>,
    /// Only recorded by [`Engine::Fhb`]; `None` entries for non-accesses.
    pub force_checks: Option<Vec<Option<ForceChecks>>>,
}

impl TimestampLog {
    pub fn get(&self, idx: usize) -> &VectorTime {
        &self.stamps[idx]
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectorOutput {
    pub engine: Engine,
    /// Sorted by event index, at most one entry per (event, kind).
    pub warnings: Vec<RaceWarning>,
    pub timestamps: Option<TimestampLog>,
    pub stats: EventStats,
}

impl DetectorOutput {
    /// Indices of events with at least one warning, ascending.
    pub fn warned_events(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.warnings.iter().map(|w| w.event).collect();
        v.dedup();
        v
    }
}

/// Streaming state of the HB, SHB and FHB engines.
#[derive(Clone, Debug)]
pub struct DetectorState {
    engine: Engine,
    threads: Vec<VectorTime>,
    locks: Vec<VectorTime>,
    last_writes: Vec<VectorTime>,
    reads: Vec<VectorTime>,
    writes: Vec<VectorTime>,
    /// FHB only: clock of each thread's last read and write of each variable.
    read_clocks: Vec<Vec<VectorTime>>,
    write_clocks: Vec<Vec<VectorTime>>,
}

/// Join into `clock` the full clocks of the accesses whose own component
/// `history` has and `clock` lacks.
fn force_join(clock: &mut VectorTime, history: &VectorTime, access_clocks: &[VectorTime]) {
    let racing: Vec<usize> = (0..access_clocks.len())
        .filter(|&u| history.get(u) > clock.get(u))
        .collect();
    for u in racing {
        clock.join(&access_clocks[u]);
    }
}

impl DetectorState {
    /// Fresh state sized to `trace`. `C_t = ⊥[1/t]`, everything else `⊥`.
    ///
    /// # Panics
    ///
    /// If `engine` is [`Engine::ShbEpoch`]; use [`crate::epoch::EpochState`].
    pub fn new(engine: Engine, trace: &Trace) -> Self {
        assert!(
            engine != Engine::ShbEpoch,
            "the epoch engine has its own state type"
        );
        let nt = trace.thread_count();
        let nv = trace.var_count();
        let bottom = VectorTime::with_threads(nt);
        DetectorState {
            engine,
            threads: (0..nt).map(|t| bottom.updated(1, t)).collect(),
            locks: vec![bottom.clone(); trace.lock_count()],
            last_writes: if engine == Engine::Shb {
                vec![bottom.clone(); nv]
            } else {
                Vec::new()
            },
            reads: vec![bottom.clone(); nv],
            writes: vec![bottom.clone(); nv],
            read_clocks: if engine == Engine::Fhb {
                vec![vec![bottom.clone(); nt]; nv]
            } else {
                Vec::new()
            },
            write_clocks: if engine == Engine::Fhb {
                vec![vec![bottom; nt]; nv]
            } else {
                Vec::new()
            },
        }
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn thread_clock(&self, t: usize) -> &VectorTime {
        &self.threads[t]
    }

    pub fn lock_clock(&self, l: usize) -> &VectorTime {
        &self.locks[l]
    }

    /// The last-write clock of `x` (SHB only).
    pub fn last_write_clock(&self, x: usize) -> Option<&VectorTime> {
        self.last_writes.get(x)
    }

    pub fn read_history(&self, x: usize) -> &VectorTime {
        &self.reads[x]
    }

    pub fn write_history(&self, x: usize) -> &VectorTime {
        &self.writes[x]
    }

    /// Process one event. Events must be fed in trace order.
    pub fn step(&mut self, e: &Event) -> StepWarnings {
        self.step_recording(e, None)
    }

    fn step_recording(&mut self, e: &Event, log: Option<&mut TimestampLog>) -> StepWarnings {
        let t = e.thread.index();
        let mut warn = StepWarnings::default();
        let mut checks = None;
        // Timestamp taken before the local increment, if the handler has one.
        let mut pre_increment: Option<VectorTime> = None;
        match e.op {
            Op::Acquire(l) => {
                let lc = &self.locks[l.index()];
                self.threads[t].join(lc);
            }
            Op::Release(l) => {
                self.locks[l.index()].copy_from(&self.threads[t]);
                if log.is_some() {
                    pre_increment = Some(self.threads[t].clone());
                }
                self.threads[t].increment(t);
            }
            Op::Fork(u) => {
                let child = self.threads[t].updated(1, u.index());
                self.threads[u.index()] = child;
                if log.is_some() {
                    pre_increment = Some(self.threads[t].clone());
                }
                self.threads[t].increment(t);
            }
            Op::Join(u) => {
                let child = self.threads[u.index()].clone();
                self.threads[t].join(&child);
            }
            Op::Read(x) => {
                let x = x.index();
                let clock = &mut self.threads[t];
                warn.with_write = !self.writes[x].leq(clock);
                if self.engine == Engine::Fhb {
                    if log.is_some() {
                        checks = Some(ForceChecks {
                            against_reads: None,
                            against_writes: clock.clone(),
                        });
                    }
                    if warn.with_write {
                        force_join(clock, &self.writes[x], &self.write_clocks[x]);
                    }
                    self.read_clocks[x][t].copy_from(clock);
                }
                if self.engine == Engine::Shb {
                    clock.join(&self.last_writes[x]);
                }
                let local = clock.get(t);
                self.reads[x].set(t, local);
                if self.engine == Engine::Fhb {
                    if log.is_some() {
                        pre_increment = Some(clock.clone());
                    }
                    clock.increment(t);
                }
            }
            Op::Write(x) => {
                let x = x.index();
                let clock = &mut self.threads[t];
                warn.with_read = !self.reads[x].leq(clock);
                if self.engine == Engine::Fhb {
                    let against_reads = log.is_some().then(|| clock.clone());
                    if warn.with_read {
                        force_join(clock, &self.reads[x], &self.read_clocks[x]);
                    }
                    warn.with_write = !self.writes[x].leq(clock);
                    if log.is_some() {
                        checks = Some(ForceChecks {
                            against_reads,
                            against_writes: clock.clone(),
                        });
                    }
                    if warn.with_write {
                        force_join(clock, &self.writes[x], &self.write_clocks[x]);
                    }
                    let local = clock.get(t);
                    self.writes[x].set(t, local);
                    self.write_clocks[x][t].copy_from(clock);
                    if log.is_some() {
                        pre_increment = Some(clock.clone());
                    }
                    clock.increment(t);
                } else {
                    warn.with_write = !self.writes[x].leq(clock);
                    if self.engine == Engine::Shb {
                        self.last_writes[x].copy_from(clock);
                    }
                    let local = clock.get(t);
                    self.writes[x].set(t, local);
                    if log.is_some() {
                        pre_increment = Some(clock.clone());
                    }
                    clock.increment(t);
                }
            }
        }
        if let Some(log) = log {
            log.stamps
                .push(pre_increment.unwrap_or_else(|| self.threads[t].clone()));
            if let Some(fc) = log.force_checks.as_mut() {
                fc.push(checks);
            }
        }
        warn
    }
}

/// Run one of the vector-clock engines over `trace`.
///
/// [`Engine::ShbEpoch`] is dispatched to [`crate::epoch::run_epoch_detector`];
/// it never records timestamps.
pub fn run_detector(trace: &Trace, engine: Engine, record_timestamps: bool) -> DetectorOutput {
    if engine == Engine::ShbEpoch {
        return crate::epoch::run_epoch_detector(trace);
    }
    let mut state = DetectorState::new(engine, trace);
    let mut warnings = Vec::new();
    let mut log = record_timestamps.then(|| TimestampLog {
        stamps: Vec::with_capacity(trace.len()),
        force_checks: (engine == Engine::Fhb).then(|| Vec::with_capacity(trace.len())),
    });
    for e in trace.events() {
        state
            .step_recording(e, log.as_mut())
            .push_into(e.idx, &mut warnings);
    }
    DetectorOutput {
        engine,
        warnings,
        timestamps: log,
        stats: EventStats::of(trace),
    }
}
