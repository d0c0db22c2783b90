//! Epoch-optimized SHB detection.
//!
//! Read and write histories are stored as [`AdaptiveTime`]. The write
//! history is an epoch exactly when the last write to the variable is
//! ordered after every earlier write; it drops back to an epoch whenever a
//! write dominates the current history. The read history is semi-adaptive:
//! once inflated to a vector it stays a vector. Thread, lock and last-write
//! clocks are always full vectors since they carry the partial order.
//!
//! Warnings are identical to [`Engine::Shb`](crate::detect::Engine::Shb).

use crate::detect::{DetectorOutput, Engine, EventStats, StepWarnings};
use crate::trace::{Event, Op, Trace};
use crate::vclock::{AdaptiveTime, Epoch, VectorTime};

#[derive(Clone, Debug)]
pub struct EpochState {
    threads: Vec<VectorTime>,
    locks: Vec<VectorTime>,
    last_writes: Vec<VectorTime>,
    reads: Vec<AdaptiveTime>,
    writes: Vec<AdaptiveTime>,
}

/// `⊥[a/t][b/u]`, applied left to right so `t == u` leaves `b`.
fn inflate(a: u64, t: usize, b: u64, u: usize) -> VectorTime {
    let mut v = VectorTime::bottom();
    v.set(t, a);
    v.set(u, b);
    v
}

impl EpochState {
    pub fn new(trace: &Trace) -> Self {
        let nt = trace.thread_count();
        let nv = trace.var_count();
        let bottom = VectorTime::with_threads(nt);
        EpochState {
            threads: (0..nt).map(|t| bottom.updated(1, t)).collect(),
            locks: vec![bottom.clone(); trace.lock_count()],
            last_writes: vec![bottom; nv],
            reads: vec![AdaptiveTime::default(); nv],
            writes: vec![AdaptiveTime::default(); nv],
        }
    }

    pub fn thread_clock(&self, t: usize) -> &VectorTime {
        &self.threads[t]
    }

    pub fn read_history(&self, x: usize) -> &AdaptiveTime {
        &self.reads[x]
    }

    pub fn write_history(&self, x: usize) -> &AdaptiveTime {
        &self.writes[x]
    }

    pub fn step(&mut self, e: &Event) -> StepWarnings {
        let t = e.thread.index();
        match e.op {
            Op::Acquire(l) => self.threads[t].join(&self.locks[l.index()]),
            Op::Release(l) => {
                self.locks[l.index()].copy_from(&self.threads[t]);
                self.threads[t].increment(t);
            }
            Op::Fork(u) => {
                self.threads[u.index()] = self.threads[t].updated(1, u.index());
                self.threads[t].increment(t);
            }
            Op::Join(u) => {
                let child = self.threads[u.index()].clone();
                self.threads[t].join(&child);
            }
            Op::Read(x) => return self.read(t, x.index()),
            Op::Write(x) => return self.write(t, x.index()),
        }
        StepWarnings::default()
    }

    /// Read handler.
    pub fn read(&mut self, t: usize, x: usize) -> StepWarnings {
        let clock = &mut self.threads[t];
        let warn = StepWarnings {
            with_read: false,
            with_write: !self.writes[x].leq(clock),
        };
        clock.join(&self.last_writes[x]);
        let local = clock.get(t);
        match &mut self.reads[x] {
            AdaptiveTime::Epoch(Epoch {
                clock: c,
                thread: u,
            }) => {
                let (c, u) = (*c, *u);
                self.reads[x] = if c <= clock.get(u) {
                    AdaptiveTime::Epoch(Epoch::new(local, t))
                } else {
                    AdaptiveTime::Vector(inflate(local, t, c, u))
                };
            }
            AdaptiveTime::Vector(v) => v.set(t, local),
        }
        warn
    }

    /// Write handler.
    pub fn write(&mut self, t: usize, x: usize) -> StepWarnings {
        let clock = &mut self.threads[t];
        let mut warn = StepWarnings {
            with_read: !self.reads[x].leq(clock),
            with_write: false,
        };
        let local = clock.get(t);
        if self.writes[x].leq(clock) {
            self.writes[x] = AdaptiveTime::Epoch(Epoch::new(local, t));
        } else {
            warn.with_write = true;
            match &mut self.writes[x] {
                AdaptiveTime::Epoch(Epoch {
                    clock: c,
                    thread: u,
                }) => {
                    let inflated = inflate(local, t, *c, *u);
                    self.writes[x] = AdaptiveTime::Vector(inflated);
                }
                AdaptiveTime::Vector(v) => v.set(t, local),
            }
        }
        self.last_writes[x].copy_from(clock);
        // Trailing W_x(t) := C_t(t); a no-op on the epoch branch, which
        // already holds local@t.
        match &mut self.writes[x] {
            AdaptiveTime::Vector(v) => v.set(t, local),
            AdaptiveTime::Epoch(e) => debug_assert_eq!(*e, Epoch::new(local, t)),
        }
        clock.increment(t);
        warn
    }
}

pub fn run_epoch_detector(trace: &Trace) -> DetectorOutput {
    let mut state = EpochState::new(trace);
    let mut warnings = Vec::new();
    for e in trace.events() {
        state.step(e).push_into(e.idx, &mut warnings);
    }
    DetectorOutput {
        engine: Engine::ShbEpoch,
        warnings,
        timestamps: None,
        stats: EventStats::of(trace),
    }
}
