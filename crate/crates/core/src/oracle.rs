//! Ground truth for small traces.
//!
//! Computes the happens-before and schedulable-happens-before relations by
//! explicit transitive closure, and decides whether a conflicting pair is a
//! schedulable race by exhaustively searching for a reordering of the trace
//! that
//!
//! * keeps every thread projection a prefix of the original one,
//! * is itself a well-formed trace (locks are mutually exclusive),
//! * is downward closed under happens-before and never flips an ordered pair,
//! * lets every read that is not the last event of its thread observe the
//!   same last write as in the original trace,
//!
//! and ends with the two events of the pair next to each other.
//!
//! Everything here is exponential and guarded by [`OracleConfig`].

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::report::RacePair;
use crate::trace::{Op, Trace};

/// Hard limit imposed by the 64-bit event masks used in the search.
pub const MAX_SUPPORTED_EVENTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub max_events: usize,
    pub max_threads: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_events: 24,
            max_threads: 5,
        }
    }
}

impl OracleConfig {
    /// Default caps, with `max_events` overridden by `SHB_ORACLE_CAP`.
    pub fn from_env() -> Self {
        let mut cfg = OracleConfig::default();
        if let Some(n) = std::env::var("SHB_ORACLE_CAP")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            cfg.max_events = n;
        }
        cfg
    }

    fn check(&self, trace: &Trace) -> Result<(), OracleError> {
        let max_events = self.max_events.min(MAX_SUPPORTED_EVENTS);
        if trace.len() > max_events || trace.thread_count() > self.max_threads {
            return Err(OracleError::CapExceeded {
                events: trace.len(),
                threads: trace.thread_count(),
                max_events,
                max_threads: self.max_threads,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error(
        "trace has {events} events and {threads} threads; oracle cap is {max_events} events and {max_threads} threads"
    )]
    CapExceeded {
        events: usize,
        threads: usize,
        max_events: usize,
        max_threads: usize,
    },
    #[error("events {0} and {1} are not a conflicting pair in trace order")]
    NotConflicting(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    ThreadOrder,
    Hb,
    Shb,
}

/// Reflexive-transitive relation over event indices, stored as one
/// predecessor bitset per event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialOrderMatrix {
    pub flavor: Flavor,
    preds: Vec<Vec<u64>>,
}

impl PartialOrderMatrix {
    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    /// `i ≤ j` in this order.
    #[inline]
    pub fn leq(&self, i: usize, j: usize) -> bool {
        self.preds[j][i / 64] >> (i % 64) & 1 == 1
    }

    /// Neither `i ≤ j` nor `j ≤ i`.
    pub fn unordered(&self, i: usize, j: usize) -> bool {
        !self.leq(i, j) && !self.leq(j, i)
    }

    /// Strict predecessors of `j` as a 64-bit mask (traces ≤ 64 events).
    fn strict_pred_mask(&self, j: usize) -> u64 {
        self.preds[j][0] & !(1u64 << j)
    }
}

fn closure(trace: &Trace, flavor: Flavor) -> PartialOrderMatrix {
    let n = trace.len();
    let words = n.div_ceil(64).max(1);
    let mut preds: Vec<Vec<u64>> = Vec::with_capacity(n);
    let mut last_of_thread: Vec<Option<usize>> = vec![None; trace.thread_count()];
    let mut releases: Vec<Vec<usize>> = vec![Vec::new(); trace.lock_count()];
    let lw = trace.last_write_table();
    for e in trace.events() {
        let j = e.idx;
        let mut direct: Vec<usize> = Vec::new();
        direct.extend(last_of_thread[e.thread.index()]);
        if let Some(u) = e.partner() {
            direct.extend(last_of_thread[u.index()]);
            last_of_thread[u.index()] = Some(j);
        }
        last_of_thread[e.thread.index()] = Some(j);
        if flavor != Flavor::ThreadOrder {
            match e.op {
                Op::Acquire(l) => direct.extend(&releases[l.index()]),
                Op::Release(l) => releases[l.index()].push(j),
                _ => {}
            }
        }
        if flavor == Flavor::Shb {
            direct.extend(lw[j]);
        }
        let mut row = vec![0u64; words];
        row[j / 64] |= 1 << (j % 64);
        for i in direct {
            for (w, p) in row.iter_mut().zip(&preds[i]) {
                *w |= p;
            }
        }
        preds.push(row);
    }
    PartialOrderMatrix { flavor, preds }
}

/// Thread order, with fork/join events belonging to both threads.
pub fn thread_order(trace: &Trace) -> PartialOrderMatrix {
    closure(trace, Flavor::ThreadOrder)
}

/// Thread order plus every release-before-acquire edge on the same lock.
pub fn hb_closure(trace: &Trace, cfg: &OracleConfig) -> Result<PartialOrderMatrix, OracleError> {
    cfg.check(trace)?;
    Ok(closure(trace, Flavor::Hb))
}

/// Happens-before plus an edge from each read's last write to the read.
pub fn shb_closure(trace: &Trace, cfg: &OracleConfig) -> Result<PartialOrderMatrix, OracleError> {
    cfg.check(trace)?;
    Ok(closure(trace, Flavor::Shb))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct SearchState {
    included: u64,
    /// Events that may never be appended: the thread successor of a read
    /// that observed the wrong last write.
    blocked: u64,
    /// Holder of each lock as `thread + 1`, 0 when free.
    holders: Vec<u8>,
    /// Last write appended to each variable.
    last_writer: Vec<Option<u8>>,
}

struct Search<'a> {
    trace: &'a Trace,
    hb_preds: Vec<u64>,
    thread_successor: Vec<Option<usize>>,
}

impl<'a> Search<'a> {
    fn new(trace: &'a Trace, hb: &PartialOrderMatrix) -> Self {
        let mut thread_successor = vec![None; trace.len()];
        let mut last_of_thread: Vec<Option<usize>> = vec![None; trace.thread_count()];
        for e in trace.events() {
            let mut threads = vec![e.thread];
            threads.extend(e.partner());
            for t in threads {
                if let Some(p) = last_of_thread[t.index()] {
                    // Only reads need successors; reads belong to one thread.
                    if trace.event(p).is_read() && trace.event(p).thread == t {
                        thread_successor[p] = Some(e.idx);
                    }
                }
                last_of_thread[t.index()] = Some(e.idx);
            }
        }
        Search {
            trace,
            hb_preds: (0..trace.len()).map(|j| hb.strict_pred_mask(j)).collect(),
            thread_successor,
        }
    }

    fn initial(&self) -> SearchState {
        SearchState {
            included: 0,
            blocked: 0,
            holders: vec![0; self.trace.lock_count()],
            last_writer: vec![None; self.trace.var_count()],
        }
    }

    fn enabled(&self, s: &SearchState, i: usize) -> bool {
        let bit = 1u64 << i;
        if s.included & bit != 0 || s.blocked & bit != 0 {
            return false;
        }
        if self.hb_preds[i] & !s.included != 0 {
            return false;
        }
        let e = self.trace.event(i);
        match e.op {
            Op::Acquire(l) => s.holders[l.index()] == 0,
            Op::Release(l) => s.holders[l.index()] == e.thread.0 as u8 + 1,
            _ => true,
        }
    }

    fn append(&self, s: &SearchState, i: usize) -> SearchState {
        let mut next = s.clone();
        next.included |= 1 << i;
        let e = self.trace.event(i);
        match e.op {
            Op::Acquire(l) => next.holders[l.index()] = e.thread.0 as u8 + 1,
            Op::Release(l) => next.holders[l.index()] = 0,
            Op::Write(x) => next.last_writer[x.index()] = Some(i as u8),
            Op::Read(x) => {
                let observed = s.last_writer[x.index()].map(usize::from);
                if observed != self.trace.last_write_table()[i] {
                    if let Some(succ) = self.thread_successor[i] {
                        next.blocked |= 1 << succ;
                    }
                }
            }
            Op::Fork(_) | Op::Join(_) => {}
        }
        next
    }

    /// Can `first` then `second` be appended to `s`?
    fn closes_with(&self, s: &SearchState, first: usize, second: usize) -> bool {
        self.enabled(s, first) && self.enabled(&self.append(s, first), second)
    }

    /// Order in which the pair can end a witness from `s`, if any.
    fn pair_ending(&self, s: &SearchState, e1: usize, e2: usize) -> Option<[usize; 2]> {
        if self.closes_with(s, e1, e2) {
            Some([e1, e2])
        } else if self.closes_with(s, e2, e1) {
            Some([e2, e1])
        } else {
            None
        }
    }
}

/// Options for [`find_witness_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Skip states that can no longer lead to a witness for the pair.
    pub prune: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { prune: true }
    }
}

/// A complete reordering ending with the pair, if one exists.
pub fn find_witness(
    trace: &Trace,
    e1: usize,
    e2: usize,
    cfg: &OracleConfig,
) -> Result<Option<Vec<usize>>, OracleError> {
    find_witness_with(trace, e1, e2, cfg, SearchOptions::default())
}

pub fn find_witness_with(
    trace: &Trace,
    e1: usize,
    e2: usize,
    cfg: &OracleConfig,
    opts: SearchOptions,
) -> Result<Option<Vec<usize>>, OracleError> {
    cfg.check(trace)?;
    if e1 >= e2 || e2 >= trace.len() || !trace.event(e1).conflicts_with(trace.event(e2)) {
        return Err(OracleError::NotConflicting(e1, e2));
    }
    let hb = closure(trace, Flavor::Hb);
    let search = Search::new(trace, &hb);
    let pair_bits = (1u64 << e1) | (1u64 << e2);
    // Events that must precede the pair, and events that may appear at all.
    let required = (search.hb_preds[e1] | search.hb_preds[e2]) & !pair_bits;
    let allowed: u64 = if opts.prune {
        (0..trace.len())
            .filter(|&i| !hb.leq(e1, i) && !hb.leq(e2, i))
            .fold(0, |m, i| m | 1 << i)
    } else {
        u64::MAX
    };
    let needed = required | pair_bits;

    let mut w = Witness {
        search: &search,
        e1,
        e2,
        allowed,
        needed,
        prune: opts.prune,
        visited: HashSet::new(),
        path: Vec::new(),
    };
    let found = w.dfs(search.initial());
    let path = w.path;
    Ok(found.then_some(path))
}

struct Witness<'a> {
    search: &'a Search<'a>,
    e1: usize,
    e2: usize,
    allowed: u64,
    needed: u64,
    prune: bool,
    visited: HashSet<SearchState>,
    path: Vec<usize>,
}

impl Witness<'_> {
    fn dfs(&mut self, s: SearchState) -> bool {
        let search = self.search;
        if let Some(end) = search.pair_ending(&s, self.e1, self.e2) {
            self.path.extend(end);
            return true;
        }
        if self.prune {
            let dead = (0..search.trace.len())
                .filter(|&i| s.blocked & (search.hb_preds[i] | 1 << i) != 0)
                .fold(0u64, |m, i| m | 1 << i);
            if dead & self.needed != 0 {
                return false;
            }
        }
        if !self.visited.insert(s.clone()) {
            return false;
        }
        for i in 0..search.trace.len() {
            if i == self.e1
                || i == self.e2
                || self.allowed & (1 << i) == 0
                || !search.enabled(&s, i)
            {
                continue;
            }
            self.path.push(i);
            if self.dfs(search.append(&s, i)) {
                return true;
            }
            self.path.pop();
        }
        false
    }
}

/// Is `(e1, e2)` a race some happens-before-respecting correct reordering
/// can schedule back to back?
pub fn is_schedulable_pair(
    trace: &Trace,
    e1: usize,
    e2: usize,
    cfg: &OracleConfig,
) -> Result<bool, OracleError> {
    Ok(find_witness(trace, e1, e2, cfg)?.is_some())
}

/// Every schedulable conflicting pair, from one shared exploration of all
/// reachable reordering prefixes.
pub fn all_schedulable_pairs(
    trace: &Trace,
    cfg: &OracleConfig,
) -> Result<BTreeSet<RacePair>, OracleError> {
    cfg.check(trace)?;
    let n = trace.len();
    let mut pending: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..j).map(move |i| (i, j)))
        .filter(|&(i, j)| trace.event(i).conflicts_with(trace.event(j)))
        .collect();
    let mut found = BTreeSet::new();
    if pending.is_empty() {
        return Ok(found);
    }
    let hb = closure(trace, Flavor::Hb);
    let search = Search::new(trace, &hb);
    let mut visited = HashSet::new();
    let mut stack = vec![search.initial()];
    while let Some(s) = stack.pop() {
        if !visited.insert(s.clone()) {
            continue;
        }
        pending.retain(|&(i, j)| {
            if search.pair_ending(&s, i, j).is_some() {
                found.insert(RacePair::new(i, j));
                false
            } else {
                true
            }
        });
        if pending.is_empty() {
            break;
        }
        for i in 0..n {
            if search.enabled(&s, i) {
                let next = search.append(&s, i);
                if !visited.contains(&next) {
                    stack.push(next);
                }
            }
        }
    }
    Ok(found)
}

/// The happens-before race `(e, e′)` with the earliest `e′`, ties broken
/// by the latest `e`.
pub fn first_hb_race(trace: &Trace, cfg: &OracleConfig) -> Result<Option<RacePair>, OracleError> {
    let hb = hb_closure(trace, cfg)?;
    for j in 0..trace.len() {
        for i in (0..j).rev() {
            if trace.event(i).conflicts_with(trace.event(j)) && hb.unordered(i, j) {
                return Ok(Some(RacePair::new(i, j)));
            }
        }
    }
    Ok(None)
}

/// Independently re-check that `witness` is a correct reordering of `trace`
/// that respects happens-before and ends with `e1` and `e2` adjacent.
pub fn verify_witness(
    trace: &Trace,
    witness: &[usize],
    e1: usize,
    e2: usize,
) -> Result<(), String> {
    let n = trace.len();
    let k = witness.len();
    if k < 2 {
        return Err("witness shorter than two events".into());
    }
    let tail = [witness[k - 2], witness[k - 1]];
    if tail != [e1, e2] && tail != [e2, e1] {
        return Err(format!("witness ends with {tail:?}, not the pair"));
    }
    let mut pos = vec![None; n];
    for (p, &i) in witness.iter().enumerate() {
        if i >= n || pos[i].is_some() {
            return Err(format!("event {i} repeated or out of range"));
        }
        pos[i] = Some(p);
    }
    // The reordering must itself be a well-formed trace.
    let sub = trace_in_order(trace, witness);
    let report = crate::trace::validate_well_formed(&sub);
    if let Some(v) = report.violations.iter().find(|v| {
        matches!(
            v.rule,
            crate::trace::Rule::ReentrantAcquire
                | crate::trace::Rule::AcquireOfHeldLock
                | crate::trace::Rule::ReleaseWithoutAcquire
                | crate::trace::Rule::ReleaseByNonOwner
        )
    }) {
        return Err(format!("not lock well-formed: {v}"));
    }
    // Thread projections are prefixes of the original projections.
    for t in 0..trace.thread_count() {
        let t = crate::trace::ThreadId(t as u32);
        let original = trace.thread_projection(t);
        let reordered: Vec<usize> = witness
            .iter()
            .copied()
            .filter(|&i| trace.event(i).belongs_to(t))
            .collect();
        if !original.starts_with(&reordered) {
            return Err(format!(
                "projection on {} is not a prefix",
                trace.thread_name(t)
            ));
        }
        // Non-final reads observe the original last write.
        let lw = trace.last_write_table();
        for (p, &i) in reordered.iter().enumerate() {
            let e = trace.event(i);
            if !e.is_read() || e.thread != t || p + 1 == reordered.len() {
                continue;
            }
            let x = e.op.var();
            let at = pos[i].unwrap();
            let observed = witness[..at]
                .iter()
                .rev()
                .copied()
                .find(|&w| trace.event(w).is_write() && trace.event(w).op.var() == x);
            if observed != lw[i] {
                return Err(format!(
                    "read {i} observes {observed:?} instead of {:?}",
                    lw[i]
                ));
            }
        }
    }
    // Downward closed under happens-before, with ordered pairs kept in order.
    let hb = closure(trace, Flavor::Hb);
    for &j in witness {
        for i in 0..n {
            if i != j && hb.leq(i, j) {
                match (pos[i], pos[j]) {
                    (Some(pi), Some(pj)) if pi < pj => {}
                    _ => return Err(format!("happens-before edge {i} -> {j} not respected")),
                }
            }
        }
    }
    Ok(())
}

fn trace_in_order(trace: &Trace, order: &[usize]) -> Trace {
    let mut b = crate::trace::TraceBuilder::new();
    // Pre-intern every thread so ids line up with the original trace.
    for &i in order {
        let e = trace.event(i);
        b.push(
            trace.thread_name(e.thread),
            e.op.kind(),
            trace.target_name(e),
            Some(i.to_string()),
        )
        .expect("names come from an existing trace");
    }
    b.build()
}
