//! Racy event pairs, program-location pairs, and report rendering.
//!
//! Streaming engines only flag the later event of a race. Pairs are
//! recovered in a second pass over the recorded per-event timestamps: a
//! conflicting pair `(e1, e2)` is a schedulable race iff `e2` has no earlier
//! event in its thread, or `e1` is not ordered before that event `f`. With
//! SHB timestamps that ordering is `e1 <tr f` and `C_e1 ⊑ C_f`.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::ser::{Serialize, SerializeTuple, Serializer};
use serde_json::json;
use thiserror::Error;

use crate::detect::{run_detector, DetectorOutput, Engine, EventStats, RaceWarning, TimestampLog};
use crate::trace::Trace;

/// A racy pair of event indices, `e1 < e2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RacePair {
    pub e1: usize,
    pub e2: usize,
}

impl RacePair {
    pub fn new(e1: usize, e2: usize) -> Self {
        debug_assert!(e1 < e2);
        RacePair { e1, e2 }
    }
}

// Reports list pairs by the later event first.
impl Ord for RacePair {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.e2, self.e1).cmp(&(other.e2, other.e1))
    }
}

impl PartialOrd for RacePair {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for RacePair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&self.e1)?;
        t.serialize_element(&self.e2)?;
        t.end()
    }
}

impl fmt::Display for RacePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.e1, self.e2)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("events {0} and {1} do not conflict")]
    NotConflicting(usize, usize),
    #[error("variable '{var}' has more than {cap} accesses; pair enumeration skipped")]
    CapExceeded { var: String, cap: usize },
}

/// Is the conflicting pair `(e1, e2)` a schedulable race, given SHB
/// timestamps?
pub fn schedulable_pair_test(
    trace: &Trace,
    stamps: &TimestampLog,
    e1: usize,
    e2: usize,
) -> Result<bool, PairError> {
    if e1 >= e2 || !trace.event(e1).conflicts_with(trace.event(e2)) {
        return Err(PairError::NotConflicting(e1, e2));
    }
    Ok(passes(trace.last_thread_event_table(), stamps, e1, e2))
}

#[inline]
fn passes(ltho: &[Option<usize>], stamps: &TimestampLog, e1: usize, e2: usize) -> bool {
    match ltho[e2] {
        None => true,
        Some(f) => !(e1 <= f && stamps.get(e1).leq(stamps.get(f))),
    }
}

/// Earlier conflicting accesses for every access, grouped per variable.
fn for_each_conflict(
    trace: &Trace,
    cap: Option<usize>,
    mut visit: impl FnMut(usize, usize),
) -> Result<(), PairError> {
    // Per variable: every access so far, and the writes among them.
    let mut accesses: Vec<Vec<usize>> = vec![Vec::new(); trace.var_count()];
    let mut writes: Vec<Vec<usize>> = vec![Vec::new(); trace.var_count()];
    for e in trace.events() {
        if let Some(x) = e.op.var() {
            accesses[x.index()].push(e.idx);
            if e.is_write() {
                writes[x.index()].push(e.idx);
            }
        }
    }
    if let Some(cap) = cap {
        if let Some((x, _)) = accesses.iter().enumerate().find(|(_, a)| a.len() > cap) {
            return Err(PairError::CapExceeded {
                var: trace.var_name(crate::trace::VarId(x as u32)).to_owned(),
                cap,
            });
        }
    }
    for (list, ws) in accesses.iter().zip(&writes) {
        let mut seen_writes = 0;
        for (k, &j) in list.iter().enumerate() {
            let ej = trace.event(j);
            // A read only conflicts with earlier writes.
            let earlier = if ej.is_write() {
                &list[..k]
            } else {
                &ws[..seen_writes]
            };
            for &i in earlier {
                if ej.conflicts_with(trace.event(i)) {
                    visit(i, j);
                }
            }
            if ej.is_write() {
                seen_writes += 1;
            }
        }
    }
    Ok(())
}

fn sorted(mut v: Vec<RacePair>) -> Vec<RacePair> {
    v.sort();
    v
}

/// All schedulable races, from SHB timestamps.
pub fn enumerate_pairs(
    trace: &Trace,
    stamps: &TimestampLog,
    cap: Option<usize>,
) -> Result<Vec<RacePair>, PairError> {
    let ltho = trace.last_thread_event_table();
    let mut out = Vec::new();
    for_each_conflict(trace, cap, |i, j| {
        if passes(ltho, stamps, i, j) {
            out.push(RacePair::new(i, j));
        }
    })?;
    Ok(sorted(out))
}

/// All happens-before races, from HB timestamps.
pub fn enumerate_pairs_hb(
    trace: &Trace,
    stamps: &TimestampLog,
    cap: Option<usize>,
) -> Result<Vec<RacePair>, PairError> {
    let mut out = Vec::new();
    for_each_conflict(trace, cap, |i, j| {
        if !stamps.get(i).leq(stamps.get(j)) {
            out.push(RacePair::new(i, j));
        }
    })?;
    Ok(sorted(out))
}

/// Pairs behind the force-ordering engine's warnings: the earlier access's
/// own component is not covered by the clock the later one was checked
/// against. Only the own component is compared because forced joins copy
/// access histories, not full clocks.
pub fn enumerate_pairs_fhb(
    trace: &Trace,
    stamps: &TimestampLog,
    cap: Option<usize>,
) -> Result<Vec<RacePair>, PairError> {
    let checks = stamps
        .force_checks
        .as_ref()
        .expect("force-ordering timestamps");
    let mut out = Vec::new();
    for_each_conflict(trace, cap, |i, j| {
        let c = checks[j].as_ref().expect("accesses record their checks");
        let against = if trace.event(i).is_write() {
            Some(&c.against_writes)
        } else {
            c.against_reads.as_ref()
        };
        let u = trace.event(i).thread.index();
        if against.is_some_and(|a| stamps.get(i).get(u) > a.get(u)) {
            out.push(RacePair::new(i, j));
        }
    })?;
    Ok(sorted(out))
}

/// Pair set for `engine`; shb-epoch uses the vector SHB timestamps.
pub fn pairs_for_engine(
    trace: &Trace,
    engine: Engine,
    cap: Option<usize>,
) -> Result<Vec<RacePair>, PairError> {
    let stamp_engine = if engine == Engine::ShbEpoch {
        Engine::Shb
    } else {
        engine
    };
    let out = run_detector(trace, stamp_engine, true);
    let stamps = out.timestamps.as_ref().expect("recorded");
    match stamp_engine {
        Engine::Hb => enumerate_pairs_hb(trace, stamps, cap),
        Engine::Fhb => enumerate_pairs_fhb(trace, stamps, cap),
        _ => enumerate_pairs(trace, stamps, cap),
    }
}

/// Unordered location pairs, each stored with the smaller location first.
pub fn location_pairs(trace: &Trace, pairs: &[RacePair]) -> BTreeSet<(String, String)> {
    pairs
        .iter()
        .map(|p| {
            let a = trace.event(p.e1).display_location();
            let b = trace.event(p.e2).display_location();
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Warnings,
    Pairs,
    Locations,
}

impl FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "warnings" => Ok(ReportKind::Warnings),
            "pairs" => Ok(ReportKind::Pairs),
            "locations" => Ok(ReportKind::Locations),
            _ => Err(format!(
                "unknown report '{s}' (expected warnings, pairs or locations)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format '{s}' (expected text, json or csv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRow {
    pub pair: RacePair,
    pub loc1: String,
    pub loc2: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RaceReport {
    pub engine: Engine,
    pub event_count: usize,
    pub warnings: Vec<RaceWarning>,
    /// `None` when pairs were not requested or enumeration hit the cap.
    pub pairs: Option<Vec<PairRow>>,
    pub location_pairs: Option<BTreeSet<(String, String)>>,
    pub stats: EventStats,
    /// Explains a degraded report, e.g. a skipped pair enumeration.
    pub notice: Option<String>,
}

impl RaceReport {
    pub fn has_races(&self) -> bool {
        !self.warnings.is_empty()
    }

    pub fn race_pairs(&self) -> Option<Vec<RacePair>> {
        self.pairs
            .as_ref()
            .map(|rows| rows.iter().map(|r| r.pair).collect())
    }
}

/// Run `engine` over `trace` and, unless only warnings are requested,
/// enumerate pairs and location pairs.
pub fn build_report(
    trace: &Trace,
    engine: Engine,
    kind: ReportKind,
    pair_cap: Option<usize>,
) -> RaceReport {
    let out: DetectorOutput = run_detector(trace, engine, false);
    let mut report = RaceReport {
        engine,
        event_count: trace.len(),
        warnings: out.warnings,
        pairs: None,
        location_pairs: None,
        stats: out.stats,
        notice: None,
    };
    if kind == ReportKind::Warnings {
        return report;
    }
    match pairs_for_engine(trace, engine, pair_cap) {
        Ok(pairs) => {
            let unlocated = pairs
                .iter()
                .flat_map(|p| [p.e1, p.e2])
                .filter(|&i| trace.event(i).location.is_none())
                .collect::<BTreeSet<_>>()
                .len();
            if unlocated > 0 {
                report.notice = Some(format!(
                    "{} without a location; using event indices",
                    plural(unlocated, "event")
                ));
            }
            report.location_pairs = Some(location_pairs(trace, &pairs));
            report.pairs = Some(
                pairs
                    .into_iter()
                    .map(|p| PairRow {
                        pair: p,
                        loc1: trace.event(p.e1).display_location(),
                        loc2: trace.event(p.e2).display_location(),
                    })
                    .collect(),
            );
        }
        Err(e) => report.notice = Some(format!("{e}; reporting warnings only")),
    }
    report
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Render a report. Pairs are ordered by `e2`, then `e1`.
pub fn render(report: &RaceReport, kind: ReportKind, format: Format) -> String {
    match format {
        Format::Json => render_json(report),
        Format::Csv => render_csv(report, kind),
        Format::Text => render_text(report, kind),
    }
}

fn render_json(r: &RaceReport) -> String {
    let pairs = r.race_pairs();
    let locs: Option<Vec<[&str; 2]>> = r
        .location_pairs
        .as_ref()
        .map(|s| s.iter().map(|(a, b)| [a.as_str(), b.as_str()]).collect());
    let v = json!({
        "engine": r.engine.name(),
        "event_count": r.event_count,
        "warnings": r.warnings,
        "pairs": pairs,
        "location_pairs": locs,
        "stats": r.stats,
        "counts": {
            "warnings": r.warnings.len(),
            "pairs": pairs.as_ref().map(Vec::len),
            "location_pairs": locs.as_ref().map(Vec::len),
        },
        "notice": r.notice,
    });
    let mut s = serde_json::to_string(&v).expect("report serializes");
    s.push('\n');
    s
}

fn render_csv(r: &RaceReport, kind: ReportKind) -> String {
    let mut s = String::new();
    match (kind, &r.pairs, &r.location_pairs) {
        (ReportKind::Pairs, Some(rows), _) => {
            s.push_str("e1,e2,loc1,loc2\n");
            for row in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    row.pair.e1,
                    row.pair.e2,
                    csv_field(&row.loc1),
                    csv_field(&row.loc2)
                );
            }
        }
        (ReportKind::Locations, _, Some(locs)) => {
            s.push_str("loc1,loc2\n");
            for (a, b) in locs {
                let _ = writeln!(s, "{},{}", csv_field(a), csv_field(b));
            }
        }
        _ => {
            s.push_str("event,kind\n");
            for w in &r.warnings {
                let _ = writeln!(s, "{},{}", w.event, w.kind.name());
            }
        }
    }
    s
}

fn render_text(r: &RaceReport, kind: ReportKind) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "engine {}: {}, {}",
        r.engine,
        plural(r.event_count, "event"),
        plural(r.warnings.len(), "warning")
    );
    if let Some(p) = &r.pairs {
        let _ = write!(s, ", {}", plural(p.len(), "pair"));
    }
    if let Some(l) = &r.location_pairs {
        let _ = write!(s, ", {}", plural(l.len(), "location pair"));
    }
    s.push('\n');
    if let Some(n) = &r.notice {
        let _ = writeln!(s, "note: {n}");
    }
    match (kind, &r.pairs, &r.location_pairs) {
        (ReportKind::Pairs, Some(rows), _) => {
            for row in rows {
                let _ = writeln!(
                    s,
                    "{} {} {} {}",
                    row.pair.e1, row.pair.e2, row.loc1, row.loc2
                );
            }
        }
        (ReportKind::Locations, _, Some(locs)) => {
            for (a, b) in locs {
                let _ = writeln!(s, "{a} {b}");
            }
        }
        _ => {
            for w in &r.warnings {
                let _ = writeln!(s, "{} {}", w.event, w.kind.name());
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::io::{generate_random, parse, GenParams};
    use crate::oracle::{all_schedulable_pairs, OracleConfig};

    fn set(v: &[(usize, usize)]) -> Vec<RacePair> {
        sorted(v.iter().map(|&(i, j)| RacePair::new(i, j)).collect())
    }

    fn shb_stamps(t: &Trace) -> TimestampLog {
        run_detector(t, Engine::Shb, true).timestamps.unwrap()
    }

    #[test]
    fn pair_test_examples() {
        let f1 = fixtures::fig1();
        let s1 = shb_stamps(&f1);
        assert!(schedulable_pair_test(&f1, &s1, 1, 2).unwrap());
        assert!(!schedulable_pair_test(&f1, &s1, 0, 3).unwrap());
        let f4 = fixtures::fig4();
        assert!(!schedulable_pair_test(&f4, &shb_stamps(&f4), 3, 10).unwrap());
        assert_eq!(
            schedulable_pair_test(&f1, &s1, 0, 1),
            Err(PairError::NotConflicting(0, 1))
        );
    }

    #[test]
    fn shb_pairs_on_figures() {
        let f3 = fixtures::fig3();
        assert_eq!(
            enumerate_pairs(&f3, &shb_stamps(&f3), None).unwrap(),
            set(&[(1, 6), (4, 6)])
        );
        let f2 = fixtures::fig2();
        assert_eq!(
            enumerate_pairs(&f2, &shb_stamps(&f2), None).unwrap(),
            set(&[(1, 2), (0, 3)])
        );
        let f4 = fixtures::fig4();
        let p4 = enumerate_pairs(&f4, &shb_stamps(&f4), None).unwrap();
        for bad in [(1, 4), (8, 11), (3, 10)] {
            assert!(!p4.contains(&RacePair::new(bad.0, bad.1)));
        }
        assert!(p4.contains(&RacePair::new(1, 2)));
    }

    #[test]
    fn hb_pairs_on_figures() {
        let hb = |t: &Trace| pairs_for_engine(t, Engine::Hb, None).unwrap();
        assert_eq!(hb(&fixtures::fig1()), set(&[(0, 3), (1, 2)]));
        // The lock orders the two writes and the fork and join order t3
        // around t4, leaving t1 and t2 racing with everything after them.
        assert_eq!(
            hb(&fixtures::fig3()),
            set(&[
                (1, 6),
                (4, 6),
                (1, 8),
                (4, 8),
                (1, 9),
                (4, 9),
                (1, 11),
                (4, 11)
            ])
        );
        let single = parse("t1 w x\nt1 r x\nt1 w x").unwrap();
        assert!(hb(&single).is_empty());
    }

    #[test]
    fn fhb_pairs_on_fig2() {
        let f2 = fixtures::fig2();
        assert_eq!(
            pairs_for_engine(&f2, Engine::Fhb, None).unwrap(),
            set(&[(1, 2)])
        );
    }

    #[test]
    fn cap_degrades_to_warnings() {
        let r = build_report(&fixtures::fig3(), Engine::Shb, ReportKind::Pairs, Some(3));
        assert!(r.pairs.is_none());
        assert!(r.notice.as_deref().unwrap().contains("'x'"));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn json_fig1() {
        let r = build_report(&fixtures::fig1(), Engine::Shb, ReportKind::Pairs, None);
        let v: serde_json::Value =
            serde_json::from_str(&render(&r, ReportKind::Pairs, Format::Json)).unwrap();
        assert_eq!(v["engine"], "shb");
        assert_eq!(v["event_count"], 4);
        assert_eq!(v["pairs"], json!([[1, 2]]));
        assert_eq!(v["warnings"], json!([{"event": 2, "kind": "with_write"}]));
        assert_eq!(v["counts"]["warnings"], 1);
        assert_eq!(v["stats"]["reads"], 2);
        assert_eq!(v["location_pairs"], json!([["1", "2"]]));
        assert_eq!(
            v["notice"],
            "2 events without a location; using event indices"
        );
    }

    #[test]
    fn located_pairs_have_no_notice() {
        let t = crate::io::parse("t1 w x a.c:1\nt2 w x a.c:2").unwrap();
        let r = build_report(&t, Engine::Shb, ReportKind::Locations, None);
        assert_eq!(r.notice, None);
        assert_eq!(r.location_pairs.unwrap().len(), 1);
    }

    #[test]
    fn empty_report() {
        let r = build_report(&Trace::empty(), Engine::Shb, ReportKind::Pairs, None);
        let v: serde_json::Value =
            serde_json::from_str(&render(&r, ReportKind::Pairs, Format::Json)).unwrap();
        assert_eq!(
            v["counts"],
            json!({"warnings": 0, "pairs": 0, "location_pairs": 0})
        );
        assert_eq!(
            render(&r, ReportKind::Warnings, Format::Text),
            "engine shb: 0 events, 0 warnings, 0 pairs, 0 location pairs\n"
        );
    }

    #[test]
    fn location_pairs_are_symmetric() {
        let t = parse("t1 w x A:1\nt2 w x B:2\nt1 w x A:1\nt2 r y C:3\nt1 w y C:3").unwrap();
        let pairs = vec![
            RacePair::new(0, 1),
            RacePair::new(1, 2),
            RacePair::new(3, 4),
        ];
        let locs = location_pairs(&t, &pairs);
        let expected: BTreeSet<(String, String)> = [("A:1", "B:2"), ("C:3", "C:3")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(locs, expected);
    }

    #[test]
    fn csv_rows() {
        let t = parse("t1 w x A:1\nt2 r x").unwrap();
        let r = build_report(&t, Engine::Shb, ReportKind::Pairs, None);
        assert_eq!(
            render(&r, ReportKind::Pairs, Format::Csv),
            "e1,e2,loc1,loc2\n0,1,A:1,1\n"
        );
        assert_eq!(
            render(&r, ReportKind::Warnings, Format::Csv),
            "event,kind\n1,with_write\n"
        );
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }

    #[test]
    fn pair_order_is_by_later_event() {
        let mut v = vec![
            RacePair::new(0, 5),
            RacePair::new(3, 4),
            RacePair::new(1, 5),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                RacePair::new(3, 4),
                RacePair::new(0, 5),
                RacePair::new(1, 5)
            ]
        );
    }

    fn random(seed: u64, events: usize) -> Trace {
        generate_random(&GenParams {
            threads: 2 + (seed % 3) as usize,
            events,
            vars: 1 + (seed % 3) as usize,
            locks: (seed % 3) as usize,
            fork_join: seed.is_multiple_of(2),
            seed,
        })
    }

    #[test]
    fn warnings_mark_exactly_the_later_events_of_pairs() {
        for seed in 0..500 {
            let t = random(seed, 60);
            let pairs = pairs_for_engine(&t, Engine::Shb, None).unwrap();
            let mut second: Vec<usize> = pairs.iter().map(|p| p.e2).collect();
            second.sort();
            second.dedup();
            assert_eq!(
                run_detector(&t, Engine::Shb, false).warned_events(),
                second,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn hb_pairs_mark_hb_warnings() {
        for seed in 0..300 {
            let t = random(seed, 60);
            let pairs = pairs_for_engine(&t, Engine::Hb, None).unwrap();
            let mut second: Vec<usize> = pairs.iter().map(|p| p.e2).collect();
            second.sort();
            second.dedup();
            assert_eq!(
                run_detector(&t, Engine::Hb, false).warned_events(),
                second,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn fhb_pairs_mark_fhb_warnings() {
        for seed in 0..300 {
            let t = random(seed, 60);
            let pairs = pairs_for_engine(&t, Engine::Fhb, None).unwrap();
            let mut second: Vec<usize> = pairs.iter().map(|p| p.e2).collect();
            second.sort();
            second.dedup();
            assert_eq!(
                run_detector(&t, Engine::Fhb, false).warned_events(),
                second,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn shb_pairs_within_hb_pairs() {
        for seed in 0..300 {
            let t = random(seed, 80);
            let shb: BTreeSet<_> = pairs_for_engine(&t, Engine::Shb, None)
                .unwrap()
                .into_iter()
                .collect();
            let hb: BTreeSet<_> = pairs_for_engine(&t, Engine::Hb, None)
                .unwrap()
                .into_iter()
                .collect();
            assert!(shb.is_subset(&hb), "seed {seed}");
        }
    }

    #[test]
    fn pairs_match_oracle_on_small_traces() {
        let cfg = OracleConfig::default();
        for seed in 0..300 {
            let t = random(seed, 12);
            let got: BTreeSet<_> = pairs_for_engine(&t, Engine::Shb, None)
                .unwrap()
                .into_iter()
                .collect();
            assert_eq!(got, all_schedulable_pairs(&t, &cfg).unwrap(), "seed {seed}");
        }
    }
}
