//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` doubles as a
//! summary.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shb::detect::{run_detector, Engine, RaceWarning};
use shb::fixtures;
use shb::io::{generate_random, parse, serialize, GenParams};
use shb::oracle::{all_schedulable_pairs, first_hb_race, shb_closure, OracleConfig};
use shb::report::{build_report, pairs_for_engine, render, Format, RacePair, ReportKind};
use shb::trace::{OpKind, Trace, TraceBuilder};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {n} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn pairs(v: &[(usize, usize)]) -> BTreeSet<RacePair> {
    v.iter().map(|&(i, j)| RacePair::new(i, j)).collect()
}

fn engine_pairs(t: &Trace, e: Engine) -> BTreeSet<RacePair> {
    pairs_for_engine(t, e, None).unwrap().into_iter().collect()
}

fn warnings(t: &Trace, e: Engine) -> BTreeSet<RaceWarning> {
    run_detector(t, e, false).warnings.into_iter().collect()
}

/// Traces drawn with parameters varying by seed, within the given bounds.
fn random_trace(
    seed: u64,
    max_events: usize,
    max_threads: usize,
    max_vars: usize,
    max_locks: usize,
) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    generate_random(&GenParams {
        threads: rng.gen_range(1..=max_threads),
        events: rng.gen_range(0..=max_events),
        vars: rng.gen_range(1..=max_vars),
        locks: rng.gen_range(0..=max_locks),
        fork_join: rng.gen_bool(0.5),
        seed,
    })
}

#[test]
fn criterion_1_figure_goldens() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_owned());
        }
    };
    let f1 = fixtures::fig1();
    check(
        "fig1 hb pairs",
        engine_pairs(&f1, Engine::Hb) == pairs(&[(0, 3), (1, 2)]),
    );
    check(
        "fig1 shb pairs",
        engine_pairs(&f1, Engine::Shb) == pairs(&[(1, 2)]),
    );

    let f2 = fixtures::fig2();
    check(
        "fig2 shb pairs",
        engine_pairs(&f2, Engine::Shb) == pairs(&[(0, 3), (1, 2)]),
    );
    check(
        "fig2 fhb warnings",
        run_detector(&f2, Engine::Fhb, false).warned_events() == vec![2],
    );

    let f3 = fixtures::fig3();
    // Writes e2 and e5 race with every later access to x from t3 and t4.
    let hb3 = pairs(&[
        (1, 6),
        (4, 6),
        (1, 8),
        (4, 8),
        (1, 9),
        (4, 9),
        (1, 11),
        (4, 11),
    ]);
    check("fig3 hb pairs", engine_pairs(&f3, Engine::Hb) == hb3);
    check(
        "fig3 shb pairs",
        engine_pairs(&f3, Engine::Shb) == pairs(&[(1, 6), (4, 6)]),
    );

    let f4 = fixtures::fig4();
    let shb4 = engine_pairs(&f4, Engine::Shb);
    let hb4 = engine_pairs(&f4, Engine::Hb);
    for p in [(1, 4), (8, 11), (3, 10)] {
        check(
            "fig4 unschedulable pair excluded",
            !shb4.contains(&RacePair::new(p.0, p.1)),
        );
        check(
            "fig4 unschedulable pair is an hb race",
            hb4.contains(&RacePair::new(p.0, p.1)),
        );
    }
    check("fig4 (e2,e3) included", shb4.contains(&RacePair::new(1, 2)));

    let elapsed = start.elapsed();
    check("under 1 s", elapsed < Duration::from_secs(1));
    verdict(
        1,
        "figure goldens",
        failures.is_empty(),
        &format!(
            "{} mismatches, {:.3}s {:?}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures
        ),
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let start = Instant::now();
    let cfg = OracleConfig::default();
    let mut traces: Vec<Trace> = fixtures::all().into_iter().map(|(_, t)| t).collect();
    traces.extend((0..5_000u64).map(|s| random_trace(s, 14, 4, 3, 2)));
    let mut mismatches = Vec::new();
    let mut hb_differs = 0;
    for (i, t) in traces.iter().enumerate() {
        let engine = engine_pairs(t, Engine::Shb);
        let oracle = all_schedulable_pairs(t, &cfg).unwrap();
        if engine != oracle {
            mismatches.push(i);
        }
        if engine_pairs(t, Engine::Hb) != oracle {
            hb_differs += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "oracle equivalence",
        mismatches.is_empty() && elapsed < Duration::from_secs(300),
        &format!(
            "{} traces, {} mismatches, hb pairs differ from the oracle on {hb_differs}, {:.1}s",
            traces.len(),
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_3_timestamp_isomorphism() {
    let cfg = OracleConfig::default();
    let mut mismatches = 0;
    let mut checked = 0u64;
    for seed in 0..1_000u64 {
        let t = random_trace(seed + 100_000, 20, 4, 3, 2);
        let stamps = run_detector(&t, Engine::Shb, true).timestamps.unwrap();
        let order = shb_closure(&t, &cfg).unwrap();
        for j in 0..t.len() {
            for i in 0..=j {
                checked += 1;
                if stamps.get(i).leq(stamps.get(j)) != order.leq(i, j) {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(
        3,
        "timestamp isomorphism",
        mismatches == 0,
        &format!("1000 traces, {checked} ordered pairs, {mismatches} mismatches"),
    );
}

#[test]
fn criterion_4_epoch_equivalence() {
    let mut traces: Vec<Trace> = fixtures::all().into_iter().map(|(_, t)| t).collect();
    traces.extend((0..10_000u64).map(|s| random_trace(s + 200_000, 200, 8, 4, 3)));
    let mismatches = traces
        .iter()
        .filter(|t| warnings(t, Engine::Shb) != warnings(t, Engine::ShbEpoch))
        .count();
    let racy = traces
        .iter()
        .filter(|t| !warnings(t, Engine::Shb).is_empty())
        .count();
    verdict(
        4,
        "epoch equivalence",
        mismatches == 0,
        &format!(
            "{} traces ({racy} with warnings), {mismatches} mismatches",
            traces.len()
        ),
    );
}

#[test]
fn criterion_5_inclusion_chain() {
    let mut traces: Vec<Trace> = fixtures::all().into_iter().map(|(_, t)| t).collect();
    traces.extend((0..5_000u64).map(|s| random_trace(s + 300_000, 200, 6, 4, 3)));
    traces.extend((0..5_000u64).map(|s| random_trace(s + 400_000, 14, 4, 3, 2)));
    let mut violations = Vec::new();
    let mut strict = [0usize; 2];
    for (i, t) in traces.iter().enumerate() {
        let (fhb, shb, hb) = (
            warnings(t, Engine::Fhb),
            warnings(t, Engine::Shb),
            warnings(t, Engine::Hb),
        );
        if !fhb.is_subset(&shb) {
            violations.push(format!("trace {i}: fhb warnings not within shb"));
        }
        if !shb.is_subset(&hb) {
            violations.push(format!("trace {i}: shb warnings not within hb"));
        }
        let (sp, hp) = (engine_pairs(t, Engine::Shb), engine_pairs(t, Engine::Hb));
        if !sp.is_subset(&hp) {
            violations.push(format!("trace {i}: shb pairs not within hb"));
        }
        strict[0] += usize::from(fhb.len() < shb.len());
        strict[1] += usize::from(shb.len() < hb.len());
    }
    verdict(
        5,
        "inclusion chain",
        violations.is_empty(),
        &format!(
            "{} traces, {} violations (fhb < shb on {}, shb < hb on {}) {:?}",
            traces.len(),
            violations.len(),
            strict[0],
            strict[1],
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_6_first_race_soundness() {
    let cfg = OracleConfig::default();
    let mut traces: Vec<Trace> = fixtures::all().into_iter().map(|(_, t)| t).collect();
    traces.extend((0..5_000u64).map(|s| random_trace(s + 500_000, 18, 4, 3, 2)));
    let mut with_race = 0;
    let mut violations = 0;
    for t in &traces {
        if let Some(first) = first_hb_race(t, &cfg).unwrap() {
            with_race += 1;
            if !all_schedulable_pairs(t, &cfg).unwrap().contains(&first) {
                violations += 1;
            }
        }
    }
    verdict(
        6,
        "first-race soundness",
        violations == 0 && with_race > 0,
        &format!(
            "{} traces, {with_race} with an hb race, {violations} violations",
            traces.len()
        ),
    );
}

/// Eight threads over 512 variables; 90% reads. Each thread mostly touches
/// its own slice of variables and occasionally a shared one, and takes one
/// of four locks around short critical sections.
fn read_heavy_trace(n: usize, seed: u64) -> Trace {
    const THREADS: usize = 8;
    const VARS: usize = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..THREADS).map(|t| format!("T{t}")).collect();
    let vars: Vec<String> = (0..VARS).map(|x| format!("v{x}")).collect();
    let locks: Vec<String> = (0..4).map(|l| format!("L{l}")).collect();
    let mut held: Option<(usize, usize, usize)> = None; // thread, lock, events left
    let mut b = TraceBuilder::new();
    while b.len() < n {
        let t = match held {
            Some((t, _, _)) => t,
            None => rng.gen_range(0..THREADS),
        };
        if let Some((t, l, left)) = held {
            if left == 0 || b.len() + 1 == n {
                b.push(&names[t], OpKind::Release, &locks[l], None).unwrap();
                held = None;
                continue;
            }
            held = Some((t, l, left - 1));
        } else if rng.gen_bool(0.01) && b.len() + 2 < n {
            let l = rng.gen_range(0..locks.len());
            b.push(&names[t], OpKind::Acquire, &locks[l], None).unwrap();
            held = Some((t, l, rng.gen_range(1..6)));
            continue;
        }
        let x = if rng.gen_bool(0.8) {
            t * (VARS / THREADS) + rng.gen_range(0..VARS / THREADS)
        } else {
            rng.gen_range(0..VARS)
        };
        let kind = if rng.gen_bool(0.9) {
            OpKind::Read
        } else {
            OpKind::Write
        };
        b.push(&names[t], kind, &vars[x], None).unwrap();
    }
    b.build()
}

fn best_of(runs: usize, mut f: impl FnMut()) -> Duration {
    (0..runs)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn criterion_7_performance() {
    let big = read_heavy_trace(1_000_000, 7);
    let half = read_heavy_trace(500_000, 7);
    let mut warned = 0;
    let t_big = best_of(3, || {
        warned = run_detector(&big, Engine::Shb, false).warnings.len()
    });
    let t_half = best_of(3, || {
        run_detector(&half, Engine::Shb, false);
    });
    let t_epoch = best_of(3, || {
        run_detector(&big, Engine::ShbEpoch, false);
    });
    let growth = t_big.as_secs_f64() / t_half.as_secs_f64();
    let speedup = t_big.as_secs_f64() / t_epoch.as_secs_f64();
    let ok = t_big < Duration::from_secs(10) && growth <= 2.5 && speedup >= 1.0;
    verdict(
        7,
        "performance",
        ok,
        &format!(
            "1M events / 8 threads: shb {:.3}s ({warned} warnings), 500k {:.3}s, growth {growth:.2}x, shb-epoch {:.3}s, speedup {speedup:.2}x",
            t_big.as_secs_f64(),
            t_half.as_secs_f64(),
            t_epoch.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_round_trip_and_determinism() {
    let mut failures = Vec::new();
    for (name, t) in fixtures::all() {
        let text = serialize(&t);
        if parse(&text).unwrap() != t || serialize(&parse(&text).unwrap()) != text {
            failures.push(format!("{name} round trip"));
        }
    }
    for (name, text) in [
        ("fig1", fixtures::FIG1),
        ("fig2", fixtures::FIG2),
        ("fig3", fixtures::FIG3),
        ("fig4", fixtures::FIG4),
    ] {
        if serialize(&parse(text).unwrap()) != text {
            failures.push(format!("{name} text identity"));
        }
    }
    for seed in 0..200u64 {
        let p = GenParams {
            threads: 4,
            events: 150,
            vars: 3,
            locks: 2,
            fork_join: seed % 2 == 0,
            seed,
        };
        let (a, b) = (generate_random(&p), generate_random(&p));
        if serialize(&a) != serialize(&b) {
            failures.push(format!("seed {seed} generation"));
        }
        if parse(&serialize(&a)).unwrap() != a {
            failures.push(format!("seed {seed} round trip"));
        }
        for engine in Engine::ALL {
            let render_once = |t: &Trace| {
                let r = build_report(t, engine, ReportKind::Pairs, None);
                render(&r, ReportKind::Pairs, Format::Json)
                    + &render(&r, ReportKind::Locations, Format::Text)
            };
            if render_once(&a) != render_once(&b) {
                failures.push(format!("seed {seed} {engine} report"));
            }
        }
    }
    verdict(
        8,
        "round trip and determinism",
        failures.is_empty(),
        &format!(
            "4 fixtures, 200 seeds x 4 engines, {} failures {:?}",
            failures.len(),
            failures
        ),
    );
}
