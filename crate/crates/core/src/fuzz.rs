//! Differential fuzzing of the engines against each other and the oracle.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{run_detector, Engine, RaceWarning};
use crate::io::{generate_random, GenParams};
use crate::oracle::{all_schedulable_pairs, first_hb_race, OracleConfig, OracleError};
use crate::report::{pairs_for_engine, RacePair};
use crate::trace::{validate_well_formed, Trace};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    /// The epoch engine and the vector SHB engine disagree.
    EpochWarnings {
        shb: Vec<RaceWarning>,
        epoch: Vec<RaceWarning>,
    },
    /// Warnings of `narrower` are not all warnings of `wider`.
    WarningInclusion {
        narrower: Engine,
        wider: Engine,
        extra: Vec<RaceWarning>,
    },
    /// Pairs of `narrower` not found by `wider`.
    PairInclusion {
        narrower: Engine,
        wider: Engine,
        extra: Vec<RacePair>,
    },
    /// Timestamp-based pairs differ from the exhaustive search.
    Pairs {
        engine_only: Vec<RacePair>,
        oracle_only: Vec<RacePair>,
    },
    /// The first HB race is not schedulable.
    FirstRace(RacePair),
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::EpochWarnings { shb, epoch } => {
                write!(f, "shb-epoch warnings {epoch:?} differ from shb {shb:?}")
            }
            Mismatch::WarningInclusion {
                narrower,
                wider,
                extra,
            } => write!(f, "{narrower} warnings not raised by {wider}: {extra:?}"),
            Mismatch::PairInclusion {
                narrower,
                wider,
                extra,
            } => write!(f, "{narrower} pairs not found by {wider}: {extra:?}"),
            Mismatch::Pairs {
                engine_only,
                oracle_only,
            } => write!(
                f,
                "pair sets differ; engine only {engine_only:?}, oracle only {oracle_only:?}"
            ),
            Mismatch::FirstRace(p) => write!(f, "first hb race {p} is not schedulable"),
        }
    }
}

fn missing<T: Ord + Clone>(sub: &[T], sup: &[T]) -> Vec<T> {
    let sup: BTreeSet<&T> = sup.iter().collect();
    sub.iter().filter(|x| !sup.contains(x)).cloned().collect()
}

/// Engine-only checks; valid on traces of any size.
pub fn check_engines(trace: &Trace) -> Option<Mismatch> {
    let hb = run_detector(trace, Engine::Hb, false).warnings;
    let shb = run_detector(trace, Engine::Shb, false).warnings;
    let fhb = run_detector(trace, Engine::Fhb, false).warnings;
    let epoch = run_detector(trace, Engine::ShbEpoch, false).warnings;
    if shb != epoch {
        return Some(Mismatch::EpochWarnings { shb, epoch });
    }
    for (narrower, n, wider, w) in [
        (Engine::Fhb, &fhb, Engine::Shb, &shb),
        (Engine::Shb, &shb, Engine::Hb, &hb),
    ] {
        let extra = missing(n, w);
        if !extra.is_empty() {
            return Some(Mismatch::WarningInclusion {
                narrower,
                wider,
                extra,
            });
        }
    }
    let pairs = |e| pairs_for_engine(trace, e, None).expect("no cap");
    let (fhb_pairs, shb_pairs, hb_pairs) =
        (pairs(Engine::Fhb), pairs(Engine::Shb), pairs(Engine::Hb));
    for (narrower, n, wider, w) in [
        (Engine::Fhb, &fhb_pairs, Engine::Shb, &shb_pairs),
        (Engine::Shb, &shb_pairs, Engine::Hb, &hb_pairs),
    ] {
        let extra = missing(n, w);
        if !extra.is_empty() {
            return Some(Mismatch::PairInclusion {
                narrower,
                wider,
                extra,
            });
        }
    }
    None
}

/// Every differential check, including the oracle ones.
pub fn check_trace(trace: &Trace, cfg: &OracleConfig) -> Result<Option<Mismatch>, OracleError> {
    if let Some(m) = check_engines(trace) {
        return Ok(Some(m));
    }
    let oracle: Vec<RacePair> = all_schedulable_pairs(trace, cfg)?.into_iter().collect();
    let engine = pairs_for_engine(trace, Engine::Shb, None).expect("no cap");
    if engine != oracle {
        return Ok(Some(Mismatch::Pairs {
            engine_only: missing(&engine, &oracle),
            oracle_only: missing(&oracle, &engine),
        }));
    }
    if let Some(first) = first_hb_race(trace, cfg)? {
        if !oracle.contains(&first) {
            return Ok(Some(Mismatch::FirstRace(first)));
        }
    }
    Ok(None)
}

/// Greedily drop events while `fails` still holds and the trace stays
/// well-formed.
pub fn shrink(trace: &Trace, mut fails: impl FnMut(&Trace) -> bool) -> Trace {
    let mut current = trace.clone();
    loop {
        let mut progressed = false;
        let mut i = 0;
        while i < current.len() {
            let candidate = current.filtered(|e| e.idx != i);
            if validate_well_formed(&candidate).ok && fails(&candidate) {
                current = candidate;
                progressed = true;
            } else {
                i += 1;
            }
        }
        if !progressed {
            return current;
        }
    }
}

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub runs: usize,
    pub max_events: usize,
    pub max_threads: usize,
    pub max_vars: usize,
    pub max_locks: usize,
    pub seed: u64,
    pub oracle: OracleConfig,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            runs: 100,
            max_events: 12,
            max_threads: 4,
            max_vars: 3,
            max_locks: 2,
            seed: 0,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FuzzFailure {
    pub run: usize,
    pub params: GenParams,
    pub mismatch: Mismatch,
    pub shrunk: Trace,
}

#[derive(Clone, Debug)]
pub struct FuzzOutcome {
    pub passed: usize,
    pub runs: usize,
    pub failure: Option<FuzzFailure>,
}

/// Parameters of the `run`-th random trace for a fuzz seed.
pub fn fuzz_params(cfg: &FuzzConfig, rng: &mut ChaCha8Rng) -> GenParams {
    GenParams {
        threads: rng.gen_range(1..=cfg.max_threads.max(1)),
        events: rng.gen_range(0..=cfg.max_events),
        vars: rng.gen_range(1..=cfg.max_vars.max(1)),
        locks: rng.gen_range(0..=cfg.max_locks),
        fork_join: rng.gen_bool(0.5),
        seed: rng.gen(),
    }
}

/// Run `cfg.runs` differential checks, stopping at the first mismatch.
pub fn run_fuzz(cfg: &FuzzConfig) -> Result<FuzzOutcome, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for run in 0..cfg.runs {
        let params = fuzz_params(cfg, &mut rng);
        let trace = generate_random(&params);
        if let Some(mismatch) = check_trace(&trace, &cfg.oracle)? {
            let shrunk = shrink(&trace, |t| {
                matches!(check_trace(t, &cfg.oracle), Ok(Some(_)))
            });
            return Ok(FuzzOutcome {
                passed: run,
                runs: cfg.runs,
                failure: Some(FuzzFailure {
                    run,
                    params,
                    mismatch,
                    shrunk,
                }),
            });
        }
    }
    Ok(FuzzOutcome {
        passed: cfg.runs,
        runs: cfg.runs,
        failure: None,
    })
}
