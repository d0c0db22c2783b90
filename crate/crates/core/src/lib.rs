//! Predictive data race detection over recorded execution traces.
//!
//! The pipeline is: [`io::parse`] a text trace, [`trace::validate_well_formed`]
//! it, run one of the streaming engines in [`detect`] (or the epoch variant in
//! [`epoch`]), and turn the result into pairs and reports with [`report`].
//! [`oracle`] is an exhaustive reference for small traces.

pub mod cli;
pub mod detect;
pub mod epoch;
pub mod fixtures;
pub mod fuzz;
pub mod io;
pub mod oracle;
pub mod report;
pub mod trace;
pub mod vclock;

pub use detect::{run_detector, DetectorOutput, Engine, RaceKind, RaceWarning};
pub use epoch::run_epoch_detector;
pub use io::{generate_random, parse, serialize, GenParams, ParseError};
pub use report::{RacePair, RaceReport};
pub use trace::{Event, Op, Trace};
pub use vclock::{Epoch, VectorTime};
