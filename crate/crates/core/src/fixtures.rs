//! The four worked-example traces used throughout the test suites.
//!
//! Event `eN` in the discussion of each trace is index `N - 1` here.

use crate::io::parse;
use crate::trace::Trace;

/// Read-then-write in one thread, read-then-write in another; only the
/// middle pair can actually be scheduled back to back.
pub const FIG1: &str = "\
t1 r x
t1 w y
t2 r y
t2 w x
";

/// Two reads racing with two writes; both pairs are real races.
pub const FIG2: &str = "\
t1 r x
t1 r y
t2 w y
t2 w x
";

/// Lock-protected writes followed by a fork/join region.
pub const FIG3: &str = "\
t1 acq l
t1 w x
t1 rel l
t2 acq l
t2 w x
t2 rel l
t3 r x
t3 fork t4
t4 w x
t4 w x
t3 join t4
t3 r x
";

/// Two critical sections on the same lock with accesses interleaved from
/// lock-free threads.
pub const FIG4: &str = "\
t1 acq l
t1 w x
t2 r x
t2 w y
t2 w x
t1 r x
t1 rel l
t4 acq l
t4 w z
t3 r z
t3 w y
t3 w z
t4 r z
t4 rel l
";

pub fn fig1() -> Trace {
    parse(FIG1).expect("fixture parses")
}

pub fn fig2() -> Trace {
    parse(FIG2).expect("fixture parses")
}

pub fn fig3() -> Trace {
    parse(FIG3).expect("fixture parses")
}

pub fn fig4() -> Trace {
    parse(FIG4).expect("fixture parses")
}

pub fn all() -> Vec<(&'static str, Trace)> {
    vec![
        ("fig1", fig1()),
        ("fig2", fig2()),
        ("fig3", fig3()),
        ("fig4", fig4()),
    ]
}
