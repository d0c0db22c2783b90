//! Vector times, epochs, and adaptive timestamps.
//!
//! Thread components are addressed by dense thread index. A [`VectorTime`]
//! stores a dense array that grows on demand; components past the end read
//! as zero, so equality and ordering are over the semantic map and never
//! depend on trailing zeros.

use std::cmp::Ordering;
use std::fmt;

pub type Counter = u64;

#[derive(Clone, Default)]
pub struct VectorTime {
    components: Vec<Counter>,
}

impl VectorTime {
    /// The all-zero vector time.
    pub fn bottom() -> Self {
        VectorTime {
            components: Vec::new(),
        }
    }

    /// All-zero vector with storage for `threads` components.
    pub fn with_threads(threads: usize) -> Self {
        VectorTime {
            components: vec![0; threads],
        }
    }

    pub fn from_slice(components: &[Counter]) -> Self {
        VectorTime {
            components: components.to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, t: usize) -> Counter {
        self.components.get(t).copied().unwrap_or(0)
    }

    /// In-place component update `V := V[n/t]`.
    #[inline]
    pub fn set(&mut self, t: usize, n: Counter) {
        if t >= self.components.len() {
            if n == 0 {
                return;
            }
            self.components.resize(t + 1, 0);
        }
        self.components[t] = n;
    }

    /// `V[n/t]` as a new value.
    pub fn updated(&self, n: Counter, t: usize) -> Self {
        let mut v = self.clone();
        v.set(t, n);
        v
    }

    #[inline]
    pub fn increment(&mut self, t: usize) {
        let n = self.get(t) + 1;
        self.set(t, n);
    }

    /// Pointwise `self ⊑ other`.
    #[inline]
    pub fn leq(&self, other: &VectorTime) -> bool {
        let shared = self.components.len().min(other.components.len());
        self.components[..shared]
            .iter()
            .zip(&other.components[..shared])
            .all(|(a, b)| a <= b)
            && self.components[shared..].iter().all(|&a| a == 0)
    }

    /// In-place pointwise maximum.
    #[inline]
    pub fn join(&mut self, other: &VectorTime) {
        if other.components.len() > self.components.len() {
            self.components.resize(other.components.len(), 0);
        }
        for (a, &b) in self.components.iter_mut().zip(&other.components) {
            if b > *a {
                *a = b;
            }
        }
    }

    pub fn joined(&self, other: &VectorTime) -> Self {
        let mut v = self.clone();
        v.join(other);
        v
    }

    /// Overwrite with `other`, reusing the allocation.
    #[inline]
    pub fn copy_from(&mut self, other: &VectorTime) {
        self.components.clear();
        self.components.extend_from_slice(&other.components);
    }

    pub fn is_bottom(&self) -> bool {
        self.components.iter().all(|&c| c == 0)
    }

    /// Components up to the last non-zero one.
    pub fn as_slice(&self) -> &[Counter] {
        let end = self
            .components
            .iter()
            .rposition(|&c| c != 0)
            .map_or(0, |i| i + 1);
        &self.components[..end]
    }

    /// Dense components padded or truncated to `threads` entries.
    pub fn to_dense(&self, threads: usize) -> Vec<Counter> {
        (0..threads).map(|t| self.get(t)).collect()
    }
}

impl PartialEq for VectorTime {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

impl Eq for VectorTime {}

impl PartialOrd for VectorTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.leq(other), other.leq(self)) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

impl fmt::Debug for VectorTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

pub fn vt_leq(v1: &VectorTime, v2: &VectorTime) -> bool {
    v1.leq(v2)
}

pub fn vt_join(v1: &VectorTime, v2: &VectorTime) -> VectorTime {
    v1.joined(v2)
}

pub fn vt_update(v: &VectorTime, n: Counter, u: usize) -> VectorTime {
    v.updated(n, u)
}

/// `c@t`, standing for the vector time `⊥[c/t]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Epoch {
    pub clock: Counter,
    pub thread: usize,
}

impl Epoch {
    /// `0@0`, the epoch analogue of bottom.
    pub const ZERO: Epoch = Epoch {
        clock: 0,
        thread: 0,
    };

    pub fn new(clock: Counter, thread: usize) -> Self {
        Epoch { clock, thread }
    }

    #[inline]
    pub fn leq(self, v: &VectorTime) -> bool {
        self.clock <= v.get(self.thread)
    }

    pub fn to_vector(self) -> VectorTime {
        VectorTime::bottom().updated(self.clock, self.thread)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.clock, self.thread)
    }
}

pub fn epoch_leq(e: Epoch, v: &VectorTime) -> bool {
    e.leq(v)
}

/// A timestamp stored either as an epoch or as a full vector time.
#[derive(Clone, Debug)]
pub enum AdaptiveTime {
    Epoch(Epoch),
    Vector(VectorTime),
}

impl Default for AdaptiveTime {
    fn default() -> Self {
        AdaptiveTime::Epoch(Epoch::ZERO)
    }
}

impl AdaptiveTime {
    #[inline]
    pub fn leq(&self, v: &VectorTime) -> bool {
        match self {
            AdaptiveTime::Epoch(e) => e.leq(v),
            AdaptiveTime::Vector(w) => w.leq(v),
        }
    }

    pub fn is_epoch(&self) -> bool {
        matches!(self, AdaptiveTime::Epoch(_))
    }

    pub fn to_vector(&self) -> VectorTime {
        match self {
            AdaptiveTime::Epoch(e) => e.to_vector(),
            AdaptiveTime::Vector(v) => v.clone(),
        }
    }
}

impl PartialEq for AdaptiveTime {
    /// Semantic equality, independent of representation.
    fn eq(&self, other: &Self) -> bool {
        self.to_vector() == other.to_vector()
    }
}

pub fn adaptive_leq(a: &AdaptiveTime, v: &VectorTime) -> bool {
    a.leq(v)
}
