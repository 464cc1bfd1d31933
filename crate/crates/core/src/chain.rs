//! The embedded jump chain of a Jackson network.
//!
//! With rates normalized to total one, every transition draws an increment
//! from a fixed table (arrival, internal transfer or departure). A service
//! event at an empty station is blocked by the constrained mapping and the
//! chain stays put, so self-loops appear on the boundary.

use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::network::{TargetSpec, ValidatedNetwork};

/// Queue lengths at every station.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ChainState(pub Vec<u32>);

impl ChainState {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }
    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }
}

impl From<Vec<u32>> for ChainState {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl AsRef<[u32]> for ChainState {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

impl Deref for ChainState {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl DerefMut for ChainState {
    fn deref_mut(&mut self) -> &mut [u32] {
        &mut self.0
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

/// Kind of an increment; station indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival(usize),
    Transfer(usize, usize),
    Departure(usize),
}

impl EventKind {
    /// Station whose service triggers the event, if any.
    pub fn served_station(self) -> Option<usize> {
        match self {
            EventKind::Arrival(_) => None,
            EventKind::Transfer(i, _) | EventKind::Departure(i) => Some(i),
        }
    }

    /// `(station, delta)` pairs of the unconstrained displacement.
    pub fn displacement_terms(self) -> [(usize, i32); 2] {
        match self {
            EventKind::Arrival(i) => [(i, 1), (i, 0)],
            EventKind::Transfer(i, j) => [(i, -1), (j, 1)],
            EventKind::Departure(i) => [(i, -1), (i, 0)],
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Arrival(i) => write!(f, "Arrival({})", i + 1),
            EventKind::Transfer(i, j) => write!(f, "Transfer({},{})", i + 1, j + 1),
            EventKind::Departure(i) => write!(f, "Departure({})", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementEvent {
    pub kind: EventKind,
    pub probability: f64,
}

impl IncrementEvent {
    /// Unconstrained displacement as a dense vector of length `d`.
    pub fn displacement(&self, d: usize) -> Vec<i32> {
        let mut out = vec![0; d];
        for (i, delta) in self.kind.displacement_terms() {
            out[i] += delta;
        }
        out
    }
}

/// Events with positive probability: arrivals by station, transfers in
/// lexicographic `(i, j)` order, then departures by station.
pub fn increment_table(vn: &ValidatedNetwork) -> Vec<IncrementEvent> {
    let d = vn.dim();
    let mut events = Vec::new();
    let mut push = |kind, probability: f64| {
        if probability > 0.0 {
            events.push(IncrementEvent { kind, probability });
        }
    };
    for i in 0..d {
        push(EventKind::Arrival(i), vn.lambda()[i]);
    }
    for i in 0..d {
        for j in 0..d {
            push(EventKind::Transfer(i, j), vn.mu()[i] * vn.routing()[i][j]);
        }
    }
    for i in 0..d {
        push(EventKind::Departure(i), vn.mu()[i] * vn.spec().exit_probability(i));
    }
    events
}

/// The constrained displacement `zeta(x, w)`: zero when `w` serves an empty
/// station, the raw displacement otherwise.
pub fn constrain(x: &[u32], event: &IncrementEvent) -> Vec<i32> {
    if is_blocked(x, event.kind) {
        vec![0; x.len()]
    } else {
        event.displacement(x.len())
    }
}

#[inline]
fn is_blocked(x: &[u32], kind: EventKind) -> bool {
    kind.served_station().is_some_and(|i| x[i] == 0)
}

#[inline]
fn apply(x: &mut [u32], kind: EventKind) {
    if is_blocked(x, kind) {
        return;
    }
    match kind {
        EventKind::Arrival(i) => x[i] += 1,
        EventKind::Transfer(i, j) => {
            x[i] -= 1;
            x[j] += 1;
        }
        EventKind::Departure(i) => x[i] -= 1,
    }
}

/// Increment table prepared for simulation and exact kernel evaluation.
#[derive(Debug, Clone)]
pub struct Dynamics {
    d: usize,
    events: Vec<IncrementEvent>,
    cumulative: Vec<f64>,
}

impl Dynamics {
    pub fn new(vn: &ValidatedNetwork) -> Self {
        let events = increment_table(vn);
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = events
            .iter()
            .map(|e| {
                acc += e.probability;
                acc
            })
            .collect();
        // The table sums to one up to rounding; pin the last cut so that
        // every u in [0, 1) selects an event.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Self { d: vn.dim(), events, cumulative }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn events(&self) -> &[IncrementEvent] {
        &self.events
    }

    /// Event selected by inverse transform for `u` in `[0, 1)`.
    #[inline]
    pub fn select(&self, u: f64) -> &IncrementEvent {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        &self.events[idx.min(self.events.len() - 1)]
    }

    /// Advances `x` in place by one transition driven by `u`.
    #[inline]
    pub fn step_in_place(&self, x: &mut [u32], u: f64) {
        let kind = self.select(u).kind;
        apply(x, kind);
    }

    pub fn step(&self, x: &ChainState, u: f64) -> ChainState {
        let mut next = x.clone();
        self.step_in_place(&mut next, u);
        next
    }

    /// Row `K(x, .)`: successors in order of first appearance, blocked
    /// events merged into the self-loop.
    pub fn kernel_row(&self, x: &[u32]) -> Vec<(ChainState, f64)> {
        let mut row: Vec<(ChainState, f64)> = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let mut y = x.to_vec();
            apply(&mut y, e.kind);
            match row.iter_mut().find(|(s, _)| s.0 == y) {
                Some(entry) => entry.1 += e.probability,
                None => row.push((ChainState(y), e.probability)),
            }
        }
        row
    }

    /// Whole-table probability of moving from `x` to `y` in one step.
    pub fn transition_probability(&self, x: &[u32], y: &[u32]) -> f64 {
        let mut z = x.to_vec();
        self.events
            .iter()
            .filter(|e| {
                z.copy_from_slice(x);
                apply(&mut z, e.kind);
                z == y
            })
            .map(|e| e.probability)
            .sum()
    }

    /// `log sum_w P(w) exp(theta . zeta(x, w))`.
    pub fn log_mgf(&self, x: &[u32], theta: &[f64]) -> f64 {
        self.events
            .iter()
            .map(|e| {
                let exponent = if is_blocked(x, e.kind) {
                    0.0
                } else {
                    e.kind.displacement_terms().iter().map(|&(i, delta)| theta[i] * f64::from(delta)).sum()
                };
                e.probability * f64::exp(exponent)
            })
            .sum::<f64>()
            .ln()
    }
}

/// One transition of the chain; see [`Dynamics::step`].
pub fn step(vn: &ValidatedNetwork, x: &ChainState, u: f64) -> ChainState {
    Dynamics::new(vn).step(x, u)
}

/// See [`Dynamics::kernel_row`].
pub fn kernel_row(vn: &ValidatedNetwork, x: &ChainState) -> Vec<(ChainState, f64)> {
    Dynamics::new(vn).kernel_row(x)
}

/// See [`Dynamics::log_mgf`].
pub fn log_mgf(vn: &ValidatedNetwork, x: &ChainState, theta: &[f64]) -> f64 {
    Dynamics::new(vn).log_mgf(x, theta)
}

/// Hamiltonian of the affine subsolution at an interior state: `psi(x, w)`
/// with `w` the potential weights. Zero up to rounding for every interior
/// state of a stable network.
pub fn subsolution_residual(vn: &ValidatedNetwork, _target: &TargetSpec, x: &ChainState) -> Result<f64> {
    if x.len() != vn.dim() {
        return Err(Error::DimensionMismatch { expected: vn.dim(), got: x.len() });
    }
    if x.contains(&0) {
        return Err(Error::BoundaryState(x.0.clone()));
    }
    Ok(log_mgf(vn, x, vn.potential_weights()))
}
