//! Exact overflow probabilities from the first-transition linear system.
//!
//! For `x` outside the target `A = {v^T x >= n}` and away from the origin,
//! `p(x) = sum_y K(x, y) p(y)` with `p = 1` on `A` and `p(0) = 0`. Stations
//! outside the target are unbounded; they are truncated at reflecting caps
//! which are doubled until the answer stabilises.

use std::collections::HashMap;

use crate::chain::{ChainState, Dynamics};
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::network::ValidatedNetwork;

pub const DEFAULT_MAX_STATES: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    /// Gauss-Seidel, falling back to a dense direct solve for small systems
    /// that fail to converge.
    #[default]
    Auto,
    GaussSeidel,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactConfig {
    /// Relative residual target of the iterative solver.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_states: usize,
    /// Largest system handed to the dense solver.
    pub dense_limit: usize,
    pub method: SolveMethod,
    /// Relative change below which cap doubling stops.
    pub truncation_tol: f64,
    pub max_doublings: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 1_000_000,
            max_states: DEFAULT_MAX_STATES,
            dense_limit: 2000,
            method: SolveMethod::Auto,
            truncation_tol: 1e-10,
            max_doublings: 12,
        }
    }
}

/// Bijection between transient states and `0..len()` in lexicographic order.
#[derive(Debug, Clone)]
pub struct StateIndexer {
    n: u32,
    v: Vec<u8>,
    caps: Vec<u32>,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl StateIndexer {
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn v(&self) -> &[u8] {
        &self.v
    }
    pub fn caps(&self) -> &[u32] {
        &self.caps
    }
    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }
    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }
    pub fn index_of(&self, x: &[u32]) -> Option<usize> {
        self.index.get(x).copied()
    }
    pub fn in_target(&self, x: &[u32]) -> bool {
        self.target_value(x) >= u64::from(self.n)
    }
    fn target_value(&self, x: &[u32]) -> u64 {
        self.v.iter().zip(x).filter(|(&b, _)| b == 1).map(|(_, &xi)| u64::from(xi)).sum()
    }
    /// Applies the reflecting caps of the non-target stations.
    pub fn clamp(&self, x: &mut [u32]) {
        for (i, xi) in x.iter_mut().enumerate() {
            if self.v[i] == 0 {
                *xi = (*xi).min(self.caps[i]);
            }
        }
    }
}

/// Enumerates `{x != 0 : v^T x < n, x_i <= cap_i for v_i = 0}`.
///
/// `caps` has one entry per station; entries of target stations are ignored.
pub fn enumerate_states(n: u32, v: &[u8], caps: &[u32], max_states: usize) -> Result<StateIndexer> {
    if n < 1 {
        return Err(Error::InvalidArgument("overflow level n must be >= 1".into()));
    }
    if caps.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: caps.len() });
    }
    if v.iter().all(|&b| b == 0) {
        return Err(Error::EmptyTarget);
    }
    if v.iter().zip(caps).any(|(&b, &c)| b == 0 && c == 0) {
        return Err(Error::InvalidArgument("caps of non-target stations must be positive".into()));
    }
    let d = v.len();
    let mut states = Vec::new();
    let mut current = vec![0u32; d];
    fn recurse(
        k: usize,
        budget: u32,
        v: &[u8],
        caps: &[u32],
        current: &mut Vec<u32>,
        states: &mut Vec<Vec<u32>>,
        max_states: usize,
    ) -> Result<()> {
        if k == v.len() {
            if current.iter().any(|&c| c > 0) {
                if states.len() == max_states {
                    return Err(Error::TooLarge { limit: max_states });
                }
                states.push(current.clone());
            }
            return Ok(());
        }
        let upper = if v[k] == 1 { budget } else { caps[k] };
        for value in 0..=upper {
            current[k] = value;
            let rest = if v[k] == 1 { budget - value } else { budget };
            recurse(k + 1, rest, v, caps, current, states, max_states)?;
        }
        current[k] = 0;
        Ok(())
    }
    recurse(0, n - 1, v, caps, &mut current, &mut states, max_states)?;
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let caps = caps.iter().zip(v).map(|(&c, &b)| if b == 1 { 0 } else { c }).collect();
    Ok(StateIndexer { n, v: v.to_vec(), caps, states, index })
}

/// Sparse system `diag_i p_i - sum_j a_ij p_j = rhs_i`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub indexer: StateIndexer,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// `1 - K(x, x)`, self-loops from capping included.
    pub diag: Vec<f64>,
    pub rhs: Vec<f64>,
    /// One-step mass into the target from each row.
    pub to_target: Vec<f64>,
    /// One-step mass into the origin from each row.
    pub to_origin: Vec<f64>,
}

impl LinearSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }
    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }
    /// Off-diagonal `(column, coefficient)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `|| rhs - A p ||_inf`.
    pub fn residual(&self, p: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let off: f64 = self.row(i).map(|(j, a)| a * p[j]).sum();
                (self.rhs[i] - self.diag[i] * p[i] + off).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Values at the absorbing parts of the state space.
#[derive(Debug, Clone, Copy)]
struct Boundary<'a> {
    target: f64,
    origin: f64,
    /// Extra absorbing state with its value (taboo systems).
    taboo: Option<(&'a [u32], f64)>,
}

impl Boundary<'_> {
    const FIRST_PASSAGE: Boundary<'static> = Boundary { target: 1.0, origin: 0.0, taboo: None };

    fn value_of(&self, indexer: &StateIndexer, y: &[u32]) -> Option<f64> {
        if indexer.in_target(y) {
            Some(self.target)
        } else if y.iter().all(|&c| c == 0) {
            Some(self.origin)
        } else {
            match self.taboo {
                Some((t, value)) if t == y => Some(value),
                _ => None,
            }
        }
    }
}

fn assemble(dynamics: &Dynamics, indexer: StateIndexer, boundary: Boundary<'_>) -> LinearSystem {
    let size = indexer.len();
    let mut row_ptr = Vec::with_capacity(size + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = vec![1.0; size];
    let mut rhs = vec![0.0; size];
    let mut to_target = vec![0.0; size];
    let mut to_origin = vec![0.0; size];
    let mut scratch: Vec<(usize, f64)> = Vec::new();

    for i in 0..size {
        let x = indexer.state(i);
        if let Some(value) = boundary.value_of(&indexer, x) {
            // Taboo state: identity row.
            rhs[i] = value;
            row_ptr.push(cols.len());
            continue;
        }
        scratch.clear();
        for (mut y, p) in dynamics.kernel_row(x) {
            indexer.clamp(&mut y);
            if indexer.in_target(&y) {
                to_target[i] += p;
            } else if y.is_origin() {
                to_origin[i] += p;
            }
            if let Some(value) = boundary.value_of(&indexer, &y) {
                rhs[i] += p * value;
            } else if y.0 == x {
                diag[i] -= p;
            } else {
                let j = indexer.index_of(&y).expect("successor inside the enumerated box");
                match scratch.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += p,
                    None => scratch.push((j, p)),
                }
            }
        }
        scratch.sort_by_key(|e| e.0);
        for &(j, p) in &scratch {
            cols.push(j);
            vals.push(p);
        }
        row_ptr.push(cols.len());
    }
    LinearSystem { indexer, row_ptr, cols, vals, diag, rhs, to_target, to_origin }
}

/// Assembles the first-passage system over the states enumerated for
/// `(n, v, caps)`.
pub fn first_passage_system(
    vn: &ValidatedNetwork,
    n: u32,
    v: &[u8],
    caps: &[u32],
    max_states: usize,
) -> Result<LinearSystem> {
    if v.len() != vn.dim() {
        return Err(Error::DimensionMismatch { expected: vn.dim(), got: v.len() });
    }
    let indexer = enumerate_states(n, v, caps, max_states)?;
    Ok(assemble(&Dynamics::new(vn), indexer, Boundary::FIRST_PASSAGE))
}

fn gauss_seidel(system: &LinearSystem, tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let size = system.len();
    let scale = system.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let mut p = vec![0.0; size];
    if scale == 0.0 {
        return Ok(p);
    }
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        for i in 0..size {
            let off: f64 = system.row(i).map(|(j, a)| a * p[j]).sum();
            p[i] = (system.rhs[i] + off) / system.diag[i];
        }
        residual = system.residual(&p) / scale;
        if residual <= tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { sweeps: max_sweeps, residual })
}

fn dense(system: &LinearSystem) -> Result<Vec<f64>> {
    let size = system.len();
    let mut a = vec![0.0; size * size];
    for i in 0..size {
        a[i * size + i] = system.diag[i];
        for (j, coeff) in system.row(i) {
            a[i * size + j] -= coeff;
        }
    }
    solve_dense(a, system.rhs.clone(), 1e-15).ok_or_else(|| Error::InvalidArgument("singular first-passage system".into()))
}

/// Solves the system; see [`SolveMethod`].
///
/// The iteration itself is unclamped; only the returned values are clamped
/// to `[0, 1]`.
pub fn solve_system(system: &LinearSystem, config: &ExactConfig) -> Result<Vec<f64>> {
    let raw = match config.method {
        SolveMethod::GaussSeidel => gauss_seidel(system, config.tol, config.max_sweeps)?,
        SolveMethod::Dense => dense(system)?,
        SolveMethod::Auto => match gauss_seidel(system, config.tol, config.max_sweeps) {
            Ok(p) => p,
            Err(Error::NoConvergence { .. }) if system.len() <= config.dense_limit => dense(system)?,
            Err(e) => return Err(e),
        },
    };
    Ok(raw.into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
}

/// Value of a solved system at `x`, applying one explicit transition when
/// `x` is absorbing for the system (the origin, or the taboo state).
fn evaluate_from(
    dynamics: &Dynamics,
    system: &LinearSystem,
    solution: &[f64],
    boundary: Boundary<'_>,
    x: &[u32],
) -> f64 {
    let indexer = &system.indexer;
    dynamics
        .kernel_row(x)
        .into_iter()
        .map(|(mut y, p)| {
            indexer.clamp(&mut y);
            let value = boundary
                .value_of(indexer, &y)
                .unwrap_or_else(|| solution[indexer.index_of(&y).expect("successor enumerated")]);
            p * value
        })
        .sum()
}

/// Exact value with the truncation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub probability: f64,
    pub caps: Vec<u32>,
    pub states: usize,
}

fn solve_at(
    dynamics: &Dynamics,
    n: u32,
    v: &[u8],
    x: &[u32],
    caps: &[u32],
    config: &ExactConfig,
) -> Result<(f64, usize)> {
    let indexer = enumerate_states(n, v, caps, config.max_states)?;
    let system = assemble(dynamics, indexer, Boundary::FIRST_PASSAGE);
    let solution = solve_system(&system, config)?;
    let value = if x.iter().all(|&c| c == 0) {
        evaluate_from(dynamics, &system, &solution, Boundary::FIRST_PASSAGE, x)
    } else {
        solution[system.indexer.index_of(x).expect("start state enumerated")]
    };
    Ok((value, system.len()))
}

/// `P_x(T_target <= T_origin)` with `T_origin = inf{k >= 1 : Q(k) = 0}`.
pub fn overflow_probability_detailed(
    vn: &ValidatedNetwork,
    n: u32,
    v: &[u8],
    x: &ChainState,
    config: &ExactConfig,
) -> Result<ExactSolution> {
    let d = vn.dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if v.iter().all(|&b| b == 0) {
        return Err(Error::EmptyTarget);
    }
    let target_value: u64 = v.iter().zip(x.iter()).filter(|(&b, _)| b == 1).map(|(_, &c)| u64::from(c)).sum();
    if target_value >= u64::from(n) {
        return Ok(ExactSolution { probability: 1.0, caps: vec![0; d], states: 0 });
    }
    let dynamics = Dynamics::new(vn);
    let mut caps: Vec<u32> = (0..d)
        .map(|i| if v[i] == 1 { 0 } else { (2 * n).max(8).max(2 * x[i]) })
        .collect();
    let (mut value, mut states) = solve_at(&dynamics, n, v, x, &caps, config)?;
    if v.iter().all(|&b| b == 1) {
        return Ok(ExactSolution { probability: value, caps, states });
    }
    for _ in 0..config.max_doublings {
        let doubled: Vec<u32> = caps.iter().zip(v).map(|(&c, &b)| if b == 1 { 0 } else { 2 * c }).collect();
        let (next, next_states) = solve_at(&dynamics, n, v, x, &doubled, config)?;
        let change = (next - value).abs();
        caps = doubled;
        value = next;
        states = next_states;
        if change <= config.truncation_tol * value.abs() {
            return Ok(ExactSolution { probability: value, caps, states });
        }
    }
    Err(Error::TruncationNoConverge { doublings: config.max_doublings })
}

pub fn overflow_probability(
    vn: &ValidatedNetwork,
    n: u32,
    v: &[u8],
    x: &ChainState,
    config: &ExactConfig,
) -> Result<f64> {
    overflow_probability_detailed(vn, n, v, x, config).map(|s| s.probability)
}

/// Both sides of the regeneration identity at `x`:
///
/// ```text
/// p(x) = P_x(T_A < T_0, no return to x first) / P_x(no return to x before T_A or T_0)
/// ```
///
/// Each side of the ratio is solved with `x` made absorbing.
pub fn regeneration_check(
    vn: &ValidatedNetwork,
    n: u32,
    v: &[u8],
    x: &ChainState,
    config: &ExactConfig,
) -> Result<(f64, f64)> {
    if x.is_origin() {
        return Err(Error::InvalidArgument("regeneration identity needs x != 0".into()));
    }
    let lhs = overflow_probability_detailed(vn, n, v, x, config)?;
    if lhs.states == 0 {
        return Err(Error::AlreadyInTarget(x.0.clone()));
    }
    let dynamics = Dynamics::new(vn);
    let indexer = enumerate_states(n, v, &lhs.caps, config.max_states)?;

    let taboo_value = |origin: f64| Boundary { target: 1.0, origin, taboo: Some((x.as_ref(), 0.0)) };
    let numerator_boundary = taboo_value(0.0);
    let numerator_system = assemble(&dynamics, indexer.clone(), numerator_boundary);
    let numerator_solution = solve_system(&numerator_system, config)?;
    let numerator = evaluate_from(&dynamics, &numerator_system, &numerator_solution, numerator_boundary, x);

    let escape_boundary = taboo_value(1.0);
    let escape_system = assemble(&dynamics, indexer, escape_boundary);
    let escape_solution = solve_system(&escape_system, config)?;
    let escape = evaluate_from(&dynamics, &escape_system, &escape_solution, escape_boundary, x);

    Ok((lhs.probability, numerator / escape))
}
