//! Multilevel splitting with milestones placed by the affine subsolution.
//!
//! The potential of a state is `h(x) = sum_i w_i x_i` with `w_i = -log rho_i`.
//! Level `j >= 1` is the set `{h(x) >= gamma_V n - j log r}` (outside the
//! target) and level `0` is the target `{v^T x >= n}` itself, so the level
//! index of a non-target state is
//!
//! ```text
//! l(x) = max(1, ceil((gamma_V n - h(x)) / log r))
//! ```
//!
//! A particle at level `j` evolves until it dies at the origin or enters a
//! lower level `l < j`; it is then replaced by `r^(j - l)` copies at the
//! crossing state (one `r`-fold split per crossed level). Particles that
//! enter the target are counted, and the estimator is `N_n / r^L` with `L`
//! the level index of the start state.

use rand::Rng;
use rayon::prelude::*;

use crate::chain::{ChainState, Dynamics};
use crate::error::{Error, Result};
use crate::experiments::ReplicationStats;
use crate::network::{TargetSpec, ValidatedNetwork};
use crate::rng;

/// Transitions allowed in a single run before it is aborted.
pub const DEFAULT_WORK_CAP: u64 = 1_000_000_000;

/// Relative shrink applied before taking a ceiling, so that a level index
/// that is an integer in exact arithmetic is not pushed up by rounding.
const CEIL_NUDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    n: u32,
    r: u32,
    target: TargetSpec,
    weights: Vec<f64>,
    log_r: f64,
    total_levels: u32,
    delta: f64,
}

impl LevelScheme {
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn r(&self) -> u32 {
        self.r
    }
    pub fn target(&self) -> &TargetSpec {
        &self.target
    }
    /// Level spacing; it cancels out of the level index and is kept for reports.
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// `C = gamma_V / log r`, levels per unit of `n`.
    pub fn level_density(&self) -> f64 {
        self.target.gamma_v() / self.log_r
    }
    /// `alpha_i = w_i / gamma_V`.
    pub fn alpha(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.target.gamma_v()).collect()
    }
    /// Number of levels `L` between the start state and the target.
    pub fn total_levels(&self) -> u32 {
        self.total_levels
    }
    /// Potential threshold `t_j = gamma_V n - j log r` of level `j`.
    pub fn threshold(&self, j: u32) -> f64 {
        self.target.gamma_v() * f64::from(self.n) - f64::from(j) * self.log_r
    }

    pub fn potential(&self, x: &[u32]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &xi)| w * f64::from(xi)).sum()
    }

    pub fn in_target(&self, x: &[u32]) -> bool {
        self.target.value(x) >= u64::from(self.n)
    }

    /// Level index of `x`: `0` on the target, otherwise
    /// `max(1, ceil((gamma_V n - h(x)) / log r))`.
    #[inline]
    pub fn level_index(&self, x: &[u32]) -> u32 {
        if self.in_target(x) {
            return 0;
        }
        let raw = (self.threshold(0) - self.potential(x)) / self.log_r;
        let nudged = raw - CEIL_NUDGE * raw.abs().max(1.0);
        let level = nudged.ceil();
        if level <= 1.0 {
            1
        } else {
            level as u32
        }
    }
}

/// Places the levels for start state `x0`.
pub fn build_levels(
    vn: &ValidatedNetwork,
    target: &TargetSpec,
    n: u32,
    r: u32,
    x0: &ChainState,
) -> Result<LevelScheme> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("splitting factor r = {r} must be >= 2")));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("overflow level n must be >= 1".into()));
    }
    if x0.len() != vn.dim() {
        return Err(Error::DimensionMismatch { expected: vn.dim(), got: x0.len() });
    }
    if target.v().len() != vn.dim() {
        return Err(Error::DimensionMismatch { expected: vn.dim(), got: target.v().len() });
    }
    if target.value(x0) >= u64::from(n) {
        return Err(Error::AlreadyInTarget(x0.0.clone()));
    }
    let mut scheme = LevelScheme {
        n,
        r,
        target: target.clone(),
        weights: vn.potential_weights().to_vec(),
        log_r: f64::from(r).ln(),
        total_levels: 0,
        delta: 1.0,
    };
    scheme.total_levels = scheme.level_index(x0);
    Ok(scheme)
}

/// Result of one splitting run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    /// `N_n`: particles that reached the target.
    pub terminal_count: u64,
    /// `N_n / r^L`.
    pub estimate: f64,
    /// Simulated transitions.
    pub work: u64,
    /// Entry `j` counts the particles that ever reached level `j`; entry
    /// `L` is the initial particle and entry `0` equals `terminal_count`.
    pub per_level_survivors: Vec<u64>,
    pub max_live_particles: u64,
}

struct Pending {
    state: Vec<u32>,
    level: u32,
    remaining: u64,
}

/// Runs the splitting algorithm once from `x0` with a prepared increment table.
pub fn run_splitting_with<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    scheme: &LevelScheme,
    x0: &ChainState,
    rng: &mut R,
    work_cap: u64,
) -> Result<SplitOutcome> {
    let total = scheme.total_levels;
    if scheme.level_index(x0) != total {
        return Err(Error::InvalidArgument(format!("level scheme was not built for start state {x0}")));
    }
    let r = u64::from(scheme.r);
    let mut survivors = vec![0u64; total as usize + 1];
    survivors[total as usize] = 1;
    if total == 0 {
        return Ok(SplitOutcome {
            terminal_count: 1,
            estimate: 1.0,
            work: 0,
            per_level_survivors: survivors,
            max_live_particles: 1,
        });
    }

    let mut stack = vec![Pending { state: x0.0.clone(), level: total, remaining: 1 }];
    let mut pending: u64 = 1;
    let mut max_live: u64 = 1;
    let mut work: u64 = 0;
    let mut terminal: u64 = 0;
    let mut x = x0.0.clone();

    while let Some(top) = stack.last_mut() {
        x.copy_from_slice(&top.state);
        let level = top.level;
        top.remaining -= 1;
        if top.remaining == 0 {
            stack.pop();
        }
        loop {
            dynamics.step_in_place(&mut x, rng.random::<f64>());
            work += 1;
            if work > work_cap {
                return Err(Error::RunawayRun { cap: work_cap });
            }
            if x.iter().all(|&v| v == 0) {
                break;
            }
            let reached = scheme.level_index(&x);
            if reached < level {
                let mut copies: u64 = 1;
                for k in (reached..level).rev() {
                    copies = copies.checked_mul(r).ok_or(Error::CountOverflow)?;
                    survivors[k as usize] = survivors[k as usize].checked_add(copies).ok_or(Error::CountOverflow)?;
                }
                if reached == 0 {
                    terminal = terminal.checked_add(copies).ok_or(Error::CountOverflow)?;
                } else {
                    stack.push(Pending { state: x.clone(), level: reached, remaining: copies });
                    pending = pending.checked_add(copies).ok_or(Error::CountOverflow)?;
                }
                break;
            }
        }
        pending -= 1;
        max_live = max_live.max(pending);
    }

    Ok(SplitOutcome {
        terminal_count: terminal,
        estimate: terminal as f64 / f64::from(scheme.r).powi(total as i32),
        work,
        per_level_survivors: survivors,
        max_live_particles: max_live,
    })
}

/// Runs the splitting algorithm once from `x0`.
pub fn run_splitting<R: Rng + ?Sized>(
    vn: &ValidatedNetwork,
    scheme: &LevelScheme,
    x0: &ChainState,
    rng: &mut R,
) -> Result<SplitOutcome> {
    run_splitting_with(&Dynamics::new(vn), scheme, x0, rng, DEFAULT_WORK_CAP)
}

/// `m` independent runs; run `k` uses [`rng::stream`]`(master_seed, k)`.
/// Outcomes are returned in replication order regardless of scheduling.
pub fn run_replications(
    vn: &ValidatedNetwork,
    scheme: &LevelScheme,
    x0: &ChainState,
    m: usize,
    master_seed: u64,
) -> Result<Vec<SplitOutcome>> {
    let dynamics = Dynamics::new(vn);
    (0..m as u64)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng::stream(master_seed, k);
            run_splitting_with(&dynamics, scheme, x0, &mut stream, DEFAULT_WORK_CAP)
        })
        .collect()
}

/// Replication statistics of the splitting estimator.
pub fn estimate(
    vn: &ValidatedNetwork,
    scheme: &LevelScheme,
    x0: &ChainState,
    m: usize,
    master_seed: u64,
) -> Result<ReplicationStats> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replications, got {m}")));
    }
    let outcomes = run_replications(vn, scheme, x0, m, master_seed)?;
    let values: Vec<f64> = outcomes.iter().map(|o| o.estimate).collect();
    let works: Vec<u64> = outcomes.iter().map(|o| o.work).collect();
    ReplicationStats::from_samples(&values, &works)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::*;

    fn s(v: &[u32]) -> ChainState {
        ChainState(v.to_vec())
    }

    #[test]
    fn level_schemes() {
        let m = mm1();
        let t = TargetSpec::total_population(&m);
        let scheme = build_levels(&m, &t, 10, 2, &s(&[0])).unwrap();
        assert!((scheme.level_density() - (7.0f64 / 3.0).ln() / 2f64.ln()).abs() < 1e-12);
        assert_eq!(scheme.total_levels(), 13);
        assert_eq!(scheme.level_index(&[4]), 8);
        assert_eq!(scheme.level_index(&[0]), 13);
        assert_eq!(scheme.level_index(&[10]), 0);
        assert_eq!(scheme.level_index(&[25]), 0);

        let sym = tandem_sym();
        let t = TargetSpec::total_population(&sym);
        let scheme = build_levels(&sym, &t, 10, 2, &s(&[0, 0])).unwrap();
        assert!((scheme.level_density() - 4.5f64.ln() / 2f64.ln()).abs() < 1e-12);
        assert_eq!(scheme.total_levels(), 22);
        let from = build_levels(&sym, &t, 10, 2, &s(&[3, 2])).unwrap();
        assert_eq!(from.total_levels(), 11);
        assert_eq!(from.delta(), 1.0);

        assert!(matches!(build_levels(&sym, &t, 10, 2, &s(&[6, 4])), Err(Error::AlreadyInTarget(_))));
        assert!(matches!(build_levels(&sym, &t, 10, 1, &s(&[0, 0])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn thresholds_decrease_and_match_membership() {
        let vn = tandem_asym();
        let t = TargetSpec::total_population(&vn);
        let scheme = build_levels(&vn, &t, 12, 3, &s(&[0, 0])).unwrap();
        for j in 0..scheme.total_levels() {
            assert!(scheme.threshold(j + 1) < scheme.threshold(j));
        }
        for a in 0..12u32 {
            for b in 0..(12 - a) {
                let x = [a, b];
                let l = scheme.level_index(&x);
                assert!(l >= 1);
                if l >= 2 {
                    // x belongs to level l but not to level l - 1
                    assert!(scheme.potential(&x) >= scheme.threshold(l) - 1e-9);
                    assert!(scheme.potential(&x) < scheme.threshold(l - 1) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn integer_level_boundaries_do_not_round_up() {
        // rho = 1/2 and r = 2 make every raw level index an exact integer.
        let vn = crate::network::validate(&crate::network::NetworkSpec::new(vec![1.0], vec![2.0], vec![vec![0.0]]))
            .unwrap();
        let t = TargetSpec::total_population(&vn);
        let scheme = build_levels(&vn, &t, 7, 2, &s(&[0])).unwrap();
        assert_eq!(scheme.total_levels(), 7);
        for x in 1..7 {
            assert_eq!(scheme.level_index(&[x]), 7 - x);
        }
    }

    #[test]
    fn empty_level_set_returns_one() {
        // build_levels never yields L = 0 (it rejects target starts), so
        // run a scheme whose start state already sits on the target.
        let vn = tandem_sym();
        let t = vn.target_params(&[1, 0]).unwrap();
        let mut scheme = build_levels(&vn, &t, 3, 2, &s(&[0, 0])).unwrap();
        scheme.total_levels = 0;
        let out = run_splitting_with(&Dynamics::new(&vn), &scheme, &s(&[3, 0]), &mut rng::stream(1, 0), 10).unwrap();
        assert_eq!((out.estimate, out.work, out.terminal_count), (1.0, 0, 1));
    }

    #[test]
    fn run_invariants_hold() {
        for vn in [mm1(), tandem_sym(), tandem_asym(), feedback3()] {
            let t = TargetSpec::total_population(&vn);
            let x0 = ChainState::zeros(vn.dim());
            let scheme = build_levels(&vn, &t, 8, 2, &x0).unwrap();
            let dynamics = Dynamics::new(&vn);
            let r = u64::from(scheme.r());
            let bound = r.pow(scheme.total_levels());
            for k in 0..300 {
                let mut stream = rng::stream(99, k);
                let out = run_splitting_with(&dynamics, &scheme, &x0, &mut stream, DEFAULT_WORK_CAP).unwrap();
                assert!(out.terminal_count <= bound);
                assert_eq!(out.per_level_survivors[0], out.terminal_count);
                assert_eq!(*out.per_level_survivors.last().unwrap(), 1);
                for j in 0..scheme.total_levels() as usize {
                    assert!(out.per_level_survivors[j] <= r * out.per_level_survivors[j + 1]);
                }
                assert!(out.work >= 1);
                let again = run_splitting_with(&dynamics, &scheme, &x0, &mut rng::stream(99, k), DEFAULT_WORK_CAP)
                    .unwrap();
                assert_eq!(out, again);
            }
        }
    }

    #[test]
    fn origin_start_takes_one_forced_step() {
        // n = 1 on the M/M/1 queue: the first transition decides everything.
        let vn = mm1();
        let t = TargetSpec::total_population(&vn);
        let x0 = s(&[0]);
        let scheme = build_levels(&vn, &t, 1, 2, &x0).unwrap();
        assert_eq!(scheme.total_levels(), 2);
        let dynamics = Dynamics::new(&vn);
        for k in 0..50 {
            let out = run_splitting_with(&dynamics, &scheme, &x0, &mut rng::stream(5, k), 100).unwrap();
            assert_eq!(out.work, 1);
            assert!(out.estimate == 0.0 || out.estimate == 1.0);
        }
        let stats = estimate(&vn, &scheme, &x0, 20_000, 3).unwrap();
        assert!((stats.mean - 0.3).abs() <= 4.0 * stats.std_error);
    }

    #[test]
    fn runaway_runs_abort() {
        let vn = tandem_sym();
        let t = TargetSpec::total_population(&vn);
        let x0 = s(&[0, 0]);
        let scheme = build_levels(&vn, &t, 40, 2, &x0).unwrap();
        let mut found = false;
        for k in 0..200 {
            let res = run_splitting_with(&Dynamics::new(&vn), &scheme, &x0, &mut rng::stream(8, k), 3);
            if let Err(e) = res {
                assert_eq!(e, Error::RunawayRun { cap: 3 });
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn mm1_small_n_is_unbiased() {
        let vn = mm1();
        let t = TargetSpec::total_population(&vn);
        let x0 = s(&[0]);
        let scheme = build_levels(&vn, &t, 2, 2, &x0).unwrap();
        let stats = estimate(&vn, &scheme, &x0, 10_000, 17).unwrap();
        assert!((stats.mean - 0.09).abs() <= 4.0 * stats.std_error, "{stats:?}");
    }

    #[test]
    fn degenerate_estimates_are_reported() {
        let vn = mm1();
        let t = TargetSpec::total_population(&vn);
        let x0 = s(&[0]);
        let scheme = build_levels(&vn, &t, 2, 2, &x0).unwrap();
        assert!(matches!(estimate(&vn, &scheme, &x0, 1, 0), Err(Error::InvalidArgument(_))));
        assert_eq!(
            ReplicationStats::from_samples(&[0.0, 0.0, 0.0], &[1, 1, 1]),
            Err(Error::DegenerateEstimate { m: 3 })
        );
    }
}
