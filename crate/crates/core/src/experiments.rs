//! Replication statistics, the naive Monte Carlo baseline and the
//! complexity scaling study.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::chain::{ChainState, Dynamics};
use crate::error::{Error, Result};
use crate::exact::{self, ExactConfig};
use crate::network::{TargetSpec, ValidatedNetwork};
use crate::rng;
use crate::splitting::{self, DEFAULT_WORK_CAP};

/// Aggregate statistics over `m` i.i.d. replications of an unbiased estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStats {
    pub m: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `variance / mean^2`.
    pub cv2: f64,
    pub std_error: f64,
    pub mean_work: f64,
    /// `cv2 * mean_work`.
    pub work_normalized_cv2: f64,
}

impl ReplicationStats {
    /// Statistics of `values` with per-replication costs `works`.
    ///
    /// Accumulation runs in slice order, so the result is bit-identical for a
    /// given sample order.
    pub fn from_samples(values: &[f64], works: &[u64]) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 replications, got {m}")));
        }
        if works.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: works.len() });
        }
        let mf = m as f64;
        let mean = values.iter().sum::<f64>() / mf;
        if mean <= 0.0 {
            return Err(Error::DegenerateEstimate { m });
        }
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mf - 1.0);
        let mean_work = works.iter().map(|&w| w as f64).sum::<f64>() / mf;
        let cv2 = variance / (mean * mean);
        Ok(Self {
            m,
            mean,
            variance,
            cv2,
            std_error: (variance / mf).sqrt(),
            mean_work,
            work_normalized_cv2: cv2 * mean_work,
        })
    }
}

/// One crude Monte Carlo trial from `x0`: `(hit, transitions)`.
fn naive_trial<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    target: &TargetSpec,
    n: u32,
    x0: &[u32],
    rng: &mut R,
) -> Result<(bool, u64)> {
    let n = u64::from(n);
    if target.value(x0) >= n {
        return Ok((true, 0));
    }
    let mut x = x0.to_vec();
    let mut work = 0u64;
    loop {
        dynamics.step_in_place(&mut x, rng.random::<f64>());
        work += 1;
        if work > DEFAULT_WORK_CAP {
            return Err(Error::RunawayRun { cap: DEFAULT_WORK_CAP });
        }
        if target.value(&x) >= n {
            return Ok((true, work));
        }
        if x.iter().all(|&v| v == 0) {
            return Ok((false, work));
        }
    }
}

/// Crude Monte Carlo estimate of `P_x0(T_target <= T_origin)`.
///
/// Trial `k` uses [`rng::stream`]`(master_seed, k)`.
pub fn naive_mc(
    vn: &ValidatedNetwork,
    n: u32,
    v: &[u8],
    x0: &ChainState,
    m: usize,
    master_seed: u64,
) -> Result<ReplicationStats> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replications, got {m}")));
    }
    if x0.len() != vn.dim() {
        return Err(Error::DimensionMismatch { expected: vn.dim(), got: x0.len() });
    }
    let target = vn.target_params(v)?;
    let dynamics = Dynamics::new(vn);
    let trials: Vec<(bool, u64)> = (0..m as u64)
        .into_par_iter()
        .map(|k| naive_trial(&dynamics, &target, n, x0, &mut rng::stream(master_seed, k)))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = trials.iter().map(|&(hit, _)| if hit { 1.0 } else { 0.0 }).collect();
    let works: Vec<u64> = trials.iter().map(|t| t.1).collect();
    ReplicationStats::from_samples(&values, &works)
}

/// Least-squares fit of `log(value)` on `log(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 points, got {}", points.len())));
    }
    if let Some(&(n, value)) = points.iter().find(|&&(n, v)| !(v > 0.0) || !(n > 0.0)) {
        return Err(Error::NonPositiveValue { n, value });
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit needs at least two distinct n".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(ExponentFit { slope, intercept, r_squared })
}

/// Replications `ceil(cv2 / (epsilon^2 delta))` that bound the relative error
/// by `epsilon` with probability at least `1 - delta` (Chebyshev).
pub fn replication_plan(cv2: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if !(cv2 > 0.0) || !(epsilon > 0.0 && epsilon <= 1.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "replication plan needs cv2 > 0 and epsilon, delta in (0, 1]; got {cv2}, {epsilon}, {delta}"
        )));
    }
    let raw = cv2 / (epsilon * epsilon * delta);
    Ok((raw * (1.0 - 1e-12)).ceil().max(1.0) as u64)
}

/// Acceptance window of one fitted exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentCheck {
    pub quantity: &'static str,
    pub fit: ExponentFit,
    /// Exponent predicted by the asymptotic analysis.
    pub theory: f64,
    pub lower: Option<f64>,
    pub upper: f64,
}

impl ExponentCheck {
    pub fn passed(&self) -> bool {
        self.fit.slope <= self.upper && self.lower.is_none_or(|lo| self.fit.slope >= lo)
    }
}

/// Half-width of the window around a Theta-exponent.
pub const THETA_WINDOW: f64 = 0.5;
/// Slack above an O-exponent bound.
pub const O_BOUND_SLACK: f64 = 0.7;
/// Slack above the composite work-normalized variance bound.
pub const COMPOSITE_SLACK: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: u32,
    pub levels: u32,
    pub stats: ReplicationStats,
    pub exact: Option<f64>,
    pub mean_terminal_count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Terminal particle count: Theta(n^(beta_V - 1)).
    pub terminal_fit: ExponentCheck,
    /// Work per run: O(n^(beta_V + 1)).
    pub work_fit: ExponentCheck,
    /// Squared coefficient of variation: O(n^beta).
    pub cv2_fit: ExponentCheck,
    /// Work-normalized cv2: O(n^(beta_V + beta + 1)).
    pub work_cv2_fit: ExponentCheck,
}

impl ScalingReport {
    pub fn checks(&self) -> [&ExponentCheck; 4] {
        [&self.terminal_fit, &self.work_fit, &self.cv2_fit, &self.work_cv2_fit]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,estimate,exact,cv2,mean_Nn,mean_work\n");
        for row in &self.rows {
            let exact = row.exact.map(fmt_float).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.n,
                fmt_float(row.stats.mean),
                exact,
                fmt_float(row.stats.cv2),
                fmt_float(row.mean_terminal_count),
                fmt_float(row.stats.mean_work)
            );
        }
        out.push_str("quantity,slope,intercept,r_squared,theory,lower,upper,pass\n");
        for c in self.checks() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.quantity,
                fmt_float(c.fit.slope),
                fmt_float(c.fit.intercept),
                fmt_float(c.fit.r_squared),
                fmt_float(c.theory),
                c.lower.map(fmt_float).unwrap_or_default(),
                fmt_float(c.upper),
                c.passed()
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>5} {:>6} {:>14} {:>14} {:>12} {:>12} {:>14}\n",
            "n", "L", "estimate", "exact", "cv2", "mean_Nn", "mean_work"
        );
        for row in &self.rows {
            let exact = row.exact.map(|e| format!("{e:.6e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>14.6e} {:>14} {:>12.4} {:>12.4} {:>14.1}",
                row.n, row.levels, row.stats.mean, exact, row.stats.cv2, row.mean_terminal_count, row.stats.mean_work
            );
        }
        out.push('\n');
        for c in self.checks() {
            let window = match c.lower {
                Some(lo) => format!("[{lo:.2}, {:.2}]", c.upper),
                None => format!("<= {:.2}", c.upper),
            };
            let _ = writeln!(
                out,
                "{:<22} slope {:>7.3}  R^2 {:.3}  theory {:.1}  window {:<14} {}",
                c.quantity,
                c.fit.slope,
                c.fit.r_squared,
                c.theory,
                window,
                if c.passed() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Floats in machine-readable output: 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// Runs the splitting estimator at every `n` in `n_list` and fits the four
/// complexity exponents.
///
/// The replications at the `k`-th level use master seed
/// `rng::stream_seed(master_seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn scaling_study(
    vn: &ValidatedNetwork,
    target: &TargetSpec,
    x0: &ChainState,
    n_list: &[u32],
    r: u32,
    m: usize,
    master_seed: u64,
    exact_config: &ExactConfig,
) -> Result<ScalingReport> {
    if n_list.len() < 4 {
        return Err(Error::InvalidArgument(format!("scaling study needs at least 4 levels, got {}", n_list.len())));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n list must be strictly increasing".into()));
    }
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replications, got {m}")));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let scheme = splitting::build_levels(vn, target, n, r, x0)?;
        let outcomes = splitting::run_replications(vn, &scheme, x0, m, rng::stream_seed(master_seed, k as u64))?;
        let values: Vec<f64> = outcomes.iter().map(|o| o.estimate).collect();
        let works: Vec<u64> = outcomes.iter().map(|o| o.work).collect();
        let stats = ReplicationStats::from_samples(&values, &works)?;
        let mean_terminal_count = outcomes.iter().map(|o| o.terminal_count as f64).sum::<f64>() / m as f64;
        let exact = match exact::overflow_probability(vn, n, target.v(), x0, exact_config) {
            Ok(p) => Some(p),
            Err(Error::TooLarge { .. }) | Err(Error::TruncationNoConverge { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(ScalingRow { n, levels: scheme.total_levels(), stats, exact, mean_terminal_count });
    }

    let fit = |f: &dyn Fn(&ScalingRow) -> f64| -> Result<ExponentFit> {
        fit_exponent(&rows.iter().map(|row| (f64::from(row.n), f(row))).collect::<Vec<_>>())
    };
    let beta_v = target.beta_v() as f64;
    let beta = vn.beta() as f64;
    let terminal_theory = beta_v - 1.0;
    Ok(ScalingReport {
        terminal_fit: ExponentCheck {
            quantity: "mean_Nn",
            fit: fit(&|row| row.mean_terminal_count)?,
            theory: terminal_theory,
            lower: Some(terminal_theory - THETA_WINDOW),
            upper: terminal_theory + THETA_WINDOW,
        },
        work_fit: ExponentCheck {
            quantity: "mean_work",
            fit: fit(&|row| row.stats.mean_work)?,
            theory: beta_v + 1.0,
            lower: None,
            upper: beta_v + 1.0 + O_BOUND_SLACK,
        },
        cv2_fit: ExponentCheck {
            quantity: "cv2",
            fit: fit(&|row| row.stats.cv2)?,
            theory: beta,
            lower: None,
            upper: beta + O_BOUND_SLACK,
        },
        work_cv2_fit: ExponentCheck {
            quantity: "work_normalized_cv2",
            fit: fit(&|row| row.stats.work_normalized_cv2)?,
            theory: beta_v + beta + 1.0,
            lower: None,
            upper: beta_v + beta + 1.0 + COMPOSITE_SLACK,
        },
        rows,
    })
}

/// Runs `f` inside a dedicated pool of `threads` workers (`0` = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::*;

    #[test]
    fn stats_of_known_samples() {
        let s = ReplicationStats::from_samples(&[1.0, 2.0, 3.0, 4.0], &[10, 20, 30, 40]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.cv2 - (5.0 / 3.0) / 6.25).abs() < 1e-15);
        assert_eq!(s.mean_work, 25.0);
        assert!((s.work_normalized_cv2 - s.cv2 * 25.0).abs() < 1e-12);
        assert!((s.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn naive_mc_examples() {
        let vn = mm1();
        let stats = naive_mc(&vn, 2, &[1], &ChainState(vec![0]), 100_000, 1).unwrap();
        assert!((stats.mean - 0.09).abs() <= 4.0 * stats.std_error, "{stats:?}");
        // Bernoulli(p): cv2 = (1 - p) / p
        assert!((stats.cv2 - 0.91 / 0.09).abs() < 0.5, "{}", stats.cv2);

        let inside = naive_mc(&vn, 2, &[1], &ChainState(vec![3]), 10, 1).unwrap();
        assert_eq!((inside.mean, inside.variance, inside.mean_work), (1.0, 0.0, 0.0));

        assert!(matches!(naive_mc(&vn, 2, &[1], &ChainState(vec![0]), 1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn naive_mc_degenerate() {
        let vn = tandem_sym();
        let err = naive_mc(&vn, 30, &[1, 1], &ChainState(vec![0, 0]), 50, 4).unwrap_err();
        assert_eq!(err, Error::DegenerateEstimate { m: 50 });
    }

    #[test]
    fn exponent_fits() {
        let f = fit_exponent(&[(10.0, 1000.0), (20.0, 8000.0)]).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0].iter().map(|&n| (n, 0.7 * n * n)).collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.intercept - 0.7f64.ln()).abs() < 1e-12);
        let flat = fit_exponent(&[(5.0, 3.0), (6.0, 3.0), (9.0, 3.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-15);
        assert!(matches!(fit_exponent(&[(1.0, 1.0), (2.0, 0.0)]), Err(Error::NonPositiveValue { .. })));
    }

    #[test]
    fn replication_plans() {
        assert_eq!(replication_plan(100.0, 0.1, 0.05).unwrap(), 200_000);
        assert_eq!(replication_plan(1.0, 1.0, 1.0).unwrap(), 1);
        assert_eq!(replication_plan(4.0, 0.2, 0.5).unwrap(), 200);
        assert_eq!(replication_plan(4.1, 0.2, 0.5).unwrap(), 205);
        assert!(replication_plan(0.0, 0.2, 0.5).is_err());
    }

    #[test]
    fn small_scaling_study_is_thread_count_independent() {
        let vn = tandem_asym();
        let t = TargetSpec::total_population(&vn);
        let x0 = ChainState::zeros(2);
        let cfg = ExactConfig::default();
        let run = |threads| with_threads(threads, || scaling_study(&vn, &t, &x0, &[4, 6, 8, 10], 2, 200, 9, &cfg));
        let one = run(1).unwrap();
        let four = run(4).unwrap();
        assert_eq!(one.to_csv(), four.to_csv());
        assert!(one.rows.iter().all(|r| r.exact.is_some()));
        assert!(matches!(
            scaling_study(&vn, &t, &x0, &[4, 6, 8], 2, 200, 9, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }
}
