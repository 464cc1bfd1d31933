//! Open Jackson networks: parsing, validation, traffic equations and the
//! product-form stationary law.
//!
//! A network with `d` stations is described by external arrival rates
//! `lambda`, service rates `mu` and a sub-stochastic routing matrix `P`
//! whose row deficit `1 - sum_j P[i][j]` is the probability of leaving the
//! network after service at `i`. Validation rescales the rates so that
//! `sum(lambda) + sum(mu) = 1`, which leaves the embedded jump chain
//! unchanged, and solves `phi = lambda + P^T phi` for the throughputs.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

/// Relative tolerance used to decide that two traffic intensities tie.
pub const BOTTLENECK_TIE_TOL: f64 = 1e-9;

/// Row sums of the routing matrix may exceed one by at most this much.
const ROW_SUM_SLACK: f64 = 1e-12;

/// Exit probabilities below this are treated as zero by the openness check.
const EXIT_EPS: f64 = 1e-12;

/// Raw network description as read from a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub routing: Vec<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(lambda: Vec<f64>, mu: Vec<f64>, routing: Vec<Vec<f64>>) -> Self {
        Self { name: None, lambda, mu, routing }
    }

    /// Number of stations.
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Probability of leaving the network after service at station `i`.
    pub fn exit_probability(&self, i: usize) -> f64 {
        (1.0 - self.routing[i].iter().sum::<f64>()).max(0.0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)
            .map_err(|e| Error::InvalidNetwork(format!("malformed network JSON: {e}")))?;
        spec.check_shape()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidNetwork(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
            .map_err(|e| Error::InvalidNetwork(format!("{}: {e}", path.display())))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    fn check_shape(&self) -> Result<()> {
        let d = self.lambda.len();
        if d == 0 {
            return Err(Error::InvalidNetwork("network has no stations".into()));
        }
        if self.mu.len() != d {
            return Err(Error::InvalidNetwork(format!(
                "mu has length {} but lambda has length {d}",
                self.mu.len()
            )));
        }
        if self.routing.len() != d {
            return Err(Error::InvalidNetwork(format!(
                "routing has {} rows, expected {d}",
                self.routing.len()
            )));
        }
        if let Some((i, row)) = self.routing.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::InvalidNetwork(format!(
                "routing row {i} has length {}, expected {d}",
                row.len()
            )));
        }
        Ok(())
    }

    fn check_values(&self) -> Result<()> {
        self.check_shape()?;
        for (i, &l) in self.lambda.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidNetwork(format!("lambda[{i}] = {l} must be >= 0")));
            }
        }
        if !self.lambda.iter().any(|&l| l > 0.0) {
            return Err(Error::InvalidNetwork("at least one arrival rate must be positive".into()));
        }
        for (i, &m) in self.mu.iter().enumerate() {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::InvalidNetwork(format!("mu[{i}] = {m} must be > 0")));
            }
        }
        for (i, row) in self.routing.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidNetwork(format!("routing[{i}][{j}] = {p} not in [0,1]")));
                }
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + ROW_SUM_SLACK {
                return Err(Error::InvalidNetwork(format!("routing row {i} sums to {s} > 1")));
            }
        }
        Ok(())
    }
}

/// A stable open network with its traffic quantities solved.
///
/// Immutable once built; share it freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedNetwork {
    spec: NetworkSpec,
    phi: Vec<f64>,
    rho: Vec<f64>,
    rho_star: f64,
    beta: usize,
    weights: Vec<f64>,
}

impl ValidatedNetwork {
    /// The normalized specification (`sum(lambda) + sum(mu) = 1`).
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }
    pub fn lambda(&self) -> &[f64] {
        &self.spec.lambda
    }
    pub fn mu(&self) -> &[f64] {
        &self.spec.mu
    }
    pub fn routing(&self) -> &[Vec<f64>] {
        &self.spec.routing
    }
    /// Throughputs, in normalized time units.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
    pub fn rho_star(&self) -> f64 {
        self.rho_star
    }
    /// Number of global bottleneck stations.
    pub fn beta(&self) -> usize {
        self.beta
    }
    /// `w_i = -log(rho_i)`; the potential of a state is `sum_i w_i x_i`.
    pub fn potential_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn potential(&self, x: &[u32]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &xi)| w * f64::from(xi)).sum()
    }

    /// Infinity norm of `phi - lambda - P^T phi`.
    pub fn traffic_residual(&self) -> f64 {
        traffic_residual(&self.spec, &self.phi)
    }

    /// Product-form stationary probability `prod_j (1 - rho_j) rho_j^x_j`.
    pub fn stationary_pmf(&self, x: &[u32]) -> f64 {
        self.rho
            .iter()
            .zip(x)
            .map(|(&r, &xi)| (1.0 - r) * r.powi(xi as i32))
            .product()
    }

    /// Natural log of [`stationary_pmf`](Self::stationary_pmf); safe for large states.
    pub fn log_stationary_pmf(&self, x: &[u32]) -> f64 {
        self.rho
            .iter()
            .zip(x)
            .map(|(&r, &xi)| (1.0 - r).ln() + f64::from(xi) * r.ln())
            .sum()
    }

    /// `P(v^T Q(inf) = n)`, by convolving the geometric marginals of the
    /// target stations.
    pub fn stationary_level_pmf(&self, target: &TargetSpec, n: u32) -> f64 {
        self.stationary_level_pmfs(target, n)[n as usize]
    }

    /// `P(v^T Q(inf) = k)` for every `k in 0..=n_max`.
    pub fn stationary_level_pmfs(&self, target: &TargetSpec, n_max: u32) -> Vec<f64> {
        let len = n_max as usize + 1;
        let mut dist = vec![0.0; len];
        dist[0] = 1.0;
        for (i, &r) in self.rho.iter().enumerate() {
            if !target.selects(i) {
                continue;
            }
            // Convolution with Geom(rho): g[k] = (1 - rho) f[k] + rho g[k - 1].
            let mut prev = 0.0;
            for p in dist.iter_mut() {
                let g = (1.0 - r) * *p + r * prev;
                *p = g;
                prev = g;
            }
        }
        dist
    }

    /// Statistics of the target subset selected by the binary vector `v`.
    pub fn target_params(&self, v: &[u8]) -> Result<TargetSpec> {
        TargetSpec::new(self, v)
    }
}

fn traffic_residual(spec: &NetworkSpec, phi: &[f64]) -> f64 {
    let d = spec.dim();
    (0..d)
        .map(|i| {
            let inflow: f64 = (0..d).map(|j| phi[j] * spec.routing[j][i]).sum();
            (phi[i] - spec.lambda[i] - inflow).abs()
        })
        .fold(0.0, f64::max)
}

/// Checks openness of the routing graph with an added source and sink.
///
/// Every station must be reachable from a station with external arrivals and
/// every station must be able to reach the exit.
fn check_open(spec: &NetworkSpec) -> Result<()> {
    let d = spec.dim();
    let bfs = |starts: Vec<usize>, edge: &dyn Fn(usize, usize) -> bool| {
        let mut seen = vec![false; d];
        let mut queue: VecDeque<usize> = starts.into_iter().collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(i) = queue.pop_front() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && edge(i, j) {
                    *s = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };

    let sources: Vec<usize> = (0..d).filter(|&i| spec.lambda[i] > 0.0).collect();
    let reached = bfs(sources, &|i, j| spec.routing[i][j] > 0.0);
    if let Some(i) = reached.iter().position(|&r| !r) {
        return Err(Error::NotOpen { station: i, reason: "is unreachable from external arrivals" });
    }

    let sinks: Vec<usize> = (0..d).filter(|&i| spec.exit_probability(i) > EXIT_EPS).collect();
    let drains = bfs(sinks, &|i, j| spec.routing[j][i] > 0.0);
    if let Some(i) = drains.iter().position(|&r| !r) {
        return Err(Error::NotOpen { station: i, reason: "cannot drain to the exit" });
    }
    Ok(())
}

fn solve_traffic(spec: &NetworkSpec) -> Result<Vec<f64>> {
    let d = spec.dim();
    // (I - P^T) phi = lambda
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            a[i * d + j] = id - spec.routing[j][i];
        }
    }
    let mut phi = solve_dense(a.clone(), spec.lambda.clone(), 1e-13).ok_or(Error::SingularRouting)?;
    // One step of iterative refinement.
    let mut resid = vec![0.0; d];
    for i in 0..d {
        resid[i] = spec.lambda[i] - (0..d).map(|j| a[i * d + j] * phi[j]).sum::<f64>();
    }
    if let Some(corr) = solve_dense(a, resid, 1e-13) {
        for (p, c) in phi.iter_mut().zip(corr) {
            *p += c;
        }
    }
    Ok(phi)
}

/// Validates `spec`, normalizes its rates and solves the traffic equations.
pub fn validate(spec: &NetworkSpec) -> Result<ValidatedNetwork> {
    spec.check_values()?;
    check_open(spec)?;

    let total: f64 = spec.lambda.iter().chain(&spec.mu).sum();
    let mut normalized = spec.clone();
    normalized.lambda.iter_mut().chain(normalized.mu.iter_mut()).for_each(|r| *r /= total);

    let phi = solve_traffic(&normalized)?;
    let rho: Vec<f64> = phi.iter().zip(&normalized.mu).map(|(p, m)| p / m).collect();
    if let Some((station, &rho_i)) = rho.iter().enumerate().find(|(_, &r)| !(r < 1.0)) {
        return Err(Error::Unstable { station, rho: rho_i });
    }
    if let Some(station) = rho.iter().position(|&r| r <= 0.0) {
        // Openness guarantees positive throughput; this only trips on
        // numerically degenerate input.
        return Err(Error::InvalidNetwork(format!("station {station} has zero throughput")));
    }
    let rho_star = rho.iter().cloned().fold(f64::MIN, f64::max);
    let beta = count_ties(rho.iter().copied(), rho_star);
    let weights = rho.iter().map(|r| -r.ln()).collect();
    Ok(ValidatedNetwork { spec: normalized, phi, rho, rho_star, beta, weights })
}

fn count_ties(values: impl Iterator<Item = f64>, max: f64) -> usize {
    values.filter(|&r| (r - max).abs() <= BOTTLENECK_TIE_TOL * max).count()
}

/// Target subset `V(x) = v^T x` and its bottleneck statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    v: Vec<u8>,
    rho_star_v: f64,
    beta_v: usize,
    gamma_v: f64,
}

impl TargetSpec {
    pub fn new(vn: &ValidatedNetwork, v: &[u8]) -> Result<Self> {
        if v.len() != vn.dim() {
            return Err(Error::DimensionMismatch { expected: vn.dim(), got: v.len() });
        }
        if let Some(bad) = v.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidArgument(format!("target entries must be 0 or 1, got {bad}")));
        }
        if v.iter().all(|&b| b == 0) {
            return Err(Error::EmptyTarget);
        }
        let selected = || vn.rho().iter().zip(v).filter(|(_, &b)| b == 1).map(|(&r, _)| r);
        let rho_star_v = selected().fold(f64::MIN, f64::max);
        let beta_v = count_ties(selected(), rho_star_v);
        Ok(Self { v: v.to_vec(), rho_star_v, beta_v, gamma_v: -rho_star_v.ln() })
    }

    /// The all-ones target (total population).
    pub fn total_population(vn: &ValidatedNetwork) -> Self {
        Self::new(vn, &vec![1; vn.dim()]).expect("all-ones target is valid")
    }

    pub fn v(&self) -> &[u8] {
        &self.v
    }
    pub fn selects(&self, i: usize) -> bool {
        self.v[i] == 1
    }
    pub fn rho_star_v(&self) -> f64 {
        self.rho_star_v
    }
    pub fn beta_v(&self) -> usize {
        self.beta_v
    }
    pub fn gamma_v(&self) -> f64 {
        self.gamma_v
    }

    /// `V(x) = v^T x`.
    pub fn value(&self, x: &[u32]) -> u64 {
        self.v.iter().zip(x).filter(|(&b, _)| b == 1).map(|(_, &xi)| u64::from(xi)).sum()
    }
}

/// Convenience wrapper for [`ValidatedNetwork::target_params`].
pub fn target_params(vn: &ValidatedNetwork, v: &[u8]) -> Result<TargetSpec> {
    vn.target_params(v)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn mm1() -> ValidatedNetwork {
        validate(&NetworkSpec::new(vec![0.3], vec![0.7], vec![vec![0.0]])).unwrap()
    }
    pub fn tandem_sym() -> ValidatedNetwork {
        validate(&NetworkSpec::new(
            vec![0.1, 0.0],
            vec![0.45, 0.45],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        ))
        .unwrap()
    }
    pub fn tandem_asym() -> ValidatedNetwork {
        validate(&NetworkSpec::new(
            vec![0.1, 0.0],
            vec![0.5, 0.4],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        ))
        .unwrap()
    }
    /// Three stations with feedback and two entry points.
    pub fn feedback3() -> ValidatedNetwork {
        validate(&NetworkSpec::new(
            vec![0.05, 0.03, 0.0],
            vec![0.3, 0.25, 0.37],
            vec![vec![0.0, 0.5, 0.3], vec![0.1, 0.0, 0.6], vec![0.2, 0.0, 0.0]],
        ))
        .unwrap()
    }
}
