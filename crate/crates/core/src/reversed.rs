//! Time reversal of the embedded chain with respect to the product-form law.

use crate::chain::{ChainState, Dynamics};
use crate::network::{NetworkSpec, ValidatedNetwork};

/// Row `K~(y, .)` of the reversed kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversedKernelRow {
    pub origin: ChainState,
    /// `(x, K~(y, x))` for every predecessor `x` with `K(x, y) > 0`.
    pub entries: Vec<(ChainState, f64)>,
}

impl ReversedKernelRow {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn probability_to(&self, x: &[u32]) -> f64 {
        self.entries.iter().filter(|(s, _)| s.0 == x).map(|e| e.1).sum()
    }
}

/// `pi(x) / pi(y)` for neighbouring states, computed from integer exponent
/// differences.
fn pi_ratio(vn: &ValidatedNetwork, x: &[u32], y: &[u32]) -> f64 {
    vn.rho()
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&r, (&a, &b))| r.powi(a as i32 - b as i32))
        .product()
}

/// States `x` with `K(x, y) > 0`: `y` itself plus `y - w` for every increment
/// `w` whose service is not blocked at `y - w`.
fn predecessors(dynamics: &Dynamics, y: &[u32]) -> Vec<ChainState> {
    let mut out = vec![ChainState(y.to_vec())];
    'events: for e in dynamics.events() {
        let mut x: Vec<i64> = y.iter().map(|&v| i64::from(v)).collect();
        for (i, delta) in e.kind.displacement_terms() {
            x[i] -= i64::from(delta);
        }
        if x.iter().any(|&v| v < 0) {
            continue 'events;
        }
        let x: Vec<u32> = x.into_iter().map(|v| v as u32).collect();
        if !out.iter().any(|s| s.0 == x) {
            out.push(ChainState(x));
        }
    }
    out
}

pub fn reversed_kernel_row_with(vn: &ValidatedNetwork, dynamics: &Dynamics, y: &ChainState) -> ReversedKernelRow {
    let entries = predecessors(dynamics, y)
        .into_iter()
        .filter_map(|x| {
            let k = dynamics.transition_probability(&x, y);
            (k > 0.0).then(|| {
                let p = k * pi_ratio(vn, &x, y);
                (x, p)
            })
        })
        .collect();
    ReversedKernelRow { origin: y.clone(), entries }
}

/// `K~(y, x) = K(x, y) pi(x) / pi(y)` over all predecessors of `y`.
pub fn reversed_kernel_row(vn: &ValidatedNetwork, y: &ChainState) -> ReversedKernelRow {
    reversed_kernel_row_with(vn, &Dynamics::new(vn), y)
}

/// The reversed process as a Jackson network: arrivals `phi_i P_i0`,
/// routing `phi_j P_ji / phi_i`, the same service rates.
pub fn reversed_network(vn: &ValidatedNetwork) -> NetworkSpec {
    let d = vn.dim();
    let phi = vn.phi();
    let p = vn.routing();
    let lambda = (0..d).map(|i| phi[i] * vn.spec().exit_probability(i)).collect();
    let routing = (0..d).map(|i| (0..d).map(|j| phi[j] * p[j][i] / phi[i]).collect()).collect();
    let mut spec = NetworkSpec::new(lambda, vn.mu().to_vec(), routing);
    spec.name = vn.spec().name.as_ref().map(|n| format!("{n} (reversed)"));
    spec
}
