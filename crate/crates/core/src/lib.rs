//! Rare-event estimation of overflow probabilities in open Jackson networks.
//!
//! The overflow probability `p_n^V(x)` is the chance that the weighted
//! population `v^T Q` reaches `n` before the network empties, starting from
//! `x`. This crate estimates it with multilevel splitting whose milestones
//! come from an affine subsolution, and checks the estimator against an
//! exact linear-system solver and crude Monte Carlo.
//!
//! ```
//! use overflowlab::{network, splitting, chain::ChainState};
//!
//! let spec = network::NetworkSpec::new(vec![0.3], vec![0.7], vec![vec![0.0]]);
//! let vn = network::validate(&spec).unwrap();
//! let target = vn.target_params(&[1]).unwrap();
//! let x0 = ChainState::zeros(1);
//! let scheme = splitting::build_levels(&vn, &target, 5, 2, &x0).unwrap();
//! let stats = splitting::estimate(&vn, &scheme, &x0, 2000, 42).unwrap();
//! assert!(stats.mean > 0.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod error;
pub mod exact;
pub mod experiments;
mod linalg;
pub mod network;
pub mod reversed;
pub mod rng;
pub mod splitting;

pub use chain::ChainState;
pub use error::{Error, Result};
pub use network::{NetworkSpec, TargetSpec, ValidatedNetwork};
