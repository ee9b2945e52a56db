//! Off-grid sparse Bayesian learning (SBL) for FDD massive-MIMO downlink
//! channel estimation with arbitrary planar antenna arrays.
//!
//! The crate is organised bottom-up:
//!
//! * [`array_model`] – steering vectors, their angle derivatives, the DFT
//!   basis and the DFT energy-leakage diagnostic.
//! * [`channel_sim`] – clustered geometric channels, pilots, downlink and
//!   uplink observations, LS uplink estimation and the NMSE metric.
//! * [`sbl_core`] – posterior statistics, closed-form hyperparameter
//!   updates, log-evidence and channel reconstruction.
//! * [`offgrid_refine`] – grid refinement and the in-exact block
//!   majorization-minimization loops for linear and planar arrays.
//! * [`joint_uplink`] – the uplink-AoA-aided joint estimator.
//! * [`baselines`] – DFT / overcomplete-DFT l1 recovery and on-grid SBL.
//!
//! Everything is deterministic given explicit seeds and free of shared
//! mutable state apart from a per-thread multiply counter
//! ([`linalg::op_count`]) used for complexity checks.

pub mod array_model;
pub mod baselines;
pub mod channel_sim;
mod error;
pub mod joint_uplink;
pub mod linalg;
pub mod offgrid_refine;
pub mod sbl_core;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, RVector};
pub use num_complex::Complex64;
