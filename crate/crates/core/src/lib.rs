//! Car-following driver models with online parameter estimation.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, dataset adapters and the command line live in the
//! `carfollow` companion crate.
//!
//! * [`models`]: Intelligent Driver Model, its stochastic extension, baselines,
//!   single-step kinematics and the position likelihood.
//! * [`filter`]: per-vehicle particle filter over `(v_des, sigma_idm)`.
//! * [`sim`]: scenes, leader lookup and multi-vehicle rollouts.
//! * [`trace`]: canonical trajectory records and scenario assembly.
//! * [`synth`]: seeded synthetic platoons with known ground truth.
//! * [`metrics`]: RMSE series, event counts and cross-scenario aggregation.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod filter;
pub mod ids;
pub mod metrics;
pub mod models;
pub mod seed;
pub mod sim;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use ids::{LaneId, VehicleId};
