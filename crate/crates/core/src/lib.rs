//! Simulation and numerical verification for extremes of branching
//! Brownian motion and branching Ornstein-Uhlenbeck processes.
//!
//! The crate is organised bottom-up:
//!
//! * [`sampling`]: exact OU transitions, normalisation constants, Gaussian tail bounds.
//! * [`cloud`] and [`measure`]: branching clouds, point measures and martingales.
//! * [`spine`]: the spine point process, estimators of `C(rho)`, decorations and
//!   the limiting decorated Poisson process.
//! * [`kpp`]: a Fisher-KPP solver used as a deterministic oracle for `C(rho)`.
//! * [`verify`]: statistical checks with explicit error budgets.
//!
//! Every random quantity is a pure function of a seed and a replica index (see
//! [`rng`]), so results do not depend on the number of worker threads.

pub mod cloud;
pub mod error;
pub mod kpp;
pub mod measure;
pub mod numerics;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod spine;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use rng::StreamRng;
