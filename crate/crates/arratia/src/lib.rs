//! Simulation of the coalescing Brownian particle flow on `[0,1]`,
//! stopped Ito integrals along its trajectories, and Monte Carlo
//! verification of the martingale/representation identities those
//! integrals satisfy.
//!
//! The crate is organised around the pipeline
//!
//! * [`gauss_rng`] — deterministic, splittable Gaussian streams and the
//!   Brownian-bridge crossing probability used for within-step meeting
//!   detection,
//! * [`flow_sim`] — the coalescing particle system itself, its meeting
//!   times and sub-partition views,
//! * [`stochastic_integrals`] — partition sums `S` and `S̄`, the spatial
//!   integral by refinement, and the series decomposition,
//! * [`meeting_analytics`] — quadrature references for meeting-time
//!   means, small-gap slopes, quadrant exit times and convergence rates,
//! * [`clark_rep`] — pathwise reconstruction of functionals from stopped
//!   integrals and the associated energy identity,
//! * [`mc_stats`] — estimator plumbing: confidence intervals,
//!   orthogonality z-tests and log-log rate fits,
//! * [`config`] / [`report`] / [`experiments`] — the CLI-facing
//!   experiment catalog.

pub mod clark_rep;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flow_sim;
pub mod gauss_rng;
pub mod mc_stats;
pub mod meeting_analytics;
pub mod report;
pub mod stochastic_integrals;

pub use error::{Error, Result};
