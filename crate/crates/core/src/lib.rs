//! Simulator and analysis toolkit for distributed SGD over energy-harvesting
//! clients.
//!
//! A population of users trains a shared model through a central server, but a
//! user can only contribute a stochastic gradient at iterations where it has
//! harvested enough energy for one step. This crate provides:
//!
//! - energy-arrival models and realized per-user arrival traces ([`energy`]),
//! - strongly convex synthetic objectives with exact gradients and optima
//!   ([`objective`]),
//! - participation policies: uniform-slot scheduling, best-effort scheduling,
//!   two energy-agnostic benchmarks, and a full-participation oracle
//!   ([`scheduling`]),
//! - the discrete-time training loop with scaled-gradient server updates
//!   ([`training`]),
//! - convergence-bound evaluation and Monte Carlo verifiers for the
//!   unbiasedness, participation-probability, and variance claims
//!   ([`analysis`]).
//!
//! All randomness flows through counter-based streams addressed by
//! `(master seed, user, purpose, step)`, so every run is bitwise reproducible
//! and independent of evaluation order; multi-seed sweeps and Monte Carlo
//! trials parallelize (feature `parallel`, on by default) without changing any
//! result.

pub mod analysis;
pub mod energy;
pub mod objective;
pub mod par;
pub mod rng;
pub mod scheduling;
pub mod training;

pub(crate) mod vecops;
