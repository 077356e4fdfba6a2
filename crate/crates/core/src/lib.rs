//! Sequential likelihood-free inference for simulators with multi-modal posteriors.
//!
//! The crate implements the full round loop: draw simulation inputs from a
//! proposal, simulate, refit an inference head (a conditional spline-flow
//! likelihood or a classifier-based likelihood ratio), and rebuild the
//! proposal sampler. Two proposal samplers are provided: multi-chain MCMC
//! over the unnormalized proposal density, and an implicit surrogate
//! proposal — an unconditional spline flow trained from scratch each round
//! on one-draw-per-chain MCMC teacher samples, which then supplies i.i.d.
//! feed-forward inputs for the next round.
//!
//! Supporting layers: a minimal dense network with analytic reverse-mode
//! gradients and Adam ([`nn`]), rational-quadratic spline coupling flows
//! ([`flow`]), Metropolis–Hastings and slice samplers ([`mcmc`]), the
//! benchmark simulators ([`simulators`]), and sample-quality diagnostics
//! ([`metrics`]).

pub mod config;
pub mod error;
pub mod flow;
pub mod inference;
pub mod isp;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod persist;
pub mod rng;
pub mod simulators;

pub use error::{Error, Result};
