//! Benchmark simulators: prior box, ground-truth modes, forward simulation,
//! and (for the tractable ones) the exact unnormalized posterior.

mod clv;
mod mg1;
mod shubert;
mod slcp;

pub use clv::{integrate_clv, ClvSimulator};
pub use mg1::Mg1Simulator;
pub use shubert::ShubertSimulator;
pub use slcp::{slcp_posterior_reference, Slcp16Simulator, SlcpModesSimulator};

use crate::error::{Error, Result};
use crate::mcmc::{BoxSupport, TargetDensity};
use crate::metrics::ModeSet;
use crate::rng::{self, tag};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub trait Simulator: Send + Sync {
    fn name(&self) -> &str;
    fn dim_theta(&self) -> usize;
    fn dim_x(&self) -> usize;
    fn prior_box(&self) -> &BoxSupport;
    /// All parameter points with maximal posterior density (the true input
    /// and its likelihood-equivalent alternatives).
    fn ground_truth_modes(&self) -> &[Vec<f64>];
    fn tractable(&self) -> bool {
        false
    }
    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// Closed-form `log p(x|θ)` for tractable simulators.
    fn exact_log_likelihood(&self, _theta: &[f64], _x: &[f64]) -> Option<f64> {
        None
    }
    /// Simulators whose observation is pinned rather than drawn from a pilot run.
    fn fixed_observation(&self) -> Option<Vec<f64>> {
        None
    }
    /// Mode-coverage rule used by the diagnostics.
    fn mode_set(&self) -> Result<ModeSet>;

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if !self.prior_box().contains(theta) {
            return Err(Error::Simulator(format!(
                "{}: input outside the prior box",
                self.name()
            )));
        }
        Ok(())
    }
}

/// Look up a simulator by its registry name: `shubert`, `slcp16`, `slcp256`,
/// `slcp-d<k>` (the 2^k-mode family), `mg1`, or `clv`.
pub fn make_simulator(name: &str) -> Result<Arc<dyn Simulator>> {
    match name {
        "shubert" => Ok(Arc::new(ShubertSimulator::new())),
        "slcp16" => Ok(Arc::new(Slcp16Simulator::new())),
        "slcp256" => Ok(Arc::new(SlcpModesSimulator::new(8)?)),
        "mg1" => Ok(Arc::new(Mg1Simulator::new())),
        "clv" => Ok(Arc::new(ClvSimulator::new())),
        other => {
            if let Some(d) = other.strip_prefix("slcp-d") {
                let d: usize = d.parse().map_err(|_| {
                    Error::Simulator(format!("bad dimension in simulator name '{other}'"))
                })?;
                return Ok(Arc::new(SlcpModesSimulator::new(d)?));
            }
            Err(Error::Simulator(format!(
                "unknown simulator '{other}' (known: shubert, slcp16, slcp256, slcp-d<k>, mg1, clv)"
            )))
        }
    }
}

/// Deterministic observation for a run: the simulator's pinned observation
/// when it has one, otherwise one pilot simulation at `theta_star` seeded
/// from `(seed, OBSERVATION)`.
pub fn make_observation(sim: &dyn Simulator, theta_star: &[f64], seed: u64) -> Result<Vec<f64>> {
    if let Some(x) = sim.fixed_observation() {
        return Ok(x);
    }
    let mut r = rng::stream(seed, &[tag::OBSERVATION]);
    sim.simulate(theta_star, &mut r)
}

/// Exact unnormalized posterior `log p(x_o|θ) + log p(θ)` as a sampling target.
pub fn exact_posterior(sim: Arc<dyn Simulator>, x_o: Vec<f64>) -> Result<TargetDensity> {
    if !sim.tractable() {
        return Err(Error::Simulator(format!(
            "{} has no tractable likelihood",
            sim.name()
        )));
    }
    if x_o.len() != sim.dim_x() {
        return Err(Error::dim(sim.dim_x(), x_o.len(), "observation"));
    }
    let support = sim.prior_box().clone();
    let log_prior = -support.log_volume();
    Ok(TargetDensity::new(support, move |theta| {
        sim.exact_log_likelihood(theta, &x_o)
            .expect("tractable simulator provides the likelihood")
            + log_prior
    }))
}

/// Wrapper that counts simulate calls, for budget accounting.
pub struct CountingSimulator {
    inner: Arc<dyn Simulator>,
    calls: AtomicU64,
}

impl CountingSimulator {
    pub fn new(inner: Arc<dyn Simulator>) -> Self {
        CountingSimulator {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Simulator for CountingSimulator {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim_theta(&self) -> usize {
        self.inner.dim_theta()
    }
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn prior_box(&self) -> &BoxSupport {
        self.inner.prior_box()
    }
    fn ground_truth_modes(&self) -> &[Vec<f64>] {
        self.inner.ground_truth_modes()
    }
    fn tractable(&self) -> bool {
        self.inner.tractable()
    }
    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.simulate(theta, rng)
    }
    fn exact_log_likelihood(&self, theta: &[f64], x: &[f64]) -> Option<f64> {
        self.inner.exact_log_likelihood(theta, x)
    }
    fn fixed_observation(&self) -> Option<Vec<f64>> {
        self.inner.fixed_observation()
    }
    fn mode_set(&self) -> Result<ModeSet> {
        self.inner.mode_set()
    }
}

/// Batch-simulate with one RNG stream per input, parallel and order-stable.
pub fn simulate_batch(
    sim: &dyn Simulator,
    thetas: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut r = rng::stream(seed, &[tag::SIMULATE, i as u64]);
            sim.simulate(theta, &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn registry_knows_all_names() {
        for name in ["shubert", "slcp16", "slcp256", "slcp-d4", "mg1", "clv"] {
            let sim = make_simulator(name).unwrap();
            assert_eq!(sim.dim_theta(), sim.prior_box().dim());
        }
        assert!(make_simulator("nope").is_err());
    }

    #[test]
    fn outputs_are_finite_with_declared_dims() {
        for name in ["shubert", "slcp16", "slcp256", "mg1", "clv"] {
            let sim = make_simulator(name).unwrap();
            let mut r = rng::stream(1, &[33]);
            for i in 0..1000 {
                let theta = sim.prior_box().sample_uniform(&mut r);
                let mut sr = rng::stream(2, &[tag::SIMULATE, i]);
                let x = sim.simulate(&theta, &mut sr).unwrap();
                assert_eq!(x.len(), sim.dim_x(), "{name}");
                assert!(x.iter().all(|v| v.is_finite()), "{name}: {x:?}");
            }
        }
    }

    #[test]
    fn modes_live_inside_the_prior_box() {
        for name in ["shubert", "slcp16", "slcp256", "mg1", "clv"] {
            let sim = make_simulator(name).unwrap();
            for m in sim.ground_truth_modes() {
                assert!(sim.prior_box().contains(m), "{name}: {m:?}");
            }
            sim.mode_set().unwrap();
        }
    }

    #[test]
    fn observation_is_seed_deterministic() {
        for name in ["slcp16", "slcp256", "mg1", "clv"] {
            let sim = make_simulator(name).unwrap();
            let star = sim.ground_truth_modes()[0].clone();
            let a = make_observation(sim.as_ref(), &star, 7).unwrap();
            let b = make_observation(sim.as_ref(), &star, 7).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn out_of_box_inputs_rejected() {
        let sim = make_simulator("slcp16").unwrap();
        let mut r = rng::stream(1, &[34]);
        assert!(sim.simulate(&[4.0, 0.0, 0.0, 0.0, 0.0], &mut r).is_err());
    }

    #[test]
    fn counting_wrapper_counts() {
        let sim = CountingSimulator::new(make_simulator("slcp256").unwrap());
        let mut r = rng::stream(1, &[35]);
        let theta = sim.prior_box().sample_uniform(&mut r);
        for _ in 0..5 {
            sim.simulate(&theta, &mut r).unwrap();
        }
        assert_eq!(sim.calls(), 5);
    }

    #[test]
    fn exact_posterior_is_finite_inside_box() {
        for name in ["shubert", "slcp16", "slcp256"] {
            let sim = make_simulator(name).unwrap();
            let star = sim.ground_truth_modes()[0].clone();
            let x_o = make_observation(sim.as_ref(), &star, 3).unwrap();
            let post = exact_posterior(sim.clone(), x_o).unwrap();
            let mut r = rng::stream(4, &[36]);
            for _ in 0..200 {
                let theta = sim.prior_box().sample_uniform(&mut r);
                let v = post.log_density(&theta);
                assert!(v.is_finite(), "{name} at {theta:?}: {v}");
            }
            let outside: Vec<f64> = sim.prior_box().hi.iter().map(|h| h + 1.0).collect();
            assert_eq!(post.log_density(&outside), f64::NEG_INFINITY);
        }
        assert!(exact_posterior(make_simulator("mg1").unwrap(), vec![0.0; 5]).is_err());
    }

    #[test]
    fn exact_posterior_matches_naive_gaussian_logpdf() {
        // independent log-pdf re-implementation on random (θ, x) pairs
        let sim = make_simulator("slcp256").unwrap();
        let star = sim.ground_truth_modes()[0].clone();
        let x_o = make_observation(sim.as_ref(), &star, 5).unwrap();
        let mut r = rng::stream(6, &[37]);
        for _ in 0..100 {
            let theta = sim.prior_box().sample_uniform(&mut r);
            let fast = sim.exact_log_likelihood(&theta, &x_o).unwrap();
            let mut naive = 0.0;
            for j in 0..5 {
                for i in 0..8 {
                    let mean = theta[i] * theta[i];
                    let v = x_o[j * 8 + i];
                    naive += -0.5 * (v - mean) * (v - mean)
                        - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
            }
            assert!((fast - naive).abs() < 1e-10, "{fast} vs {naive}");
        }
        // random-spec second route on slcp16
        let sim = make_simulator("slcp16").unwrap();
        let star = sim.ground_truth_modes()[0].clone();
        let x_o = make_observation(sim.as_ref(), &star, 5).unwrap();
        for _ in 0..100 {
            let theta = sim.prior_box().sample_uniform(&mut r);
            let fast = sim.exact_log_likelihood(&theta, &x_o).unwrap();
            let (m, s) = slcp::likelihood_params_for_tests(&theta);
            let det = s[0] * s[3] - s[1] * s[2];
            let mut naive = 0.0;
            for j in 0..25 {
                let dx = x_o[2 * j] - m[0];
                let dy = x_o[2 * j + 1] - m[1];
                let quad = (s[3] * dx * dx - 2.0 * s[1] * dx * dy + s[0] * dy * dy) / det;
                naive += -0.5 * quad - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
            }
            assert!(
                (fast - naive).abs() < 1e-9,
                "theta {theta:?}: {fast} vs {naive}"
            );
        }
    }

    #[test]
    fn batch_simulation_is_order_stable() {
        let sim = make_simulator("mg1").unwrap();
        let mut r = rng::stream(9, &[38]);
        let thetas: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                vec![
                    r.random_range(0.0..10.0),
                    r.random_range(0.0..10.0),
                    r.random_range(0.01..1.0 / 3.0),
                ]
            })
            .collect();
        let a = simulate_batch(sim.as_ref(), &thetas, 42).unwrap();
        let b = simulate_batch(sim.as_ref(), &thetas, 42).unwrap();
        assert_eq!(a, b);
    }
}
