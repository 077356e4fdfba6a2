//! Single-server queue with uniform service times and Poisson arrivals.
//! The output is five equally spaced percentiles of the inter-departure
//! times of 50 jobs.

use super::Simulator;
use crate::error::{Error, Result};
use crate::mcmc::BoxSupport;
use crate::metrics::{CoverageRule, ModeSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const N_JOBS: usize = 50;
const N_PERCENTILES: usize = 5;
pub const MG1_TRUE: [f64; 3] = [1.0, 4.0, 0.2];

/// Linear-interpolation percentile of a sorted slice at `p ∈ [0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    }
}

/// `count` equally spaced percentiles from 0th to 100th.
pub fn summary_percentiles(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (0..count)
        .map(|k| percentile_sorted(&sorted, 100.0 * k as f64 / (count - 1) as f64))
        .collect()
}

pub struct Mg1Simulator {
    prior: BoxSupport,
    modes: Vec<Vec<f64>>,
}

impl Mg1Simulator {
    pub fn new() -> Self {
        Mg1Simulator {
            prior: BoxSupport::new(vec![0.0, 0.0, 0.0], vec![10.0, 10.0, 1.0 / 3.0]).unwrap(),
            modes: vec![MG1_TRUE.to_vec()],
        }
    }

    /// Inter-departure times of one seeded run.
    pub fn inter_departures(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (min_service, service_span, rate) = (theta[0], theta[1], theta[2]);
        if rate <= 0.0 {
            return Err(Error::Simulator(
                "arrival rate must be positive (degenerate arrivals)".into(),
            ));
        }
        let mut arrivals = 0.0; // v(i)
        let mut depart_prev = 0.0; // d(i-1), with d(0) = 0
        let mut gaps = Vec::with_capacity(N_JOBS);
        for _ in 0..N_JOBS {
            let service = if service_span > 0.0 {
                rng.random_range(min_service..min_service + service_span)
            } else {
                min_service
            };
            let u: f64 = rng.random();
            arrivals += -u.ln() / rate;
            let gap = service + (arrivals - depart_prev).max(0.0);
            gaps.push(gap);
            depart_prev += gap;
        }
        Ok(gaps)
    }
}

impl Default for Mg1Simulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for Mg1Simulator {
    fn name(&self) -> &str {
        "mg1"
    }
    fn dim_theta(&self) -> usize {
        3
    }
    fn dim_x(&self) -> usize {
        N_PERCENTILES
    }
    fn prior_box(&self) -> &BoxSupport {
        &self.prior
    }
    fn ground_truth_modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let gaps = self.inter_departures(theta, rng)?;
        Ok(summary_percentiles(&gaps, N_PERCENTILES))
    }

    fn mode_set(&self) -> Result<ModeSet> {
        let rho = 0.05 * self.prior.diagonal();
        ModeSet::new(self.modes.clone(), CoverageRule::Radius(rho))
    }
}
