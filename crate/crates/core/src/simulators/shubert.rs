//! Two-dimensional simulator built on the product of two oscillatory cosine
//! sums. The output is bivariate Gaussian around `(m_θ, m_θ)` with variance
//! 49 per coordinate, and the posterior for the pinned observation has 18
//! global modes.

use super::Simulator;
use crate::error::Result;
use crate::flow::LN_2PI;
use crate::mcmc::BoxSupport;
use crate::metrics::{CoverageRule, ModeSet};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::OnceLock;

const NOISE_SD: f64 = 7.0; // variance 49 per output coordinate
pub const OBSERVED_VALUE: f64 = -186.7309;

/// `Σ_{j=1..5} j cos((j+1)t + j)`.
fn cosine_sum(t: f64) -> f64 {
    (1..=5)
        .map(|j| {
            let j = j as f64;
            j * ((j + 1.0) * t + j).cos()
        })
        .sum()
}

fn cosine_sum_deriv(t: f64) -> f64 {
    -(1..=5)
        .map(|j| {
            let j = j as f64;
            j * (j + 1.0) * ((j + 1.0) * t + j).sin()
        })
        .sum::<f64>()
}

/// All interior stationary points of the cosine sum on [-10, 10], refined by
/// bisection on the derivative.
fn stationary_points() -> Vec<f64> {
    let n = 200_000;
    let mut points = Vec::new();
    let mut prev_t = -10.0;
    let mut prev_d = cosine_sum_deriv(prev_t);
    for i in 1..=n {
        let t = -10.0 + 20.0 * i as f64 / n as f64;
        let d = cosine_sum_deriv(t);
        if prev_d == 0.0 {
            points.push(prev_t);
        } else if prev_d * d < 0.0 {
            let (mut a, mut b, mut da) = (prev_t, t, prev_d);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let dm = cosine_sum_deriv(mid);
                if da * dm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    da = dm;
                }
            }
            points.push(0.5 * (a + b));
        }
        prev_t = t;
        prev_d = d;
    }
    points
}

/// Global minimizers and maximizers of the cosine sum on [-10, 10].
fn extrema() -> &'static (Vec<f64>, Vec<f64>, f64, f64) {
    static CELL: OnceLock<(Vec<f64>, Vec<f64>, f64, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let stat = stationary_points();
        let min_val = stat.iter().map(|&t| cosine_sum(t)).fold(f64::INFINITY, f64::min);
        let max_val = stat
            .iter()
            .map(|&t| cosine_sum(t))
            .fold(f64::NEG_INFINITY, f64::max);
        let mins: Vec<f64> = stat
            .iter()
            .copied()
            .filter(|&t| cosine_sum(t) - min_val < 1e-9)
            .collect();
        let maxs: Vec<f64> = stat
            .iter()
            .copied()
            .filter(|&t| max_val - cosine_sum(t) < 1e-9)
            .collect();
        (mins, maxs, min_val, max_val)
    })
}

/// Product surface value at θ.
pub fn product_value(theta: &[f64]) -> f64 {
    cosine_sum(theta[0]) * cosine_sum(theta[1])
}

pub struct ShubertSimulator {
    prior: BoxSupport,
    modes: Vec<Vec<f64>>,
}

impl ShubertSimulator {
    pub fn new() -> Self {
        let (mins, maxs, _, _) = extrema();
        // global minima of the product pair a minimizer of one factor with a
        // maximizer of the other, in both orders
        let mut modes = Vec::with_capacity(2 * mins.len() * maxs.len());
        for a in mins {
            for b in maxs {
                modes.push(vec![*a, *b]);
                modes.push(vec![*b, *a]);
            }
        }
        ShubertSimulator {
            prior: BoxSupport::cube(-10.0, 10.0, 2),
            modes,
        }
    }
}

impl Default for ShubertSimulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for ShubertSimulator {
    fn name(&self) -> &str {
        "shubert"
    }
    fn dim_theta(&self) -> usize {
        2
    }
    fn dim_x(&self) -> usize {
        2
    }
    fn prior_box(&self) -> &BoxSupport {
        &self.prior
    }
    fn ground_truth_modes(&self) -> &[Vec<f64>] {
        &self.modes
    }
    fn tractable(&self) -> bool {
        true
    }

    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let m = product_value(theta);
        Ok((0..2)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                m + NOISE_SD * z
            })
            .collect())
    }

    fn exact_log_likelihood(&self, theta: &[f64], x: &[f64]) -> Option<f64> {
        let m = product_value(theta);
        let var = NOISE_SD * NOISE_SD;
        let quad = x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / var;
        Some(-0.5 * quad - LN_2PI - var.ln())
    }

    fn fixed_observation(&self) -> Option<Vec<f64>> {
        Some(vec![OBSERVED_VALUE, OBSERVED_VALUE])
    }

    fn mode_set(&self) -> Result<ModeSet> {
        let rho = 0.05 * self.prior.diagonal();
        ModeSet::new(self.modes.clone(), CoverageRule::Radius(rho))
    }
}
