//! Sample-quality diagnostics.
//!
//! Missed Mode and Sample Imbalance measure mode coverage against a known
//! mode set, Effective Sample Size measures spread against a reference
//! covariance, and MMD compares whole samples. A Gaussian mixture fit
//! ([`gmm`]) backs the Inception Score mode-diversity proxy.

pub mod gmm;

pub use gmm::{gmm_fit, inception_score, GmmModel};

use crate::error::{Error, Result};
use crate::linalg::sample_covariance;
use rayon::prelude::*;

/// How a sample counts as covering a mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoverageRule {
    /// Same sign pattern as the mode (the unit cell for sign-symmetric
    /// posteriors). Requires modes in distinct orthants.
    Orthant,
    /// Within Euclidean distance `rho` of the mode and closer to it than to
    /// any other mode.
    Radius(f64),
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    pub modes: Vec<Vec<f64>>,
    pub rule: CoverageRule,
}

fn orthant_key(point: &[f64]) -> u64 {
    debug_assert!(point.len() <= 64);
    point
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &v)| acc | (u64::from(v >= 0.0) << i))
}

impl ModeSet {
    pub fn new(modes: Vec<Vec<f64>>, rule: CoverageRule) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument("mode set must be non-empty".into()));
        }
        if let CoverageRule::Orthant = rule {
            let mut keys: Vec<u64> = modes.iter().map(|m| orthant_key(m)).collect();
            keys.sort_unstable();
            keys.dedup();
            if keys.len() != modes.len() {
                return Err(Error::InvalidArgument(
                    "orthant rule requires modes in distinct orthants".into(),
                ));
            }
        }
        if let CoverageRule::Radius(rho) = rule {
            if !(rho > 0.0) {
                return Err(Error::InvalidArgument("radius must be > 0".into()));
            }
        }
        Ok(ModeSet { modes, rule })
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    fn dim(&self) -> usize {
        self.modes[0].len()
    }

    /// Index of the mode a sample covers, if any.
    fn covered_mode(&self, sample: &[f64]) -> Option<usize> {
        match self.rule {
            CoverageRule::Orthant => {
                let key = orthant_key(sample);
                self.modes.iter().position(|m| orthant_key(m) == key)
            }
            CoverageRule::Radius(rho) => {
                let d2 = |m: &[f64]| -> f64 {
                    m.iter()
                        .zip(sample)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                };
                let (best, best_d2) = self
                    .modes
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (i, d2(m)))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
                (best_d2.sqrt() <= rho).then_some(best)
            }
        }
    }

    /// Fraction of samples covering each mode.
    pub fn mode_proportions(&self, samples: &[Vec<f64>]) -> Vec<f64> {
        let mut counts = vec![0.0; self.k()];
        for s in samples {
            if let Some(i) = self.covered_mode(s) {
                counts[i] += 1.0;
            }
        }
        let n = samples.len().max(1) as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }
}

/// Number of modes with no covering sample.
pub fn missed_mode(samples: &[Vec<f64>], modes: &ModeSet) -> Result<usize> {
    if let Some(s) = samples.first() {
        if s.len() != modes.dim() {
            return Err(Error::dim(modes.dim(), s.len(), "samples vs modes"));
        }
    }
    let mut covered = vec![false; modes.k()];
    for s in samples {
        if let Some(i) = modes.covered_mode(s) {
            covered[i] = true;
        }
    }
    Ok(covered.iter().filter(|&&c| !c).count())
}

/// Total-variation style imbalance `Σ_i |v_i − 1/K|` between the observed
/// mode proportions and the uniform allocation (unhalved sum, so the
/// degenerate one-mode allocation scores `2(1 − 1/K)`).
pub fn sample_imbalance(samples: &[Vec<f64>], modes: &ModeSet) -> Result<f64> {
    if !matches!(modes.rule, CoverageRule::Orthant) {
        return Err(Error::InvalidArgument(
            "sample imbalance is defined for the orthant rule".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "sample imbalance of an empty sample set is undefined".into(),
        ));
    }
    let v = modes.mode_proportions(samples);
    let u = 1.0 / modes.k() as f64;
    Ok(v.iter().map(|vi| (vi - u).abs()).sum())
}

/// `N · det(Λ) / det(Σ)` with Λ the sample covariance, exactly as printed in
/// the source definition. `dimension_root` applies the `(det ratio)^{1/d}`
/// normalization instead.
pub fn effective_sample_size(
    samples: &[Vec<f64>],
    reference_cov: &nalgebra::DMatrix<f64>,
    dimension_root: bool,
) -> Result<f64> {
    let n = samples.len();
    let d = reference_cov.nrows();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "need more samples ({n}) than dimensions ({d})"
        )));
    }
    let det_ref = reference_cov.clone().lu().determinant();
    if !(det_ref > 0.0) {
        return Err(Error::InvalidArgument(
            "reference covariance must be nonsingular".into(),
        ));
    }
    let cov = sample_covariance(samples);
    let det = cov.lu().determinant();
    if det <= 0.0 {
        eprintln!("warning: singular sample covariance, effective sample size = 0");
        return Ok(0.0);
    }
    let ratio = det / det_ref;
    let ratio = if dimension_root {
        ratio.powf(1.0 / d as f64)
    } else {
        ratio
    };
    Ok(n as f64 * ratio)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample.
    Median,
    Fixed(f64),
}

/// At most this many pooled points enter the exact median computation;
/// larger pools are strided down to keep the O(n²) median affordable.
const MEDIAN_POOL_CAP: usize = 4096;

fn gaussian_kernel(a: &[f64], b: &[f64], inv_two_sigma2: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 * inv_two_sigma2).exp()
}

/// Median pairwise Euclidean distance of the pooled set.
pub fn median_heuristic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y.iter()).collect();
    let stride = pooled.len().div_ceil(MEDIAN_POOL_CAP).max(1);
    let subset: Vec<&Vec<f64>> = pooled.iter().step_by(stride).copied().collect();
    let n = subset.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = subset[i]
                .iter()
                .zip(subset[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if dists.is_empty() {
        return 0.0;
    }
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    }
}

fn resolve_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> f64 {
    match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            let m = median_heuristic(x, y);
            if m > 0.0 {
                m
            } else {
                eprintln!("warning: zero median pairwise distance, using bandwidth 1");
                1.0
            }
        }
    }
}

fn sum_kernel_pairs(x: &[Vec<f64>], y: &[Vec<f64>], inv_two_sigma2: f64) -> f64 {
    // rows in parallel, inner sums and the row reduction in fixed order
    let rows: Vec<f64> = x
        .par_iter()
        .map(|xi| {
            y.iter()
                .map(|yj| gaussian_kernel(xi, yj, inv_two_sigma2))
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

fn sum_kernel_offdiag(x: &[Vec<f64>], inv_two_sigma2: f64) -> f64 {
    let rows: Vec<f64> = x
        .par_iter()
        .enumerate()
        .map(|(i, xi)| {
            x.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| gaussian_kernel(xi, xj, inv_two_sigma2))
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

/// Unbiased U-statistic estimator of squared MMD with a Gaussian kernel.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument(
            "unbiased MMD needs at least 2 points per sample".into(),
        ));
    }
    let sigma = resolve_bandwidth(x, y, bandwidth);
    let c = 1.0 / (2.0 * sigma * sigma);
    let xx = sum_kernel_offdiag(x, c) / (n * (n - 1)) as f64;
    let yy = sum_kernel_offdiag(y, c) / (m * (m - 1)) as f64;
    let xy = sum_kernel_pairs(x, y, c) / (n * m) as f64;
    Ok(xx + yy - 2.0 * xy)
}

/// Biased (V-statistic) MMD between the two empirical measures: the RKHS
/// distance of their mean embeddings. Nonnegative, defined for single
/// points, and satisfies the triangle inequality, which makes it the right
/// estimator for error-decomposition curves over teacher-set sizes.
pub fn mmd_biased(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let sigma = resolve_bandwidth(x, y, bandwidth);
    let c = 1.0 / (2.0 * sigma * sigma);
    let xx = (sum_kernel_offdiag(x, c) + n as f64) / (n * n) as f64;
    let yy = (sum_kernel_offdiag(y, c) + m as f64) / (m * m) as f64;
    let xy = sum_kernel_pairs(x, y, c) / (n * m) as f64;
    Ok((xx + yy - 2.0 * xy).max(0.0).sqrt())
}

/// Null distribution of the U-statistic under pooled relabeling.
pub fn mmd2_permutation_null(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    n_permutations: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<f64>> {
    let sigma = resolve_bandwidth(x, y, Bandwidth::Median);
    let mut pooled: Vec<Vec<f64>> = x.iter().chain(y.iter()).cloned().collect();
    let mut out = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        crate::flow::shuffle_seeded(&mut pooled, rng);
        let (a, b) = pooled.split_at(x.len());
        out.push(mmd2(a, b, Bandwidth::Fixed(sigma))?);
    }
    Ok(out)
}

/// One measured point of the error-decomposition table.
#[derive(Debug, Clone)]
pub struct ErrorDecompositionRow {
    pub m: usize,
    pub seed: u64,
    /// MMD(teacher set, reference): sampling error of the M-chain draw.
    pub sampling_error: f64,
    /// MMD(surrogate samples, reference): total surrogate error.
    pub isp_error: Option<f64>,
    /// MMD(surrogate samples, teacher set): training residual.
    pub estimation_error: Option<f64>,
}

/// Measure the error decomposition over a grid of chain counts and seeds.
///
/// `teacher_fn(m, seed)` draws an M-sample teacher set; `surrogate_fn`
/// (given the teacher set and seed) trains a surrogate and returns samples
/// from it, or `None` to measure sampling error only. One shared kernel
/// bandwidth comes from the reference set so the three errors live in the
/// same RKHS metric.
pub fn error_decomposition(
    teacher_fn: &(dyn Fn(usize, u64) -> Result<Vec<Vec<f64>>> + Sync),
    surrogate_fn: Option<&(dyn Fn(&[Vec<f64>], u64) -> Result<Vec<Vec<f64>>> + Sync)>,
    reference: &[Vec<f64>],
    m_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<ErrorDecompositionRow>> {
    if reference.len() < 2 {
        return Err(Error::InvalidArgument("reference set too small".into()));
    }
    let sigma = median_heuristic(reference, &[]);
    let bw = Bandwidth::Fixed(if sigma > 0.0 { sigma } else { 1.0 });
    let mut rows = Vec::with_capacity(m_grid.len() * seeds.len());
    for &m in m_grid {
        for &seed in seeds {
            let teacher = teacher_fn(m, seed)?;
            let sampling_error = mmd_biased(&teacher, reference, bw)?;
            let (isp_error, estimation_error) = match surrogate_fn {
                Some(f) if m >= 20 => {
                    let samples = f(&teacher, seed)?;
                    (
                        Some(mmd_biased(&samples, reference, bw)?),
                        Some(mmd_biased(&samples, &teacher, bw)?),
                    )
                }
                _ => (None, None),
            };
            rows.push(ErrorDecompositionRow {
                m,
                seed,
                sampling_error,
                isp_error,
                estimation_error,
            });
        }
    }
    Ok(rows)
}

/// Mean and standard error over seeds for one column of the decomposition.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n.max(1.0);
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
