//! Full-covariance Gaussian mixture fit by EM with k-means++ seeding, plus
//! the Inception Score computed from its responsibilities.

use crate::error::{Error, Result};
use crate::flow::LN_2PI;
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const COV_EIGEN_FLOOR: f64 = 1e-6;
const EM_TOL: f64 = 1e-6;
const EM_MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

struct Component {
    chol_lower: DMatrix<f64>,
    log_norm: f64, // -(d/2) ln 2π - (1/2) ln det Σ
}

fn prepare_component(cov: &DMatrix<f64>) -> Result<Component> {
    let d = cov.nrows();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance not positive definite".into()))?;
    let log_det: f64 = (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(Component {
        chol_lower: chol.l(),
        log_norm: -0.5 * (d as f64) * LN_2PI - 0.5 * log_det,
    })
}

fn log_gaussian(comp: &Component, mean: &[f64], x: &[f64]) -> f64 {
    let d = mean.len();
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    // solve L y = diff, then |y|² = diffᵀ Σ⁻¹ diff
    let y = comp
        .chol_lower
        .clone()
        .solve_lower_triangular(&diff)
        .expect("lower triangular solve");
    comp.log_norm - 0.5 * y.norm_squared()
}

fn floor_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(COV_EIGEN_FLOOR));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn kmeans_pp_init(data: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers: Vec<Vec<f64>> = vec![data[rng.random_range(0..n)].clone()];
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    while centers.len() < c {
        let dists: Vec<f64> = data
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|ce| d2(p, ce))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            // all points coincide with existing centers
            centers.push(data[rng.random_range(0..n)].clone());
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, w) in dists.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        centers.push(data[pick].clone());
    }
    centers
}

/// Log-responsibility matrix `[n × C]` plus the data log-likelihood.
fn responsibilities(model: &GmmModel, data: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let comps: Vec<Component> = model
        .covariances
        .iter()
        .map(prepare_component)
        .collect::<Result<_>>()?;
    let mut resp = Vec::with_capacity(data.len());
    let mut ll = 0.0;
    for x in data {
        let logs: Vec<f64> = (0..model.weights.len())
            .map(|c| model.weights[c].max(1e-300).ln() + log_gaussian(&comps[c], &model.means[c], x))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        ll += lse;
        resp.push(logs.iter().map(|l| (l - lse).exp()).collect());
    }
    Ok((resp, ll))
}

/// Posterior component probabilities `p(c|x)` for each row.
pub fn gmm_responsibilities(model: &GmmModel, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Ok(responsibilities(model, data)?.0)
}

/// Fit a C-component full-covariance mixture by EM.
///
/// k-means++ seeding, covariance eigenvalues floored at 1e-6, stops when the
/// log-likelihood improves by less than 1e-6 or after 200 iterations. A
/// component that collapses to zero weight is reseeded once; a second
/// collapse is an error.
pub fn gmm_fit(data: &[Vec<f64>], c: usize, seed: u64) -> Result<GmmModel> {
    gmm_fit_traced(data, c, seed).map(|(m, _)| m)
}

/// [`gmm_fit`] plus the per-iteration log-likelihood sequence.
pub fn gmm_fit_traced(data: &[Vec<f64>], c: usize, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    let n = data.len();
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if n < 10 * c {
        return Err(Error::InvalidArgument(format!(
            "need at least {} points for {c} components, got {n}",
            10 * c
        )));
    }
    let d = data[0].len();
    let mut r = rng::stream(seed, &[rng::tag::FIT_INIT]);
    let means = kmeans_pp_init(data, c, &mut r);
    let global_cov = floor_covariance(&crate::linalg::sample_covariance(data));
    let mut model = GmmModel {
        weights: vec![1.0 / c as f64; c],
        means,
        covariances: vec![global_cov.clone(); c],
        log_likelihood: f64::NEG_INFINITY,
    };

    let mut reseeded = false;
    let mut prev_ll = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    for _ in 0..EM_MAX_ITERS {
        let (resp, ll) = responsibilities(&model, data)?;
        model.log_likelihood = ll;
        // M step
        let mut nk = vec![0.0; c];
        for row in &resp {
            for (k, v) in row.iter().enumerate() {
                nk[k] += v;
            }
        }
        if let Some(dead) = nk.iter().position(|&v| v < 1e-10) {
            if reseeded {
                return Err(Error::Diverged(format!(
                    "mixture component {dead} emptied twice during EM"
                )));
            }
            reseeded = true;
            model.means[dead] = data[r.random_range(0..n)].clone();
            model.covariances[dead] = global_cov.clone();
            model.weights = vec![1.0 / c as f64; c];
            prev_ll = f64::NEG_INFINITY;
            trace.clear();
            continue;
        }
        trace.push(ll);
        if (ll - prev_ll).abs() < EM_TOL {
            break;
        }
        prev_ll = ll;
        for k in 0..c {
            model.weights[k] = nk[k] / n as f64;
            let mut mean = vec![0.0; d];
            for (x, row) in data.iter().zip(&resp) {
                for (mi, xi) in mean.iter_mut().zip(x) {
                    *mi += row[k] * xi;
                }
            }
            mean.iter_mut().for_each(|v| *v /= nk[k]);
            let mut cov = DMatrix::zeros(d, d);
            for (x, row) in data.iter().zip(&resp) {
                for i in 0..d {
                    let di = x[i] - mean[i];
                    for j in 0..d {
                        cov[(i, j)] += row[k] * di * (x[j] - mean[j]);
                    }
                }
            }
            cov /= nk[k];
            model.means[k] = mean;
            model.covariances[k] = floor_covariance(&cov);
        }
    }
    Ok((model, trace))
}

/// `exp(E_x[KL(p(c|x) ‖ p(c))])` with `p(c)` the mean responsibility.
/// Equals 1 for a single component and at most the component count.
pub fn inception_score(samples: &[Vec<f64>], model: &GmmModel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let resp = gmm_responsibilities(model, samples)?;
    let c = model.weights.len();
    let n = samples.len() as f64;
    let mut marginal = vec![0.0; c];
    for row in &resp {
        for (m, v) in marginal.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut mean_kl = 0.0;
    for row in &resp {
        let kl: f64 = row
            .iter()
            .zip(&marginal)
            .map(|(p, q)| {
                let p = p.max(1e-12);
                let q = q.max(1e-12);
                p * (p.ln() - q.ln())
            })
            .sum();
        mean_kl += kl / n;
    }
    Ok(mean_kl.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blob(center: &[f64], spread: f64, n: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(r);
                        c + spread * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let mut r = rng::stream(1, &[9]);
        let data = blob(&[2.0, -1.0], 0.8, 400, &mut r);
        let model = gmm_fit(&data, 1, 0).unwrap();
        let mean = crate::linalg::col_means(&data);
        for (a, b) in model.means[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-8);
        }
        // EM uses the 1/n covariance; compare against it
        let n = data.len() as f64;
        let cov = crate::linalg::sample_covariance(&data) * ((n - 1.0) / n);
        for i in 0..2 {
            for j in 0..2 {
                assert!((model.covariances[0][(i, j)] - cov[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_far_blobs_get_sharp_responsibilities() {
        let mut r = rng::stream(2, &[9]);
        let mut data = blob(&[0.0, 0.0], 0.3, 200, &mut r);
        data.extend(blob(&[10.0, 10.0], 0.3, 200, &mut r));
        let model = gmm_fit(&data, 2, 3).unwrap();
        let resp = gmm_responsibilities(&model, &data).unwrap();
        for row in resp {
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert!(max >= 0.99, "soft assignment {row:?}");
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let mut r = rng::stream(3, &[9]);
        let mut data = blob(&[0.0], 1.0, 150, &mut r);
        data.extend(blob(&[4.0], 1.0, 150, &mut r));
        let (fitted, trace) = gmm_fit_traced(&data, 2, 7).unwrap();
        assert!(fitted.log_likelihood.is_finite());
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "EM decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn inception_score_single_component_is_one() {
        let mut r = rng::stream(4, &[9]);
        let data = blob(&[1.0, 1.0], 1.0, 300, &mut r);
        let model = gmm_fit(&data, 1, 0).unwrap();
        let is = inception_score(&data, &model).unwrap();
        assert!((is - 1.0).abs() < 1e-12, "{is}");
    }

    #[test]
    fn inception_score_of_separated_clusters_reaches_component_count() {
        let mut r = rng::stream(5, &[9]);
        let mut data = Vec::new();
        for c in 0..4 {
            data.extend(blob(&[10.0 * c as f64, 0.0], 0.2, 150, &mut r));
        }
        let model = gmm_fit(&data, 4, 11).unwrap();
        let is = inception_score(&data, &model).unwrap();
        assert!((is - 4.0).abs() / 4.0 < 0.02, "IS = {is}");
        assert!(is <= 4.0 + 1e-9);
    }

    #[test]
    fn inception_score_is_order_invariant() {
        let mut r = rng::stream(6, &[9]);
        let mut data = blob(&[0.0], 1.0, 100, &mut r);
        data.extend(blob(&[6.0], 1.0, 100, &mut r));
        let model = gmm_fit(&data, 2, 1).unwrap();
        let a = inception_score(&data, &model).unwrap();
        data.reverse();
        let b = inception_score(&data, &model).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gmm_rejects_too_few_points() {
        let data = vec![vec![0.0]; 15];
        assert!(gmm_fit(&data, 2, 0).is_err());
    }
}
