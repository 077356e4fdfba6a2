//! Monotone rational-quadratic spline transforms.
//!
//! One spline maps `[-B, B]` onto itself through `K` bins and acts as the
//! identity outside. Raw (unconstrained) parameters are materialized as
//! positive bin widths/heights via a floored softmax and positive knot
//! derivatives via a shifted softplus, chosen so that all-zero raw
//! parameters give exactly the identity transform.
//!
//! Training needs the derivative of the inverse pass with respect to the raw
//! parameters. Rather than differentiating through the quadratic-formula
//! inverse, `inverse_with_grads` uses implicit differentiation of
//! `forward(z; p) = x`, which only requires partials of the forward map.

use crate::error::{Error, Result};

pub const MIN_BIN_FRACTION: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Materialized parameters of one spline segment stack.
#[derive(Debug, Clone)]
pub struct SplineSegmentParams {
    pub bin_widths: Vec<f64>,
    pub bin_heights: Vec<f64>,
    pub knot_derivs: Vec<f64>,
    pub tail_bound: f64,
    /// Cumulative knot positions, length K+1, first = -B, last = B.
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
    /// Softmax probabilities kept for the raw-parameter chain rule.
    width_probs: Vec<f64>,
    height_probs: Vec<f64>,
}

/// Number of raw parameters per transformed coordinate for K bins:
/// K widths + K heights + (K-1) interior derivatives.
pub fn raw_params_per_dim(n_bins: usize) -> usize {
    3 * n_bins - 1
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shift that makes the materialized derivative equal 1 at raw value 0.
fn deriv_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

impl SplineSegmentParams {
    /// Materialize from raw parameters laid out `[w_0..w_K, h_0..h_K, d_1..d_{K-1}]`.
    pub fn from_raw(raw: &[f64], n_bins: usize, tail_bound: f64) -> Result<Self> {
        if raw.len() != raw_params_per_dim(n_bins) {
            return Err(Error::dim(
                raw_params_per_dim(n_bins),
                raw.len(),
                "spline raw params",
            ));
        }
        if tail_bound <= 0.0 {
            return Err(Error::InvalidArgument("tail bound must be > 0".into()));
        }
        let k = n_bins;
        let width_probs = softmax(&raw[0..k]);
        let height_probs = softmax(&raw[k..2 * k]);
        let span = 2.0 * tail_bound;
        let scale = 1.0 - k as f64 * MIN_BIN_FRACTION;
        let widths: Vec<f64> = width_probs
            .iter()
            .map(|&p| span * (MIN_BIN_FRACTION + scale * p))
            .collect();
        let heights: Vec<f64> = height_probs
            .iter()
            .map(|&p| span * (MIN_BIN_FRACTION + scale * p))
            .collect();
        let shift = deriv_shift();
        let mut derivs = Vec::with_capacity(k + 1);
        derivs.push(1.0);
        for &r in &raw[2 * k..] {
            derivs.push(MIN_DERIVATIVE + softplus(r + shift));
        }
        derivs.push(1.0);

        let cum = |vals: &[f64]| -> Vec<f64> {
            let mut knots = Vec::with_capacity(k + 1);
            let mut acc = -tail_bound;
            knots.push(acc);
            for &v in vals {
                acc += v;
                knots.push(acc);
            }
            // take out cumulative rounding so the top knot is exactly B
            *knots.last_mut().unwrap() = tail_bound;
            knots
        };
        let knots_x = cum(&widths);
        let knots_y = cum(&heights);

        Ok(SplineSegmentParams {
            bin_widths: widths,
            bin_heights: heights,
            knot_derivs: derivs,
            tail_bound,
            knots_x,
            knots_y,
            width_probs,
            height_probs,
        })
    }

    /// Identity-parameterized spline (uniform bins, unit derivatives).
    pub fn identity(n_bins: usize, tail_bound: f64) -> Self {
        Self::from_raw(&vec![0.0; raw_params_per_dim(n_bins)], n_bins, tail_bound).unwrap()
    }

    pub fn n_bins(&self) -> usize {
        self.bin_widths.len()
    }

    fn locate(knots: &[f64], v: f64) -> usize {
        // rightmost bin k with knots[k] <= v; v is inside (-B, B)
        match knots.binary_search_by(|probe| probe.partial_cmp(&v).unwrap()) {
            Ok(idx) => idx.min(knots.len() - 2),
            Err(idx) => idx.saturating_sub(1).min(knots.len() - 2),
        }
    }
}

struct BinLocal {
    k: usize,
    x0: f64,
    w: f64,
    y0: f64,
    h: f64,
    d0: f64,
    d1: f64,
    s: f64,
}

impl BinLocal {
    fn new(p: &SplineSegmentParams, k: usize) -> Self {
        BinLocal {
            k,
            x0: p.knots_x[k],
            w: p.bin_widths[k],
            y0: p.knots_y[k],
            h: p.bin_heights[k],
            d0: p.knot_derivs[k],
            d1: p.knot_derivs[k + 1],
            s: p.bin_heights[k] / p.bin_widths[k],
        }
    }

    fn forward_at(&self, xi: f64) -> (f64, f64) {
        let omx = 1.0 - xi;
        let c = self.d1 + self.d0 - 2.0 * self.s;
        let u = self.s * xi * xi + self.d0 * xi * omx;
        let v = self.s + c * xi * omx;
        let y = self.y0 + self.h * u / v;
        let n = self.d1 * xi * xi + 2.0 * self.s * xi * omx + self.d0 * omx * omx;
        let deriv = self.s * self.s * n / (v * v);
        (y, deriv)
    }
}

/// Apply the spline to a scalar. Returns the image and the log absolute
/// derivative of the applied map (so forward and inverse log-dets at
/// corresponding points sum to zero).
pub fn rq_spline_apply(
    x: f64,
    seg: &SplineSegmentParams,
    direction: Direction,
) -> Result<(f64, f64)> {
    if !x.is_finite() {
        return Err(Error::NonFinite("spline input".into()));
    }
    let b = seg.tail_bound;
    if x <= -b || x >= b {
        return Ok((x, 0.0));
    }
    match direction {
        Direction::Forward => {
            let k = SplineSegmentParams::locate(&seg.knots_x, x);
            let local = BinLocal::new(seg, k);
            let xi = ((x - local.x0) / local.w).clamp(0.0, 1.0);
            let (y, deriv) = local.forward_at(xi);
            Ok((y.clamp(-b, b), deriv.ln()))
        }
        Direction::Inverse => {
            let k = SplineSegmentParams::locate(&seg.knots_y, x);
            let local = BinLocal::new(seg, k);
            let xi = invert_bin(&local, x);
            let z = local.x0 + xi * local.w;
            let (_, deriv) = local.forward_at(xi);
            Ok((z.clamp(-b, b), -deriv.ln()))
        }
    }
}

/// Solve the rational quadratic for ξ ∈ [0, 1] given y inside bin `local`.
fn invert_bin(local: &BinLocal, y: f64) -> f64 {
    let yr = y - local.y0;
    let c2 = local.d1 + local.d0 - 2.0 * local.s;
    let a = local.h * (local.s - local.d0) + yr * c2;
    let b = local.h * local.d0 - yr * c2;
    let c = -local.s * yr;
    // stable root of a ξ² + b ξ + c = 0 that lies in [0, 1]
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let xi = 2.0 * c / (-b - disc.sqrt());
    xi.clamp(0.0, 1.0)
}

/// Gradient bundle of one inverse application, for training.
///
/// For input `y` (data side), with `z` the pre-image and `ldj = -ln f'(z)`
/// the log-determinant contribution of the inverse map, holds the partial
/// derivatives of `z` and `ldj` with respect to `y` and with respect to each
/// raw parameter.
pub struct InverseGrads {
    pub z: f64,
    pub ldj: f64,
    pub dz_dy: f64,
    pub dldj_dy: f64,
    /// Same layout as the raw parameter slice: K widths, K heights, K-1 derivs.
    pub dz_draw: Vec<f64>,
    pub dldj_draw: Vec<f64>,
}

/// Inverse pass with analytic gradients via implicit differentiation.
///
/// `raw` must be the same slice the segment was materialized from.
pub fn inverse_with_grads(y: f64, seg: &SplineSegmentParams, raw: &[f64]) -> Result<InverseGrads> {
    if !y.is_finite() {
        return Err(Error::NonFinite("spline input".into()));
    }
    let kk = seg.n_bins();
    let n_raw = raw_params_per_dim(kk);
    if raw.len() != n_raw {
        return Err(Error::dim(n_raw, raw.len(), "spline raw params"));
    }
    let b = seg.tail_bound;
    if y <= -b || y >= b {
        return Ok(InverseGrads {
            z: y,
            ldj: 0.0,
            dz_dy: 1.0,
            dldj_dy: 0.0,
            dz_draw: vec![0.0; n_raw],
            dldj_draw: vec![0.0; n_raw],
        });
    }

    let k = SplineSegmentParams::locate(&seg.knots_y, y);
    let local = BinLocal::new(seg, k);
    let xi = invert_bin(&local, y);
    let z = local.x0 + xi * local.w;

    // Local quantities at ξ.
    let omx = 1.0 - xi;
    let (s, d0, d1, w, h) = (local.s, local.d0, local.d1, local.w, local.h);
    let c = d1 + d0 - 2.0 * s;
    let u = s * xi * xi + d0 * xi * omx;
    let v = s + c * xi * omx;
    let n = d1 * xi * xi + 2.0 * s * xi * omx + d0 * omx * omx;
    let u_xi = 2.0 * s * xi + d0 * (1.0 - 2.0 * xi);
    let v_xi = c * (1.0 - 2.0 * xi);
    let n_xi = 2.0 * d1 * xi + 2.0 * s * (1.0 - 2.0 * xi) - 2.0 * d0 * omx;

    let fp = s * s * n / (v * v); // f'(z) > 0
    let ldj = -fp.ln();
    // f''(z) = (1/w) d/dξ [s² n / v²]
    let fpp = (s * s / w) * (n_xi * v - 2.0 * n * v_xi) / (v * v * v);

    // Partials of forward(z;·) and f'(z;·) at fixed z w.r.t. the six local
    // parameters [x0, w, y0, h, d0, d1]. ξ depends on x0, w at fixed z;
    // s depends on h, w.
    let dxi = [-1.0 / w, -xi / w, 0.0, 0.0, 0.0, 0.0];
    let ds = [0.0, -s / w, 0.0, 1.0 / w, 0.0, 0.0];
    let dd0 = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let dd1 = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let dy0 = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let dh = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];

    let mut dz_dp = [0.0; 6];
    let mut dldj_dp = [0.0; 6];
    for p in 0..6 {
        let dc = dd0[p] + dd1[p] - 2.0 * ds[p];
        let du = ds[p] * xi * xi + dd0[p] * xi * omx + u_xi * dxi[p];
        let dv = ds[p] + dc * xi * omx + v_xi * dxi[p];
        let dn = dd1[p] * xi * xi
            + 2.0 * ds[p] * xi * omx
            + dd0[p] * omx * omx
            + n_xi * dxi[p];
        // forward value partial at fixed z
        let dfwd = dy0[p] + dh[p] * u / v + h * (du * v - u * dv) / (v * v);
        // f' partial at fixed z
        let dfp = (2.0 * s * ds[p] * n + s * s * dn) / (v * v) - 2.0 * s * s * n * dv / (v * v * v);
        // implicit: z moves to keep forward(z;p) = y
        let dz = -dfwd / fp;
        dz_dp[p] = dz;
        dldj_dp[p] = -(dfp + fpp * dz) / fp;
    }
    let dz_dy = 1.0 / fp;
    let dldj_dy = -fpp / (fp * fp);

    // Chain local parameters into the raw slice.
    // x0 = knots_x[k] collects all widths m < k; w is width k. Same for y.
    let mut dz_draw = vec![0.0; n_raw];
    let mut dldj_draw = vec![0.0; n_raw];
    let span = 2.0 * seg.tail_bound;
    let scale = 1.0 - kk as f64 * MIN_BIN_FRACTION;

    // widths: W_m = span (floor + scale p_m); ∂W_m/∂r_n = span·scale·p_m(δ − p_n).
    // With gW_m = gx0·[m<k] + gw·[m=k]:
    //   grad_r_n = span·scale·p_n (gW_n − Σ_m gW_m p_m)
    let chain_softmax = |g_knot: f64, g_bin: f64, probs: &[f64], out: &mut [f64]| {
        let mut dot = 0.0;
        for (m, &pm) in probs.iter().enumerate() {
            let gm = if m < k {
                g_knot
            } else if m == k {
                g_bin
            } else {
                0.0
            };
            dot += gm * pm;
        }
        for (nn, &pn) in probs.iter().enumerate() {
            let gn = if nn < k {
                g_knot
            } else if nn == k {
                g_bin
            } else {
                0.0
            };
            out[nn] = span * scale * pn * (gn - dot);
        }
    };

    chain_softmax(dz_dp[0], dz_dp[1], &seg.width_probs, &mut dz_draw[0..kk]);
    chain_softmax(
        dldj_dp[0],
        dldj_dp[1],
        &seg.width_probs,
        &mut dldj_draw[0..kk],
    );
    chain_softmax(dz_dp[2], dz_dp[3], &seg.height_probs, &mut dz_draw[kk..2 * kk]);
    chain_softmax(
        dldj_dp[2],
        dldj_dp[3],
        &seg.height_probs,
        &mut dldj_draw[kk..2 * kk],
    );

    // derivatives: D_j = min + softplus(r_{j-1} + shift) for interior
    // j = 1..K-1; the boundary derivatives are fixed at 1.
    let shift = deriv_shift();
    if k >= 1 {
        let r_idx = 2 * kk + (k - 1); // raw index of D_k
        let sig = sigmoid(raw[r_idx] + shift);
        dz_draw[r_idx] += dz_dp[4] * sig;
        dldj_draw[r_idx] += dldj_dp[4] * sig;
    }
    if k + 1 <= kk - 1 {
        let r_idx = 2 * kk + k; // raw index of D_{k+1}
        let sig = sigmoid(raw[r_idx] + shift);
        dz_draw[r_idx] += dz_dp[5] * sig;
        dldj_draw[r_idx] += dldj_dp[5] * sig;
    }

    Ok(InverseGrads {
        z,
        ldj,
        dz_dy,
        dldj_dy,
        dz_draw,
        dldj_draw,
    })
}
