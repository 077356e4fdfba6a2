//! Rational-quadratic spline coupling flows.
//!
//! A [`FlowModel`] stacks coupling layers over a standard-normal base. Each
//! layer passes half the coordinates through unchanged, feeds them (plus any
//! conditioning context) to a dense conditioner, and transforms the other
//! half elementwise with monotone rational-quadratic splines. Sampling runs
//! the layers forward from base noise; density evaluation runs them in
//! reverse. A freshly constructed model is exactly the identity transform,
//! so its density equals the base normal.

pub mod spline;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    net_backward_batch, net_forward_batch, Activation, AdamState, DenseNetSpec, ParamVector,
};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use spline::{
    inverse_with_grads, raw_params_per_dim, rq_spline_apply, Direction, SplineSegmentParams,
};
use std::fmt::Write as _;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Architecture of a flow. `context_dim = 0` means unconditional.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    pub context_dim: usize,
    pub n_blocks: usize,
    pub n_bins: usize,
    pub tail_bound: f64,
    pub hidden: usize,
    /// Standardize variables (and contexts) from the training split before
    /// fitting; the affine correction is folded into the density.
    pub standardize: bool,
}

impl FlowConfig {
    pub fn new(dim: usize, context_dim: usize, tail_bound: f64) -> Self {
        FlowConfig {
            dim,
            context_dim,
            n_blocks: 3,
            n_bins: 16,
            tail_bound,
            hidden: 50,
            standardize: false,
        }
    }
}

/// Training schedule shared by all flow and classifier fits.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 50,
            val_fraction: 0.1,
            patience_epochs: 20,
            max_epochs: 300,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "val_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.patience_epochs == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("bad lr / weight_decay".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut shift = vec![0.0; d];
        for r in rows {
            for (s, v) in shift.iter_mut().zip(r) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|v| *v /= n);
        let mut scale = vec![0.0; d];
        for r in rows {
            for (i, v) in r.iter().enumerate() {
                let c = v - shift[i];
                scale[i] += c * c;
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n.max(1.0)).sqrt();
            if *s < 1e-8 {
                *s = 1.0; // constant column: leave it unscaled
            }
        }
        Standardizer { shift, scale }
    }

    fn apply(&self, row: &mut [f64]) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - self.shift[i]) / self.scale[i];
        }
    }

    fn invert(&self, row: &mut [f64]) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = *v * self.scale[i] + self.shift[i];
        }
    }

    fn log_det(&self) -> f64 {
        // log |d standardized / d raw| = -Σ log scale
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Coupling flow over a standard-normal base.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub cfg: FlowConfig,
    /// Per layer: `true` marks pass-through coordinates.
    masks: Vec<Vec<bool>>,
    conditioners: Vec<DenseNetSpec>,
    params: ParamVector,
    pub standardizer: Option<Standardizer>,
    pub context_standardizer: Option<Standardizer>,
}

fn build_masks(dim: usize, n_blocks: usize) -> Vec<Vec<bool>> {
    let half = dim.div_ceil(2);
    (0..n_blocks)
        .map(|layer| {
            (0..dim)
                .map(|i| {
                    if dim == 1 {
                        false // single coordinate is always transformed
                    } else if layer % 2 == 0 {
                        i < half
                    } else {
                        i >= half
                    }
                })
                .collect()
        })
        .collect()
}

struct LayerIndex {
    pass: Vec<usize>,
    trans: Vec<usize>,
}

fn layer_index(mask: &[bool]) -> LayerIndex {
    LayerIndex {
        pass: (0..mask.len()).filter(|&i| mask[i]).collect(),
        trans: (0..mask.len()).filter(|&i| !mask[i]).collect(),
    }
}

impl FlowModel {
    /// Build an identity-initialized flow: conditioner hidden layers get
    /// random weights but every output layer is zeroed, so all splines start
    /// as the identity and `log_prob` equals the base normal density.
    pub fn new(cfg: FlowConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidArgument("flow dim must be >= 1".into()));
        }
        if cfg.tail_bound <= 0.0 {
            return Err(Error::InvalidArgument("tail bound must be > 0".into()));
        }
        if cfg.n_bins < 2 || cfg.n_blocks == 0 {
            return Err(Error::InvalidArgument("need >= 2 bins, >= 1 block".into()));
        }
        let masks = build_masks(cfg.dim, cfg.n_blocks);
        let mut conditioners = Vec::with_capacity(cfg.n_blocks);
        let mut parts = Vec::new();
        for mask in &masks {
            let idx = layer_index(mask);
            let spec = DenseNetSpec::new(
                idx.pass.len() + cfg.context_dim,
                vec![cfg.hidden; 3],
                idx.trans.len() * raw_params_per_dim(cfg.n_bins),
                Activation::Relu,
                true,
            )?;
            let mut p = spec.init_params(rng);
            spec.zero_output_layer(&mut p);
            conditioners.push(spec);
            parts.push(p);
        }
        let named: Vec<(String, &ParamVector)> = parts
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("l{i}"), p))
            .collect();
        let params = ParamVector::concat(&named);
        Ok(FlowModel {
            cfg,
            masks,
            conditioners,
            params,
            standardizer: None,
            context_standardizer: None,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_params(&self, layer: usize) -> ParamVector {
        self.params
            .slice_prefix(&format!("l{layer}"))
            .expect("layer params")
            .0
    }

    fn check_dims(&self, point_len: usize, ctx_len: usize) -> Result<()> {
        if point_len != self.cfg.dim {
            return Err(Error::dim(self.cfg.dim, point_len, "flow point"));
        }
        if ctx_len != self.cfg.context_dim {
            return Err(Error::dim(self.cfg.context_dim, ctx_len, "flow context"));
        }
        Ok(())
    }

    fn conditioner_input(&self, z: &Matrix, idx: &LayerIndex, ctx: Option<&Matrix>) -> Matrix {
        let n = z.rows;
        let c = self.cfg.context_dim;
        let mut out = Matrix::zeros(n, idx.pass.len() + c);
        for i in 0..n {
            let zr = z.row(i);
            let row = &mut out.data[i * (idx.pass.len() + c)..(i + 1) * (idx.pass.len() + c)];
            for (j, &p) in idx.pass.iter().enumerate() {
                row[j] = zr[p];
            }
            if let Some(ctx) = ctx {
                row[idx.pass.len()..].copy_from_slice(ctx.row(i));
            }
        }
        out
    }

    /// Log-density of each row of `points` (raw data space).
    pub fn log_prob_batch(&self, points: &Matrix, contexts: Option<&Matrix>) -> Result<Vec<f64>> {
        self.check_dims(points.cols, contexts.map_or(0, |c| c.cols))?;
        if points.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow point".into()));
        }
        let n = points.rows;
        let mut z = points.clone();
        let mut const_term = 0.0;
        if let Some(std) = &self.standardizer {
            for i in 0..n {
                std.apply(z.row_mut(i));
            }
            const_term += std.log_det();
        }
        let ctx_std;
        let ctx = match (contexts, &self.context_standardizer) {
            (Some(c), Some(std)) => {
                let mut m = c.clone();
                for i in 0..m.rows {
                    std.apply(m.row_mut(i));
                }
                ctx_std = m;
                Some(&ctx_std)
            }
            (Some(c), None) => Some(c),
            (None, _) => None,
        };

        let lp = self.log_prob_in_model_space(&z, ctx)?;
        Ok(lp.into_iter().map(|v| v + const_term).collect())
    }

    pub fn log_prob(&self, point: &[f64], context: Option<&[f64]>) -> Result<f64> {
        let p = Matrix {
            rows: 1,
            cols: point.len(),
            data: point.to_vec(),
        };
        let c = context.map(|c| Matrix {
            rows: 1,
            cols: c.len(),
            data: c.to_vec(),
        });
        Ok(self.log_prob_batch(&p, c.as_ref())?[0])
    }

    /// Push rows through the coupling stack in model (standardized) space.
    ///
    /// `Forward` maps base noise toward data; `Inverse` maps data toward the
    /// base. Returns the mapped rows and each row's accumulated
    /// log-|det Jacobian| of the applied direction.
    pub fn transform_batch(
        &self,
        points: &Matrix,
        contexts: Option<&Matrix>,
        direction: Direction,
    ) -> Result<(Matrix, Vec<f64>)> {
        self.check_dims(points.cols, contexts.map_or(0, |c| c.cols))?;
        let n = points.rows;
        let mut z = points.clone();
        let mut ldj = vec![0.0; n];
        let per = raw_params_per_dim(self.cfg.n_bins);
        let layers: Vec<usize> = match direction {
            Direction::Forward => (0..self.cfg.n_blocks).collect(),
            Direction::Inverse => (0..self.cfg.n_blocks).rev().collect(),
        };
        for layer in layers {
            let idx = layer_index(&self.masks[layer]);
            let cin = self.conditioner_input(&z, &idx, contexts);
            let lp = self.layer_params(layer);
            let (raw, _) = net_forward_batch(&self.conditioners[layer], &lp, &cin)?;
            let results: Vec<Result<(Vec<f64>, f64)>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let raw_row = raw.row(i);
                    let mut vals = Vec::with_capacity(idx.trans.len());
                    let mut l = 0.0;
                    for (j, &coord) in idx.trans.iter().enumerate() {
                        let seg = SplineSegmentParams::from_raw(
                            &raw_row[j * per..(j + 1) * per],
                            self.cfg.n_bins,
                            self.cfg.tail_bound,
                        )?;
                        let (y, dlog) = rq_spline_apply(z.row(i)[coord], &seg, direction)?;
                        vals.push(y);
                        l += dlog;
                    }
                    Ok((vals, l))
                })
                .collect();
            for (i, res) in results.into_iter().enumerate() {
                let (vals, l) = res?;
                for (j, &coord) in idx.trans.iter().enumerate() {
                    z.row_mut(i)[coord] = vals[j];
                }
                ldj[i] += l;
            }
        }
        Ok((z, ldj))
    }

    /// Draw `n` i.i.d. samples by feed-forward transformation of base noise.
    /// Returns the points and their log-densities (which match `log_prob`).
    pub fn sample(
        &self,
        n: usize,
        context: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if n == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        self.check_dims(self.cfg.dim, context.map_or(0, |c| c.len()))?;
        let d = self.cfg.dim;
        let mut z = Matrix::zeros(n, d);
        for v in z.data.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let mut log_probs: Vec<f64> = (0..n)
            .map(|i| z.row(i).iter().map(|&v| -0.5 * (LN_2PI + v * v)).sum())
            .collect();

        let ctx_mat = context.map(|c| {
            let mut m = Matrix::zeros(n, c.len());
            for i in 0..n {
                m.row_mut(i).copy_from_slice(c);
            }
            if let Some(std) = &self.context_standardizer {
                for i in 0..n {
                    std.apply(m.row_mut(i));
                }
            }
            m
        });

        let (mut x, ldj) = self.transform_batch(&z, ctx_mat.as_ref(), Direction::Forward)?;
        for (lp, l) in log_probs.iter_mut().zip(&ldj) {
            *lp -= l;
        }
        if let Some(std) = &self.standardizer {
            let ld = std.log_det();
            for i in 0..n {
                std.invert(x.row_mut(i));
                log_probs[i] += ld;
            }
        }
        Ok((x.to_rows(), log_probs))
    }

    /// Mean NLL over the rows of `points` plus its gradient w.r.t. params.
    /// Points and contexts must already be in model (standardized) space;
    /// models fresh from [`FlowModel::new`] have no standardizer, so raw
    /// points are fine there.
    pub fn nll_grad_batch(
        &self,
        points: &Matrix,
        contexts: Option<&Matrix>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = points.rows;
        let scale = 1.0 / n as f64;
        let per = raw_params_per_dim(self.cfg.n_bins);
        let mut grads = vec![0.0; self.params.len()];

        // Inverse pass with caches, layer by layer from the data side.
        struct LayerCache {
            idx: LayerIndex,
            net_cache: crate::nn::ForwardCache,
            grads_bundle: Vec<Vec<spline::InverseGrads>>, // [sample][trans coord]
        }
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.cfg.n_blocks);
        let mut z = points.clone();
        let mut nll = 0.0;
        for layer in (0..self.cfg.n_blocks).rev() {
            let idx = layer_index(&self.masks[layer]);
            let cin = self.conditioner_input(&z, &idx, contexts);
            let lp = self.layer_params(layer);
            let (raw, net_cache) = net_forward_batch(&self.conditioners[layer], &lp, &cin)?;
            let bundle: Vec<Result<Vec<spline::InverseGrads>>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let raw_row = raw.row(i);
                    idx.trans
                        .iter()
                        .enumerate()
                        .map(|(j, &coord)| {
                            let rslice = &raw_row[j * per..(j + 1) * per];
                            let seg = SplineSegmentParams::from_raw(
                                rslice,
                                self.cfg.n_bins,
                                self.cfg.tail_bound,
                            )?;
                            inverse_with_grads(z.row(i)[coord], &seg, rslice)
                        })
                        .collect()
                })
                .collect();
            let mut grads_bundle = Vec::with_capacity(n);
            for (i, res) in bundle.into_iter().enumerate() {
                let row = res?;
                for (j, g) in row.iter().enumerate() {
                    z.row_mut(i)[idx.trans[j]] = g.z;
                    nll -= g.ldj * scale;
                }
                grads_bundle.push(row);
            }
            caches.push(LayerCache {
                idx,
                net_cache,
                grads_bundle,
            });
        }
        for i in 0..n {
            nll += z
                .row(i)
                .iter()
                .map(|&v| 0.5 * (LN_2PI + v * v))
                .sum::<f64>()
                * scale;
        }

        // Backward pass in generative order: start at z0, walk to the data.
        // caches[last] corresponds to flow layer 0, so iterating the cache
        // list in reverse is exactly generative order.
        let mut g_z = z.clone();
        for v in g_z.data.iter_mut() {
            *v *= scale; // d(mean nll)/dz0 = z0 / n
        }
        for (pos, cache) in caches.iter().enumerate().rev() {
            let flow_layer = self.cfg.n_blocks - 1 - pos;
            let idx = &cache.idx;
            let n_trans = idx.trans.len();
            let mut g_raw = Matrix::zeros(n, n_trans * per);
            let mut g_in = Matrix::zeros(n, self.cfg.dim);
            g_raw
                .data
                .par_chunks_mut(n_trans * per)
                .zip(g_in.data.par_chunks_mut(self.cfg.dim))
                .enumerate()
                .for_each(|(i, (raw_row, gin_row))| {
                    for (j, g) in cache.grads_bundle[i].iter().enumerate() {
                        let gz = g_z.row(i)[idx.trans[j]];
                        // λ for the ldj sum: loss subtracts ldj/n
                        let lam = -scale;
                        for t in 0..per {
                            raw_row[j * per + t] = gz * g.dz_draw[t] + lam * g.dldj_draw[t];
                        }
                        gin_row[idx.trans[j]] = gz * g.dz_dy + lam * g.dldj_dy;
                    }
                });
            let lp = self.layer_params(flow_layer);
            let (g_params, g_cin) = net_backward_batch(
                &self.conditioners[flow_layer],
                &lp,
                &cache.net_cache,
                &g_raw,
            )?;
            let (_, offset) = self
                .params
                .slice_prefix(&format!("l{flow_layer}"))
                .expect("layer params");
            for (t, g) in g_params.iter().enumerate() {
                grads[offset + t] += g;
            }
            // pass-through coordinates: identity path plus conditioner input
            for i in 0..n {
                for (j, &coord) in idx.pass.iter().enumerate() {
                    g_in.row_mut(i)[coord] = g_z.row(i)[coord] + g_cin.row(i)[j];
                }
            }
            g_z = g_in;
        }
        Ok((nll, grads))
    }

    /// Mean NLL without gradients (used for validation scoring).
    fn mean_nll(&self, points: &Matrix, contexts: Option<&Matrix>) -> Result<f64> {
        let lp = self.log_prob_in_model_space(points, contexts)?;
        Ok(-lp.iter().sum::<f64>() / points.rows.max(1) as f64)
    }

    /// log_prob over rows already in model (standardized) space, without the
    /// affine correction term.
    fn log_prob_in_model_space(
        &self,
        points: &Matrix,
        contexts: Option<&Matrix>,
    ) -> Result<Vec<f64>> {
        let (z, ldj) = self.transform_batch(points, contexts, Direction::Inverse)?;
        Ok((0..points.rows)
            .map(|i| {
                z.row(i)
                    .iter()
                    .map(|&v| -0.5 * (LN_2PI + v * v))
                    .sum::<f64>()
                    + ldj[i]
            })
            .collect())
    }

    /// Serialize to the flow-v1 text format.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        writeln!(out, "format flow-v1").unwrap();
        writeln!(out, "dim {}", self.cfg.dim).unwrap();
        writeln!(out, "context_dim {}", self.cfg.context_dim).unwrap();
        writeln!(out, "bins {}", self.cfg.n_bins).unwrap();
        writeln!(out, "blocks {}", self.cfg.n_blocks).unwrap();
        writeln!(out, "hidden {}", self.cfg.hidden).unwrap();
        writeln!(out, "tail_bound {}", self.cfg.tail_bound).unwrap();
        for mask in &self.masks {
            let bits: Vec<&str> = mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
            writeln!(out, "mask {}", bits.join(" ")).unwrap();
        }
        let write_std = |out: &mut String, name: &str, std: &Option<Standardizer>| {
            match std {
                Some(s) => {
                    let sh: Vec<String> = s.shift.iter().map(|v| format!("{v}")).collect();
                    let sc: Vec<String> = s.scale.iter().map(|v| format!("{v}")).collect();
                    writeln!(out, "{name} 1").unwrap();
                    writeln!(out, "shift {}", sh.join(" ")).unwrap();
                    writeln!(out, "scale {}", sc.join(" ")).unwrap();
                }
                None => writeln!(out, "{name} 0").unwrap(),
            };
        };
        write_std(&mut out, "standardizer", &self.standardizer);
        write_std(&mut out, "context_standardizer", &self.context_standardizer);
        out.push_str(&self.params.to_document());
        out
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut expect = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing '{key}' line")))?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Format(format!("expected '{key}', got '{line}'")))
        };
        let version = expect("format")?;
        if version != "flow-v1" {
            return Err(Error::Format(format!(
                "checkpoint version mismatch: expected flow-v1, got {version}"
            )));
        }
        let dim: usize = expect("dim")?.parse().map_err(|_| Error::Format("dim".into()))?;
        let context_dim: usize = expect("context_dim")?
            .parse()
            .map_err(|_| Error::Format("context_dim".into()))?;
        let n_bins: usize = expect("bins")?.parse().map_err(|_| Error::Format("bins".into()))?;
        let n_blocks: usize = expect("blocks")?
            .parse()
            .map_err(|_| Error::Format("blocks".into()))?;
        let hidden: usize = expect("hidden")?
            .parse()
            .map_err(|_| Error::Format("hidden".into()))?;
        let tail_bound: f64 = expect("tail_bound")?
            .parse()
            .map_err(|_| Error::Format("tail_bound".into()))?;
        let mut masks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let bits = expect("mask")?;
            let mask: Vec<bool> = bits.split_whitespace().map(|b| b == "1").collect();
            if mask.len() != dim {
                return Err(Error::Format("mask length".into()));
            }
            masks.push(mask);
        }
        let mut read_std = |key: &str| -> Result<Option<Standardizer>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing '{key}'")))?;
            let flag = line
                .strip_prefix(key)
                .map(str::trim)
                .ok_or_else(|| Error::Format(format!("expected '{key}', got '{line}'")))?;
            if flag == "0" {
                return Ok(None);
            }
            let mut parse_vec = |tag: &str| -> Result<Vec<f64>> {
                let l = lines
                    .next()
                    .ok_or_else(|| Error::Format(format!("missing {tag}")))?;
                l.strip_prefix(tag)
                    .ok_or_else(|| Error::Format(format!("expected {tag}")))?
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| Error::Format(tag.into())))
                    .collect()
            };
            let shift = parse_vec("shift")?;
            let scale = parse_vec("scale")?;
            Ok(Some(Standardizer { shift, scale }))
        };
        let standardizer = read_std("standardizer")?;
        let context_standardizer = read_std("context_standardizer")?;
        let rest: Vec<&str> = lines.collect();
        let params = ParamVector::from_document(&rest.join("\n"))?;

        let cfg = FlowConfig {
            dim,
            context_dim,
            n_blocks,
            n_bins,
            tail_bound,
            hidden,
            standardize: standardizer.is_some(),
        };
        let mut conditioners = Vec::with_capacity(n_blocks);
        for mask in &masks {
            let idx = layer_index(mask);
            conditioners.push(DenseNetSpec::new(
                idx.pass.len() + context_dim,
                vec![hidden; 3],
                idx.trans.len() * raw_params_per_dim(n_bins),
                Activation::Relu,
                true,
            )?);
        }
        let expected: usize = conditioners.iter().map(|c| c.param_count()).sum();
        if params.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} params, architecture needs {expected}",
                params.len()
            )));
        }
        Ok(FlowModel {
            cfg,
            masks,
            conditioners,
            params,
            standardizer,
            context_standardizer,
        })
    }
}

/// Per-epoch record emitted by [`fit_flow_traced`].
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub train_nll: f64,
    pub val_nll: f64,
}

/// Fit a flow by maximum likelihood with validation-based early stopping.
///
/// Returns the model with the parameters of the best validation epoch. The
/// split, shuffles and optimizer are all derived from `cfg.seed`.
pub fn fit_flow(
    model: FlowModel,
    data: &[Vec<f64>],
    contexts: Option<&[Vec<f64>]>,
    cfg: &FitConfig,
) -> Result<FlowModel> {
    fit_flow_traced(model, data, contexts, cfg).map(|(m, _)| m)
}

/// Same as [`fit_flow`] but also reports the per-epoch loss curve.
pub fn fit_flow_traced(
    mut model: FlowModel,
    data: &[Vec<f64>],
    contexts: Option<&[Vec<f64>]>,
    cfg: &FitConfig,
) -> Result<(FlowModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let n = data.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 training points, got {n}"
        )));
    }
    if let Some(ctx) = contexts {
        if ctx.len() != n {
            return Err(Error::dim(n, ctx.len(), "contexts vs data"));
        }
    }
    if data
        .iter()
        .any(|r| r.len() != model.cfg.dim || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("training data".into()));
    }

    let mut shuffle_rng = rng::stream(cfg.seed, &[rng::tag::FIT_SHUFFLE]);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_seeded(&mut order, &mut shuffle_rng);
    let n_val = ((n as f64 * cfg.val_fraction).ceil() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    if n_train < 2 {
        return Err(Error::InvalidArgument(format!(
            "too few training points after validation split: {n_train}"
        )));
    }
    let (train_idx, val_idx) = order.split_at(n_train);

    if model.cfg.standardize && model.standardizer.is_none() {
        let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| data[i].clone()).collect();
        model.standardizer = Some(Standardizer::from_rows(&train_rows));
        if let Some(ctx) = contexts {
            let ctx_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| ctx[i].clone()).collect();
            model.context_standardizer = Some(Standardizer::from_rows(&ctx_rows));
        }
    }

    // Move everything to model space once.
    let to_model_space = |idx: &[usize]| -> (Matrix, Option<Matrix>) {
        let mut pts = Matrix::zeros(idx.len(), model.cfg.dim);
        for (r, &i) in idx.iter().enumerate() {
            pts.row_mut(r).copy_from_slice(&data[i]);
            if let Some(std) = &model.standardizer {
                std.apply(pts.row_mut(r));
            }
        }
        let ctx = contexts.map(|c| {
            let mut m = Matrix::zeros(idx.len(), model.cfg.context_dim);
            for (r, &i) in idx.iter().enumerate() {
                m.row_mut(r).copy_from_slice(&c[i]);
                if let Some(std) = &model.context_standardizer {
                    std.apply(m.row_mut(r));
                }
            }
            m
        });
        (pts, ctx)
    };
    let (train_pts, train_ctx) = to_model_space(train_idx);
    let (val_pts, val_ctx) = to_model_space(val_idx);

    let mut adam = AdamState::new(model.n_params(), cfg.lr, cfg.weight_decay);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;
    let mut trace = Vec::new();

    let mut batch_order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.max_epochs {
        let mut erng = rng::stream(cfg.seed, &[rng::tag::FIT_SHUFFLE, 1 + epoch as u64]);
        shuffle_seeded(&mut batch_order, &mut erng);
        let mut epoch_nll = 0.0;
        for chunk in batch_order.chunks(cfg.batch_size) {
            let mut pts = Matrix::zeros(chunk.len(), model.cfg.dim);
            for (r, &i) in chunk.iter().enumerate() {
                pts.row_mut(r).copy_from_slice(train_pts.row(i));
            }
            let ctx = train_ctx.as_ref().map(|c| {
                let mut m = Matrix::zeros(chunk.len(), model.cfg.context_dim);
                for (r, &i) in chunk.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(c.row(i));
                }
                m
            });
            let (nll, grads) = model.nll_grad_batch(&pts, ctx.as_ref())?;
            if !nll.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            epoch_nll += nll * chunk.len() as f64;
            adam.step(model.params.values_mut(), &grads)?;
        }
        let val_nll = model.mean_nll(&val_pts, val_ctx.as_ref())?;
        if !val_nll.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        trace.push(EpochStats {
            train_nll: epoch_nll / n_train as f64,
            val_nll,
        });
        if val_nll < best_val {
            best_val = val_nll;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience_epochs {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, trace))
}

/// Fisher–Yates with draws from the given stream.
pub fn shuffle_seeded<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
