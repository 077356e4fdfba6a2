//! Minimal dense networks with analytic reverse-mode gradients.
//!
//! Supports exactly the two architectures the flows and the ratio classifier
//! need: a plain MLP with a linear output layer, and a pre-activation
//! residual stack (linear input projection, `h ← h + W·act(h) + b` blocks,
//! linear head). All math is f64. Everything is a pure function of its
//! inputs, so batched evaluation parallelizes freely; parameter gradients
//! are accumulated over the batch in a fixed order.

mod adam;
mod param;

pub use adam::AdamState;
pub use param::ParamVector;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SELU_LAMBDA: f64 = 1.0507009873554804;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
    Tanh,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA * a
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (a.exp() - 1.0)
                }
            }
            Activation::Tanh => a.tanh(),
        }
    }

    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * a.exp()
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture of one dense network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenseNetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl DenseNetSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        residual: bool,
    ) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::InvalidArgument("output_dim must be >= 1".into()));
        }
        if hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden dims must be >= 1".into()));
        }
        if residual {
            if hidden_dims.is_empty() {
                return Err(Error::InvalidArgument(
                    "residual net needs at least one hidden layer".into(),
                ));
            }
            let h = hidden_dims[0];
            if hidden_dims.iter().any(|&w| w != h) {
                return Err(Error::InvalidArgument(
                    "residual net requires equal hidden widths".into(),
                ));
            }
        }
        Ok(DenseNetSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            residual,
        })
    }

    /// Affine layers as (in, out) pairs, in application order.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        if self.residual {
            let h = self.hidden_dims[0];
            dims.push((self.input_dim, h));
            for _ in &self.hidden_dims {
                dims.push((h, h));
            }
            dims.push((h, self.output_dim));
        } else {
            let mut prev = self.input_dim;
            for &h in &self.hidden_dims {
                dims.push((prev, h));
                prev = h;
            }
            dims.push((prev, self.output_dim));
        }
        dims
    }

    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        for (i, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            layout.push((format!("w{i}"), vec![fan_out, fan_in]));
            layout.push((format!("b{i}"), vec![fan_out]));
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum::<usize>()
    }

    /// He-uniform weights for relu, LeCun-normal for selu, Glorot-uniform for
    /// tanh; biases zero.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut params = ParamVector::zeros(self.param_layout());
        for (i, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let w = params.segment_mut(&format!("w{i}")).unwrap();
            match self.activation {
                Activation::Relu => {
                    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = rng.random_range(-limit..=limit);
                    }
                }
                Activation::Selu => {
                    let std = (1.0 / fan_in.max(1) as f64).sqrt();
                    for v in w.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = std * z;
                    }
                }
                Activation::Tanh => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = rng.random_range(-limit..=limit);
                    }
                }
            }
        }
        params
    }

    /// Zero the final affine layer so the network outputs exactly zero.
    pub fn zero_output_layer(&self, params: &mut ParamVector) {
        let last = self.layer_dims().len() - 1;
        params.segment_mut(&format!("w{last}")).unwrap().fill(0.0);
        params.segment_mut(&format!("b{last}")).unwrap().fill(0.0);
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(
                self.param_count(),
                params.len(),
                "parameter vector vs net spec",
            ));
        }
        Ok(())
    }
}

/// Intermediate state kept by the batched forward pass for reuse in backward.
pub struct ForwardCache {
    input: Matrix,
    /// Per affine layer: pre-activation / pre-residual values.
    layer_inputs: Vec<Matrix>,
}

fn weight_matrix(params: &ParamVector, spec: &DenseNetSpec, i: usize) -> Matrix {
    let (fan_in, fan_out) = spec.layer_dims()[i];
    Matrix {
        rows: fan_out,
        cols: fan_in,
        data: params.segment(&format!("w{i}")).unwrap().to_vec(),
    }
}

/// Batched forward pass. Rows of `inputs` are independent samples.
pub fn net_forward_batch(
    spec: &DenseNetSpec,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    spec.check_params(params)?;
    if inputs.cols != spec.input_dim {
        return Err(Error::dim(spec.input_dim, inputs.cols, "net input"));
    }
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut h = inputs.clone();

    let affine = |x: &Matrix, i: usize| -> Matrix {
        let w = weight_matrix(params, spec, i);
        let mut y = x.matmul_bt(&w);
        y.add_row_broadcast(params.segment(&format!("b{i}")).unwrap());
        y
    };

    if spec.residual {
        // input projection
        layer_inputs.push(h.clone());
        h = affine(&h, 0);
        // residual blocks: h ← h + W act(h) + b
        for i in 1..=spec.hidden_dims.len() {
            layer_inputs.push(h.clone());
            let mut a = h.clone();
            a.data.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
            let delta = affine(&a, i);
            for (hv, dv) in h.data.iter_mut().zip(&delta.data) {
                *hv += dv;
            }
        }
        // linear head
        layer_inputs.push(h.clone());
        h = affine(&h, n_layers - 1);
    } else {
        for i in 0..spec.hidden_dims.len() {
            layer_inputs.push(h.clone());
            h = affine(&h, i);
            h.data.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        }
        layer_inputs.push(h.clone());
        h = affine(&h, n_layers - 1);
    }

    Ok((
        h,
        ForwardCache {
            input: inputs.clone(),
            layer_inputs,
        },
    ))
}

/// Batched reverse pass for `Σ_samples ⟨upstream_row, output_row⟩`.
///
/// Returns gradients w.r.t. every parameter (summed over the batch, in batch
/// order) and w.r.t. every input row.
pub fn net_backward_batch(
    spec: &DenseNetSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    upstream: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    spec.check_params(params)?;
    if upstream.cols != spec.output_dim || upstream.rows != cache.input.rows {
        return Err(Error::dim(
            spec.output_dim,
            upstream.cols,
            "upstream gradient",
        ));
    }
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut grads = vec![0.0; spec.param_count()];
    let act = spec.activation;

    let write_affine_grads = |i: usize,
                              delta: &Matrix,
                              layer_in: &Matrix,
                              grads: &mut Vec<f64>| {
        let gw = delta.matmul_at(layer_in); // [out × in]
        let gb = delta.col_sums();
        let (ws, we) = param_range(spec, params, &format!("w{i}"));
        grads[ws..we].copy_from_slice(&gw.data);
        let (bs, be) = param_range(spec, params, &format!("b{i}"));
        grads[bs..be].copy_from_slice(&gb);
    };

    if spec.residual {
        // head
        let mut delta = upstream.clone();
        write_affine_grads(
            n_layers - 1,
            &delta,
            &cache.layer_inputs[n_layers - 1],
            &mut grads,
        );
        let w_head = weight_matrix(params, spec, n_layers - 1);
        let mut g_h = delta.matmul_bt(&transpose(&w_head));

        // blocks in reverse: h_out = h_in + W act(h_in) + b
        for i in (1..=spec.hidden_dims.len()).rev() {
            let h_in = &cache.layer_inputs[i];
            let w = weight_matrix(params, spec, i);
            // grads for W, b use act(h_in) as the affine input
            let mut a = h_in.clone();
            a.data.iter_mut().for_each(|v| *v = act.apply(*v));
            write_affine_grads(i, &g_h, &a, &mut grads);
            // g wrt h_in: identity path + act'(h_in) ⊙ (Wᵀ g)
            let back = g_h.matmul_bt(&transpose(&w));
            let mut g_in = g_h;
            for idx in 0..g_in.data.len() {
                g_in.data[idx] += act.derivative(h_in.data[idx]) * back.data[idx];
            }
            g_h = g_in;
        }

        // input projection
        delta = g_h;
        write_affine_grads(0, &delta, &cache.layer_inputs[0], &mut grads);
        let w0 = weight_matrix(params, spec, 0);
        let g_input = delta.matmul_bt(&transpose(&w0));
        Ok((grads, g_input))
    } else {
        let mut delta = upstream.clone();
        write_affine_grads(
            n_layers - 1,
            &delta,
            &cache.layer_inputs[n_layers - 1],
            &mut grads,
        );
        let mut w = weight_matrix(params, spec, n_layers - 1);
        let mut g = delta.matmul_bt(&transpose(&w));

        for i in (0..spec.hidden_dims.len()).rev() {
            // g is w.r.t. act(a_i); cache.layer_inputs[i+1] holds act(a_i) for
            // the NEXT layer's input, but we need a_i. Recompute the affine.
            let layer_in = &cache.layer_inputs[i];
            w = weight_matrix(params, spec, i);
            let mut a = layer_in.matmul_bt(&w);
            a.add_row_broadcast(params.segment(&format!("b{i}")).unwrap());
            delta = g;
            for idx in 0..delta.data.len() {
                delta.data[idx] *= act.derivative(a.data[idx]);
            }
            write_affine_grads(i, &delta, layer_in, &mut grads);
            g = delta.matmul_bt(&transpose(&w));
        }
        Ok((grads, g))
    }
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols, m.rows);
    for i in 0..m.rows {
        for j in 0..m.cols {
            t.data[j * m.rows + i] = m.data[i * m.cols + j];
        }
    }
    t
}

fn param_range(_spec: &DenseNetSpec, params: &ParamVector, name: &str) -> (usize, usize) {
    params.segment_range(name).expect("segment exists")
}

/// Single-sample forward pass.
pub fn net_forward(spec: &DenseNetSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("net input".into()));
    }
    let m = Matrix {
        rows: 1,
        cols: input.len(),
        data: input.to_vec(),
    };
    let (out, _) = net_forward_batch(spec, params, &m)?;
    Ok(out.data)
}

/// Single-sample gradients of `⟨upstream_grad, output⟩`.
pub fn net_backward(
    spec: &DenseNetSpec,
    params: &ParamVector,
    input: &[f64],
    upstream_grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = Matrix {
        rows: 1,
        cols: input.len(),
        data: input.to_vec(),
    };
    let (_, cache) = net_forward_batch(spec, params, &m)?;
    let up = Matrix {
        rows: 1,
        cols: upstream_grad.len(),
        data: upstream_grad.to_vec(),
    };
    let (gp, gi) = net_backward_batch(spec, params, &cache, &up)?;
    Ok((gp, gi.data))
}

#[cfg(test)]
mod tests;
