use super::*;
use crate::rng;

/// Independent straightforward re-implementation of the forward pass used as
/// an oracle: plain loops over weight segments, no Matrix machinery.
fn naive_forward(spec: &DenseNetSpec, params: &ParamVector, input: &[f64]) -> Vec<f64> {
    let affine = |x: &[f64], i: usize| -> Vec<f64> {
        let w = params.segment(&format!("w{i}")).unwrap();
        let b = params.segment(&format!("b{i}")).unwrap();
        let fan_in = x.len();
        let fan_out = b.len();
        (0..fan_out)
            .map(|o| {
                let mut acc = b[o];
                for (k, xv) in x.iter().enumerate().take(fan_in) {
                    acc += w[o * fan_in + k] * xv;
                }
                acc
            })
            .collect()
    };
    let n_affine = spec.param_layout().len() / 2;
    if spec.residual {
        let mut h = affine(input, 0);
        for i in 1..=spec.hidden_dims.len() {
            let a: Vec<f64> = h.iter().map(|&v| spec.activation.apply(v)).collect();
            let delta = affine(&a, i);
            for (hv, dv) in h.iter_mut().zip(delta) {
                *hv += dv;
            }
        }
        affine(&h, n_affine - 1)
    } else {
        let mut h = input.to_vec();
        for i in 0..spec.hidden_dims.len() {
            h = affine(&h, i)
                .into_iter()
                .map(|v| spec.activation.apply(v))
                .collect();
        }
        affine(&h, n_affine - 1)
    }
}

fn random_spec(seed: u64) -> DenseNetSpec {
    let mut r = rng::stream(seed, &[91]);
    use rand::Rng;
    let residual = r.random_bool(0.5);
    let act = match r.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::Selu,
        _ => Activation::Tanh,
    };
    let width = r.random_range(2..6);
    let n_hidden = r.random_range(1..4);
    let hidden = if residual {
        vec![width; n_hidden]
    } else {
        (0..n_hidden).map(|_| r.random_range(2..6)).collect()
    };
    DenseNetSpec::new(
        r.random_range(1..5),
        hidden,
        r.random_range(1..4),
        act,
        residual,
    )
    .unwrap()
}

fn random_inputs(spec: &DenseNetSpec, seed: u64) -> (ParamVector, Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut r = rng::stream(seed, &[92]);
    let mut params = spec.init_params(&mut r);
    for v in params.values_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let input: Vec<f64> = (0..spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
    let upstream: Vec<f64> = (0..spec.output_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    (params, input, upstream)
}

#[test]
fn zero_weights_output_bias() {
    let spec = DenseNetSpec::new(3, vec![], 2, Activation::Relu, false).unwrap();
    let mut params = ParamVector::zeros(spec.param_layout());
    params.segment_mut("b0").unwrap().copy_from_slice(&[4.0, -1.5]);
    let out = net_forward(&spec, &params, &[9.0, -3.0, 2.0]).unwrap();
    assert_eq!(out, vec![4.0, -1.5]);
}

#[test]
fn identity_linear_net_passes_input_through() {
    let spec = DenseNetSpec::new(3, vec![], 3, Activation::Tanh, false).unwrap();
    let mut params = ParamVector::zeros(spec.param_layout());
    let w = params.segment_mut("w0").unwrap();
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let x = vec![0.25, -7.0, 3.5];
    assert_eq!(net_forward(&spec, &params, &x).unwrap(), x);
}

#[test]
fn forward_matches_naive_reimplementation() {
    for seed in 0..30u64 {
        let spec = random_spec(seed);
        let (params, input, _) = random_inputs(&spec, seed);
        let fast = net_forward(&spec, &params, &input).unwrap();
        let slow = naive_forward(&spec, &params, &input);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let spec = random_spec(3);
    let (params, input, _) = random_inputs(&spec, 3);
    let (gp, gi) = net_backward(&spec, &params, &input, &vec![0.0; spec.output_dim]).unwrap();
    assert!(gp.iter().all(|&g| g == 0.0));
    assert!(gi.iter().all(|&g| g == 0.0));
}

#[test]
fn scalar_linear_net_grad_w_is_input() {
    let spec = DenseNetSpec::new(3, vec![], 1, Activation::Relu, false).unwrap();
    let params =
        ParamVector::from_values(spec.param_layout(), vec![0.5, -0.25, 2.0, 0.0]).unwrap();
    let x = vec![1.5, -2.0, 0.75];
    let (gp, _) = net_backward(&spec, &params, &x, &[1.0]).unwrap();
    assert_eq!(&gp[0..3], x.as_slice());
    assert_eq!(gp[3], 1.0); // bias grad
}

/// Central finite differences (h = 1e-5) against the analytic gradients on
/// 20+ random (spec, params, input) triples. Tanh/selu specs are smooth;
/// relu is piecewise linear so the FD check still holds away from kinks with
/// overwhelming probability at random inputs.
#[test]
fn gradients_match_finite_differences() {
    let h = 1e-5;
    for seed in 0..24u64 {
        let spec = random_spec(seed);
        let (params, input, upstream) = random_inputs(&spec, seed + 1000);
        let scalar = |p: &ParamVector, x: &[f64]| -> f64 {
            net_forward(&spec, p, x)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(o, u)| o * u)
                .sum()
        };
        let (gp, gi) = net_backward(&spec, &params, &input, &upstream).unwrap();

        let mut max_rel: f64 = 0.0;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (scalar(&plus, &input) - scalar(&minus, &input)) / (2.0 * h);
            let denom = fd.abs().max(gp[i].abs()).max(1.0);
            max_rel = max_rel.max((fd - gp[i]).abs() / denom);
        }
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let fd = (scalar(&params, &plus) - scalar(&params, &minus)) / (2.0 * h);
            let denom = fd.abs().max(gi[i].abs()).max(1.0);
            max_rel = max_rel.max((fd - gi[i]).abs() / denom);
        }
        assert!(max_rel <= 1e-4, "seed {seed}: max rel err {max_rel}");
    }
}

#[test]
fn batch_matches_per_sample() {
    let spec = random_spec(7);
    let (params, _, _) = random_inputs(&spec, 7);
    use rand::Rng;
    let mut r = rng::stream(7, &[93]);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..spec.input_dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let batch = crate::linalg::Matrix::from_rows(&rows);
    let (out, _) = net_forward_batch(&spec, &params, &batch).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let single = net_forward(&spec, &params, row).unwrap();
        assert_eq!(out.row(i), single.as_slice());
    }
}

#[test]
fn dimension_mismatch_rejected() {
    let spec = DenseNetSpec::new(3, vec![4], 2, Activation::Relu, false).unwrap();
    let params = ParamVector::zeros(spec.param_layout());
    assert!(net_forward(&spec, &params, &[1.0, 2.0]).is_err());
    assert!(net_forward(&spec, &params, &[1.0, f64::NAN, 0.0]).is_err());
}

#[test]
fn residual_requires_equal_widths() {
    assert!(DenseNetSpec::new(3, vec![4, 5], 2, Activation::Selu, true).is_err());
    assert!(DenseNetSpec::new(3, vec![4, 4], 2, Activation::Selu, true).is_ok());
}
