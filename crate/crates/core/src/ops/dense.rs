//! Affine layer `y = x W^T + b` on `[batch, features]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

pub fn dense_forward(
    input: &[f64],
    batch: usize,
    weight: &[f64],
    bias: &[f64],
    out_features: usize,
    in_features: usize,
) -> Result<Vec<f64>> {
    if input.len() != batch * in_features {
        return shape_err("dense", "input features", batch * in_features, input.len());
    }
    if weight.len() != out_features * in_features {
        return shape_err("dense", "weight", out_features * in_features, weight.len());
    }
    if bias.len() != out_features {
        return shape_err("dense", "bias", out_features, bias.len());
    }
    let mut out = vec![0.0; batch * out_features];
    for b in 0..batch {
        let x = &input[b * in_features..(b + 1) * in_features];
        for m in 0..out_features {
            let w = &weight[m * in_features..(m + 1) * in_features];
            out[b * out_features + m] = bias[m] + dot(w, x);
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let full = a.len() / 8 * 8;
    for (ca, cb) in a[..full].chunks_exact(8).zip(b[..full].chunks_exact(8)) {
        for j in 0..8 {
            lanes[j] += ca[j] * cb[j];
        }
    }
    let mut total: f64 = lanes.iter().sum();
    for i in full..a.len() {
        total += a[i] * b[i];
    }
    total
}

pub struct DenseGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn dense_backward(
    input: &[f64],
    batch: usize,
    weight: &[f64],
    grad_out: &[f64],
    out_features: usize,
    in_features: usize,
    need_input_grad: bool,
) -> DenseGrads {
    let mut gw = vec![0.0; out_features * in_features];
    let mut gb = vec![0.0; out_features];
    let mut gx = need_input_grad.then(|| vec![0.0; batch * in_features]);
    for b in 0..batch {
        let x = &input[b * in_features..(b + 1) * in_features];
        let dy = &grad_out[b * out_features..(b + 1) * out_features];
        for m in 0..out_features {
            let g = dy[m];
            if g == 0.0 {
                continue;
            }
            gb[m] += g;
            let wrow = &mut gw[m * in_features..(m + 1) * in_features];
            for (w, &xv) in wrow.iter_mut().zip(x) {
                *w += g * xv;
            }
            if let Some(gx) = gx.as_mut() {
                let dx = &mut gx[b * in_features..(b + 1) * in_features];
                for (d, &w) in dx.iter_mut().zip(&weight[m * in_features..(m + 1) * in_features]) {
                    *d += g * w;
                }
            }
        }
    }
    DenseGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}
