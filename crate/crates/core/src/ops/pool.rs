//! Max pooling along the last axis of `[batch, channels, length]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

pub fn pooled_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return invalid("maxpool1d", "window and stride must be at least 1");
    }
    if len < window {
        return invalid("maxpool1d", "input shorter than pooling window");
    }
    Ok((len - window) / stride + 1)
}

/// Returns the pooled values and, per output, the flat input index of the
/// maximum (first occurrence on ties).
pub fn maxpool1d_forward(
    input: &[f64],
    rows: usize,
    len: usize,
    window: usize,
    stride: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let out_len = pooled_len(len, window, stride)?;
    let mut out = vec![0.0; rows * out_len];
    let mut argmax = vec![0usize; rows * out_len];
    for r in 0..rows {
        let row = &input[r * len..(r + 1) * len];
        for j in 0..out_len {
            let start = j * stride;
            let mut best = start;
            for i in start + 1..start + window {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out[r * out_len + j] = row[best];
            argmax[r * out_len + j] = r * len + best;
        }
    }
    Ok((out, argmax))
}

pub fn maxpool1d_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut grad = vec![0.0; input_len];
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad[i] += g;
    }
    grad
}
