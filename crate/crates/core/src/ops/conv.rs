//! 1D cross-correlation over `[batch, channels, length]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};

/// Static geometry of a 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return invalid("conv1d", "kernel_len and stride must be at least 1");
        }
        if self.len + 2 * self.padding < self.kernel {
            return invalid("conv1d", "padded input shorter than kernel");
        }
        Ok(())
    }

    pub fn padded_len(&self) -> usize {
        self.len + 2 * self.padding
    }

    pub fn out_len(&self) -> usize {
        (self.padded_len() - self.kernel) / self.stride + 1
    }

    pub fn input_size(&self) -> usize {
        self.batch * self.in_channels * self.len
    }

    pub fn weight_size(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel
    }

    pub fn output_size(&self) -> usize {
        self.batch * self.out_channels * self.out_len()
    }

    fn check_buffers(&self, input: usize, weight: usize, bias: usize) -> Result<()> {
        self.validate()?;
        if input != self.input_size() {
            return shape_err("conv1d", "input", self.input_size(), input);
        }
        if weight != self.weight_size() {
            return shape_err("conv1d", "weight", self.weight_size(), weight);
        }
        if bias != self.out_channels {
            return shape_err("conv1d", "bias", self.out_channels, bias);
        }
        Ok(())
    }
}

const CO_BLOCK: usize = 8;
const T_BLOCK: usize = 16;

fn pad_sample(src: &[f64], channels: usize, len: usize, padding: usize, dst: &mut [f64]) {
    let lp = len + 2 * padding;
    for c in 0..channels {
        let row = &mut dst[c * lp..(c + 1) * lp];
        row[..padding].fill(0.0);
        row[padding..padding + len].copy_from_slice(&src[c * len..(c + 1) * len]);
        row[padding + len..].fill(0.0);
    }
}

/// Forward pass. Every output element accumulates `bias`, then
/// `w[co][ci][k] * x[ci][t*stride + k - padding]` in `ci`-major, `k`-minor
/// order, skipping nothing (padded positions contribute exact zeros).
pub fn conv1d_forward(
    geo: &Conv1dGeometry,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Result<Vec<f64>> {
    geo.check_buffers(input.len(), weight.len(), bias.len())?;
    let lp = geo.padded_len();
    let lout = geo.out_len();
    let (cin, cout) = (geo.in_channels, geo.out_channels);
    let mut out = vec![0.0; geo.output_size()];
    let mut xp = vec![0.0; cin * lp];
    for b in 0..geo.batch {
        pad_sample(
            &input[b * cin * geo.len..(b + 1) * cin * geo.len],
            cin,
            geo.len,
            geo.padding,
            &mut xp,
        );
        let y = &mut out[b * cout * lout..(b + 1) * cout * lout];
        if geo.stride == 1 {
            forward_sample_unit_stride(&xp, lp, weight, bias, cin, cout, geo.kernel, lout, y);
        } else {
            forward_sample_strided(&xp, lp, weight, bias, cin, cout, geo.kernel, geo.stride, lout, y);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn forward_sample_unit_stride(
    xp: &[f64],
    lp: usize,
    weight: &[f64],
    bias: &[f64],
    cin: usize,
    cout: usize,
    kernel: usize,
    lout: usize,
    y: &mut [f64],
) {
    let mut co0 = 0;
    while co0 < cout {
        let rows = CO_BLOCK.min(cout - co0);
        let mut t0 = 0;
        while t0 < lout {
            let cols = T_BLOCK.min(lout - t0);
            if rows == CO_BLOCK && cols == T_BLOCK {
                let mut acc = [[0.0f64; T_BLOCK]; CO_BLOCK];
                for (r, row) in acc.iter_mut().enumerate() {
                    *row = [bias[co0 + r]; T_BLOCK];
                }
                for ci in 0..cin {
                    let xrow = &xp[ci * lp..(ci + 1) * lp];
                    for k in 0..kernel {
                        let xs: &[f64; T_BLOCK] =
                            xrow[t0 + k..t0 + k + T_BLOCK].try_into().unwrap();
                        for (r, row) in acc.iter_mut().enumerate() {
                            let wv = weight[((co0 + r) * cin + ci) * kernel + k];
                            for j in 0..T_BLOCK {
                                row[j] += wv * xs[j];
                            }
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    let base = (co0 + r) * lout + t0;
                    y[base..base + T_BLOCK].copy_from_slice(row);
                }
            } else {
                for r in 0..rows {
                    let co = co0 + r;
                    for t in t0..t0 + cols {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            let xrow = &xp[ci * lp..];
                            let wrow = &weight[(co * cin + ci) * kernel..];
                            for k in 0..kernel {
                                acc += wrow[k] * xrow[t + k];
                            }
                        }
                        y[co * lout + t] = acc;
                    }
                }
            }
            t0 += cols;
        }
        co0 += rows;
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_sample_strided(
    xp: &[f64],
    lp: usize,
    weight: &[f64],
    bias: &[f64],
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    lout: usize,
    y: &mut [f64],
) {
    for co in 0..cout {
        for t in 0..lout {
            let mut acc = bias[co];
            for ci in 0..cin {
                let xrow = &xp[ci * lp..];
                let wrow = &weight[(co * cin + ci) * kernel..];
                for k in 0..kernel {
                    acc += wrow[k] * xrow[t * stride + k];
                }
            }
            y[co * lout + t] = acc;
        }
    }
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub struct Conv1dGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv1d_backward(
    geo: &Conv1dGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input_grad: bool,
) -> Result<Conv1dGrads> {
    geo.check_buffers(input.len(), weight.len(), geo.out_channels)?;
    if grad_out.len() != geo.output_size() {
        return shape_err("conv1d_backward", "grad_out", geo.output_size(), grad_out.len());
    }
    let lp = geo.padded_len();
    let lout = geo.out_len();
    let (cin, cout, kernel) = (geo.in_channels, geo.out_channels, geo.kernel);

    let mut grad_b = vec![0.0; cout];
    let mut grad_w = vec![0.0; geo.weight_size()];
    let mut xp = vec![0.0; cin * lp];
    for b in 0..geo.batch {
        let dy = &grad_out[b * cout * lout..(b + 1) * cout * lout];
        for co in 0..cout {
            grad_b[co] += lane_sum(&dy[co * lout..(co + 1) * lout]);
        }
        pad_sample(
            &input[b * cin * geo.len..(b + 1) * cin * geo.len],
            cin,
            geo.len,
            geo.padding,
            &mut xp,
        );
        weight_grad_sample(&xp, lp, dy, cin, cout, kernel, geo.stride, lout, &mut grad_w);
    }

    let grad_x = if need_input_grad {
        Some(if geo.stride == 1 {
            input_grad_unit_stride(geo, weight, grad_out)
        } else {
            input_grad_strided(geo, weight, grad_out)
        })
    } else {
        None
    };
    Ok(Conv1dGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    })
}

fn lane_sum(xs: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for j in 0..8 {
            lanes[j] += c[j];
        }
    }
    lanes.iter().sum::<f64>() + tail.iter().sum::<f64>()
}

#[allow(clippy::too_many_arguments)]
fn weight_grad_sample(
    xp: &[f64],
    lp: usize,
    dy: &[f64],
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    lout: usize,
    grad_w: &mut [f64],
) {
    if stride != 1 {
        for co in 0..cout {
            for ci in 0..cin {
                for k in 0..kernel {
                    let mut acc = 0.0;
                    for t in 0..lout {
                        acc += dy[co * lout + t] * xp[ci * lp + t * stride + k];
                    }
                    grad_w[(co * cin + ci) * kernel + k] += acc;
                }
            }
        }
        return;
    }
    match kernel {
        5 => weight_grad_unit_stride::<5>(xp, lp, dy, cin, cout, lout, grad_w),
        3 => weight_grad_unit_stride::<3>(xp, lp, dy, cin, cout, lout, grad_w),
        _ => {
            for co in 0..cout {
                let drow = &dy[co * lout..(co + 1) * lout];
                for ci in 0..cin {
                    let xrow = &xp[ci * lp..(ci + 1) * lp];
                    for k in 0..kernel {
                        grad_w[(co * cin + ci) * kernel + k] += lane_dot(drow, &xrow[k..k + lout]);
                    }
                }
            }
        }
    }
}

fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let full = a.len() / 8 * 8;
    for (ca, cb) in a[..full].chunks_exact(8).zip(b[..full].chunks_exact(8)) {
        for j in 0..8 {
            lanes[j] += ca[j] * cb[j];
        }
    }
    let mut total: f64 = lanes.iter().sum();
    for t in full..a.len() {
        total += a[t] * b[t];
    }
    total
}

/// Accumulates all `K` taps for a block of output channels at once so each
/// loaded input vector is reused across the block.
fn weight_grad_unit_stride<const K: usize>(
    xp: &[f64],
    lp: usize,
    dy: &[f64],
    cin: usize,
    cout: usize,
    lout: usize,
    grad_w: &mut [f64],
) {
    const LANES: usize = 8;
    const ROWS: usize = 4;
    let full = lout / LANES * LANES;
    let mut co0 = 0;
    while co0 + ROWS <= cout {
        for ci in 0..cin {
            let xrow = &xp[ci * lp..(ci + 1) * lp];
            let mut acc = [[[0.0f64; LANES]; K]; ROWS];
            let mut t = 0;
            while t < full {
                let mut xv = [[0.0f64; LANES]; K];
                for (k, v) in xv.iter_mut().enumerate() {
                    *v = xrow[t + k..t + k + LANES].try_into().unwrap();
                }
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let base = (co0 + r) * lout + t;
                    let dv: &[f64; LANES] = dy[base..base + LANES].try_into().unwrap();
                    for (acc_rk, xk) in acc_r.iter_mut().zip(xv.iter()) {
                        for j in 0..LANES {
                            acc_rk[j] += dv[j] * xk[j];
                        }
                    }
                }
                t += LANES;
            }
            for (r, acc_r) in acc.iter().enumerate() {
                let co = co0 + r;
                for (k, lanes) in acc_r.iter().enumerate() {
                    let mut total: f64 = lanes.iter().sum();
                    for t in full..lout {
                        total += dy[co * lout + t] * xrow[t + k];
                    }
                    grad_w[(co * cin + ci) * K + k] += total;
                }
            }
        }
        co0 += ROWS;
    }
    for co in co0..cout {
        let drow = &dy[co * lout..(co + 1) * lout];
        for ci in 0..cin {
            let xrow = &xp[ci * lp..(ci + 1) * lp];
            for k in 0..K {
                grad_w[(co * cin + ci) * K + k] += lane_dot(drow, &xrow[k..k + lout]);
            }
        }
    }
}

/// With unit stride the input gradient is itself a unit-stride correlation of
/// the upstream gradient (padded by `kernel - 1`) with the flipped,
/// channel-transposed kernel, cropped back to the unpadded input window.
fn input_grad_unit_stride(geo: &Conv1dGeometry, weight: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let (cin, cout, kernel) = (geo.in_channels, geo.out_channels, geo.kernel);
    let mut flipped = vec![0.0; cin * cout * kernel];
    for co in 0..cout {
        for ci in 0..cin {
            for k in 0..kernel {
                flipped[(ci * cout + co) * kernel + (kernel - 1 - k)] =
                    weight[(co * cin + ci) * kernel + k];
            }
        }
    }
    let transposed = Conv1dGeometry {
        batch: geo.batch,
        in_channels: cout,
        out_channels: cin,
        len: geo.out_len(),
        kernel,
        stride: 1,
        padding: kernel - 1,
    };
    let zero_bias = vec![0.0; cin];
    let full = conv1d_forward(&transposed, grad_out, &flipped, &zero_bias)
        .expect("transposed geometry is valid by construction");
    let lp = geo.padded_len();
    debug_assert_eq!(transposed.out_len(), lp);
    let mut grad_x = vec![0.0; geo.input_size()];
    for b in 0..geo.batch {
        for ci in 0..cin {
            let src = &full[(b * cin + ci) * lp + geo.padding..][..geo.len];
            grad_x[(b * cin + ci) * geo.len..][..geo.len].copy_from_slice(src);
        }
    }
    grad_x
}

fn input_grad_strided(geo: &Conv1dGeometry, weight: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let (cin, cout, kernel) = (geo.in_channels, geo.out_channels, geo.kernel);
    let lout = geo.out_len();
    let lp = geo.padded_len();
    let mut grad_x = vec![0.0; geo.input_size()];
    let mut gp = vec![0.0; cin * lp];
    for b in 0..geo.batch {
        gp.fill(0.0);
        for co in 0..cout {
            for t in 0..lout {
                let g = grad_out[(b * cout + co) * lout + t];
                for ci in 0..cin {
                    for k in 0..kernel {
                        gp[ci * lp + t * geo.stride + k] += g * weight[(co * cin + ci) * kernel + k];
                    }
                }
            }
        }
        for ci in 0..cin {
            grad_x[(b * cin + ci) * geo.len..][..geo.len]
                .copy_from_slice(&gp[ci * lp + geo.padding..][..geo.len]);
        }
    }
    grad_x
}
