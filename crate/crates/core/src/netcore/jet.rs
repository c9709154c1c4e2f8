//! Batched propagation of input derivatives through an [`Mlp`] and the matching
//! reverse pass that turns output/derivative adjoints into weight gradients.
//!
//! Every point carries `C` channels per unit: the value, the first derivative
//! with respect to each raw input coordinate, and the unmixed second derivative
//! with respect to each raw input coordinate (`C = 1 + 2d`). Channel buffers use
//! the layout `[(point * C + channel) * width + unit]`.

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Derivative order carried through a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetOrder {
    /// Values only.
    Value,
    /// Values, gradients and diagonal Hessians with respect to the inputs.
    Second,
}

/// Forward pass results for a batch of inputs, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct JetBatch {
    order: JetOrder,
    n_points: usize,
    in_dim: usize,
    channels: usize,
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    widths: Vec<usize>,
}

impl JetBatch {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Length of an adjoint buffer matching the output layer.
    pub fn output_len(&self) -> usize {
        self.n_points * self.channels * self.out_dim()
    }

    /// Flat index of `(point, channel, output)` in an output-layer buffer.
    #[inline]
    pub fn index(&self, point: usize, channel: usize, output: usize) -> usize {
        (point * self.channels + channel) * self.out_dim() + output
    }

    #[inline]
    pub fn grad_channel(&self, i: usize) -> usize {
        1 + i
    }

    #[inline]
    pub fn hess_channel(&self, i: usize) -> usize {
        1 + self.in_dim + i
    }

    fn out(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    #[inline]
    pub fn value(&self, point: usize, output: usize) -> f64 {
        self.out()[self.index(point, 0, output)]
    }

    /// First derivative of `output` with respect to raw input `i`.
    #[inline]
    pub fn grad(&self, point: usize, output: usize, i: usize) -> f64 {
        debug_assert_eq!(self.order, JetOrder::Second);
        self.out()[self.index(point, self.grad_channel(i), output)]
    }

    /// Second derivative of `output` with respect to raw input `i`.
    #[inline]
    pub fn hess(&self, point: usize, output: usize, i: usize) -> f64 {
        debug_assert_eq!(self.order, JetOrder::Second);
        self.out()[self.index(point, self.hess_channel(i), output)]
    }
}

impl Mlp {
    /// Runs the batch forward pass. `xs` holds `n_points * input_dim` raw inputs, row-major.
    pub fn jet_batch(&self, xs: &[f64], order: JetOrder) -> Result<JetBatch> {
        let d = self.input_dim();
        if xs.len() % d != 0 {
            return Err(Error::invalid(format!(
                "input buffer length {} is not a multiple of input dim {d}",
                xs.len()
            )));
        }
        let n = xs.len() / d;
        let channels = match order {
            JetOrder::Value => 1,
            JetOrder::Second => 1 + 2 * d,
        };
        let widths = self.layer_sizes().to_vec();
        let n_layers = self.n_layers();

        let mut input = vec![0.0; n * channels * d];
        let shift = self.input_shift();
        let scale = self.input_scale();
        for p in 0..n {
            for i in 0..d {
                input[(p * channels) * d + i] = (xs[p * d + i] - shift[i]) / scale[i];
                if channels > 1 {
                    input[(p * channels + 1 + i) * d + i] = 1.0 / scale[i];
                }
            }
        }

        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut pres = Vec::with_capacity(n_layers);
        acts.push(input);
        let act = self.activation();
        for k in 0..n_layers {
            let (n_in, n_out) = (widths[k], widths[k + 1]);
            let w = self.weights(k);
            let b = self.biases(k);
            let a = &acts[k];
            let mut z = vec![0.0; n * channels * n_out];
            for p in 0..n {
                for c in 0..channels {
                    // hessian channels are identically zero at the input
                    if k == 0 && c > d {
                        continue;
                    }
                    let a_row = &a[(p * channels + c) * n_in..(p * channels + c + 1) * n_in];
                    let z_row = &mut z[(p * channels + c) * n_out..(p * channels + c + 1) * n_out];
                    for (j, zj) in z_row.iter_mut().enumerate() {
                        let w_row = &w[j * n_in..(j + 1) * n_in];
                        let mut s = if c == 0 { b[j] } else { 0.0 };
                        for (wi, ai) in w_row.iter().zip(a_row) {
                            s += wi * ai;
                        }
                        *zj = s;
                    }
                }
            }
            let h = if k + 1 < n_layers {
                let mut h = vec![0.0; z.len()];
                for p in 0..n {
                    let base = p * channels * n_out;
                    for j in 0..n_out {
                        let (s0, s1, s2, _) = act.derivatives(z[base + j]);
                        h[base + j] = s0;
                        for i in 0..(channels - 1) / 2 {
                            let zg = z[base + (1 + i) * n_out + j];
                            let zh = z[base + (1 + d + i) * n_out + j];
                            h[base + (1 + i) * n_out + j] = s1 * zg;
                            h[base + (1 + d + i) * n_out + j] = s2 * zg * zg + s1 * zh;
                        }
                    }
                }
                h
            } else {
                z.clone()
            };
            pres.push(z);
            acts.push(h);
        }

        Ok(JetBatch {
            order,
            n_points: n,
            in_dim: d,
            channels,
            acts,
            pres,
            widths,
        })
    }

    /// Accumulates into `grad` (length [`Mlp::n_params`]) the gradient of a scalar
    /// loss whose partial derivatives with respect to every output channel are given
    /// in `adjoint` (layout of [`JetBatch::index`]).
    pub fn jet_backward(&self, batch: &JetBatch, adjoint: &[f64], grad: &mut [f64]) -> Result<()> {
        if adjoint.len() != batch.output_len() {
            return Err(Error::invalid("adjoint length does not match batch output"));
        }
        if grad.len() != self.n_params() {
            return Err(Error::invalid("gradient buffer length does not match network"));
        }
        let n_layers = self.n_layers();
        let widths = &batch.widths;
        let channels = batch.channels;
        let d = batch.in_dim;
        let n_deriv = (channels - 1) / 2;
        let act = self.activation();

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for k in 0..n_layers {
            offsets.push(off);
            off += widths[k] * widths[k + 1] + widths[k + 1];
        }

        let max_w = *widths.iter().max().unwrap();
        let mut a_adj = vec![0.0; channels * max_w];
        let mut z_adj = vec![0.0; channels * max_w];

        for p in 0..batch.n_points {
            let n_out = widths[n_layers];
            a_adj[..channels * n_out]
                .copy_from_slice(&adjoint[p * channels * n_out..(p + 1) * channels * n_out]);
            for k in (0..n_layers).rev() {
                let (n_in, n_out) = (widths[k], widths[k + 1]);
                if k + 1 < n_layers {
                    let z = &batch.pres[k][p * channels * n_out..(p + 1) * channels * n_out];
                    for j in 0..n_out {
                        let (_, s1, s2, s3) = act.derivatives(z[j]);
                        let mut z0 = a_adj[j] * s1;
                        for i in 0..n_deriv {
                            let zg = z[(1 + i) * n_out + j];
                            let zh = z[(1 + d + i) * n_out + j];
                            let hg = a_adj[(1 + i) * n_out + j];
                            let hh = a_adj[(1 + d + i) * n_out + j];
                            z0 += hg * s2 * zg + hh * (s3 * zg * zg + s2 * zh);
                            z_adj[(1 + i) * n_out + j] = hg * s1 + 2.0 * hh * s2 * zg;
                            z_adj[(1 + d + i) * n_out + j] = hh * s1;
                        }
                        z_adj[j] = z0;
                    }
                } else {
                    z_adj[..channels * n_out].copy_from_slice(&a_adj[..channels * n_out]);
                }

                let a = &batch.acts[k][p * channels * n_in..(p + 1) * channels * n_in];
                let g_w = &mut grad[offsets[k]..offsets[k] + n_in * n_out + n_out];
                let (g_w, g_b) = g_w.split_at_mut(n_in * n_out);
                for c in 0..channels {
                    if k == 0 && c > d {
                        continue;
                    }
                    let a_row = &a[c * n_in..(c + 1) * n_in];
                    for j in 0..n_out {
                        let zj = z_adj[c * n_out + j];
                        if zj == 0.0 {
                            continue;
                        }
                        let g_row = &mut g_w[j * n_in..(j + 1) * n_in];
                        for (g, ai) in g_row.iter_mut().zip(a_row) {
                            *g += zj * ai;
                        }
                    }
                }
                for j in 0..n_out {
                    g_b[j] += z_adj[j];
                }

                if k > 0 {
                    let w = self.weights(k);
                    for c in 0..channels {
                        let prev = &mut a_adj[c * n_in..(c + 1) * n_in];
                        prev.iter_mut().for_each(|v| *v = 0.0);
                        for j in 0..n_out {
                            let zj = z_adj[c * n_out + j];
                            if zj == 0.0 {
                                continue;
                            }
                            let w_row = &w[j * n_in..(j + 1) * n_in];
                            for (pv, wi) in prev.iter_mut().zip(w_row) {
                                *pv += wi * zj;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
