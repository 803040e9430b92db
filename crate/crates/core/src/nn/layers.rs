//! Forward and backward kernels for the fixed layer vocabulary.
//!
//! Convolutions run over an explicitly padded copy of the input so the inner
//! loops carry no bounds logic. Everything is single threaded; training
//! determinism relies on a fixed floating-point summation order.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::{Extent, LayerSpec, NetworkSpec, NetworkWeights};

/// Activations and pooling choices recorded during a tracked forward pass.
struct ForwardTrace<T> {
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Tensor<T>>,
    /// Per maxpool layer index: flat input offsets of the chosen maxima.
    argmax: Vec<(usize, Vec<u32>)>,
}

pub(super) fn check_batch<T: Real>(spec: &NetworkSpec, batch: &Tensor<T>) -> Result<()> {
    let (c, h, w) = spec.input_shape;
    let s = batch.shape();
    if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
        return Err(Error::Spec(format!(
            "batch shape {s:?} does not match expected (N, {c}, {h}, {w})"
        )));
    }
    Ok(())
}

pub(super) fn run_forward<T: Real>(
    spec: &NetworkSpec,
    extents: &[Extent],
    weights: &NetworkWeights<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    let trace = forward_trace(spec, extents, weights, batch, false)?;
    Ok(trace.acts.into_iter().next_back().unwrap())
}

fn forward_trace<T: Real>(
    spec: &NetworkSpec,
    extents: &[Extent],
    weights: &NetworkWeights<T>,
    batch: &Tensor<T>,
    keep_all: bool,
) -> Result<ForwardTrace<T>> {
    let n = batch.shape()[0];
    let mut acts: Vec<Tensor<T>> = vec![batch.clone()];
    let mut argmax = Vec::new();
    let mut param = 0usize;
    for (index, layer) in spec.layers.iter().enumerate() {
        let input = acts.last().unwrap();
        let out = match (layer, extents[index], extents[index + 1]) {
            (&LayerSpec::Conv { stride, padding, .. }, Extent::Map { c, h, w }, Extent::Map { c: oc, h: oh, w: ow }) => {
                let kernel = weights.tensors[param].shape()[2];
                let out = conv_forward(
                    input,
                    &weights.tensors[param],
                    &weights.tensors[param + 1],
                    ConvGeom { n, ic: c, h, w, oc, oh, ow, kernel, stride, padding },
                );
                param += 2;
                out
            }
            (&LayerSpec::Relu, _, _) => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < T::ZERO {
                        *v = T::ZERO;
                    }
                }
                out
            }
            (&LayerSpec::MaxPool { window, stride }, Extent::Map { c, h, w }, Extent::Map { h: oh, w: ow, .. }) => {
                let (out, arg) = maxpool_forward(input, PoolGeom { n, c, h, w, oh, ow, window, stride });
                argmax.push((index, arg));
                out
            }
            (&LayerSpec::Flatten, _, Extent::Flat(f)) => input.clone().reshaped(vec![n, f])?,
            (&LayerSpec::Fc { .. }, Extent::Flat(inf), Extent::Flat(outf)) => {
                let out = fc_forward(input, &weights.tensors[param], &weights.tensors[param + 1], n, inf, outf);
                param += 2;
                out
            }
            _ => unreachable!("extents() validated the layer sequence"),
        };
        if keep_all {
            acts.push(out);
        } else {
            *acts.last_mut().unwrap() = out;
        }
    }
    Ok(ForwardTrace { acts, argmax })
}

/// Mean over the batch of squared Euclidean distance, accumulated in f64.
pub(super) fn mse_loss<T: Real>(pred: &Tensor<T>, targets: &Tensor<T>) -> f64 {
    let n = pred.shape()[0];
    let mut total = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(targets.data()) {
        let d = p.to_f64() - t.to_f64();
        total += d * d;
    }
    total / n as f64
}

pub(super) fn run_backward<T: Real>(
    spec: &NetworkSpec,
    extents: &[Extent],
    weights: &NetworkWeights<T>,
    batch: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(f64, NetworkWeights<T>)> {
    let n = batch.shape()[0];
    let trace = forward_trace(spec, extents, weights, batch, true)?;
    let pred = trace.acts.last().unwrap();
    let loss = mse_loss(pred, targets);

    // dL/dPred = 2 (pred - target) / N
    let scale = T::from_f64(2.0 / n as f64);
    let mut d_cur = Tensor::zeros(pred.shape().to_vec());
    for ((d, &p), &t) in d_cur.data_mut().iter_mut().zip(pred.data()).zip(targets.data()) {
        *d = scale * (p - t);
    }

    let mut grads: Vec<Tensor<T>> = weights.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    let mut param = weights.tensors.len();
    let mut pool = trace.argmax.len();
    for (index, layer) in spec.layers.iter().enumerate().rev() {
        let input = &trace.acts[index];
        d_cur = match (layer, extents[index], extents[index + 1]) {
            (&LayerSpec::Conv { stride, padding, .. }, Extent::Map { c, h, w }, Extent::Map { c: oc, h: oh, w: ow }) => {
                param -= 2;
                let kernel = weights.tensors[param].shape()[2];
                let geom = ConvGeom { n, ic: c, h, w, oc, oh, ow, kernel, stride, padding };
                let (d_in, d_w, d_b) = conv_backward(input, &weights.tensors[param], &d_cur, geom);
                grads[param] = d_w;
                grads[param + 1] = d_b;
                d_in
            }
            (&LayerSpec::Relu, _, _) => {
                // Gradient masked by the stored output: zero where the unit
                // was clamped (inputs exactly at zero get zero gradient).
                let out = &trace.acts[index + 1];
                let mut d_in = d_cur;
                for (d, &o) in d_in.data_mut().iter_mut().zip(out.data()) {
                    if o <= T::ZERO {
                        *d = T::ZERO;
                    }
                }
                d_in
            }
            (&LayerSpec::MaxPool { .. }, Extent::Map { c, h, w }, _) => {
                pool -= 1;
                let (pool_index, arg) = &trace.argmax[pool];
                debug_assert_eq!(*pool_index, index);
                let mut d_in = Tensor::zeros(vec![n, c, h, w]);
                let d_in_data = d_in.data_mut();
                for (&src, &d) in arg.iter().zip(d_cur.data()) {
                    d_in_data[src as usize] += d;
                }
                d_in
            }
            (&LayerSpec::Flatten, Extent::Map { c, h, w }, _) => d_cur.reshaped(vec![n, c, h, w])?,
            (&LayerSpec::Fc { .. }, Extent::Flat(inf), Extent::Flat(outf)) => {
                param -= 2;
                let (d_in, d_w, d_b) = fc_backward(input, &weights.tensors[param], &d_cur, n, inf, outf);
                grads[param] = d_w;
                grads[param + 1] = d_b;
                d_in
            }
            _ => unreachable!("extents() validated the layer sequence"),
        };
    }
    Ok((loss, NetworkWeights { tensors: grads }))
}

struct ConvGeom {
    n: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

/// Copies `(N, C, H, W)` into `(N, C, H + 2p, W + 2p)` with a zero border.
fn pad_batch<T: Real>(input: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let (ph, pw) = (g.h + 2 * g.padding, g.w + 2 * g.padding);
    let mut padded = Tensor::zeros(vec![g.n, g.ic, ph, pw]);
    let src = input.data();
    let dst = padded.data_mut();
    for plane in 0..g.n * g.ic {
        let src_base = plane * g.h * g.w;
        let dst_base = plane * ph * pw + g.padding * pw + g.padding;
        for y in 0..g.h {
            let s = src_base + y * g.w;
            let d = dst_base + y * pw;
            dst[d..d + g.w].copy_from_slice(&src[s..s + g.w]);
        }
    }
    padded
}

fn conv_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let padded = pad_batch(input, &g);
    let pw = g.w + 2 * g.padding;
    let mut out = Tensor::zeros(vec![g.n, g.oc, g.oh, g.ow]);
    let pd = padded.data();
    let wd = weight.data();
    let bd = bias.data();
    let od = out.data_mut();
    for n in 0..g.n {
        for oc in 0..g.oc {
            let out_base = (n * g.oc + oc) * g.oh * g.ow;
            od[out_base..out_base + g.oh * g.ow].fill(bd[oc]);
            for ic in 0..g.ic {
                let in_base = (n * g.ic + ic) * (g.h + 2 * g.padding) * pw;
                let w_base = (oc * g.ic + ic) * g.kernel * g.kernel;
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let wv = wd[w_base + kh * g.kernel + kw];
                        for oy in 0..g.oh {
                            let in_row = in_base + (oy * g.stride + kh) * pw + kw;
                            let out_row = out_base + oy * g.ow;
                            if g.stride == 1 {
                                for ox in 0..g.ow {
                                    od[out_row + ox] += wv * pd[in_row + ox];
                                }
                            } else {
                                for ox in 0..g.ow {
                                    od[out_row + ox] += wv * pd[in_row + ox * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    g: ConvGeom,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let padded = pad_batch(input, &g);
    let (ph, pw) = (g.h + 2 * g.padding, g.w + 2 * g.padding);
    let mut d_padded: Tensor<T> = Tensor::zeros(vec![g.n, g.ic, ph, pw]);
    let mut d_weight: Tensor<T> = Tensor::zeros(weight.shape().to_vec());
    let mut d_bias: Tensor<T> = Tensor::zeros(vec![g.oc]);

    let pd = padded.data();
    let wd = weight.data();
    let dod = d_out.data();
    {
        let dpd = d_padded.data_mut();
        let dwd = d_weight.data_mut();
        let dbd = d_bias.data_mut();
        for n in 0..g.n {
            for oc in 0..g.oc {
                let out_base = (n * g.oc + oc) * g.oh * g.ow;
                let mut b_acc = T::ZERO;
                for &d in &dod[out_base..out_base + g.oh * g.ow] {
                    b_acc += d;
                }
                dbd[oc] += b_acc;
                for ic in 0..g.ic {
                    let in_base = (n * g.ic + ic) * ph * pw;
                    let w_base = (oc * g.ic + ic) * g.kernel * g.kernel;
                    for kh in 0..g.kernel {
                        for kw in 0..g.kernel {
                            let wv = wd[w_base + kh * g.kernel + kw];
                            let mut w_acc = T::ZERO;
                            for oy in 0..g.oh {
                                let in_row = in_base + (oy * g.stride + kh) * pw + kw;
                                let out_row = out_base + oy * g.ow;
                                for ox in 0..g.ow {
                                    let d = dod[out_row + ox];
                                    let idx = in_row + ox * g.stride;
                                    w_acc += d * pd[idx];
                                    dpd[idx] += wv * d;
                                }
                            }
                            dwd[w_base + kh * g.kernel + kw] += w_acc;
                        }
                    }
                }
            }
        }
    }

    // Strip the padding border off the input gradient.
    let mut d_in = Tensor::zeros(vec![g.n, g.ic, g.h, g.w]);
    let did = d_in.data_mut();
    let dpd = d_padded.data();
    for plane in 0..g.n * g.ic {
        let dst_base = plane * g.h * g.w;
        let src_base = plane * ph * pw + g.padding * pw + g.padding;
        for y in 0..g.h {
            let d = dst_base + y * g.w;
            let s = src_base + y * pw;
            did[d..d + g.w].copy_from_slice(&dpd[s..s + g.w]);
        }
    }
    (d_in, d_weight, d_bias)
}

struct PoolGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    window: usize,
    stride: usize,
}

fn maxpool_forward<T: Real>(input: &Tensor<T>, g: PoolGeom) -> (Tensor<T>, Vec<u32>) {
    assert!(input.numel() <= u32::MAX as usize, "maxpool input too large for u32 argmax");
    let mut out = Tensor::zeros(vec![g.n, g.c, g.oh, g.ow]);
    let mut arg = vec![0u32; out.numel()];
    let id = input.data();
    let od = out.data_mut();
    for plane in 0..g.n * g.c {
        let in_base = plane * g.h * g.w;
        let out_base = plane * g.oh * g.ow;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let y0 = oy * g.stride;
                let x0 = ox * g.stride;
                let mut best_idx = in_base + y0 * g.w + x0;
                let mut best = id[best_idx];
                for wy in 0..g.window {
                    let row = in_base + (y0 + wy) * g.w + x0;
                    for wx in 0..g.window {
                        let v = id[row + wx];
                        // Strictly-greater keeps the first (row-major) maximum
                        // on ties, which pins the backward scatter target.
                        if v > best {
                            best = v;
                            best_idx = row + wx;
                        }
                    }
                }
                od[out_base + oy * g.ow + ox] = best;
                arg[out_base + oy * g.ow + ox] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

fn fc_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    n: usize,
    inf: usize,
    outf: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(vec![n, outf]);
    let id = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let od = out.data_mut();
    for s in 0..n {
        let in_row = &id[s * inf..(s + 1) * inf];
        for o in 0..outf {
            let w_row = &wd[o * inf..(o + 1) * inf];
            let mut acc = bd[o];
            for (wv, iv) in w_row.iter().zip(in_row) {
                acc += *wv * *iv;
            }
            od[s * outf + o] = acc;
        }
    }
    out
}

fn fc_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    n: usize,
    inf: usize,
    outf: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut d_in = Tensor::zeros(vec![n, inf]);
    let mut d_weight = Tensor::zeros(vec![outf, inf]);
    let mut d_bias = Tensor::zeros(vec![outf]);
    let id = input.data();
    let wd = weight.data();
    let dod = d_out.data();
    let did = d_in.data_mut();
    let dwd = d_weight.data_mut();
    let dbd = d_bias.data_mut();
    for s in 0..n {
        let in_row = &id[s * inf..(s + 1) * inf];
        let d_in_row = &mut did[s * inf..(s + 1) * inf];
        for o in 0..outf {
            let d = dod[s * outf + o];
            dbd[o] += d;
            let w_row = &wd[o * inf..(o + 1) * inf];
            let dw_row = &mut dwd[o * inf..(o + 1) * inf];
            for i in 0..inf {
                dw_row[i] += d * in_row[i];
                d_in_row[i] += d * w_row[i];
            }
        }
    }
    (d_in, d_weight, d_bias)
}
