//! Layer kernels with explicit saved contexts.
//!
//! Every kernel is a pair: [`layer_forward`] computes the output and returns a
//! [`Saved`] context holding everything the backward pass needs, and
//! [`layer_backward`] turns an upstream gradient into gradients for each input
//! and each parameter. Images are single samples laid out `(C, H, W)`.

use std::sync::Arc;

use crate::error::{arg, shape, Error, Result};
use crate::tensor::Tensor;

/// Flat input positions chosen by a max-pool, one per pooled element.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub indices: Arc<Vec<usize>>,
    /// Shape of the tensor that was pooled; the unpool output takes this shape.
    pub input_shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d { stride: usize, pad: usize },
    /// Non-overlapping `size × size` max pool (stride = size).
    MaxPool { size: usize },
    MaxUnpool { indices: PoolIndices },
    Relu,
    /// `W·x + b` on the flattened input.
    Fc,
    /// Normalizes along axis 0; a `(K, H, W)` tensor gets a per-pixel softmax.
    Softmax,
    Embed { token: usize },
    /// Inputs `[x, h, c]`, params `[W, b]`; output is `[h', c']` concatenated.
    LstmStep,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::MaxUnpool { .. } => "maxunpool",
            LayerKind::Relu => "relu",
            LayerKind::Fc => "fc",
            LayerKind::Softmax => "softmax",
            LayerKind::Embed { .. } => "embed",
            LayerKind::LstmStep => "lstm_step",
        }
    }
}

/// Context recorded by a forward pass.
#[derive(Clone, Debug)]
pub enum Saved {
    Conv2d {
        input: Arc<Tensor>,
        weight: Arc<Tensor>,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        indices: PoolIndices,
    },
    MaxUnpool {
        indices: PoolIndices,
        pooled_shape: Vec<usize>,
    },
    Relu {
        input: Arc<Tensor>,
    },
    Fc {
        input: Arc<Tensor>,
        weight: Arc<Tensor>,
    },
    Softmax {
        output: Arc<Tensor>,
    },
    Embed {
        token: usize,
        table_shape: Vec<usize>,
    },
    LstmStep(Box<LstmSaved>),
}

#[derive(Clone, Debug)]
pub struct LstmSaved {
    concat_in: Vec<f64>,
    input_len: usize,
    c_prev: Vec<f64>,
    weight: Arc<Tensor>,
    /// Activated gates, each of length `d`: input, forget, output, candidate.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients produced by [`layer_backward`], in the same order as the forward
/// call's inputs and params.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub inputs: Vec<Tensor>,
    pub params: Vec<Tensor>,
}

pub fn layer_forward(
    kind: &LayerKind,
    inputs: &[Arc<Tensor>],
    params: &[Arc<Tensor>],
) -> Result<(Tensor, Saved)> {
    for (i, t) in inputs.iter().chain(params).enumerate() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} argument {i} before forward",
                kind.name()
            )));
        }
    }
    let (out, saved) = match kind {
        LayerKind::Conv2d { stride, pad } => {
            expect_counts(kind, inputs, 1, params, 2)?;
            let out = conv2d_forward(&inputs[0], &params[0], &params[1], *stride, *pad)?;
            (
                out,
                Saved::Conv2d {
                    input: inputs[0].clone(),
                    weight: params[0].clone(),
                    stride: *stride,
                    pad: *pad,
                },
            )
        }
        LayerKind::MaxPool { size } => {
            expect_counts(kind, inputs, 1, params, 0)?;
            let (out, indices) = maxpool_forward(&inputs[0], *size)?;
            (out, Saved::MaxPool { indices })
        }
        LayerKind::MaxUnpool { indices } => {
            expect_counts(kind, inputs, 1, params, 0)?;
            let out = maxunpool_forward(&inputs[0], indices)?;
            (
                out,
                Saved::MaxUnpool {
                    indices: indices.clone(),
                    pooled_shape: inputs[0].shape().to_vec(),
                },
            )
        }
        LayerKind::Relu => {
            expect_counts(kind, inputs, 1, params, 0)?;
            (
                inputs[0].map(|v| v.max(0.0)),
                Saved::Relu {
                    input: inputs[0].clone(),
                },
            )
        }
        LayerKind::Fc => {
            expect_counts(kind, inputs, 1, params, 2)?;
            let out = fc_forward(&inputs[0], &params[0], &params[1])?;
            (
                out,
                Saved::Fc {
                    input: inputs[0].clone(),
                    weight: params[0].clone(),
                },
            )
        }
        LayerKind::Softmax => {
            expect_counts(kind, inputs, 1, params, 0)?;
            let out = Arc::new(softmax_axis0(&inputs[0]));
            ((*out).clone(), Saved::Softmax { output: out })
        }
        LayerKind::Embed { token } => {
            expect_counts(kind, inputs, 0, params, 1)?;
            let table = &params[0];
            let [v, e] = table.shape()[..] else {
                return shape(format!("embedding table must be (V, E), got {:?}", table.shape()));
            };
            if *token >= v {
                return arg(format!("token {token} outside vocabulary of {v}"));
            }
            let row = table.data()[token * e..(token + 1) * e].to_vec();
            (
                Tensor::vector(row),
                Saved::Embed {
                    token: *token,
                    table_shape: table.shape().to_vec(),
                },
            )
        }
        LayerKind::LstmStep => {
            expect_counts(kind, inputs, 3, params, 2)?;
            let (out, saved) = lstm_forward(&inputs[0], &inputs[1], &inputs[2], &params[0], &params[1])?;
            (out, Saved::LstmStep(Box::new(saved)))
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("{} output", kind.name())));
    }
    Ok((out, saved))
}

pub fn layer_backward(saved: &Saved, grad_out: &Tensor) -> Result<LayerGrads> {
    let grads = match saved {
        Saved::Conv2d {
            input,
            weight,
            stride,
            pad,
        } => {
            let (dx, dw, db) = conv2d_backward(input, weight, *stride, *pad, grad_out)?;
            LayerGrads {
                inputs: vec![dx],
                params: vec![dw, db],
            }
        }
        Saved::MaxPool { indices } => {
            let mut dx = Tensor::zeros(&indices.input_shape);
            let d = dx.data_mut();
            for (g, &i) in grad_out.data().iter().zip(indices.indices.iter()) {
                d[i] += g;
            }
            LayerGrads {
                inputs: vec![dx],
                params: vec![],
            }
        }
        Saved::MaxUnpool {
            indices,
            pooled_shape,
        } => {
            let g = grad_out.data();
            let dx = indices.indices.iter().map(|&i| g[i]).collect();
            LayerGrads {
                inputs: vec![Tensor::from_vec(pooled_shape, dx)?],
                params: vec![],
            }
        }
        Saved::Relu { input } => {
            let mut dx = grad_out.clone();
            for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            LayerGrads {
                inputs: vec![dx],
                params: vec![],
            }
        }
        Saved::Fc { input, weight } => {
            let (m, n) = (weight.shape()[0], weight.shape()[1]);
            let x = input.data();
            let w = weight.data();
            let dy = grad_out.data();
            let mut dx = vec![0.0; n];
            let mut dw = vec![0.0; m * n];
            for r in 0..m {
                let g = dy[r];
                if g == 0.0 {
                    continue;
                }
                let row = &w[r * n..(r + 1) * n];
                let drow = &mut dw[r * n..(r + 1) * n];
                for k in 0..n {
                    dx[k] += g * row[k];
                    drow[k] = g * x[k];
                }
            }
            LayerGrads {
                inputs: vec![Tensor::from_vec(input.shape(), dx)?],
                params: vec![Tensor::from_vec(&[m, n], dw)?, Tensor::vector(dy.to_vec())],
            }
        }
        Saved::Softmax { output } => {
            let (k, cols) = axis0_layout(output.shape());
            let y = output.data();
            let dy = grad_out.data();
            let mut dx = vec![0.0; y.len()];
            for j in 0..cols {
                let mut dot = 0.0;
                for c in 0..k {
                    dot += y[c * cols + j] * dy[c * cols + j];
                }
                for c in 0..k {
                    let i = c * cols + j;
                    dx[i] = y[i] * (dy[i] - dot);
                }
            }
            LayerGrads {
                inputs: vec![Tensor::from_vec(output.shape(), dx)?],
                params: vec![],
            }
        }
        Saved::Embed { token, table_shape } => {
            let e = table_shape[1];
            let mut dt = Tensor::zeros(table_shape);
            dt.data_mut()[token * e..(token + 1) * e].copy_from_slice(grad_out.data());
            LayerGrads {
                inputs: vec![],
                params: vec![dt],
            }
        }
        Saved::LstmStep(s) => lstm_backward(s, grad_out)?,
    };
    for t in grads.inputs.iter().chain(&grads.params) {
        t.ensure_finite("layer gradient")?;
    }
    Ok(grads)
}

fn expect_counts(
    kind: &LayerKind,
    inputs: &[Arc<Tensor>],
    n_in: usize,
    params: &[Arc<Tensor>],
    n_par: usize,
) -> Result<()> {
    if inputs.len() != n_in || params.len() != n_par {
        return arg(format!(
            "{} takes {n_in} inputs and {n_par} params, got {} and {}",
            kind.name(),
            inputs.len(),
            params.len()
        ));
    }
    Ok(())
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return arg("conv stride must be at least 1");
    }
    if len + 2 * pad < k {
        return shape(format!("kernel {k} larger than padded input {}", len + 2 * pad));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Output positions `o` in `0..out_len` whose source `o·stride + kk − pad` is inside `0..len`.
fn valid_range(len: usize, out_len: usize, kk: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
    let top = len as isize - 1 + pad as isize - kk as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = ((top as usize) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let [c_out, wc, kh, kw] = weight.shape()[..] else {
        return shape(format!("conv weight must be (O, C, k, k), got {:?}", weight.shape()));
    };
    if wc != c_in {
        return shape(format!("conv weight expects {wc} channels, input has {c_in}"));
    }
    if bias.len() != c_out {
        return shape(format!("conv bias has {} entries for {c_out} filters", bias.len()));
    }
    let oh = conv_out(h, kh, stride, pad)?;
    let ow = conv_out(w, kw, stride, pad)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias.data()[o]);
        for c in 0..c_in {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                let (i_lo, i_hi) = valid_range(h, oh, ki, stride, pad);
                for kj in 0..kw {
                    let wv = wt[((o * c_in + c) * kh + ki) * kw + kj];
                    let (j_lo, j_hi) = valid_range(w, ow, kj, stride, pad);
                    for oi in i_lo..i_hi {
                        let ii = oi * stride + ki - pad;
                        let dst = &mut plane[oi * ow..(oi + 1) * ow];
                        let row = &src[ii * w..(ii + 1) * w];
                        if stride == 1 {
                            let off = j_lo + kj - pad;
                            let n = j_hi - j_lo;
                            for (d, s) in dst[j_lo..j_hi].iter_mut().zip(&row[off..off + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for oj in j_lo..j_hi {
                                dst[oj] += wv * row[oj * stride + kj - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, oh, ow], out)
}

fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, h, w) = input.chw()?;
    let [c_out, _, kh, kw] = weight.shape()[..] else {
        return shape("conv weight must be rank 4");
    };
    let (_, oh, ow) = grad_out.chw()?;
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        let gplane = &dy[o * oh * ow..(o + 1) * oh * ow];
        db[o] = gplane.iter().sum();
        for c in 0..c_in {
            let src = &x[c * h * w..(c + 1) * h * w];
            let dsrc = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                let (i_lo, i_hi) = valid_range(h, oh, ki, stride, pad);
                for kj in 0..kw {
                    let widx = ((o * c_in + c) * kh + ki) * kw + kj;
                    let wv = wt[widx];
                    let (j_lo, j_hi) = valid_range(w, ow, kj, stride, pad);
                    let mut acc = 0.0;
                    for oi in i_lo..i_hi {
                        let ii = oi * stride + ki - pad;
                        let g = &gplane[oi * ow..(oi + 1) * ow];
                        if stride == 1 {
                            let off = ii * w + j_lo + kj - pad;
                            let n = j_hi - j_lo;
                            let s = &src[off..off + n];
                            let ds = &mut dsrc[off..off + n];
                            for ((gv, sv), dv) in g[j_lo..j_hi].iter().zip(s).zip(ds.iter_mut()) {
                                acc += gv * sv;
                                *dv += wv * gv;
                            }
                        } else {
                            for oj in j_lo..j_hi {
                                let jj = oj * stride + kj - pad;
                                acc += g[oj] * src[ii * w + jj];
                                dsrc[ii * w + jj] += wv * g[oj];
                            }
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(weight.shape(), dw)?,
        Tensor::vector(db),
    ))
}

fn maxpool_forward(input: &Tensor, size: usize) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.chw()?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return shape(format!("maxpool {size}×{size} needs H, W divisible by {size}, got {h}×{w}"));
    }
    let (oh, ow) = (h / size, w / size);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = ch * h * w + oi * size * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let k = ch * h * w + (oi * size + di) * w + oj * size + dj;
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], out)?,
        PoolIndices {
            indices: Arc::new(idx),
            input_shape: input.shape().to_vec(),
        },
    ))
}

fn maxunpool_forward(input: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if indices.indices.len() != input.len() {
        return shape(format!(
            "unpool has {} indices for {} values",
            indices.indices.len(),
            input.len()
        ));
    }
    let mut out = Tensor::zeros(&indices.input_shape);
    let o = out.data_mut();
    for (&i, &v) in indices.indices.iter().zip(input.data()) {
        o[i] = v;
    }
    Ok(out)
}

fn fc_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = weight.shape()[..] else {
        return shape(format!("fc weight must be (M, N), got {:?}", weight.shape()));
    };
    if input.len() != n || bias.len() != m {
        return shape(format!(
            "fc ({m}×{n}) got input of {} and bias of {}",
            input.len(),
            bias.len()
        ));
    }
    let x = input.data();
    let w = weight.data();
    let out = (0..m)
        .map(|r| {
            let row = &w[r * n..(r + 1) * n];
            bias.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(Tensor::vector(out))
}

fn axis0_layout(shape: &[usize]) -> (usize, usize) {
    let k = shape[0];
    (k, shape[1..].iter().product::<usize>().max(1))
}

/// Softmax along axis 0, numerically stabilized per column.
pub fn softmax_axis0(input: &Tensor) -> Tensor {
    let (k, cols) = axis0_layout(input.shape());
    let x = input.data();
    let mut y = vec![0.0; x.len()];
    for j in 0..cols {
        let mut max = f64::NEG_INFINITY;
        for c in 0..k {
            max = max.max(x[c * cols + j]);
        }
        let mut z = 0.0;
        for c in 0..k {
            let e = (x[c * cols + j] - max).exp();
            y[c * cols + j] = e;
            z += e;
        }
        for c in 0..k {
            y[c * cols + j] /= z;
        }
    }
    Tensor::from_vec(input.shape(), y).expect("same shape")
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn lstm_forward(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    weight: &Arc<Tensor>,
    bias: &Tensor,
) -> Result<(Tensor, LstmSaved)> {
    let d = h.len();
    if c.len() != d {
        return shape(format!("lstm state lengths differ: h {d}, c {}", c.len()));
    }
    let n = x.len() + d;
    if weight.shape() != [4 * d, n] || bias.len() != 4 * d {
        return shape(format!(
            "lstm weight must be ({}, {n}) with bias {}, got {:?} and {}",
            4 * d,
            4 * d,
            weight.shape(),
            bias.len()
        ));
    }
    let mut concat_in = Vec::with_capacity(n);
    concat_in.extend_from_slice(x.data());
    concat_in.extend_from_slice(h.data());
    let w = weight.data();
    let mut gates = vec![0.0; 4 * d];
    for (r, g) in gates.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        let z = bias.data()[r] + row.iter().zip(&concat_in).map(|(a, b)| a * b).sum::<f64>();
        *g = if r < 3 * d { sigmoid(z) } else { z.tanh() };
    }
    let mut out = vec![0.0; 2 * d];
    let mut tanh_c = vec![0.0; d];
    for k in 0..d {
        let (i, f, o, g) = (gates[k], gates[d + k], gates[2 * d + k], gates[3 * d + k]);
        let c_new = f * c.data()[k] + i * g;
        tanh_c[k] = c_new.tanh();
        out[k] = o * tanh_c[k];
        out[d + k] = c_new;
    }
    Ok((
        Tensor::vector(out),
        LstmSaved {
            concat_in,
            input_len: x.len(),
            c_prev: c.data().to_vec(),
            weight: weight.clone(),
            gates,
            tanh_c,
        },
    ))
}

fn lstm_backward(s: &LstmSaved, grad_out: &Tensor) -> Result<LayerGrads> {
    let d = s.c_prev.len();
    let n = s.concat_in.len();
    if grad_out.len() != 2 * d {
        return shape(format!("lstm upstream gradient must have {} entries", 2 * d));
    }
    let dh = &grad_out.data()[..d];
    let dc_ext = &grad_out.data()[d..];
    let mut dz = vec![0.0; 4 * d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let (i, f, o, g) = (s.gates[k], s.gates[d + k], s.gates[2 * d + k], s.gates[3 * d + k]);
        let t = s.tanh_c[k];
        let dc = dc_ext[k] + dh[k] * o * (1.0 - t * t);
        dz[k] = dc * g * i * (1.0 - i);
        dz[d + k] = dc * s.c_prev[k] * f * (1.0 - f);
        dz[2 * d + k] = dh[k] * t * o * (1.0 - o);
        dz[3 * d + k] = dc * i * (1.0 - g * g);
        dc_prev[k] = dc * f;
    }
    let w = s.weight.data();
    let mut dw = vec![0.0; 4 * d * n];
    let mut dconcat = vec![0.0; n];
    for r in 0..4 * d {
        let g = dz[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * n..(r + 1) * n];
        let drow = &mut dw[r * n..(r + 1) * n];
        for k in 0..n {
            drow[k] = g * s.concat_in[k];
            dconcat[k] += g * row[k];
        }
    }
    let dh_prev = dconcat.split_off(s.input_len);
    Ok(LayerGrads {
        inputs: vec![
            Tensor::vector(dconcat),
            Tensor::vector(dh_prev),
            Tensor::vector(dc_prev),
        ],
        params: vec![Tensor::from_vec(&[4 * d, n], dw)?, Tensor::vector(dz)],
    })
}
