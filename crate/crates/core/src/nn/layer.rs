use std::fmt;
use std::str::FromStr;

use super::tensor::{Scalar, Tensor};
use super::NnError;

/// One stage of a sequential network. Convolutions use valid padding and
/// stride 1; pooling stride equals its window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// `[len]` token ids to `[len, dim]`.
    Embedding { vocab: usize, dim: usize },
    /// `[len, in_channels]` to `[len - width + 1, filters]`.
    Conv1d {
        in_channels: usize,
        filters: usize,
        width: usize,
    },
    /// `[in_channels, h, w]` to `[filters, h - k + 1, w - k + 1]`.
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
    },
    /// `[c, h, w]` to `[c, h / window, w / window]`.
    MaxPool2d { window: usize },
    /// Max over every axis except channels: `[len, c]` or `[c, h, w]` to `[c]`.
    GlobalMaxPool,
    /// Flattens its input.
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// Over the whole (flattened) input.
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::GlobalMaxPool => "global_maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let n: usize = input.iter().product();
        match *self {
            LayerSpec::Embedding { vocab, dim } => {
                if vocab == 0 || dim == 0 {
                    return Err("embedding needs vocab >= 1 and dim >= 1".into());
                }
                match input {
                    [len] => Ok(vec![*len, dim]),
                    _ => Err(format!("embedding expects [len], got {input:?}")),
                }
            }
            LayerSpec::Conv1d {
                in_channels,
                filters,
                width,
            } => match input {
                [len, c] if *c == in_channels && width >= 1 && *len >= width && filters >= 1 => {
                    Ok(vec![len - width + 1, filters])
                }
                _ => Err(format!(
                    "conv1d(in={in_channels}, width={width}) cannot take {input:?}"
                )),
            },
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => match input {
                [c, h, w]
                    if *c == in_channels
                        && kernel >= 1
                        && *h >= kernel
                        && *w >= kernel
                        && filters >= 1 =>
                {
                    Ok(vec![filters, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(format!(
                    "conv2d(in={in_channels}, kernel={kernel}) cannot take {input:?}"
                )),
            },
            LayerSpec::MaxPool2d { window } => match input {
                [c, h, w] if window >= 1 && *h >= window && *w >= window => {
                    Ok(vec![*c, h / window, w / window])
                }
                _ => Err(format!("maxpool2d({window}) cannot take {input:?}")),
            },
            LayerSpec::GlobalMaxPool => match input {
                [_, c] => Ok(vec![*c]),
                [c, _, _] => Ok(vec![*c]),
                _ => Err(format!("global_maxpool expects rank 2 or 3, got {input:?}")),
            },
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != n || outputs == 0 {
                    Err(format!(
                        "dense(in={inputs}, out={outputs}) cannot take {input:?} ({n} values)"
                    ))
                } else {
                    Ok(vec![outputs])
                }
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
        }
    }

    /// Parameter shapes plus the (fan_in, fan_out) used for initialization.
    pub(crate) fn param_shapes(&self) -> Option<(Vec<Vec<usize>>, usize, usize)> {
        match *self {
            // a lookup row is selected by a one-hot input, so fan_in is 1
            LayerSpec::Embedding { vocab, dim } => Some((vec![vec![vocab, dim]], 1, dim)),
            LayerSpec::Conv1d {
                in_channels,
                filters,
                width,
            } => Some((
                vec![vec![filters, width, in_channels], vec![filters]],
                in_channels * width,
                filters * width,
            )),
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => Some((
                vec![vec![filters, in_channels, kernel, kernel], vec![filters]],
                in_channels * kernel * kernel,
                filters * kernel * kernel,
            )),
            LayerSpec::Dense { inputs, outputs } => {
                Some((vec![vec![outputs, inputs], vec![outputs]], inputs, outputs))
            }
            _ => None,
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        params: &[Tensor<T>],
        x: &Tensor<T>,
        out_shape: &[usize],
    ) -> Result<Tensor<T>, NnError> {
        let mut out = Tensor::zeros(out_shape);
        let xs = x.data();
        let shape = x.shape();
        match *self {
            LayerSpec::Embedding { vocab, dim } => {
                let table = params[0].data();
                let o = out.data_mut();
                for (t, raw) in xs.iter().enumerate() {
                    let id = token_id(*raw, vocab)?;
                    o[t * dim..(t + 1) * dim].copy_from_slice(&table[id * dim..(id + 1) * dim]);
                }
            }
            LayerSpec::Conv1d {
                in_channels: c_in,
                filters,
                width,
            } => {
                let (w, b) = (params[0].data(), params[1].data());
                let steps = out_shape[0];
                let o = out.data_mut();
                for t in 0..steps {
                    let window = &xs[t * c_in..(t + width) * c_in];
                    for f in 0..filters {
                        let kernel = &w[f * width * c_in..(f + 1) * width * c_in];
                        let mut acc = b[f];
                        for (kv, xv) in kernel.iter().zip(window) {
                            acc = acc + *kv * *xv;
                        }
                        o[t * filters + f] = acc;
                    }
                }
            }
            LayerSpec::Conv2d {
                in_channels: c_in,
                filters,
                kernel: k,
            } => {
                let (w, b) = (params[0].data(), params[1].data());
                let (h, wd) = (shape[1], shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let o = out.data_mut();
                for f in 0..filters {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = b[f];
                            for c in 0..c_in {
                                for u in 0..k {
                                    let xrow = &xs[(c * h + i + u) * wd + j..][..k];
                                    let krow = &w[((f * c_in + c) * k + u) * k..][..k];
                                    for (kv, xv) in krow.iter().zip(xrow) {
                                        acc = acc + *kv * *xv;
                                    }
                                }
                            }
                            o[(f * oh + i) * ow + j] = acc;
                        }
                    }
                }
            }
            LayerSpec::MaxPool2d { window } => {
                let o = out.data_mut();
                for (oi, src) in maxpool_argmax(shape, out_shape, window, xs)
                    .into_iter()
                    .enumerate()
                {
                    o[oi] = xs[src];
                }
            }
            LayerSpec::GlobalMaxPool => {
                let o = out.data_mut();
                for (c, src) in global_argmax(shape, xs).into_iter().enumerate() {
                    o[c] = xs[src];
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = (params[0].data(), params[1].data());
                let o = out.data_mut();
                for r in 0..outputs {
                    let row = &w[r * inputs..(r + 1) * inputs];
                    let mut acc = b[r];
                    for (wv, xv) in row.iter().zip(xs) {
                        acc = acc + *wv * *xv;
                    }
                    o[r] = acc;
                }
            }
            LayerSpec::Relu => {
                for (o, v) in out.data_mut().iter_mut().zip(xs) {
                    *o = if *v > T::zero() { *v } else { T::zero() };
                }
            }
            LayerSpec::Softmax => {
                let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
                let o = out.data_mut();
                let mut total = T::zero();
                for (o, v) in o.iter_mut().zip(xs) {
                    *o = (*v - max).exp();
                    total = total + *o;
                }
                for o in o.iter_mut() {
                    *o = *o / total;
                }
            }
        }
        Ok(out)
    }

    /// Returns the gradient w.r.t. the layer input (None for embeddings,
    /// whose input is discrete) and w.r.t. each parameter.
    pub(crate) fn backward<T: Scalar>(
        &self,
        params: &[Tensor<T>],
        x: &Tensor<T>,
        y: &Tensor<T>,
        grad_y: &Tensor<T>,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>), NnError> {
        let xs = x.data();
        let shape = x.shape();
        let gy = grad_y.data();
        let mut gx = Tensor::zeros(shape);
        let mut grads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        match *self {
            LayerSpec::Embedding { vocab, dim } => {
                let gw = grads[0].data_mut();
                for (t, raw) in xs.iter().enumerate() {
                    let id = token_id(*raw, vocab)?;
                    for d in 0..dim {
                        gw[id * dim + d] = gw[id * dim + d] + gy[t * dim + d];
                    }
                }
                return Ok((None, grads));
            }
            LayerSpec::Conv1d {
                in_channels: c_in,
                filters,
                width,
            } => {
                let w = params[0].data();
                let steps = y.shape()[0];
                let (gw_t, gb_t) = grads.split_at_mut(1);
                let (gw, gb) = (gw_t[0].data_mut(), gb_t[0].data_mut());
                let g = gx.data_mut();
                let span = width * c_in;
                for t in 0..steps {
                    let base = t * c_in;
                    for f in 0..filters {
                        let go = gy[t * filters + f];
                        if go == T::zero() {
                            continue;
                        }
                        gb[f] = gb[f] + go;
                        for q in 0..span {
                            gw[f * span + q] = gw[f * span + q] + go * xs[base + q];
                            g[base + q] = g[base + q] + go * w[f * span + q];
                        }
                    }
                }
            }
            LayerSpec::Conv2d {
                in_channels: c_in,
                filters,
                kernel: k,
            } => {
                let w = params[0].data();
                let (h, wd) = (shape[1], shape[2]);
                let (oh, ow) = (y.shape()[1], y.shape()[2]);
                let (gw_t, gb_t) = grads.split_at_mut(1);
                let (gw, gb) = (gw_t[0].data_mut(), gb_t[0].data_mut());
                let g = gx.data_mut();
                for f in 0..filters {
                    for i in 0..oh {
                        for j in 0..ow {
                            let go = gy[(f * oh + i) * ow + j];
                            if go == T::zero() {
                                continue;
                            }
                            gb[f] = gb[f] + go;
                            for c in 0..c_in {
                                for u in 0..k {
                                    let xi = (c * h + i + u) * wd + j;
                                    let ki = ((f * c_in + c) * k + u) * k;
                                    for v in 0..k {
                                        gw[ki + v] = gw[ki + v] + go * xs[xi + v];
                                        g[xi + v] = g[xi + v] + go * w[ki + v];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::MaxPool2d { window } => {
                let g = gx.data_mut();
                for (oi, src) in maxpool_argmax(shape, y.shape(), window, xs)
                    .into_iter()
                    .enumerate()
                {
                    g[src] = g[src] + gy[oi];
                }
            }
            LayerSpec::GlobalMaxPool => {
                let g = gx.data_mut();
                for (c, src) in global_argmax(shape, xs).into_iter().enumerate() {
                    g[src] = g[src] + gy[c];
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = params[0].data();
                let (gw_t, gb_t) = grads.split_at_mut(1);
                let (gw, gb) = (gw_t[0].data_mut(), gb_t[0].data_mut());
                let g = gx.data_mut();
                for r in 0..outputs {
                    let go = gy[r];
                    gb[r] = go;
                    if go == T::zero() {
                        continue;
                    }
                    for q in 0..inputs {
                        gw[r * inputs + q] = go * xs[q];
                        g[q] = g[q] + go * w[r * inputs + q];
                    }
                }
            }
            LayerSpec::Relu => {
                for ((g, v), go) in gx.data_mut().iter_mut().zip(xs).zip(gy) {
                    *g = if *v > T::zero() { *go } else { T::zero() };
                }
            }
            LayerSpec::Softmax => {
                let ys = y.data();
                let inner: T = ys.iter().zip(gy).map(|(p, g)| *p * *g).sum();
                for ((g, p), go) in gx.data_mut().iter_mut().zip(ys).zip(gy) {
                    *g = *p * (*go - inner);
                }
            }
        }
        Ok((Some(gx), grads))
    }
}

impl LayerSpec {
    /// Discrete choices the layer makes on input `x`: the ReLU mask or the
    /// pooling argmax. Two inputs with equal branch points lie on the same
    /// smooth piece of the layer.
    pub(crate) fn branch_points<T: Scalar>(&self, x: &Tensor<T>, y: &Tensor<T>) -> Vec<usize> {
        match *self {
            LayerSpec::Relu => x
                .data()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > T::zero())
                .map(|(i, _)| i)
                .collect(),
            LayerSpec::MaxPool2d { window } => maxpool_argmax(x.shape(), y.shape(), window, x.data()),
            LayerSpec::GlobalMaxPool => global_argmax(x.shape(), x.data()),
            _ => Vec::new(),
        }
    }
}

fn token_id<T: Scalar>(raw: T, vocab: usize) -> Result<usize, NnError> {
    let id = raw
        .to_f64()
        .filter(|v| v.fract() == 0.0 && *v >= 0.0)
        .map(|v| v as usize)
        .filter(|id| *id < vocab);
    id.ok_or_else(|| {
        NnError::InvalidInput(format!(
            "embedding input {raw:?} is not a token id below {vocab}"
        ))
    })
}

/// Flat source index of each pooled output; ties go to the first element
/// in row-major scan order.
fn maxpool_argmax<T: Scalar>(
    shape: &[usize],
    out_shape: &[usize],
    window: usize,
    xs: &[T],
) -> Vec<usize> {
    let (c_n, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut idx = Vec::with_capacity(c_n * oh * ow);
    for c in 0..c_n {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (c * h + i * window) * w + j * window;
                for u in 0..window {
                    for v in 0..window {
                        let s = (c * h + i * window + u) * w + j * window + v;
                        if xs[s] > xs[best] {
                            best = s;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

fn global_argmax<T: Scalar>(shape: &[usize], xs: &[T]) -> Vec<usize> {
    match *shape {
        [len, c_n] => (0..c_n)
            .map(|c| {
                (0..len)
                    .map(|t| t * c_n + c)
                    .reduce(|best, s| if xs[s] > xs[best] { s } else { best })
                    .expect("len >= 1")
            })
            .collect(),
        [c_n, h, w] => (0..c_n)
            .map(|c| {
                (c * h * w..(c + 1) * h * w)
                    .reduce(|best, s| if xs[s] > xs[best] { s } else { best })
                    .expect("h*w >= 1")
            })
            .collect(),
        _ => unreachable!("shape validated at build time"),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Embedding { vocab, dim } => write!(f, "embedding vocab={vocab} dim={dim}"),
            LayerSpec::Conv1d {
                in_channels,
                filters,
                width,
            } => write!(f, "conv1d in={in_channels} filters={filters} width={width}"),
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => write!(f, "conv2d in={in_channels} filters={filters} kernel={kernel}"),
            LayerSpec::MaxPool2d { window } => write!(f, "maxpool2d window={window}"),
            LayerSpec::GlobalMaxPool => f.write_str("global_maxpool"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense in={inputs} out={outputs}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NnError::Checkpoint(format!("bad layer spec {s:?}"));
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(bad)?;
        let mut kv = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(bad)?;
            let v: usize = v.parse().map_err(|_| bad())?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(bad);
        let spec = match kind {
            "embedding" => LayerSpec::Embedding {
                vocab: get("vocab")?,
                dim: get("dim")?,
            },
            "conv1d" => LayerSpec::Conv1d {
                in_channels: get("in")?,
                filters: get("filters")?,
                width: get("width")?,
            },
            "conv2d" => LayerSpec::Conv2d {
                in_channels: get("in")?,
                filters: get("filters")?,
                kernel: get("kernel")?,
            },
            "maxpool2d" => LayerSpec::MaxPool2d {
                window: get("window")?,
            },
            "global_maxpool" => LayerSpec::GlobalMaxPool,
            "dense" => LayerSpec::Dense {
                inputs: get("in")?,
                outputs: get("out")?,
            },
            "relu" => LayerSpec::Relu,
            "softmax" => LayerSpec::Softmax,
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}
