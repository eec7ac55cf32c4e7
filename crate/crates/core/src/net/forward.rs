//! Forward evaluation, MAC pooling and exact backpropagation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::edgemap::EdgeMap;
use crate::error::{Error, Result};
use crate::filter::{filter_backward, filter_forward};
use crate::net::config::LayerSpec;
use crate::net::descriptor::{l2_norm, Descriptor};
use crate::net::weights::{ConvParams, NetworkWeights};
use crate::tensor::Tensor;

enum LayerCache {
    Conv {
        input: Tensor,
    },
    Relu {
        active: Vec<bool>,
    },
    Pool {
        argmax: Vec<u32>,
        in_h: usize,
        in_w: usize,
    },
}

/// Everything backward needs from a forward pass.
pub struct ForwardCache {
    revision: u64,
    layers: Vec<LayerCache>,
    final_shape: (usize, usize, usize),
    mac_argmax: Vec<usize>,
    mac_norm: f64,
    descriptor: Vec<f64>,
    source: Option<EdgeMap>,
}

impl ForwardCache {
    /// Digest of every discrete routing decision (ReLU activity, pooling and
    /// MAC argmax). Two passes with equal signatures lie in the same linear
    /// region of the network.
    pub fn routing_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for layer in &self.layers {
            match layer {
                LayerCache::Relu { active } => active.hash(&mut h),
                LayerCache::Pool { argmax, .. } => argmax.hash(&mut h),
                LayerCache::Conv { .. } => {}
            }
        }
        self.mac_argmax.hash(&mut h);
        h.finish()
    }

    /// Unnormalized MAC vector.
    pub fn mac(&self) -> Vec<f64> {
        self.descriptor.iter().map(|d| d * self.mac_norm).collect()
    }
}

/// Gradients for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvParams>,
    pub filter_p: f64,
    pub filter_tau: f64,
}

impl Gradients {
    pub fn zeros_like(weights: &NetworkWeights) -> Self {
        Gradients {
            convs: weights
                .convs
                .iter()
                .map(|c| ConvParams::zeros(c.kernel_size, c.in_channels, c.out_channels))
                .collect(),
            filter_p: 0.0,
            filter_tau: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.kernel.iter_mut().zip(&b.kernel) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.filter_p += other.filter_p;
        self.filter_tau += other.filter_tau;
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.convs {
            for v in c.kernel.iter_mut().chain(c.bias.iter_mut()) {
                *v *= factor;
            }
        }
        self.filter_p *= factor;
        self.filter_tau *= factor;
    }
}

/// Run the stack on an already-filtered input.
pub fn forward(weights: &NetworkWeights, filtered: &Tensor) -> Result<(Descriptor, ForwardCache)> {
    let (desc, cache) = run(weights, filtered, true)?;
    Ok((desc, cache.expect("cache requested")))
}

/// Filter an edge map and run the stack; the cache keeps the map so
/// [`backward`] also yields filter-parameter gradients.
pub fn forward_edge_map(
    weights: &NetworkWeights,
    map: &EdgeMap,
) -> Result<(Descriptor, ForwardCache)> {
    let filtered = filter_forward(map, &weights.filter);
    let (desc, mut cache) = forward(weights, &filtered)?;
    cache.source = Some(map.clone());
    Ok((desc, cache))
}

/// Descriptor of an edge map without keeping a cache.
pub fn describe(weights: &NetworkWeights, map: &EdgeMap) -> Result<Descriptor> {
    let filtered = filter_forward(map, &weights.filter);
    Ok(run(weights, &filtered, false)?.0)
}

fn run(
    weights: &NetworkWeights,
    filtered: &Tensor,
    keep: bool,
) -> Result<(Descriptor, Option<ForwardCache>)> {
    let config = &weights.config;
    if filtered.channels != 1 {
        return Err(Error::Shape(format!(
            "network input must have 1 channel, found {}",
            filtered.channels
        )));
    }
    if config
        .output_size(filtered.height, filtered.width)
        .is_none()
    {
        return Err(Error::Size(format!(
            "{}x{} input is smaller than the network footprint",
            filtered.width, filtered.height
        )));
    }
    let mut caches = Vec::new();
    let mut x = filtered.clone();
    let mut conv_idx = 0;
    for layer in &config.layers {
        x = match *layer {
            LayerSpec::Conv {
                kernel,
                stride,
                same_padding,
                ..
            } => {
                let pad = if same_padding { kernel / 2 } else { 0 };
                let out = conv_forward(&x, &weights.convs[conv_idx], stride, pad);
                conv_idx += 1;
                if keep {
                    caches.push(LayerCache::Conv { input: x });
                }
                out
            }
            LayerSpec::Relu => {
                let mut active = Vec::new();
                if keep {
                    active.reserve(x.data.len());
                }
                for v in &mut x.data {
                    let on = *v > 0.0;
                    if !on {
                        *v = 0.0;
                    }
                    if keep {
                        active.push(on);
                    }
                }
                if keep {
                    caches.push(LayerCache::Relu { active });
                }
                x
            }
            LayerSpec::MaxPool => {
                let (out, argmax) = pool_forward(&x);
                if keep {
                    caches.push(LayerCache::Pool {
                        argmax,
                        in_h: x.height,
                        in_w: x.width,
                    });
                }
                out
            }
        };
    }

    let mut mac = Vec::with_capacity(x.channels);
    let mut mac_argmax = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let (idx, val) = first_argmax(x.plane(c));
        mac.push(val);
        mac_argmax.push(idx);
    }
    let norm = l2_norm(&mac);
    if norm == 0.0 {
        return Err(Error::ZeroDescriptor(
            "every MAC activation is zero".to_string(),
        ));
    }
    let descriptor: Vec<f64> = mac.iter().map(|v| v / norm).collect();
    let cache = keep.then(|| ForwardCache {
        revision: weights.revision,
        layers: caches,
        final_shape: (x.channels, x.height, x.width),
        mac_argmax,
        mac_norm: norm,
        descriptor: descriptor.clone(),
        source: None,
    });
    Ok((Descriptor::from_unit(descriptor, 1e-9)?, cache))
}

/// Gradients of an objective with respect to every parameter, given its
/// gradient with respect to the unit descriptor.
pub fn backward(
    weights: &NetworkWeights,
    cache: &ForwardCache,
    grad_descriptor: &[f64],
) -> Result<Gradients> {
    Ok(backward_with_input(weights, cache, grad_descriptor)?.0)
}

/// Like [`backward`], also returning the gradient with respect to the
/// network input (the filtered map).
pub fn backward_with_input(
    weights: &NetworkWeights,
    cache: &ForwardCache,
    grad_descriptor: &[f64],
) -> Result<(Gradients, Tensor)> {
    if cache.revision != weights.revision {
        return Err(Error::State(
            "forward cache was produced by a different weight revision".into(),
        ));
    }
    if grad_descriptor.len() != cache.descriptor.len() {
        return Err(Error::Shape(format!(
            "descriptor gradient has length {}, expected {}",
            grad_descriptor.len(),
            cache.descriptor.len()
        )));
    }
    // through l2 normalization: (I - d d^T) g / |v|
    let d = &cache.descriptor;
    let radial: f64 = d.iter().zip(grad_descriptor).map(|(a, b)| a * b).sum();
    let (c, h, w) = cache.final_shape;
    let mut grad = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let g = (grad_descriptor[ch] - d[ch] * radial) / cache.mac_norm;
        grad.plane_mut(ch)[cache.mac_argmax[ch]] += g;
    }

    let mut grads = Gradients::zeros_like(weights);
    let mut conv_idx = weights.convs.len();
    let layers = &weights.config.layers;
    for (layer, lc) in layers.iter().zip(&cache.layers).rev() {
        grad = match (layer, lc) {
            (
                LayerSpec::Conv {
                    kernel,
                    stride,
                    same_padding,
                    ..
                },
                LayerCache::Conv { input },
            ) => {
                conv_idx -= 1;
                let pad = if *same_padding { kernel / 2 } else { 0 };
                conv_backward(
                    input,
                    &grad,
                    &weights.convs[conv_idx],
                    &mut grads.convs[conv_idx],
                    *stride,
                    pad,
                )
            }
            (LayerSpec::Relu, LayerCache::Relu { active }) => {
                for (g, &on) in grad.data.iter_mut().zip(active) {
                    if !on {
                        *g = 0.0;
                    }
                }
                grad
            }
            (LayerSpec::MaxPool, LayerCache::Pool { argmax, in_h, in_w }) => {
                let mut up = Tensor::zeros(grad.channels, *in_h, *in_w);
                for ch in 0..grad.channels {
                    let src = grad.plane(ch).to_vec();
                    let dst = up.plane_mut(ch);
                    for (i, g) in src.iter().enumerate() {
                        dst[argmax[ch * src.len() + i] as usize] += g;
                    }
                }
                up
            }
            _ => return Err(Error::State("cache does not match network layers".into())),
        };
    }
    if let Some(map) = &cache.source {
        let fg = filter_backward(map, &weights.filter, &grad)?;
        grads.filter_p = fg.p;
        grads.filter_tau = fg.tau;
    }
    Ok((grads, grad))
}

fn first_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Range of output columns (or rows) for which tap offset `k` reads inside
/// an input of length `len`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad <= len - 1
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    if len + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Visits every in-bounds (tap row, output pixel, input pixel) triple of an
/// im2col layout: one tap row per (input channel, ky, kx), one column per
/// output pixel.
fn for_each_tap(
    shape: (usize, usize, usize),
    out: (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    mut visit: impl FnMut(usize, std::ops::Range<usize>, usize),
) {
    let (channels, ih, iw) = shape;
    let (oh, ow) = out;
    for ic in 0..channels {
        for ky in 0..k {
            let (ylo, yhi) = valid_range(oh, ih, ky, stride, pad);
            for kx in 0..k {
                let (xlo, xhi) = valid_range(ow, iw, kx, stride, pad);
                if xlo >= xhi {
                    continue;
                }
                let tap = (ic * k + ky) * k + kx;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - pad;
                    let first_in = (ic * ih + iy) * iw + xlo * stride + kx - pad;
                    visit(tap, oy * ow + xlo..oy * ow + xhi, first_in);
                }
            }
        }
    }
}

fn im2col(input: &Tensor, k: usize, stride: usize, pad: usize, out: (usize, usize)) -> Vec<f64> {
    let n = out.0 * out.1;
    let mut cols = vec![0.0; input.channels * k * k * n];
    let shape = (input.channels, input.height, input.width);
    for_each_tap(shape, out, k, stride, pad, |tap, range, first_in| {
        let row = &mut cols[tap * n..][range];
        for (j, c) in row.iter_mut().enumerate() {
            *c = input.data[first_in + j * stride];
        }
    });
    cols
}

/// `c = a * b + c` for row-major operands given by (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the assertion bounds every index the strides can reach, since
    // each operand is exactly m x k, k x n and m x n in the given layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(input: &Tensor, p: &ConvParams, stride: usize, pad: usize) -> Tensor {
    let k = p.kernel_size;
    let oh = (input.height + 2 * pad - k) / stride + 1;
    let ow = (input.width + 2 * pad - k) / stride + 1;
    let (n, taps) = (oh * ow, p.in_channels * k * k);
    let cols = im2col(input, k, stride, pad, (oh, ow));
    let mut out = Tensor::zeros(p.out_channels, oh, ow);
    for oc in 0..p.out_channels {
        out.plane_mut(oc).fill(p.bias[oc]);
    }
    gemm_acc(
        p.out_channels,
        taps,
        n,
        &p.kernel,
        (taps, 1),
        &cols,
        (n, 1),
        &mut out.data,
    );
    out
}

fn conv_backward(
    input: &Tensor,
    grad_out: &Tensor,
    p: &ConvParams,
    g: &mut ConvParams,
    stride: usize,
    pad: usize,
) -> Tensor {
    let k = p.kernel_size;
    let out = (grad_out.height, grad_out.width);
    let (n, taps, oc) = (out.0 * out.1, p.in_channels * k * k, p.out_channels);
    for (c, b) in g.bias.iter_mut().enumerate() {
        *b += grad_out.plane(c).iter().sum::<f64>();
    }
    let cols = im2col(input, k, stride, pad, out);
    // dW += dY * cols^T
    gemm_acc(
        oc,
        n,
        taps,
        &grad_out.data,
        (n, 1),
        &cols,
        (1, n),
        &mut g.kernel,
    );
    // dcols = W^T * dY, then scatter back onto the input grid
    let mut grad_cols = vec![0.0; taps * n];
    gemm_acc(
        taps,
        oc,
        n,
        &p.kernel,
        (1, taps),
        &grad_out.data,
        (n, 1),
        &mut grad_cols,
    );
    let mut grad_in = Tensor::zeros(input.channels, input.height, input.width);
    let shape = (input.channels, input.height, input.width);
    for_each_tap(shape, out, k, stride, pad, |tap, range, first_in| {
        for (j, v) in grad_cols[tap * n..][range].iter().enumerate() {
            grad_in.data[first_in + j * stride] += v;
        }
    });
    grad_in
}

fn pool_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut argmax = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * x.width + 2 * ox;
                let cands = [base, base + 1, base + x.width, base + x.width + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                dst[oy * ow + ox] = src[best];
                argmax.push(best as u32);
            }
        }
    }
    (out, argmax)
}
