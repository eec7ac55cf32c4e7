use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::net::config::NetworkConfig;
use crate::rng;

/// Kernel and bias of one convolution. The kernel is stored
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel_size,
            in_channels,
            out_channels,
            kernel: vec![0.0; out_channels * in_channels * kernel_size * kernel_size],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn kernel_index(&self, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        ((out * self.in_channels + inp) * self.kernel_size + ky) * self.kernel_size + kx
    }
}

/// All trainable state of the network plus the seed it was initialized from.
#[derive(Debug, Clone)]
pub struct NetworkWeights {
    pub config: NetworkConfig,
    pub convs: Vec<ConvParams>,
    pub filter: FilterParams,
    pub seed: u64,
    pub(crate) revision: u64,
}

impl PartialEq for NetworkWeights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.convs == other.convs
            && self.filter == other.filter
            && self.seed == other.seed
    }
}

impl NetworkWeights {
    /// Build from parts, checking shapes against `config`.
    pub fn from_parts(
        config: NetworkConfig,
        convs: Vec<ConvParams>,
        filter: FilterParams,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        filter.validate()?;
        let specs: Vec<_> = config.convs().collect();
        if specs.len() != convs.len() {
            return Err(Error::Shape(format!(
                "{} conv parameter sets for {} conv layers",
                convs.len(),
                specs.len()
            )));
        }
        for (i, ((k, cin, cout), p)) in specs.iter().zip(&convs).enumerate() {
            let ok = p.kernel_size == *k
                && p.in_channels == *cin
                && p.out_channels == *cout
                && p.kernel.len() == k * k * cin * cout
                && p.bias.len() == *cout;
            if !ok {
                return Err(Error::Shape(format!(
                    "conv layer {i} does not match config"
                )));
            }
        }
        Ok(NetworkWeights {
            config,
            convs,
            filter,
            seed,
            revision: 0,
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.descriptor_dim()
    }

    /// Number of scalar trainable parameters, including `p` and `tau`.
    pub fn parameter_count(&self) -> usize {
        2 + self
            .convs
            .iter()
            .map(|c| c.kernel.len() + c.bias.len())
            .sum::<usize>()
    }

    /// Round every conv parameter to single precision, the storage precision
    /// of the weight file.
    pub(crate) fn round_to_storage(&mut self) {
        for conv in &mut self.convs {
            for v in conv.kernel.iter_mut().chain(conv.bias.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }
}

/// He-scaled normal initialization, fully determined by `seed`. Biases start
/// at zero and the filter at its default parameters.
pub fn init_weights(config: &NetworkConfig, seed: u64) -> Result<NetworkWeights> {
    config.validate()?;
    let mut rng = rng::substream(seed, "init");
    let convs = config
        .convs()
        .map(|(k, cin, cout)| {
            let std = (2.0 / (cin * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut params = ConvParams::zeros(k, cin, cout);
            for v in &mut params.kernel {
                *v = normal.sample(&mut rng);
            }
            params
        })
        .collect();
    let mut weights =
        NetworkWeights::from_parts(config.clone(), convs, FilterParams::default(), seed)?;
    weights.round_to_storage();
    Ok(weights)
}

/// A convolution kernel addressed as `(i, j, channel, filter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    data: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        size: usize,
        in_channels: usize,
        out_channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != size * size * in_channels * out_channels {
            return Err(Error::Shape(format!(
                "{} values for a {size}x{size}x{in_channels}x{out_channels} kernel",
                data.len()
            )));
        }
        Ok(ConvKernel {
            size,
            in_channels,
            out_channels,
            data,
        })
    }

    pub fn from_fn(
        size: usize,
        in_channels: usize,
        out_channels: usize,
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(size * size * in_channels * out_channels);
        for i in 0..size {
            for j in 0..size {
                for ch in 0..in_channels {
                    for c in 0..out_channels {
                        data.push(f(i, j, ch, c));
                    }
                }
            }
        }
        ConvKernel {
            size,
            in_channels,
            out_channels,
            data,
        }
    }

    pub fn get(&self, i: usize, j: usize, ch: usize, c: usize) -> f64 {
        self.data[((i * self.size + j) * self.in_channels + ch) * self.out_channels + c]
    }

    /// View as network conv parameters with zero bias.
    pub fn to_conv_params(&self) -> ConvParams {
        let mut p = ConvParams::zeros(self.size, self.in_channels, self.out_channels);
        for c in 0..self.out_channels {
            for ch in 0..self.in_channels {
                for i in 0..self.size {
                    for j in 0..self.size {
                        let idx = p.kernel_index(c, ch, i, j);
                        p.kernel[idx] = self.get(i, j, ch, c);
                    }
                }
            }
        }
        p
    }
}

/// Sum first-layer RGB filters over the colour axis so the layer accepts a
/// single-channel edge map.
pub fn collapse_rgb_filters(kernel: &ConvKernel) -> Result<ConvKernel> {
    if kernel.in_channels != 3 {
        return Err(Error::Shape(format!(
            "expected 3 input channels, found {}",
            kernel.in_channels
        )));
    }
    Ok(ConvKernel::from_fn(
        kernel.size,
        1,
        kernel.out_channels,
        |i, j, _, c| (0..3).map(|ch| kernel.get(i, j, ch, c)).sum(),
    ))
}
