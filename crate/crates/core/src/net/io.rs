//! Weight file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "EMWT"  u32 version (=1)  u64 config hash  u64 init seed
//! u32 layer count, then per layer a tagged record:
//!     0 conv:    u32 kernel, u32 in, u32 out, u32 stride, u8 same-padding
//!     1 relu
//!     2 maxpool
//! u32 descriptor_dim
//! f64 p, f64 tau, f64 beta, f64 out_scale
//! per conv layer in declaration order: f32 kernel [out][in][ky][kx], f32 bias [out]
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::io::{ByteReader, ByteWriter};
use crate::net::config::{LayerSpec, NetworkConfig};
use crate::net::weights::{ConvParams, NetworkWeights};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EMWT";
pub const WEIGHTS_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_POOL: u8 = 2;

pub fn save_weights<W: Write>(weights: &NetworkWeights, config_hash: u64, sink: W) -> Result<()> {
    let mut w = ByteWriter::new(sink);
    w.bytes(WEIGHTS_MAGIC)?;
    w.u32(WEIGHTS_VERSION)?;
    w.u64(config_hash)?;
    w.u64(weights.seed)?;
    w.u32(weights.config.layers.len() as u32)?;
    for layer in &weights.config.layers {
        match *layer {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                stride,
                same_padding,
            } => {
                w.u8(TAG_CONV)?;
                for v in [kernel, in_channels, out_channels, stride] {
                    w.u32(v as u32)?;
                }
                w.u8(same_padding as u8)?;
            }
            LayerSpec::Relu => w.u8(TAG_RELU)?,
            LayerSpec::MaxPool => w.u8(TAG_POOL)?,
        }
    }
    w.u32(weights.descriptor_dim() as u32)?;
    let f = &weights.filter;
    for v in [f.p, f.tau, f.beta, f.out_scale] {
        w.f64(v)?;
    }
    for conv in &weights.convs {
        for &v in conv.kernel.iter().chain(&conv.bias) {
            w.f32(v as f32)?;
        }
    }
    w.finish()
}

/// Header fields of a weight file besides the weights themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub config_hash: u64,
}

pub fn load_weights<R: Read>(source: R) -> Result<(NetworkWeights, WeightsHeader)> {
    let mut r = ByteReader::new(source);
    let magic = r.array::<4>()?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight file version {version}"
        )));
    }
    let config_hash = r.u64()?;
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    if n_layers > 4096 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(match r.u8()? {
            TAG_CONV => {
                let kernel = r.u32()? as usize;
                let in_channels = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let same_padding = match r.u8()? {
                    0 => false,
                    1 => true,
                    other => return Err(Error::Format(format!("bad padding flag {other}"))),
                };
                LayerSpec::Conv {
                    kernel,
                    in_channels,
                    out_channels,
                    stride,
                    same_padding,
                }
            }
            TAG_RELU => LayerSpec::Relu,
            TAG_POOL => LayerSpec::MaxPool,
            tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
        });
    }
    let config = NetworkConfig { layers };
    config
        .validate()
        .map_err(|e| Error::Format(format!("embedded config invalid: {e}")))?;
    let dim = r.u32()? as usize;
    if dim != config.descriptor_dim() {
        return Err(Error::Format(format!(
            "descriptor_dim {dim} disagrees with embedded layers ({})",
            config.descriptor_dim()
        )));
    }
    let filter = FilterParams {
        p: r.f64()?,
        tau: r.f64()?,
        beta: r.f64()?,
        out_scale: r.f64()?,
    };
    let mut convs = Vec::new();
    for (k, cin, cout) in config.convs() {
        let mut params = ConvParams::zeros(k, cin, cout);
        for v in params.kernel.iter_mut().chain(params.bias.iter_mut()) {
            *v = f64::from(r.f32()?);
        }
        convs.push(params);
    }
    r.expect_end()?;
    let weights = NetworkWeights::from_parts(config, convs, filter, seed)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((weights, WeightsHeader { config_hash }))
}

/// Load and require the embedded config to equal `expected`.
pub fn load_weights_for<R: Read>(source: R, expected: &NetworkConfig) -> Result<NetworkWeights> {
    let (weights, _) = load_weights(source)?;
    if weights.descriptor_dim() != expected.descriptor_dim() {
        return Err(Error::Format(format!(
            "weight file has descriptor_dim {}, expected {}",
            weights.descriptor_dim(),
            expected.descriptor_dim()
        )));
    }
    if &weights.config != expected {
        return Err(Error::Format(
            "weight file layers differ from the expected config".into(),
        ));
    }
    Ok(weights)
}
