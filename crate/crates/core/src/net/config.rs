use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of the fully-convolutional stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        same_padding: bool,
    },
    Relu,
    /// 2x2 window, stride 2.
    MaxPool,
}

impl LayerSpec {
    pub const fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            kernel: 3,
            in_channels,
            out_channels,
            stride: 1,
            same_padding: true,
        }
    }
}

/// Layer list of the feature extractor. Input is a single-channel filtered
/// edge map; the output of the last layer is max-pooled globally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::blocks(&[16, 32, 64, 64])
    }
}

impl NetworkConfig {
    /// `conv3x3-relu-pool` blocks with the given widths; the last block has no pool.
    pub fn blocks(widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut in_channels = 1;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerSpec::conv3x3(in_channels, w));
            layers.push(LayerSpec::Relu);
            if i + 1 < widths.len() {
                layers.push(LayerSpec::MaxPool);
            }
            in_channels = w;
        }
        NetworkConfig { layers }
    }

    pub fn convs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => Some((kernel, in_channels, out_channels)),
            _ => None,
        })
    }

    /// Out-channels of the last convolution.
    pub fn descriptor_dim(&self) -> usize {
        self.convs().last().map_or(0, |(_, _, out)| out)
    }

    /// Product of all strides and pool factors.
    pub fn cumulative_stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { stride, .. } => stride,
                LayerSpec::MaxPool => 2,
                LayerSpec::Relu => 1,
            })
            .product()
    }

    /// Spatial size after the whole stack, `None` if some layer would
    /// produce an empty map.
    pub fn output_size(&self, mut height: usize, mut width: usize) -> Option<(usize, usize)> {
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    same_padding,
                    ..
                } => {
                    let pad = if same_padding { kernel / 2 } else { 0 };
                    if height + 2 * pad < kernel || width + 2 * pad < kernel {
                        return None;
                    }
                    height = (height + 2 * pad - kernel) / stride + 1;
                    width = (width + 2 * pad - kernel) / stride + 1;
                }
                LayerSpec::MaxPool => {
                    height /= 2;
                    width /= 2;
                }
                LayerSpec::Relu => {}
            }
            if height == 0 || width == 0 {
                return None;
            }
        }
        Some((height, width))
    }

    pub fn validate(&self) -> Result<()> {
        let mut channels = 1;
        let mut seen_conv = false;
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                stride,
                ..
            } = *layer
            {
                if in_channels != channels {
                    return Err(Error::config(
                        format!("layers[{i}].in_channels"),
                        format!("expected {channels}, found {in_channels}"),
                    ));
                }
                if kernel == 0 || out_channels == 0 || stride == 0 {
                    return Err(Error::config(
                        format!("layers[{i}]"),
                        "kernel, out_channels and stride must be positive",
                    ));
                }
                channels = out_channels;
                seen_conv = true;
            }
        }
        if !seen_conv {
            return Err(Error::config(
                "layers",
                "at least one convolution is required",
            ));
        }
        match self.layers.last() {
            Some(LayerSpec::Conv { .. }) | Some(LayerSpec::Relu) => Ok(()),
            _ => Err(Error::config(
                "layers",
                "the last layer before global pooling must be conv or relu",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stack_shape() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.descriptor_dim(), 64);
        assert_eq!(c.cumulative_stride(), 8);
        assert_eq!(c.layers.len(), 11);
        assert_eq!(c.output_size(200, 200), Some((25, 25)));
        assert_eq!(c.output_size(7, 200), None);
    }

    #[test]
    fn broken_chains_are_rejected() {
        let c = NetworkConfig {
            layers: vec![LayerSpec::conv3x3(1, 4), LayerSpec::conv3x3(5, 4)],
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let c = NetworkConfig {
            layers: vec![LayerSpec::conv3x3(1, 4), LayerSpec::MaxPool],
        };
        assert!(c.validate().is_err());
        let c = NetworkConfig {
            layers: vec![LayerSpec::conv3x3(3, 4)],
        };
        assert!(c.validate().is_err());
        assert!(NetworkConfig { layers: vec![] }.validate().is_err());
    }
}
