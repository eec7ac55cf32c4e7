//! Fully-convolutional feature extractor with global max pooling (MAC) and
//! l2 normalization.
//!
//! The stack is a list of [`LayerSpec`]s: 2D convolutions, ReLUs and 2x2
//! max-pools. After the last layer every channel is reduced to its spatial
//! maximum and the resulting vector is normalized to unit length. There are no
//! fully-connected layers, so any input at least as large as the network's
//! footprint is accepted, and the descriptor does not depend on where in the
//! frame the content sits.
//!
//! Arithmetic is double precision throughout; weights are kept representable
//! in single precision, the storage precision of the weight file.

mod config;
mod descriptor;
mod forward;
mod io;
mod weights;

pub use config::{LayerSpec, NetworkConfig};
pub(crate) use descriptor::dot;
pub use descriptor::{Descriptor, UNIT_TOLERANCE};
pub use forward::{
    backward, backward_with_input, describe, forward, forward_edge_map, ForwardCache, Gradients,
};
pub use io::{load_weights, load_weights_for, save_weights, WeightsHeader, WEIGHTS_MAGIC};
pub use weights::{collapse_rgb_filters, init_weights, ConvKernel, ConvParams, NetworkWeights};
