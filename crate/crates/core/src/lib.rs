//! Shape matching on edge maps.
//!
//! Inputs of any modality become edge maps, pass through a trainable edge
//! filter and a small convolutional network, and come out as unit-length
//! MAC descriptors. Around that core sit siamese training with hard-negative
//! mining, multi-scale EdgeMAC extraction, learned whitening, exact search,
//! diffusion re-ranking, retrieval metrics and linear domain-transfer probes.
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod classify;
pub mod descriptor;
pub mod edgemap;
pub mod error;
pub mod filter;
pub mod harness;
mod io;
pub mod net;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/edge-maps.md")]
    mod edge_maps {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/descriptors.md")]
    mod descriptors {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
