//! EdgeMAC extraction, sum aggregation and supervised whitening.
//!
//! An input edge map is resized so its longer side is 227, expanded into
//! five scales times two mirror states, each instance is padded by 30 zero
//! pixels and described independently. The ten unit vectors are either
//! compared one-to-one or summed into a single descriptor.

mod file;
mod whitening;

pub use file::{DescriptorFile, DESCRIPTOR_MAGIC};
pub use whitening::{
    apply_whitening, learn_whitening, learn_whitening_raw, load_whitening, save_whitening,
    WhiteningTransform, WHITENING_MAGIC,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edgemap::{pad_zeros, resize_max_side, scale_pyramid, EdgeMap, PYRAMID_FACTORS};
use crate::error::{Error, Result};
use crate::net::{describe, Descriptor, NetworkWeights};

/// Number of instances per input: five scales, each unmirrored and mirrored.
pub const INSTANCES: usize = 2 * PYRAMID_FACTORS.len();

/// Sums shorter than this fraction of the members' total length count as zero.
const AGGREGATION_FLOOR: f64 = 1e-10;

/// Geometry of extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    /// Longer side after the initial resize.
    pub max_side: usize,
    /// Zero border added around every instance.
    pub pad: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            max_side: 227,
            pad: 30,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_side == 0 {
            return Err(Error::config("max_side", "must be at least 1"));
        }
        Ok(())
    }
}

/// The ten unit descriptors of one input in pyramid order: scales
/// ascending, each original immediately followed by its mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMacSet(Vec<Descriptor>);

impl EdgeMacSet {
    pub fn new(members: Vec<Descriptor>) -> Result<Self> {
        if members.len() != INSTANCES {
            return Err(Error::Shape(format!(
                "an EdgeMAC set has {INSTANCES} members, got {}",
                members.len()
            )));
        }
        if members.iter().any(|d| d.dim() != members[0].dim()) {
            return Err(Error::Shape("EdgeMAC members differ in dimension".into()));
        }
        Ok(EdgeMacSet(members))
    }

    pub fn members(&self) -> &[Descriptor] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn into_members(self) -> Vec<Descriptor> {
        self.0
    }
}

fn instance_label(k: usize) -> String {
    let factor = PYRAMID_FACTORS[k / 2];
    let mirrored = if k % 2 == 1 { ", mirrored" } else { "" };
    format!("instance {k} (scale {factor:.4}{mirrored})")
}

fn check_sketch(map: &EdgeMap, is_sketch: bool) -> Result<()> {
    if is_sketch && !map.is_binary() {
        return Err(Error::Input(
            "sketch input must be binary; run sketch preprocessing first".into(),
        ));
    }
    Ok(())
}

/// Ten-instance EdgeMAC of an edge map.
pub fn extract_edgemac(
    weights: &NetworkWeights,
    map: &EdgeMap,
    is_sketch: bool,
    cfg: &ExtractConfig,
) -> Result<EdgeMacSet> {
    check_sketch(map, is_sketch)?;
    let base = resize_max_side(map, cfg.max_side);
    let instances = scale_pyramid(&base)?;
    let members = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            describe(weights, &pad_zeros(inst, cfg.pad)).map_err(|e| match e {
                Error::ZeroDescriptor(msg) => {
                    Error::ZeroDescriptor(format!("{}: {msg}", instance_label(k)))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EdgeMacSet::new(members)
}

/// Single-instance descriptor: resize, pad, describe. No pyramid, no mirror.
pub fn extract_single_scale(
    weights: &NetworkWeights,
    map: &EdgeMap,
    is_sketch: bool,
    cfg: &ExtractConfig,
) -> Result<Descriptor> {
    check_sketch(map, is_sketch)?;
    let base = resize_max_side(map, cfg.max_side);
    describe(weights, &pad_zeros(&base, cfg.pad))
}

/// [`extract_edgemac`] over many maps in parallel; output order follows input.
pub fn extract_batch(
    weights: &NetworkWeights,
    maps: &[EdgeMap],
    is_sketch: bool,
    cfg: &ExtractConfig,
) -> Result<Vec<EdgeMacSet>> {
    maps.par_iter()
        .map(|m| extract_edgemac(weights, m, is_sketch, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// [`extract_single_scale`] over many maps in parallel.
pub fn extract_batch_single(
    weights: &NetworkWeights,
    maps: &[EdgeMap],
    is_sketch: bool,
    cfg: &ExtractConfig,
) -> Result<Vec<Descriptor>> {
    maps.par_iter()
        .map(|m| extract_single_scale(weights, m, is_sketch, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Sum the ten members and re-normalize.
pub fn aggregate_sum(set: &EdgeMacSet) -> Result<Descriptor> {
    let mut acc = vec![0.0; set.dim()];
    for d in set.members() {
        for (a, v) in acc.iter_mut().zip(d.as_slice()) {
            *a += v;
        }
    }
    // members are unit vectors, so a sum this short is cancellation noise
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= AGGREGATION_FLOOR * INSTANCES as f64 {
        return Err(Error::Aggregation(format!(
            "the ten instance descriptors sum to a vector of norm {norm:e}"
        )));
    }
    Descriptor::normalize(acc)
}
