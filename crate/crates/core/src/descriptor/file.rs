//! Descriptor file.
//!
//! ```text
//! "EMDC"  u32 version (=1)  u32 dim  u8 per-item count (1 or 10)  u64 item count
//! f32 descriptors, item-major, instances in pyramid order
//! per item: u32 byte length, UTF-8 id
//! ```

use std::io::{Read, Write};

use crate::descriptor::{EdgeMacSet, INSTANCES};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::net::{Descriptor, UNIT_TOLERANCE};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"EMDC";
const VERSION: u32 = 1;

/// Descriptors of a collection of items, one or ten unit vectors each.
///
/// Values are rounded to single precision on construction so an in-memory
/// collection equals what reading its file back yields.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    dim: usize,
    per_item: usize,
    ids: Vec<String>,
    data: Vec<f64>,
}

impl DescriptorFile {
    fn build(ids: Vec<String>, dim: usize, per_item: usize, data: Vec<f64>) -> Result<Self> {
        if per_item != 1 && per_item != INSTANCES {
            return Err(Error::Format(format!(
                "per-item count must be 1 or {INSTANCES}, got {per_item}"
            )));
        }
        if dim == 0 || data.len() != ids.len() * per_item * dim {
            return Err(Error::Shape(format!(
                "{} values for {} items of {per_item} x {dim}",
                data.len(),
                ids.len()
            )));
        }
        Ok(DescriptorFile {
            dim,
            per_item,
            ids,
            data: data.into_iter().map(|v| v as f32 as f64).collect(),
        })
    }

    /// One descriptor per item.
    pub fn from_descriptors(ids: Vec<String>, descriptors: &[Descriptor]) -> Result<Self> {
        if ids.len() != descriptors.len() {
            return Err(Error::Shape("ids and descriptors differ in count".into()));
        }
        let dim = descriptors.first().map_or(0, Descriptor::dim);
        if descriptors.iter().any(|d| d.dim() != dim) {
            return Err(Error::Shape("descriptors differ in dimension".into()));
        }
        let data = descriptors
            .iter()
            .flat_map(|d| d.as_slice().iter().copied())
            .collect();
        DescriptorFile::build(ids, dim.max(1), 1, data)
    }

    /// Ten instance descriptors per item.
    pub fn from_sets(ids: Vec<String>, sets: &[EdgeMacSet]) -> Result<Self> {
        if ids.len() != sets.len() {
            return Err(Error::Shape(
                "ids and descriptor sets differ in count".into(),
            ));
        }
        let dim = sets.first().map_or(1, EdgeMacSet::dim);
        if sets.iter().any(|s| s.dim() != dim) {
            return Err(Error::Shape("descriptor sets differ in dimension".into()));
        }
        let data = sets
            .iter()
            .flat_map(|s| {
                s.members()
                    .iter()
                    .flat_map(|d| d.as_slice().iter().copied())
            })
            .collect();
        DescriptorFile::build(ids, dim, INSTANCES, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn per_item(&self) -> usize {
        self.per_item
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Instance `k` of item `i`.
    pub fn vector(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.per_item + k) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All `per_item * dim` values of item `i`.
    pub fn item(&self, i: usize) -> &[f64] {
        let stride = self.per_item * self.dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn descriptor(&self, i: usize, k: usize) -> Result<Descriptor> {
        Descriptor::from_unit(self.vector(i, k).to_vec(), UNIT_TOLERANCE)
    }

    pub fn descriptors(&self) -> Result<Vec<Descriptor>> {
        if self.per_item != 1 {
            return Err(Error::Protocol(format!(
                "expected one descriptor per item, file has {}",
                self.per_item
            )));
        }
        (0..self.len()).map(|i| self.descriptor(i, 0)).collect()
    }

    pub fn sets(&self) -> Result<Vec<EdgeMacSet>> {
        if self.per_item != INSTANCES {
            return Err(Error::Protocol(format!(
                "expected {INSTANCES} descriptors per item, file has {}",
                self.per_item
            )));
        }
        (0..self.len())
            .map(|i| {
                let members = (0..INSTANCES)
                    .map(|k| self.descriptor(i, k))
                    .collect::<Result<Vec<_>>>()?;
                EdgeMacSet::new(members)
            })
            .collect()
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut ByteWriter<W>) -> Result<()> {
        w.bytes(DESCRIPTOR_MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.dim as u32)?;
        w.u8(self.per_item as u8)?;
        w.u64(self.ids.len() as u64)?;
        for &v in &self.data {
            w.f32(v as f32)?;
        }
        for id in &self.ids {
            w.u32(id.len() as u32)?;
            w.bytes(id.as_bytes())?;
        }
        Ok(())
    }

    pub(crate) fn read_body<R: Read>(r: &mut ByteReader<R>) -> Result<Self> {
        if &r.array::<4>()? != DESCRIPTOR_MAGIC {
            return Err(Error::Format("not a descriptor file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported descriptor file version {version}"
            )));
        }
        let dim = r.u32()? as usize;
        let per_item = r.u8()? as usize;
        let count = r.u64()? as usize;
        if dim == 0 {
            return Err(Error::Format("descriptor dimension is zero".into()));
        }
        let values = count
            .checked_mul(per_item)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Format("descriptor count overflows".into()))?;
        let mut data = Vec::with_capacity(values.min(1 << 24));
        for _ in 0..values {
            data.push(r.f32()? as f64);
        }
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let bytes = r.vec(len)?;
            ids.push(
                String::from_utf8(bytes)
                    .map_err(|_| Error::Format("item id is not UTF-8".into()))?,
            );
        }
        DescriptorFile::build(ids, dim, per_item, data).map_err(|e| match e {
            Error::Shape(m) => Error::Format(m),
            other => other,
        })
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = ByteWriter::new(sink);
        self.write_body(&mut w)?;
        w.finish()
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut r = ByteReader::new(source);
        let file = DescriptorFile::read_body(&mut r)?;
        r.expect_end()?;
        Ok(file)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory cannot fail");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Descriptor {
        Descriptor::normalize(v.to_vec()).unwrap()
    }

    fn sample() -> DescriptorFile {
        DescriptorFile::from_descriptors(
            vec!["a".into(), "bé".into(), "c".into()],
            &[
                unit(&[1.0, 2.0, 2.0]),
                unit(&[0.0, 1.0, 0.0]),
                unit(&[3.0, 0.0, 4.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"EMDC");
        assert_eq!(
            bytes.len(),
            4 + 4 + 4 + 1 + 8 + 9 * 4 + (4 + 1) + (4 + 3) + (4 + 1)
        );
        let back = DescriptorFile::read(&bytes[..]).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.descriptors().unwrap().len(), 3);
    }

    #[test]
    fn header_fields() {
        let bytes = sample().to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes[12], 1);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 3);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            DescriptorFile::read(&bad[..]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            DescriptorFile::read(&bad[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            DescriptorFile::read(&bytes[..bytes.len() - 2]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            DescriptorFile::read(&bad[..]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes;
        bad[12] = 3;
        assert!(DescriptorFile::read(&bad[..]).is_err());
    }

    #[test]
    fn instance_sets_round_trip() {
        let set = EdgeMacSet::new((0..10).map(|i| unit(&[1.0, i as f64])).collect()).unwrap();
        let f = DescriptorFile::from_sets(vec!["x".into()], &[set]).unwrap();
        assert_eq!(f.per_item(), 10);
        let back = DescriptorFile::read(&f.to_bytes()[..]).unwrap();
        assert_eq!(back.sets().unwrap()[0].members().len(), 10);
        assert!(matches!(back.descriptors(), Err(Error::Protocol(_))));
    }
}
