//! Nearest-neighbour search, graph diffusion and retrieval metrics.

mod graph;
mod metrics;

pub use graph::{
    build_knn_graph, combine_graphs, diffuse, diffusion_rerank, load_graph, save_graph,
    AffinityGraph, DiffusionConfig, GRAPH_MAGIC,
};
pub use metrics::{average_precision, evaluate_acc_at_k, evaluate_map};

use std::cmp::Ordering;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;

use crate::descriptor::{DescriptorFile, EdgeMacSet, INSTANCES};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::net::{dot, Descriptor, UNIT_TOLERANCE};

/// A searchable collection of stored descriptors.
///
/// On disk this is a descriptor file followed by one extra byte repeating
/// the per-item count.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    file: DescriptorFile,
}

impl Index {
    /// Wrap a descriptor collection, checking every vector is unit length.
    pub fn new(file: DescriptorFile) -> Result<Self> {
        for i in 0..file.len() {
            for k in 0..file.per_item() {
                let n = dot(file.vector(i, k), file.vector(i, k)).sqrt();
                if (n - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::Input(format!(
                        "stored descriptor {k} of `{}` has norm {n}",
                        file.ids()[i]
                    )));
                }
            }
        }
        Ok(Index { file })
    }

    pub fn len(&self) -> usize {
        self.file.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        self.file.ids()
    }

    pub fn per_item(&self) -> usize {
        self.file.per_item()
    }

    pub fn dim(&self) -> usize {
        self.file.dim()
    }

    pub fn descriptors(&self) -> &DescriptorFile {
        &self.file
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = ByteWriter::new(sink);
        self.file.write_body(&mut w)?;
        w.u8(self.file.per_item() as u8)?;
        w.finish()
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut r = ByteReader::new(source);
        let file = DescriptorFile::read_body(&mut r)?;
        let trailer = r.u8()? as usize;
        if trailer != file.per_item() {
            return Err(Error::Format(format!(
                "index trailer says {trailer} descriptors per item, header says {}",
                file.per_item()
            )));
        }
        r.expect_end()?;
        Index::new(file)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory cannot fail");
        out
    }
}

/// Items with scores in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort `(id, score)` pairs by score descending, ties by id ascending.
    pub fn from_scores(mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        RankedList { entries }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

fn ranked(index: &Index, scores: Vec<f64>, k: usize) -> RankedList {
    let entries = index.ids().iter().cloned().zip(scores).collect();
    let mut list = RankedList::from_scores(entries);
    list.truncate(k);
    list
}

/// Top `k` items by cosine similarity; `k` is clipped to the index size.
pub fn knn_search(query: &Descriptor, index: &Index, k: usize) -> Result<RankedList> {
    if index.per_item() != 1 {
        return Err(Error::Protocol(format!(
            "single-descriptor search needs an index with one descriptor per item, it has {}",
            index.per_item()
        )));
    }
    if query.dim() != index.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, index {}",
            query.dim(),
            index.dim()
        )));
    }
    let scores = (0..index.len())
        .map(|i| dot(query.as_slice(), index.file.vector(i, 0)))
        .collect();
    Ok(ranked(index, scores, k))
}

/// Rank items by the mean similarity of corresponding instances.
pub fn search_multi(query: &EdgeMacSet, index: &Index, k: usize) -> Result<RankedList> {
    if index.per_item() != INSTANCES {
        return Err(Error::Protocol(format!(
            "instance-wise search needs {INSTANCES} descriptors per item, index has {}",
            index.per_item()
        )));
    }
    if query.dim() != index.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, index {}",
            query.dim(),
            index.dim()
        )));
    }
    let scores = (0..index.len())
        .map(|i| {
            let total: f64 = query
                .members()
                .iter()
                .enumerate()
                .map(|(k, q)| dot(q.as_slice(), index.file.vector(i, k)))
                .sum();
            total / INSTANCES as f64
        })
        .collect();
    Ok(ranked(index, scores, k))
}

/// [`knn_search`] for many queries in parallel.
pub fn search_all(queries: &[Descriptor], index: &Index, k: usize) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|q| knn_search(q, index, k))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// [`search_multi`] for many queries in parallel.
pub fn search_multi_all(
    queries: &[EdgeMacSet],
    index: &Index,
    k: usize,
) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|q| search_multi(q, index, k))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Rankings as TSV rows `query_id rank item_id score`, ranks from 1.
pub fn write_rankings_tsv<W: Write>(
    query_ids: &[String],
    rankings: &[RankedList],
    config_hash: Option<u64>,
    mut sink: W,
) -> std::io::Result<()> {
    if let Some(h) = config_hash {
        writeln!(sink, "# config_hash={h:016x}")?;
    }
    for (q, list) in query_ids.iter().zip(rankings) {
        for (rank, (id, score)) in list.entries.iter().enumerate() {
            writeln!(sink, "{q}\t{}\t{id}\t{score}", rank + 1)?;
        }
    }
    Ok(())
}

/// Read rankings written by [`write_rankings_tsv`]. Query order follows
/// first appearance; rows of a query must come in rank order.
pub fn read_rankings_tsv<R: BufRead>(source: R) -> Result<(Vec<String>, Vec<RankedList>)> {
    let mut ids: Vec<String> = Vec::new();
    let mut lists: Vec<RankedList> = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("rankings: {e}")))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || {
            Error::Format(format!(
                "rankings line {}: expected query, rank, item, score",
                lineno + 1
            ))
        };
        let [q, rank, item, score] = fields[..] else {
            return Err(bad());
        };
        let rank: usize = rank.parse().map_err(|_| bad())?;
        let score: f64 = score.parse().map_err(|_| bad())?;
        if ids.last().map(String::as_str) != Some(q) {
            if ids.iter().any(|x| x == q) {
                return Err(Error::Format(format!(
                    "rankings for `{q}` are not contiguous"
                )));
            }
            ids.push(q.to_string());
            lists.push(RankedList {
                entries: Vec::new(),
            });
        }
        let list = lists.last_mut().expect("pushed above");
        if rank != list.entries.len() + 1 {
            return Err(Error::Format(format!(
                "rankings line {}: rank {rank} out of order",
                lineno + 1
            )));
        }
        list.entries.push((item.to_string(), score));
    }
    Ok((ids, lists))
}
