//! kNN affinity graphs and diffusion.
//!
//! Graph file layout: `"EMGR"  u32 version (=1)  u64 config hash  u64 n
//! u64 edge count`, then per undirected edge with `i < j`:
//! `u64 i  u64 j  f64 weight`, sorted by `(i, j)`.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::net::{dot, Descriptor};
use crate::retrieval::RankedList;

pub const GRAPH_MAGIC: &[u8; 4] = b"EMGR";
const VERSION: u32 = 1;

/// Residual target of the linear solve, relative to the seed norm.
const CG_TOLERANCE: f64 = 1e-6;

/// Graph and diffusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub alpha: f64,
    /// Neighbours per node, clipped to `n - 1`.
    pub k: usize,
    /// Exponent applied to clipped cosine similarities.
    pub gamma: f64,
    /// Database items seeded from the query's initial ranking.
    pub seed_k: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            alpha: 0.9,
            k: 50,
            gamma: 3.0,
            seed_k: 10,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(
                "alpha",
                format!("{} is outside (0, 1)", self.alpha),
            ));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(
                "gamma",
                format!("{} must be positive", self.gamma),
            ));
        }
        if self.seed_k == 0 {
            return Err(Error::config("seed_k", "must be at least 1"));
        }
        Ok(())
    }
}

/// Sparse symmetric non-negative affinities with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    n: usize,
    /// Per row, `(column, weight)` sorted by column, zero weights omitted.
    rows: Vec<Vec<(usize, f64)>>,
}

impl AffinityGraph {
    /// Build from undirected edges. Repeated edges keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Shape(format!(
                    "edge ({i}, {j}) outside a graph of {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::Input(format!("self-loop on node {i}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Input(format!("edge ({i}, {j}) has weight {w}")));
            }
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut dedup: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, w) in row.iter() {
                match dedup.last_mut() {
                    Some(last) if last.0 == c => last.1 = w,
                    _ => dedup.push((c, w)),
                }
            }
            dedup.retain(|e| e.1 > 0.0);
            *row = dedup;
        }
        Ok(AffinityGraph { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |p| self.rows[i][p].1)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn max_weight(&self) -> f64 {
        self.rows.iter().flatten().map(|e| e.1).fold(0.0, f64::max)
    }

    /// Symmetric normalization `D^-1/2 A D^-1/2` applied to `x`, with
    /// isolated nodes given degree 1.
    fn normalized_apply(&self, inv_sqrt_deg: &[f64], x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row.iter().map(|&(j, w)| w * inv_sqrt_deg[j] * x[j]).sum();
            out[i] = inv_sqrt_deg[i] * s;
        }
    }

    fn inv_sqrt_degrees(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let d: f64 = row.iter().map(|e| e.1).sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Dense `I - alpha S`, for checking the solver.
    pub fn system_matrix(&self, alpha: f64) -> Vec<f64> {
        let n = self.n;
        let inv = self.inv_sqrt_degrees();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
            for &(j, w) in &self.rows[i] {
                m[i * n + j] -= alpha * inv[i] * w * inv[j];
            }
        }
        m
    }
}

/// Mutual-kNN affinity graph: `a_ij = max(0, cos)^gamma` when either node
/// is among the other's `k` nearest neighbours.
pub fn build_knn_graph(descriptors: &[Descriptor], k: usize, gamma: f64) -> Result<AffinityGraph> {
    let n = descriptors.len();
    if n < 2 {
        return Err(Error::Size(format!(
            "a kNN graph needs at least 2 nodes, got {n}"
        )));
    }
    let dim = descriptors[0].dim();
    if descriptors.iter().any(|d| d.dim() != dim) {
        return Err(Error::Shape("graph descriptors differ in dimension".into()));
    }
    let k = k.min(n - 1);
    let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(descriptors[i].as_slice(), descriptors[j].as_slice())))
                .collect();
            sims.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            sims.truncate(k);
            sims
        })
        .collect();
    let mut edges = Vec::new();
    for (i, list) in neighbours.iter().enumerate() {
        for &(j, c) in list {
            edges.push((i.min(j), i.max(j), c.max(0.0).powf(gamma)));
        }
    }
    // both directions carry the same cosine, so dedup is order-independent
    edges.sort_by_key(|e| (e.0, e.1));
    edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    AffinityGraph::from_edges(n, &edges)
}

/// Elementwise sum rescaled so the largest entry is 1.
pub fn combine_graphs(a: &AffinityGraph, b: &AffinityGraph) -> Result<AffinityGraph> {
    if a.n != b.n {
        return Err(Error::Shape(format!(
            "graphs have {} and {} nodes",
            a.n, b.n
        )));
    }
    let mut sums = std::collections::BTreeMap::new();
    for (i, j, w) in a.edges().into_iter().chain(b.edges()) {
        *sums.entry((i, j)).or_insert(0.0) += w;
    }
    let max = sums.values().copied().fold(0.0, f64::max);
    let edges: Vec<(usize, usize, f64)> = sums
        .into_iter()
        .map(|((i, j), w)| (i, j, if max > 0.0 { w / max } else { 0.0 }))
        .collect();
    AffinityGraph::from_edges(a.n, &edges)
}

/// Solve `(I - alpha S) f = y` by conjugate gradient.
pub fn diffuse(graph: &AffinityGraph, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let n = graph.n;
    if y.len() != n {
        return Err(Error::Shape(format!(
            "seed has length {}, graph {n} nodes",
            y.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("{alpha} is outside (0, 1)")));
    }
    if !y.iter().any(|&v| v > 0.0) || y.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Input(
            "diffusion seed must be non-negative with a positive entry".into(),
        ));
    }
    let inv = graph.inv_sqrt_degrees();
    let apply = |x: &[f64], out: &mut [f64]| {
        graph.normalized_apply(&inv, x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - alpha * *o;
        }
    };
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = CG_TOLERANCE * y_norm;
    let mut f = vec![0.0; n];
    let mut r = y.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 10 * n.max(1);
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let step = rr / pap;
        for i in 0..n {
            f[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    // confirm against the true residual, not the recurrence
    apply(&f, &mut ap);
    let res = ap
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if res > target {
        return Err(Error::Solver(format!(
            "conjugate gradient reached residual {res:e} after {max_iter} iterations, target {target:e}"
        )));
    }
    Ok(f)
}

/// Re-rank a database by diffusing the query's top `seed_k` similarities
/// (clipped at zero) through `graph`. `ids` names the graph's nodes.
pub fn diffusion_rerank(
    initial: &RankedList,
    ids: &[String],
    graph: &AffinityGraph,
    alpha: f64,
    seed_k: usize,
) -> Result<RankedList> {
    if ids.len() != graph.n {
        return Err(Error::Shape(format!(
            "{} ids for a graph of {} nodes",
            ids.len(),
            graph.n
        )));
    }
    let position: std::collections::HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut y = vec![0.0; graph.n];
    for (id, score) in initial.entries.iter().take(seed_k) {
        let &i = position
            .get(id.as_str())
            .ok_or_else(|| Error::Input(format!("ranked item `{id}` is not a graph node")))?;
        y[i] = score.max(0.0);
    }
    let f = diffuse(graph, &y, alpha)?;
    Ok(RankedList::from_scores(
        ids.iter().cloned().zip(f).collect(),
    ))
}

pub fn save_graph<W: Write>(graph: &AffinityGraph, config_hash: u64, sink: W) -> Result<()> {
    let mut w = ByteWriter::new(sink);
    w.bytes(GRAPH_MAGIC)?;
    w.u32(VERSION)?;
    w.u64(config_hash)?;
    w.u64(graph.n as u64)?;
    let edges = graph.edges();
    w.u64(edges.len() as u64)?;
    for (i, j, wt) in edges {
        w.u64(i as u64)?;
        w.u64(j as u64)?;
        w.f64(wt)?;
    }
    w.finish()
}

pub fn load_graph<R: Read>(source: R) -> Result<AffinityGraph> {
    let mut r = ByteReader::new(source);
    if &r.array::<4>()? != GRAPH_MAGIC {
        return Err(Error::Format("not a graph file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported graph file version {version}"
        )));
    }
    let _hash = r.u64()?;
    let n = r.u64()? as usize;
    let count = r.u64()? as usize;
    let mut edges = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let i = r.u64()? as usize;
        let j = r.u64()? as usize;
        let w = r.f64()?;
        edges.push((i, j, w));
    }
    r.expect_end()?;
    AffinityGraph::from_edges(n, &edges).map_err(|e| Error::Format(e.to_string()))
}
