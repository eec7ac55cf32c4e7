//! Supervised whitening learned from matching pairs.
//!
//! File layout: `"EMWH"  u32 version (=1)  u64 config hash  u32 dim`, then
//! `f64 mean[dim]` and `f64 projection[dim][dim]` row-major.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::net::Descriptor;

pub const WHITENING_MAGIC: &[u8; 4] = b"EMWH";
const VERSION: u32 = 1;

/// Relative eigenvalue floor for the intra-pair covariance.
const EPS_REL: f64 = 1e-6;
/// Absolute floor used when the covariance vanishes entirely.
const EPS_ABS: f64 = 1e-12;

/// `d -> normalize(projection * (d - mean))`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub projection: Vec<f64>,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        let mut projection = vec![0.0; dim * dim];
        for i in 0..dim {
            projection[i * dim + i] = 1.0;
        }
        WhiteningTransform {
            mean: vec![0.0; dim],
            projection,
        }
    }

    /// `projection * (v - mean)` without normalization.
    pub fn transform_raw(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(Error::Shape(format!(
                "descriptor has dimension {}, whitening expects {dim}",
                v.len()
            )));
        }
        let centred: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .projection
            .chunks_exact(dim)
            .map(|row| row.iter().zip(&centred).map(|(p, c)| p * c).sum())
            .collect())
    }
}

/// Learn a whitening from matching descriptor pairs.
pub fn learn_whitening(pairs: &[(Descriptor, Descriptor)]) -> Result<WhiteningTransform> {
    let raw: Vec<(&[f64], &[f64])> = pairs
        .iter()
        .map(|(a, b)| (a.as_slice(), b.as_slice()))
        .collect();
    learn_whitening_raw(&raw)
}

/// [`learn_whitening`] on plain vectors.
///
/// The intra-pair scatter `C = mean((x - y)(x - y)^T)` is inverted as
/// `S = U diag(max(l, eps))^(-1/2) U^T`, where `eps = 1e-6 * trace(C) / dim`
/// only lifts eigenvalues that are (numerically) degenerate. The rotation `R`
/// diagonalizes the covariance of all `S`-projected descriptors, with
/// eigenvalues descending. The projection is `R S`.
pub fn learn_whitening_raw(pairs: &[(&[f64], &[f64])]) -> Result<WhiteningTransform> {
    if pairs.len() < 2 {
        return Err(Error::Sample(format!(
            "whitening needs at least 2 matching pairs, got {}",
            pairs.len()
        )));
    }
    let dim = pairs[0].0.len();
    if dim == 0 || pairs.iter().any(|(a, b)| a.len() != dim || b.len() != dim) {
        return Err(Error::Shape("whitening pairs differ in dimension".into()));
    }
    let n = pairs.len() as f64;

    let mut mean = vec![0.0; dim];
    for (a, b) in pairs {
        for i in 0..dim {
            mean[i] += a[i] + b[i];
        }
    }
    for m in &mut mean {
        *m /= 2.0 * n;
    }

    let mut intra = DMatrix::<f64>::zeros(dim, dim);
    for (a, b) in pairs {
        let d = DVector::from_iterator(dim, a.iter().zip(b.iter()).map(|(x, y)| x - y));
        intra.ger(1.0 / n, &d, &d, 1.0);
    }
    let s = inverse_sqrt(&intra, dim);

    let mut full = DMatrix::<f64>::zeros(dim, dim);
    for (a, b) in pairs {
        for v in [a, b] {
            let c = DVector::from_iterator(dim, v.iter().zip(&mean).map(|(x, m)| x - m));
            let z = &s * c;
            full.ger(1.0 / (2.0 * n), &z, &z, 1.0);
        }
    }
    let rotation = sorted_eigenvectors(&full).transpose();
    let p = rotation * s;
    let mut projection = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            projection.push(p[(r, c)]);
        }
    }
    Ok(WhiteningTransform { mean, projection })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inverse_sqrt(c: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let trace = c.trace();
    let eps = if trace > 0.0 {
        EPS_REL * trace / dim as f64
    } else {
        EPS_ABS
    };
    let eig = SymmetricEigen::new(symmetrize(c));
    let scales = DVector::from_iterator(
        dim,
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(eps).sqrt()),
    );
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&scales) * u.transpose()
}

/// Eigenvectors as columns, ordered by descending eigenvalue, each with its
/// largest-magnitude component positive.
fn sorted_eigenvectors(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let dim = m.nrows();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for (j, &k) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(k).clone_owned();
        let lead = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if lead < 0.0 {
            col.neg_mut();
        }
        out.set_column(j, &col);
    }
    out
}

/// Whiten and re-normalize one descriptor.
pub fn apply_whitening(t: &WhiteningTransform, d: &Descriptor) -> Result<Descriptor> {
    let v = t.transform_raw(d.as_slice())?;
    Descriptor::normalize(v)
        .map_err(|_| Error::Whitening("descriptor coincides with the whitening mean".into()))
}

pub fn save_whitening<W: Write>(t: &WhiteningTransform, config_hash: u64, sink: W) -> Result<()> {
    let mut w = ByteWriter::new(sink);
    w.bytes(WHITENING_MAGIC)?;
    w.u32(VERSION)?;
    w.u64(config_hash)?;
    w.u32(t.dim() as u32)?;
    for &v in t.mean.iter().chain(&t.projection) {
        w.f64(v)?;
    }
    w.finish()
}

pub fn load_whitening<R: Read>(source: R) -> Result<WhiteningTransform> {
    let mut r = ByteReader::new(source);
    if &r.array::<4>()? != WHITENING_MAGIC {
        return Err(Error::Format("not a whitening file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported whitening file version {version}"
        )));
    }
    let _hash = r.u64()?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::Format("whitening dimension is zero".into()));
    }
    let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let projection = (0..dim * dim)
        .map(|_| r.f64())
        .collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    Ok(WhiteningTransform { mean, projection })
}
