use crate::error::{Error, Result};

/// Tolerance on the norm of a vector claimed to be unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// An l2-normalized global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    /// Normalize `values` to unit length.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroDescriptor(format!(
                "cannot normalize a vector of norm {norm}"
            )));
        }
        Ok(Descriptor(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wrap values that are already unit length (within `tolerance`).
    pub fn from_unit(values: Vec<f64>, tolerance: f64) -> Result<Self> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > tolerance {
            return Err(Error::Input(format!(
                "descriptor norm {norm} is not 1 within {tolerance}"
            )));
        }
        Ok(Descriptor(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Descriptor) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
