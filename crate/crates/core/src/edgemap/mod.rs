//! Edge maps: the single input modality shared by photos, artwork and sketches.
//!
//! An [`EdgeMap`] is a row-major grid of edge strengths in `[0, 1]`, with `0`
//! meaning background. A [`Sketch`] is the binary special case. Everything
//! here is a pure function of its inputs (plus an explicit seeded generator
//! where randomness is involved).

mod detect;
mod morph;
mod raster;
mod resize;

pub use detect::detect_edges_fallback;
pub use morph::{dilate3x3, preprocess_sketch, thin_guo_hall};
pub use raster::{load_edge_map, Raster};
pub use resize::{resize, resize_max_side, round_half_up, scale_pyramid, PYRAMID_FACTORS};

use crate::error::{Error, Result};

/// Upper bound of the random binarization threshold used for augmentation.
pub const BINARIZE_MAX_THRESHOLD: f64 = 0.2;

/// A 2D grid of edge strengths in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl EdgeMap {
    /// Build a map, validating dimensions and the strength range.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "edge map must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} strengths for a {width}x{height} map",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Input(format!("edge strength {bad} outside [0, 1]")));
        }
        Ok(EdgeMap {
            width,
            height,
            data,
        })
    }

    /// Internal constructor for data already known to satisfy the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert!(width >= 1 && height >= 1);
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|s| (0.0..=1.0).contains(s)));
        EdgeMap {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        EdgeMap::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Longer of the two sides.
    pub fn max_side(&self) -> usize {
        self.width.max(self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Strength at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&s| s == 0.0 || s == 1.0)
    }

    /// Place `other` with its top-left corner at (`x0`, `y0`), clipping anything
    /// that falls outside. Used to build canvases.
    pub fn paste(&mut self, other: &EdgeMap, x0: usize, y0: usize) {
        for y in 0..other.height {
            let ty = y0 + y;
            if ty >= self.height {
                break;
            }
            for x in 0..other.width {
                let tx = x0 + x;
                if tx >= self.width {
                    break;
                }
                self.data[ty * self.width + tx] = other.get(x, y);
            }
        }
    }
}

/// A binary edge map: every strength is exactly 0 or exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch(EdgeMap);

impl Sketch {
    pub fn new(map: EdgeMap) -> Result<Self> {
        if !map.is_binary() {
            return Err(Error::Input(
                "sketch strengths must be exactly 0 or 1".into(),
            ));
        }
        Ok(Sketch(map))
    }

    /// Binarize an arbitrary map at 0.5, the usual reading of a scanned drawing.
    pub fn from_drawing(map: &EdgeMap) -> Self {
        Sketch(binarize_at(map, 0.5))
    }

    pub fn as_map(&self) -> &EdgeMap {
        &self.0
    }

    pub fn into_map(self) -> EdgeMap {
        self.0
    }
}

/// Surround the map with `border` pixels of zero strength on every side.
pub fn pad_zeros(map: &EdgeMap, border: usize) -> EdgeMap {
    if border == 0 {
        return map.clone();
    }
    let width = map.width + 2 * border;
    let height = map.height + 2 * border;
    let mut out = EdgeMap::from_raw(width, height, vec![0.0; width * height]);
    out.paste(map, border, border);
    out
}

/// Reverse the column order (horizontal flip).
pub fn mirror(map: &EdgeMap) -> EdgeMap {
    let mut data = Vec::with_capacity(map.data.len());
    for row in map.data.chunks_exact(map.width) {
        data.extend(row.iter().rev());
    }
    EdgeMap::from_raw(map.width, map.height, data)
}

/// Strict thresholding: 1 where the strength exceeds `threshold`, else 0.
pub fn binarize_at(map: &EdgeMap, threshold: f64) -> EdgeMap {
    let data = map
        .data
        .iter()
        .map(|&s| if s > threshold { 1.0 } else { 0.0 })
        .collect();
    EdgeMap::from_raw(map.width, map.height, data)
}

/// Draw a threshold uniformly from `[0, 0.2]` and binarize against it.
pub fn binarize_random<R: rand::Rng + ?Sized>(map: &EdgeMap, rng: &mut R) -> EdgeMap {
    let threshold = rng.gen_range(0.0..=BINARIZE_MAX_THRESHOLD);
    binarize_at(map, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> EdgeMap {
        EdgeMap::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(EdgeMap::new(1, 1, vec![1.5]).is_err());
        assert!(EdgeMap::new(1, 1, vec![-0.1]).is_err());
        assert!(EdgeMap::new(0, 3, vec![]).is_err());
        assert!(EdgeMap::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn sketch_must_be_binary() {
        assert!(Sketch::new(row(&[0.0, 1.0])).is_ok());
        assert!(Sketch::new(row(&[0.0, 0.5])).is_err());
    }

    #[test]
    fn padding_dimensions_and_mass() {
        let map = EdgeMap::new(10, 10, (0..100).map(|i| i as f64 / 100.0).collect()).unwrap();
        let padded = pad_zeros(&map, 30);
        assert_eq!((padded.width(), padded.height()), (70, 70));
        assert_eq!(padded.sum(), map.sum());
        assert_eq!(padded.get(30, 30), map.get(0, 0));
        assert_eq!(padded.get(39, 39), map.get(9, 9));
        assert_eq!(padded.get(29, 35), 0.0);
        assert_eq!(pad_zeros(&map, 0), map);
    }

    #[test]
    fn mirror_reverses_columns() {
        assert_eq!(mirror(&row(&[0.1, 0.2, 0.3])), row(&[0.3, 0.2, 0.1]));
        let symmetric = row(&[0.4, 0.9, 0.4]);
        assert_eq!(mirror(&symmetric), symmetric);
    }

    #[test]
    fn binarize_is_strict() {
        assert_eq!(binarize_at(&row(&[0.05, 0.3]), 0.1), row(&[0.0, 1.0]));
        assert_eq!(binarize_at(&row(&[0.0, 0.0]), 0.0), row(&[0.0, 0.0]));
        assert_eq!(binarize_at(&row(&[0.1]), 0.1), row(&[0.0]));
    }

    #[test]
    fn random_binarize_zero_map_stays_zero() {
        let zeros = EdgeMap::zeros(5, 4).unwrap();
        let mut rng = seeded(3);
        for _ in 0..20 {
            assert_eq!(binarize_random(&zeros, &mut rng), zeros);
        }
    }

    fn arb_map() -> impl Strategy<Value = EdgeMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |data| EdgeMap::new(w, h, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(map in arb_map()) {
            prop_assert_eq!(mirror(&mirror(&map)), map);
        }

        #[test]
        fn random_binarize_is_binary(map in arb_map(), seed in any::<u64>()) {
            let out = binarize_random(&map, &mut seeded(seed));
            prop_assert!(out.is_binary());
            prop_assert_eq!((out.width(), out.height()), (map.width(), map.height()));
        }
    }
}
