use std::f64::consts::SQRT_2;

use crate::edgemap::{mirror, EdgeMap};
use crate::error::{Error, Result};

/// Rescaling factors of the five-scale pyramid, ascending.
pub const PYRAMID_FACTORS: [f64; 5] = [0.5, 1.0 / SQRT_2, 1.0, SQRT_2, 2.0];

/// `floor(x + 0.5)`, never below 1.
pub fn round_half_up(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

/// Bilinear resampling to an explicit size, with pixel centres aligned
/// (`src = (dst + 0.5) * scale - 0.5`). Output strengths are clamped to `[0, 1]`.
pub fn resize(map: &EdgeMap, width: usize, height: usize) -> EdgeMap {
    assert!(width >= 1 && height >= 1);
    if width == map.width() && height == map.height() {
        return map.clone();
    }
    let sx = map.width() as f64 / width as f64;
    let sy = map.height() as f64 / height as f64;
    let columns = column_table(width, sx, map.width());
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, sy, map.height());
        for &(x0, x1, wl, wr) in &columns {
            let top = map.get(x0, y0) * wl + map.get(x1, y0) * wr;
            let bottom = map.get(x0, y1) * wl + map.get(x1, y1) * wr;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    EdgeMap::from_raw(width, height, data)
}

fn sample_axis(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

/// Horizontal taps `(left, right, left_weight, right_weight)` per output
/// column. The right half is the reflection of the left half, so resizing
/// commutes exactly with [`mirror`].
fn column_table(width: usize, scale: f64, len: usize) -> Vec<(usize, usize, f64, f64)> {
    let mut cols = vec![(0, 0, 1.0, 0.0); width];
    for x in 0..width / 2 {
        let (i0, i1, f) = sample_axis(x, scale, len);
        cols[x] = (i0, i1, 1.0 - f, f);
        cols[width - 1 - x] = (len - 1 - i1, len - 1 - i0, f, 1.0 - f);
    }
    if width % 2 == 1 {
        cols[width / 2] = if len % 2 == 1 {
            (len / 2, len / 2, 1.0, 0.0)
        } else {
            (len / 2 - 1, len / 2, 0.5, 0.5)
        };
    }
    cols
}

/// Rescale so the longer side is exactly `target`, keeping the aspect ratio.
/// Smaller inputs are upscaled.
pub fn resize_max_side(map: &EdgeMap, target: usize) -> EdgeMap {
    assert!(target >= 1, "target side must be positive");
    let (w, h) = (map.width(), map.height());
    let (nw, nh) = if w >= h {
        (
            target,
            round_half_up((h * target) as f64 / w as f64).min(target),
        )
    } else {
        (
            round_half_up((w * target) as f64 / h as f64).min(target),
            target,
        )
    };
    resize(map, nw, nh)
}

/// The ten instances of the multi-scale representation: each pyramid factor
/// in ascending order, the original immediately followed by its mirror.
pub fn scale_pyramid(map: &EdgeMap) -> Result<Vec<EdgeMap>> {
    let mut out = Vec::with_capacity(2 * PYRAMID_FACTORS.len());
    for &factor in &PYRAMID_FACTORS {
        let fw = map.width() as f64 * factor;
        let fh = map.height() as f64 * factor;
        if (fw + 0.5).floor() < 1.0 || (fh + 0.5).floor() < 1.0 {
            return Err(Error::Degenerate(format!(
                "{}x{} map vanishes at scale {factor:.4}",
                map.width(),
                map.height()
            )));
        }
        let scaled = resize(map, round_half_up(fw), round_half_up(fh));
        let flipped = mirror(&scaled);
        out.push(scaled);
        out.push(flipped);
    }
    Ok(out)
}
