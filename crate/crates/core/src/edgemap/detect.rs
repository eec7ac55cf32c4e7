use crate::edgemap::{EdgeMap, Raster};
use crate::error::{Error, Result};

/// Sobel gradient magnitude, normalized so the strongest response is 1.
///
/// A stand-in for a proper learned edge detector; borders replicate the
/// nearest pixel so a constant image has no response anywhere.
pub fn detect_edges_fallback(image: &Raster) -> Result<EdgeMap> {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 || image.pixels.len() != w * h {
        return Err(Error::Dimension(format!(
            "cannot detect edges on a {w}x{h} raster"
        )));
    }
    let px = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        f64::from(image.pixels[cy * w + cx])
    };
    let mut magnitude = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            magnitude[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    let peak = magnitude.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for m in &mut magnitude {
            *m = (*m / peak).min(1.0);
        }
    }
    Ok(EdgeMap::from_raw(w, h, magnitude))
}
