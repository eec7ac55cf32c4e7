//! 8-bit single-channel rasters in binary PGM (`P5`) form.

use std::path::Path;

use crate::edgemap::EdgeMap;
use crate::error::{Error, Result};

/// A decoded 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} raster",
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Header { bytes, pos: 0 };
        let magic = cursor.token()?;
        match magic.as_str() {
            "P5" => {}
            "P6" | "P3" | "P7" => {
                return Err(Error::Modality(format!(
                    "`{magic}` raster is not single-channel"
                )))
            }
            other => return Err(Error::Decode(format!("unsupported raster magic `{other}`"))),
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Decode(format!(
                "maxval {maxval} is not an 8-bit raster"
            )));
        }
        // exactly one whitespace byte separates the header from the data
        let start = cursor.pos + 1;
        let len = width * height;
        if bytes.len() < start + len {
            return Err(Error::Decode(format!(
                "raster truncated: expected {len} data bytes, found {}",
                bytes.len().saturating_sub(start)
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Decode("raster has a zero dimension".into()));
        }
        Raster::new(width, height, bytes[start..start + len].to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Like [`Raster::encode`], with a `# comment` line after the magic.
    pub fn encode_with_comment(&self, comment: &str) -> Vec<u8> {
        let comment = comment.replace(['\n', '\r'], " ");
        let mut out =
            format!("P5\n# {comment}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// Strengths `pixel / 255`.
    pub fn to_edge_map(&self) -> EdgeMap {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        EdgeMap::from_raw(self.width, self.height, data)
    }

    /// Quantize strengths back to pixels, rounding to nearest.
    pub fn from_edge_map(map: &EdgeMap) -> Self {
        let pixels = map
            .data()
            .iter()
            .map(|&s| (s * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Raster {
            width: map.width(),
            height: map.height(),
            pixels,
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Decode("raster header truncated".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Decode(format!("bad {what} `{tok}` in raster header")))
    }
}

/// Decode an encoded 8-bit grayscale raster straight into an edge map.
pub fn load_edge_map(bytes: &[u8]) -> Result<EdgeMap> {
    Ok(Raster::decode(bytes)?.to_edge_map())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
        Raster::new(width, height, pixels.to_vec())
            .unwrap()
            .encode()
    }

    #[test]
    fn header_comments_round_trip() {
        let r = Raster::new(2, 1, vec![7, 200]).unwrap();
        assert_eq!(
            Raster::decode(&r.encode_with_comment("config_hash=00ff")).unwrap(),
            r
        );
    }

    #[test]
    fn pixel_scale_endpoints_and_midpoint() {
        let map = load_edge_map(&pgm(3, 1, &[255, 0, 128])).unwrap();
        assert_eq!(map.get(0, 0), 1.0);
        assert_eq!(map.get(1, 0), 0.0);
        assert_eq!(map.get(2, 0), 128.0 / 255.0);
        assert!((map.get(2, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        let raster = Raster::decode(&bytes).unwrap();
        assert_eq!((raster.width, raster.height), (2, 1));
        assert_eq!(raster.pixels, vec![10, 20]);
    }

    #[test]
    fn color_raster_is_a_modality_error() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(Raster::decode(&bytes), Err(Error::Modality(_))));
    }

    #[test]
    fn truncated_or_garbage_is_a_decode_error() {
        let mut bytes = pgm(4, 4, &[0; 16]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Raster::decode(&bytes), Err(Error::Decode(_))));
        assert!(matches!(Raster::decode(b"hello"), Err(Error::Decode(_))));
        assert!(matches!(Raster::decode(b""), Err(Error::Decode(_))));
    }

    #[test]
    fn dimensions_preserved_through_round_trip() {
        let pixels: Vec<u8> = (0..=255).collect();
        let raster = Raster::new(16, 16, pixels).unwrap();
        let map = raster.to_edge_map();
        assert_eq!((map.width(), map.height()), (16, 16));
        assert_eq!(Raster::from_edge_map(&map), raster);
    }
}
