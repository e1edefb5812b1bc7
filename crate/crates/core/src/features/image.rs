use crate::error::{Error, Result};

/// A single-channel image with intensities normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from raw integer samples of the given bit depth.
    pub fn from_levels(width: usize, height: usize, raw: &[u16], bit_depth: u32) -> Result<Self> {
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidImage(format!(
                "unsupported bit depth {bit_depth}"
            )));
        }
        let max = ((1u32 << bit_depth) - 1) as f64;
        let pixels = raw
            .iter()
            .map(|&v| {
                if v as f64 > max {
                    Err(Error::InvalidImage(format!(
                        "sample {v} exceeds {bit_depth}-bit range"
                    )))
                } else {
                    Ok(v as f64 / max)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, pixels)
    }

    /// Decodes a binary PGM (`P5`). Samples above 255 are 16-bit big-endian.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::InvalidImage("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(Error::InvalidImage("not a binary PGM (P5)".into()));
        }
        let mut number = |what: &str| -> Result<usize> {
            token()?
                .parse()
                .map_err(|_| Error::InvalidImage(format!("bad PGM {what}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if !(1..=65535).contains(&maxval) {
            return Err(Error::InvalidImage(format!("bad PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let data = &bytes[(pos + 1).min(bytes.len())..];
        let n = width * height;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if data.len() < need {
            return Err(Error::InvalidImage(format!(
                "PGM raster has {} bytes, expected {need}",
                data.len()
            )));
        }
        let raw: Vec<u16> = if wide {
            data[..need]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            data[..n].iter().map(|&b| b as u16).collect()
        };
        let max = maxval as f64;
        let pixels = raw
            .iter()
            .map(|&v| {
                if v as usize > maxval {
                    Err(Error::InvalidImage(format!(
                        "sample {v} exceeds maxval {maxval}"
                    )))
                } else {
                    Ok(v as f64 / max)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, pixels)
    }

    /// Decodes a headerless raster: 8-bit samples, or 16-bit little-endian.
    pub fn from_raw(bytes: &[u8], width: usize, height: usize, bit_depth: u32) -> Result<Self> {
        let n = width * height;
        let raw: Vec<u16> = match bit_depth {
            1..=8 => {
                if bytes.len() != n {
                    return Err(Error::InvalidImage(format!(
                        "raw data has {} bytes, expected {n}",
                        bytes.len()
                    )));
                }
                bytes.iter().map(|&b| b as u16).collect()
            }
            9..=16 => {
                if bytes.len() != 2 * n {
                    return Err(Error::InvalidImage(format!(
                        "raw data has {} bytes, expected {}",
                        bytes.len(),
                        2 * n
                    )));
                }
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect()
            }
            other => {
                return Err(Error::InvalidImage(format!(
                    "unsupported bit depth {other}"
                )))
            }
        };
        Self::from_levels(width, height, &raw, bit_depth)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}
