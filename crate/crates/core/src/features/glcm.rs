//! Grey-level co-occurrence matrices averaged over the 8-neighbourhood.

use super::image::GrayImage;
use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 256;

const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    pub levels: usize,
    /// Row-major `levels x levels`.
    pub counts: Vec<f64>,
    pub normalized: bool,
}

impl GlcmMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.levels + j]
    }
}

/// Quantizes `p` in [0, 1] to one of `levels` bins.
pub fn quantize(p: f64, levels: usize) -> usize {
    ((p * levels as f64).floor() as usize).min(levels - 1)
}

/// Co-occurrence matrix over all 8 unit offsets.
///
/// Each directional count matrix covers the in-bounds pixel pairs for that
/// offset; the eight are averaged and the result is normalized to sum 1.
pub fn glcm(img: &GrayImage, levels: usize) -> Result<GlcmMatrix> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "levels must be >= 2, got {levels}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let q: Vec<usize> = img.pixels().iter().map(|&p| quantize(p, levels)).collect();
    let mut counts = vec![0.0; levels * levels];
    for &(dr, dc) in &OFFSETS {
        for r in 0..h {
            let Some(r2) = r.checked_add_signed(dr).filter(|&v| v < h) else {
                continue;
            };
            for c in 0..w {
                let Some(c2) = c.checked_add_signed(dc).filter(|&v| v < w) else {
                    continue;
                };
                counts[q[r * w + c] * levels + q[r2 * w + c2]] += 1.0;
            }
        }
    }
    // Averaging the directional matrices divides by 8, which the
    // normalization below absorbs.
    let total: f64 = counts.iter().sum();
    for c in counts.iter_mut() {
        *c /= total;
    }
    Ok(GlcmMatrix {
        levels,
        counts,
        normalized: true,
    })
}

/// Contrast, homogeneity, energy, correlation and entropy (bits).
pub fn glcm_features(m: &GlcmMatrix) -> Result<[f64; 5]> {
    let sum: f64 = m.counts.iter().sum();
    if !m.normalized || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(sum));
    }
    let n = m.levels;
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = m.get(i, j);
            mu_i += i as f64 * p;
            mu_j += j as f64 * p;
        }
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    let (mut contrast, mut homogeneity, mut energy, mut entropy) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = m.get(i, j);
            if p == 0.0 {
                continue;
            }
            let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
            let diff = i as f64 - j as f64;
            var_i += p * di * di;
            var_j += p * dj * dj;
            cov += p * di * dj;
            contrast += p * diff * diff;
            homogeneity += p / (1.0 + diff * diff);
            energy += p * p;
            entropy -= p * p.log2();
        }
    }
    let correlation = if var_i == 0.0 || var_j == 0.0 {
        0.0
    } else {
        cov / (var_i.sqrt() * var_j.sqrt())
    };
    Ok([contrast, homogeneity, energy, correlation, entropy])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize, px: &[f64]) -> GrayImage {
        GrayImage::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn flat_image_is_one_diagonal_cell() {
        let m = glcm(&image(2, 2, &[0.6; 4]), 4).unwrap();
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.counts.iter().sum::<f64>(), 1.0);
        let f = glcm_features(&m).unwrap();
        assert_eq!(f, [0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn too_small() {
        assert_eq!(
            glcm(&image(1, 1, &[0.0]), 2).unwrap_err(),
            Error::ImageTooSmall {
                width: 1,
                height: 1
            }
        );
        assert!(glcm(&image(3, 1, &[0.0; 3]), 2).is_err());
    }

    #[test]
    fn checkerboard() {
        // 12 ordered neighbour pairs: 8 horizontal/vertical pairs join
        // opposite levels, 4 diagonal pairs join equal levels.
        let m = glcm(&image(2, 2, &[0.0, 1.0, 1.0, 0.0]), 2).unwrap();
        assert_eq!(m.counts, vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]);
        let f = glcm_features(&m).unwrap();
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_matrix_features() {
        let m = GlcmMatrix {
            levels: 2,
            counts: vec![0.25; 4],
            normalized: true,
        };
        let f = glcm_features(&m).unwrap();
        assert_eq!(f[2], 0.25);
        assert_eq!(f[4], 2.0);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn rejects_unnormalized() {
        let m = GlcmMatrix {
            levels: 2,
            counts: vec![1.0; 4],
            normalized: false,
        };
        assert!(matches!(
            glcm_features(&m).unwrap_err(),
            Error::NotNormalized(_)
        ));
    }

    #[test]
    fn quantization_clamps_top_level() {
        assert_eq!(quantize(1.0, 256), 255);
        assert_eq!(quantize(0.0, 256), 0);
        assert_eq!(quantize(0.5, 4), 2);
        assert_eq!(quantize(0.2499, 4), 0);
    }
}
