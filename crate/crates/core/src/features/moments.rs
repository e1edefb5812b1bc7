use super::image::GrayImage;
use crate::error::{Error, Result};

/// Mean, population standard deviation, skewness and (non-excess) kurtosis
/// of the pixel intensities, in that order.
///
/// Skewness is `m3 / m2^1.5` and kurtosis `m4 / m2^2` over central moments;
/// both are 0 for a constant image.
pub fn zero_order_stats(img: &GrayImage) -> Result<[f64; 4]> {
    let px = img.pixels();
    if px.is_empty() {
        return Err(Error::EmptyImage);
    }
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &p in px {
        let d = p - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Ok([mean, 0.0, 0.0, 0.0]);
    }
    Ok([mean, m2.sqrt(), m3 / m2.powf(1.5), m4 / (m2 * m2)])
}
