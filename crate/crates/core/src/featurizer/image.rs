//! Perceptual image statistics from raw RGB: Rec.601 brightness,
//! Hasler-Suesstrunk colorfulness, and McCamy correlated color temperature.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageStats {
    /// Mean luminance, in [0, 255].
    pub brightness: f64,
    pub colorfulness: f64,
    /// Kelvin, always positive.
    pub color_temperature: f64,
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// McCamy's cubic approximation from CIE 1931 xy chromaticity.
fn mccamy_cct(x: f64, y: f64) -> f64 {
    let n = (x - 0.3320) / (0.1858 - y);
    449.0 * n.powi(3) + 3525.0 * n.powi(2) + 6823.3 * n + 5520.33
}

const D65_XY: (f64, f64) = (0.3127, 0.3290);

/// `rgb` is flattened 8-bit triplets, row order irrelevant.
pub fn image_stats(rgb: &[u8]) -> Result<ImageStats> {
    if rgb.is_empty() || rgb.len() % 3 != 0 {
        return Err(Error::Data(format!(
            "image must be a nonempty flattened RGB triplet array, got {} bytes",
            rgb.len()
        )));
    }
    let n = (rgb.len() / 3) as f64;
    let mut lum_sum = 0.0;
    let (mut r_sum, mut g_sum, mut b_sum) = (0.0, 0.0, 0.0);
    let (mut rg_sum, mut rg_sq, mut yb_sum, mut yb_sq) = (0.0, 0.0, 0.0, 0.0);
    for px in rgb.chunks_exact(3) {
        let (r, g, b) = (f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        lum_sum += 0.299 * r + 0.587 * g + 0.114 * b;
        r_sum += r;
        g_sum += g;
        b_sum += b;
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        rg_sum += rg;
        rg_sq += rg * rg;
        yb_sum += yb;
        yb_sq += yb * yb;
    }
    let mean_rg = rg_sum / n;
    let mean_yb = yb_sum / n;
    let var_rg = (rg_sq / n - mean_rg * mean_rg).max(0.0);
    let var_yb = (yb_sq / n - mean_yb * mean_yb).max(0.0);
    let colorfulness =
        (var_rg + var_yb).sqrt() + 0.3 * (mean_rg * mean_rg + mean_yb * mean_yb).sqrt();

    // mean sRGB -> linear -> XYZ (D65) -> xy chromaticity
    let rl = srgb_to_linear(r_sum / n / 255.0);
    let gl = srgb_to_linear(g_sum / n / 255.0);
    let bl = srgb_to_linear(b_sum / n / 255.0);
    let xx = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let yy = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let zz = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    let sum = xx + yy + zz;
    let (x, y) = if sum > 1e-12 { (xx / sum, yy / sum) } else { D65_XY };
    // the McCamy pole at y = 0.1858 sits far outside natural image chromaticities
    let cct = if (0.1858 - y).abs() < 1e-6 { mccamy_cct(D65_XY.0, D65_XY.1) } else { mccamy_cct(x, y) };

    Ok(ImageStats {
        brightness: lum_sum / n,
        colorfulness,
        color_temperature: cct.max(1.0),
    })
}
