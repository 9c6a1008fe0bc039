//! Image quality metrics on permittivity maps.

use crate::config::PermittivityMap;
use crate::error::{Error, Result};

/// Standard deviation of the SSIM Gaussian window.
pub const SSIM_SIGMA: f64 = 1.5;
/// Side of the SSIM window on images that are large enough.
pub const SSIM_WINDOW: usize = 11;

/// Window side used on a `rows × cols` image: [`SSIM_WINDOW`], or the largest
/// odd size that still fits.
pub fn ssim_window_size(rows: usize, cols: usize) -> usize {
    let fit = rows.min(cols);
    let fit = if fit % 2 == 0 { fit.saturating_sub(1) } else { fit };
    SSIM_WINDOW.min(fit).max(1)
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Gaussian-weighted local means over every fully contained window position
/// ("valid" filtering), separably.
fn local_mean(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (or, oc) = (rows - w + 1, cols - w + 1);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            horiz[r * oc + c] = taps.iter().enumerate().map(|(k, t)| t * img[r * cols + c + k]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = taps.iter().enumerate().map(|(k, t)| t * horiz[(r + k) * oc + c]).sum();
        }
    }
    out
}

/// SSIM constants `(C1, C2) = ((0.01 R)², (0.03 R)²)`.
pub fn ssim_constants(data_range: f64) -> (f64, f64) {
    ((0.01 * data_range).powi(2), (0.03 * data_range).powi(2))
}

/// Mean structural similarity of two row-major images.
pub fn ssim(a: &[f64], b: &[f64], rows: usize, cols: usize, data_range: f64) -> Result<f64> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::Dimension(format!("ssim: images of {} and {} pixels, expected {}", a.len(), b.len(), rows * cols)));
    }
    if !(data_range > 0.0) || !data_range.is_finite() {
        return Err(Error::Domain(format!("ssim: data range {data_range} must be positive")));
    }
    let taps = gaussian_taps(ssim_window_size(rows, cols), SSIM_SIGMA);
    let (c1, c2) = ssim_constants(data_range);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = local_mean(a, rows, cols, &taps);
    let mu_b = local_mean(b, rows, cols, &taps);
    let aa = local_mean(&sq(a, a), rows, cols, &taps);
    let bb = local_mean(&sq(b, b), rows, cols, &taps);
    let ab = local_mean(&sq(a, b), rows, cols, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// `sqrt(mean |pred - truth|²)` over the cells.
pub fn rmse(pred: &PermittivityMap, truth: &PermittivityMap) -> f64 {
    assert_eq!(pred.values.len(), truth.values.len(), "rmse: maps differ in size");
    let s: f64 = pred.values.iter().zip(&truth.values).map(|(p, t)| (p - t).norm_sqr()).sum();
    (s / pred.values.len() as f64).sqrt()
}

/// `(SSIM, RMSE)` of a reconstruction. SSIM is taken on the real parts with
/// the data range of the true image.
pub fn metrics(pred: &PermittivityMap, truth: &PermittivityMap) -> Result<(f64, f64)> {
    if pred.n != truth.n {
        return Err(Error::Dimension(format!("metrics: {0}x{0} vs {1}x{1} maps", pred.n, truth.n)));
    }
    let t = truth.real();
    let range = t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min);
    let s = ssim(&pred.real(), &t, pred.n, pred.n, range)?;
    Ok((s, rmse(pred, truth)))
}
