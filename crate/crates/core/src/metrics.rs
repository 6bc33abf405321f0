//! Image-quality metrics over whole images or regions of interest.

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RegionOfInterest};
use crate::smooth::{blur, gaussian_kernel};

pub const SSIM_SIGMA: f64 = 1.5;
/// 11x11 window support.
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &ImageGrid, b: &ImageGrid, roi: Option<&RegionOfInterest>) -> Result<()> {
    a.check_shape(b, "metric").map_err(|e| Error::Metric(e.to_string()))?;
    if let Some(r) = roi {
        r.check_within(a.width(), a.height())?;
    }
    Ok(())
}

/// Dynamic range of both images together.
pub fn pooled_range(a: &ImageGrid, b: &ImageGrid) -> f64 {
    a.max().max(b.max()) - a.min().min(b.min())
}

/// Per-pixel SSIM map.
///
/// Local statistics use a Gaussian window (sigma 1.5, 11x11) truncated at the
/// image border and renormalized over the in-bounds taps, so every pixel has
/// a value. Stability constants come from the pooled dynamic range.
pub fn ssim_map(a: &ImageGrid, b: &ImageGrid) -> Result<ImageGrid> {
    check_pair(a, b, None)?;
    let range = pooled_range(a, b);
    if range == 0.0 {
        // Both images are the same constant.
        return Ok(ImageGrid::filled(a.width(), a.height(), 1.0));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let (w, h) = (a.width(), a.height());
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_RADIUS);
    let local = |v: &[f64]| blur(v, w, h, &kernel);

    let mu_a = local(a.data());
    let mu_b = local(b.data());
    let aa: Vec<f64> = a.data().iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data().iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let e_aa = local(&aa);
    let e_bb = local(&bb);
    let e_ab = local(&ab);

    let map = (0..a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .collect();
    ImageGrid::new(w, h, map).map_err(|e| Error::Metric(e.to_string()))
}

/// Mean SSIM over the region (whole image when `roi` is `None`).
pub fn ssim(a: &ImageGrid, b: &ImageGrid, roi: Option<&RegionOfInterest>) -> Result<f64> {
    check_pair(a, b, roi)?;
    let map = ssim_map(a, b)?;
    Ok(region_mean(&map, roi))
}

pub fn rmse(a: &ImageGrid, b: &ImageGrid, roi: Option<&RegionOfInterest>) -> Result<f64> {
    check_pair(a, b, roi)?;
    let sq = ImageGrid::new(
        a.width(),
        a.height(),
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).collect(),
    )?;
    Ok(region_mean(&sq, roi).sqrt())
}

/// Mean of `image` over `roi` (assumed in bounds) or the whole image.
pub fn region_mean(image: &ImageGrid, roi: Option<&RegionOfInterest>) -> f64 {
    let full = RegionOfInterest::full(image);
    let r = roi.unwrap_or(&full);
    let mut sum = 0.0;
    for row in r.y0..r.y0 + r.h {
        for col in r.x0..r.x0 + r.w {
            sum += image.get(col, row);
        }
    }
    sum / r.area() as f64
}

/// Mean over every pixel covered by any of `regions`.
pub fn union_mean(image: &ImageGrid, regions: &[RegionOfInterest]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..image.height() {
        for col in 0..image.width() {
            if regions.iter().any(|r| r.contains(col, row)) {
                sum += image.get(col, row);
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Mean over every pixel outside all of `regions`.
pub fn complement_mean(image: &ImageGrid, regions: &[RegionOfInterest]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..image.height() {
        for col in 0..image.width() {
            if !regions.iter().any(|r| r.contains(col, row)) {
                sum += image.get(col, row);
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}
