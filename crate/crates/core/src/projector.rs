//! 2D parallel-beam line-integral projector.
//!
//! Rays are traced with Joseph's method: the ray is sampled once per pixel
//! row (or column, whichever axis it crosses faster) and the image is
//! linearly interpolated between the two nearest pixel centers, each sample
//! weighted by the path length per step. The back projector visits exactly
//! the same (pixel, weight) pairs, so it is the exact transpose.
//!
//! Conventions: pixel `(col, row)` has its center at
//! `x = col - (W - 1) / 2`, `y = (H - 1) / 2 - row`. Detector bin `d` sits at
//! `s = (d - (n_detectors - 1) / 2) * spacing` and the ray for angle `theta`
//! is the line `x cos(theta) + y sin(theta) = s`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, ImageGrid};
use crate::kv;

/// Largest grid (in pixels) for which a dense system matrix is built.
pub const DENSE_PIXEL_LIMIT: usize = 4096;

/// Angles per back-projection work unit; partial images are summed in
/// unit order so the result does not depend on the thread count.
const BACKPROJECT_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    n_detectors: usize,
    detector_spacing: f64,
    image_width: usize,
    image_height: usize,
}

impl ScanGeometry {
    pub fn new(
        image_width: usize,
        image_height: usize,
        angles: Vec<f64>,
        n_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        if image_width == 0 || image_height == 0 {
            return Err(Error::Geometry("image dimensions must be positive".into()));
        }
        if angles.is_empty() {
            return Err(Error::Geometry("at least one angle is required".into()));
        }
        for (i, &a) in angles.iter().enumerate() {
            if !(0.0..PI).contains(&a) {
                return Err(Error::Geometry(format!("angle {a} at index {i} outside [0, pi)")));
            }
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Geometry("angles must be strictly increasing".into()));
        }
        if !(detector_spacing.is_finite() && detector_spacing > 0.0) {
            return Err(Error::Geometry(format!(
                "detector spacing must be positive, got {detector_spacing}"
            )));
        }
        let min_detectors = Self::covering_detectors(image_width, image_height);
        if n_detectors < min_detectors {
            return Err(Error::Geometry(format!(
                "{n_detectors} detectors cannot cover a {image_width}x{image_height} image \
                 (need at least {min_detectors})"
            )));
        }
        Ok(ScanGeometry {
            angles,
            n_detectors,
            detector_spacing,
            image_width,
            image_height,
        })
    }

    /// `ceil(hypot(width, height))`, the smallest admissible detector count.
    pub fn covering_detectors(width: usize, height: usize) -> usize {
        (width as f64).hypot(height as f64).ceil() as usize
    }

    /// `n_angles` equally spaced views over `[0, pi)` with unit detector
    /// spacing and the minimal covering detector count.
    pub fn parallel(width: usize, height: usize, n_angles: usize) -> Result<Self> {
        let angles = (0..n_angles).map(|i| i as f64 * PI / n_angles as f64).collect();
        Self::new(width, height, angles, Self::covering_detectors(width, height), 1.0)
    }

    /// A sparse acquisition: `n_views` angles taken evenly from a dense set of
    /// `dense_views` equally spaced angles over `[0, pi)`.
    pub fn sparse_subset(width: usize, height: usize, dense_views: usize, n_views: usize) -> Result<Self> {
        if n_views == 0 || n_views > dense_views {
            return Err(Error::Geometry(format!(
                "cannot take {n_views} views from {dense_views}"
            )));
        }
        let angles = (0..n_views)
            .map(|i| {
                let idx = i * dense_views / n_views;
                idx as f64 * PI / dense_views as f64
            })
            .collect();
        Self::new(width, height, angles, Self::covering_detectors(width, height), 1.0)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }

    pub fn n_rays(&self) -> usize {
        self.angles.len() * self.n_detectors
    }

    pub fn n_pixels(&self) -> usize {
        self.image_width * self.image_height
    }

    pub fn check_image(&self, image: &ImageGrid) -> Result<()> {
        if image.width() != self.image_width || image.height() != self.image_height {
            return Err(Error::Geometry(format!(
                "image is {}x{} but geometry expects {}x{}",
                image.width(),
                image.height(),
                self.image_width,
                self.image_height
            )));
        }
        Ok(())
    }

    /// Visits every nonzero `(pixel index, weight)` of one ray in traversal order.
    pub fn for_each_ray_weight(&self, angle_idx: usize, detector: usize, mut f: impl FnMut(usize, f64)) {
        let theta = self.angles[angle_idx];
        let (sin, cos) = theta.sin_cos();
        let s = (detector as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing;
        let w = self.image_width;
        let h = self.image_height;
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        if cos.abs() >= sin.abs() {
            let step = 1.0 / cos.abs();
            // u = a + b * row must stay inside (-1, w).
            let rows = touched_range((s - cy * sin) / cos + cx, sin / cos, w, h);
            for row in rows {
                let y = cy - row as f64;
                let u = (s - y * sin) / cos + cx;
                interpolate(u, w, |col, frac| f(row * w + col, frac * step));
            }
        } else {
            let step = 1.0 / sin.abs();
            let cols = touched_range(cy - (s + cx * cos) / sin, cos / sin, h, w);
            for col in cols {
                let x = col as f64 - cx;
                let v = cy - (s - x * cos) / sin;
                interpolate(v, h, |row, frac| f(row * w + col, frac * step));
            }
        }
    }

    pub(crate) fn write_sidecar(&self) -> kv::Writer {
        let mut out = kv::Writer::new();
        out.comment("parallel-beam scan geometry")
            .entry("image_width", self.image_width)
            .entry("image_height", self.image_height)
            .entry("n_detectors", self.n_detectors)
            .entry("detector_spacing", self.detector_spacing);
        let angles: Vec<String> = self.angles.iter().map(|a| format!("{a:?}")).collect();
        out.entry("angles", angles.join(","));
        out
    }

    pub(crate) fn from_sidecar(entries: &[kv::Entry]) -> Result<Self> {
        let known = ["image_width", "image_height", "n_detectors", "detector_spacing", "angles"];
        if let Some(e) = entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            return Err(Error::UnknownKey {
                line: e.line,
                key: e.key.clone(),
            });
        }
        Self::new(
            kv::require(entries, "image_width")?.parse()?,
            kv::require(entries, "image_height")?.parse()?,
            kv::require(entries, "angles")?.parse_list()?,
            kv::require(entries, "n_detectors")?.parse()?,
            kv::require(entries, "detector_spacing")?.parse()?,
        )
    }
}

/// Splits a fractional index into the two neighboring samples inside `[0, n)`.
#[inline]
/// Steps `i` in `0..count` for which `a + b * i` may fall inside `(-1, n)`,
/// padded by one on each side.
fn touched_range(a: f64, b: f64, n: usize, count: usize) -> std::ops::Range<usize> {
    if b == 0.0 {
        return if a > -1.0 && a < n as f64 { 0..count } else { 0..0 };
    }
    let t0 = (-1.0 - a) / b;
    let t1 = (n as f64 - a) / b;
    let lo = (t0.min(t1).floor() - 1.0).max(0.0);
    let hi = (t0.max(t1).ceil() + 2.0).min(count as f64);
    if hi <= lo {
        0..0
    } else {
        lo as usize..hi as usize
    }
}

fn interpolate(pos: f64, n: usize, mut f: impl FnMut(usize, f64)) {
    let base = pos.floor();
    let frac = pos - base;
    let i0 = base as i64;
    if i0 >= 0 && (i0 as usize) < n && frac < 1.0 {
        f(i0 as usize, 1.0 - frac);
    }
    let i1 = i0 + 1;
    if i1 >= 0 && (i1 as usize) < n && frac > 0.0 {
        f(i1 as usize, frac);
    }
}

/// Projection data: one row per angle, one column per detector bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: ScanGeometry,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: ScanGeometry, data: Vec<f64>) -> Result<Self> {
        let expected = geometry.n_rays();
        if data.len() != expected {
            return Err(Error::Length {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sinogram contains non-finite values".into()));
        }
        Ok(Sinogram { geometry, data })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        let data = vec![0.0; geometry.n_rays()];
        Sinogram { geometry, data }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, angle_idx: usize) -> &[f64] {
        let n = self.geometry.n_detectors;
        &self.data[angle_idx * n..(angle_idx + 1) * n]
    }

    /// Same geometry, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.geometry.clone(), data)
    }

    pub fn norm(&self) -> f64 {
        grid::norm(&self.data)
    }

    /// The sample block as a raster (width = detectors, height = angles).
    pub fn to_raster(&self) -> ImageGrid {
        ImageGrid::new(self.geometry.n_detectors, self.geometry.n_angles(), self.data.clone())
            .expect("sinogram samples are finite")
    }

    /// Writes `<stem>.tpr` and its geometry sidecar `<stem>.geom`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        grid::save_raster(&self.to_raster(), dir.join(format!("{stem}.tpr")))?;
        self.geometry.write_sidecar().write(dir.join(format!("{stem}.geom")))
    }

    pub fn load(raster: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let geometry = ScanGeometry::from_sidecar(&kv::read(sidecar)?)?;
        let image = grid::load_raster(raster)?;
        if image.width() != geometry.n_detectors || image.height() != geometry.n_angles() {
            return Err(Error::Geometry(format!(
                "sinogram raster is {}x{} but sidecar declares {} detectors x {} angles",
                image.width(),
                image.height(),
                geometry.n_detectors,
                geometry.n_angles()
            )));
        }
        Sinogram::new(geometry, image.into_data())
    }
}

/// Applies the measurement map: line integrals of `image` along every ray.
pub fn forward_project(image: &ImageGrid, geom: &ScanGeometry) -> Result<Sinogram> {
    geom.check_image(image)?;
    let n_det = geom.n_detectors;
    let pixels = image.data();
    let mut data = vec![0.0; geom.n_rays()];
    data.par_chunks_mut(n_det).enumerate().for_each(|(a, row)| {
        for (d, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            geom.for_each_ray_weight(a, d, |p, w| acc += w * pixels[p]);
            *out = acc;
        }
    });
    Sinogram::new(geom.clone(), data)
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(sino: &Sinogram) -> ImageGrid {
    let geom = &sino.geometry;
    let data = back_project_rows(geom, 0..geom.n_angles(), |a| sino.row(a));
    ImageGrid::new(geom.image_width, geom.image_height, data).expect("finite back projection")
}

/// Back-projects the given angle rows; `row_of(a)` supplies the samples for angle `a`.
pub(crate) fn back_project_rows<'a>(
    geom: &ScanGeometry,
    angles: std::ops::Range<usize>,
    row_of: impl Fn(usize) -> &'a [f64] + Sync,
) -> Vec<f64> {
    let n_pix = geom.n_pixels();
    let starts: Vec<usize> = angles.clone().step_by(BACKPROJECT_CHUNK).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + BACKPROJECT_CHUNK).min(angles.end);
            let mut acc = vec![0.0; n_pix];
            for a in start..end {
                let row = row_of(a);
                for (d, &sample) in row.iter().enumerate() {
                    if sample != 0.0 {
                        geom.for_each_ray_weight(a, d, |p, w| acc[p] += w * sample);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n_pix];
    for part in &partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

/// Line integrals of one angle only, written into `out` (length `n_detectors`).
pub(crate) fn project_angle(pixels: &[f64], geom: &ScanGeometry, angle_idx: usize, out: &mut [f64]) {
    for (d, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        geom.for_each_ray_weight(angle_idx, d, |p, w| acc += w * pixels[p]);
        *o = acc;
    }
}

/// Accumulates the back projection of one angle's samples into `acc`.
pub(crate) fn back_project_angle(row: &[f64], geom: &ScanGeometry, angle_idx: usize, acc: &mut [f64]) {
    for (d, &sample) in row.iter().enumerate() {
        if sample != 0.0 {
            geom.for_each_ray_weight(angle_idx, d, |p, w| acc[p] += w * sample);
        }
    }
}

/// Materializes the projector as a dense matrix (rows = rays in angle-major
/// order, columns = pixels in row-major order). Oracle use only.
pub fn dense_system_matrix(geom: &ScanGeometry) -> Result<DMatrix<f64>> {
    let n_pix = geom.n_pixels();
    if n_pix > DENSE_PIXEL_LIMIT {
        return Err(Error::Size(format!(
            "{n_pix} pixels exceeds the dense-matrix limit of {DENSE_PIXEL_LIMIT}"
        )));
    }
    let mut m = DMatrix::zeros(geom.n_rays(), n_pix);
    for a in 0..geom.n_angles() {
        for d in 0..geom.n_detectors {
            let r = a * geom.n_detectors + d;
            geom.for_each_ray_weight(a, d, |p, w| m[(r, p)] += w);
        }
    }
    Ok(m)
}

/// Largest singular value of the projector, by power iteration on `PᵀP`.
pub fn estimate_spectral_norm(geom: &ScanGeometry, iterations: usize) -> f64 {
    // Deterministic, non-symmetric start so no eigenvector is missed by symmetry.
    let n = geom.n_pixels();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut sigma_sq = 0.0;
    for _ in 0..iterations.max(1) {
        let nv = grid::norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let img = ImageGrid::new(geom.image_width, geom.image_height, v).expect("finite iterate");
        let sino = forward_project(&img, geom).expect("matching geometry");
        let next = back_project(&sino).into_data();
        sigma_sq = grid::dot(&next, img.data());
        v = next;
    }
    sigma_sq.max(0.0).sqrt()
}
