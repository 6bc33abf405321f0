//! Synthetic longitudinal datasets: a base specimen, `L` template variants and
//! one test variant carrying localized changes.
//!
//! Shapes are specified in pixel coordinates (pixel `(c, r)` covers
//! `[c, c + 1) x [r, r + 1)`) and rasterized with 4x4 subpixel sampling.
//! Values are additive, so a defect with a negative delta removes material.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RegionOfInterest};
use crate::prior::TemplateSet;

const SUBSAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, w: f64, h: f64 },
    /// Semi-axes `ax`, `ay`, rotated counter-clockwise by `angle` degrees.
    Ellipse { cx: f64, cy: f64, ax: f64, ay: f64, angle: f64 },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, w, h } => x >= x0 && x < x0 + w && y >= y0 && y < y0 + h,
            Shape::Ellipse { cx, cy, ax, ay, angle } => {
                let (s, c) = angle.to_radians().sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
            }
        }
    }

    /// Axis-aligned bounds `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rect { x0, y0, w, h } => (x0, y0, x0 + w, y0 + h),
            Shape::Ellipse { cx, cy, ax, ay, angle } => {
                let (s, c) = angle.to_radians().sin_cos();
                let hx = ((ax * c).powi(2) + (ay * s).powi(2)).sqrt();
                let hy = ((ax * s).powi(2) + (ay * c).powi(2)).sqrt();
                (cx - hx, cy - hy, cx + hx, cy + hy)
            }
        }
    }

    fn validate(&self, size: usize) -> Result<()> {
        let ok = match *self {
            Shape::Disk { r, .. } => r > 0.0,
            Shape::Rect { w, h, .. } => w > 0.0 && h > 0.0,
            Shape::Ellipse { ax, ay, .. } => ax > 0.0 && ay > 0.0,
        };
        if !ok {
            return Err(Error::Validation(format!("{self} has non-positive extent")));
        }
        let (x0, y0, x1, y1) = self.bounds();
        let s = size as f64;
        if x0 < 0.0 || y0 < 0.0 || x1 > s || y1 > s || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("{self} lies outside the {size}x{size} grid")));
        }
        Ok(())
    }

    /// Pixel rectangle covering every pixel the shape can touch.
    pub fn pixel_bounds(&self, size: usize) -> RegionOfInterest {
        let (x0, y0, x1, y1) = self.bounds();
        let c0 = x0.floor().max(0.0) as usize;
        let r0 = y0.floor().max(0.0) as usize;
        let c1 = (x1.ceil() as usize).min(size).max(c0 + 1);
        let r1 = (y1.ceil() as usize).min(size).max(r0 + 1);
        RegionOfInterest {
            x0: c0,
            y0: r0,
            w: c1 - c0,
            h: r1 - r0,
        }
    }

    /// Fraction of each pixel covered, accumulated as `value * coverage` into `out`.
    fn paint(&self, value: f64, size: usize, out: &mut [f64]) {
        let b = self.pixel_bounds(size);
        let n = SUBSAMPLES as f64;
        for row in b.y0..b.y0 + b.h {
            for col in b.x0..b.x0 + b.w {
                let mut hits = 0usize;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let x = col as f64 + (sx as f64 + 0.5) / n;
                        let y = row as f64 + (sy as f64 + 0.5) / n;
                        if self.contains(x, y) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    out[row * size + col] += value * hits as f64 / (n * n);
                }
            }
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Disk { cx, cy, r } => write!(f, "disk {cx} {cy} {r}"),
            Shape::Rect { x0, y0, w, h } => write!(f, "rect {x0} {y0} {w} {h}"),
            Shape::Ellipse { cx, cy, ax, ay, angle } => write!(f, "ellipse {cx} {cy} {ax} {ay} {angle}"),
        }
    }
}

/// A shape with an additive value: `disk cx cy r V`, `rect x0 y0 w h V` or
/// `ellipse cx cy ax ay angle_deg V`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub shape: Shape,
    pub value: f64,
}

impl Feature {
    pub fn new(shape: Shape, value: f64) -> Self {
        Feature { shape, value }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.shape, self.value)
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::Validation("empty shape".into()))?;
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| Error::Validation(format!("bad number `{p}` in `{s}`"))))
            .collect::<Result<_>>()?;
        let expect = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::Validation(format!("`{kind}` takes {n} numbers, got {} in `{s}`", nums.len())))
            }
        };
        let (shape, value) = match kind {
            "disk" => {
                expect(4)?;
                (Shape::Disk { cx: nums[0], cy: nums[1], r: nums[2] }, nums[3])
            }
            "rect" => {
                expect(5)?;
                (Shape::Rect { x0: nums[0], y0: nums[1], w: nums[2], h: nums[3] }, nums[4])
            }
            "ellipse" => {
                expect(6)?;
                (
                    Shape::Ellipse { cx: nums[0], cy: nums[1], ax: nums[2], ay: nums[3], angle: nums[4] },
                    nums[5],
                )
            }
            other => return Err(Error::Validation(format!("unknown shape `{other}`"))),
        };
        Ok(Feature { shape, value })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalSpec {
    pub size: usize,
    pub base: Vec<Feature>,
    /// One defect list per template.
    pub template_defects: Vec<Vec<Feature>>,
    pub test_defects: Vec<Feature>,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LongitudinalDataset {
    pub templates: TemplateSet,
    pub test: ImageGrid,
    /// Noise-free test image.
    pub test_clean: ImageGrid,
    pub new_regions: Vec<RegionOfInterest>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Templates with 1..=L holes, test with one more.
    Potato,
    /// Every template carries two deformities the test lacks.
    Okra,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "potato" => Ok(Preset::Potato),
            "okra" => Ok(Preset::Okra),
            other => Err(Error::Validation(format!("unknown dataset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Potato => "potato",
            Preset::Okra => "okra",
        })
    }
}

impl LongitudinalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Validation(format!("grid size {} is below 8", self.size)));
        }
        if self.template_defects.len() < 2 {
            return Err(Error::Validation("at least 2 templates are required".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation("noise sigma must be non-negative".into()));
        }
        let all = self
            .base
            .iter()
            .chain(self.template_defects.iter().flatten())
            .chain(&self.test_defects);
        for f in all {
            f.shape.validate(self.size)?;
            if !f.value.is_finite() {
                return Err(Error::Validation(format!("non-finite value in {f}")));
            }
        }
        Ok(())
    }

    /// Defects in exactly one of the test and the union of template defects.
    pub fn changed_defects(&self) -> Vec<Feature> {
        let union: Vec<&Feature> = self.template_defects.iter().flatten().collect();
        let mut out: Vec<Feature> = self
            .test_defects
            .iter()
            .filter(|d| !union.contains(d))
            .copied()
            .collect();
        for d in union {
            if !self.test_defects.contains(d) && !out.contains(d) {
                out.push(*d);
            }
        }
        out
    }

    pub fn preset(preset: Preset, size: usize, templates: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        match preset {
            Preset::Potato => Self::potato(size, templates, noise_sigma, seed),
            Preset::Okra => Self::okra(size, templates, noise_sigma, seed),
        }
    }

    /// An elliptical tuber with a denser core; template `i` has holes
    /// `0..=i` drilled, the test has one hole more than the last template.
    pub fn potato(size: usize, templates: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(2..=7).contains(&templates) {
            return Err(Error::Validation(format!("potato preset supports 2..=7 templates, got {templates}")));
        }
        let s = size as f64;
        let c = s / 2.0;
        let base = vec![
            Feature::new(Shape::Ellipse { cx: c, cy: c, ax: 0.40 * s, ay: 0.32 * s, angle: 12.0 }, 1.0),
            Feature::new(Shape::Ellipse { cx: 0.48 * s, cy: 0.50 * s, ax: 0.14 * s, ay: 0.10 * s, angle: -20.0 }, 0.3),
            Feature::new(Shape::Disk { cx: 0.62 * s, cy: 0.40 * s, r: 0.035 * s }, -0.25),
            Feature::new(Shape::Disk { cx: 0.35 * s, cy: 0.62 * s, r: 0.03 * s }, 0.2),
        ];
        // Hole sites on a ring between the core and the skin.
        let radius = (0.045 * s).max(1.5);
        let sites = [
            (0.24, 0.47),
            (0.50, 0.28),
            (0.75, 0.56),
            (0.55, 0.72),
            (0.33, 0.36),
            (0.70, 0.35),
            (0.42, 0.76),
            (0.78, 0.45),
        ];
        let holes: Vec<Feature> = sites
            .iter()
            .take(templates + 1)
            .map(|&(fx, fy)| Feature::new(Shape::Disk { cx: fx * s, cy: fy * s, r: radius }, -1.0))
            .collect();
        let template_defects = (0..templates).map(|i| holes[..=i].to_vec()).collect();
        let spec = LongitudinalSpec {
            size,
            base,
            template_defects,
            test_defects: holes,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A pod cross-section with a ring of seeds. Every template carries the
    /// same two deformities plus a growing list of cuts; the test has the
    /// cuts but neither deformity.
    pub fn okra(size: usize, templates: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(2..=6).contains(&templates) {
            return Err(Error::Validation(format!("okra preset supports 2..=6 templates, got {templates}")));
        }
        let s = size as f64;
        let c = s / 2.0;
        let mut base = vec![
            Feature::new(Shape::Ellipse { cx: c, cy: c, ax: 0.38 * s, ay: 0.36 * s, angle: 0.0 }, 0.8),
            Feature::new(Shape::Ellipse { cx: c, cy: c, ax: 0.16 * s, ay: 0.15 * s, angle: 0.0 }, -0.5),
        ];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            base.push(Feature::new(
                Shape::Disk { cx: c + 0.24 * s * a.cos(), cy: c + 0.24 * s * a.sin(), r: 0.035 * s },
                0.4,
            ));
        }
        let deformities = [
            Feature::new(Shape::Disk { cx: 0.30 * s, cy: 0.27 * s, r: 0.055 * s }, -0.8),
            Feature::new(Shape::Rect { x0: 0.62 * s, y0: 0.70 * s, w: 0.10 * s, h: 0.07 * s }, -0.8),
        ];
        let cut_sites = [(0.80, 0.50), (0.50, 0.82), (0.20, 0.55), (0.52, 0.16), (0.74, 0.30), (0.28, 0.74)];
        let cuts: Vec<Feature> = cut_sites
            .iter()
            .take(templates)
            .map(|&(fx, fy)| Feature::new(Shape::Disk { cx: fx * s, cy: fy * s, r: 0.035 * s }, -0.8))
            .collect();
        let template_defects = (0..templates)
            .map(|i| deformities.iter().chain(&cuts[..=i]).copied().collect())
            .collect();
        let spec = LongitudinalSpec {
            size,
            base,
            template_defects,
            test_defects: cuts,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn rasterize(size: usize, base: &[Feature], defects: &[Feature]) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for f in base.iter().chain(defects) {
        f.shape.paint(f.value, size, &mut out);
    }
    out
}

pub fn generate_longitudinal_dataset(spec: &LongitudinalSpec) -> Result<LongitudinalDataset> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Validation(e.to_string()))?;
    let mut noisy = |mut v: Vec<f64>| -> Result<ImageGrid> {
        if spec.noise_sigma > 0.0 {
            for x in v.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        ImageGrid::new(n, n, v)
    };
    let templates = spec
        .template_defects
        .iter()
        .map(|d| noisy(rasterize(n, &spec.base, d)))
        .collect::<Result<Vec<_>>>()?;
    let clean = rasterize(n, &spec.base, &spec.test_defects);
    let test = noisy(clean.clone())?;
    let new_regions = spec.changed_defects().iter().map(|d| d.shape.pixel_bounds(n)).collect();
    Ok(LongitudinalDataset {
        templates: TemplateSet::new(templates)?,
        test,
        test_clean: ImageGrid::new(n, n, clean)?,
        new_regions,
    })
}

/// Template closest to `x` in the Euclidean sense.
pub fn nearest_template<'a>(templates: &'a TemplateSet, x: &ImageGrid) -> &'a ImageGrid {
    templates
        .templates()
        .iter()
        .min_by(|a, b| {
            let da: f64 = a.data().iter().zip(x.data()).map(|(p, q)| (p - q).powi(2)).sum();
            let db: f64 = b.data().iter().zip(x.data()).map(|(p, q)| (p - q).powi(2)).sum();
            da.total_cmp(&db)
        })
        .expect("template sets are non-empty")
}

/// A centered disk of `value` with the given radius (pixels), antialiased.
pub fn disk_image(size: usize, radius: f64, value: f64) -> ImageGrid {
    let c = size as f64 / 2.0;
    let data = rasterize(size, &[Feature::new(Shape::Disk { cx: c, cy: c, r: radius }, value)], &[]);
    ImageGrid::new(size, size, data).expect("finite disk")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{complement_mean, union_mean};

    #[test]
    fn feature_parsing() {
        let f: Feature = "disk 10 12 4 -1".parse().unwrap();
        assert_eq!(f, Feature::new(Shape::Disk { cx: 10.0, cy: 12.0, r: 4.0 }, -1.0));
        let e: Feature = "ellipse 1 2 3 4 30 0.5".parse().unwrap();
        assert_eq!(e.to_string().parse::<Feature>().unwrap(), e);
        assert!("disk 1 2".parse::<Feature>().is_err());
        assert!("blob 1 2 3 4".parse::<Feature>().is_err());
    }

    #[test]
    fn antialiased_coverage() {
        let mut out = vec![0.0; 4];
        Shape::Rect { x0: 0.5, y0: 0.0, w: 1.0, h: 1.0 }.paint(2.0, 2, &mut out);
        assert_eq!(out, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_bounds_shape_rejected() {
        let mut spec = LongitudinalSpec::potato(64, 3, 0.0, 1).unwrap();
        spec.test_defects.push(Feature::new(Shape::Disk { cx: 62.0, cy: 30.0, r: 4.0 }, -1.0));
        assert!(matches!(generate_longitudinal_dataset(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn no_defects_no_noise_gives_identical_templates() {
        let spec = LongitudinalSpec {
            size: 32,
            base: vec![Feature::new(Shape::Disk { cx: 16.0, cy: 16.0, r: 9.0 }, 1.0)],
            template_defects: vec![vec![], vec![], vec![]],
            test_defects: vec![],
            noise_sigma: 0.0,
            seed: 4,
        };
        let ds = generate_longitudinal_dataset(&spec).unwrap();
        let t = ds.templates.templates();
        assert!(t.iter().all(|x| x == &t[0]));
        assert!(ds.new_regions.is_empty());
    }

    #[test]
    fn potato_new_region_is_the_extra_hole() {
        let spec = LongitudinalSpec::potato(128, 3, 0.0, 7).unwrap();
        let ds = generate_longitudinal_dataset(&spec).unwrap();
        assert_eq!(ds.templates.len(), 3);
        assert_eq!(ds.new_regions.len(), 1);
        let hole = spec.test_defects[3].shape.pixel_bounds(128);
        assert_eq!(ds.new_regions[0], hole);
    }

    #[test]
    fn okra_new_regions_mark_absent_deformities() {
        let spec = LongitudinalSpec::okra(128, 4, 0.0, 7).unwrap();
        let ds = generate_longitudinal_dataset(&spec).unwrap();
        assert_eq!(ds.new_regions.len(), 2);
        let changed = spec.changed_defects();
        assert!(changed.iter().all(|d| !spec.test_defects.contains(d)));
        assert!(changed.iter().all(|d| spec.template_defects.iter().all(|t| t.contains(d))));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = LongitudinalSpec::potato(64, 4, 0.02, 11).unwrap();
        let a = generate_longitudinal_dataset(&spec).unwrap();
        let b = generate_longitudinal_dataset(&spec).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.templates, b.templates);
        let other = LongitudinalSpec { seed: 12, ..spec };
        assert_ne!(generate_longitudinal_dataset(&other).unwrap().test, a.test);
    }

    #[test]
    fn change_is_detectable_by_construction() {
        for preset in [Preset::Potato, Preset::Okra] {
            let spec = LongitudinalSpec::preset(preset, 128, 4, 0.01, 3).unwrap();
            let ds = generate_longitudinal_dataset(&spec).unwrap();
            let nearest = nearest_template(&ds.templates, &ds.test);
            let diff = ImageGrid::new(
                128,
                128,
                ds.test.data().iter().zip(nearest.data()).map(|(a, b)| (a - b).abs()).collect(),
            )
            .unwrap();
            let inside = union_mean(&diff, &ds.new_regions);
            let outside = complement_mean(&diff, &ds.new_regions);
            assert!(inside >= 10.0 * outside, "{preset}: {inside} vs {outside}");
        }
    }
}
