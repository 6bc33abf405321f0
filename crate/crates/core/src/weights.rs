//! Prior weight maps from an ensemble of pilot reconstructions.
//!
//! Each pilot method reconstructs the test and every template from the same
//! sparse geometry. Per method, the template pilots span a low-quality
//! eigenspace; the part of the test pilot that this eigenspace cannot explain
//! is new structure plus that method's own artefacts of the new structure.
//! Taking the pointwise minimum over methods keeps only what every method
//! agrees on, and `W = 1 / (1 + k d)` turns it into a prior weight.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::algebraic::{algebraic_reconstruct, AlgebraicMethod, AlgebraicOptions};
use crate::cs::{cs_reconstruct, CsOptions};
use crate::error::{Error, Result};
use crate::fbp::{fbp_reconstruct, RampFilter};
use crate::grid::ImageGrid;
use crate::prior::{build_eigenspace, project_onto_eigenspace, Eigenspace, TemplateSet};
use crate::projector::{forward_project, ScanGeometry, Sinogram};
use crate::smooth::gaussian_blur;
use crate::transform::{SparsifyingTransform, TransformKind};

/// Pilot pairs are rescaled by the inverse of this percentile of `|X^j|`.
pub const NORMALIZATION_PERCENTILE: f64 = 0.99;

/// Pilots only need to localize change, so the CS pilot stops early.
pub const PILOT_CS_ITERATIONS: usize = 50;

/// Per-pixel prior weights. Maps produced by [`compute_weight_map`] lie in
/// `(0, 1]`; hand-built maps may use any value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap(ImageGrid);

impl WeightMap {
    pub fn ones(width: usize, height: usize) -> Self {
        WeightMap(ImageGrid::filled(width, height, 1.0))
    }

    pub fn from_values(values: ImageGrid) -> Result<Self> {
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("weight {v} outside [0, 1]")));
        }
        Ok(WeightMap(values))
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_grid(&self) -> &ImageGrid {
        &self.0
    }

    pub fn into_grid(self) -> ImageGrid {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    pub fn is_all_ones(&self) -> bool {
        self.values().iter().all(|&w| w == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PilotMethod {
    Fbp(RampFilter),
    Algebraic(AlgebraicOptions),
    Cs { transform: TransformKind, options: CsOptions },
}

impl PilotMethod {
    pub fn fbp() -> Self {
        PilotMethod::Fbp(RampFilter::RamLak)
    }

    pub fn algebraic(method: AlgebraicMethod) -> Self {
        PilotMethod::Algebraic(AlgebraicOptions::new(method))
    }

    /// CS pilot capped at [`PILOT_CS_ITERATIONS`].
    pub fn cs(lambda1: f64) -> Self {
        PilotMethod::Cs {
            transform: TransformKind::Dct2,
            options: CsOptions {
                lambda1,
                max_iterations: PILOT_CS_ITERATIONS,
                ..CsOptions::default()
            },
        }
    }

    /// FBP, SIRT, SART and CS, with FBP first.
    pub fn default_ensemble(lambda1: f64) -> Vec<PilotMethod> {
        vec![
            PilotMethod::fbp(),
            PilotMethod::algebraic(AlgebraicMethod::Sirt),
            PilotMethod::algebraic(AlgebraicMethod::Sart),
            PilotMethod::cs(lambda1),
        ]
    }

    pub fn identifier(&self) -> &'static str {
        match self {
            PilotMethod::Fbp(_) => "FBP",
            PilotMethod::Algebraic(o) => match o.method {
                AlgebraicMethod::Art => "ART",
                AlgebraicMethod::Sart => "SART",
                AlgebraicMethod::Sirt => "SIRT",
            },
            PilotMethod::Cs { .. } => "CS",
        }
    }

    pub fn reconstruct(&self, sino: &Sinogram) -> Result<ImageGrid> {
        let geom = sino.geometry();
        let out = match self {
            PilotMethod::Fbp(filter) => fbp_reconstruct(sino, *filter),
            PilotMethod::Algebraic(opts) => algebraic_reconstruct(sino, opts),
            PilotMethod::Cs { transform, options } => {
                let t = SparsifyingTransform::new(*transform, geom.image_width(), geom.image_height());
                cs_reconstruct(sino, &t, options)
            }
        };
        out.map_err(|e| Error::Method {
            method: self.identifier().to_string(),
            source: Box::new(e),
        })
    }
}

impl fmt::Display for PilotMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.identifier())
    }
}

/// Parses a method name into a pilot with default options.
impl FromStr for PilotMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fbp" | "fdk" => Ok(PilotMethod::fbp()),
            "art" => Ok(PilotMethod::algebraic(AlgebraicMethod::Art)),
            "sart" => Ok(PilotMethod::algebraic(AlgebraicMethod::Sart)),
            "sirt" => Ok(PilotMethod::algebraic(AlgebraicMethod::Sirt)),
            "cs" => Ok(PilotMethod::cs(0.0)),
            other => Err(Error::Validation(format!("unknown pilot method `{other}`"))),
        }
    }
}

/// All pilot reconstructions for one test and its templates.
#[derive(Clone, Debug)]
pub struct PilotSet {
    pub methods: Vec<String>,
    /// `X^j`, one per method.
    pub test_pilots: Vec<ImageGrid>,
    /// `Y_i^j`, indexed `[method][template]`.
    pub template_pilots: Vec<Vec<ImageGrid>>,
    /// `E_low^j`, one per method.
    pub eigenspaces: Vec<Eigenspace>,
    /// `P^j`, the projection of `X^j` onto `E_low^j`.
    pub projections: Vec<ImageGrid>,
}

impl PilotSet {
    pub fn len(&self) -> usize {
        self.test_pilots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test_pilots.is_empty()
    }

    fn check(&self) -> Result<()> {
        let m = self.test_pilots.len();
        if self.projections.len() != m || self.methods.len() != m {
            return Err(Error::Validation("pilot set counts are inconsistent".into()));
        }
        for (x, p) in self.test_pilots.iter().zip(&self.projections) {
            self.test_pilots[0].check_shape(x, "pilot set")?;
            self.test_pilots[0].check_shape(p, "pilot set")?;
        }
        Ok(())
    }
}

/// Simulated measurements of each template in the test's exact geometry.
pub fn simulate_template_sinograms(set: &TemplateSet, geom: &ScanGeometry) -> Result<Vec<Sinogram>> {
    set.templates().iter().map(|t| forward_project(t, geom)).collect()
}

fn check_ensemble(methods: &[PilotMethod]) -> Result<()> {
    if methods.len() < 2 {
        return Err(Error::Validation(format!(
            "the pilot ensemble needs at least 2 methods, got {}",
            methods.len()
        )));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].iter().any(|o| o.identifier() == m.identifier()) {
            return Err(Error::Validation(format!("duplicate pilot method {m}")));
        }
    }
    Ok(())
}

/// Runs every method on the test and on every template sinogram, builds the
/// per-method eigenspaces and projects each test pilot onto its own.
pub fn build_pilot_set(
    test_sino: &Sinogram,
    template_sinos: &[Sinogram],
    methods: &[PilotMethod],
    rank: usize,
) -> Result<PilotSet> {
    check_ensemble(methods)?;
    if template_sinos.len() < 2 {
        return Err(Error::Validation("at least 2 template sinograms are required".into()));
    }
    for s in template_sinos {
        if s.geometry() != test_sino.geometry() {
            return Err(Error::Geometry(
                "template sinograms must share the test geometry".into(),
            ));
        }
    }
    let volumes: Vec<&Sinogram> = std::iter::once(test_sino).chain(template_sinos).collect();
    let cells: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..volumes.len()).map(move |v| (m, v)))
        .collect();
    let recons: Vec<ImageGrid> = cells
        .par_iter()
        .map(|&(m, v)| methods[m].reconstruct(volumes[v]))
        .collect::<Result<_>>()?;

    let per_method = volumes.len();
    let mut test_pilots = Vec::new();
    let mut template_pilots = Vec::new();
    let mut eigenspaces = Vec::new();
    let mut projections = Vec::new();
    for (m, method) in methods.iter().enumerate() {
        let block = &recons[m * per_method..(m + 1) * per_method];
        let templates = TemplateSet::new(block[1..].to_vec())?;
        let space = build_eigenspace(&templates, rank).map_err(|e| Error::Method {
            method: method.identifier().to_string(),
            source: Box::new(e),
        })?;
        let (_, projected) = project_onto_eigenspace(&space, &block[0])?;
        test_pilots.push(block[0].clone());
        template_pilots.push(block[1..].to_vec());
        eigenspaces.push(space);
        projections.push(projected);
    }
    Ok(PilotSet {
        methods: methods.iter().map(|m| m.identifier().to_string()).collect(),
        test_pilots,
        template_pilots,
        eigenspaces,
        projections,
    })
}

/// Nearest-rank percentile of `|values|`.
fn abs_percentile(values: &[f64], q: f64) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let rank = ((q * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1]
}

/// `|X − P|` after scaling both by the inverse percentile of `|X|`.
pub fn normalized_difference(test_pilot: &ImageGrid, projection: &ImageGrid) -> Result<ImageGrid> {
    test_pilot.check_shape(projection, "pilot difference")?;
    let p = abs_percentile(test_pilot.data(), NORMALIZATION_PERCENTILE);
    let scale = if p > 0.0 { 1.0 / p } else { 1.0 };
    ImageGrid::new(
        test_pilot.width(),
        test_pilot.height(),
        test_pilot
            .data()
            .iter()
            .zip(projection.data())
            .map(|(x, q)| (scale * (x - q)).abs())
            .collect(),
    )
}

/// Pointwise minimum over methods of the normalized difference maps.
pub fn min_difference(pairs: &[(&ImageGrid, &ImageGrid)]) -> Result<ImageGrid> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Validation("no pilot pairs".into()))?;
    let mut d = normalized_difference(first.0, first.1)?.into_data();
    for (x, p) in &pairs[1..] {
        let dj = normalized_difference(x, p)?;
        if dj.len() != d.len() {
            return Err(Error::Validation("pilot pairs differ in size".into()));
        }
        for (a, b) in d.iter_mut().zip(dj.data()) {
            *a = a.min(*b);
        }
    }
    ImageGrid::new(first.0.width(), first.0.height(), d)
}

/// `W = 1 / (1 + k d)` on an already-formed difference map.
pub fn weights_from_difference(d: &ImageGrid, k: f64) -> Result<WeightMap> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Validation(format!("k must be positive, got {k}")));
    }
    if d.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Validation("difference map must be non-negative".into()));
    }
    Ok(WeightMap(d.map(|v| 1.0 / (1.0 + k * v))?))
}

/// Weight map from explicit `(X^j, P^j)` pairs.
pub fn weight_map_from_pairs(pairs: &[(&ImageGrid, &ImageGrid)], k: f64, smoothing_sigma: f64) -> Result<WeightMap> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Validation(format!("k must be positive, got {k}")));
    }
    if !(smoothing_sigma >= 0.0) {
        return Err(Error::Validation("smoothing sigma must be non-negative".into()));
    }
    let d = min_difference(pairs)?;
    let smoothed = gaussian_blur(d.data(), d.width(), d.height(), smoothing_sigma);
    weights_from_difference(&ImageGrid::new(d.width(), d.height(), smoothed)?, k)
}

pub fn compute_weight_map(pilots: &PilotSet, k: f64, smoothing_sigma: f64) -> Result<WeightMap> {
    pilots.check()?;
    let pairs: Vec<(&ImageGrid, &ImageGrid)> = pilots.test_pilots.iter().zip(&pilots.projections).collect();
    weight_map_from_pairs(&pairs, k, smoothing_sigma)
}

/// Per-method normalized `|X^j − P^j|` maps, for inspection.
pub fn difference_maps(pilots: &PilotSet) -> Result<Vec<ImageGrid>> {
    pilots
        .test_pilots
        .iter()
        .zip(&pilots.projections)
        .map(|(x, p)| normalized_difference(x, p))
        .collect()
}
