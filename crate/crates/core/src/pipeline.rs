//! End-to-end reconstruction with a spatially weighted eigenspace prior.
//!
//! The objective over transform coefficients `θ` and eigen coefficients `α` is
//!
//! ```text
//! E(θ, α) = ‖Φ Ψ θ − y‖² + λ1 ‖θ‖₁ + λ2 ‖W (Ψ θ − μ − V α)‖²
//! ```
//!
//! and is minimized by alternating a warm-started FISTA run in `θ` with the
//! closed-form weighted least-squares step in `α`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::algebraic::{algebraic_reconstruct, AlgebraicMethod, AlgebraicOptions};
use crate::cs::{cs_reconstruct, data_term, l1_norm, CsOptions, PriorTerm, ThetaSolver};
use crate::error::{Error, Result};
use crate::fbp::{fbp_reconstruct, RampFilter};
use crate::grid::ImageGrid;
use crate::prior::{
    build_eigenspace, solve_alpha_subproblem, weighted_prior_residual, AlphaCoefficients, Eigenspace, TemplateSet,
};
use crate::projector::Sinogram;
use crate::transform::{SparsifyingTransform, TransformKind};
use crate::weights::{build_pilot_set, compute_weight_map, simulate_template_sinograms, PilotMethod, WeightMap};

/// Outer loop stops once the relative objective change drops below this.
pub const OUTER_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub k: f64,
    pub smoothing_sigma: f64,
    /// `None` means `L − 1`.
    pub eigen_rank_high: Option<usize>,
    pub eigen_rank_low: Option<usize>,
    pub outer_iterations: usize,
    /// Inner FISTA settings; `lambda1` here is ignored in favor of the field above.
    pub cs_options: CsOptions,
    pub pilot_methods: Vec<PilotMethod>,
    pub transform: TransformKind,
    pub filter: RampFilter,
    /// Overrides the per-method default for `art`, `sart` and `sirt` dispatch.
    pub algebraic_iterations: Option<usize>,
    pub relaxation: Option<f64>,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let lambda1 = 0.2;
        ReconConfig {
            lambda1,
            lambda2: 10.0,
            k: 20.0,
            smoothing_sigma: 1.0,
            eigen_rank_high: None,
            eigen_rank_low: None,
            outer_iterations: 5,
            cs_options: CsOptions {
                lambda1,
                ..CsOptions::default()
            },
            pilot_methods: PilotMethod::default_ensemble(lambda1),
            transform: TransformKind::Dct2,
            filter: RampFilter::RamLak,
            algebraic_iterations: None,
            relaxation: None,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be >= 0, got {v}")))
            }
        };
        nonneg("lambda1", self.lambda1)?;
        nonneg("lambda2", self.lambda2)?;
        nonneg("smoothing_sigma", self.smoothing_sigma)?;
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::Validation(format!("k must be positive, got {}", self.k)));
        }
        if self.eigen_rank_high == Some(0) || self.eigen_rank_low == Some(0) {
            return Err(Error::Validation("eigen ranks must be positive".into()));
        }
        if self.outer_iterations == 0 {
            return Err(Error::Validation("outer_iterations must be positive".into()));
        }
        if let Some(r) = self.relaxation {
            if !(r > 0.0 && r < 2.0) {
                return Err(Error::Validation(format!("relaxation must lie in (0, 2), got {r}")));
            }
        }
        if self.algebraic_iterations == Some(0) {
            return Err(Error::Validation("algebraic_iterations must be positive".into()));
        }
        for (i, m) in self.pilot_methods.iter().enumerate() {
            if self.pilot_methods[..i].iter().any(|o| o.identifier() == m.identifier()) {
                return Err(Error::Validation(format!("duplicate pilot method {m}")));
            }
        }
        self.inner_options().validate()
    }

    fn inner_options(&self) -> CsOptions {
        CsOptions {
            lambda1: self.lambda1,
            ..self.cs_options.clone()
        }
    }

    fn rank(requested: Option<usize>, templates: &TemplateSet) -> usize {
        requested.unwrap_or(templates.len() - 1)
    }
}

/// Objective terms after one outer iteration (iteration 0 is the start point).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub data: f64,
    pub sparsity: f64,
    pub prior: f64,
}

impl OuterRecord {
    pub fn total(&self) -> f64 {
        self.data + self.sparsity + self.prior
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub records: Vec<OuterRecord>,
}

impl Diagnostics {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(OuterRecord::total).collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("iteration\tdata\tsparsity\tprior\ttotal\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}",
                r.iteration,
                r.data,
                r.sparsity,
                r.prior,
                r.total()
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PriorReconstruction {
    pub image: ImageGrid,
    pub alpha: AlphaCoefficients,
    pub diagnostics: Diagnostics,
}

fn check_templates(sino: &Sinogram, templates: &TemplateSet) -> Result<()> {
    let g = sino.geometry();
    if templates.width() != g.image_width() || templates.height() != g.image_height() {
        return Err(Error::Geometry(format!(
            "templates are {}x{} but the scan geometry is {}x{}",
            templates.width(),
            templates.height(),
            g.image_width(),
            g.image_height()
        )));
    }
    Ok(())
}

/// Alternating minimization with a fixed eigenspace and weight map, started
/// from the FBP of the measurements.
pub fn alternating_minimization(
    sino: &Sinogram,
    space: &Eigenspace,
    weights: &WeightMap,
    cfg: &ReconConfig,
) -> Result<PriorReconstruction> {
    cfg.validate()?;
    let geom = sino.geometry();
    geom.check_image(space.mean())?;
    geom.check_image(weights.as_grid())?;
    let transform = SparsifyingTransform::new(cfg.transform, geom.image_width(), geom.image_height());
    let solver = ThetaSolver::new(geom, &transform, cfg.cs_options.lipschitz_power_iters)?;
    let opts = cfg.inner_options();

    let x0 = fbp_reconstruct(sino, cfg.filter)?;
    let mut theta = transform.transform_forward(&x0)?;
    let mut image = transform.transform_inverse(&theta)?;
    let mut alpha = solve_alpha_subproblem(&image, weights, space)?;

    let record = |iteration: usize, image: &ImageGrid, theta: &[f64], alpha: &AlphaCoefficients| -> Result<OuterRecord> {
        Ok(OuterRecord {
            iteration,
            data: data_term(image, sino)?,
            sparsity: cfg.lambda1 * l1_norm(theta),
            prior: cfg.lambda2 * weighted_prior_residual(image, weights, space, alpha)?,
        })
    };
    let mut diagnostics = Diagnostics {
        records: vec![record(0, &image, &theta, &alpha)?],
    };

    for iteration in 1..=cfg.outer_iterations {
        let estimate = space.synthesize(&alpha)?;
        let prior = PriorTerm {
            estimate: estimate.data(),
            weights: weights.values(),
            lambda2: cfg.lambda2,
        };
        let step = solver.solve(sino, Some(theta), Some(&prior), &opts)?;
        theta = step.coefficients;
        image = step.image;
        alpha = solve_alpha_subproblem(&image, weights, space)?;

        let rec = record(iteration, &image, &theta, &alpha)?;
        if !rec.total().is_finite() {
            return Err(Error::Numerical("weighted-prior objective became non-finite".into()));
        }
        let previous = diagnostics.records.last().expect("start point recorded").total();
        diagnostics.records.push(rec);
        if (previous - rec.total()).abs() <= OUTER_TOLERANCE * previous.abs() {
            break;
        }
    }
    Ok(PriorReconstruction {
        image,
        alpha,
        diagnostics,
    })
}

/// Weight map from pilot reconstructions of the test and template measurements.
pub fn pilot_weight_map(test_sino: &Sinogram, templates: &TemplateSet, cfg: &ReconConfig) -> Result<WeightMap> {
    check_templates(test_sino, templates)?;
    let template_sinos = simulate_template_sinograms(templates, test_sino.geometry())?;
    let pilots = build_pilot_set(
        test_sino,
        &template_sinos,
        &cfg.pilot_methods,
        ReconConfig::rank(cfg.eigen_rank_low, templates),
    )?;
    compute_weight_map(&pilots, cfg.k, cfg.smoothing_sigma)
}

/// Full method: eigenspace from the templates, weights from the pilots, then
/// alternating minimization.
pub fn weighted_prior_reconstruct(
    test_sino: &Sinogram,
    templates: &TemplateSet,
    cfg: &ReconConfig,
) -> Result<(ImageGrid, WeightMap, Diagnostics)> {
    cfg.validate()?;
    check_templates(test_sino, templates)?;
    let space = build_eigenspace(templates, ReconConfig::rank(cfg.eigen_rank_high, templates))?;
    let weights = pilot_weight_map(test_sino, templates, cfg)?;
    let out = alternating_minimization(test_sino, &space, &weights, cfg)?;
    Ok((out.image, weights, out.diagnostics))
}

/// The same objective with `W ≡ 1`.
pub fn plain_prior_reconstruct(test_sino: &Sinogram, templates: &TemplateSet, cfg: &ReconConfig) -> Result<ImageGrid> {
    plain_prior_solve(test_sino, templates, cfg).map(|r| r.image)
}

pub fn plain_prior_solve(test_sino: &Sinogram, templates: &TemplateSet, cfg: &ReconConfig) -> Result<PriorReconstruction> {
    cfg.validate()?;
    check_templates(test_sino, templates)?;
    let space = build_eigenspace(templates, ReconConfig::rank(cfg.eigen_rank_high, templates))?;
    let weights = WeightMap::ones(templates.width(), templates.height());
    alternating_minimization(test_sino, &space, &weights, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Fdk,
    Art,
    Sart,
    Sirt,
    Cs,
    Prior,
    WeightedPrior,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fdk,
        Method::Art,
        Method::Sart,
        Method::Sirt,
        Method::Cs,
        Method::Prior,
        Method::WeightedPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fdk => "fdk",
            Method::Art => "art",
            Method::Sart => "sart",
            Method::Sirt => "sirt",
            Method::Cs => "cs",
            Method::Prior => "prior",
            Method::WeightedPrior => "weighted-prior",
        }
    }

    pub fn needs_templates(self) -> bool {
        matches!(self, Method::Prior | Method::WeightedPrior)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "fbp" => "fdk",
            "plain-prior" => "prior",
            other => other,
        };
        Method::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Usage(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Single entry point for every reconstruction method.
pub fn reconstruct(
    method: Method,
    sino: &Sinogram,
    templates: Option<&TemplateSet>,
    cfg: &ReconConfig,
) -> Result<ImageGrid> {
    cfg.validate()?;
    let geom = sino.geometry();
    let algebraic = |m: AlgebraicMethod| {
        let mut opts = AlgebraicOptions::new(m);
        if let Some(n) = cfg.algebraic_iterations {
            opts = opts.with_iterations(n);
        }
        if let Some(r) = cfg.relaxation {
            opts = opts.with_relaxation(r);
        }
        algebraic_reconstruct(sino, &opts)
    };
    let templates = || {
        templates.ok_or_else(|| Error::Usage(format!("method `{method}` needs a template set")))
    };
    match method {
        Method::Fdk => fbp_reconstruct(sino, cfg.filter),
        Method::Art => algebraic(AlgebraicMethod::Art),
        Method::Sart => algebraic(AlgebraicMethod::Sart),
        Method::Sirt => algebraic(AlgebraicMethod::Sirt),
        Method::Cs => {
            let t = SparsifyingTransform::new(cfg.transform, geom.image_width(), geom.image_height());
            cs_reconstruct(sino, &t, &cfg.inner_options())
        }
        Method::Prior => plain_prior_reconstruct(sino, templates()?, cfg),
        Method::WeightedPrior => weighted_prior_reconstruct(sino, templates()?, cfg).map(|r| r.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_longitudinal_dataset, LongitudinalSpec};
    use crate::projector::{forward_project, ScanGeometry};

    fn small_case() -> (Sinogram, TemplateSet) {
        let spec = LongitudinalSpec::potato(32, 3, 0.0, 5).unwrap();
        let ds = generate_longitudinal_dataset(&spec).unwrap();
        let geom = ScanGeometry::sparse_subset(32, 32, 90, 15).unwrap();
        (forward_project(&ds.test, &geom).unwrap(), ds.templates)
    }

    fn quick() -> ReconConfig {
        ReconConfig {
            outer_iterations: 3,
            cs_options: CsOptions {
                max_iterations: 40,
                ..CsOptions::default()
            },
            ..ReconConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("FBP".parse::<Method>().unwrap(), Method::Fdk);
        assert!(matches!("tv".parse::<Method>(), Err(Error::Usage(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ReconConfig::default().validate().is_ok());
        let bad = [
            ReconConfig { lambda2: -1.0, ..ReconConfig::default() },
            ReconConfig { k: 0.0, ..ReconConfig::default() },
            ReconConfig { outer_iterations: 0, ..ReconConfig::default() },
            ReconConfig { eigen_rank_high: Some(0), ..ReconConfig::default() },
            ReconConfig { relaxation: Some(2.0), ..ReconConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Validation(_))), "{c:?}");
        }
    }

    #[test]
    fn fdk_dispatch_is_fbp() {
        let (sino, _) = small_case();
        let cfg = ReconConfig::default();
        assert_eq!(
            reconstruct(Method::Fdk, &sino, None, &cfg).unwrap(),
            fbp_reconstruct(&sino, RampFilter::RamLak).unwrap()
        );
        assert!(matches!(reconstruct(Method::Prior, &sino, None, &cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn template_size_mismatch_is_geometry_error() {
        let (sino, _) = small_case();
        let other = LongitudinalSpec::potato(40, 3, 0.0, 5).unwrap();
        let ds = generate_longitudinal_dataset(&other).unwrap();
        assert!(matches!(
            plain_prior_reconstruct(&sino, &ds.templates, &quick()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn outer_objective_is_monotone() {
        let (sino, templates) = small_case();
        let cfg = quick();
        let r = plain_prior_solve(&sino, &templates, &cfg).unwrap();
        let e = r.diagnostics.objectives();
        assert!(e.len() >= 2);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{e:?}");
        }
        let table = r.diagnostics.to_table();
        assert!(table.starts_with("iteration\tdata\tsparsity\tprior\ttotal\n"));
        assert_eq!(table.lines().count(), e.len() + 1);
    }

    #[test]
    fn weighted_dispatch_matches_direct_call() {
        let (sino, templates) = small_case();
        let cfg = quick();
        let direct = weighted_prior_reconstruct(&sino, &templates, &cfg).unwrap();
        let via = reconstruct(Method::WeightedPrior, &sino, Some(&templates), &cfg).unwrap();
        assert_eq!(direct.0, via);
        assert!(direct.1.values().iter().all(|&w| w > 0.0 && w <= 1.0));
    }
}
