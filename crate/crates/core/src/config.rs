//! Run configuration: reconstruction tunables plus the experiment description
//! (dataset, grid size, view counts) used by the command-line tool.

use std::path::Path;

use crate::cs::CsOptions;
use crate::error::{Error, Result};
use crate::fbp::RampFilter;
use crate::kv::{self, Entry};
use crate::phantom::{Feature, LongitudinalSpec, Preset};
use crate::pipeline::{Method, ReconConfig};
use crate::projector::ScanGeometry;
use crate::transform::TransformKind;
use crate::weights::{PilotMethod, PILOT_CS_ITERATIONS};

pub const DEFAULT_SIZE: usize = 128;
pub const DEFAULT_TEMPLATES: usize = 4;
pub const DEFAULT_DENSE_VIEWS: usize = 360;
pub const DEFAULT_VIEWS: usize = 45;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Preset(Preset),
    /// Shapes given explicitly through `base`, `template.N` and `test`.
    Custom {
        base: Vec<Feature>,
        templates: Vec<Vec<Feature>>,
        test: Vec<Feature>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub recon: ReconConfig,
    pub dataset: DatasetSpec,
    pub size: usize,
    pub templates: usize,
    pub noise_sigma: f64,
    pub views: usize,
    pub dense_views: usize,
    /// Methods compared by `bench`.
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            recon: ReconConfig::default(),
            dataset: DatasetSpec::Preset(Preset::Potato),
            size: DEFAULT_SIZE,
            templates: DEFAULT_TEMPLATES,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            views: DEFAULT_VIEWS,
            dense_views: DEFAULT_DENSE_VIEWS,
            methods: vec![Method::Fdk, Method::Cs, Method::Prior, Method::WeightedPrior],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.recon.validate()?;
        if self.views == 0 || self.views > self.dense_views {
            return Err(Error::Validation(format!(
                "views must lie in 1..={}, got {}",
                self.dense_views, self.views
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Validation("at least one bench method is required".into()));
        }
        if self.methods.contains(&Method::WeightedPrior) && self.recon.pilot_methods.len() < 2 {
            return Err(Error::Validation("weighted prior needs at least 2 pilot methods".into()));
        }
        self.spec().map(|_| ())
    }

    /// Sparse-view geometry: `views` evenly spaced angles out of `dense_views`.
    pub fn geometry(&self) -> Result<ScanGeometry> {
        ScanGeometry::sparse_subset(self.size, self.size, self.dense_views, self.views)
    }

    pub fn spec(&self) -> Result<LongitudinalSpec> {
        match &self.dataset {
            DatasetSpec::Preset(p) => {
                LongitudinalSpec::preset(*p, self.size, self.templates, self.noise_sigma, self.recon.seed)
            }
            DatasetSpec::Custom { base, templates, test } => {
                let spec = LongitudinalSpec {
                    size: self.size,
                    base: base.clone(),
                    template_defects: templates.clone(),
                    test_defects: test.clone(),
                    noise_sigma: self.noise_sigma,
                    seed: self.recon.seed,
                };
                spec.validate()?;
                Ok(spec)
            }
        }
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetSpec::Preset(p) => p.to_string(),
            DatasetSpec::Custom { .. } => "custom".to_string(),
        }
    }

    /// Sets the seed, which also drives phantom noise.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.recon.seed = seed;
        self
    }
}

fn features(entry: &Entry) -> Result<Vec<Feature>> {
    entry
        .value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Feature>().map_err(|e| entry.error(e.to_string())))
        .collect()
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let entries = kv::parse(text)?;
    let mut cfg = ExperimentConfig::default();
    let mut pilot_names: Option<Vec<String>> = None;
    let mut preset: Option<Preset> = None;
    let mut custom = false;
    let mut pilot_cs_iterations = PILOT_CS_ITERATIONS;
    let mut base = Vec::new();
    let mut test = Vec::new();
    let mut templates: Vec<(usize, Vec<Feature>)> = Vec::new();

    for e in &entries {
        let r = &mut cfg.recon;
        match e.key.as_str() {
            "lambda1" => r.lambda1 = e.parse()?,
            "lambda2" => r.lambda2 = e.parse()?,
            "k" => r.k = e.parse()?,
            "smoothing_sigma" => r.smoothing_sigma = e.parse()?,
            "eigen_rank_high" => r.eigen_rank_high = Some(e.parse()?),
            "eigen_rank_low" => r.eigen_rank_low = Some(e.parse()?),
            "outer_iterations" => r.outer_iterations = e.parse()?,
            "cs_max_iterations" => r.cs_options.max_iterations = e.parse()?,
            "cs_tolerance" => r.cs_options.tolerance = e.parse()?,
            "cs_power_iterations" => r.cs_options.lipschitz_power_iters = e.parse()?,
            "pilot_cs_iterations" => pilot_cs_iterations = e.parse()?,
            "pilot_methods" => pilot_names = Some(e.parse_list()?),
            "transform" => r.transform = e.parse::<TransformKind>()?,
            "filter" => r.filter = e.parse::<RampFilter>()?,
            "algebraic_iterations" => r.algebraic_iterations = Some(e.parse()?),
            "relaxation" => r.relaxation = Some(e.parse()?),
            "seed" => r.seed = e.parse()?,
            "views" => cfg.views = e.parse()?,
            "dense_views" => cfg.dense_views = e.parse()?,
            "size" => cfg.size = e.parse()?,
            "templates" => cfg.templates = e.parse()?,
            "noise_sigma" => cfg.noise_sigma = e.parse()?,
            "methods" => cfg.methods = e.parse_list()?,
            "dataset" => match e.value.to_ascii_lowercase().as_str() {
                "custom" => custom = true,
                _ => preset = Some(e.parse()?),
            },
            "base" => base = features(e)?,
            "test" => test = features(e)?,
            key => match key.strip_prefix("template.").map(str::parse::<usize>) {
                Some(Ok(i)) => templates.push((i, features(e)?)),
                _ => {
                    return Err(Error::UnknownKey {
                        line: e.line,
                        key: key.to_string(),
                    })
                }
            },
        }
    }

    let shapes_given = !base.is_empty() || !test.is_empty() || !templates.is_empty();
    if custom {
        templates.sort_by_key(|t| t.0);
        if templates.iter().enumerate().any(|(i, t)| t.0 != i + 1) {
            return Err(Error::Validation("custom templates must be numbered template.1, template.2, ...".into()));
        }
        cfg.templates = templates.len();
        cfg.dataset = DatasetSpec::Custom {
            base,
            templates: templates.into_iter().map(|t| t.1).collect(),
            test,
        };
    } else {
        if shapes_given {
            return Err(Error::Validation("shape keys require `dataset = custom`".into()));
        }
        if let Some(p) = preset {
            cfg.dataset = DatasetSpec::Preset(p);
        }
    }

    let pilots = match pilot_names {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<PilotMethod>())
            .collect::<Result<Vec<_>>>()?,
        None => PilotMethod::default_ensemble(cfg.recon.lambda1),
    };
    cfg.recon.pilot_methods = pilots
        .into_iter()
        .map(|p| match p {
            PilotMethod::Cs { transform, .. } => PilotMethod::Cs {
                transform,
                options: CsOptions {
                    lambda1: cfg.recon.lambda1,
                    max_iterations: pilot_cs_iterations,
                    ..cfg.recon.cs_options.clone()
                },
            },
            other => other,
        })
        .collect();
    cfg.recon.cs_options.lambda1 = cfg.recon.lambda1;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_config_str(&text)
}
