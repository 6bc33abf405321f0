//! Method comparison on synthetic longitudinal datasets: global and
//! new-region SSIM for each method, written as a tab-separated report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{save_raster, ImageGrid, RegionOfInterest};
use crate::kv;
use crate::metrics::{rmse, ssim, ssim_map, union_mean};
use crate::phantom::{generate_longitudinal_dataset, LongitudinalDataset};
use crate::pipeline::{plain_prior_solve, reconstruct, weighted_prior_reconstruct, Diagnostics, Method};
use crate::projector::{forward_project, Sinogram};

pub const REPORT_HEADER: &str = "dataset\tmethod\tssim_global\tssim_roi\trmse_global\tseconds";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub ssim_global: f64,
    /// SSIM map averaged over the union of the new regions.
    pub ssim_roi: f64,
    pub rmse_global: f64,
    pub rmse_roi: f64,
}

/// Scores `recon` against `truth`. Region scores are NaN when there are no regions.
pub fn evaluate(recon: &ImageGrid, truth: &ImageGrid, regions: &[RegionOfInterest]) -> Result<Scores> {
    let map = ssim_map(recon, truth)?;
    let sq = ImageGrid::new(
        recon.width(),
        recon.height(),
        recon.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).collect(),
    )?;
    for r in regions {
        r.check_within(recon.width(), recon.height())?;
    }
    Ok(Scores {
        ssim_global: ssim(recon, truth, None)?,
        ssim_roi: union_mean(&map, regions),
        rmse_global: rmse(recon, truth, None)?,
        rmse_roi: union_mean(&sq, regions).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub dataset: String,
    pub method: Method,
    pub scores: Scores,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, dataset: &str, method: Method) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let seconds = r.seconds.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                r.dataset, r.method, r.scores.ssim_global, r.scores.ssim_roi, r.scores.rmse_global, seconds
            );
        }
        out
    }
}

/// One dataset's reconstructions, kept in memory for inspection.
#[derive(Clone, Debug)]
pub struct BenchCase {
    pub name: String,
    pub dataset: LongitudinalDataset,
    pub sinogram: Sinogram,
    pub reconstructions: Vec<(Method, ImageGrid)>,
    pub weights: Option<ImageGrid>,
    pub diagnostics: Vec<(Method, Diagnostics)>,
    pub rows: Vec<BenchRow>,
}

impl BenchCase {
    pub fn image(&self, method: Method) -> Option<&ImageGrid> {
        self.reconstructions.iter().find(|r| r.0 == method).map(|r| &r.1)
    }

    pub fn scores(&self, method: Method) -> Option<Scores> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.scores)
    }
}

/// Generates the dataset, measures the test in the sparse geometry and runs
/// every configured method. With `timing`, wall-clock seconds are recorded;
/// otherwise the column stays empty so repeated runs are byte-identical.
pub fn run_case(cfg: &ExperimentConfig, timing: bool) -> Result<BenchCase> {
    cfg.validate()?;
    let name = cfg.dataset_name();
    let dataset = generate_longitudinal_dataset(&cfg.spec()?)?;
    let geom = cfg.geometry()?;
    let sinogram = forward_project(&dataset.test, &geom)?;

    let mut case = BenchCase {
        name: name.clone(),
        sinogram,
        reconstructions: Vec::new(),
        weights: None,
        diagnostics: Vec::new(),
        rows: Vec::new(),
        dataset,
    };
    for &method in &cfg.methods {
        let start = Instant::now();
        let image = match method {
            Method::WeightedPrior => {
                let (image, weights, diag) =
                    weighted_prior_reconstruct(&case.sinogram, &case.dataset.templates, &cfg.recon)?;
                case.weights = Some(weights.into_grid());
                case.diagnostics.push((method, diag));
                image
            }
            Method::Prior => {
                let r = plain_prior_solve(&case.sinogram, &case.dataset.templates, &cfg.recon)?;
                case.diagnostics.push((method, r.diagnostics));
                r.image
            }
            m => reconstruct(m, &case.sinogram, Some(&case.dataset.templates), &cfg.recon)?,
        };
        let seconds = timing.then(|| start.elapsed().as_secs_f64());
        let scores = evaluate(&image, &case.dataset.test_clean, &case.dataset.new_regions)?;
        case.rows.push(BenchRow {
            dataset: name.clone(),
            method,
            scores,
            seconds,
        });
        case.reconstructions.push((method, image));
    }
    Ok(case)
}

fn write_case(case: &BenchCase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_raster(&case.dataset.test_clean, dir.join("ground_truth.tpr"))?;
    save_raster(&case.dataset.test, dir.join("test.tpr"))?;
    for (i, t) in case.dataset.templates.templates().iter().enumerate() {
        save_raster(t, dir.join(format!("template_{:02}.tpr", i + 1)))?;
    }
    case.sinogram.save(dir, "sinogram")?;
    for (method, image) in &case.reconstructions {
        save_raster(image, dir.join(format!("{method}.tpr")))?;
    }
    if let Some(w) = &case.weights {
        save_raster(w, dir.join("weights.tpr"))?;
    }
    for (method, diag) in &case.diagnostics {
        let path = dir.join(format!("{method}.diagnostics.tsv"));
        fs::write(&path, diag.to_table()).map_err(|e| Error::io(&path, e))?;
    }
    let mut manifest = kv::Writer::new();
    for (i, r) in case.dataset.new_regions.iter().enumerate() {
        manifest.entry(&format!("new_region.{}", i + 1), format!("{} {} {} {}", r.x0, r.y0, r.w, r.h));
    }
    manifest.write(dir.join("regions.txt"))
}

/// Runs every config and writes `report.tsv` plus one subdirectory of
/// rasters per dataset under `out`.
pub fn run_bench(configs: &[ExperimentConfig], out: impl AsRef<Path>, timing: bool) -> Result<BenchReport> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = BenchReport::default();
    for cfg in configs {
        let case = run_case(cfg, timing)?;
        write_case(&case, &out.join(&case.name))?;
        report.rows.extend(case.rows);
    }
    let path = out.join("report.tsv");
    fs::write(&path, report.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
