use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longitomo::bench::run_bench;
use longitomo::config::{parse_config, ExperimentConfig};
use longitomo::grid::{load_raster, save_raster};
use longitomo::kv;
use longitomo::metrics::{rmse, ssim};
use longitomo::phantom::{generate_longitudinal_dataset, Preset};
use longitomo::pipeline::{reconstruct, weighted_prior_reconstruct, Method};
use longitomo::prior::{build_eigenspace, TemplateSet};
use longitomo::projector::{forward_project, ScanGeometry, Sinogram};
use longitomo::weights::{build_pilot_set, compute_weight_map, difference_maps, simulate_template_sinograms};
use longitomo::{Error, RegionOfInterest, Result};

#[derive(Parser)]
#[command(name = "longitomo", version, about = "Sparse-view CT with weighted eigenspace priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key = value run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `views`
    #[arg(long, global = true)]
    views: Option<usize>,
    /// Overrides `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.views {
            cfg.views = v;
        }
        if let Some(s) = self.seed {
            cfg.recon.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal dataset
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-project an image in the configured sparse geometry
    Project {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a sinogram
    Recon {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fdk")]
        method: String,
        /// Sinogram raster; its geometry is read from the `.geom` file beside it
        sinogram: PathBuf,
        /// Directory holding template_*.tpr (prior methods only)
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and save the eigenspace of a template set
    Eigen {
        #[command(flatten)]
        common: Common,
        templates: PathBuf,
        /// Defaults to L - 1
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the prior weight map from pilot reconstructions
    Weights {
        #[command(flatten)]
        common: Common,
        sinogram: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SSIM and RMSE between two rasters
    Metric {
        a: PathBuf,
        b: PathBuf,
        /// x0,y0,w,h
        #[arg(long)]
        roi: Option<String>,
    },
    /// Compare fdk, cs, prior and weighted-prior on synthetic datasets
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dataset names; defaults to the configured one
        #[arg(long)]
        datasets: Option<String>,
        /// Record wall-clock seconds (breaks byte-identical reruns)
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_sinogram(path: &Path) -> Result<Sinogram> {
    Sinogram::load(path, path.with_extension("geom"))
}

fn load_templates(dir: &Path) -> Result<TemplateSet> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("template_") && n.ends_with(".tpr"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("no template_*.tpr files in {}", dir.display())));
    }
    TemplateSet::new(paths.iter().map(load_raster).collect::<Result<_>>()?)
}

fn parse_roi(text: &str) -> Result<RegionOfInterest> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("bad ROI `{text}`, expected x0,y0,w,h")))?;
    match parts[..] {
        [x0, y0, w, h] => RegionOfInterest::new(x0, y0, w, h),
        _ => Err(Error::Usage(format!("bad ROI `{text}`, expected x0,y0,w,h"))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom { common, out } => {
            let cfg = common.load()?;
            let spec = cfg.spec()?;
            let ds = generate_longitudinal_dataset(&spec)?;
            create_dir(&out)?;
            for (i, t) in ds.templates.templates().iter().enumerate() {
                save_raster(t, out.join(format!("template_{:02}.tpr", i + 1)))?;
            }
            save_raster(&ds.test, out.join("test.tpr"))?;
            save_raster(&ds.test_clean, out.join("test_clean.tpr"))?;
            let mut manifest = kv::Writer::new();
            manifest
                .entry("dataset", cfg.dataset_name())
                .entry("size", spec.size)
                .entry("templates", ds.templates.len())
                .entry("noise_sigma", spec.noise_sigma)
                .entry("seed", spec.seed);
            for (i, r) in ds.new_regions.iter().enumerate() {
                manifest.entry(&format!("new_region.{}", i + 1), format!("{} {} {} {}", r.x0, r.y0, r.w, r.h));
            }
            manifest.write(out.join("manifest.txt"))?;
            println!("wrote {} templates and test to {}", ds.templates.len(), out.display());
        }
        Command::Project { common, input, out } => {
            let cfg = common.load()?;
            let image = load_raster(&input)?;
            let geom = ScanGeometry::sparse_subset(image.width(), image.height(), cfg.dense_views, cfg.views)?;
            let sino = forward_project(&image, &geom)?;
            create_dir(&out)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            sino.save(&out, &format!("{stem}_sino"))?;
            println!("{} views x {} detectors", geom.n_angles(), geom.n_detectors());
        }
        Command::Recon {
            common,
            method,
            sinogram,
            templates,
            out,
        } => {
            let cfg = common.load()?;
            let method: Method = method.parse()?;
            let sino = load_sinogram(&sinogram)?;
            let templates = match &templates {
                Some(dir) => Some(load_templates(dir)?),
                None if method.needs_templates() => {
                    return Err(Error::Usage(format!("method `{method}` needs --templates")))
                }
                None => None,
            };
            create_dir(&out)?;
            if method == Method::WeightedPrior {
                let t = templates.as_ref().expect("checked above");
                let (image, weights, diag) = weighted_prior_reconstruct(&sino, t, &cfg.recon)?;
                save_raster(&image, out.join(format!("{method}.tpr")))?;
                save_raster(weights.as_grid(), out.join("weights.tpr"))?;
                write_text(&out.join("diagnostics.tsv"), &diag.to_table())?;
                print!("{}", diag.to_table());
            } else {
                let image = reconstruct(method, &sino, templates.as_ref(), &cfg.recon)?;
                save_raster(&image, out.join(format!("{method}.tpr")))?;
            }
        }
        Command::Eigen {
            common,
            templates,
            rank,
            out,
        } => {
            let cfg = common.load()?;
            let set = load_templates(&templates)?;
            let rank = rank.or(cfg.recon.eigen_rank_high).unwrap_or(set.len() - 1);
            let space = build_eigenspace(&set, rank)?;
            space.save(&out, &set.checksums()?)?;
            println!("rank {} eigenspace, singular values {:?}", space.rank(), space.singular_values());
        }
        Command::Weights {
            common,
            sinogram,
            templates,
            out,
        } => {
            let cfg = common.load()?;
            let sino = load_sinogram(&sinogram)?;
            let set = load_templates(&templates)?;
            let template_sinos = simulate_template_sinograms(&set, sino.geometry())?;
            let rank = cfg.recon.eigen_rank_low.unwrap_or(set.len() - 1);
            let pilots = build_pilot_set(&sino, &template_sinos, &cfg.recon.pilot_methods, rank)?;
            let w = compute_weight_map(&pilots, cfg.recon.k, cfg.recon.smoothing_sigma)?;
            create_dir(&out)?;
            save_raster(w.as_grid(), out.join("weights.tpr"))?;
            for (name, d) in pilots.methods.iter().zip(difference_maps(&pilots)?) {
                save_raster(&d, out.join(format!("difference_{}.tpr", name.to_ascii_lowercase())))?;
            }
            println!("mean weight {:.6}", w.mean());
        }
        Command::Metric { a, b, roi } => {
            let a = load_raster(&a)?;
            let b = load_raster(&b)?;
            let roi = roi.as_deref().map(parse_roi).transpose()?;
            println!("ssim\t{:.6}", ssim(&a, &b, roi.as_ref())?);
            println!("rmse\t{:.6}", rmse(&a, &b, roi.as_ref())?);
        }
        Command::Bench {
            common,
            datasets,
            timing,
            out,
        } => {
            let base = common.load()?;
            let configs = match datasets {
                Some(list) => list
                    .split(',')
                    .map(|name| -> Result<ExperimentConfig> {
                        let preset: Preset = name.trim().parse()?;
                        let mut cfg = base.clone();
                        cfg.dataset = longitomo::config::DatasetSpec::Preset(preset);
                        cfg.validate()?;
                        Ok(cfg)
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => vec![base],
            };
            let report = run_bench(&configs, &out, timing)?;
            print!("{}", report.to_tsv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
