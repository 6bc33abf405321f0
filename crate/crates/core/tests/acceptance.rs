//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! lines are always printed.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{max_abs_diff, random_image, random_vec, rng};
use longitomo::algebraic::{algebraic_reconstruct, AlgebraicMethod, AlgebraicOptions};
use longitomo::bench::run_case;
use longitomo::config::{DatasetSpec, ExperimentConfig};
use longitomo::cs::{cs_solve, CsOptions, PriorTerm, ThetaSolver};
use longitomo::phantom::{generate_longitudinal_dataset, LongitudinalSpec, Preset};
use longitomo::pipeline::Method;
use longitomo::prior::{build_eigenspace, project_onto_eigenspace, TemplateSet};
use longitomo::projector::{back_project, dense_system_matrix, forward_project};
use longitomo::transform::{SparsifyingTransform, TransformKind};
use longitomo::weights::{build_pilot_set, compute_weight_map, simulate_template_sinograms, PilotMethod};
use longitomo::{ImageGrid, RegionOfInterest, ScanGeometry, Sinogram};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn adjoint() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let geom = ScanGeometry::parallel(64, 64, 45).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_image(64, 64, &mut r);
        let y = Sinogram::new(geom.clone(), random_vec(geom.n_rays(), &mut r)).unwrap();
        let px = forward_project(&x, &geom).unwrap();
        let lhs: f64 = px.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs = x.dot(&back_project(&y));
        worst = worst.max((lhs - rhs).abs() / (px.norm() * y.norm()));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-10 && secs < 10.0, format!("worst relative gap {worst:.2e} over 100 pairs in {secs:.2} s"))
}

fn least_squares(a: DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let qr = a.qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    qr.r().solve_upper_triangular(&qty).unwrap().as_slice().to_vec()
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng(1002);
    let mut op_err = 0.0f64;
    for (w, h, n) in [(8, 8, 9), (23, 17, 13), (64, 64, 16)] {
        let geom = ScanGeometry::parallel(w, h, n).unwrap();
        let a = dense_system_matrix(&geom).unwrap();
        let x = random_image(w, h, &mut r);
        let ax = &a * DVector::from_column_slice(x.data());
        op_err = op_err.max(max_abs_diff(ax.as_slice(), forward_project(&x, &geom).unwrap().data()));
        let y = Sinogram::new(geom.clone(), random_vec(geom.n_rays(), &mut r)).unwrap();
        let aty = a.transpose() * DVector::from_column_slice(y.data());
        op_err = op_err.max(max_abs_diff(aty.as_slice(), back_project(&y).data()));
    }
    let angles = (0..8).map(|i| i as f64 * std::f64::consts::PI / 8.0).collect();
    let geom = ScanGeometry::new(4, 4, angles, 12, 0.5).unwrap();
    let mut alg_err = 0.0f64;
    for seed in [1, 2, 3] {
        let x = random_image(4, 4, &mut rng(seed)).map(|v| v + 1.5).unwrap();
        let sino = forward_project(&x, &geom).unwrap();
        let ls = least_squares(dense_system_matrix(&geom).unwrap(), sino.data());
        for (m, it) in [(AlgebraicMethod::Art, 200), (AlgebraicMethod::Sart, 500), (AlgebraicMethod::Sirt, 500)] {
            let rec = algebraic_reconstruct(&sino, &AlgebraicOptions::new(m).with_iterations(it)).unwrap();
            alg_err = alg_err.max(rmse(rec.data(), &ls));
        }
    }
    check(
        op_err < 1e-12 && alg_err < 2e-2,
        format!("operator max-abs {op_err:.2e}, ART/SART/SIRT worst RMSE to least squares {alg_err:.2e}"),
    )
}

fn cs_solver() -> Outcome {
    let mut runs = 0;
    let mut monotone = true;
    let mut record = |history: &[f64]| {
        runs += 1;
        monotone &= history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
    };

    // KKT on 3x3 instances.
    let mut kkt = 0.0f64;
    for seed in [21u64, 23, 25] {
        let geom = ScanGeometry::new(3, 3, vec![0.3, 1.9], 5, 1.0).unwrap();
        let x = random_image(3, 3, &mut rng(seed)).map(|v| v + 1.0).unwrap();
        let mut y = forward_project(&x, &geom).unwrap().data().to_vec();
        for (v, n) in y.iter_mut().zip(random_vec(geom.n_rays(), &mut rng(seed + 1))) {
            *v += 0.05 * n;
        }
        let sino = Sinogram::new(geom.clone(), y).unwrap();
        for kind in [TransformKind::Dct2, TransformKind::Identity] {
            let t = SparsifyingTransform::new(kind, 3, 3);
            let lambda1 = 0.1;
            let opts = CsOptions {
                lambda1,
                max_iterations: 50000,
                tolerance: 0.0,
                ..CsOptions::default()
            };
            let solver = ThetaSolver::new(&geom, &t, 50).unwrap();
            let sol = solver.solve(&sino, None, None, &opts).unwrap();
            record(&sol.objective_history);
            let (_, grad) = solver.smooth_value_and_gradient(&sino, &sol.coefficients, None);
            for (&th, &g) in sol.coefficients.iter().zip(&grad) {
                let v = if th == 0.0 { (g.abs() - lambda1).max(0.0) } else { (g + lambda1 * th.signum()).abs() };
                kkt = kkt.max(v);
            }
        }
    }

    // Realistic runs, with and without a prior term.
    let ds = generate_longitudinal_dataset(&LongitudinalSpec::potato(64, 4, 0.01, 5).unwrap()).unwrap();
    let geom = ScanGeometry::sparse_subset(64, 64, 360, 30).unwrap();
    let sino = forward_project(&ds.test, &geom).unwrap();
    let dct = SparsifyingTransform::dct(64, 64);
    for lambda1 in [0.0, 0.05, 0.2, 1.0] {
        let opts = CsOptions {
            lambda1,
            ..CsOptions::default()
        };
        record(&cs_solve(&sino, &dct, &opts).unwrap().objective_history);
    }
    let estimate = ds.templates.templates()[0].data().to_vec();
    let weights: Vec<f64> = random_vec(64 * 64, &mut rng(9)).iter().map(|v| 0.05 + 0.95 * v.abs()).collect();
    let solver = ThetaSolver::new(&geom, &dct, 30).unwrap();
    for lambda2 in [0.1, 10.0] {
        let prior = PriorTerm {
            estimate: &estimate,
            weights: &weights,
            lambda2,
        };
        let opts = CsOptions {
            lambda1: 0.2,
            ..CsOptions::default()
        };
        record(&solver.solve(&sino, None, Some(&prior), &opts).unwrap().objective_history);
    }

    // Finite differences of the smooth part.
    let mut fd_err = 0.0f64;
    let mut r = rng(5);
    for trial in 0..4 {
        let geom = ScanGeometry::parallel(6, 6, 7).unwrap();
        let kind = if trial % 2 == 0 { TransformKind::Dct2 } else { TransformKind::Identity };
        let t = SparsifyingTransform::new(kind, 6, 6);
        let sino = Sinogram::new(geom.clone(), random_vec(geom.n_rays(), &mut r)).unwrap();
        let estimate = random_vec(36, &mut r);
        let weights: Vec<f64> = random_vec(36, &mut r).iter().map(|v| v.abs()).collect();
        let prior = PriorTerm {
            estimate: &estimate,
            weights: &weights,
            lambda2: 0.7,
        };
        let solver = ThetaSolver::new(&geom, &t, 10).unwrap();
        let theta = random_vec(36, &mut r);
        let (_, grad) = solver.smooth_value_and_gradient(&sino, &theta, Some(&prior));
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let h = 1e-3;
        for i in 0..36 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = solver.smooth_value_and_gradient(&sino, &plus, Some(&prior)).0;
            let fm = solver.smooth_value_and_gradient(&sino, &minus, Some(&prior)).0;
            fd_err = fd_err.max(((fp - fm) / (2.0 * h) - grad[i]).abs() / gnorm);
        }
    }
    check(
        monotone && kkt < 1e-4 && fd_err < 1e-5,
        format!("monotone on {runs} runs: {monotone}, worst KKT violation {kkt:.2e}, worst gradient error {fd_err:.2e}"),
    )
}

fn eigenspace() -> Outcome {
    let random_set = |l: usize, seed: u64| {
        let mut r = rng(seed);
        TemplateSet::new((0..l).map(|_| random_image(16, 12, &mut r)).collect()).unwrap()
    };
    let mut reproduce = 0.0f64;
    let mut ortho = 0.0f64;
    let mut perm_dist = 0.0f64;
    for seed in [31u64, 32, 33] {
        let set = random_set(5, seed);
        let space = build_eigenspace(&set, 4).unwrap();
        for t in set.templates() {
            let (_, p) = project_onto_eigenspace(&space, t).unwrap();
            reproduce = reproduce.max(max_abs_diff(p.data(), t.data()));
        }
        let low = build_eigenspace(&set, 2).unwrap();
        let mut r = rng(seed + 100);
        for _ in 0..10 {
            let x = random_image(16, 12, &mut r);
            let (_, p) = project_onto_eigenspace(&low, &x).unwrap();
            let resid: Vec<f64> = x.data().iter().zip(p.data()).map(|(a, b)| a - b).collect();
            for c in low.components() {
                ortho = ortho.max(c.data().iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>().abs());
            }
        }
        let basis = |s: &longitomo::prior::Eigenspace| {
            let v = DMatrix::from_fn(s.mean().len(), s.rank(), |i, j| s.components()[j].data()[i]);
            &v * v.transpose()
        };
        for perm in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 2, 3, 4, 0]] {
            let shuffled = TemplateSet::new(perm.iter().map(|&i| set.templates()[i].clone()).collect()).unwrap();
            for rank in [2, 4] {
                let a = build_eigenspace(&set, rank).unwrap();
                let b = build_eigenspace(&shuffled, rank).unwrap();
                perm_dist = perm_dist.max((basis(&a) - basis(&b)).norm());
            }
        }
    }
    check(
        reproduce < 1e-8 && ortho < 1e-8 && perm_dist < 1e-8,
        format!("template reproduction {reproduce:.2e}, residual orthogonality {ortho:.2e}, permutation projector distance {perm_dist:.2e}"),
    )
}

fn split_means(image: &ImageGrid, regions: &[RegionOfInterest]) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for row in 0..image.height() {
        for col in 0..image.width() {
            if regions.iter().any(|r| r.contains(col, row)) {
                si += image.get(col, row);
                ni += 1;
            } else {
                so += image.get(col, row);
                no += 1;
            }
        }
    }
    (si / ni as f64, so / no as f64)
}

fn weight_semantics() -> Outcome {
    let ds = generate_longitudinal_dataset(&LongitudinalSpec::potato(128, 4, 0.01, 1).unwrap()).unwrap();
    let geom = ScanGeometry::sparse_subset(128, 128, 360, 45).unwrap();
    let sinos = simulate_template_sinograms(&ds.templates, &geom).unwrap();
    let ensemble = PilotMethod::default_ensemble(0.2);

    let start = Instant::now();
    let test = forward_project(&ds.test, &geom).unwrap();
    let pilots = build_pilot_set(&test, &sinos, &ensemble, 3).unwrap();
    let w = compute_weight_map(&pilots, 20.0, 1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut in_range = w.values().iter().all(|&v| v > 0.0 && v <= 1.0);
    let (inn, out) = split_means(w.as_grid(), &ds.new_regions);

    let same = build_pilot_set(&sinos[3], &sinos, &ensemble, 3).unwrap();
    let ws = compute_weight_map(&same, 20.0, 1.0).unwrap();
    in_range &= ws.values().iter().all(|&v| v > 0.0 && v <= 1.0);
    let deficit = ws.values().iter().map(|v| 1.0 - v).sum::<f64>() / ws.values().len() as f64;
    check(
        in_range && deficit < 0.05 && out - inn >= 0.1 && secs < 300.0,
        format!(
            "W in (0,1]: {in_range}, unchanged test mean(1-W) {deficit:.4}, defect W inside {inn:.3} outside {out:.3}, M=4 L=4 pilots {secs:.1} s"
        ),
    )
}

fn case_scores(cfg: &ExperimentConfig) -> longitomo::bench::BenchCase {
    run_case(cfg, false).unwrap()
}

fn potato_ordering() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let case = case_scores(&ExperimentConfig::default().with_seed(seed));
        let s = |m| case.scores(m).unwrap();
        let (fdk, cs, prior, weighted) = (s(Method::Fdk), s(Method::Cs), s(Method::Prior), s(Method::WeightedPrior));
        let pass = fdk.ssim_global < cs.ssim_global
            && cs.ssim_global < prior.ssim_global
            && weighted.ssim_roi >= prior.ssim_roi + 0.02;
        ok &= pass;
        lines.push(format!(
            "seed {seed}: global fdk {:.3} < cs {:.3} < prior {:.3}, roi weighted {:.3} vs prior {:.3}",
            fdk.ssim_global, cs.ssim_global, prior.ssim_global, weighted.ssim_roi, prior.ssim_roi
        ));
    }
    check(ok, lines.join("; "))
}

fn prior_only(preset: Preset, views: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Preset(preset),
        views,
        methods: vec![Method::Prior, Method::WeightedPrior],
        ..ExperimentConfig::default()
    }
    .with_seed(seed)
}

fn okra_absence() -> Outcome {
    let case = case_scores(&prior_only(Preset::Okra, 45, 1));
    let plain = case.scores(Method::Prior).unwrap().rmse_roi;
    let weighted = case.scores(Method::WeightedPrior).unwrap().rmse_roi;
    check(weighted < plain, format!("roi RMSE weighted {weighted:.4} vs plain {plain:.4}"))
}

fn sparsity_sweep() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    // 2.5%, 5% and 10% of 360 views.
    for views in [9, 18, 36] {
        for seed in [1u64, 2, 3] {
            let case = case_scores(&prior_only(Preset::Potato, views, seed));
            let plain = case.scores(Method::Prior).unwrap().ssim_roi;
            let weighted = case.scores(Method::WeightedPrior).unwrap().ssim_roi;
            ok &= weighted >= plain;
            lines.push(format!("{views} views seed {seed}: {weighted:.3} vs {plain:.3}"));
        }
    }
    check(ok, lines.join("; "))
}

fn tree_files(dir: &Path, prefix: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            tree_files(&p, prefix, out);
        } else {
            out.push((p.strip_prefix(prefix).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_longitomo"))
            .args(["bench", "--seed", "7", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(format!("bench failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        let mut files = Vec::new();
        tree_files(&out, &out, &mut files);
        trees.push(files);
    }
    let n = trees[0].len();
    let rasters = trees[0].iter().filter(|f| f.0.ends_with(".tpr")).count();
    check(
        n > 0 && trees[0] == trees[1],
        format!("{n} files, {rasters} of them rasters, byte-identical across two bench runs"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("projector adjoint", adjoint),
        ("dense oracle equivalence", oracle_equivalence),
        ("CS solver correctness", cs_solver),
        ("eigenspace correctness", eigenspace),
        ("weight-map semantics", weight_semantics),
        ("potato method ordering", potato_ordering),
        ("okra absent-structure case", okra_absence),
        ("ordering across view fractions", sparsity_sweep),
        ("bench determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
