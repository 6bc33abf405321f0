mod common;

use common::{interior_rmse, random_image, random_vec, rng, smooth_disk};
use longitomo::algebraic::{algebraic_reconstruct, algebraic_reconstruct_traced, AlgebraicMethod, AlgebraicOptions};
use longitomo::cs::{cs_solve, solve_theta_subproblem, CsOptions, PriorTerm, ThetaSolver};
use longitomo::fbp::{fbp_reconstruct, RampFilter};
use longitomo::projector::{dense_system_matrix, forward_project};
use longitomo::transform::{SparsifyingTransform, TransformKind};
use longitomo::weights::WeightMap;
use longitomo::{ImageGrid, ScanGeometry, Sinogram};
use nalgebra::{DMatrix, DVector};

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Least-squares solution of the dense system, which has full column rank.
fn least_squares(geom: &ScanGeometry, sino: &Sinogram) -> Vec<f64> {
    let a = dense_system_matrix(geom).unwrap();
    let y = DVector::from_column_slice(sino.data());
    let qr = a.qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap().as_slice().to_vec()
}

/// 8 angles and half-pixel detector bins: dense in both directions, so the
/// system is well conditioned and has full column rank.
fn dense_4x4() -> ScanGeometry {
    let angles = (0..8).map(|i| i as f64 * std::f64::consts::PI / 8.0).collect();
    ScanGeometry::new(4, 4, angles, 12, 0.5).unwrap()
}

fn consistent_4x4(seed: u64) -> (ScanGeometry, Sinogram, ImageGrid) {
    let geom = dense_4x4();
    let x = random_image(4, 4, &mut rng(seed)).map(|v| v + 1.5).unwrap();
    let sino = forward_project(&x, &geom).unwrap();
    (geom, sino, x)
}

fn fbp_disk_rmse(views: usize) -> f64 {
    let size = 64;
    let disk = smooth_disk(size, 0.3 * size as f64, 4.0);
    let geom = ScanGeometry::parallel(size, size, views).unwrap();
    let recon = fbp_reconstruct(&forward_project(&disk, &geom).unwrap(), RampFilter::RamLak).unwrap();
    interior_rmse(&recon, &disk, 0.45 * size as f64)
}

#[test]
fn fbp_disk_converges_with_views() {
    let r12 = fbp_disk_rmse(12);
    let r45 = fbp_disk_rmse(45);
    let r180 = fbp_disk_rmse(180);
    assert!(r180 < 0.05, "{r180}");
    assert!(r12 > r45 && r45 > r180, "{r12} {r45} {r180}");
}

#[test]
fn hann_filter_also_reconstructs() {
    let size = 64;
    let disk = smooth_disk(size, 0.3 * size as f64, 4.0);
    let geom = ScanGeometry::parallel(size, size, 180).unwrap();
    let recon = fbp_reconstruct(&forward_project(&disk, &geom).unwrap(), RampFilter::Hann).unwrap();
    assert!(interior_rmse(&recon, &disk, 0.45 * size as f64) < 0.06);
}

#[test]
fn algebraic_methods_match_least_squares() {
    for seed in [1, 2, 3] {
        let (geom, sino, truth) = consistent_4x4(seed);
        let ls = least_squares(&geom, &sino);
        assert!(rmse(&ls, truth.data()) < 1e-8);
        for (method, iterations) in [(AlgebraicMethod::Art, 200), (AlgebraicMethod::Sart, 500), (AlgebraicMethod::Sirt, 500)] {
            let x = algebraic_reconstruct(&sino, &AlgebraicOptions::new(method).with_iterations(iterations)).unwrap();
            let e = rmse(x.data(), &ls);
            assert!(e < 2e-2, "{method} seed {seed}: {e}");
        }
    }
}

#[test]
fn sirt_relative_residual_after_500() {
    let (geom, sino, _) = consistent_4x4(9);
    let x = algebraic_reconstruct(&sino, &AlgebraicOptions::new(AlgebraicMethod::Sirt).with_iterations(500)).unwrap();
    let r = forward_project(&x, &geom).unwrap();
    let res: f64 = r.data().iter().zip(sino.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(res / sino.norm() < 1e-3, "{}", res / sino.norm());
    assert!(rmse(x.data(), &least_squares(&geom, &sino)) < 1e-2);
}

#[test]
fn sirt_residual_monotone_on_disk() {
    let size = 64;
    let disk = smooth_disk(size, 0.3 * size as f64, 4.0);
    let geom = ScanGeometry::sparse_subset(size, size, 360, 45).unwrap();
    let sino = forward_project(&disk, &geom).unwrap();
    let mut residuals = vec![sino.norm()];
    let opts = AlgebraicOptions::new(AlgebraicMethod::Sirt).with_iterations(60).with_relaxation(1.0);
    algebraic_reconstruct_traced(&sino, &opts, |_, x| {
        let img = ImageGrid::new(size, size, x.to_vec()).unwrap();
        let p = forward_project(&img, &geom).unwrap();
        residuals.push(p.data().iter().zip(sino.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    })
    .unwrap();
    for w in residuals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{residuals:?}");
    }
}

#[test]
fn cs_without_sparsity_matches_least_squares() {
    let (geom, sino, _) = consistent_4x4(4);
    let ls = least_squares(&geom, &sino);
    let opts = CsOptions {
        lambda1: 0.0,
        max_iterations: 20000,
        tolerance: 0.0,
        ..CsOptions::default()
    };
    let sol = cs_solve(&sino, &SparsifyingTransform::dct(4, 4), &opts).unwrap();
    assert!(rmse(sol.image.data(), &ls) < 1e-3);
}

fn kkt_instance() -> (ScanGeometry, Sinogram) {
    let geom = ScanGeometry::new(3, 3, vec![0.3, 1.9], 5, 1.0).unwrap();
    let x = random_image(3, 3, &mut rng(21)).map(|v| v + 1.0).unwrap();
    let mut y = forward_project(&x, &geom).unwrap().data().to_vec();
    for (v, n) in y.iter_mut().zip(random_vec(geom.n_rays(), &mut rng(22))) {
        *v += 0.05 * n;
    }
    let sino = Sinogram::new(geom.clone(), y).unwrap();
    (geom, sino)
}

#[test]
fn fista_satisfies_kkt_conditions() {
    let (geom, sino) = kkt_instance();
    assert_eq!(geom.n_rays(), 10);
    let lambda1 = 0.1;
    for kind in [TransformKind::Dct2, TransformKind::Identity] {
        let t = SparsifyingTransform::new(kind, 3, 3);
        let opts = CsOptions {
            lambda1,
            max_iterations: 50000,
            tolerance: 0.0,
            ..CsOptions::default()
        };
        let solver = ThetaSolver::new(&geom, &t, 50).unwrap();
        let sol = solver.solve(&sino, None, None, &opts).unwrap();
        let (_, grad) = solver.smooth_value_and_gradient(&sino, &sol.coefficients, None);
        for (i, (&th, &g)) in sol.coefficients.iter().zip(&grad).enumerate() {
            if th == 0.0 {
                assert!(g.abs() <= lambda1 + 1e-4, "{kind} coeff {i}: |{g}| > lambda1");
            } else {
                assert!((g + lambda1 * th.signum()).abs() < 1e-4, "{kind} coeff {i}: {g} vs {th}");
            }
        }
        for w in sol.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}

#[test]
fn smooth_gradient_matches_finite_differences() {
    let mut r = rng(5);
    for trial in 0..4 {
        let geom = ScanGeometry::parallel(6, 6, 7).unwrap();
        let t = SparsifyingTransform::new(if trial % 2 == 0 { TransformKind::Dct2 } else { TransformKind::Identity }, 6, 6);
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
        let h = 1e-3;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        for i in 0..36 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = solver.smooth_value_and_gradient(&sino, &plus, Some(&prior)).0;
            let fm = solver.smooth_value_and_gradient(&sino, &minus, Some(&prior)).0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * gnorm, "trial {trial} coeff {i}: {fd} vs {}", grad[i]);
        }
    }
}

/// Cyclic coordinate descent on the dense form of the weighted-prior objective.
fn coordinate_descent(a: &DMatrix<f64>, psi: &DMatrix<f64>, y: &[f64], w: &[f64], p: &[f64], l1: f64, l2: f64) -> (Vec<f64>, f64) {
    let n = psi.ncols();
    // Stack the data and prior blocks into one least-squares system B theta ~ c.
    let m = a.nrows();
    let ap = a * psi;
    let mut b = DMatrix::zeros(m + n, n);
    let mut c = DVector::zeros(m + n);
    for i in 0..m {
        for j in 0..n {
            b[(i, j)] = ap[(i, j)];
        }
        c[i] = y[i];
    }
    let s = l2.sqrt();
    for i in 0..n {
        for j in 0..n {
            b[(m + i, j)] = s * w[i] * psi[(i, j)];
        }
        c[m + i] = s * w[i] * p[i];
    }
    let col_sq: Vec<f64> = (0..n).map(|j| b.column(j).norm_squared()).collect();
    let mut theta: DVector<f64> = DVector::zeros(n);
    let mut r = c.clone();
    for _ in 0..200000 {
        let mut moved = 0.0f64;
        for j in 0..n {
            let rho = b.column(j).dot(&r) + col_sq[j] * theta[j];
            let new = if rho > l1 / 2.0 {
                (rho - l1 / 2.0) / col_sq[j]
            } else if rho < -l1 / 2.0 {
                (rho + l1 / 2.0) / col_sq[j]
            } else {
                0.0
            };
            let delta = new - theta[j];
            if delta != 0.0 {
                r.axpy(-delta, &b.column(j), 1.0);
                theta[j] = new;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    let value = (&b * &theta - &c).norm_squared() + l1 * theta.iter().map(|v| v.abs()).sum::<f64>();
    (theta.as_slice().to_vec(), value)
}

#[test]
fn theta_step_matches_coordinate_descent() {
    let (geom, sino) = kkt_instance();
    let t = SparsifyingTransform::dct(3, 3);
    let psi = DMatrix::from_fn(9, 9, |i, j| {
        let mut e = vec![0.0; 9];
        e[j] = 1.0;
        t.synthesize(&e)[i]
    });
    let a = dense_system_matrix(&geom).unwrap();
    let mut r = rng(8);
    let p = random_vec(9, &mut r);
    let w: Vec<f64> = random_vec(9, &mut r).iter().map(|v| 0.2 + 0.8 * v.abs()).collect();
    let (l1, l2) = (0.1, 0.5);
    let (_, oracle) = coordinate_descent(&a, &psi, sino.data(), &w, &p, l1, l2);

    let prior = PriorTerm {
        estimate: &p,
        weights: &w,
        lambda2: l2,
    };
    let opts = CsOptions {
        lambda1: l1,
        max_iterations: 50000,
        tolerance: 0.0,
        ..CsOptions::default()
    };
    let solver = ThetaSolver::new(&geom, &t, 50).unwrap();
    let sol = solver.solve(&sino, None, Some(&prior), &opts).unwrap();
    let fista = sol.final_objective();
    assert!((fista - oracle).abs() <= 1e-6 * oracle.abs(), "{fista} vs {oracle}");

    // The public wrapper solves the same problem.
    let wm = WeightMap::from_values(ImageGrid::new(3, 3, w.clone()).unwrap()).unwrap();
    let img = solve_theta_subproblem(&sino, &t, &ImageGrid::new(3, 3, p.clone()).unwrap(), &wm, l1, l2, &opts).unwrap();
    assert!(rmse(img.data(), sol.image.data()) < 1e-6);
}

#[test]
fn prior_dominates_with_huge_lambda2() {
    let geom = ScanGeometry::parallel(8, 8, 6).unwrap();
    let mut r = rng(12);
    let sino = Sinogram::new(geom.clone(), random_vec(geom.n_rays(), &mut r)).unwrap();
    let p = random_image(8, 8, &mut r);
    let t = SparsifyingTransform::dct(8, 8);
    let solver = ThetaSolver::new(&geom, &t, 30).unwrap();
    let lambda2 = 1e4 * solver.sigma_max().powi(2);
    let opts = CsOptions {
        lambda1: 0.0,
        max_iterations: 2000,
        tolerance: 1e-14,
        ..CsOptions::default()
    };
    let x = solve_theta_subproblem(&sino, &t, &p, &WeightMap::ones(8, 8), 0.0, lambda2, &opts).unwrap();
    assert!(rmse(x.data(), p.data()) < 1e-2);
}

#[test]
fn theta_step_without_prior_weight_is_plain_cs() {
    let (geom, sino, _) = consistent_4x4(6);
    let t = SparsifyingTransform::dct(4, 4);
    let opts = CsOptions {
        lambda1: 0.05,
        ..CsOptions::default()
    };
    let plain = cs_solve(&sino, &t, &opts).unwrap().image;
    let p = random_image(4, 4, &mut rng(1));
    let x = solve_theta_subproblem(&sino, &t, &p, &WeightMap::ones(4, 4), 0.05, 0.0, &opts).unwrap();
    assert_eq!(x, plain);
    assert_eq!(geom.n_angles(), 8);
}
