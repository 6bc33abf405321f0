//! Compressed-sensing reconstruction by proximal gradient (FISTA).
//!
//! Both solvers minimize over the transform coefficients `theta`:
//!
//! ```text
//! ‖Φ Ψ θ − y‖² + λ1 ‖θ‖₁ + λ2 ‖W (Ψ θ − p)‖²
//! ```
//!
//! with the prior term absent for plain CS. Iterations use the monotone
//! restart rule: a candidate that would raise the objective is discarded and
//! the momentum reset, so the recorded objective never increases.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::projector::{self, back_project, forward_project, ScanGeometry, Sinogram};
use crate::transform::SparsifyingTransform;
use crate::weights::WeightMap;

/// Power-iteration estimates of the spectral norm are inflated by this factor.
pub const LIPSCHITZ_SAFETY: f64 = 1.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CsOptions {
    pub lambda1: f64,
    pub max_iterations: usize,
    /// Stop once the relative objective decrease of an accepted step falls below this.
    pub tolerance: f64,
    pub lipschitz_power_iters: usize,
}

impl Default for CsOptions {
    fn default() -> Self {
        CsOptions {
            lambda1: 0.0,
            max_iterations: 200,
            tolerance: 1e-5,
            lipschitz_power_iters: 30,
        }
    }
}

impl CsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return Err(Error::Validation(format!("lambda1 must be >= 0, got {}", self.lambda1)));
        }
        if self.max_iterations == 0 || self.lipschitz_power_iters == 0 {
            return Err(Error::Validation("iteration counts must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Validation("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a FISTA run.
#[derive(Clone, Debug)]
pub struct CsSolution {
    pub image: ImageGrid,
    pub coefficients: Vec<f64>,
    /// Objective at the start point followed by the value after every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl CsSolution {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }
}

/// Weighted quadratic prior `λ2 ‖W (x − p)‖²`.
#[derive(Clone, Debug)]
pub struct PriorTerm<'a> {
    pub estimate: &'a [f64],
    pub weights: &'a [f64],
    pub lambda2: f64,
}

impl PriorTerm<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = x
            .iter()
            .zip(self.estimate)
            .zip(self.weights)
            .map(|((xi, pi), wi)| (wi * (xi - pi)).powi(2))
            .sum();
        self.lambda2 * s
    }

    fn max_weight_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).fold(0.0, f64::max)
    }
}

/// A point in coefficient space with its cached image and projection.
#[derive(Clone)]
struct Iterate {
    theta: Vec<f64>,
    image: Vec<f64>,
    proj: Vec<f64>,
}

/// Reusable solver for one geometry and transform; caches the spectral norm.
pub struct ThetaSolver<'a> {
    geom: &'a ScanGeometry,
    transform: &'a SparsifyingTransform,
    sigma_max: f64,
}

impl<'a> ThetaSolver<'a> {
    pub fn new(geom: &'a ScanGeometry, transform: &'a SparsifyingTransform, power_iters: usize) -> Result<Self> {
        if transform.width() != geom.image_width() || transform.height() != geom.image_height() {
            return Err(Error::Geometry("transform and geometry dimensions differ".into()));
        }
        let sigma_max = projector::estimate_spectral_norm(geom, power_iters);
        Ok(ThetaSolver {
            geom,
            transform,
            sigma_max,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Safe step denominator for the smooth part.
    pub fn lipschitz(&self, prior: Option<&PriorTerm<'_>>) -> f64 {
        let data = 2.0 * self.sigma_max * self.sigma_max;
        let prior = prior.map_or(0.0, |p| 2.0 * p.lambda2 * p.max_weight_sq());
        LIPSCHITZ_SAFETY * (data + prior)
    }

    fn project(&self, image: &[f64]) -> Vec<f64> {
        let img = ImageGrid::new(self.geom.image_width(), self.geom.image_height(), image.to_vec())
            .expect("finite iterate");
        forward_project(&img, self.geom).expect("geometry matches").data().to_vec()
    }

    fn iterate(&self, theta: Vec<f64>) -> Iterate {
        let image = self.transform.synthesize(&theta);
        let proj = self.project(&image);
        Iterate { theta, image, proj }
    }

    fn objective(&self, it: &Iterate, y: &[f64], lambda1: f64, prior: Option<&PriorTerm<'_>>) -> f64 {
        let data: f64 = it.proj.iter().zip(y).map(|(p, m)| (p - m).powi(2)).sum();
        let l1: f64 = it.theta.iter().map(|t| t.abs()).sum();
        data + lambda1 * l1 + prior.map_or(0.0, |p| p.value(&it.image))
    }

    fn gradient(&self, it: &Iterate, y: &[f64], prior: Option<&PriorTerm<'_>>) -> Vec<f64> {
        let residual: Vec<f64> = it.proj.iter().zip(y).map(|(p, m)| 2.0 * (p - m)).collect();
        let sino = Sinogram::new(self.geom.clone(), residual).expect("finite residual");
        let mut g = back_project(&sino).into_data();
        if let Some(p) = prior {
            for (((gi, xi), pi), wi) in g.iter_mut().zip(&it.image).zip(p.estimate).zip(p.weights) {
                *gi += 2.0 * p.lambda2 * wi * wi * (xi - pi);
            }
        }
        self.transform.analyze(&g)
    }

    /// Value and gradient (with respect to `theta`) of the smooth part.
    pub fn smooth_value_and_gradient(
        &self,
        sino: &Sinogram,
        theta: &[f64],
        prior: Option<&PriorTerm<'_>>,
    ) -> (f64, Vec<f64>) {
        let it = self.iterate(theta.to_vec());
        let value = self.objective(&it, sino.data(), 0.0, prior);
        (value, self.gradient(&it, sino.data(), prior))
    }

    /// Full objective at `theta`.
    pub fn objective_at(&self, sino: &Sinogram, theta: &[f64], lambda1: f64, prior: Option<&PriorTerm<'_>>) -> f64 {
        self.objective(&self.iterate(theta.to_vec()), sino.data(), lambda1, prior)
    }

    pub fn solve(
        &self,
        sino: &Sinogram,
        initial_theta: Option<Vec<f64>>,
        prior: Option<&PriorTerm<'_>>,
        opts: &CsOptions,
    ) -> Result<CsSolution> {
        opts.validate()?;
        if sino.geometry() != self.geom {
            return Err(Error::Geometry("sinogram geometry differs from solver geometry".into()));
        }
        let n = self.geom.n_pixels();
        if let Some(p) = prior {
            if p.estimate.len() != n || p.weights.len() != n {
                return Err(Error::Validation("prior estimate or weights have wrong size".into()));
            }
            if !(p.lambda2.is_finite() && p.lambda2 >= 0.0) {
                return Err(Error::Validation(format!("lambda2 must be >= 0, got {}", p.lambda2)));
            }
        }
        let theta0 = match initial_theta {
            Some(t) if t.len() == n => t,
            Some(t) => return Err(Error::Length { expected: n, found: t.len() }),
            None => vec![0.0; n],
        };
        let y = sino.data();
        let lip = self.lipschitz(prior);
        let lambda1 = opts.lambda1;

        let mut current = self.iterate(theta0);
        let mut f_current = self.objective(&current, y, lambda1, prior);
        let mut history = vec![f_current];
        if lip == 0.0 {
            return self.finish(current, history, 0);
        }
        let step = 1.0 / lip;
        let threshold = lambda1 * step;

        let mut extrapolated = current.clone();
        let mut t = 1.0f64;
        let mut iterations = 0;
        for _ in 0..opts.max_iterations {
            iterations += 1;
            let grad = self.gradient(&extrapolated, y, prior);
            let theta: Vec<f64> = extrapolated
                .theta
                .iter()
                .zip(&grad)
                .map(|(v, g)| soft_threshold(v - step * g, threshold))
                .collect();
            let candidate = self.iterate(theta);
            let f_candidate = self.objective(&candidate, y, lambda1, prior);

            if f_candidate > f_current {
                // Restart from the last accepted point without momentum.
                t = 1.0;
                extrapolated = current.clone();
                history.push(f_current);
                continue;
            }

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            extrapolated = Iterate {
                theta: extrapolate(&candidate.theta, &current.theta, beta),
                image: extrapolate(&candidate.image, &current.image, beta),
                proj: extrapolate(&candidate.proj, &current.proj, beta),
            };
            t = t_next;

            let decrease = f_current - f_candidate;
            current = candidate;
            f_current = f_candidate;
            history.push(f_current);
            if !f_current.is_finite() {
                return Err(Error::Numerical("FISTA objective became non-finite".into()));
            }
            if decrease <= opts.tolerance * f_current.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        self.finish(current, history, iterations)
    }

    fn finish(&self, it: Iterate, history: Vec<f64>, iterations: usize) -> Result<CsSolution> {
        if it.image.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("FISTA produced non-finite values".into()));
        }
        let image = ImageGrid::new(self.geom.image_width(), self.geom.image_height(), it.image)?;
        Ok(CsSolution {
            image,
            coefficients: it.theta,
            objective_history: history,
            iterations,
        })
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `a + beta (a - b)`
fn extrapolate(a: &[f64], b: &[f64], beta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + beta * (x - y)).collect()
}

/// Plain CS: minimizes `‖Φ Ψ θ − y‖² + λ1 ‖θ‖₁` from `θ = 0`.
pub fn cs_reconstruct(sino: &Sinogram, transform: &SparsifyingTransform, opts: &CsOptions) -> Result<ImageGrid> {
    cs_solve(sino, transform, opts).map(|s| s.image)
}

pub fn cs_solve(sino: &Sinogram, transform: &SparsifyingTransform, opts: &CsOptions) -> Result<CsSolution> {
    opts.validate()?;
    ThetaSolver::new(sino.geometry(), transform, opts.lipschitz_power_iters)?.solve(sino, None, None, opts)
}

/// The coefficient step of the weighted-prior objective with the prior
/// estimate `p = μ + V α` held fixed. Starts from `θ = 0`.
pub fn solve_theta_subproblem(
    sino: &Sinogram,
    transform: &SparsifyingTransform,
    prior_estimate: &ImageGrid,
    weights: &WeightMap,
    lambda1: f64,
    lambda2: f64,
    opts: &CsOptions,
) -> Result<ImageGrid> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::Validation(format!(
            "lambda1 and lambda2 must be >= 0, got {lambda1} and {lambda2}"
        )));
    }
    sino.geometry().check_image(prior_estimate)?;
    sino.geometry().check_image(weights.as_grid())?;
    let opts = CsOptions { lambda1, ..opts.clone() };
    let prior = PriorTerm {
        estimate: prior_estimate.data(),
        weights: weights.values(),
        lambda2,
    };
    let solver = ThetaSolver::new(sino.geometry(), transform, opts.lipschitz_power_iters)?;
    Ok(solver.solve(sino, None, Some(&prior), &opts)?.image)
}

/// Sum of squared sinogram residuals, `‖Φ x − y‖²`.
pub fn data_term(image: &ImageGrid, sino: &Sinogram) -> Result<f64> {
    let proj = forward_project(image, sino.geometry())?;
    Ok(proj
        .data()
        .iter()
        .zip(sino.data())
        .map(|(p, m)| (p - m).powi(2))
        .sum())
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
