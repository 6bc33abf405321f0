//! Algebraic reconstruction: ART (Kaczmarz row action), SART (angle blocks)
//! and SIRT (simultaneous updates).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::projector::{self, back_project_rows, Sinogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlgebraicMethod {
    Art,
    Sart,
    Sirt,
}

impl AlgebraicMethod {
    /// Default iteration budget for pilot use.
    pub fn default_iterations(self) -> usize {
        match self {
            AlgebraicMethod::Art => 10,
            AlgebraicMethod::Sart => 20,
            AlgebraicMethod::Sirt => 100,
        }
    }
}

impl FromStr for AlgebraicMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "art" => Ok(AlgebraicMethod::Art),
            "sart" => Ok(AlgebraicMethod::Sart),
            "sirt" => Ok(AlgebraicMethod::Sirt),
            other => Err(Error::Validation(format!("unknown algebraic method `{other}`"))),
        }
    }
}

impl fmt::Display for AlgebraicMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlgebraicMethod::Art => "ART",
            AlgebraicMethod::Sart => "SART",
            AlgebraicMethod::Sirt => "SIRT",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraicOptions {
    pub method: AlgebraicMethod,
    /// Full sweeps (ART), angle-block passes (SART) or updates (SIRT).
    pub iterations: usize,
    /// Relaxation factor, in (0, 2).
    pub relaxation: f64,
    pub initial: Option<ImageGrid>,
}

impl AlgebraicOptions {
    pub fn new(method: AlgebraicMethod) -> Self {
        AlgebraicOptions {
            method,
            iterations: method.default_iterations(),
            relaxation: 1.0,
            initial: None,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_relaxation(mut self, relaxation: f64) -> Self {
        self.relaxation = relaxation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::Validation(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

pub fn algebraic_reconstruct(sino: &Sinogram, opts: &AlgebraicOptions) -> Result<ImageGrid> {
    algebraic_reconstruct_traced(sino, opts, |_, _| {})
}

/// As [`algebraic_reconstruct`], calling `observe(iteration, pixels)` after
/// every iteration (1-based).
pub fn algebraic_reconstruct_traced(
    sino: &Sinogram,
    opts: &AlgebraicOptions,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<ImageGrid> {
    opts.validate()?;
    let geom = sino.geometry();
    let mut x = match &opts.initial {
        Some(init) => {
            geom.check_image(init)?;
            init.data().to_vec()
        }
        None => vec![0.0; geom.n_pixels()],
    };
    match opts.method {
        AlgebraicMethod::Art => art(sino, opts, &mut x, &mut observe),
        AlgebraicMethod::Sart => sart(sino, opts, &mut x, &mut observe),
        AlgebraicMethod::Sirt => sirt(sino, opts, &mut x, &mut observe),
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{} produced non-finite values", opts.method)));
    }
    ImageGrid::new(geom.image_width(), geom.image_height(), x)
}

fn art(sino: &Sinogram, opts: &AlgebraicOptions, x: &mut [f64], observe: &mut impl FnMut(usize, &[f64])) {
    let geom = sino.geometry();
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for iter in 1..=opts.iterations {
        // Angle-major ray order.
        for a in 0..geom.n_angles() {
            let row = sino.row(a);
            for (d, &y) in row.iter().enumerate() {
                weights.clear();
                geom.for_each_ray_weight(a, d, |p, w| weights.push((p, w)));
                let norm_sq: f64 = weights.iter().map(|(_, w)| w * w).sum();
                if norm_sq == 0.0 {
                    continue;
                }
                let estimate: f64 = weights.iter().map(|&(p, w)| w * x[p]).sum();
                let step = opts.relaxation * (y - estimate) / norm_sq;
                for &(p, w) in &weights {
                    x[p] += step * w;
                }
            }
        }
        observe(iter, x);
    }
}

fn invert_nonzero(v: &mut [f64]) {
    for s in v.iter_mut() {
        *s = if *s > 0.0 { 1.0 / *s } else { 0.0 };
    }
}

fn sart(sino: &Sinogram, opts: &AlgebraicOptions, x: &mut [f64], observe: &mut impl FnMut(usize, &[f64])) {
    let geom = sino.geometry();
    let n_det = geom.n_detectors();
    let n_pix = geom.n_pixels();
    let ones_img = vec![1.0; n_pix];
    let ones_row = vec![1.0; n_det];

    let mut inv_row = vec![0.0; geom.n_rays()];
    let mut inv_col = vec![0.0; geom.n_angles() * n_pix];
    for a in 0..geom.n_angles() {
        let rows = &mut inv_row[a * n_det..(a + 1) * n_det];
        projector::project_angle(&ones_img, geom, a, rows);
        invert_nonzero(rows);
        let cols = &mut inv_col[a * n_pix..(a + 1) * n_pix];
        projector::back_project_angle(&ones_row, geom, a, cols);
        invert_nonzero(cols);
    }

    let mut residual = vec![0.0; n_det];
    let mut correction = vec![0.0; n_pix];
    for iter in 1..=opts.iterations {
        for a in 0..geom.n_angles() {
            projector::project_angle(x, geom, a, &mut residual);
            for ((r, &y), &w) in residual.iter_mut().zip(sino.row(a)).zip(&inv_row[a * n_det..]) {
                *r = (y - *r) * w;
            }
            correction.iter_mut().for_each(|c| *c = 0.0);
            projector::back_project_angle(&residual, geom, a, &mut correction);
            for ((xp, &c), &w) in x.iter_mut().zip(&correction).zip(&inv_col[a * n_pix..]) {
                *xp += opts.relaxation * w * c;
            }
        }
        observe(iter, x);
    }
}

/// Inverse row and column sums of the projector (zero where the sum is zero).
pub(crate) fn sirt_weights(sino: &Sinogram) -> (Vec<f64>, Vec<f64>) {
    let geom = sino.geometry();
    let ones = ImageGrid::filled(geom.image_width(), geom.image_height(), 1.0);
    let mut inv_row = projector::forward_project(&ones, geom)
        .expect("geometry matches")
        .data()
        .to_vec();
    invert_nonzero(&mut inv_row);
    let ones_sino = vec![1.0; geom.n_rays()];
    let n_det = geom.n_detectors();
    let mut inv_col = back_project_rows(geom, 0..geom.n_angles(), |a| &ones_sino[a * n_det..(a + 1) * n_det]);
    invert_nonzero(&mut inv_col);
    (inv_row, inv_col)
}

fn sirt(sino: &Sinogram, opts: &AlgebraicOptions, x: &mut [f64], observe: &mut impl FnMut(usize, &[f64])) {
    let geom = sino.geometry();
    let (inv_row, inv_col) = sirt_weights(sino);
    let n_det = geom.n_detectors();
    for iter in 1..=opts.iterations {
        let img = ImageGrid::new(geom.image_width(), geom.image_height(), x.to_vec())
            .expect("finite iterate");
        let proj = projector::forward_project(&img, geom).expect("geometry matches");
        let weighted: Vec<f64> = proj
            .data()
            .iter()
            .zip(sino.data())
            .zip(&inv_row)
            .map(|((p, y), w)| (y - p) * w)
            .collect();
        let update = back_project_rows(geom, 0..geom.n_angles(), |a| &weighted[a * n_det..(a + 1) * n_det]);
        for ((xp, u), c) in x.iter_mut().zip(&update).zip(&inv_col) {
            *xp += opts.relaxation * c * u;
        }
        observe(iter, x);
    }
}
