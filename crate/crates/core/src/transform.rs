//! Orthonormal sparsifying transforms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransformKind {
    #[default]
    Dct2,
    Identity,
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dct" | "dct2" => Ok(TransformKind::Dct2),
            "identity" => Ok(TransformKind::Identity),
            other => Err(Error::Validation(format!("unknown transform `{other}`"))),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Dct2 => "dct2",
            TransformKind::Identity => "identity",
        })
    }
}

/// The basis `Psi`: images are `x = Psi theta`, coefficients `theta = Psiᵀ x`.
///
/// The 2D DCT-II is applied separably with precomputed orthonormal cosine
/// tables, so `analyze` and `synthesize` are exact transposes.
#[derive(Clone, Debug)]
pub struct SparsifyingTransform {
    kind: TransformKind,
    width: usize,
    height: usize,
    cos_w: Vec<f64>,
    cos_h: Vec<f64>,
}

fn dct_table(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            t[k * n + i] = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    t
}

impl SparsifyingTransform {
    pub fn new(kind: TransformKind, width: usize, height: usize) -> Self {
        let (cos_w, cos_h) = match kind {
            TransformKind::Dct2 => (dct_table(width), dct_table(height)),
            TransformKind::Identity => (Vec::new(), Vec::new()),
        };
        SparsifyingTransform {
            kind,
            width,
            height,
            cos_w,
            cos_h,
        }
    }

    pub fn dct(width: usize, height: usize) -> Self {
        Self::new(TransformKind::Dct2, width, height)
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `theta = Psiᵀ x` on raw row-major buffers.
    pub fn analyze(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, false)
    }

    /// `x = Psi theta` on raw row-major buffers.
    pub fn synthesize(&self, theta: &[f64]) -> Vec<f64> {
        self.apply(theta, true)
    }

    fn apply(&self, input: &[f64], inverse: bool) -> Vec<f64> {
        assert_eq!(input.len(), self.width * self.height, "transform size mismatch");
        match self.kind {
            TransformKind::Identity => input.to_vec(),
            TransformKind::Dct2 => {
                let rows = apply_rows(input, self.width, self.height, &self.cos_w, inverse);
                apply_cols(&rows, self.width, self.height, &self.cos_h, inverse)
            }
        }
    }

    fn check(&self, image: &ImageGrid) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::Validation(format!(
                "transform is {}x{} but image is {}x{}",
                self.width,
                self.height,
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    pub fn transform_forward(&self, x: &ImageGrid) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.analyze(x.data()))
    }

    pub fn transform_inverse(&self, theta: &[f64]) -> Result<ImageGrid> {
        if theta.len() != self.width * self.height {
            return Err(Error::Length {
                expected: self.width * self.height,
                found: theta.len(),
            });
        }
        ImageGrid::new(self.width, self.height, self.synthesize(theta))
    }
}

/// Transforms every row. Forward: `out[k] = sum_i T[k,i] in[i]`; inverse uses `Tᵀ`.
fn apply_rows(input: &[f64], w: usize, h: usize, table: &[f64], inverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        let src = &input[r * w..(r + 1) * w];
        let dst = &mut out[r * w..(r + 1) * w];
        transform_line(src, dst, table, inverse);
    }
    out
}

fn apply_cols(input: &[f64], w: usize, h: usize, table: &[f64], inverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut src = vec![0.0; h];
    let mut dst = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            src[r] = input[r * w + c];
        }
        transform_line(&src, &mut dst, table, inverse);
        for r in 0..h {
            out[r * w + c] = dst[r];
        }
    }
    out
}

fn transform_line(src: &[f64], dst: &mut [f64], table: &[f64], inverse: bool) {
    let n = src.len();
    if inverse {
        dst.iter_mut().for_each(|d| *d = 0.0);
        for (k, &s) in src.iter().enumerate() {
            if s != 0.0 {
                let row = &table[k * n..(k + 1) * n];
                for (d, &t) in dst.iter_mut().zip(row) {
                    *d += t * s;
                }
            }
        }
    } else {
        for (k, d) in dst.iter_mut().enumerate() {
            let row = &table[k * n..(k + 1) * n];
            *d = row.iter().zip(src).map(|(t, s)| t * s).sum();
        }
    }
}
