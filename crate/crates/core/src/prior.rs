//! Eigenspace priors built from aligned template sets.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{self, ImageGrid};
use crate::kv;
use crate::weights::WeightMap;

/// Singular values below this fraction of the largest are discarded.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

/// Tikhonov factor for the weighted coefficient solve, relative to the
/// mean diagonal of the normal matrix.
pub const ALPHA_RIDGE: f64 = 1e-10;

/// `L >= 2` templates of identical dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSet {
    templates: Vec<ImageGrid>,
}

impl TemplateSet {
    pub fn new(templates: Vec<ImageGrid>) -> Result<Self> {
        if templates.len() < 2 {
            return Err(Error::Validation(format!(
                "a template set needs at least 2 templates, got {}",
                templates.len()
            )));
        }
        for t in &templates[1..] {
            templates[0].check_shape(t, "template set")?;
        }
        Ok(TemplateSet { templates })
    }

    pub fn templates(&self) -> &[ImageGrid] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.templates[0].width()
    }

    pub fn height(&self) -> usize {
        self.templates[0].height()
    }

    /// SHA-256 of each template's TPRASTER encoding.
    pub fn checksums(&self) -> Result<Vec<String>> {
        self.templates
            .iter()
            .map(|t| Ok(hex::encode(Sha256::digest(grid::encode_raster(t)?))))
            .collect()
    }
}

/// Mean image plus orthonormal principal directions of a template set.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenspace {
    mean: ImageGrid,
    components: Vec<ImageGrid>,
    singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaCoefficients(pub Vec<f64>);

impl AlphaCoefficients {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Eigenspace {
    pub fn new(mean: ImageGrid, components: Vec<ImageGrid>, singular_values: Vec<f64>) -> Result<Self> {
        for c in &components {
            mean.check_shape(c, "eigenspace component")?;
        }
        if singular_values.len() != components.len() {
            return Err(Error::Validation("one singular value per component required".into()));
        }
        Ok(Eigenspace {
            mean,
            components,
            singular_values,
        })
    }

    pub fn mean(&self) -> &ImageGrid {
        &self.mean
    }

    pub fn components(&self) -> &[ImageGrid] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Number of retained components.
    pub fn rank(&self) -> usize {
        self.components.len()
    }

    /// `μ + V α`
    pub fn synthesize(&self, alpha: &AlphaCoefficients) -> Result<ImageGrid> {
        if alpha.len() != self.rank() {
            return Err(Error::Length {
                expected: self.rank(),
                found: alpha.len(),
            });
        }
        let mut out = self.mean.data().to_vec();
        for (c, &a) in self.components.iter().zip(alpha.values()) {
            for (o, v) in out.iter_mut().zip(c.data()) {
                *o += a * v;
            }
        }
        ImageGrid::new(self.mean.width(), self.mean.height(), out)
    }

    pub fn save(&self, dir: impl AsRef<Path>, source_checksums: &[String]) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        grid::save_raster(&self.mean, dir.join("mean.tpr"))?;
        for (i, c) in self.components.iter().enumerate() {
            grid::save_raster(c, dir.join(format!("component_{i:02}.tpr")))?;
        }
        let mut w = kv::Writer::new();
        w.comment("eigenspace manifest")
            .entry("rank", self.rank())
            .entry("width", self.mean.width())
            .entry("height", self.mean.height());
        let sv: Vec<String> = self.singular_values.iter().map(|s| format!("{s:?}")).collect();
        w.entry("singular_values", sv.join(","));
        w.entry("sources", source_checksums.len());
        for (i, c) in source_checksums.iter().enumerate() {
            w.entry(&format!("source_sha256.{i}"), c);
        }
        w.write(dir.join("manifest.txt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = kv::read(dir.join("manifest.txt"))?;
        let rank: usize = kv::require(&entries, "rank")?.parse()?;
        let singular_values: Vec<f64> = kv::require(&entries, "singular_values")?.parse_list()?;
        let mean = grid::load_raster(dir.join("mean.tpr"))?;
        let components = (0..rank)
            .map(|i| grid::load_raster(dir.join(format!("component_{i:02}.tpr"))))
            .collect::<Result<Vec<_>>>()?;
        Eigenspace::new(mean, components, singular_values)
    }
}

/// Hestenes one-sided Jacobi: rotates column pairs until all columns are
/// mutually orthogonal. The column norms are then the singular values and the
/// normalized columns the left singular vectors. Stays accurate when the
/// matrix is rank deficient, which centered templates always are.
fn one_sided_jacobi(columns: &mut [Vec<f64>]) {
    const MAX_SWEEPS: usize = 60;
    let l = columns.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..l {
            for j in i + 1..l {
                let (head, tail) = columns.split_at_mut(j);
                let (a, b) = (&mut head[i], &mut tail[0]);
                let alpha = grid::dot(a, a);
                let beta = grid::dot(b, b);
                let gamma = grid::dot(a, b);
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let (xa, yb) = (*x, *y);
                    *x = c * xa - s * yb;
                    *y = s * xa + c * yb;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Principal subspace of the centered templates, via thin SVD.
///
/// Keeps at most `rank` left singular vectors and drops those whose singular
/// value is below [`SINGULAR_CUTOFF`] times the largest; the retained count
/// is the eigenspace's effective rank.
pub fn build_eigenspace(set: &TemplateSet, rank: usize) -> Result<Eigenspace> {
    let l = set.len();
    if rank == 0 || rank > l - 1 {
        return Err(Error::Rank {
            requested: rank,
            max: l - 1,
        });
    }
    let (w, h) = (set.width(), set.height());
    let n = w * h;
    let mut mean = vec![0.0; n];
    for t in set.templates() {
        for (m, v) in mean.iter_mut().zip(t.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= l as f64);

    let mut columns: Vec<Vec<f64>> = set
        .templates()
        .iter()
        .map(|t| t.data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    one_sided_jacobi(&mut columns);
    let norms: Vec<f64> = columns.iter().map(|c| grid::dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let largest = norms[order[0]];
    if !(largest > 0.0) {
        return Err(Error::DegenerateSpan(
            "templates are identical; centered template matrix is zero".into(),
        ));
    }
    let mut components = Vec::new();
    let mut singular_values = Vec::new();
    for &k in order.iter().take(rank) {
        let s = norms[k];
        if s < SINGULAR_CUTOFF * largest {
            break;
        }
        components.push(ImageGrid::new(w, h, columns[k].iter().map(|v| v / s).collect())?);
        singular_values.push(s);
    }
    Eigenspace::new(ImageGrid::new(w, h, mean)?, components, singular_values)
}

/// Orthogonal projection onto the affine eigenspace: `α = Vᵀ (x − μ)`, `P = μ + V α`.
pub fn project_onto_eigenspace(space: &Eigenspace, x: &ImageGrid) -> Result<(AlphaCoefficients, ImageGrid)> {
    space.mean.check_shape(x, "projection")?;
    let centered: Vec<f64> = x.data().iter().zip(space.mean.data()).map(|(a, m)| a - m).collect();
    let alpha = AlphaCoefficients(
        space
            .components
            .iter()
            .map(|c| grid::dot(c.data(), &centered))
            .collect(),
    );
    let projected = space.synthesize(&alpha)?;
    Ok((alpha, projected))
}

/// Minimizes `‖W (x − μ − V α)‖²` over `α` via the ridge-stabilized normal
/// equations `(Vᵀ W² V + ε I) α = Vᵀ W² (x − μ)`.
pub fn solve_alpha_subproblem(x: &ImageGrid, weights: &WeightMap, space: &Eigenspace) -> Result<AlphaCoefficients> {
    space.mean.check_shape(x, "alpha subproblem")?;
    space.mean.check_shape(weights.as_grid(), "alpha subproblem weights")?;
    let r = space.rank();
    let w2: Vec<f64> = weights.values().iter().map(|w| w * w).collect();
    let residual: Vec<f64> = x.data().iter().zip(space.mean.data()).map(|(a, m)| a - m).collect();

    let weighted: Vec<Vec<f64>> = space
        .components
        .iter()
        .map(|c| c.data().iter().zip(&w2).map(|(v, w)| v * w).collect())
        .collect();
    let mut normal = DMatrix::zeros(r, r);
    let mut rhs = DVector::zeros(r);
    for i in 0..r {
        rhs[i] = grid::dot(&weighted[i], &residual);
        for j in 0..=i {
            let v = grid::dot(&weighted[i], space.components[j].data());
            normal[(i, j)] = v;
            normal[(j, i)] = v;
        }
    }
    let trace = normal.trace();
    if r == 0 || trace <= 0.0 {
        return Ok(AlphaCoefficients(vec![0.0; r]));
    }
    let ridge = ALPHA_RIDGE * trace / r as f64;
    for i in 0..r {
        normal[(i, i)] += ridge;
    }
    let solution = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular alpha normal equations".into()))?,
    };
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigen coefficients".into()));
    }
    Ok(AlphaCoefficients(solution.iter().copied().collect()))
}

/// `‖W (x − μ − V α)‖²`
pub fn weighted_prior_residual(
    x: &ImageGrid,
    weights: &WeightMap,
    space: &Eigenspace,
    alpha: &AlphaCoefficients,
) -> Result<f64> {
    let p = space.synthesize(alpha)?;
    Ok(x
        .data()
        .iter()
        .zip(p.data())
        .zip(weights.values())
        .map(|((a, b), w)| (w * (a - b)).powi(2))
        .sum())
}
