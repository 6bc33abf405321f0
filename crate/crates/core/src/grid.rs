//! Row-major scalar rasters, rectangular regions and the TPRASTER file format.
//!
//! A TPRASTER v1 file is a single ASCII header line
//! `TPRASTER 1 <width> <height>\n` followed by `width * height`
//! little-endian binary32 values in row-major order, with nothing after.
//! Values are held as `f64` in memory and narrowed to `f32` on disk.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "TPRASTER";
const VERSION: &str = "1";

/// A 2D scalar field on a regular raster. Every value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::Validation("raster dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Length {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        assert!(value.is_finite());
        ImageGrid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a grid by evaluating `f(column, row)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Axis-aligned rectangle `[x0, x0 + w) x [y0, y0 + h)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegionOfInterest {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl RegionOfInterest {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!(
                "region must have positive extent, got {w}x{h}"
            )));
        }
        Ok(RegionOfInterest { x0, y0, w, h })
    }

    pub fn full(image: &ImageGrid) -> Self {
        RegionOfInterest {
            x0: 0,
            y0: 0,
            w: image.width(),
            h: image.height(),
        }
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x0 + self.w > width || self.y0 + self.h > height {
            return Err(Error::Bounds(format!(
                "region ({}, {}, {}x{}) exceeds {width}x{height} raster",
                self.x0, self.y0, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.x0 && col < self.x0 + self.w && row >= self.y0 && row < self.y0 + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

pub fn extract_roi(image: &ImageGrid, roi: &RegionOfInterest) -> Result<ImageGrid> {
    roi.check_within(image.width(), image.height())?;
    let mut data = Vec::with_capacity(roi.area());
    for row in roi.y0..roi.y0 + roi.h {
        let start = row * image.width() + roi.x0;
        data.extend_from_slice(&image.data()[start..start + roi.w]);
    }
    ImageGrid::new(roi.w, roi.h, data)
}

/// Serializes a grid to TPRASTER bytes.
pub fn encode_raster(image: &ImageGrid) -> Result<Vec<u8>> {
    let header = format!("{MAGIC} {VERSION} {} {}\n", image.width(), image.height());
    let mut bytes = Vec::with_capacity(header.len() + 4 * image.len());
    bytes.extend_from_slice(header.as_bytes());
    for (i, &v) in image.data().iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::Validation(format!(
                "value {v} at index {i} overflows binary32"
            )));
        }
        bytes.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode_raster(bytes: &[u8]) -> Result<ImageGrid> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    if fields[1] != VERSION {
        return Err(Error::Format(format!("unsupported version `{}`", fields[1])));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(v) if v > 0 && s.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
            _ => Err(Error::Format(format!("bad dimension `{s}`"))),
        }
    };
    let width = parse_dim(fields[2])?;
    let height = parse_dim(fields[3])?;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[newline + 1..];
    if payload.len() != expected * 4 {
        return Err(Error::Length {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImageGrid::new(width, height, data)
}

pub fn save_raster(image: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_raster(image)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_raster(&bytes)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
