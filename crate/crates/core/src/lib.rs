//! Sparse-view tomographic reconstruction with spatially weighted eigenspace
//! priors, for longitudinal scans where a test object may have changed
//! locally since its templates were acquired.

pub mod algebraic;
pub mod bench;
pub mod config;
pub mod cs;
pub mod error;
pub mod fbp;
pub mod grid;
pub mod kv;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prior;
pub mod projector;
pub mod smooth;
pub mod transform;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{ImageGrid, RegionOfInterest};
pub use pipeline::{Method, ReconConfig};
pub use projector::{ScanGeometry, Sinogram};
