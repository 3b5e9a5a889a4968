//! Semantic-annotation pipeline for terrestrial laser scans.
//!
//! The crate turns raw LiDAR point clouds into labelled clouds through a
//! sequence of well-defined stages:
//!
//! 1. [`cloud`] — point-cloud containers, PLY I/O, spatial indexing and
//!    subsampling.
//! 2. [`projection`] — equirectangular (zenith × azimuth) projection of a
//!    scan onto a raster grid, plus the inverse lookup and virtual-sphere
//!    rendering.
//! 3. [`features`] — per-pixel feature maps: radiometric preprocessing,
//!    eigenvalue geometry descriptors, normal-vector pseudo-colouring,
//!    channel stacking and tiling.
//! 4. [`reduce`] — statistical channel reduction (PCA / MNF / ICA).
//! 5. [`ensemble`] — logit fusion, predictive-uncertainty decomposition and
//!    segmentation losses, with a classical random-forest baseline.
//! 6. [`refine`] — 3-D label refinement: back-projection, neighbourhood
//!    voting and confidence-gated random-forest relabelling.
//! 7. [`eval`] — confusion-matrix metrics, map entropy and
//!    precision–recall analysis of uncertainty maps.
//!
//! All geometry and statistics are generic over the floating-point scalar
//! through the [`Real`] trait; `f32` and `f64` aliases for the main types
//! are exported at the crate root.

pub mod cloud;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod png;
pub mod projection;
pub mod real;
pub mod reduce;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;

/// Single-precision point.
pub type Point3f = cloud::Point3<f32>;
/// Double-precision point.
pub type Point3d = cloud::Point3<f64>;
/// Single-precision point cloud.
pub type PointCloudF = cloud::PointCloud<f32>;
/// Double-precision point cloud.
pub type PointCloudD = cloud::PointCloud<f64>;
/// Single-precision projection grid.
pub type GridSpecF = projection::GridSpec<f32>;
/// Double-precision projection grid.
pub type GridSpecD = projection::GridSpec<f64>;
/// Single-precision feature cube.
pub type FeatureCubeF = features::FeatureCube<f32>;
/// Double-precision feature cube.
pub type FeatureCubeD = features::FeatureCube<f64>;
/// Single-precision logit stack.
pub type LogitStackF = ensemble::LogitStack<f32>;
/// Double-precision logit stack.
pub type LogitStackD = ensemble::LogitStack<f64>;

/// Per-pixel class-id raster. Class `0` is reserved for void (no data).
pub type LabelMask = ndarray::Array2<u8>;
