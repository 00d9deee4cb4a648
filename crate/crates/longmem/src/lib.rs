//! Voxelwise long-memory mapping of 4-D imaging time series.
//!
//! The library is organized as a pipeline:
//!
//! 1. [`volume`] — NIfTI-1 / raw volume ingestion, masks, parcellations,
//!    covariate tables.
//! 2. [`wavelet`] — orthogonal discrete wavelet transform (pyramid
//!    algorithm) of voxel time series.
//! 3. [`model`] — the long-memory probability model: power-law
//!    autocovariance in time, geometric variance progression across
//!    wavelet scales, and the diagonal Gaussian log-likelihood.
//! 4. [`estimator`] — per-voxel Metropolis-within-Gibbs posterior
//!    sampling of the long-memory parameters, with chain diagnostics.
//! 5. [`basis`] — two-level (per-ROI then global) SVD reduction of
//!    stacked subject maps, with projection and back-projection.
//! 6. [`regression`] — conjugate Gibbs sampling of the group-level
//!    regression of projected maps on subject covariates.
//! 7. [`inference`] — joint credible bands, FDR maps, cluster
//!    thresholding, and map algebra.
//! 8. [`simulate`] — synthetic data generation at every level; the
//!    verification oracle for the whole pipeline.
//! 9. [`pipeline`] — stage orchestration, config, manifest, reports.
//!
//! Scalar-agnostic numerics (`wavelet`, `model`, `linalg`, `basis`) are
//! generic over [`Real`]; the pipeline layers run in `f64`, for which the
//! crate root exports concrete aliases.

pub mod basis;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod simulate;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use num::Real;

/// Filter bank at the pipeline's working precision.
pub type FilterBank64 = wavelet::FilterBank<f64>;
/// Single-precision filter bank, for callers transforming raw `f32` data.
pub type FilterBank32 = wavelet::FilterBank<f32>;
/// Wavelet decomposition at the pipeline's working precision.
pub type Decomposition64 = wavelet::Decomposition<f64>;
/// Single-precision wavelet decomposition.
pub type Decomposition32 = wavelet::Decomposition<f32>;
/// Long-memory parameter pair at the pipeline's working precision.
pub type LongMemoryParams64 = model::LongMemoryParams<f64>;
/// Per-scale variance table at the pipeline's working precision.
pub type ScaleVariances64 = model::ScaleVariances<f64>;
/// Composite basis at the pipeline's working precision.
pub type CompositeBasis64 = basis::CompositeBasis<f64>;
