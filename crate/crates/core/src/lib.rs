//! Redundancy removal and representative-slice sampling for CT slice stacks.
//!
//! A scan flows through four stages:
//!
//! 1. [`spatial`]: box low-pass filter, threshold mask, bounding-box crop.
//! 2. [`slice_select`]: per-slice lung area from dilation and hole filling,
//!    then the shortest contiguous window holding an `alpha` share of it.
//! 3. [`kds`]: area-weighted Gaussian KDE over that window, equal-mass
//!    strata, one density-weighted draw per stratum.
//! 4. [`pipeline`]: crop, resize and write the sampled slices with a
//!    manifest; [`report`] tallies the before/after reduction.
//!
//! [`metrics`] scores external predictions and [`phantom`] builds synthetic
//! scans with known lung areas.

pub mod config;
pub mod error;
pub mod kds;
pub mod metrics;
pub mod morphology;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod report;
pub mod slice_select;
pub mod spatial;
pub mod volume;

pub use config::{PipelineConfig, SamplingMode};
pub use error::{Error, Result};
pub use par::Exec;
pub use slice_select::{AreaProfile, SliceWindow};
pub use spatial::{BinaryMask, CropRect};
pub use volume::{ScanVolume, SliceImage};
