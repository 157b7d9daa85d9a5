//! Bi-temporal SAR avalanche change detection.
//!
//! The pipeline runs: [`normalize`] backscatter against dataset statistics,
//! cut overlapping [`patches`], score them with the Siamese difference
//! network in [`scorer`], stitch full scenes with one of the strategies in
//! [`blend`], pick operating thresholds and post-process in [`decide`], and
//! measure pixel and polygon agreement in [`evalx`]. [`synthgen`] produces
//! synthetic scenes with known deposits for end-to-end checks.

pub mod blend;
pub mod decide;
pub mod error;
pub mod evalx;
pub mod normalize;
pub mod patches;
pub mod raster;
pub mod scene;
pub mod scorer;
pub mod synthgen;

pub use error::{Error, Result};
pub use raster::RasterGrid;
