//! Unsupervised anomaly localization by pluralistic image completion.
//!
//! A completion network trained on normal images only is run with
//! channel dropout at inference time to draw several plausible fills of a
//! masked window. The window's anomaly score is the minimum distance
//! between its true content and any of those fills; scoring a sliding
//! raster of windows and upsampling yields a per-pixel heatmap.

pub mod error;
pub mod eval;
pub mod grid;
pub mod heatmap;
pub mod imageio;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod scoring;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
pub use grid::{Grid, Rect};
pub use rng::StreamKey;
