//! Two-view food calorie estimation.
//!
//! A top view and a side view of a meal, each containing a 2.5 cm coin,
//! are turned into per-food volume, mass and calorie estimates:
//! detections are segmented with box-initialised GrabCut, the coin boxes
//! give a centimetre-per-pixel scale for each view, and one of three
//! shape-class formulas integrates the silhouettes into a volume.

pub mod calorimetry;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod measurement;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
