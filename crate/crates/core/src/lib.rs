//! Adaptive depth sampling for depth completion.
//!
//! A committee of predictors (the trees of a random forest) estimates where a
//! depth completer is uncertain. Measurements are drawn in phases with
//! probability proportional to the committee's variance, and a larger forest
//! completes the dense depth map from the final measurements.

pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod forest;
pub mod imaging;
pub mod metrics;
pub mod sampling;
pub mod scene;
pub mod synth;

pub use config::{allocate_phases, RunConfig, SamplerKind, SamplingPlan, Scenario};
pub use error::{Error, Result};
pub use scene::{validate_scene, DepthMap, Dims, Pixel, RgbImage, SampleMap, Scene};
