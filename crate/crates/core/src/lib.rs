//! Deterministic benchmark for 3D detection robustness under camera soiling
//! and LiDAR point dropout, built around a camera + LiDAR bird's-eye-view
//! fusion data path.

pub mod bevpipe;
pub mod degrade;
pub mod detect;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod scene;
pub mod seeds;
pub mod sensors;

pub use error::{Error, Result};
