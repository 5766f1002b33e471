//! Occupancy grid mapping from 3D LiDAR scans.
//!
//! Scans are downsampled, registered with GICP against a keyframe submap,
//! flattened into azimuth-binned 2D scans and integrated into a log-odds
//! evidence grid. The grid is discretized, stripped of isolated cells and can
//! be passed through a pluggable cleaner before publishing.

pub mod cleaner;
pub mod cloud;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gridmap;
pub mod kdtree;
pub mod pipeline;
pub mod pose;
pub mod registration;
pub mod translation;

pub use error::{Error, Result};
pub use pose::PoseSE3;
