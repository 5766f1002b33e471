//! Scan registration: per-point covariances, GICP alignment, keyframe submaps
//! and scan-to-map world pose refinement.

mod covariance;
mod gicp;
mod keyframes;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use covariance::{estimate_covariances, regularize_plane, sample_covariance};
pub(crate) use gicp::scan_to_map_align_to;
pub use gicp::{gicp_align, gicp_align_to, scan_to_map_align, GicpResult, GicpTarget, ScanToMapResult};
pub use keyframes::{update_keyframes, Keyframe, KeyframeStore, KeyframeUpdate, Submap};

/// A point with its local distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovPoint {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl CovPoint {
    pub fn new(position: Vector3<f64>, covariance: Matrix3<f64>) -> Self {
        Self {
            position,
            covariance,
        }
    }

    pub fn transformed(&self, pose: &crate::PoseSE3) -> Self {
        let r = pose.rotation_matrix();
        Self {
            position: pose.transform_point(&self.position),
            covariance: r * self.covariance * r.transpose(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GicpConfig {
    /// Neighbours used for each covariance estimate.
    pub knn: usize,
    /// Smallest eigenvalue after plane regularization.
    pub cov_epsilon: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the translation increment, meters.
    pub translation_tol: f64,
    /// Convergence threshold on the rotation increment, radians.
    pub rotation_tol: f64,
    /// Correspondences farther apart than this are rejected, meters.
    pub max_correspondence_dist: f64,
    /// Minimum translation from the nearest keyframe before a new one is added, meters.
    pub keyframe_dist: f64,
    /// Minimum rotation from the nearest keyframe before a new one is added, degrees.
    pub keyframe_angle: f64,
    /// Keyframes merged into the scan-to-map target.
    pub submap_k_nearest: usize,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self {
            knn: 10,
            cov_epsilon: 1e-3,
            max_iterations: 64,
            translation_tol: 1e-6,
            rotation_tol: 1e-6,
            max_correspondence_dist: 1.0,
            keyframe_dist: 1.0,
            keyframe_angle: 30.0,
            submap_k_nearest: 10,
        }
    }
}

impl GicpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cov_epsilon", self.cov_epsilon),
            ("translation_tol", self.translation_tol),
            ("rotation_tol", self.rotation_tol),
            ("max_correspondence_dist", self.max_correspondence_dist),
            ("keyframe_dist", self.keyframe_dist),
            ("keyframe_angle", self.keyframe_angle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("gicp.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("knn", self.knn),
            ("max_iterations", self.max_iterations),
            ("submap_k_nearest", self.submap_k_nearest),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("gicp.{name} must be positive")));
            }
        }
        Ok(())
    }
}
