//! Multi-ring LiDAR simulation against a floorplan extruded into walls, with an
//! optional floor and ceiling.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::cast_ray;
use super::{FloorplanRaster, Pose2D};
use crate::cloud::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub rings: usize,
    /// Lowest and highest ring elevation, degrees.
    pub elevation: [f64; 2],
    pub azimuths: usize,
    pub max_range: f64,
    /// Sensor height above the floor, meters.
    pub sensor_height: f64,
    /// Ceiling height above the floor, meters; walls end there.
    pub ceiling_height: f64,
    pub floor: bool,
    pub ceiling: bool,
    /// Standard deviation of range noise, meters.
    pub range_noise: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            rings: 16,
            elevation: [-15.0, 15.0],
            azimuths: 1800,
            max_range: 30.0,
            sensor_height: 1.0,
            ceiling_height: 2.6,
            floor: true,
            ceiling: false,
            range_noise: 0.0,
        }
    }
}

impl LidarConfig {
    fn ring_elevation(&self, ring: usize) -> f64 {
        let [lo, hi] = self.elevation;
        if self.rings <= 1 {
            return lo.to_radians();
        }
        (lo + (hi - lo) * ring as f64 / (self.rings - 1) as f64).to_radians()
    }
}

/// Cheap deterministic texture so wall intensities are not all equal.
fn wall_intensity(x: f64, y: f64) -> f64 {
    let k = ((x * 4.0).floor() as i64).wrapping_mul(73_856_093) ^ ((y * 4.0).floor() as i64).wrapping_mul(19_349_663);
    0.35 + 0.3 * ((k.rem_euclid(97)) as f64 / 96.0)
}

/// One sweep from `pose`, in the sensor frame (z = 0 at sensor height).
/// `noise_seed` drives the range noise when `cfg.range_noise > 0`.
pub fn simulate_scan(fp: &FloorplanRaster, pose: &Pose2D, cfg: &LidarConfig, scan_index: u64, noise_seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = (cfg.range_noise > 0.0).then(|| Normal::new(0.0, cfg.range_noise).ok()).flatten();
    let tans: Vec<f64> = (0..cfg.rings).map(|r| cfg.ring_elevation(r).tan()).collect();
    let (floor_z, ceil_z) = (-cfg.sensor_height, cfg.ceiling_height - cfg.sensor_height);
    let mut points = Vec::with_capacity(cfg.rings * cfg.azimuths);
    for j in 0..cfg.azimuths {
        let theta = -PI + (j as f64 + 0.5) * TAU / cfg.azimuths as f64;
        let world = pose.yaw + theta;
        let wall = cast_ray(fp, pose.x, pose.y, world, cfg.max_range, None);
        let (s, c) = theta.sin_cos();
        let hit_xy = (pose.x + wall.range * world.cos(), pose.y + wall.range * world.sin());
        for &t in &tans {
            let z_wall = wall.range * t;
            let (d, z, intensity) = if wall.hit && (floor_z..=ceil_z).contains(&z_wall) {
                (wall.range, z_wall, wall_intensity(hit_xy.0, hit_xy.1))
            } else if t < 0.0 && cfg.floor {
                (floor_z / t, floor_z, 0.15)
            } else if t > 0.0 && cfg.ceiling {
                (ceil_z / t, ceil_z, 0.25)
            } else {
                continue;
            };
            // beyond the wall column or the edge of the plan
            if d > wall.range + 1e-9 {
                continue;
            }
            let slant = d.hypot(z);
            if slant > cfg.max_range {
                continue;
            }
            let scale = match &noise {
                Some(n) => (slant + n.sample(&mut rng)) / slant,
                None => 1.0,
            };
            points.push(Point3::new(d * c * scale, d * s * scale, z * scale, intensity));
        }
    }
    PointCloud::new(points, scan_index)
}

/// Scans along a trajectory, numbered from 0.
pub fn simulate_sequence(fp: &FloorplanRaster, poses: &[Pose2D], cfg: &LidarConfig, seed: u64) -> Vec<PointCloud> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| simulate_scan(fp, p, cfg, k as u64, seed.wrapping_add(k as u64)))
        .collect()
}
