//! Projection of 3D clouds into azimuth-binned 2D scans.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::pose::PoseSE3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanEntry {
    /// Horizontal distance from the sensor, meters.
    pub range: f64,
    pub intensity: f64,
}

/// A cloud flattened into `bin_count` equal azimuth sectors covering [−π, π].
#[derive(Clone, Debug, PartialEq)]
pub struct Scan2D {
    pub bins: Vec<Vec<ScanEntry>>,
    pub bin_count: usize,
    pub scan_index: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    /// Keep only points with z in [min, max] (sensor frame). Off by default.
    pub z_band: Option<[f64; 2]>,
}

/// 2D endpoint of one scan entry in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Endpoint {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

impl Scan2D {
    pub fn len(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(Vec::is_empty)
    }

    pub fn empty(scan_index: u64) -> Self {
        Self {
            bins: Vec::new(),
            bin_count: 0,
            scan_index,
        }
    }

    /// `bin_index,range,intensity` rows, one per entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_index,range,intensity\n");
        for (b, bin) in self.bins.iter().enumerate() {
            for e in bin {
                let _ = writeln!(s, "{b},{},{}", e.range, e.intensity);
            }
        }
        s
    }
}

/// Azimuth of the centre of bin `bin` out of `bin_count`.
pub fn bin_center(bin: usize, bin_count: usize) -> f64 {
    -PI + (bin as f64 + 0.5) * TAU / bin_count as f64
}

/// Bin of azimuth `theta`; θ = π lands in the last bin.
pub fn bin_index(theta: f64, bin_count: usize) -> usize {
    let raw = ((theta + PI) / TAU * bin_count as f64).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(bin_count - 1)
    }
}

fn wrap_angle(mut theta: f64) -> f64 {
    if theta > PI {
        theta -= TAU;
    } else if theta < -PI {
        theta += TAU;
    }
    theta
}

pub fn translate_cloud(cloud: &PointCloud) -> Result<Scan2D> {
    translate_cloud_with(cloud, &TranslationConfig::default())
}

pub fn translate_cloud_with(cloud: &PointCloud, cfg: &TranslationConfig) -> Result<Scan2D> {
    let keep = |z: f64| cfg.z_band.map_or(true, |[lo, hi]| z >= lo && z <= hi);
    let count = cloud.points.iter().filter(|p| keep(p.z)).count();
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let bin_count = ((count as f64).sqrt().floor() as usize).max(1);
    let mut bins = vec![Vec::new(); bin_count];
    for p in cloud.points.iter().filter(|p| keep(p.z)) {
        let theta = wrap_angle(p.y.atan2(p.x));
        let range = (p.x * p.x + p.y * p.y).sqrt();
        bins[bin_index(theta, bin_count)].push(ScanEntry {
            range,
            intensity: p.intensity,
        });
    }
    Ok(Scan2D {
        bins,
        bin_count,
        scan_index: cloud.scan_index,
    })
}

/// World-frame endpoints of every entry, placed at its bin-centre azimuth and
/// transformed by the planar part (x, y, yaw) of `pose`.
pub fn scan2d_to_endpoints(scan: &Scan2D, pose: &PoseSE3) -> Vec<Endpoint> {
    let (px, py, yaw) = pose.planar();
    let mut out = Vec::with_capacity(scan.len());
    for (b, bin) in scan.bins.iter().enumerate() {
        if bin.is_empty() {
            continue;
        }
        let (s, c) = (bin_center(b, scan.bin_count) + yaw).sin_cos();
        out.extend(bin.iter().map(|e| Endpoint {
            x: px + e.range * c,
            y: py + e.range * s,
            intensity: e.intensity,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use proptest::prelude::*;

    #[test]
    fn bin_count_is_floor_sqrt() {
        let pts = (0..10_000).map(|i| Point3::new((i as f64).cos() * 3.0, (i as f64).sin() * 3.0, 0.0, 0.1)).collect();
        let scan = translate_cloud(&PointCloud::new(pts, 4)).unwrap();
        assert_eq!(scan.bin_count, 100);
        assert_eq!(scan.len(), 10_000);
        assert_eq!(scan.scan_index, 4);
        let pts = (0..99).map(|i| Point3::new(1.0, i as f64, 0.0, 0.0)).collect();
        assert_eq!(translate_cloud(&PointCloud::new(pts, 0)).unwrap().bin_count, 9);
    }

    #[test]
    fn single_point_geometry() {
        let scan = translate_cloud(&PointCloud::new(vec![Point3::new(1.0, 1.0, 5.0, 0.5)], 0)).unwrap();
        assert_eq!(scan.bin_count, 1);
        let e = scan.bins[0][0];
        assert!((e.range - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(e.intensity, 0.5);
        // θ = π/4 falls in bin floor((π/4 + π) / 2π · 100) = 62
        assert_eq!(bin_index(PI / 4.0, 100), 62);
    }

    #[test]
    fn theta_pi_clamps_to_last_bin() {
        // raw index (π + π) / 2π · 100 = 100
        assert_eq!(bin_index(PI, 100), 99);
        assert_eq!(bin_index(-PI, 100), 0);
        let p = Point3::new(-1.0, 0.0, 0.0, 0.0);
        assert_eq!(p.y.atan2(p.x), PI);
        let pts = std::iter::once(p).chain((0..9_999).map(|_| Point3::new(1.0, 0.0, 0.0, 0.0))).collect();
        let scan = translate_cloud(&PointCloud::new(pts, 0)).unwrap();
        assert_eq!(scan.bins[99].len(), 1);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(matches!(translate_cloud(&PointCloud::default()), Err(Error::EmptyCloud)));
    }

    #[test]
    fn z_band_is_optional() {
        let pts = vec![Point3::new(1.0, 0.0, -2.0, 0.0), Point3::new(2.0, 0.0, 0.1, 0.0)];
        let cloud = PointCloud::new(pts, 0);
        assert_eq!(translate_cloud(&cloud).unwrap().len(), 2);
        let banded = translate_cloud_with(&cloud, &TranslationConfig { z_band: Some([-0.5, 0.5]) }).unwrap();
        assert_eq!(banded.len(), 1);
    }

    #[test]
    fn endpoints_follow_pose() {
        let scan = Scan2D {
            bins: vec![vec![ScanEntry { range: 2.0, intensity: 0.3 }]],
            bin_count: 1,
            scan_index: 0,
        };
        let e = scan2d_to_endpoints(&scan, &PoseSE3::identity())[0];
        assert!((e.x - 2.0).abs() < 1e-12 && e.y.abs() < 1e-12);
        let e = scan2d_to_endpoints(&scan, &PoseSE3::from_translation(1.0, 0.0, 0.7))[0];
        assert!((e.x - 3.0).abs() < 1e-12 && e.y.abs() < 1e-12);
        let e = scan2d_to_endpoints(&scan, &PoseSE3::from_planar(0.0, 0.0, PI / 2.0))[0];
        // planar rotation oracle: (2 cos 90°, 2 sin 90°)
        assert!(e.x.abs() < 1e-9 && (e.y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn csv_dump() {
        let scan = Scan2D {
            bins: vec![vec![], vec![ScanEntry { range: 1.5, intensity: 0.25 }]],
            bin_count: 2,
            scan_index: 0,
        };
        assert_eq!(scan.to_csv(), "bin_index,range,intensity\n1,1.5,0.25\n");
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec(
            (-20.0f64..20.0, -20.0f64..20.0, -3.0f64..3.0, 0.0f64..1.0).prop_map(|(x, y, z, i)| Point3::new(x, y, z, i)),
            1..400,
        )
    }

    fn multiset(scan: &Scan2D) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = scan
            .bins
            .iter()
            .flatten()
            .map(|e| ((e.range * 1e6).round() as u64, e.intensity.to_bits()))
            .collect();
        v.sort_unstable();
        v
    }

    proptest! {
        #[test]
        fn conservation_and_ranges(pts in arb_points()) {
            let n = pts.len();
            let scan = translate_cloud(&PointCloud::new(pts.clone(), 0)).unwrap();
            prop_assert_eq!(scan.bin_count, ((n as f64).sqrt().floor() as usize).max(1));
            prop_assert_eq!(scan.len(), n);
            prop_assert!(scan.bins.iter().flatten().all(|e| e.range >= 0.0));
            for p in &pts {
                let t = p.y.atan2(p.x);
                prop_assert!((-PI..=PI).contains(&t));
                prop_assert!(bin_index(t, scan.bin_count) < scan.bin_count);
            }
            // deterministic and order-stable within bins
            prop_assert_eq!(&translate_cloud(&PointCloud::new(pts, 0)).unwrap(), &scan);
        }

        #[test]
        fn rotation_preserves_entries(pts in arb_points(), delta in -PI..PI) {
            let (s, c) = delta.sin_cos();
            let rotated: Vec<Point3> = pts
                .iter()
                .map(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity))
                .collect();
            let a = translate_cloud(&PointCloud::new(pts, 0)).unwrap();
            let b = translate_cloud(&PointCloud::new(rotated, 0)).unwrap();
            prop_assert_eq!(multiset(&a), multiset(&b));
        }
    }
}
