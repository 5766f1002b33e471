//! Map accuracy (class-wise IoU against a ground-truth raster) and per-stage
//! latency statistics.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::gridmap::{CodeMap, FREE, OCCUPIED, UNKNOWN};
use crate::pipeline::{Mapper, PipelineConfig, ScanTiming};

/// Similarity transform taking truth coordinates into the map frame:
/// `p_map = scale * R(yaw) * p_truth + (tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Alignment2D {
    pub tx: f64,
    pub ty: f64,
    /// Degrees.
    pub yaw: f64,
    pub scale: f64,
}

impl Default for Alignment2D {
    fn default() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            yaw: 0.0,
            scale: 1.0,
        }
    }
}

impl Alignment2D {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || ![self.tx, self.ty, self.yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(format!("alignment needs finite values and scale > 0, got {self:?}")));
        }
        Ok(())
    }

    /// Truth-frame point for a map-frame point.
    pub fn map_to_truth(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.to_radians().sin_cos();
        let (dx, dy) = ((x - self.tx) / self.scale, (y - self.ty) / self.scale);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IouClass {
    Occupied,
    Unoccupied,
}

impl IouClass {
    fn code(self) -> u8 {
        match self {
            IouClass::Occupied => OCCUPIED,
            IouClass::Unoccupied => FREE,
        }
    }
}

impl fmt::Display for IouClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouClass::Occupied => "occupied",
            IouClass::Unoccupied => "unoccupied",
        })
    }
}

impl FromStr for IouClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupied" => Ok(IouClass::Occupied),
            "unoccupied" | "free" => Ok(IouClass::Unoccupied),
            _ => Err(Error::InvalidConfig(format!("unknown IoU class {s:?}"))),
        }
    }
}

fn check_codes(map: &CodeMap) -> Result<()> {
    if map.codes.is_empty() || map.geometry.len() != map.codes.len() {
        return Err(Error::EmptyMap);
    }
    let w = map.width();
    match map.codes.iter().position(|&c| c != FREE && c != OCCUPIED && c != UNKNOWN) {
        Some(i) => Err(Error::NotDiscretized {
            row: i / w,
            col: i % w,
            value: map.codes[i],
        }),
        None => Ok(()),
    }
}

/// Truth code at the centre of every map cell (nearest neighbour), `UNKNOWN`
/// where the centre falls outside the truth raster. Image order.
pub fn resample_truth(map: &CodeMap, truth: &CodeMap, align: &Alignment2D) -> Vec<u8> {
    let g = map.geometry;
    let t = truth.geometry;
    let mut out = Vec::with_capacity(g.len());
    for row in 0..g.height {
        for col in 0..g.width {
            let x = g.origin_x + (col as f64 + 0.5) * g.resolution;
            let y = g.origin_y + ((g.height - 1 - row) as f64 + 0.5) * g.resolution;
            let (tx, ty) = align.map_to_truth(x, y);
            let tc = ((tx - t.origin_x) / t.resolution).floor();
            let tr = ((ty - t.origin_y) / t.resolution).floor();
            let inside = tc >= 0.0 && tr >= 0.0 && tc < t.width as f64 && tr < t.height as f64;
            out.push(if inside {
                truth.get(t.height - 1 - tr as usize, tc as usize)
            } else {
                UNKNOWN
            });
        }
    }
    out
}

/// |A ∩ B| / |A ∪ B| for the cells of `class`, ignoring cells unknown in
/// either raster. Two empty sets give 1.0.
pub fn iou(map: &CodeMap, truth: &CodeMap, align: &Alignment2D, class: IouClass) -> Result<f64> {
    check_codes(map)?;
    check_codes(truth)?;
    align.validate()?;
    let resampled = resample_truth(map, truth, align);
    let target = class.code();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in map.codes.iter().zip(&resampled) {
        if a == UNKNOWN || b == UNKNOWN {
            continue;
        }
        let (ia, ib) = (a == target, b == target);
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        log::warn!("IoU over two empty {class:?} sets, reporting 1.0");
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Median and 95th percentile (nearest rank) of one stage, seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageStats {
    pub samples: usize,
    pub median: f64,
    pub p95: f64,
}

impl StageStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            samples: n,
            median,
            p95: v[rank - 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyReport {
    pub filtering: StageStats,
    pub registration: StageStats,
    pub translation: StageStats,
    pub integration: StageStats,
    /// Timed on the cleaning worker, one sample per snapshot.
    pub cleaning: StageStats,
    pub total: StageStats,
    /// Per-scan sum of the four mapping stages, seconds.
    pub per_scan_totals: Vec<f64>,
}

impl LatencyReport {
    pub fn from_timings(timings: &[ScanTiming], cleaning: &[f64]) -> Self {
        let stage = |f: fn(&ScanTiming) -> f64| StageStats::from_samples(&timings.iter().map(f).collect::<Vec<_>>());
        let totals: Vec<f64> = timings.iter().map(ScanTiming::total).collect();
        Self {
            filtering: stage(|t| t.filtering),
            registration: stage(|t| t.registration),
            translation: stage(|t| t.translation),
            integration: stage(|t| t.integration),
            cleaning: StageStats::from_samples(cleaning),
            total: StageStats::from_samples(&totals),
            per_scan_totals: totals,
        }
    }

    fn rows(&self) -> [(&'static str, StageStats); 6] {
        [
            ("filtering", self.filtering),
            ("registration", self.registration),
            ("translation", self.translation),
            ("integration", self.integration),
            ("cleaning", self.cleaning),
            ("total", self.total),
        ]
    }

    /// `stage,samples,median_s,p95_s`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,samples,median_s,p95_s\n");
        for (name, st) in self.rows() {
            let _ = writeln!(s, "{name},{},{:.6},{:.6}", st.samples, st.median, st.p95);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<14}{:>9}{:>13}{:>13}\n", "stage", "samples", "median (ms)", "p95 (ms)");
        for (name, st) in self.rows() {
            let _ = writeln!(
                s,
                "{name:<14}{:>9}{:>13.2}{:>13.2}",
                st.samples,
                st.median * 1e3,
                st.p95 * 1e3
            );
        }
        s
    }
}

/// Runs the full pipeline over `clouds`, timing every stage of every scan.
pub fn benchmark_pipeline(clouds: &[PointCloud], cfg: &PipelineConfig) -> Result<LatencyReport> {
    let mut mapper = Mapper::new(cfg.clone())?;
    for cloud in clouds {
        mapper.process(cloud)?;
    }
    let result = mapper.finish()?;
    Ok(LatencyReport::from_timings(&result.timings, &result.cleaning))
}
