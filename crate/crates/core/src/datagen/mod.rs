//! Seeded generation of (erroneous, clean) occupancy map pairs from floorplans,
//! and a simple 3D LiDAR simulator for pipeline fixtures.

mod floorplan;
pub mod lidar;
mod planner;
mod render;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::{write_map, CodeMap, OCCUPIED};
use crate::pose::PoseSE3;

pub use floorplan::{fixtures, largest_free_region, load_floorplan, save_floorplan, FloorplanRaster, MIN_TRAVERSABLE_CELLS};
pub use planner::{plan_trajectory, plan_trajectory_with, poses_along, resample, PlannerConfig};
pub use render::{cast_ray, drift_trajectory, render_clean, render_erroneous, thin_obstacles, RayCounts, RayHit, RenderConfig};

/// Planar pose, yaw in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn to_se3(&self) -> PoseSE3 {
        PoseSE3::from_planar(self.x, self.y, self.yaw)
    }
}

/// Error injected into one erroneous map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    /// Meters of scale error per meter travelled.
    pub linear_drift: f64,
    /// Degrees of heading error per meter travelled.
    pub angular_drift: f64,
    /// Probability of flipping each observed cell.
    pub speckle_rate: f64,
    /// Probability per ray of passing through thin obstacles.
    pub passthrough_rate: f64,
    /// Degrees of each scan removed as one contiguous sector.
    pub dropout_arc: f64,
    /// Fraction of the trajectory executed.
    pub partial_coverage: f64,
    pub seed: u64,
}

impl ErrorSpec {
    /// No error; the erroneous map equals the clean one.
    pub fn zero(seed: u64) -> Self {
        Self {
            linear_drift: 0.0,
            angular_drift: 0.0,
            speckle_rate: 0.0,
            passthrough_rate: 0.0,
            dropout_arc: 0.0,
            partial_coverage: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.speckle_rate, self.passthrough_rate, self.partial_coverage];
        let ok = rates.iter().all(|r| (0.0..=1.0).contains(r))
            && self.linear_drift >= 0.0
            && self.angular_drift >= 0.0
            && (0.0..=360.0).contains(&self.dropout_arc);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "error spec needs rates in [0, 1], non-negative drifts and dropout_arc in [0, 360], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Inclusive ranges that per-pair specs are drawn from uniformly. The defaults
/// are moderate magnitudes chosen for this generator, not measured values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorRanges {
    pub linear_drift: [f64; 2],
    pub angular_drift: [f64; 2],
    pub speckle_rate: [f64; 2],
    pub passthrough_rate: [f64; 2],
    pub dropout_arc: [f64; 2],
    pub partial_coverage: [f64; 2],
}

impl Default for ErrorRanges {
    fn default() -> Self {
        Self {
            linear_drift: [0.0, 0.003],
            angular_drift: [0.0, 0.03],
            speckle_rate: [0.002, 0.01],
            passthrough_rate: [0.0, 0.2],
            dropout_arc: [0.0, 40.0],
            partial_coverage: [0.7, 1.0],
        }
    }
}

impl ErrorRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.fields() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("error range {name} must satisfy lo <= hi, got [{lo}, {hi}]")));
            }
        }
        self.sample(&mut ChaCha8Rng::seed_from_u64(0), 0).validate()?;
        ErrorSpec {
            linear_drift: self.linear_drift[1],
            angular_drift: self.angular_drift[1],
            speckle_rate: self.speckle_rate[1],
            passthrough_rate: self.passthrough_rate[1],
            dropout_arc: self.dropout_arc[1],
            partial_coverage: self.partial_coverage[1],
            seed: 0,
        }
        .validate()
    }

    fn fields(&self) -> [(&'static str, [f64; 2]); 6] {
        [
            ("linear_drift", self.linear_drift),
            ("angular_drift", self.angular_drift),
            ("speckle_rate", self.speckle_rate),
            ("passthrough_rate", self.passthrough_rate),
            ("dropout_arc", self.dropout_arc),
            ("partial_coverage", self.partial_coverage),
        ]
    }

    pub fn sample(&self, rng: &mut impl Rng, seed: u64) -> ErrorSpec {
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        ErrorSpec {
            linear_drift: draw(self.linear_drift),
            angular_drift: draw(self.angular_drift),
            speckle_rate: draw(self.speckle_rate),
            passthrough_rate: draw(self.passthrough_rate),
            dropout_arc: draw(self.dropout_arc),
            partial_coverage: draw(self.partial_coverage),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPair {
    pub erroneous: CodeMap,
    pub clean: CodeMap,
    pub floorplan: String,
    pub spec: ErrorSpec,
}

/// Accepted ratio of erroneous to clean occupied cells.
pub const OCCUPIED_BAND: [f64; 2] = [0.3, 3.0];
const MAX_DRAWS: usize = 8;

impl DatasetPair {
    pub fn occupied_ratio(&self) -> f64 {
        self.erroneous.count(OCCUPIED) as f64 / self.clean.count(OCCUPIED).max(1) as f64
    }

    pub fn in_sanity_band(&self) -> bool {
        (OCCUPIED_BAND[0]..=OCCUPIED_BAND[1]).contains(&self.occupied_ratio())
    }
}

/// Renders the clean map from `trajectory` and the erroneous map under `spec`.
pub fn render_pair(
    fp: &FloorplanRaster,
    floorplan: &str,
    trajectory: &[Pose2D],
    spec: &ErrorSpec,
    cfg: &RenderConfig,
) -> DatasetPair {
    let clean = render_clean(fp, trajectory, cfg);
    let erroneous = render_erroneous(fp, trajectory, spec, cfg);
    DatasetPair {
        erroneous,
        clean,
        floorplan: floorplan.to_string(),
        spec: *spec,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub ranges: ErrorRanges,
    pub render: RenderConfig,
    pub planner: PlannerConfig,
    /// Meters per floorplan pixel.
    pub floorplan_resolution: Option<f64>,
}

impl DatagenConfig {
    pub fn resolution(&self) -> f64 {
        self.floorplan_resolution.unwrap_or(0.05)
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        self.render.validate()?;
        if !(self.resolution().is_finite() && self.resolution() > 0.0) {
            return Err(Error::InvalidConfig("floorplan_resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of pair `id` derived from the dataset seed.
pub fn pair_seed(seed: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng.random()
}

/// One named floorplan.
#[derive(Clone, Debug)]
pub struct NamedFloorplan {
    pub name: String,
    pub plan: FloorplanRaster,
}

/// Loads every `.png`/`.pgm` in `dir`, sorted by file name.
pub fn load_floorplan_dir(dir: &Path, resolution: f64) -> Result<Vec<NamedFloorplan>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Precondition(format!("no PNG or PGM floorplans in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(NamedFloorplan {
                name: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                plan: load_floorplan(p, resolution)?,
            })
        })
        .collect()
}

pub const MANIFEST_HEADER: &str =
    "id,floorplan,seed,linear_drift,angular_drift,speckle_rate,passthrough_rate,dropout_arc,partial_coverage";

/// Generates `count` pairs into `out/pairs/` plus `out/manifest.csv`. Pair `id`
/// uses floorplan `id % n` and its own random stream, so the output does not
/// depend on scheduling.
pub fn generate_dataset(
    floorplans: &[NamedFloorplan],
    count: usize,
    seed: u64,
    cfg: &DatagenConfig,
    out: &Path,
) -> Result<Vec<DatasetPair>> {
    cfg.validate()?;
    if floorplans.is_empty() && count > 0 {
        return Err(Error::Precondition("dataset generation needs at least one floorplan".into()));
    }
    let pairs_dir = out.join("pairs");
    fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;

    let pairs: Vec<DatasetPair> = (0..count as u64)
        .into_par_iter()
        .map(|id| {
            let fp = &floorplans[id as usize % floorplans.len()];
            let pseed = pair_seed(seed, id);
            let mut rng = ChaCha8Rng::seed_from_u64(pseed);
            // degenerate draws are redrawn from the same stream
            let mut attempt = 0;
            let pair = loop {
                let spec_seed = rng.random();
                let spec = cfg.ranges.sample(&mut rng, spec_seed);
                let trajectory = plan_trajectory_with(&fp.plan, rng.random(), &cfg.planner)?;
                let pair = render_pair(&fp.plan, &fp.name, &trajectory, &spec, &cfg.render);
                attempt += 1;
                if pair.in_sanity_band() {
                    break pair;
                }
                if attempt == MAX_DRAWS {
                    log::warn!(
                        "pair {id} on {}: no spec within the occupied-count band after {MAX_DRAWS} draws, keeping {spec:?}",
                        fp.name
                    );
                    break pair;
                }
            };
            write_map(&pairs_dir.join(format!("{id:06}_err.pgm")), &pair.erroneous, None)?;
            write_map(&pairs_dir.join(format!("{id:06}_clean.pgm")), &pair.clean, None)?;
            Ok(pair)
        })
        .collect::<Result<_>>()?;

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (id, p) in pairs.iter().enumerate() {
        let s = &p.spec;
        let _ = writeln!(
            manifest,
            "{id:06},{},{},{},{},{},{},{},{}",
            p.floorplan,
            s.seed,
            s.linear_drift,
            s.angular_drift,
            s.speckle_rate,
            s.passthrough_rate,
            s.dropout_arc,
            s.partial_coverage
        );
    }
    let path = out.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(pairs)
}

/// The built-in fixture plans, for datagen runs without a floorplan directory.
pub fn builtin_floorplans(resolution: f64) -> Vec<NamedFloorplan> {
    [
        ("corridor_and_room", fixtures::corridor_and_room(resolution)),
        ("office", fixtures::office(resolution)),
        ("l_hall", fixtures::l_hall(resolution)),
        ("room", fixtures::room(8.0, 6.0, resolution)),
    ]
    .into_iter()
    .map(|(name, plan)| NamedFloorplan {
        name: name.to_string(),
        plan,
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spec_pair_is_identical() {
        let fp = fixtures::office(0.05);
        let traj = plan_trajectory(&fp, 2).unwrap();
        let pair = render_pair(&fp, "office", &traj, &ErrorSpec::zero(5), &RenderConfig::default());
        assert_eq!(pair.erroneous, pair.clean);
        assert!(pair.clean.count(OCCUPIED) > 100);
    }

    #[test]
    fn spec_validation() {
        assert!(ErrorSpec::zero(0).validate().is_ok());
        let bad = ErrorSpec { speckle_rate: 1.5, ..ErrorSpec::zero(0) };
        assert!(bad.validate().is_err());
        let bad = ErrorSpec { linear_drift: -0.1, ..ErrorSpec::zero(0) };
        assert!(bad.validate().is_err());
        assert!(ErrorRanges::default().validate().is_ok());
    }

    #[test]
    fn pair_seeds_differ() {
        assert_ne!(pair_seed(1, 0), pair_seed(1, 1));
        assert_eq!(pair_seed(1, 7), pair_seed(1, 7));
        assert_ne!(pair_seed(1, 7), pair_seed(2, 7));
    }
}
