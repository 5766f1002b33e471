//! The streaming mapping loop and its configuration.
//!
//! Each scan goes through filtering, covariance estimation, scan-to-scan and
//! scan-to-map registration, keyframe bookkeeping, 2D translation and grid
//! integration. Every `every_n` scans a discretized snapshot of the grid is
//! handed to a cleaning worker; the grid itself never sees cleaner output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cleaner::{build_cleaner, clean_map, CleanerConfig, CleanerKind, PatchCleaner};
use crate::cloud::{load_cloud_with, preprocess, CloudFormat, LoadOptions, PointCloud, PreprocessConfig};
use crate::error::{Error, Result};
use crate::gridmap::{
    input_filter, remove_floating_points, write_map, CodeMap, FiltrationConfig, GridConfig, OccupancyGrid, Trajectory,
};
use crate::pose::PoseSE3;
use crate::registration::{estimate_covariances, scan_to_map_align_to, gicp_align_to, GicpConfig, GicpTarget, KeyframeStore};
use crate::translation::{translate_cloud_with, TranslationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanerSection {
    /// `none`, `identity`, `morph` or `model:<path>`.
    pub kind: String,
    /// Clean a snapshot every this many scans (and once at the end); 0 only at the end.
    pub every_n: usize,
    pub tile_size: usize,
    pub overlap: usize,
    pub timeout_secs: f64,
}

impl Default for CleanerSection {
    fn default() -> Self {
        let c = CleanerConfig::default();
        Self {
            kind: "morph".into(),
            every_n: 10,
            tile_size: c.tile_size,
            overlap: c.overlap,
            timeout_secs: c.timeout_secs,
        }
    }
}

impl CleanerSection {
    pub fn tiling(&self) -> CleanerConfig {
        CleanerConfig {
            tile_size: self.tile_size,
            overlap: self.overlap,
            timeout_secs: self.timeout_secs,
        }
    }

    /// `None` when cleaning is disabled.
    pub fn parsed_kind(&self) -> Result<Option<CleanerKind>> {
        match self.kind.as_str() {
            "none" | "off" => Ok(None),
            s => CleanerKind::parse(s).map(Some),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Overrides the intensity divisor declared by cloud files.
    pub intensity_divisor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub gicp: GicpConfig,
    pub translation: TranslationConfig,
    pub grid: GridConfig,
    pub filtration: FiltrationConfig,
    pub cleaner: CleanerSection,
    pub io: IoSection,
    /// Pose of the first scan in the map frame: x, y (meters), yaw (degrees).
    pub initial_pose: [f64; 3],
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            gicp: GicpConfig::default(),
            translation: TranslationConfig::default(),
            grid: GridConfig::default(),
            filtration: FiltrationConfig::default(),
            cleaner: CleanerSection::default(),
            io: IoSection::default(),
            initial_pose: [0.0; 3],
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Checks every nested section. Does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.gicp.validate()?;
        self.grid.validate()?;
        self.filtration.validate()?;
        self.cleaner.tiling().validate()?;
        if let Some([lo, hi]) = self.translation.z_band {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig(format!("translation.z_band must be ordered, got [{lo}, {hi}]")));
            }
        }
        if let Some(d) = self.io.intensity_divisor {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("io.intensity_divisor must be positive, got {d}")));
            }
        }
        if !self.initial_pose.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("initial_pose must be finite".into()));
        }
        let kind = self.cleaner.kind.as_str();
        if !matches!(kind, "none" | "off" | "identity" | "morph" | "morphological") && !kind.starts_with("model:") {
            return Err(Error::InvalidConfig(format!(
                "unknown cleaner {kind:?}, expected none, identity, morph or model:<path>"
            )));
        }
        Ok(())
    }

    pub fn initial_pose(&self) -> PoseSE3 {
        let [x, y, yaw] = self.initial_pose;
        PoseSE3::from_planar(x, y, yaw.to_radians())
    }
}

/// Wall-clock seconds spent in each stage of one scan.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScanTiming {
    pub scan_index: u64,
    pub filtering: f64,
    pub registration: f64,
    pub translation: f64,
    pub integration: f64,
}

impl ScanTiming {
    pub fn total(&self) -> f64 {
        self.filtering + self.registration + self.translation + self.integration
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanOutcome {
    pub pose: PoseSE3,
    pub keyframe: Option<u64>,
    /// Scan-to-map diverged and the scan-to-scan prior was kept.
    pub fell_back: bool,
}

struct CleanJob {
    scan_index: u64,
    snapshot: CodeMap,
    prep_secs: f64,
}

struct CleanDone {
    scan_index: u64,
    result: Result<CodeMap>,
    secs: f64,
}

/// Owns the cleaner on its own thread and processes snapshots in order.
struct CleanWorker {
    jobs: Option<mpsc::Sender<CleanJob>>,
    done: mpsc::Receiver<CleanDone>,
    handle: Option<JoinHandle<()>>,
}

impl CleanWorker {
    fn spawn(mut cleaner: Box<dyn PatchCleaner + Send>, tiling: CleanerConfig, filtration: FiltrationConfig) -> Self {
        let (jobs, job_rx) = mpsc::channel::<CleanJob>();
        let (done_tx, done) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            for job in job_rx {
                let t = Instant::now();
                let result = remove_floating_points(&job.snapshot, &filtration)
                    .and_then(|m| clean_map(&m, cleaner.as_mut(), &tiling, &filtration));
                let done = CleanDone {
                    scan_index: job.scan_index,
                    result,
                    secs: job.prep_secs + t.elapsed().as_secs_f64(),
                };
                if done_tx.send(done).is_err() {
                    break;
                }
            }
        });
        Self {
            jobs: Some(jobs),
            done,
            handle: Some(handle),
        }
    }

    fn submit(&self, job: CleanJob) -> Result<()> {
        let scan = job.scan_index;
        self.jobs
            .as_ref()
            .and_then(|tx| tx.send(job).ok())
            .ok_or_else(|| Error::Model("cleaning worker stopped".into()).at_stage(scan, "clean"))
    }

    fn finish(mut self) -> Vec<CleanDone> {
        drop(self.jobs.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.done.try_iter().collect()
    }
}

impl Drop for CleanWorker {
    fn drop(&mut self) {
        drop(self.jobs.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Everything a finished mapping run produces.
#[derive(Debug)]
pub struct MapResult {
    /// The published map: cleaned when a cleaner is configured, otherwise the
    /// filtered snapshot.
    pub map: CodeMap,
    /// Discretized evidence grid (input filter only).
    pub evidence: CodeMap,
    pub grid: OccupancyGrid,
    pub trajectory: Trajectory,
    pub timings: Vec<ScanTiming>,
    /// Seconds per cleaned snapshot, in submission order.
    pub cleaning: Vec<f64>,
}

impl MapResult {
    /// Writes `map.pgm`, `evidence.pgm` (each with a sidecar) and `trajectory.txt` into `dir`.
    pub fn write(&self, dir: &Path, filtration: &FiltrationConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_map(&dir.join("map.pgm"), &self.map, Some(filtration))?;
        write_map(&dir.join("evidence.pgm"), &self.evidence, Some(filtration))?;
        let traj = dir.join("trajectory.txt");
        fs::write(&traj, self.trajectory.to_tum()).map_err(|e| Error::io(&traj, e))
    }
}

struct PrevScan {
    target: GicpTarget,
    pose: PoseSE3,
}

pub struct Mapper {
    cfg: PipelineConfig,
    grid: OccupancyGrid,
    keyframes: KeyframeStore,
    trajectory: Trajectory,
    prev: Option<PrevScan>,
    /// Last inter-scan motion, the scan-to-scan initial guess.
    velocity: PoseSE3,
    submap: Option<(Vec<u64>, GicpTarget)>,
    worker: Option<CleanWorker>,
    cleaned: Vec<CleanDone>,
    timings: Vec<ScanTiming>,
    last_clean_scan: Option<u64>,
}

impl Mapper {
    /// Validates `cfg` and starts the cleaner (launching external models now,
    /// so a bad model fails before any scan is read).
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let worker = match cfg.cleaner.parsed_kind()? {
            Some(kind) => Some(CleanWorker::spawn(
                build_cleaner(&kind, &cfg.cleaner.tiling())?,
                cfg.cleaner.tiling(),
                cfg.filtration,
            )),
            None => None,
        };
        let res = cfg.grid.resolution;
        let [x, y, _] = cfg.initial_pose;
        let grid = OccupancyGrid::centered((x / res).round() * res, (y / res).round() * res, &cfg.grid);
        Ok(Self {
            cfg,
            grid,
            keyframes: KeyframeStore::new(),
            trajectory: Trajectory::new(),
            prev: None,
            velocity: PoseSE3::identity(),
            submap: None,
            worker,
            cleaned: Vec::new(),
            timings: Vec::new(),
            last_clean_scan: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn keyframes(&self) -> &KeyframeStore {
        &self.keyframes
    }

    pub fn timings(&self) -> &[ScanTiming] {
        &self.timings
    }

    /// Discretized, floating-point-free view of the current grid.
    pub fn snapshot(&self) -> Result<CodeMap> {
        remove_floating_points(&input_filter(&self.grid, &self.cfg.filtration), &self.cfg.filtration)
    }

    fn submap_target(&mut self, around: &PoseSE3) -> &GicpTarget {
        let ids = self.keyframes.nearest_ids(around, self.cfg.gicp.submap_k_nearest);
        let stale = self.submap.as_ref().is_none_or(|(cached, _)| *cached != ids);
        if stale {
            let submap = self.keyframes.build_submap(&ids);
            self.submap = Some((ids, GicpTarget::new(submap.points)));
        }
        &self.submap.as_ref().expect("submap cached above").1
    }

    fn collect_cleaned(&mut self) -> Result<()> {
        if let Some(w) = &self.worker {
            self.cleaned.extend(w.done.try_iter());
        }
        if let Some(idx) = self.cleaned.iter().position(|d| d.result.is_err()) {
            let done = self.cleaned.remove(idx);
            if let Err(e) = done.result {
                return Err(e.at_stage(done.scan_index, "clean"));
            }
        }
        Ok(())
    }

    fn submit_snapshot(&mut self, scan_index: u64) -> Result<()> {
        let Some(worker) = &self.worker else {
            return Ok(());
        };
        let t = Instant::now();
        let snapshot = input_filter(&self.grid, &self.cfg.filtration);
        worker.submit(CleanJob {
            scan_index,
            snapshot,
            prep_secs: t.elapsed().as_secs_f64(),
        })?;
        self.last_clean_scan = Some(scan_index);
        Ok(())
    }

    /// Runs one scan through the pipeline. Scan indices must increase.
    pub fn process(&mut self, cloud: &PointCloud) -> Result<ScanOutcome> {
        let k = cloud.scan_index;
        if let Some(&(last, _)) = self.trajectory.last() {
            if k <= last {
                return Err(Error::OutOfOrderScan { last, got: k }.at_stage(k, "load"));
            }
        }
        self.collect_cleaned()?;
        let gicp = self.cfg.gicp;
        let mut timing = ScanTiming {
            scan_index: k,
            ..Default::default()
        };

        let t = Instant::now();
        let filtered = preprocess(cloud, &self.cfg.preprocess);
        if filtered.is_empty() {
            return Err(Error::EmptyCloud.at_stage(k, "filter"));
        }
        timing.filtering = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let covs = estimate_covariances(&filtered, &gicp).map_err(|e| e.at_stage(k, "covariance"))?;
        let mut fell_back = false;
        let pose = match self.prev.take() {
            None => self.cfg.initial_pose(),
            Some(prev) => {
                let s2s = gicp_align_to(&covs, &prev.target, &self.velocity, &gicp)
                    .map_err(|e| e.at_stage(k, "scan_to_scan"))?;
                let prior = prev.pose.compose(&s2s.pose);
                let target = self.submap_target(&prior);
                let s2m = scan_to_map_align_to(&covs, target, &prior, &gicp).map_err(|e| e.at_stage(k, "scan_to_map"))?;
                fell_back = s2m.fell_back;
                self.velocity = prev.pose.inverse().compose(&s2m.pose);
                s2m.pose
            }
        };
        if !pose.is_finite() {
            return Err(Error::Precondition("registration produced a non-finite pose".into()).at_stage(k, "scan_to_map"));
        }
        let keyframe = self.keyframes.add(&pose, &filtered, Some(&covs), &gicp);
        self.prev = Some(PrevScan {
            target: GicpTarget::new(covs),
            pose,
        });
        timing.registration = t.elapsed().as_secs_f64();

        // the translation branch works on the unfiltered cloud
        let t = Instant::now();
        let scan = translate_cloud_with(cloud, &self.cfg.translation).map_err(|e| e.at_stage(k, "translate"))?;
        timing.translation = t.elapsed().as_secs_f64();

        let t = Instant::now();
        self.grid.integrate_scan(&scan, &pose);
        self.trajectory.push(k, pose).map_err(|e| e.at_stage(k, "record_pose"))?;
        timing.integration = t.elapsed().as_secs_f64();
        self.timings.push(timing);

        let n = self.cfg.cleaner.every_n;
        if n > 0 && self.trajectory.len() % n == 0 {
            self.submit_snapshot(k)?;
        }
        Ok(ScanOutcome {
            pose,
            keyframe,
            fell_back,
        })
    }

    /// Cleans the final grid (unless the last scan already triggered it) and
    /// waits for the worker.
    pub fn finish(mut self) -> Result<MapResult> {
        let Some(&(last, _)) = self.trajectory.last() else {
            return Err(Error::Precondition("no scans were processed".into()));
        };
        if self.last_clean_scan != Some(last) {
            self.submit_snapshot(last)?;
        }
        self.collect_cleaned()?;
        if let Some(worker) = self.worker.take() {
            self.cleaned.extend(worker.finish());
        }
        self.collect_cleaned()?;
        let evidence = input_filter(&self.grid, &self.cfg.filtration);
        let map = match self.cleaned.last() {
            Some(CleanDone { result: Ok(m), .. }) => m.clone(),
            _ => remove_floating_points(&evidence, &self.cfg.filtration).map_err(|e| e.at_stage(last, "filter"))?,
        };
        Ok(MapResult {
            map,
            evidence,
            cleaning: self.cleaned.iter().map(|d| d.secs).collect(),
            grid: self.grid.clone(),
            trajectory: std::mem::take(&mut self.trajectory),
            timings: std::mem::take(&mut self.timings),
        })
    }
}

/// Cloud files (`.pcd`, `.csv`, `.xyzi`) in `dir`, sorted by name.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("pcd" | "csv" | "xyzi")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads scan `index` of a sequence.
pub fn load_scan(path: &Path, index: u64, cfg: &PipelineConfig) -> Result<PointCloud> {
    let opts = LoadOptions {
        intensity_divisor: cfg.io.intensity_divisor,
        scan_index: index,
    };
    CloudFormat::detect(path)
        .and_then(|f| load_cloud_with(path, f, &opts))
        .map(|(c, _)| c)
        .map_err(|e| e.at_stage(index, "load"))
}

/// Maps a directory of scans. At least two scans are required.
pub fn run_directory(dir: &Path, cfg: &PipelineConfig) -> Result<MapResult> {
    let files = list_scans(dir)?;
    if files.len() < 2 {
        return Err(Error::Precondition(format!(
            "{} holds {} scan(s), mapping needs at least 2",
            dir.display(),
            files.len()
        )));
    }
    let mut mapper = Mapper::new(cfg.clone())?;
    for (i, path) in files.iter().enumerate() {
        let cloud = load_scan(path, i as u64, cfg)?;
        mapper.process(&cloud)?;
    }
    mapper.finish()
}

/// Maps an in-memory sequence of clouds.
pub fn run_clouds(clouds: &[PointCloud], cfg: &PipelineConfig) -> Result<MapResult> {
    if clouds.len() < 2 {
        return Err(Error::Precondition(format!("mapping needs at least 2 scans, got {}", clouds.len())));
    }
    let mut mapper = Mapper::new(cfg.clone())?;
    for cloud in clouds {
        mapper.process(cloud)?;
    }
    mapper.finish()
}
