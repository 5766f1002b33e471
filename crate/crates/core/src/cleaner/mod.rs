//! Map cleaning: tiling, per-patch cleaners and stitching.
//!
//! A discretized map is cut into fixed-size patches (values `code / 255`),
//! each patch goes through a [`PatchCleaner`], the results are averaged back
//! into one raster and the output thresholds turn it into codes again.

mod external;
mod morph;
mod tiling;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::{output_filter, CodeMap, FiltrationConfig};

pub use external::{ExternalModel, ModelCommand, ONNX_ADAPTER, HANDSHAKE_ID, MAGIC, PIPELINING};
pub use morph::{morphological_clean, Morphological};
pub use tiling::{stitch_map, tile_map, tiles_per_axis, TilePatch};

/// Which cleaner to run on map patches.
#[derive(Clone, Debug, PartialEq)]
pub enum CleanerKind {
    Identity,
    Morphological,
    /// A `.onnx` model file or an executable speaking the patch protocol.
    ExternalModel(PathBuf),
}

impl CleanerKind {
    /// Parses `identity`, `morph` or `model:<path>`; the model path must exist.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "morph" | "morphological" => Ok(Self::Morphological),
            _ => match s.strip_prefix("model:") {
                Some(path) => Self::external(path),
                None => Err(Error::InvalidConfig(format!(
                    "unknown cleaner {s:?}, expected identity, morph or model:<path>"
                ))),
            },
        }
    }

    pub fn external(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Model(format!("model not found: {}", path.display())));
        }
        Ok(Self::ExternalModel(path.to_path_buf()))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Morphological => "morph".into(),
            Self::ExternalModel(p) => format!("model:{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanerConfig {
    pub tile_size: usize,
    pub overlap: usize,
    /// Per-patch response timeout for external models, seconds.
    pub timeout_secs: f64,
}

impl Default for CleanerConfig {
    fn default() -> Self {
        Self {
            tile_size: 256,
            overlap: 32,
            timeout_secs: 10.0,
        }
    }
}

impl CleanerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::InvalidConfig(format!(
                "cleaner needs tile_size > overlap >= 0, got tile_size {} overlap {}",
                self.tile_size, self.overlap
            )));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cleaner timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }
}

/// Maps one patch to a cleaned patch of the same shape, values in [0, 1].
pub trait PatchCleaner {
    /// Cleans all patches; implementations may batch or parallelize.
    fn clean_patches(&mut self, patches: Vec<TilePatch>) -> Result<Vec<TilePatch>>;
}

pub struct Identity;

impl PatchCleaner for Identity {
    fn clean_patches(&mut self, patches: Vec<TilePatch>) -> Result<Vec<TilePatch>> {
        Ok(patches)
    }
}

impl PatchCleaner for Morphological {
    fn clean_patches(&mut self, patches: Vec<TilePatch>) -> Result<Vec<TilePatch>> {
        Ok(patches.into_par_iter().map(|p| self.clean(&p)).collect())
    }
}

/// Instantiates the cleaner for `kind`. External models are launched and
/// handshaken here.
pub fn build_cleaner(kind: &CleanerKind, cfg: &CleanerConfig) -> Result<Box<dyn PatchCleaner + Send>> {
    Ok(match kind {
        CleanerKind::Identity => Box::new(Identity),
        CleanerKind::Morphological => Box::new(Morphological),
        CleanerKind::ExternalModel(path) => Box::new(ExternalModel::launch(
            &ModelCommand::for_path(path),
            cfg.tile_size,
            std::time::Duration::from_secs_f64(cfg.timeout_secs),
        )?),
    })
}

/// tile → clean → stitch → output filter. Geometry is carried over unchanged.
pub fn clean_map(
    map: &CodeMap,
    cleaner: &mut dyn PatchCleaner,
    cfg: &CleanerConfig,
    filtration: &FiltrationConfig,
) -> Result<CodeMap> {
    let patches = tile_map(map, cfg.tile_size, cfg.overlap)?;
    let cleaned = cleaner.clean_patches(patches)?;
    let raster = stitch_map(&cleaned, map.width(), map.height())?;
    output_filter(&raster, map.geometry, filtration)
}

/// [`clean_map`] with a freshly built cleaner of `kind`.
pub fn clean_map_with(
    map: &CodeMap,
    kind: &CleanerKind,
    cfg: &CleanerConfig,
    filtration: &FiltrationConfig,
) -> Result<CodeMap> {
    let mut cleaner = build_cleaner(kind, cfg)?;
    clean_map(map, cleaner.as_mut(), cfg, filtration)
}
