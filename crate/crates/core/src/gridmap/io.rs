use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CodeMap, FiltrationConfig, GridGeometry};
use crate::error::{Error, Result};

/// Sidecar describing where a PGM map sits in the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMetadata {
    pub image: String,
    /// Meters per cell.
    pub resolution: f64,
    /// World (x, y, yaw) of the lower-left corner of the bottom-left cell.
    pub origin: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub free_code: u8,
    pub occupied_code: u8,
    pub unknown_code: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<FiltrationConfig>,
}

impl MapMetadata {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            origin_x: self.origin[0],
            origin_y: self.origin[1],
        }
    }
}

/// `map.pgm` -> `map.meta.toml`.
pub fn metadata_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("meta.toml")
}

/// Binary (P5) greymap, 8 bits per pixel, row 0 first.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5 or P2 greymap with maxval <= 255. Returns (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |detail: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let magic = tokens[0].as_str();
    if magic != "P5" && magic != "P2" {
        return Err(malformed(&format!("unsupported magic {magic:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| malformed(&format!("bad number {s:?}")));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(malformed(&format!("maxval {maxval} outside 1..=255")));
    }
    let n = width * height;
    let pixels = if magic == "P5" {
        // exactly one whitespace byte separates the header from the raster
        let body = &bytes[(pos + 1).min(bytes.len())..];
        if body.len() < n {
            return Err(Error::RecordCountMismatch {
                path: path.to_path_buf(),
                declared: n,
                found: body.len(),
            });
        }
        body[..n].to_vec()
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let values: Vec<&str> = text.split_whitespace().collect();
        if values.len() != n {
            return Err(Error::RecordCountMismatch {
                path: path.to_path_buf(),
                declared: n,
                found: values.len(),
            });
        }
        values
            .iter()
            .map(|v| v.parse::<u8>().map_err(|_| malformed(&format!("bad pixel {v:?}"))))
            .collect::<Result<_>>()?
    };
    let pixels = if maxval == 255 {
        pixels
    } else {
        pixels
            .into_iter()
            .map(|p| ((p as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok((width, height, pixels))
}

/// Writes `map` as PGM plus its `.meta.toml` sidecar.
pub fn write_map(path: &Path, map: &CodeMap, thresholds: Option<&FiltrationConfig>) -> Result<()> {
    let geo = map.geometry;
    write_pgm(path, geo.width, geo.height, &map.codes)?;
    let meta = MapMetadata {
        image: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        resolution: geo.resolution,
        origin: [geo.origin_x, geo.origin_y, 0.0],
        width: geo.width,
        height: geo.height,
        free_code: super::FREE,
        occupied_code: super::OCCUPIED,
        unknown_code: super::UNKNOWN,
        thresholds: thresholds.copied(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let meta_path = metadata_path(path);
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

pub fn read_metadata(pgm: &Path) -> Result<MapMetadata> {
    let meta_path = metadata_path(pgm);
    if !meta_path.exists() {
        return Err(Error::MissingMetadata(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    toml::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: meta_path,
        detail: e.to_string(),
    })
}

/// Reads a map written by [`write_map`]; the sidecar is required.
pub fn read_map(path: &Path) -> Result<(CodeMap, MapMetadata)> {
    let meta = read_metadata(path)?;
    let (width, height, codes) = read_pgm(path)?;
    if width != meta.width || height != meta.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", meta.width, meta.height),
            got: format!("{width}x{height}"),
        });
    }
    Ok((
        CodeMap {
            geometry: meta.geometry(),
            codes,
        },
        meta,
    ))
}
