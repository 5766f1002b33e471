//! Point cloud model, PCD/CSV file I/O and the per-scan preprocessing filters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisor applied to raw intensities when a file does not declare its maximum.
pub const DEFAULT_INTENSITY_DIVISOR: f64 = 255.0;

const INTENSITY_MAX_TAG: &str = "intensity_max";

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Normalized reflectance in [0, 1].
    pub intensity: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub scan_index: u64,
    pub timestamp: Option<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, scan_index: u64) -> Self {
        Self {
            points,
            scan_index,
            timestamp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, different points.
    pub fn with_points(&self, points: Vec<Point3>) -> Self {
        Self {
            points,
            scan_index: self.scan_index,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Half-width of the sensor-centred exclusion cube, meters.
    pub box_half_width: f64,
    /// Voxel edge length for downsampling, meters.
    pub voxel_resolution: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            box_half_width: 1.0,
            voxel_resolution: 0.25,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_half_width > 0.0) || !(self.voxel_resolution > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "box_half_width and voxel_resolution must be positive (got {} and {})",
                self.box_half_width, self.voxel_resolution
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    PcdAscii,
    PcdBinary,
    XyziCsv,
}

impl CloudFormat {
    /// Guesses the format from the file extension; PCD files are sniffed for their DATA line.
    pub fn detect(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("csv") | Some("xyzi") => Ok(CloudFormat::XyziCsv),
            Some("pcd") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let head = &bytes[..bytes.len().min(4096)];
                let text = String::from_utf8_lossy(head);
                let data = text
                    .lines()
                    .find(|l| l.trim_start().starts_with("DATA"))
                    .ok_or_else(|| malformed(path, "no DATA line"))?;
                match data.split_whitespace().nth(1) {
                    Some("ascii") => Ok(CloudFormat::PcdAscii),
                    Some("binary") => Ok(CloudFormat::PcdBinary),
                    other => Err(malformed(path, format!("unsupported DATA kind {other:?}"))),
                }
            }
            _ => Err(malformed(path, "unknown point cloud extension")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Overrides the divisor declared by the file (or the 255 default).
    pub intensity_divisor: Option<f64>,
    pub scan_index: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub declared: usize,
    pub dropped_non_finite: usize,
    pub clamped_intensity: usize,
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    load_cloud_with(path, format, &LoadOptions::default()).map(|(c, _)| c)
}

pub fn load_cloud_with(
    path: impl AsRef<Path>,
    format: CloudFormat,
    opts: &LoadOptions,
) -> Result<(PointCloud, LoadStats)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = match format {
        CloudFormat::PcdAscii | CloudFormat::PcdBinary => parse_pcd(path, &bytes, format)?,
        CloudFormat::XyziCsv => parse_csv(path, &bytes)?,
    };
    let divisor = opts
        .intensity_divisor
        .or(raw.declared_max)
        .unwrap_or(DEFAULT_INTENSITY_DIVISOR);
    if !(divisor > 0.0) {
        return Err(Error::InvalidConfig(format!("intensity divisor must be positive, got {divisor}")));
    }

    let mut stats = LoadStats {
        declared: raw.records.len(),
        ..Default::default()
    };
    let mut points = Vec::with_capacity(raw.records.len());
    for [x, y, z, i] in raw.records {
        let mut p = Point3::new(x, y, z, i / divisor);
        if !p.is_finite() {
            stats.dropped_non_finite += 1;
            continue;
        }
        if !(0.0..=1.0).contains(&p.intensity) {
            stats.clamped_intensity += 1;
            p.intensity = if p.intensity.is_nan() { 0.0 } else { p.intensity.clamp(0.0, 1.0) };
        }
        points.push(p);
    }
    if stats.dropped_non_finite > 0 {
        log::warn!(
            "{}: dropped {} points with non-finite coordinates",
            path.display(),
            stats.dropped_non_finite
        );
    }
    if stats.clamped_intensity > 0 {
        log::warn!(
            "{}: clamped {} intensities outside [0, {divisor}]",
            path.display(),
            stats.clamped_intensity
        );
    }
    let cloud = PointCloud::new(points, opts.scan_index);
    Ok((cloud, stats))
}

struct RawCloud {
    records: Vec<[f64; 4]>,
    declared_max: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
enum FieldType {
    F32,
    F64,
    U8,
    U16,
    U32,
    U64,
    I8,
    I16,
    I32,
    I64,
}

impl FieldType {
    fn parse(ty: &str, size: usize) -> Option<Self> {
        Some(match (ty, size) {
            ("F", 4) => FieldType::F32,
            ("F", 8) => FieldType::F64,
            ("U", 1) => FieldType::U8,
            ("U", 2) => FieldType::U16,
            ("U", 4) => FieldType::U32,
            ("U", 8) => FieldType::U64,
            ("I", 1) => FieldType::I8,
            ("I", 2) => FieldType::I16,
            ("I", 4) => FieldType::I32,
            ("I", 8) => FieldType::I64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            FieldType::U8 | FieldType::I8 => 1,
            FieldType::U16 | FieldType::I16 => 2,
            FieldType::F32 | FieldType::U32 | FieldType::I32 => 4,
            FieldType::F64 | FieldType::U64 | FieldType::I64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            FieldType::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            FieldType::U8 => b[0] as f64,
            FieldType::U16 => u16::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::U64 => u64::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::I8 => b[0] as i8 as f64,
            FieldType::I16 => i16::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            FieldType::I64 => i64::from_le_bytes(b.try_into().unwrap()) as f64,
        }
    }

    fn parse_text(self, s: &str) -> Option<f64> {
        match self {
            // parse through f32 so ASCII and binary carry the same values
            FieldType::F32 => s.parse::<f32>().ok().map(f64::from),
            FieldType::F64 => s.parse::<f64>().ok(),
            _ => s.parse::<f64>().ok(),
        }
    }
}

struct PcdHeader {
    fields: Vec<String>,
    types: Vec<FieldType>,
    points: usize,
    data: String,
    declared_max: Option<f64>,
    body_offset: usize,
}

fn parse_pcd_header(path: &Path, bytes: &[u8]) -> Result<PcdHeader> {
    let mut fields: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut types: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width: Option<usize> = None;
    let mut height: Option<usize> = None;
    let mut points: Option<usize> = None;
    let mut declared_max = None;

    let mut offset = 0;
    loop {
        if offset >= bytes.len() {
            return Err(malformed(path, "header ended before DATA line"));
        }
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |p| offset + p + 1);
        let line = std::str::from_utf8(&bytes[offset..end])
            .map_err(|_| malformed(path, "header is not valid UTF-8"))?
            .trim();
        offset = end;
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if it.next() == Some(INTENSITY_MAX_TAG) {
                declared_max = it.next().and_then(|v| v.parse::<f64>().ok());
                if declared_max.is_none() {
                    return Err(malformed(path, "unparseable intensity_max comment"));
                }
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or_default();
        let rest: Vec<&str> = it.collect();
        let nums = |what: &str| -> Result<Vec<usize>> {
            rest.iter()
                .map(|v| v.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed(path, format!("bad {what} entry")))
        };
        match key {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => fields = Some(rest.iter().map(|s| s.to_string()).collect()),
            "SIZE" => sizes = Some(nums("SIZE")?),
            "TYPE" => types = Some(rest.iter().map(|s| s.to_string()).collect()),
            "COUNT" => counts = Some(nums("COUNT")?),
            "WIDTH" => width = nums("WIDTH")?.first().copied(),
            "HEIGHT" => height = nums("HEIGHT")?.first().copied(),
            "POINTS" => points = nums("POINTS")?.first().copied(),
            "DATA" => {
                let data = rest.first().copied().unwrap_or_default().to_string();
                let fields = fields.ok_or_else(|| malformed(path, "missing FIELDS"))?;
                let n = fields.len();
                let sizes = sizes.unwrap_or_else(|| vec![4; n]);
                let types = types.unwrap_or_else(|| vec!["F".into(); n]);
                let counts = counts.unwrap_or_else(|| vec![1; n]);
                if sizes.len() != n || types.len() != n || counts.len() != n {
                    return Err(malformed(path, "FIELDS/SIZE/TYPE/COUNT lengths differ"));
                }
                if counts.iter().any(|&c| c != 1) {
                    return Err(malformed(path, "only COUNT 1 fields are supported"));
                }
                let types = types
                    .iter()
                    .zip(&sizes)
                    .map(|(t, &s)| FieldType::parse(t, s))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| malformed(path, "unsupported TYPE/SIZE combination"))?;
                let points = match (points, width, height) {
                    (Some(p), Some(w), Some(h)) if p != w * h => {
                        return Err(malformed(path, format!("POINTS {p} != WIDTH*HEIGHT {}", w * h)))
                    }
                    (Some(p), _, _) => p,
                    (None, Some(w), Some(h)) => w * h,
                    _ => return Err(malformed(path, "missing POINTS")),
                };
                return Ok(PcdHeader {
                    fields,
                    types,
                    points,
                    data,
                    declared_max,
                    body_offset: offset,
                });
            }
            other => return Err(malformed(path, format!("unknown header key {other:?}"))),
        }
    }
}

fn required_fields(path: &Path, fields: &[String]) -> Result<[usize; 4]> {
    let find = |name: &str| {
        fields
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| malformed(path, format!("missing field {name}")))
    };
    Ok([find("x")?, find("y")?, find("z")?, find("intensity")?])
}

fn parse_pcd(path: &Path, bytes: &[u8], format: CloudFormat) -> Result<RawCloud> {
    let header = parse_pcd_header(path, bytes)?;
    let idx = required_fields(path, &header.fields)?;
    let body = &bytes[header.body_offset..];
    let records = match (header.data.as_str(), format) {
        ("ascii", CloudFormat::PcdAscii) => {
            let text = std::str::from_utf8(body).map_err(|_| malformed(path, "ASCII body is not UTF-8"))?;
            let header_lines = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count();
            let mut records = Vec::with_capacity(header.points);
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let line_no = header_lines + ln + 1;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() != header.fields.len() {
                    return Err(Error::FieldCountMismatch {
                        path: path.to_path_buf(),
                        line: line_no,
                        expected: header.fields.len(),
                        found: tokens.len(),
                    });
                }
                let mut rec = [0.0; 4];
                for (slot, &fi) in rec.iter_mut().zip(&idx) {
                    *slot = header.types[fi].parse_text(tokens[fi]).ok_or_else(|| Error::BadValue {
                        path: path.to_path_buf(),
                        line: line_no,
                        value: tokens[fi].to_string(),
                    })?;
                }
                records.push(rec);
            }
            records
        }
        ("binary", CloudFormat::PcdBinary) => {
            let offsets: Vec<usize> = header
                .types
                .iter()
                .scan(0, |acc, t| {
                    let o = *acc;
                    *acc += t.size();
                    Some(o)
                })
                .collect();
            let stride: usize = header.types.iter().map(|t| t.size()).sum();
            let available = body.len() / stride;
            if available < header.points {
                return Err(Error::RecordCountMismatch {
                    path: path.to_path_buf(),
                    declared: header.points,
                    found: available,
                });
            }
            body.chunks_exact(stride)
                .take(header.points)
                .map(|rec| {
                    let mut out = [0.0; 4];
                    for (slot, &fi) in out.iter_mut().zip(&idx) {
                        let t = header.types[fi];
                        *slot = t.decode_le(&rec[offsets[fi]..offsets[fi] + t.size()]);
                    }
                    out
                })
                .collect()
        }
        (data, _) => {
            return Err(malformed(path, format!("DATA {data} does not match requested format {format:?}")));
        }
    };
    if records.len() != header.points {
        return Err(Error::RecordCountMismatch {
            path: path.to_path_buf(),
            declared: header.points,
            found: records.len(),
        });
    }
    Ok(RawCloud {
        records,
        declared_max: header.declared_max,
    })
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<RawCloud> {
    let text = std::str::from_utf8(bytes).map_err(|_| malformed(path, "CSV is not UTF-8"))?;
    let mut records = Vec::new();
    let mut declared_max = None;
    let mut seen_data = false;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if it.next() == Some(INTENSITY_MAX_TAG) {
                declared_max = it.next().and_then(|v| v.parse::<f64>().ok());
            }
            continue;
        }
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_data && tokens.first().is_some_and(|t| t.parse::<f64>().is_err()) {
            if tokens != ["x", "y", "z", "intensity"] {
                return Err(malformed(path, format!("CSV header must be x,y,z,intensity, got {line:?}")));
            }
            seen_data = true;
            continue;
        }
        seen_data = true;
        if tokens.len() != 4 {
            return Err(Error::FieldCountMismatch {
                path: path.to_path_buf(),
                line: ln + 1,
                expected: 4,
                found: tokens.len(),
            });
        }
        let mut rec = [0.0; 4];
        for (slot, tok) in rec.iter_mut().zip(&tokens) {
            *slot = tok.parse::<f64>().map_err(|_| Error::BadValue {
                path: path.to_path_buf(),
                line: ln + 1,
                value: tok.to_string(),
            })?;
        }
        records.push(rec);
    }
    Ok(RawCloud {
        records,
        declared_max,
    })
}

/// Writes `cloud` with normalized intensities and an `intensity_max 1` tag so
/// that loading the file back reproduces the same values.
pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cloud(cloud, format);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_cloud(cloud: &PointCloud, format: CloudFormat) -> Vec<u8> {
    let n = cloud.points.len();
    match format {
        CloudFormat::XyziCsv => {
            let mut s = String::with_capacity(32 * n + 40);
            let _ = writeln!(s, "# {INTENSITY_MAX_TAG} 1");
            s.push_str("x,y,z,intensity\n");
            for p in &cloud.points {
                let _ = writeln!(s, "{},{},{},{}", p.x, p.y, p.z, p.intensity);
            }
            s.into_bytes()
        }
        CloudFormat::PcdAscii | CloudFormat::PcdBinary => {
            let binary = format == CloudFormat::PcdBinary;
            let mut s = String::new();
            s.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
            let _ = writeln!(s, "# {INTENSITY_MAX_TAG} 1");
            s.push_str("VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n");
            let _ = writeln!(s, "WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}");
            let _ = writeln!(s, "DATA {}", if binary { "binary" } else { "ascii" });
            let mut out = s.into_bytes();
            if binary {
                out.reserve(16 * n);
                for p in &cloud.points {
                    for v in [p.x, p.y, p.z, p.intensity] {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            } else {
                let mut body = String::with_capacity(32 * n);
                for p in &cloud.points {
                    let _ = writeln!(
                        body,
                        "{} {} {} {}",
                        p.x as f32, p.y as f32, p.z as f32, p.intensity as f32
                    );
                }
                out.extend_from_slice(body.as_bytes());
            }
            out
        }
    }
}

/// Removes every point inside the closed axis-aligned cube of half-width
/// `box_half_width` around the sensor origin. Survivor order is preserved.
pub fn box_filter(cloud: &PointCloud, cfg: &PreprocessConfig) -> PointCloud {
    let hw = cfg.box_half_width;
    let points = cloud
        .points
        .iter()
        .filter(|p| p.x.abs().max(p.y.abs()).max(p.z.abs()) > hw)
        .copied()
        .collect();
    cloud.with_points(points)
}

#[derive(Default, Clone, Copy)]
struct VoxelAccum {
    sum: [f64; 4],
    count: usize,
}

/// Replaces the points of each occupied voxel by their centroid (mean
/// intensity). Voxels are emitted in order of first occurrence.
pub fn voxel_grid_filter(cloud: &PointCloud, cfg: &PreprocessConfig) -> PointCloud {
    let r = cfg.voxel_resolution;
    let mut voxels: IndexMap<[i64; 3], VoxelAccum> = IndexMap::with_capacity(cloud.len() / 2 + 1);
    for p in &cloud.points {
        let key = voxel_key(p, r);
        let acc = voxels.entry(key).or_default();
        acc.sum[0] += p.x;
        acc.sum[1] += p.y;
        acc.sum[2] += p.z;
        acc.sum[3] += p.intensity;
        acc.count += 1;
    }
    let points = voxels
        .values()
        .map(|a| {
            let n = a.count as f64;
            Point3::new(a.sum[0] / n, a.sum[1] / n, a.sum[2] / n, a.sum[3] / n)
        })
        .collect();
    cloud.with_points(points)
}

pub fn voxel_key(p: &Point3, resolution: f64) -> [i64; 3] {
    [
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
        (p.z / resolution).floor() as i64,
    ]
}

/// Box filter followed by voxel downsampling.
pub fn preprocess(cloud: &PointCloud, cfg: &PreprocessConfig) -> PointCloud {
    voxel_grid_filter(&box_filter(cloud, cfg), cfg)
}
