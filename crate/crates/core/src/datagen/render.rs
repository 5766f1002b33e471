use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ErrorSpec, FloorplanRaster, Pose2D};
use crate::error::{Error, Result};
use crate::gridmap::raytrace::GridRay;
use crate::gridmap::{CodeMap, FREE, OCCUPIED, UNKNOWN};

/// 2D range sensor used to render pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub beams: usize,
    pub max_range: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            beams: 720,
            max_range: 8.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 || !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "render needs beams > 0 and a positive max_range, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Sensor-frame azimuth of beam `i`, offset half a beam from the axes.
    pub fn beam_angle(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * TAU / self.beams as f64
    }
}

/// Result of casting one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance to the hit (entry into the obstacle cell), or where the ray stopped.
    pub range: f64,
    pub hit: bool,
}

fn ray(fp: &FloorplanRaster, x: f64, y: f64, angle: f64) -> GridRay {
    let res = fp.resolution;
    let (s, c) = angle.sin_cos();
    GridRay::new((x / res, y / res), (c / res, s / res))
}

fn inside(fp: &FloorplanRaster, col: i64, row: i64) -> bool {
    col >= 0 && row >= 0 && col < fp.width as i64 && row < fp.height as i64
}

/// Casts a ray through `fp` from (x, y). Cells flagged in `transmissive` are
/// passed through. Leaving the image ends the ray without a hit.
pub fn cast_ray(
    fp: &FloorplanRaster,
    x: f64,
    y: f64,
    angle: f64,
    max_range: f64,
    transmissive: Option<&[bool]>,
) -> RayHit {
    for span in ray(fp, x, y, angle) {
        if span.is_touch() {
            continue;
        }
        if span.t_enter >= max_range {
            break;
        }
        if !inside(fp, span.col, span.row) {
            return RayHit {
                range: span.t_enter,
                hit: false,
            };
        }
        if fp.occupied_at(span.col, span.row) {
            let idx = (fp.height - 1 - span.row as usize) * fp.width + span.col as usize;
            if transmissive.is_some_and(|t| t[idx]) {
                continue;
            }
            return RayHit {
                range: span.t_enter,
                hit: true,
            };
        }
    }
    RayHit {
        range: max_range,
        hit: false,
    }
}

/// Per-cell hit and pass-through counts of a rendered map.
#[derive(Clone, Debug)]
pub struct RayCounts {
    width: usize,
    height: usize,
    hits: Vec<u32>,
    frees: Vec<u32>,
}

impl RayCounts {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            hits: vec![0; width * height],
            frees: vec![0; width * height],
        }
    }

    fn index(&self, col: i64, row: i64) -> Option<usize> {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return None;
        }
        Some((self.height - 1 - row as usize) * self.width + col as usize)
    }

    /// Marks cells along the ray: those left before `range` free, the cell
    /// holding `range` occupied when `hit`.
    pub fn trace(&mut self, fp: &FloorplanRaster, x: f64, y: f64, angle: f64, measured: RayHit) {
        for span in ray(fp, x, y, angle) {
            if span.is_touch() {
                continue;
            }
            let Some(i) = self.index(span.col, span.row) else {
                break;
            };
            if measured.hit {
                if span.t_exit > measured.range {
                    self.hits[i] += 1;
                    break;
                }
            } else if span.t_enter >= measured.range {
                break;
            }
            self.frees[i] += 1;
        }
    }

    /// Any hit makes a cell occupied; otherwise any pass makes it free.
    pub fn to_codes(&self) -> Vec<u8> {
        self.hits
            .iter()
            .zip(&self.frees)
            .map(|(&h, &f)| if h > 0 { OCCUPIED } else if f > 0 { FREE } else { UNKNOWN })
            .collect()
    }
}

/// Occupied cells lying in a horizontal or vertical run of at most two cells.
pub fn thin_obstacles(fp: &FloorplanRaster) -> Vec<bool> {
    let (w, h) = (fp.width, fp.height);
    let mut run_h = vec![0usize; w * h];
    let mut run_v = vec![0usize; w * h];
    for r in 0..h {
        let mut c = 0;
        while c < w {
            if !fp.occupied[r * w + c] {
                c += 1;
                continue;
            }
            let start = c;
            while c < w && fp.occupied[r * w + c] {
                c += 1;
            }
            for k in start..c {
                run_h[r * w + k] = c - start;
            }
        }
    }
    for c in 0..w {
        let mut r = 0;
        while r < h {
            if !fp.occupied[r * w + c] {
                r += 1;
                continue;
            }
            let start = r;
            while r < h && fp.occupied[r * w + c] {
                r += 1;
            }
            for k in start..r {
                run_v[k * w + c] = r - start;
            }
        }
    }
    (0..w * h)
        .map(|i| fp.occupied[i] && (run_h[i] <= 2 || run_v[i] <= 2))
        .collect()
}

/// Exact ray-cast map from the drift-free trajectory.
pub fn render_clean(fp: &FloorplanRaster, trajectory: &[Pose2D], cfg: &RenderConfig) -> CodeMap {
    let mut counts = RayCounts::new(fp.width, fp.height);
    for pose in trajectory {
        for i in 0..cfg.beams {
            let angle = pose.yaw + cfg.beam_angle(i);
            let measured = cast_ray(fp, pose.x, pose.y, angle, cfg.max_range, None);
            counts.trace(fp, pose.x, pose.y, angle, measured);
        }
    }
    CodeMap {
        geometry: fp.geometry(),
        codes: counts.to_codes(),
    }
}

/// Estimated poses after accumulating drift along arc length. Each pair draws
/// the sign of its linear and angular drift once.
pub fn drift_trajectory(trajectory: &[Pose2D], spec: &ErrorSpec, rng: &mut impl Rng) -> Vec<Pose2D> {
    let lin_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let ang_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    if spec.linear_drift == 0.0 && spec.angular_drift == 0.0 {
        return trajectory.to_vec();
    }
    let mut out = Vec::with_capacity(trajectory.len());
    let Some(&first) = trajectory.first() else {
        return out;
    };
    out.push(first);
    for w in trajectory.windows(2) {
        let (a, b) = (w[0], w[1]);
        // true motion in a's frame
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let (s, c) = a.yaw.sin_cos();
        let (bx, by) = (c * dx + s * dy, -s * dx + c * dy);
        let dist = dx.hypot(dy);
        let scale = 1.0 + lin_sign * spec.linear_drift;
        let prev = *out.last().unwrap_or(&first);
        let (ps, pc) = prev.yaw.sin_cos();
        let (mx, my) = (bx * scale, by * scale);
        out.push(Pose2D {
            x: prev.x + pc * mx - ps * my,
            y: prev.y + ps * mx + pc * my,
            yaw: prev.yaw + (b.yaw - a.yaw) + ang_sign * spec.angular_drift.to_radians() * dist,
        });
    }
    out
}

/// Erroneous map: ranges measured from the true poses (with pass-through and
/// dropout), integrated from drifted poses over the executed part of the
/// trajectory, then speckled.
pub fn render_erroneous(
    fp: &FloorplanRaster,
    trajectory: &[Pose2D],
    spec: &ErrorSpec,
    cfg: &RenderConfig,
) -> CodeMap {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let executed = ((spec.partial_coverage * trajectory.len() as f64).ceil() as usize)
        .clamp(1.min(trajectory.len()), trajectory.len());
    let truth = &trajectory[..executed];
    let estimate = drift_trajectory(truth, spec, &mut rng);
    let thin = thin_obstacles(fp);
    let mut counts = RayCounts::new(fp.width, fp.height);
    let beam_deg = 360.0 / cfg.beams as f64;
    for (t, e) in truth.iter().zip(&estimate) {
        let dropout_start = if spec.dropout_arc > 0.0 {
            rng.random::<f64>() * 360.0
        } else {
            0.0
        };
        for i in 0..cfg.beams {
            if spec.dropout_arc > 0.0 {
                let a = (i as f64 + 0.5) * beam_deg;
                if (a - dropout_start).rem_euclid(360.0) < spec.dropout_arc {
                    continue;
                }
            }
            let transmit = spec.passthrough_rate > 0.0 && rng.random::<f64>() < spec.passthrough_rate;
            let angle = cfg.beam_angle(i);
            let measured = cast_ray(
                fp,
                t.x,
                t.y,
                t.yaw + angle,
                cfg.max_range,
                transmit.then_some(thin.as_slice()),
            );
            counts.trace(fp, e.x, e.y, e.yaw + angle, measured);
        }
    }
    let mut codes = counts.to_codes();
    if spec.speckle_rate > 0.0 {
        for c in codes.iter_mut().filter(|c| **c != UNKNOWN) {
            if rng.random::<f64>() < spec.speckle_rate {
                *c = if *c == FREE { OCCUPIED } else { FREE };
            }
        }
    }
    CodeMap {
        geometry: fp.geometry(),
        codes,
    }
}
