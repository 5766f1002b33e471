//! Brute-force ray-cast oracle for the datagen renderer.

use ttogm::datagen::{FloorplanRaster, Pose2D, RenderConfig};
use ttogm::gridmap::{CodeMap, FREE, OCCUPIED, UNKNOWN};

/// Entry and exit distance of the ray through lattice cell (col, row), or
/// None when it misses the cell interior. Lattice units are cells; the ray
/// direction is scaled so that t is in meters.
fn slab(p: (f64, f64), d: (f64, f64), col: i64, row: i64) -> Option<(f64, f64)> {
    let axis = |o: f64, v: f64, lo: f64| -> (f64, f64) {
        if v == 0.0 {
            if o > lo && o < lo + 1.0 {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (f64::INFINITY, f64::NEG_INFINITY)
            }
        } else {
            let (a, b) = ((lo - o) / v, (lo + 1.0 - o) / v);
            (a.min(b), a.max(b))
        }
    };
    let (x0, x1) = axis(p.0, d.0, col as f64);
    let (y0, y1) = axis(p.1, d.1, row as f64);
    let (t0, t1) = (x0.max(y0).max(0.0), x1.min(y1));
    (t1 > t0).then_some((t0, t1))
}

/// Brute force: every cell of the ray's bounding box is intersected
/// separately, the crossed cells are sorted by entry distance and scanned for
/// the first obstacle.
pub fn oracle_render(fp: &FloorplanRaster, trajectory: &[Pose2D], cfg: &RenderConfig) -> CodeMap {
    let (w, h) = (fp.width as i64, fp.height as i64);
    let mut hits = vec![false; fp.width * fp.height];
    let mut frees = vec![false; fp.width * fp.height];
    let index = |c: i64, r: i64| ((h - 1 - r) * w + c) as usize;
    for pose in trajectory {
        for i in 0..cfg.beams {
            let angle = pose.yaw + (i as f64 + 0.5) * std::f64::consts::TAU / cfg.beams as f64;
            let p = (pose.x / fp.resolution, pose.y / fp.resolution);
            let d = (angle.cos() / fp.resolution, angle.sin() / fp.resolution);
            let end = (p.0 + d.0 * cfg.max_range, p.1 + d.1 * cfg.max_range);
            let (c0, c1) = (p.0.min(end.0).floor() as i64 - 1, p.0.max(end.0).floor() as i64 + 1);
            let (r0, r1) = (p.1.min(end.1).floor() as i64 - 1, p.1.max(end.1).floor() as i64 + 1);
            let mut crossed: Vec<(f64, i64, i64)> = Vec::new();
            for c in c0..=c1 {
                for r in r0..=r1 {
                    if let Some((t0, _)) = slab(p, d, c, r) {
                        if t0 < cfg.max_range {
                            crossed.push((t0, c, r));
                        }
                    }
                }
            }
            crossed.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, c, r) in &crossed {
                if c < 0 || r < 0 || c >= w || r >= h {
                    break;
                }
                if fp.occupied_at(c, r) {
                    hits[index(c, r)] = true;
                    break;
                }
                frees[index(c, r)] = true;
            }
        }
    }
    let codes = hits
        .iter()
        .zip(&frees)
        .map(|(&o, &f)| if o { OCCUPIED } else if f { FREE } else { UNKNOWN })
        .collect();
    CodeMap {
        geometry: fp.geometry(),
        codes,
    }
}
