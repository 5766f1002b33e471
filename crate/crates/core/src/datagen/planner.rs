use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::cast_ray;
use super::{FloorplanRaster, Pose2D};
use crate::error::{Error, Result};
use crate::gridmap::raytrace::GridRay;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Preferred distance from obstacles, meters; relaxed on narrow plans.
    pub clearance: f64,
    /// Spacing of candidate viewpoints, meters.
    pub candidate_spacing: f64,
    /// Range at which a viewpoint counts as seeing a free cell, meters.
    pub sight_range: f64,
    /// Rays cast per viewpoint; 0 picks enough for one cell of spacing at `sight_range`.
    pub sight_rays: usize,
    /// Distance between consecutive poses, meters.
    pub step: f64,
    /// Largest heading change between consecutive poses, degrees.
    pub max_turn: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            clearance: 0.3,
            candidate_spacing: 0.5,
            sight_range: 1.5,
            sight_rays: 0,
            step: 0.25,
            max_turn: 10.0,
        }
    }
}

/// Chamfer distance (cells, 8-neighbourhood, unit steps) to the nearest occupied cell.
fn clearance_cells(fp: &FloorplanRaster) -> Vec<u32> {
    let (w, h) = (fp.width, fp.height);
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, &o) in fp.occupied.iter().enumerate() {
        if o {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if dist[j] == u32::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (r + 1 < h).then(|| i + w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// BFS distances (4-neighbourhood) and parents over `mask` from `start`.
fn bfs(mask: &[bool], w: usize, h: usize, start: usize) -> (Vec<u32>, Vec<usize>) {
    let mut dist = vec![u32::MAX; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    while let Some(i) = queue.pop_front() {
        for j in neighbors4(i, w, h) {
            if mask[j] && dist[j] == u32::MAX {
                dist[j] = dist[i] + 1;
                parent[j] = i;
                queue.push_back(j);
            }
        }
    }
    (dist, parent)
}

/// Cells of the largest 4-connected component of `mask`, lowest index first on ties.
fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<usize> {
    let mut label = vec![false; w * h];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..w * h {
        if !mask[s] || label[s] {
            continue;
        }
        let mut comp = vec![s];
        label[s] = true;
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            k += 1;
            for j in neighbors4(i, w, h) {
                if mask[j] && !label[j] {
                    label[j] = true;
                    comp.push(j);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Free cells visible from image cell `i` within `cfg.sight_range`.
fn visible_cells(fp: &FloorplanRaster, i: usize, cfg: &PlannerConfig) -> Vec<usize> {
    let (w, h) = (fp.width, fp.height);
    let (col, row) = ((i % w) as i64, (h - 1 - i / w) as i64);
    let (x, y) = fp.center_of(col, row);
    let res = fp.resolution;
    let mut out = Vec::new();
    let rays = match cfg.sight_rays {
        0 => ((2.0 * PI * cfg.sight_range / res).ceil() as usize).max(8),
        n => n,
    };
    for k in 0..rays {
        let angle = (k as f64 + 0.5) * 2.0 * PI / rays as f64;
        let hit = cast_ray(fp, x, y, angle, cfg.sight_range, None);
        let (s, c) = angle.sin_cos();
        for span in GridRay::new((x / res, y / res), (c / res, s / res)) {
            if span.t_enter >= hit.range {
                break;
            }
            if span.is_touch() {
                continue;
            }
            out.push((h - 1 - span.row as usize) * w + span.col as usize);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// A collision-free tour over viewpoints that together see every free cell
/// reachable by sight from the traversable region, as poses spaced `cfg.step`
/// apart with bounded heading change.
pub fn plan_trajectory(fp: &FloorplanRaster, seed: u64) -> Result<Vec<Pose2D>> {
    plan_trajectory_with(fp, seed, &PlannerConfig::default())
}

pub fn plan_trajectory_with(fp: &FloorplanRaster, seed: u64, cfg: &PlannerConfig) -> Result<Vec<Pose2D>> {
    let (w, h) = (fp.width, fp.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clearance = clearance_cells(fp);
    let preferred = ((cfg.clearance / fp.resolution).ceil() as u32).max(1);

    // relax the clearance until a usable region appears
    let mut region = Vec::new();
    let mut mask = vec![false; w * h];
    for need in [preferred, preferred / 2, 2, 1] {
        let need = need.max(1);
        mask = clearance.iter().map(|&d| d != u32::MAX && d > need).collect();
        region = largest_component(&mask, w, h);
        if region.len() >= 4 {
            break;
        }
    }
    if region.is_empty() {
        return Err(Error::PlanningFailed("no free cell with clearance from obstacles".into()));
    }
    let in_region = {
        let mut m = vec![false; w * h];
        for &i in &region {
            m[i] = true;
        }
        m
    };
    mask = in_region;

    let spacing = ((cfg.candidate_spacing / fp.resolution).round() as usize).max(1);
    let (off_r, off_c) = (rng.random_range(0..spacing), rng.random_range(0..spacing));
    let start = region[rng.random_range(0..region.len())];
    let mut candidates: Vec<usize> = region
        .iter()
        .copied()
        .filter(|&i| (i / w) % spacing == off_r && (i % w) % spacing == off_c)
        .collect();
    if !candidates.contains(&start) {
        candidates.push(start);
    }

    let views: Vec<Vec<usize>> = candidates.iter().map(|&i| visible_cells(fp, i, cfg)).collect();
    let mut covered = vec![false; w * h];
    let universe = {
        let mut u = vec![false; w * h];
        views.iter().flatten().for_each(|&i| u[i] = true);
        u.iter().filter(|&&b| b).count()
    };

    // greedy set cover, seeded with the start viewpoint
    let start_idx = candidates.iter().position(|&c| c == start).unwrap_or(0);
    let mut chosen = vec![start_idx];
    views[start_idx].iter().for_each(|&i| covered[i] = true);
    let mut count = views[start_idx].len();
    while count < universe {
        let (best, gain) = views
            .iter()
            .enumerate()
            .map(|(k, v)| (k, v.iter().filter(|&&i| !covered[i]).count()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap_or((0, 0));
        if gain == 0 {
            break;
        }
        chosen.push(best);
        views[best].iter().for_each(|&i| covered[i] = true);
        count += gain;
    }

    // nearest-neighbour tour by path length, one BFS path per viewpoint
    let mut legs: Vec<Vec<usize>> = Vec::new();
    let mut remaining: Vec<usize> = chosen[1..].iter().map(|&k| candidates[k]).collect();
    let mut current = start;
    while !remaining.is_empty() {
        let (dist, parent) = bfs(&mask, w, h, current);
        let (pos, &next) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, &c)| (dist[c], c))
            .ok_or_else(|| Error::PlanningFailed("empty viewpoint set".into()))?;
        if dist[next] == u32::MAX {
            remaining.swap_remove(pos);
            continue;
        }
        let mut seg = vec![next];
        let mut i = next;
        while parent[i] != usize::MAX {
            i = parent[i];
            seg.push(i);
        }
        seg.reverse();
        legs.push(seg);
        current = next;
        remaining.remove(pos);
    }

    // viewpoints stay as waypoints; only the legs between them are shortened
    let mut waypoints = vec![start];
    for leg in &legs {
        waypoints.extend(shortcut(leg, &mask, w, h).into_iter().skip(1));
    }
    let points: Vec<(f64, f64)> = waypoints
        .iter()
        .map(|&i| fp.center_of((i % w) as i64, (h - 1 - i / w) as i64))
        .collect();
    let poses = poses_along(&points, cfg.step, cfg.max_turn.to_radians());
    if poses.is_empty() {
        return Err(Error::PlanningFailed("degenerate path".into()));
    }
    Ok(poses)
}

/// Whether the straight segment between the centres of image cells `a` and
/// `b` stays on `mask`.
fn segment_clear(mask: &[bool], w: usize, h: usize, a: usize, b: usize) -> bool {
    let to_lattice = |i: usize| ((i % w) as f64 + 0.5, (h - 1 - i / w) as f64 + 0.5);
    crate::gridmap::raytrace::supercover(to_lattice(a), to_lattice(b))
        .into_iter()
        .all(|(c, r)| c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h && mask[(h - 1 - r as usize) * w + c as usize])
}

/// Drops intermediate path cells while the straight line to the next kept
/// cell stays inside the region (greedy string pulling).
fn shortcut(path: &[usize], mask: &[bool], w: usize, h: usize) -> Vec<usize> {
    let Some(&first) = path.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = i + 1;
        while j + 1 < path.len() && segment_clear(mask, w, h, path[i], path[j + 1]) {
            j += 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Resamples a polyline every `step` meters, heading along the motion, and
/// inserts in-place turns so no step changes heading by more than `max_turn`.
pub fn poses_along(points: &[(f64, f64)], step: f64, max_turn: f64) -> Vec<Pose2D> {
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let mut samples = vec![first];
    let mut carried = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let mut t = step - carried;
        while t <= len {
            samples.push((a.0 + (b.0 - a.0) * t / len, a.1 + (b.1 - a.1) * t / len));
            t += step;
        }
        carried = len - (t - step);
    }
    if samples.len() == 1 {
        return vec![Pose2D::new(first.0, first.1, 0.0)];
    }
    let heading = |i: usize| {
        let (a, b) = if i + 1 < samples.len() { (samples[i], samples[i + 1]) } else { (samples[i - 1], samples[i]) };
        (b.1 - a.1).atan2(b.0 - a.0)
    };
    let mut out = vec![Pose2D::new(samples[0].0, samples[0].1, heading(0))];
    for (i, &(x, y)) in samples.iter().enumerate().skip(1) {
        let target = heading(i);
        let last = out[out.len() - 1];
        let mut yaw = last.yaw;
        let mut diff = wrap(target - yaw);
        // turn on the spot before moving when needed
        while diff.abs() > max_turn {
            yaw += max_turn.copysign(diff);
            out.push(Pose2D::new(last.x, last.y, yaw));
            diff = wrap(target - yaw);
        }
        out.push(Pose2D::new(x, y, yaw + diff));
    }
    out
}

/// Evenly resamples a pose sequence to `n` poses by arc length (heading interpolated).
pub fn resample(poses: &[Pose2D], n: usize) -> Vec<Pose2D> {
    if poses.len() < 2 || n < 2 {
        return poses.iter().copied().take(n).collect();
    }
    let mut cum = vec![0.0];
    for w in poses.windows(2) {
        let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y) + 0.1 * wrap(w[1].yaw - w[0].yaw).abs();
        cum.push(cum[cum.len() - 1] + d);
    }
    let total = cum[cum.len() - 1];
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let f = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (poses[seg], poses[seg + 1]);
        out.push(Pose2D::new(
            a.x + (b.x - a.x) * f,
            a.y + (b.y - a.y) * f,
            a.yaw + wrap(b.yaw - a.yaw) * f,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    fn on_free(fp: &FloorplanRaster, p: &Pose2D) -> bool {
        let (c, r) = fp.cell_of(p.x, p.y);
        !fp.occupied_at(c, r)
    }

    #[test]
    fn open_room() {
        let fp = fixtures::room(6.0, 5.0, 0.05);
        let traj = plan_trajectory(&fp, 1).unwrap();
        assert!(traj.len() >= 10);
        assert!(traj.iter().all(|p| on_free(&fp, p)));
        for w in traj.windows(2) {
            let turn = wrap(w[1].yaw - w[0].yaw).abs().to_degrees();
            let dist = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            assert!(turn <= 10.0 + 1e-9, "turn {turn}");
            assert!(dist <= 0.25 + 1e-9, "step {dist}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let fp = fixtures::office(0.05);
        assert_eq!(plan_trajectory(&fp, 9).unwrap(), plan_trajectory(&fp, 9).unwrap());
        assert_ne!(plan_trajectory(&fp, 9).unwrap(), plan_trajectory(&fp, 10).unwrap());
    }

    #[test]
    fn corridor_span() {
        let fp = fixtures::corridor(20.0, 1.6, 0.05);
        for seed in 0..3 {
            let traj = plan_trajectory(&fp, seed).unwrap();
            let (lo, hi) = traj
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
            assert!((hi - lo) / 20.0 >= 0.8, "seed {seed}: span {lo}..{hi}");
        }
    }

    #[test]
    fn sightline_coverage() {
        let fp = fixtures::l_hall(0.05);
        let cfg = PlannerConfig::default();
        let traj = plan_trajectory(&fp, 4).unwrap();
        // fraction of cells visible from any region cell that some pose sees
        let mut seen = vec![false; fp.width * fp.height];
        for p in &traj {
            let (c, r) = fp.cell_of(p.x, p.y);
            let i = (fp.height - 1 - r as usize) * fp.width + c as usize;
            for j in visible_cells(&fp, i, &cfg) {
                seen[j] = true;
            }
        }
        let free = fp.occupied.iter().filter(|&&o| !o).count();
        let frac = seen.iter().filter(|&&s| s).count() as f64 / free as f64;
        assert!(frac >= 0.6, "coverage {frac}");
    }

    #[test]
    fn resample_endpoints() {
        let poses: Vec<Pose2D> = (0..5).map(|i| Pose2D::new(i as f64, 0.0, 0.0)).collect();
        let r = resample(&poses, 9);
        assert_eq!(r.len(), 9);
        assert!((r[4].x - 2.0).abs() < 1e-12);
        assert_eq!(r[8], poses[4]);
    }
}
