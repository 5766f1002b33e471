use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::{CovPoint, GicpConfig, Submap};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::pose::PoseSE3;

const MAX_STEP_HALVINGS: usize = 8;
/// Consecutive residual increases that mark a scan-to-map alignment as diverged.
const DIVERGENCE_RUN: usize = 3;

/// Target cloud with a prebuilt nearest-neighbour index.
#[derive(Debug, Clone)]
pub struct GicpTarget {
    points: Vec<CovPoint>,
    index: KdTree,
}

impl GicpTarget {
    pub fn new(points: Vec<CovPoint>) -> Self {
        let index = KdTree::from_iter(points.iter().map(|p| [p.position.x, p.position.y, p.position.z]));
        Self { points, index }
    }

    pub fn points(&self) -> &[CovPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GicpResult {
    pub pose: PoseSE3,
    /// Final cost divided by the number of correspondences.
    pub residual: f64,
    pub iterations: usize,
    pub correspondences: usize,
    pub converged: bool,
    /// Normalized cost at the start of every iteration.
    pub residual_history: Vec<f64>,
    /// (cost before, cost after) of every accepted step, on that iteration's correspondences.
    pub accepted_steps: Vec<(f64, f64)>,
    pub diverged: bool,
}

#[derive(Clone, Copy)]
struct Pair {
    src: usize,
    tgt: usize,
}

struct Problem<'a> {
    source: &'a [CovPoint],
    target: &'a GicpTarget,
    max_dist2: f64,
}

impl Problem<'_> {
    fn associate(&self, pose: &PoseSE3, pairs: &mut Vec<Pair>) {
        pairs.clear();
        for (i, s) in self.source.iter().enumerate() {
            let q = pose.transform_point(&s.position);
            if let Some(n) = self.target.index.nearest_within(&[q.x, q.y, q.z], self.max_dist2) {
                pairs.push(Pair { src: i, tgt: n.index });
            }
        }
    }

    fn mahalanobis(&self, rot: &Matrix3<f64>, pair: &Pair) -> Matrix3<f64> {
        let cs = &self.source[pair.src].covariance;
        let ct = &self.target.points[pair.tgt].covariance;
        let combined = ct + rot * cs * rot.transpose();
        combined
            .try_inverse()
            .unwrap_or_else(|| (combined + Matrix3::identity() * 1e-9).try_inverse().unwrap_or_else(Matrix3::identity))
    }

    fn cost(&self, pose: &PoseSE3, pairs: &[Pair]) -> f64 {
        let rot = pose.rotation_matrix();
        pairs
            .iter()
            .map(|pair| {
                let d = self.target.points[pair.tgt].position - pose.transform_point(&self.source[pair.src].position);
                let m = self.mahalanobis(&rot, pair);
                (d.transpose() * m * d)[(0, 0)]
            })
            .sum()
    }

    /// Cost, Gauss-Newton Hessian and gradient for left increments (ω, v).
    fn linearize(&self, pose: &PoseSE3, pairs: &[Pair]) -> (f64, Matrix6<f64>, Vector6<f64>) {
        let rot = pose.rotation_matrix();
        let (mut h_rr, mut h_rt, mut h_tt) = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
        let (mut g_r, mut g_t) = (Vector3::zeros(), Vector3::zeros());
        let mut cost = 0.0;
        for pair in pairs {
            let q = pose.transform_point(&self.source[pair.src].position);
            let d = self.target.points[pair.tgt].position - q;
            let m = self.mahalanobis(&rot, pair);
            let md = m * d;
            cost += d.dot(&md);
            // d(δ) ≈ d + [q]x ω − v, so J = [[q]x, −I]
            let qx = q.cross_matrix();
            let qxt_m = qx.transpose() * m;
            h_rr += qxt_m * qx;
            h_rt -= qxt_m;
            h_tt += m;
            g_r += qx.transpose() * md;
            g_t -= md;
        }
        let mut h = Matrix6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&h_rr);
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&h_rt);
        h.fixed_view_mut::<3, 3>(3, 0).copy_from(&h_rt.transpose());
        h.fixed_view_mut::<3, 3>(3, 3).copy_from(&h_tt);
        let g = Vector6::new(g_r.x, g_r.y, g_r.z, g_t.x, g_t.y, g_t.z);
        (cost, h, g)
    }
}

fn solve(h: &Matrix6<f64>, g: &Vector6<f64>) -> Vector6<f64> {
    if let Some(chol) = h.cholesky() {
        return -chol.solve(g);
    }
    // rank deficient: damp lightly so unconstrained directions stay put
    let damped = h + Matrix6::identity() * (1e-6 * h.diagonal().max().max(1e-12));
    damped
        .lu()
        .solve(&(-g))
        .unwrap_or_else(Vector6::zeros)
}

/// Aligns `source` to `target` starting from `init`. Builds the target index on every call;
/// use [`gicp_align_to`] with a cached [`GicpTarget`] when aligning repeatedly.
pub fn gicp_align(source: &[CovPoint], target: &[CovPoint], init: &PoseSE3, cfg: &GicpConfig) -> Result<GicpResult> {
    let target = GicpTarget::new(target.to_vec());
    gicp_align_to(source, &target, init, cfg)
}

pub fn gicp_align_to(source: &[CovPoint], target: &GicpTarget, init: &PoseSE3, cfg: &GicpConfig) -> Result<GicpResult> {
    align(source, target, init, cfg, None)
}

fn align(
    source: &[CovPoint],
    target: &GicpTarget,
    init: &PoseSE3,
    cfg: &GicpConfig,
    divergence_run: Option<usize>,
) -> Result<GicpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Precondition("gicp_align needs nonempty source and target".into()));
    }
    let problem = Problem {
        source,
        target,
        max_dist2: cfg.max_correspondence_dist * cfg.max_correspondence_dist,
    };
    let mut pose = *init;
    let mut pairs = Vec::with_capacity(source.len());
    let mut result = GicpResult {
        pose,
        residual: 0.0,
        iterations: 0,
        correspondences: 0,
        converged: false,
        residual_history: Vec::new(),
        accepted_steps: Vec::new(),
        diverged: false,
    };
    let mut rising = 0usize;

    for iter in 0..cfg.max_iterations {
        problem.associate(&pose, &mut pairs);
        if pairs.is_empty() {
            if iter == 0 {
                return Err(Error::NoCorrespondences {
                    max_dist: cfg.max_correspondence_dist,
                });
            }
            break;
        }
        let (cost, h, g) = problem.linearize(&pose, &pairs);
        let normalized = cost / pairs.len() as f64;
        if let Some(&prev) = result.residual_history.last() {
            rising = if normalized > prev { rising + 1 } else { 0 };
        }
        result.residual_history.push(normalized);
        result.iterations = iter + 1;
        if divergence_run.is_some_and(|run| rising >= run) {
            result.diverged = true;
            break;
        }

        let mut step = solve(&h, &g);
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = pose.retract_left(&step);
            let new_cost = problem.cost(&candidate, &pairs);
            if new_cost <= cost {
                accepted = Some((candidate, new_cost));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, new_cost)) = accepted else {
            // no descent direction left on these correspondences
            result.converged = true;
            break;
        };
        result.accepted_steps.push((cost, new_cost));
        pose = candidate;
        let rot_step = Vector3::new(step[0], step[1], step[2]).norm();
        let trans_step = Vector3::new(step[3], step[4], step[5]).norm();
        if rot_step < cfg.rotation_tol && trans_step < cfg.translation_tol {
            result.converged = true;
            break;
        }
    }

    problem.associate(&pose, &mut pairs);
    result.pose = pose;
    result.correspondences = pairs.len();
    result.residual = if pairs.is_empty() {
        f64::INFINITY
    } else {
        problem.cost(&pose, &pairs) / pairs.len() as f64
    };
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanToMapResult {
    pub pose: PoseSE3,
    /// Set when the alignment diverged and `pose` is the unrefined prior.
    pub fell_back: bool,
    pub gicp: GicpResult,
}

/// Refines the world pose of `scan` against `submap`, starting from `prior`.
pub fn scan_to_map_align(scan: &[CovPoint], submap: &Submap, prior: &PoseSE3, cfg: &GicpConfig) -> Result<ScanToMapResult> {
    if submap.points.is_empty() {
        return Err(Error::EmptySubmap);
    }
    let target = GicpTarget::new(submap.points.clone());
    scan_to_map_align_to(scan, &target, prior, cfg)
}

pub(crate) fn scan_to_map_align_to(
    scan: &[CovPoint],
    target: &GicpTarget,
    prior: &PoseSE3,
    cfg: &GicpConfig,
) -> Result<ScanToMapResult> {
    if target.is_empty() {
        return Err(Error::EmptySubmap);
    }
    let gicp = align(scan, target, prior, cfg, Some(DIVERGENCE_RUN))?;
    if gicp.diverged {
        log::warn!("scan-to-map alignment diverged, keeping the prior pose");
        return Ok(ScanToMapResult {
            pose: *prior,
            fell_back: true,
            gicp,
        });
    }
    Ok(ScanToMapResult {
        pose: gicp.pose,
        fell_back: false,
        gicp,
    })
}
