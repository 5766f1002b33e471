use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{CovPoint, GicpConfig};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// Population covariance (divides by n) of a point set.
pub fn sample_covariance(points: &[Vector3<f64>]) -> Matrix3<f64> {
    if points.is_empty() {
        return Matrix3::zeros();
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / n
}

/// Replaces the eigenvalues of `cov` by (epsilon, 1, 1), smallest first, so
/// every point is modelled as a small planar disc.
pub fn regularize_plane(cov: &Matrix3<f64>, epsilon: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut out = Matrix3::zeros();
    for (rank, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col).into_owned();
        let lambda = if rank == 0 { epsilon } else { 1.0 };
        out += lambda * v * v.transpose();
    }
    (out + out.transpose()) * 0.5
}

/// Estimates a plane-regularized covariance for every point from the point
/// and its `knn` nearest neighbours.
pub fn estimate_covariances(cloud: &PointCloud, cfg: &GicpConfig) -> Result<Vec<CovPoint>> {
    if cloud.len() <= cfg.knn {
        return Err(Error::TooFewPoints {
            needed: cfg.knn,
            got: cloud.len(),
        });
    }
    let positions: Vec<Vector3<f64>> = cloud
        .points
        .iter()
        .map(|p| Vector3::new(p.x, p.y, p.z))
        .collect();
    let tree = KdTree::from_iter(cloud.points.iter().map(|p| p.xyz()));
    let mut neighbors = Vec::with_capacity(cfg.knn + 1);
    let out = positions
        .iter()
        .map(|p| {
            neighbors.clear();
            neighbors.extend(
                tree.knn(&[p.x, p.y, p.z], cfg.knn + 1)
                    .into_iter()
                    .map(|n| positions[n.index]),
            );
            let cov = sample_covariance(&neighbors);
            CovPoint::new(*p, regularize_plane(&cov, cfg.cov_epsilon))
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Cyclic Jacobi eigenvalue iteration, used as an independent oracle.
    fn jacobi_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
        let mut a = *m;
        for _ in 0..100 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[(p, q)].abs() < 1e-15 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut j = Matrix3::identity();
                j[(p, p)] = c;
                j[(q, q)] = c;
                j[(p, q)] = s;
                j[(q, p)] = -s;
                a = j.transpose() * a * j;
            }
        }
        let mut ev = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn planar_cloud_normals() {
        let pts: Vec<Point3> = (0..50)
            .map(|i| Point3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.13 + (i % 3) as f64 * 0.01, 0.0, 0.0))
            .collect();
        let cfg = GicpConfig::default();
        let covs = estimate_covariances(&PointCloud::new(pts, 0), &cfg).unwrap();
        assert_eq!(covs.len(), 50);
        for c in &covs {
            let eig = SymmetricEigen::new(c.covariance);
            let (imin, &lmin) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert!((lmin - cfg.cov_epsilon).abs() < 1e-9);
            let n = eig.eigenvectors.column(imin);
            assert!(n[2].abs() > 1.0 - 1e-9, "normal {n:?}");
            assert!((c.covariance - c.covariance.transpose()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Point3::default(); 5];
        assert!(matches!(
            estimate_covariances(&PointCloud::new(pts, 0), &GicpConfig::default()),
            Err(Error::TooFewPoints { needed: 10, got: 5 })
        ));
    }

    #[test]
    fn isotropic_cluster_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let cov = sample_covariance(&pts);

        // oracle: explicit double loop over the raw sample, then Jacobi
        let n = pts.len() as f64;
        let mut mean = [0.0; 3];
        for p in &pts {
            for a in 0..3 {
                mean[a] += p[a] / n;
            }
        }
        let mut oracle = Matrix3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                oracle[(a, b)] = pts.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / n;
            }
        }
        assert!((cov - oracle).abs().max() < 1e-12);

        let ev = jacobi_eigenvalues(&oracle);
        let mut got: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (g, o) in got.iter().zip(ev) {
            assert!((g - o).abs() < 1e-12);
        }
        assert!(ev[2] / ev[0] < 1.2, "eigenvalues {ev:?}");
        assert!(ev.iter().all(|&l| (l - 0.01).abs() < 0.002));
    }
}
