use super::{estimate_covariances, CovPoint, GicpConfig};
use crate::cloud::PointCloud;
use crate::pose::PoseSE3;

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: u64,
    /// World pose of the sensor when the keyframe was taken.
    pub pose: PoseSE3,
    /// Filtered cloud in the sensor frame.
    pub cloud: PointCloud,
    /// Sensor-frame covariances, computed once on insertion.
    pub covariances: Vec<CovPoint>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Submap {
    /// World-frame points with rotated covariances.
    pub points: Vec<CovPoint>,
    /// Ascending.
    pub source_keyframe_ids: Vec<u64>,
}

#[derive(Clone, Debug, Default)]
pub struct KeyframeStore {
    keyframes: Vec<Keyframe>,
    next_id: u64,
}

#[derive(Clone, Debug)]
pub struct KeyframeUpdate {
    pub added: Option<u64>,
    pub submap: Submap,
}

impl KeyframeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    /// Index of the keyframe nearest to `pose` by translation, ties to the lower id.
    fn nearest(&self, pose: &PoseSE3) -> Option<&Keyframe> {
        self.keyframes.iter().min_by(|a, b| {
            let da = (a.pose.translation - pose.translation).norm_squared();
            let db = (b.pose.translation - pose.translation).norm_squared();
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        })
    }

    /// Whether a scan taken at `pose` qualifies as a new keyframe.
    pub fn wants_keyframe(&self, pose: &PoseSE3, cfg: &GicpConfig) -> bool {
        match self.nearest(pose) {
            None => true,
            Some(kf) => {
                let (dist, angle) = kf.pose.distance_to(pose);
                dist >= cfg.keyframe_dist || angle.to_degrees() >= cfg.keyframe_angle
            }
        }
    }

    /// Adds a keyframe when the motion thresholds are met, reusing `covariances`
    /// (sensor frame) if the caller already has them. Returns the new id.
    pub fn add(
        &mut self,
        pose: &PoseSE3,
        cloud: &PointCloud,
        covariances: Option<&[CovPoint]>,
        cfg: &GicpConfig,
    ) -> Option<u64> {
        if !self.wants_keyframe(pose, cfg) {
            return None;
        }
        let covariances = match covariances {
            Some(c) => c.to_vec(),
            None => estimate_covariances(cloud, cfg).unwrap_or_else(|e| {
                log::warn!("keyframe covariance estimation failed ({e}), using isotropic covariances");
                cloud
                    .points
                    .iter()
                    .map(|p| CovPoint::new(nalgebra::Vector3::new(p.x, p.y, p.z), nalgebra::Matrix3::identity()))
                    .collect()
            }),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.keyframes.push(Keyframe {
            id,
            pose: *pose,
            cloud: cloud.clone(),
            covariances,
        });
        Some(id)
    }

    /// [`add`](Self::add) followed by the submap around `pose`.
    pub fn update(
        &mut self,
        pose: &PoseSE3,
        cloud: &PointCloud,
        covariances: Option<&[CovPoint]>,
        cfg: &GicpConfig,
    ) -> KeyframeUpdate {
        let added = self.add(pose, cloud, covariances, cfg);
        KeyframeUpdate {
            added,
            submap: self.submap_around(pose, cfg.submap_k_nearest),
        }
    }

    /// Ids of the `k` keyframes nearest to `pose` by translation, ascending.
    pub fn nearest_ids(&self, pose: &PoseSE3, k: usize) -> Vec<u64> {
        let mut ranked: Vec<(f64, u64)> = self
            .keyframes
            .iter()
            .map(|kf| ((kf.pose.translation - pose.translation).norm_squared(), kf.id))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut ids: Vec<u64> = ranked.into_iter().take(k).map(|(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn build_submap(&self, ids: &[u64]) -> Submap {
        let mut points = Vec::new();
        for kf in self.keyframes.iter().filter(|kf| ids.contains(&kf.id)) {
            points.extend(kf.covariances.iter().map(|c| c.transformed(&kf.pose)));
        }
        Submap {
            points,
            source_keyframe_ids: ids.to_vec(),
        }
    }

    pub fn submap_around(&self, pose: &PoseSE3, k: usize) -> Submap {
        self.build_submap(&self.nearest_ids(pose, k))
    }
}

/// Functional form of [`KeyframeStore::update`].
pub fn update_keyframes(
    mut store: KeyframeStore,
    pose: &PoseSE3,
    cloud: &PointCloud,
    cfg: &GicpConfig,
) -> (KeyframeStore, Submap) {
    let update = store.update(pose, cloud, None, cfg);
    (store, update.submap)
}
