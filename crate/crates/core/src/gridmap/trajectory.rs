use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pose::PoseSE3;

/// World poses keyed by scan index, strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<(u64, PoseSE3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> Option<&(u64, PoseSE3)> {
        self.poses.last()
    }

    pub fn push(&mut self, scan_index: u64, pose: PoseSE3) -> Result<()> {
        if let Some(&(last, _)) = self.poses.last() {
            if scan_index <= last {
                return Err(Error::OutOfOrderScan { last, got: scan_index });
            }
        }
        self.poses.push((scan_index, pose));
        Ok(())
    }

    /// One line per pose: `k tx ty tz qw qx qy qz`.
    pub fn to_tum(&self) -> String {
        let mut s = String::new();
        for (k, p) in &self.poses {
            let q = p.rotation.quaternion();
            let t = p.translation;
            let _ = writeln!(s, "{k} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.w, q.i, q.j, q.k);
        }
        s
    }
}

pub fn record_pose(mut trajectory: Trajectory, scan_index: u64, pose: PoseSE3) -> Result<Trajectory> {
    trajectory.push(scan_index, pose)?;
    Ok(trajectory)
}

/// Parses the format written by [`Trajectory::to_tum`]; `#` lines are skipped.
pub fn parse_tum(text: &str) -> Result<Trajectory> {
    let mut out = Trajectory::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::FieldCountMismatch {
                path: "<trajectory>".into(),
                line: n + 1,
                expected: 8,
                found: fields.len(),
            });
        }
        let bad = |v: &str| Error::BadValue {
            path: "<trajectory>".into(),
            line: n + 1,
            value: v.to_string(),
        };
        let k: u64 = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(f))?;
        }
        out.push(k, PoseSE3::from_components(v[3], v[4], v[5], v[6], [v[0], v[1], v[2]]))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_enforced() {
        let t = record_pose(Trajectory::new(), 3, PoseSE3::identity()).unwrap();
        assert!(matches!(
            record_pose(t.clone(), 3, PoseSE3::identity()),
            Err(Error::OutOfOrderScan { last: 3, got: 3 })
        ));
        let t = record_pose(t, 7, PoseSE3::identity()).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn tum_round_trip() {
        let mut t = Trajectory::new();
        t.push(0, PoseSE3::identity()).unwrap();
        t.push(1, PoseSE3::from_planar(1.25, -0.5, 0.3)).unwrap();
        let text = t.to_tum();
        assert!(text.starts_with("0 0 0 0 1 0 0 0\n"));
        let back = parse_tum(&text).unwrap();
        assert_eq!(back.len(), 2);
        let (k, p) = back.poses[1];
        assert_eq!(k, 1);
        assert_eq!(p.translation, t.poses[1].1.translation);
        assert!((p.yaw() - 0.3).abs() < 1e-12);
    }
}
