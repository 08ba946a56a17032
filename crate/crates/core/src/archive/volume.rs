use serde::{Deserialize, Serialize};

use super::{ArchiveError, ArchiveStore, Observation};

/// Axis-aligned spatio-temporal box: an image rectangle times a time interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Volume {
    pub fn of_observation(obs: &Observation) -> Self {
        let b = obs.bbox;
        Self {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            t_start: obs.time,
            t_end: obs.time,
        }
    }

    /// Smallest volume containing both.
    pub fn hull(&self, other: &Volume) -> Volume {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        Volume {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            t_start: self.t_start.min(other.t_start),
            t_end: self.t_end.max(other.t_end),
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Intersection over union of the two volumes.
    ///
    /// A dimension in which both extents are zero-length is dropped from the
    /// measure when the two coincide and makes the IoU 0 otherwise, so that
    /// single-instant volumes still compare by their spatial overlap.
    pub fn iou(&self, other: &Volume) -> f64 {
        let dims = [
            (self.x, self.x + self.w, other.x, other.x + other.w),
            (self.y, self.y + self.h, other.y, other.y + other.h),
            (self.t_start, self.t_end, other.t_start, other.t_end),
        ];
        let mut inter = 1.0;
        let mut va = 1.0;
        let mut vb = 1.0;
        for (a0, a1, b0, b1) in dims {
            let la = a1 - a0;
            let lb = b1 - b0;
            if la == 0.0 && lb == 0.0 {
                if a0 != b0 {
                    return 0.0;
                }
                continue;
            }
            inter *= (a1.min(b1) - a0.max(b0)).max(0.0);
            va *= la;
            vb *= lb;
        }
        let union = va + vb - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Minimal bounding volume of the given observations.
pub fn spatio_temporal_volume(store: &ArchiveStore, obs_ids: &[u64]) -> Result<Volume, ArchiveError> {
    let mut iter = obs_ids.iter().map(|&id| {
        store
            .get(id)
            .map(Volume::of_observation)
            .ok_or(ArchiveError::UnknownObservation(id))
    });
    let first = iter.next().ok_or(ArchiveError::EmptyVolume)??;
    iter.try_fold(first, |acc, v| Ok(acc.hull(&v?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::BBox;
    use std::collections::BTreeMap;

    fn store(boxes: &[(f64, f64, f64, f64, f64)]) -> ArchiveStore {
        let obs = boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h, t))| Observation {
                obs_id: i as u64,
                track_id: i as u64,
                time: t,
                bbox: BBox::new(x, y, w, h),
                class_margins: BTreeMap::new(),
                attr_margins: BTreeMap::new(),
            })
            .collect();
        ArchiveStore::from_observations(obs).unwrap()
    }

    #[test]
    fn singleton_volume() {
        let s = store(&[(1.0, 2.0, 3.0, 4.0, 5.0)]);
        let v = spatio_temporal_volume(&s, &[0]).unwrap();
        assert_eq!(v, Volume { x: 1.0, y: 2.0, w: 3.0, h: 4.0, t_start: 5.0, t_end: 5.0 });
    }

    #[test]
    fn disjoint_hull() {
        let s = store(&[(0.0, 0.0, 10.0, 10.0, 1.0), (20.0, 20.0, 10.0, 10.0, 5.0)]);
        let v = spatio_temporal_volume(&s, &[0, 1]).unwrap();
        assert_eq!(v, Volume { x: 0.0, y: 0.0, w: 30.0, h: 30.0, t_start: 1.0, t_end: 5.0 });
    }

    #[test]
    fn empty_and_unknown() {
        let s = store(&[(0.0, 0.0, 1.0, 1.0, 0.0)]);
        assert!(matches!(spatio_temporal_volume(&s, &[]), Err(ArchiveError::EmptyVolume)));
        assert!(matches!(
            spatio_temporal_volume(&s, &[9]),
            Err(ArchiveError::UnknownObservation(9))
        ));
    }

    #[test]
    fn iou_cases() {
        let a = Volume { x: 0.0, y: 0.0, w: 10.0, h: 10.0, t_start: 0.0, t_end: 10.0 };
        assert_eq!(a.iou(&a), 1.0);
        let b = Volume { x: 20.0, ..a };
        assert_eq!(a.iou(&b), 0.0);
        let half = Volume { t_end: 5.0, ..a };
        assert!((a.iou(&half) - 0.5).abs() < 1e-12);
        // single instant, same time: spatial IoU
        let p = Volume { t_start: 3.0, t_end: 3.0, ..a };
        let q = Volume { x: 5.0, t_start: 3.0, t_end: 3.0, ..a };
        assert!((p.iou(&q) - 50.0 / 150.0).abs() < 1e-12);
        let r = Volume { t_start: 4.0, t_end: 4.0, ..a };
        assert_eq!(p.iou(&r), 0.0);
    }
}
