use crate::archive::Observation;

/// Names of the entries returned by [`pair_features`], in order.
pub const PAIR_FEATURES: [&str; 8] = [
    "norm_center_dist",
    "center_dist",
    "size_ratio",
    "aspect_min",
    "aspect_max",
    "time_gap",
    "abs_time_gap",
    "overlap",
];

/// Geometric and temporal features of an observation pair.
///
/// Distances are between box centers; the normalized distance divides by the
/// mean box diagonal. `size_ratio` is smaller area over larger area, aspect
/// ratios are width over height, `time_gap` is `b.t - a.t`, and `overlap` is
/// the intersection area over the smaller box area. All entries except
/// `time_gap` are symmetric in `(a, b)`.
pub fn pair_features(a: &Observation, b: &Observation) -> [f64; 8] {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let dist = (ax - bx).hypot(ay - by);
    let mean_diag = 0.5 * (a.bbox.diagonal() + b.bbox.diagonal());
    let (area_a, area_b) = (a.bbox.area(), b.bbox.area());
    let (asp_a, asp_b) = (a.bbox.aspect(), b.bbox.aspect());
    let gap = b.time - a.time;
    [
        dist / mean_diag,
        dist,
        area_a.min(area_b) / area_a.max(area_b),
        asp_a.min(asp_b),
        asp_a.max(asp_b),
        gap,
        gap.abs(),
        a.bbox.intersection_area(&b.bbox) / area_a.min(area_b),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::BBox;
    use std::collections::BTreeMap;

    fn obs(x: f64, y: f64, w: f64, h: f64, t: f64) -> Observation {
        Observation {
            obs_id: 0,
            track_id: 0,
            time: t,
            bbox: BBox::new(x, y, w, h),
            class_margins: BTreeMap::new(),
            attr_margins: BTreeMap::new(),
        }
    }

    #[test]
    fn identical_pair() {
        let a = obs(10.0, 20.0, 30.0, 40.0, 5.0);
        let f = pair_features(&a, &a);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[5], 0.0);
        assert_eq!(f[7], 1.0);
    }

    #[test]
    fn swap_negates_only_time_gap() {
        let a = obs(0.0, 0.0, 10.0, 20.0, 1.0);
        let b = obs(7.0, 3.0, 30.0, 10.0, 4.5);
        let (f, g) = (pair_features(&a, &b), pair_features(&b, &a));
        for i in 0..8 {
            if i == 5 {
                assert_eq!(f[i], -g[i]);
            } else {
                assert_eq!(f[i], g[i]);
            }
        }
    }

    // Hand-computed fixture: a = [0,0,30,40] at t=10, b = [60,80,30,40] at t=13.
    // Centers (15,20), (75,100): distance 100. Diagonals 50 each.
    // Same area 1200, aspect 0.75, no overlap.
    #[test]
    fn fixture_pair() {
        let a = obs(0.0, 0.0, 30.0, 40.0, 10.0);
        let b = obs(60.0, 80.0, 30.0, 40.0, 13.0);
        assert_eq!(pair_features(&a, &b), [2.0, 100.0, 1.0, 0.75, 0.75, 3.0, 3.0, 0.0]);

        // c = [10,20,60,20] at t=8: center (40,30), area 1200, aspect 3,
        // overlap with a: x 10..30, y 20..40 -> 400 / 1200.
        let c = obs(10.0, 20.0, 60.0, 20.0, 8.0);
        let f = pair_features(&a, &c);
        let dist = (25.0f64 * 25.0 + 10.0 * 10.0).sqrt();
        let diag_c = (3600.0f64 + 400.0).sqrt();
        assert!((f[0] - dist / (0.5 * (50.0 + diag_c))).abs() < 1e-12);
        assert!((f[1] - dist).abs() < 1e-12);
        assert_eq!(f[2], 1.0);
        assert_eq!((f[3], f[4]), (0.75, 3.0));
        assert_eq!((f[5], f[6]), (-2.0, 2.0));
        assert!((f[7] - 1.0 / 3.0).abs() < 1e-12);
    }
}
