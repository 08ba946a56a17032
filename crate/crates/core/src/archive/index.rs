use super::Observation;

/// Observation indices sorted by time, searched with binary search.
#[derive(Debug, Clone, Default)]
pub struct TimeIndex {
    times: Vec<f64>,
    order: Vec<usize>,
}

impl TimeIndex {
    pub fn build(observations: &[Observation]) -> Self {
        let mut order: Vec<usize> = (0..observations.len()).collect();
        // stable on obs_id, since `observations` is sorted by it
        order.sort_by(|&a, &b| observations[a].time.total_cmp(&observations[b].time));
        let times = order.iter().map(|&i| observations[i].time).collect();
        Self { times, order }
    }

    /// Indices of observations with `t0 <= time <= t1`, in time order.
    pub fn window(&self, t0: f64, t1: f64) -> &[usize] {
        if t1 < t0 {
            return &[];
        }
        let lo = self.times.partition_point(|&t| t < t0);
        let hi = self.times.partition_point(|&t| t <= t1);
        &self.order[lo..hi.max(lo)]
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((*self.times.first()?, *self.times.last()?))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
