//! One-dimensional MeanShift with a flat kernel.

/// Runs every point to its mode under a flat kernel of radius `bandwidth`
/// and groups points whose modes chain within `bandwidth / 2`.
///
/// Returns one cluster id per input point. Ids are numbered by ascending
/// mode, so the result does not depend on input order.
pub fn meanshift_1d(points: &[f64], bandwidth: f64) -> Vec<usize> {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    if points.is_empty() {
        return Vec::new();
    }
    // Work on offsets from the minimum so shifting the input is exact.
    let min = points.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sorted: Vec<f64> = points.iter().map(|p| p - min).collect();
    sorted.sort_by(f64::total_cmp);

    let modes: Vec<f64> = points.iter().map(|p| converge(&sorted, p - min, bandwidth)).collect();

    let mut distinct = modes.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut cluster_of_mode = Vec::with_capacity(distinct.len());
    let mut cluster = 0;
    for (i, m) in distinct.iter().enumerate() {
        if i > 0 && m - distinct[i - 1] > bandwidth / 2.0 {
            cluster += 1;
        }
        cluster_of_mode.push(cluster);
    }
    modes
        .iter()
        .map(|m| {
            let idx = distinct.partition_point(|d| d < m);
            cluster_of_mode[idx]
        })
        .collect()
}

/// Iterates the window mean until the set of points inside stops changing.
fn converge(sorted: &[f64], start: f64, bandwidth: f64) -> f64 {
    let mut center = start;
    let mut window = (usize::MAX, usize::MAX);
    for _ in 0..1000 {
        let lo = sorted.partition_point(|p| *p < center - bandwidth);
        let hi = sorted.partition_point(|p| *p <= center + bandwidth);
        if (lo, hi) == window || lo == hi {
            break;
        }
        window = (lo, hi);
        center = sorted[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
    center
}

/// Number of distinct clusters in an assignment.
pub fn cluster_count(assignment: &[usize]) -> usize {
    assignment.iter().max().map_or(0, |m| m + 1)
}
