//! Relative pose error over fixed time intervals.

use std::fmt;

use crate::dataset::TrajectoryEntry;
use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeReport {
    /// deg/s
    pub rmse_rot: f64,
    pub median_rot: f64,
    /// m/s
    pub rmse_trans: f64,
    pub median_trans: f64,
    pub pair_count: usize,
}

impl RpeReport {
    pub const CSV_HEADER: &'static str = "rmse_rot_deg_s,median_rot_deg_s,rmse_trans_m_s,median_trans_m_s,pairs";

    pub fn csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{}",
            self.rmse_rot, self.median_rot, self.rmse_trans, self.median_trans, self.pair_count
        )
    }

    pub fn json(&self) -> String {
        format!(
            "{{\"rmse_rot\":{},\"median_rot\":{},\"rmse_trans\":{},\"median_trans\":{},\"pair_count\":{}}}",
            self.rmse_rot, self.median_rot, self.rmse_trans, self.median_trans, self.pair_count
        )
    }
}

impl fmt::Display for RpeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>12} {:>12} {:>12}", "RMSE(R)", "Median(R)", "RMSE(t)", "Median(t)")?;
        writeln!(f, "{:>12} {:>12} {:>12} {:>12}", "deg/s", "deg/s", "m/s", "m/s")?;
        write!(
            f,
            "{:>12.4} {:>12.4} {:>12.4} {:>12.4}   ({} pairs)",
            self.rmse_rot, self.median_rot, self.rmse_trans, self.median_trans, self.pair_count
        )
    }
}

/// Index of the entry whose timestamp is closest to `t`, if within `max_dt`.
/// Ties go to the earlier entry.
fn nearest(traj: &[TrajectoryEntry], t: f64, max_dt: f64) -> Option<usize> {
    let k = traj.partition_point(|e| e.timestamp < t);
    let mut best: Option<(f64, usize)> = None;
    for i in [k.wrapping_sub(1), k] {
        if let Some(e) = traj.get(i) {
            let d = (e.timestamp - t).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.filter(|(d, _)| *d <= max_dt).map(|(_, i)| i)
}

/// Rotational (deg/s) and translational (m/s) error of every usable pair.
///
/// Pair `(i, j)` takes `j` as the estimate nearest to `t_i + delta`; both ends
/// are matched to the nearest ground-truth timestamps within `max_dt`.
pub fn rpe_samples(estimated: &[TrajectoryEntry], groundtruth: &[TrajectoryEntry], delta: f64, max_dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(delta > 0.0) || !(max_dt >= 0.0) {
        return Err(Error::invalid("delta", "interval and tolerance must be positive"));
    }
    let sorted = |t: &[TrajectoryEntry]| t.windows(2).all(|w| w[0].timestamp < w[1].timestamp);
    if !sorted(estimated) || !sorted(groundtruth) {
        return Err(Error::invalid("trajectory", "timestamps must be strictly increasing"));
    }
    let mut out = Vec::new();
    for (i, a) in estimated.iter().enumerate() {
        let Some(j) = nearest(estimated, a.timestamp + delta, max_dt) else {
            continue;
        };
        if j <= i {
            continue;
        }
        let b = &estimated[j];
        let (Some(gi), Some(gj)) = (
            nearest(groundtruth, a.timestamp, max_dt),
            nearest(groundtruth, b.timestamp, max_dt),
        ) else {
            continue;
        };
        let est_rel = a.pose.inverse() * b.pose;
        let gt_rel = groundtruth[gi].pose.inverse() * groundtruth[gj].pose;
        let e: Pose = gt_rel.inverse() * est_rel;
        let (angle, _) = Pose::identity().distance(&e);
        out.push((angle.to_degrees() / delta, e.translation.norm() / delta));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData { found: 0, required: 1 });
    }
    Ok(out)
}

fn rmse(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn compute_rpe(estimated: &[TrajectoryEntry], groundtruth: &[TrajectoryEntry], delta: f64, max_dt: f64) -> Result<RpeReport> {
    let samples = rpe_samples(estimated, groundtruth, delta, max_dt)?;
    let rot: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let trans: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(RpeReport {
        rmse_rot: rmse(&rot),
        median_rot: median(&rot),
        rmse_trans: rmse(&trans),
        median_trans: median(&trans),
        pair_count: samples.len(),
    })
}
