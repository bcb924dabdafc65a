//! Trajectory error metrics and horizon-sliced reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::vehicle::Trajectory;

/// Evaluation horizons in seconds; `None` is the end of the trajectory.
pub const HORIZONS: [Option<f64>; 5] = [Some(1.0), Some(5.0), Some(10.0), Some(30.0), None];

/// Slack on the horizon boundary so `t - t0 = h` is included despite rounding.
const HORIZON_EPS: f64 = 1e-9;

/// LCSS match threshold on each axis, m.
pub const LCSS_THRESHOLD: f64 = 0.1;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn horizon_label(h: Option<f64>) -> String {
    match h {
        Some(s) => format!("{s}s"),
        None => "EoT".to_string(),
    }
}

/// Number of ticks of `gt` within `[t0, t0 + horizon]`.
pub fn horizon_ticks(gt: &Trajectory, horizon: Option<f64>) -> usize {
    let ts = gt.timestamps();
    match (horizon, ts.first()) {
        (None, _) => ts.len(),
        (Some(_), None) => 0,
        (Some(h), Some(&t0)) => ts.partition_point(|t| t - t0 <= h + HORIZON_EPS),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ate {
    pub c_ate: f64,
    pub m_ate: f64,
    pub ticks: usize,
}

/// Cumulative and mean absolute trajectory error over the ticks within the
/// horizon. Both trajectories must cover the horizon.
pub fn ate(model: &Trajectory, gt: &Trajectory, horizon: Option<f64>) -> Result<Ate> {
    if let (Some(a), Some(b)) = (model.dt(), gt.dt()) {
        if (a - b).abs() > 1e-9 {
            return Err(invalid(format!("time steps differ: {a} vs {b}")));
        }
    }
    if let Some(h) = horizon {
        if gt.duration() + HORIZON_EPS < h {
            return Err(invalid(format!("ground truth lasts {}s, shorter than horizon {h}s", gt.duration())));
        }
    }
    let n = horizon_ticks(gt, horizon);
    if n == 0 {
        return Err(invalid("empty ground truth"));
    }
    if model.len() < n {
        return Err(invalid(format!("model trajectory has {} ticks, horizon needs {n}", model.len())));
    }
    let c: f64 = model.poses()[..n]
        .iter()
        .zip(&gt.poses()[..n])
        .map(|(p, q)| (p.x - q.x).hypot(p.y - q.y))
        .sum();
    Ok(Ate {
        c_ate: c,
        m_ate: c / n as f64,
        ticks: n,
    })
}

/// Distance between final positions.
pub fn end_pose_diff(model: &Trajectory, gt: &Trajectory) -> Result<f64> {
    match (model.poses().last(), gt.poses().last()) {
        (Some(a), Some(b)) => Ok(a.distance(b)),
        _ => Err(invalid("end-pose difference of an empty trajectory")),
    }
}

/// Fraction of ticks whose ground truth lies outside `predicted +- 2 sigma`
/// on `axis` (0 = x, 1 = y).
pub fn two_sigma_defect(gt: &Trajectory, predicted: &Trajectory, sigmas: &[[f64; 2]], axis: usize) -> Result<f64> {
    let n = gt.len();
    if predicted.len() != n || sigmas.len() != n {
        return Err(invalid(format!(
            "defect needs aligned sequences: gt {n}, predicted {}, sigmas {}",
            predicted.len(),
            sigmas.len()
        )));
    }
    if axis > 1 {
        return Err(invalid("axis must be 0 (x) or 1 (y)"));
    }
    if sigmas.iter().any(|s| !(s[axis] > 0.0)) {
        return Err(invalid("sigma must be positive"));
    }
    let pick = |p: &crate::vehicle::Pose| if axis == 0 { p.x } else { p.y };
    let truth: Vec<f64> = gt.poses().iter().map(pick).collect();
    let mean: Vec<f64> = predicted.poses().iter().map(pick).collect();
    let std: Vec<f64> = sigmas.iter().map(|s| s[axis]).collect();
    Ok(two_sigma_defect_values(&truth, &mean, &std))
}

/// Fraction of `truth` values outside `mean +- 2 std`; 0 for empty input.
pub fn two_sigma_defect_values(truth: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    let n = truth.len().min(mean.len()).min(std.len());
    if n == 0 {
        return 0.0;
    }
    let outside = (0..n).filter(|&i| (truth[i] - mean[i]).abs() > 2.0 * std[i]).count();
    outside as f64 / n as f64
}

/// Directed Hausdorff distance `max_a min_b |a - b|` with early break.
/// The inner scan starts at the previous nearest index and walks outward,
/// which finds a close point quickly on ordered trajectories.
fn directed_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = b.len();
    let mut cmax = 0.0f64;
    let mut j0 = 0usize;
    for &p in a {
        let mut cmin = f64::INFINITY;
        let mut jbest = j0;
        let reach = j0.max(n - 1 - j0);
        // Visit j0, j0+1, j0-1, j0+2, j0-2, ...
        for k in 0..=2 * reach {
            let j = if k % 2 == 1 {
                j0 + (k + 1) / 2
            } else {
                match j0.checked_sub(k / 2) {
                    Some(j) => j,
                    None => continue,
                }
            };
            if j >= n {
                continue;
            }
            let d = dist(p, b[j]);
            if d < cmin {
                cmin = d;
                jbest = j;
            }
            if cmin < cmax {
                break;
            }
        }
        j0 = jbest;
        cmax = cmax.max(cmin);
    }
    cmax
}

/// Symmetric Hausdorff distance between the position sets.
pub fn hausdorff(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("hausdorff of an empty trajectory"));
    }
    let (pa, pb) = (a.points(), b.points());
    Ok(directed_hausdorff(&pa, &pb).max(directed_hausdorff(&pb, &pa)))
}

/// `1 - L / min(n_m, n_gt)` with `L` the LCSS length under the per-axis threshold.
pub fn lcss_error(model: &Trajectory, gt: &Trajectory, threshold: f64) -> Result<f64> {
    if model.is_empty() || gt.is_empty() {
        return Err(invalid("lcss of an empty trajectory"));
    }
    let (a, b) = (model.points(), gt.points());
    let m = b.len();
    let mut prev = vec![0u32; m + 1];
    let mut cur = vec![0u32; m + 1];
    for p in &a {
        for j in 1..=m {
            let q = b[j - 1];
            cur[j] = if (p[0] - q[0]).abs() <= threshold && (p[1] - q[1]).abs() <= threshold {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let l = prev[m] as f64;
    Ok(1.0 - l / a.len().min(m) as f64)
}

/// Dynamic time warping with Euclidean cost, sum aggregation, no window.
pub fn dtw(model: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if model.is_empty() || gt.is_empty() {
        return Err(invalid("dtw of an empty trajectory"));
    }
    let (a, b) = (model.points(), gt.points());
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in &a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = dist(*p, b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: String,
    pub c_ate: f64,
    pub m_ate: f64,
    pub ticks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Horizons longer than the ground truth are omitted.
    pub horizons: Vec<HorizonRow>,
    pub ed: f64,
    /// Present when the model supplies predictive sigmas.
    pub defect_x: Option<f64>,
    pub defect_y: Option<f64>,
    pub lcss: f64,
    pub dtw: f64,
    pub hausdorff: f64,
}

impl MetricsReport {
    pub fn horizon(&self, label: &str) -> Option<&HorizonRow> {
        self.horizons.iter().find(|h| h.horizon == label)
    }

    /// m-ATE over the whole trajectory.
    pub fn m_ate_eot(&self) -> f64 {
        self.horizon("EoT").map(|h| h.m_ate).unwrap_or(f64::NAN)
    }
}

/// Every metric at every horizon the ground truth covers.
pub fn grade(model: &Trajectory, sigmas: Option<&[[f64; 2]]>, gt: &Trajectory) -> Result<MetricsReport> {
    let mut horizons = Vec::new();
    for h in HORIZONS {
        if let Some(s) = h {
            if gt.duration() + HORIZON_EPS < s {
                continue;
            }
        }
        let a = ate(model, gt, h)?;
        horizons.push(HorizonRow {
            horizon: horizon_label(h),
            c_ate: a.c_ate,
            m_ate: a.m_ate,
            ticks: a.ticks,
        });
    }
    let (defect_x, defect_y) = match sigmas {
        Some(s) => (Some(two_sigma_defect(gt, model, s, 0)?), Some(two_sigma_defect(gt, model, s, 1)?)),
        None => (None, None),
    };
    Ok(MetricsReport {
        horizons,
        ed: end_pose_diff(model, gt)?,
        defect_x,
        defect_y,
        lcss: lcss_error(model, gt, LCSS_THRESHOLD)?,
        dtw: dtw(model, gt)?,
        hausdorff: hausdorff(model, gt)?,
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Field-wise mean across reports. A horizon is averaged over the reports
/// that contain it; defect rates over the reports that have them.
pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let mut horizons = Vec::new();
    for h in HORIZONS {
        let label = horizon_label(h);
        let rows: Vec<&HorizonRow> = reports.iter().filter_map(|r| r.horizon(&label)).collect();
        if rows.is_empty() {
            continue;
        }
        horizons.push(HorizonRow {
            horizon: label,
            c_ate: mean_of(rows.iter().map(|r| r.c_ate)),
            m_ate: mean_of(rows.iter().map(|r| r.m_ate)),
            ticks: (rows.iter().map(|r| r.ticks).sum::<usize>() as f64 / rows.len() as f64).round() as usize,
        });
    }
    let opt_mean = |f: fn(&MetricsReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean_of(v.into_iter()))
    };
    Some(MetricsReport {
        horizons,
        ed: mean_of(reports.iter().map(|r| r.ed)),
        defect_x: opt_mean(|r| r.defect_x),
        defect_y: opt_mean(|r| r.defect_y),
        lcss: mean_of(reports.iter().map(|r| r.lcss)),
        dtw: mean_of(reports.iter().map(|r| r.dtw)),
        hausdorff: mean_of(reports.iter().map(|r| r.hausdorff)),
    })
}

pub const CSV_HEADER: &str = "model,scenario,horizon,ticks,c_ate,m_ate,ed,defect_x,defect_y,lcss,dtw,hausdorff";

/// One CSV row per horizon; scenario-level metrics repeat on each row.
pub fn write_csv_rows(w: &mut impl Write, model: &str, scenario: &str, r: &MetricsReport) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for h in &r.horizons {
        writeln!(
            w,
            "{model},{scenario},{},{},{},{},{},{},{},{},{},{}",
            h.horizon,
            h.ticks,
            h.c_ate,
            h.m_ate,
            r.ed,
            opt(r.defect_x),
            opt(r.defect_y),
            r.lcss,
            r.dtw,
            r.hausdorff
        )?;
    }
    Ok(())
}
