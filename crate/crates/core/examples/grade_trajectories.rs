//! Grades a drifting estimate against a circular ground-truth path with every
//! trajectory metric.

use std::io::Write as _;

use drf::metrics::{grade, write_csv_rows};
use drf::{Pose, Trajectory};

fn main() -> drf::Result<()> {
    let n = 1201;
    let circle = |k: usize, r: f64, drift: f64| {
        let a = k as f64 * 0.005;
        Pose::new(r * a.cos() + drift * k as f64, r * a.sin(), a + std::f64::consts::FRAC_PI_2)
    };
    let gt = Trajectory::uniform(0.0, 0.01, (0..n).map(|k| circle(k, 20.0, 0.0)).collect(), None)?;
    let est = Trajectory::uniform(0.0, 0.01, (0..n).map(|k| circle(k, 20.5, 0.002)).collect(), None)?;
    let sigmas: Vec<[f64; 2]> = (0..n).map(|k| [0.2 + 0.001 * k as f64; 2]).collect();
    let report = grade(&est, Some(&sigmas), &gt)?;
    let mut out = std::io::stdout();
    out.write_all(b"model,scenario,horizon,ticks,c_ate,m_ate,ed,defect_x,defect_y,lcss,dtw,hausdorff\n")?;
    write_csv_rows(&mut out, "drifting", "circle", &report)?;
    Ok(())
}
