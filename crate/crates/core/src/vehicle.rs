//! Shared vehicle value types and forward-Euler pose integration.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, DrfError, Result};

/// Default control tick (100 Hz).
pub const DEFAULT_DT: f64 = 0.01;

/// Both pedals above this fraction flags a row as overlapping.
pub const PEDAL_OVERLAP: f64 = 0.05;

/// Actuator command for one control tick.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// `[0, 1]`
    pub throttle: f64,
    /// `[0, 1]`
    pub brake: f64,
    /// `[-1, 1]`, positive steers left.
    pub steering: f64,
}

impl ControlCommand {
    pub fn new(throttle: f64, brake: f64, steering: f64) -> Result<Self> {
        let c = ControlCommand {
            throttle,
            brake,
            steering,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && (-1.0..=1.0).contains(&self.steering);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("command out of range: {self:?}")))
        }
    }

    /// True when throttle and brake are both applied.
    pub fn pedal_overlap(&self) -> bool {
        self.throttle > PEDAL_OVERLAP && self.brake > PEDAL_OVERLAP
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// m/s, never negative.
    pub speed: f64,
    /// m/s^2
    pub acceleration: f64,
    /// rad in `(-pi, pi]`
    pub heading: f64,
}

impl VehicleState {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.acceleration.is_finite() && self.heading.is_finite()) {
            return Err(DrfError::NonFinite("vehicle state"));
        }
        if self.speed < 0.0 {
            return Err(invalid(format!("negative speed {}", self.speed)));
        }
        if !(self.heading > -PI && self.heading <= PI) {
            return Err(invalid(format!("heading {} outside (-pi, pi]", self.heading)));
        }
        Ok(())
    }
}

/// Planar pose in the world frame (x east, y north).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { x, y, heading }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One row of a driving log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub command: ControlCommand,
    pub state: VehicleState,
    pub pose: Pose,
}

impl LogRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || !self.pose.is_finite() {
            return Err(DrfError::NonFinite("log record"));
        }
        self.command.validate()?;
        self.state.validate()
    }
}

/// Fixed-step sequence of poses, optionally with the matching states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    timestamps: Vec<f64>,
    poses: Vec<Pose>,
    states: Option<Vec<VehicleState>>,
}

/// Tolerance on the constant time step.
pub const STEP_TOLERANCE: f64 = 1e-9;

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose>, states: Option<Vec<VehicleState>>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(invalid(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        if let Some(s) = &states {
            if s.len() != poses.len() {
                return Err(invalid("states and poses differ in length"));
            }
        }
        if let [a, b, ..] = timestamps.as_slice() {
            let dt = b - a;
            for w in timestamps.windows(2) {
                let step = w[1] - w[0];
                if !(step > 0.0) {
                    return Err(invalid(format!("timestamps not increasing at t={}", w[0])));
                }
                if (step - dt).abs() > STEP_TOLERANCE {
                    return Err(invalid(format!("non-constant step {step} (expected {dt}) at t={}", w[0])));
                }
            }
        }
        if poses.iter().any(|p| !p.is_finite()) {
            return Err(DrfError::NonFinite("trajectory pose"));
        }
        Ok(Trajectory {
            timestamps,
            poses,
            states,
        })
    }

    /// Trajectory starting at `t0` with step `dt`.
    pub fn uniform(t0: f64, dt: f64, poses: Vec<Pose>, states: Option<Vec<VehicleState>>) -> Result<Self> {
        let timestamps = (0..poses.len()).map(|k| t0 + k as f64 * dt).collect();
        Trajectory::new(timestamps, poses, states)
    }

    pub fn from_log(log: &[LogRecord]) -> Result<Self> {
        Trajectory::new(
            log.iter().map(|r| r.t).collect(),
            log.iter().map(|r| r.pose).collect(),
            Some(log.iter().map(|r| r.state).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn states(&self) -> Option<&[VehicleState]> {
        self.states.as_deref()
    }

    /// Time step, or `None` for fewer than two samples.
    pub fn dt(&self) -> Option<f64> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some(b - a),
            _ => None,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Positions as `[x, y]` pairs.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.poses.iter().map(|p| [p.x, p.y]).collect()
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// One forward-Euler step. Position advances with the speed and heading at
/// the start of the interval; speed is clamped at zero.
pub fn integrate_step(pose: Pose, speed: f64, accel: f64, heading_rate: f64, dt: f64) -> Result<(Pose, f64)> {
    if !(pose.is_finite() && speed.is_finite() && accel.is_finite() && heading_rate.is_finite() && dt.is_finite()) {
        return Err(DrfError::NonFinite("integrate_step input"));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if speed < 0.0 {
        return Err(invalid(format!("negative speed {speed}")));
    }
    let next = Pose {
        x: pose.x + speed * pose.heading.cos() * dt,
        y: pose.y + speed * pose.heading.sin() * dt,
        heading: wrap_angle(pose.heading + heading_rate * dt),
    };
    Ok((next, (speed + accel * dt).max(0.0)))
}

/// Rotates a vector by `angle`.
pub fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn stationary_step_is_identity() {
        let (p, v) = integrate_step(Pose::default(), 0.0, 0.0, 0.0, 0.01).unwrap();
        assert_eq!(p, Pose::default());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn straight_step() {
        let (p, v) = integrate_step(Pose::default(), 10.0, 0.0, 0.0, 0.01).unwrap();
        assert!((p.x - 0.1).abs() < 1e-15 && p.y == 0.0 && p.heading == 0.0);
        assert_eq!(v, 10.0);
    }

    #[test]
    fn euler_error_against_fine_reference_is_first_order() {
        // Reference: same ODE integrated with dt/1000 steps. Forward Euler's
        // along-track error after T seconds is about accel * T * dt / 2.
        let run = |dt: f64, steps: usize| {
            let (mut p, mut v) = (Pose::new(0.0, 0.0, PI / 2.0), 5.0);
            for _ in 0..steps {
                (p, v) = integrate_step(p, v, 2.0, 0.1, dt).unwrap();
            }
            p
        };
        let fine = run(0.01 / 1000.0, 100_000);
        let e1 = run(0.01, 100).distance(&fine);
        let e2 = run(0.005, 200).distance(&fine);
        assert!((e1 - 2.0 * 1.0 * 0.01 / 2.0).abs() < 1e-3, "{e1}");
        assert!((e1 / e2 - 2.0).abs() < 0.05, "order ratio {}", e1 / e2);
        let (one, _) = integrate_step(Pose::new(0.0, 0.0, PI / 2.0), 5.0, 2.0, 0.1, 0.01).unwrap();
        let one_fine = {
            let (mut p, mut v) = (Pose::new(0.0, 0.0, PI / 2.0), 5.0);
            for _ in 0..1000 {
                (p, v) = integrate_step(p, v, 2.0, 0.1, 1e-5).unwrap();
            }
            p
        };
        assert!(one.distance(&one_fine) < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(integrate_step(Pose::new(f64::NAN, 0.0, 0.0), 1.0, 0.0, 0.0, 0.01).is_err());
        assert!(integrate_step(Pose::default(), 1.0, f64::INFINITY, 0.0, 0.01).is_err());
        assert!(integrate_step(Pose::default(), 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(integrate_step(Pose::default(), -1.0, 0.0, 0.0, 0.01).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let poses = vec![Pose::default(); 3];
        assert!(Trajectory::new(vec![0.0, 0.01, 0.02], poses.clone(), None).is_ok());
        assert!(Trajectory::new(vec![0.0, 0.01, 0.01], poses.clone(), None).is_err());
        assert!(Trajectory::new(vec![0.0, 0.01, 0.03], poses.clone(), None).is_err());
        assert!(Trajectory::new(vec![0.0, 0.01], poses, None).is_err());
    }

    #[test]
    fn pedal_overlap_flag() {
        assert!(ControlCommand::new(0.2, 0.1, 0.0).unwrap().pedal_overlap());
        assert!(!ControlCommand::new(0.2, 0.05, 0.0).unwrap().pedal_overlap());
        assert!(ControlCommand::new(0.2, 1.2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn wrap_is_in_range_and_congruent(theta in -100.0f64..100.0) {
            let w = wrap_angle(theta);
            prop_assert!(w > -PI && w <= PI);
            let k = (theta - w) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }

        #[test]
        fn speed_never_negative(steps in proptest::collection::vec((-20.0f64..5.0, -1.0f64..1.0), 1..200)) {
            let (mut p, mut v) = (Pose::default(), 3.0);
            for (a, w) in steps {
                (p, v) = integrate_step(p, v, a, w, 0.01).unwrap();
                prop_assert!(v >= 0.0);
            }
        }

        #[test]
        fn folding_is_associative(steps in proptest::collection::vec((0.0f64..3.0, -0.5f64..0.5), 2..60), split in 1usize..59) {
            let split = split.min(steps.len() - 1);
            let fold = |start: (Pose, f64), s: &[(f64, f64)]| {
                s.iter().fold(start, |(p, v), (a, w)| integrate_step(p, v, *a, *w, 0.01).unwrap())
            };
            let whole = fold((Pose::default(), 4.0), &steps);
            let parts = fold(fold((Pose::default(), 4.0), &steps[..split]), &steps[split..]);
            prop_assert_eq!(whole, parts);
        }
    }
}
