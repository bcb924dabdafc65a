//! Synthetic ground truth: a dynamic-bicycle oracle vehicle with actuator
//! lags, scripted open-loop command profiles, the golden scenario set and
//! randomised training drives.

use std::f64::consts::PI;

use drf_autodiff::rng::{derive_seed, stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::RuleBasedParams;
use crate::error::{invalid, Result};
use crate::vehicle::{wrap_angle, ControlCommand, LogRecord, Pose, VehicleState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleVehicle {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub yaw_inertia: f64,
    /// Distances from the centre of gravity to the front and rear axles, m.
    pub lf: f64,
    pub lr: f64,
    /// Axle cornering stiffness, N/rad.
    pub cornering_front: f64,
    pub cornering_rear: f64,
    /// Front wheel angle at full steering command, rad.
    pub max_wheel_angle: f64,
    /// First-order actuator time constants, s.
    pub throttle_tau: f64,
    pub steering_tau: f64,
    /// m/s^2 per unit pedal beyond the deadzone.
    pub throttle_gain: f64,
    pub brake_gain: f64,
    pub throttle_deadzone: f64,
    pub brake_deadzone: f64,
    /// Quadratic aerodynamic drag, 1/m.
    pub drag_coeff: f64,
    /// Rolling resistance, m/s^2.
    pub rolling_resistance: f64,
    /// Ratio of reported to true speed (effective rolling radius error).
    pub wheel_speed_scale: f64,
    /// Integration sub-steps per control tick.
    pub substeps: usize,
    /// Std of the Gaussian noise added to logged x and y, m.
    pub position_noise: f64,
}

impl Default for OracleVehicle {
    fn default() -> Self {
        OracleVehicle {
            mass: 1800.0,
            yaw_inertia: 3000.0,
            lf: 1.3,
            lr: 1.55,
            cornering_front: 1.526e5,
            cornering_rear: 1.3e5,
            max_wheel_angle: 0.47,
            throttle_tau: 0.3,
            steering_tau: 0.1,
            throttle_gain: 3.4,
            brake_gain: 7.2,
            throttle_deadzone: 0.05,
            brake_deadzone: 0.05,
            drag_coeff: 2.5e-4,
            rolling_resistance: 0.002,
            wheel_speed_scale: 1.04,
            substeps: 10,
            position_noise: 0.01,
        }
    }
}

/// Full continuous state of the oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleState {
    pub x: f64,
    pub y: f64,
    /// Unwrapped yaw angle, rad.
    pub yaw: f64,
    /// Body-frame longitudinal and lateral velocity at the centre of gravity, m/s.
    pub vx: f64,
    pub vy: f64,
    /// Yaw rate, rad/s.
    pub yaw_rate: f64,
    /// Lagged powertrain acceleration, m/s^2.
    pub drive: f64,
    /// Lagged front wheel angle, rad.
    pub wheel_angle: f64,
}

/// Below this speed the lateral dynamics blend into the kinematic model.
const KINEMATIC_BELOW: f64 = 1.0;
const BLEND_WIDTH: f64 = 2.0;
const KINEMATIC_RELAX: f64 = 0.05;
/// Speed scale of the smooth sign used for resistive forces near standstill.
const STANDSTILL: f64 = 0.1;

impl OracleVehicle {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.yaw_inertia,
            self.lf,
            self.lr,
            self.cornering_front,
            self.cornering_rear,
            self.max_wheel_angle,
            self.throttle_tau,
            self.steering_tau,
            self.wheel_speed_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("oracle physical parameters must be positive"));
        }
        if self.substeps == 0 || self.position_noise < 0.0 || self.drag_coeff < 0.0 || self.rolling_resistance < 0.0 {
            return Err(invalid("oracle substeps, noise and resistances must be non-negative (substeps > 0)"));
        }
        if self.understeer_gradient() <= 0.0 {
            return Err(invalid("oracle must be understeering"));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Understeer gradient `K` (m) in the steady-state relation `r = v delta / (L + K v^2)`.
    pub fn understeer_gradient(&self) -> f64 {
        self.mass / self.wheelbase() * (self.lr / self.cornering_front - self.lf / self.cornering_rear)
    }

    /// Steady-state yaw rate of the linear bicycle at speed `vx` and wheel angle `delta`.
    pub fn steady_state_yaw_rate(&self, vx: f64, delta: f64) -> f64 {
        vx * delta / (self.wheelbase() + self.understeer_gradient() * vx * vx)
    }

    /// Steady-state powertrain acceleration for a throttle pedal position.
    fn drive_target(&self, throttle: f64) -> f64 {
        self.throttle_gain * (throttle - self.throttle_deadzone).max(0.0)
    }

    /// Longitudinal acceleration from powertrain, brake and resistances.
    fn longitudinal(&self, drive: f64, brake: f64, vx: f64) -> f64 {
        let moving = (vx / STANDSTILL).tanh();
        drive
            - (self.brake_gain * (brake - self.brake_deadzone).max(0.0) + self.rolling_resistance) * moving
            - self.drag_coeff * vx * vx.abs()
    }

    fn derivative(&self, s: &OracleState, cmd: &ControlCommand) -> OracleState {
        let delta = s.wheel_angle;
        let l = self.wheelbase();
        let (sy, cy) = s.yaw.sin_cos();
        let a_lon = self.longitudinal(s.drive, cmd.brake, s.vx);

        let w = ((s.vx - KINEMATIC_BELOW) / BLEND_WIDTH).clamp(0.0, 1.0);
        let (mut dvx, mut dvy, mut dr) = (a_lon, 0.0, 0.0);
        if w > 0.0 {
            let vx = s.vx;
            let alpha_f = delta - (s.vy + self.lf * s.yaw_rate).atan2(vx);
            let alpha_r = -(s.vy - self.lr * s.yaw_rate).atan2(vx);
            let fyf = self.cornering_front * alpha_f;
            let fyr = self.cornering_rear * alpha_r;
            let dvx_d = a_lon - fyf * delta.sin() / self.mass + s.vy * s.yaw_rate;
            let dvy_d = (fyf * delta.cos() + fyr) / self.mass - vx * s.yaw_rate;
            let dr_d = (self.lf * fyf * delta.cos() - self.lr * fyr) / self.yaw_inertia;
            dvx = w * dvx_d + (1.0 - w) * a_lon;
            dvy = w * dvy_d;
            dr = w * dr_d;
        }
        if w < 1.0 {
            let r_kin = s.vx * delta.tan() / l;
            let vy_kin = r_kin * self.lr;
            dvy += (1.0 - w) * (vy_kin - s.vy) / KINEMATIC_RELAX;
            dr += (1.0 - w) * (r_kin - s.yaw_rate) / KINEMATIC_RELAX;
        }
        OracleState {
            x: s.vx * cy - s.vy * sy,
            y: s.vx * sy + s.vy * cy,
            yaw: s.yaw_rate,
            vx: dvx,
            vy: dvy,
            yaw_rate: dr,
            drive: (self.drive_target(cmd.throttle) - s.drive) / self.throttle_tau,
            wheel_angle: (cmd.steering * self.max_wheel_angle - s.wheel_angle) / self.steering_tau,
        }
    }

    /// Advances one control tick with the command held constant.
    pub fn step(&self, state: &OracleState, cmd: &ControlCommand, dt: f64) -> OracleState {
        let h = dt / self.substeps as f64;
        let mut s = *state;
        for _ in 0..self.substeps {
            let k1 = self.derivative(&s, cmd);
            let mid = axpy(&s, &k1, 0.5 * h);
            let k2 = self.derivative(&mid, cmd);
            s = axpy(&s, &k2, h);
            if s.vx < 0.0 {
                s.vx = 0.0;
            }
        }
        s
    }

    /// The reported vehicle state. Speed and acceleration carry the wheel
    /// speed scale; the pose is the centre of gravity.
    pub fn observe(&self, s: &OracleState, cmd: &ControlCommand) -> VehicleState {
        let d = self.derivative(s, cmd);
        VehicleState {
            speed: self.wheel_speed_scale * s.vx,
            acceleration: self.wheel_speed_scale * d.vx,
            heading: wrap_angle(s.yaw),
        }
    }

    /// Runs `commands` from `initial`, one log row per tick including the
    /// initial one (`commands.len()` rows; the last command is logged but
    /// not applied).
    pub fn simulate(&self, initial: &OracleState, commands: &[ControlCommand], dt: f64, noise_seed: u64) -> Vec<LogRecord> {
        let mut rng = stream(noise_seed, 0);
        let noise = Normal::new(0.0, self.position_noise.max(0.0)).expect("valid std");
        let mut s = *initial;
        let mut out = Vec::with_capacity(commands.len());
        for (k, cmd) in commands.iter().enumerate() {
            let state = self.observe(&s, cmd);
            let (nx, ny) = if self.position_noise > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            out.push(LogRecord {
                t: k as f64 * dt,
                command: *cmd,
                state,
                pose: Pose::new(s.x + nx, s.y + ny, state.heading),
            });
            if k + 1 < commands.len() {
                s = self.step(&s, cmd, dt);
            }
        }
        out
    }

    /// DM-RB parameters identified from this vehicle's logs: actuator map
    /// and drag in reported-speed units, and the wheelbase that reproduces
    /// the kinematic yaw rate from reported speed.
    pub fn nominal_rule_based(&self) -> RuleBasedParams {
        let s = self.wheel_speed_scale;
        RuleBasedParams {
            wheelbase: self.wheelbase() * s,
            max_front_wheel_angle: self.max_wheel_angle,
            throttle_gain: self.throttle_gain * s,
            brake_gain: self.brake_gain * s,
            throttle_deadzone: self.throttle_deadzone,
            brake_deadzone: self.brake_deadzone,
            drag_coeff: self.drag_coeff / s,
        }
    }

    /// Throttle that holds true speed `v` on a straight road.
    pub fn cruise_throttle(&self, v: f64) -> f64 {
        let need = self.rolling_resistance + self.drag_coeff * v * v;
        (self.throttle_deadzone + need / self.throttle_gain).clamp(0.0, 1.0)
    }
}

fn axpy(s: &OracleState, d: &OracleState, h: f64) -> OracleState {
    OracleState {
        x: s.x + h * d.x,
        y: s.y + h * d.y,
        yaw: s.yaw + h * d.yaw,
        vx: s.vx + h * d.vx,
        vy: s.vy + h * d.vy,
        yaw_rate: s.yaw_rate + h * d.yaw_rate,
        drive: s.drive + h * d.drive,
        wheel_angle: s.wheel_angle + h * d.wheel_angle,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub command: ControlCommand,
}

/// Piecewise-linear command profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    pub keyframes: Vec<Keyframe>,
    pub duration: f64,
    pub initial_speed: f64,
    pub initial_heading: f64,
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<()> {
        let first = self.keyframes.first().ok_or_else(|| invalid("script without keyframes"))?;
        if first.t > 0.0 || !(self.duration > 0.0) {
            return Err(invalid(format!("script {} does not cover [0, duration]", self.name)));
        }
        if self.keyframes.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(invalid(format!("script {} keyframes out of order", self.name)));
        }
        for k in &self.keyframes {
            k.command.validate()?;
        }
        Ok(())
    }

    /// Command at time `t`; held after the last keyframe.
    pub fn command_at(&self, t: f64) -> ControlCommand {
        let kf = &self.keyframes;
        let idx = kf.partition_point(|k| k.t <= t);
        if idx == 0 {
            return kf[0].command;
        }
        if idx == kf.len() {
            return kf[kf.len() - 1].command;
        }
        let (a, b) = (&kf[idx - 1], &kf[idx]);
        let span = b.t - a.t;
        if span <= 0.0 {
            return b.command;
        }
        let f = (t - a.t) / span;
        let lerp = |x: f64, y: f64| x + (y - x) * f;
        ControlCommand {
            throttle: lerp(a.command.throttle, b.command.throttle).clamp(0.0, 1.0),
            brake: lerp(a.command.brake, b.command.brake).clamp(0.0, 1.0),
            steering: lerp(a.command.steering, b.command.steering).clamp(-1.0, 1.0),
        }
    }

    /// One command per tick over `[0, duration]` (`duration/dt + 1` values).
    pub fn commands(&self, dt: f64) -> Vec<ControlCommand> {
        let n = (self.duration / dt).round() as usize;
        (0..=n).map(|k| self.command_at(k as f64 * dt)).collect()
    }

    pub fn initial_state(&self) -> OracleState {
        OracleState {
            yaw: self.initial_heading,
            vx: self.initial_speed,
            ..Default::default()
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }
}

/// Builds keyframe scripts while tracking a rough speed estimate from the
/// oracle's straight-line longitudinal model, the way a test driver plans
/// pedal timings.
pub struct ScriptBuilder<'a> {
    oracle: &'a OracleVehicle,
    keyframes: Vec<Keyframe>,
    t: f64,
    cmd: ControlCommand,
    speed: f64,
}

const PLAN_DT: f64 = 0.01;

impl<'a> ScriptBuilder<'a> {
    pub fn new(oracle: &'a OracleVehicle, initial_speed: f64) -> Self {
        let cmd = ControlCommand {
            throttle: if initial_speed > 0.0 { oracle.cruise_throttle(initial_speed) } else { 0.0 },
            brake: 0.0,
            steering: 0.0,
        };
        ScriptBuilder {
            oracle,
            keyframes: vec![Keyframe { t: 0.0, command: cmd }],
            t: 0.0,
            cmd,
            speed: initial_speed,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn speed_estimate(&self) -> f64 {
        self.speed
    }

    fn advance_estimate(&mut self, from: ControlCommand, to: ControlCommand, d: f64) {
        let steps = (d / PLAN_DT).round() as usize;
        for k in 0..steps {
            let f = (k as f64 + 0.5) / steps as f64;
            let throttle = from.throttle + (to.throttle - from.throttle) * f;
            let brake = from.brake + (to.brake - from.brake) * f;
            let a = self.oracle.longitudinal(self.oracle.drive_target(throttle), brake, self.speed);
            self.speed = (self.speed + a * PLAN_DT).max(0.0);
        }
    }

    /// Linear ramp to `cmd` over `d` seconds.
    pub fn ramp(&mut self, d: f64, cmd: ControlCommand) -> &mut Self {
        let from = self.cmd;
        self.advance_estimate(from, cmd, d);
        self.t += d;
        self.cmd = cmd;
        self.keyframes.push(Keyframe { t: self.t, command: cmd });
        self
    }

    pub fn hold(&mut self, d: f64) -> &mut Self {
        let c = self.cmd;
        self.ramp(d, c)
    }

    pub fn hold_until(&mut self, t_end: f64) -> &mut Self {
        let d = (t_end - self.t).max(0.0);
        self.hold(d)
    }

    fn pedals(&self, throttle: f64, brake: f64) -> ControlCommand {
        ControlCommand {
            throttle,
            brake,
            steering: self.cmd.steering,
        }
    }

    /// Ramps the pedals to cruise for the current speed estimate.
    pub fn cruise(&mut self, d: f64) -> &mut Self {
        let u = self.oracle.cruise_throttle(self.speed);
        let c = self.pedals(u, 0.0);
        self.ramp(d.min(0.5), c);
        if d > 0.5 {
            self.hold(d - 0.5);
        }
        self
    }

    /// Throttle `u` (or brake `b` when slowing down) until the estimate reaches `target`, then cruise.
    pub fn speed_to(&mut self, target: f64, u: f64, b: f64) -> &mut Self {
        let faster = target > self.speed;
        let c = if faster { self.pedals(u, 0.0) } else { self.pedals(0.0, b) };
        self.ramp(0.5, c);
        let mut d = 0.0;
        let limit = 120.0;
        while d < limit && ((faster && self.speed < target) || (!faster && self.speed > target)) {
            let a = self.oracle.longitudinal(self.oracle.drive_target(c.throttle), c.brake, self.speed);
            self.speed = (self.speed + a * PLAN_DT).max(0.0);
            d += PLAN_DT;
        }
        self.t += d;
        self.keyframes.push(Keyframe { t: self.t, command: c });
        let cruise = self.pedals(self.oracle.cruise_throttle(target.max(0.0)), 0.0);
        self.ramp(0.5, cruise)
    }

    /// Brakes with `b` to standstill and waits `wait` seconds.
    pub fn stop(&mut self, b: f64, wait: f64) -> &mut Self {
        let c = self.pedals(0.0, b);
        self.ramp(0.5, c);
        let mut d = 0.0;
        while d < 60.0 && self.speed > 0.0 {
            let a = self.oracle.longitudinal(0.0, b, self.speed);
            self.speed = (self.speed + a * PLAN_DT).max(0.0);
            d += PLAN_DT;
            if self.speed < 1e-3 {
                self.speed = 0.0;
            }
        }
        self.t += d;
        self.keyframes.push(Keyframe { t: self.t, command: c });
        self.hold(wait)
    }

    /// Steering pulse: ramp to `amount` over `ramp`, hold `hold`, ramp back to 0.
    pub fn steer(&mut self, amount: f64, ramp: f64, hold: f64) -> &mut Self {
        let mut c = self.cmd;
        c.steering = amount;
        self.ramp(ramp, c);
        self.hold(hold);
        c.steering = 0.0;
        self.ramp(ramp, c)
    }

    /// Sinusoidal steering `amp * sin(2 pi t / period)` for `cycles` periods.
    pub fn sinusoid(&mut self, amp: f64, period: f64, cycles: f64) -> &mut Self {
        let total = period * cycles;
        let steps = (total / 0.1).round() as usize;
        for k in 1..=steps {
            let tau = k as f64 * total / steps as f64;
            let mut c = self.cmd;
            c.steering = if k == steps { 0.0 } else { amp * (2.0 * PI * tau / period).sin() };
            self.ramp(total / steps as f64, c);
        }
        self
    }

    pub fn build(&self, name: &str, duration: f64, initial_speed: f64, initial_heading: f64) -> ScenarioScript {
        ScenarioScript {
            name: name.to_string(),
            keyframes: self.keyframes.clone(),
            duration,
            initial_speed,
            initial_heading,
        }
    }
}

/// A generated drive.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub script: ScenarioScript,
    pub log: Vec<LogRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Golden,
    Loop,
    Training,
}

pub const GOLDEN_NAMES: [&str; 8] = [
    "left_turn",
    "left_turn_stop",
    "right_turn",
    "right_turn_stop",
    "left_u_turn",
    "right_u_turn",
    "zigzag_left",
    "zigzag_right",
];
pub const LOOP_NAME: &str = "loop";
pub const GOLDEN_DURATION: f64 = 60.0;
pub const LOOP_DURATION: f64 = 600.0;

/// Total heading change of a log, unwrapping tick-to-tick differences.
pub fn net_heading_change(log: &[LogRecord]) -> f64 {
    log.windows(2).map(|w| wrap_angle(w[1].state.heading - w[0].state.heading)).sum()
}

/// Unwrapped heading change of the oracle under `script`, without noise.
fn heading_change(oracle: &OracleVehicle, script: &ScenarioScript, dt: f64) -> f64 {
    let cmds = script.commands(dt);
    let mut s = script.initial_state();
    for c in &cmds[..cmds.len() - 1] {
        s = oracle.step(&s, c, dt);
    }
    s.yaw - script.initial_heading
}

/// Bisects the steering hold time in `[0, hi]` so that the script's net
/// heading change hits `target` (monotone in the hold time).
fn tune_hold(oracle: &OracleVehicle, dt: f64, target: f64, hi: f64, build: impl Fn(f64) -> ScenarioScript) -> ScenarioScript {
    let sign = target.signum();
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if sign * heading_change(oracle, &build(mid), dt) < sign * target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug)]
struct Jitter {
    cruise: f64,
    turn_speed: f64,
    lead: f64,
}

impl Jitter {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Jitter {
            cruise: rng.random_range(-0.5..0.5),
            turn_speed: rng.random_range(-0.3..0.3),
            lead: rng.random_range(-1.0..1.0),
        }
    }
}

fn turn_script(o: &OracleVehicle, name: &str, side: f64, stop: bool, j: Jitter, hold: f64) -> ScenarioScript {
    let mut b = ScriptBuilder::new(o, 0.0);
    b.hold(1.0);
    if stop {
        b.speed_to(8.0 + j.cruise, 0.3, 0.0).cruise(5.0 + j.lead);
        b.stop(0.3, 3.0);
        let c = ControlCommand {
            throttle: 0.2,
            brake: 0.0,
            steering: 0.0,
        };
        b.ramp(0.5, c);
        b.steer(0.5 * side, 1.0, hold);
        b.speed_to(9.0 + j.cruise, 0.3, 0.0);
    } else {
        b.speed_to(9.0 + j.cruise, 0.3, 0.0).cruise(8.0 + j.lead);
        b.speed_to(6.0 + j.turn_speed, 0.0, 0.15).cruise(1.0);
        b.steer(0.35 * side, 1.0, hold);
        b.speed_to(9.5 + j.cruise, 0.3, 0.0);
    }
    b.hold_until(GOLDEN_DURATION);
    b.build(name, GOLDEN_DURATION, 0.0, 0.0)
}

fn u_turn_script(o: &OracleVehicle, name: &str, side: f64, j: Jitter, hold: f64) -> ScenarioScript {
    let mut b = ScriptBuilder::new(o, 0.0);
    b.hold(1.0);
    b.speed_to(7.0 + j.cruise, 0.3, 0.0).cruise(8.0 + j.lead);
    b.speed_to(3.5 + j.turn_speed, 0.0, 0.2).cruise(1.0);
    b.steer(0.85 * side, 1.5, hold);
    b.speed_to(9.0 + j.cruise, 0.3, 0.0);
    b.hold_until(GOLDEN_DURATION);
    b.build(name, GOLDEN_DURATION, 0.0, 0.0)
}

fn zigzag_script(o: &OracleVehicle, name: &str, side: f64, j: Jitter) -> ScenarioScript {
    let mut b = ScriptBuilder::new(o, 0.0);
    b.hold(1.0);
    b.speed_to(8.0 + j.cruise, 0.3, 0.0).cruise(4.0 + j.lead);
    b.sinusoid(0.12 * side, 6.0, 6.0);
    b.hold_until(GOLDEN_DURATION);
    b.build(name, GOLDEN_DURATION, 0.0, 0.0)
}

/// The eight golden scripts (steering holds tuned on the oracle so turns
/// reach +-pi/2 and U-turns +-pi) followed by the 10-minute loop.
pub fn golden_scripts(oracle: &OracleVehicle, seed: u64, dt: f64) -> Vec<ScenarioScript> {
    let mut rng = stream(derive_seed(seed, "golden"), 0);
    let mut out = Vec::with_capacity(9);
    for name in GOLDEN_NAMES {
        let j = Jitter::draw(&mut rng);
        let side = if name.starts_with("left") || name == "zigzag_left" { 1.0 } else { -1.0 };
        let script = match name {
            "left_turn" | "right_turn" => {
                tune_hold(oracle, dt, side * PI / 2.0, 15.0, |h| turn_script(oracle, name, side, false, j, h))
            }
            "left_turn_stop" | "right_turn_stop" => {
                tune_hold(oracle, dt, side * PI / 2.0, 15.0, |h| turn_script(oracle, name, side, true, j, h))
            }
            "left_u_turn" | "right_u_turn" => {
                tune_hold(oracle, dt, side * PI, 20.0, |h| u_turn_script(oracle, name, side, j, h))
            }
            _ => zigzag_script(oracle, name, side, j),
        };
        out.push(script);
    }
    out.push(loop_script(oracle, &mut rng));
    out
}

fn loop_script(o: &OracleVehicle, rng: &mut ChaCha8Rng) -> ScenarioScript {
    let mut b = ScriptBuilder::new(o, 0.0);
    b.hold(1.0);
    while b.time() < LOOP_DURATION - 40.0 {
        random_segment(&mut b, rng);
    }
    b.stop(0.3, 5.0);
    b.hold_until(LOOP_DURATION);
    b.build(LOOP_NAME, LOOP_DURATION, 0.0, 0.0)
}

/// Appends one randomly parameterised manoeuvre.
fn random_segment(b: &mut ScriptBuilder, rng: &mut ChaCha8Rng) {
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let cruise = rng.random_range(5.0..13.0);
    match rng.random_range(0..7u32) {
        0 => {
            b.speed_to(cruise, rng.random_range(0.15..0.45), rng.random_range(0.1..0.3));
            b.cruise(rng.random_range(2.0..10.0));
        }
        1 => {
            let v = rng.random_range(4.0..8.0);
            b.speed_to(v, 0.25, rng.random_range(0.1..0.25)).cruise(1.0);
            b.steer(side * rng.random_range(0.2..0.5), rng.random_range(0.5..1.5), rng.random_range(1.0..4.5));
            b.speed_to(cruise, 0.3, 0.2).cruise(rng.random_range(2.0..6.0));
        }
        2 => {
            b.stop(rng.random_range(0.15..0.45), rng.random_range(1.0..4.0));
            let c = ControlCommand {
                throttle: rng.random_range(0.15..0.35),
                brake: 0.0,
                steering: 0.0,
            };
            b.ramp(0.5, c);
            if rng.random_bool(0.5) {
                b.steer(side * rng.random_range(0.3..0.6), 1.0, rng.random_range(1.0..4.0));
            }
            b.speed_to(cruise, 0.3, 0.2).cruise(rng.random_range(2.0..6.0));
        }
        3 => {
            b.speed_to(rng.random_range(2.5..4.5), 0.2, 0.2).cruise(1.0);
            b.steer(side * rng.random_range(0.6..0.95), 1.5, rng.random_range(3.0..7.0));
            b.speed_to(cruise, 0.3, 0.2).cruise(2.0);
        }
        4 => {
            b.speed_to(cruise.min(11.0), 0.3, 0.2).cruise(1.0);
            b.sinusoid(side * rng.random_range(0.05..0.2), rng.random_range(3.0..8.0), rng.random_range(1.0..4.0));
            b.cruise(rng.random_range(1.0..4.0));
        }
        5 => {
            let c = ControlCommand {
                throttle: 0.0,
                brake: 0.0,
                steering: 0.0,
            };
            b.ramp(0.5, c).hold(rng.random_range(2.0..6.0));
            b.cruise(rng.random_range(1.0..3.0));
        }
        _ => {
            b.speed_to(cruise, 0.3, 0.2).cruise(1.0);
            b.steer(side * rng.random_range(0.05..0.15), 1.0, rng.random_range(0.5..2.0));
            b.steer(-side * rng.random_range(0.05..0.15), 1.0, rng.random_range(0.5..2.0));
            b.cruise(rng.random_range(2.0..5.0));
        }
    }
}

/// Randomised training drives of `duration` seconds, each starting from
/// rest at a random heading.
pub fn training_scripts(oracle: &OracleVehicle, seed: u64, count: usize, duration: f64) -> Vec<ScenarioScript> {
    (0..count)
        .map(|k| {
            let mut rng = stream(derive_seed(seed, "training"), k as u64);
            let heading = rng.random_range(-PI..PI);
            let mut b = ScriptBuilder::new(oracle, 0.0);
            b.hold(rng.random_range(0.5..2.0));
            while b.time() < duration {
                random_segment(&mut b, &mut rng);
            }
            b.build(&format!("train_{k:03}"), duration, 0.0, heading)
        })
        .collect()
}

/// Runs a script through the oracle with seeded position noise.
pub fn run_script(oracle: &OracleVehicle, script: &ScenarioScript, dt: f64, seed: u64) -> Vec<LogRecord> {
    let cmds = script.commands(dt);
    oracle.simulate(&script.initial_state(), &cmds, dt, derive_seed(seed, &script.name))
}

/// The golden set plus loop; `duration` overrides every script's length.
pub fn generate_golden_set(oracle: &OracleVehicle, seed: u64, dt: f64, duration: Option<f64>) -> Result<Vec<Scenario>> {
    oracle.validate()?;
    let scripts = golden_scripts(oracle, seed, dt);
    Ok(scripts
        .into_iter()
        .map(|s| {
            let s = match duration {
                Some(d) => s.with_duration(d),
                None => s,
            };
            let kind = if s.name == LOOP_NAME { ScenarioKind::Loop } else { ScenarioKind::Golden };
            let log = run_script(oracle, &s, dt, seed);
            Scenario {
                name: s.name.clone(),
                kind,
                script: s,
                log,
            }
        })
        .collect())
}

pub fn generate_training_set(
    oracle: &OracleVehicle,
    seed: u64,
    dt: f64,
    count: usize,
    duration: f64,
) -> Result<Vec<Scenario>> {
    oracle.validate()?;
    Ok(training_scripts(oracle, seed, count, duration)
        .into_iter()
        .map(|s| {
            let log = run_script(oracle, &s, dt, seed);
            Scenario {
                name: s.name.clone(),
                kind: ScenarioKind::Training,
                script: s,
                log,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_stays_at_rest() {
        let o = OracleVehicle::default();
        let s = o.step(&OracleState::default(), &ControlCommand::default(), 0.01);
        assert_eq!(s, OracleState::default());
    }

    #[test]
    fn default_oracle_is_valid_and_understeers() {
        let o = OracleVehicle::default();
        o.validate().unwrap();
        assert!(o.understeer_gradient() > 0.0);
    }

    #[test]
    fn script_interpolates_and_holds() {
        let o = OracleVehicle::default();
        let mut b = ScriptBuilder::new(&o, 0.0);
        b.ramp(
            1.0,
            ControlCommand {
                throttle: 0.4,
                brake: 0.0,
                steering: -0.2,
            },
        );
        let s = b.build("t", 3.0, 0.0, 0.0);
        s.validate().unwrap();
        let c = s.command_at(0.5);
        assert!((c.throttle - 0.2).abs() < 1e-12 && (c.steering + 0.1).abs() < 1e-12);
        assert_eq!(s.command_at(2.5).throttle, 0.4);
        assert_eq!(s.commands(0.01).len(), 301);
    }
}
