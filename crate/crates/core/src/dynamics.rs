//! Open-loop dynamic models: a rule-based kinematic bicycle (DM-RB) and a
//! 5-8-2 MLP (DM-LB). Both map one tick of command and state to
//! `(acceleration, heading_rate)`; [`propagate`] integrates them.

use std::path::Path;

use drf_autodiff::params::glorot_uniform;
use drf_autodiff::rng::stream;
use drf_autodiff::{checkpoint, AdamConfig, AdamState, Graph, ParamId, ParamSet, Tensor};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DrfError, Result};
use crate::stats::Standardizer;
use crate::vehicle::{integrate_step, wrap_angle, ControlCommand, LogRecord, Pose, Trajectory, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleBasedParams {
    /// m
    pub wheelbase: f64,
    /// rad at full steering command
    pub max_front_wheel_angle: f64,
    /// (m/s^2) per unit pedal beyond the deadzone
    pub throttle_gain: f64,
    pub brake_gain: f64,
    pub throttle_deadzone: f64,
    pub brake_deadzone: f64,
    /// 1/m
    pub drag_coeff: f64,
}

impl Default for RuleBasedParams {
    /// Nominal calibration of the bundled oracle vehicle: its geometry and
    /// actuator map, ignoring tire slip and actuator lags.
    fn default() -> Self {
        crate::scenarios::OracleVehicle::default().nominal_rule_based()
    }
}

impl RuleBasedParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.wheelbase,
            self.max_front_wheel_angle,
            self.throttle_gain,
            self.brake_gain,
            self.throttle_deadzone,
            self.brake_deadzone,
            self.drag_coeff,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(DrfError::NonFinite("rule-based params"));
        }
        if !(self.wheelbase > 0.0) {
            return Err(invalid("wheelbase must be positive"));
        }
        if self.throttle_gain < 0.0 || self.brake_gain < 0.0 || self.drag_coeff < 0.0 {
            return Err(invalid("gains and drag must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.throttle_deadzone) || !(0.0..1.0).contains(&self.brake_deadzone) {
            return Err(invalid("deadzones must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub fn dm_rb_tick(cmd: &ControlCommand, state: &VehicleState, p: &RuleBasedParams) -> (f64, f64) {
    let v = state.speed;
    let accel = p.throttle_gain * (cmd.throttle - p.throttle_deadzone).max(0.0)
        - p.brake_gain * (cmd.brake - p.brake_deadzone).max(0.0)
        - p.drag_coeff * v * v * v.signum();
    let heading_rate = v * (cmd.steering * p.max_front_wheel_angle).tan() / p.wheelbase;
    (accel, heading_rate)
}

pub const DM_LB_INPUTS: usize = 5;
pub const DM_LB_HIDDEN: usize = 8;
pub const DM_LB_OUTPUTS: usize = 2;
/// Normalised inputs are clipped to this many standard deviations, keeping
/// open-loop rollouts inside the region the network was fitted on.
pub const DM_LB_INPUT_CLAMP: f64 = 4.0;

/// The learned dynamic model: `5 -> 8 (ReLU) -> 2` on z-scored
/// `(throttle, brake, steering, speed, acceleration)`, predicting z-scored
/// `(acceleration, heading_rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDynamicModel {
    params: ParamSet,
    ids: MlpIds,
    pub input_norm: Option<Standardizer>,
    pub output_norm: Option<Standardizer>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl MlpDynamicModel {
    /// Glorot-initialised weights, zero biases, no normalisation yet.
    pub fn init(seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let mut params = ParamSet::new();
        let w1 = params.add("w1", glorot_uniform(&[DM_LB_INPUTS, DM_LB_HIDDEN], DM_LB_INPUTS, DM_LB_HIDDEN, &mut rng));
        let b1 = params.add("b1", Tensor::zeros(vec![DM_LB_HIDDEN]));
        let w2 = params.add("w2", glorot_uniform(&[DM_LB_HIDDEN, DM_LB_OUTPUTS], DM_LB_HIDDEN, DM_LB_OUTPUTS, &mut rng));
        let b2 = params.add("b2", Tensor::zeros(vec![DM_LB_OUTPUTS]));
        MlpDynamicModel {
            params,
            ids: MlpIds { w1, b1, w2, b2 },
            input_norm: None,
            output_norm: None,
        }
    }

    /// Builds a model from explicit weights (`w1` is 5x8 row-major, `w2` 8x2).
    pub fn from_weights(
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        input_norm: Standardizer,
        output_norm: Standardizer,
    ) -> Result<Self> {
        let mut m = MlpDynamicModel::init(0);
        m.params.set(m.ids.w1, Tensor::new(vec![DM_LB_INPUTS, DM_LB_HIDDEN], w1)?);
        m.params.set(m.ids.b1, Tensor::new(vec![DM_LB_HIDDEN], b1)?);
        m.params.set(m.ids.w2, Tensor::new(vec![DM_LB_HIDDEN, DM_LB_OUTPUTS], w2)?);
        m.params.set(m.ids.b2, Tensor::new(vec![DM_LB_OUTPUTS], b2)?);
        m.set_normalization(input_norm, output_norm)?;
        Ok(m)
    }

    pub fn set_normalization(&mut self, input: Standardizer, output: Standardizer) -> Result<()> {
        input.validate()?;
        output.validate()?;
        if input.dim() != DM_LB_INPUTS || output.dim() != DM_LB_OUTPUTS {
            return Err(invalid("DM-LB normalisation must have widths 5 and 2"));
        }
        self.input_norm = Some(input);
        self.output_norm = Some(output);
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn norms(&self) -> Result<(&Standardizer, &Standardizer)> {
        match (&self.input_norm, &self.output_norm) {
            (Some(i), Some(o)) => Ok((i, o)),
            _ => Err(DrfError::Unnormalized("DM-LB has no input/output normalisation".into())),
        }
    }

    /// Forward pass on a raw input row, returning de-normalised outputs.
    pub fn forward(&self, input: &[f64; DM_LB_INPUTS]) -> Result<[f64; DM_LB_OUTPUTS]> {
        let (inorm, onorm) = self.norms()?;
        let mut x = *input;
        inorm.apply(&mut x);
        for v in &mut x {
            *v = v.clamp(-DM_LB_INPUT_CLAMP, DM_LB_INPUT_CLAMP);
        }
        let (w1, b1) = (self.params.get(self.ids.w1).data(), self.params.get(self.ids.b1).data());
        let (w2, b2) = (self.params.get(self.ids.w2).data(), self.params.get(self.ids.b2).data());
        let mut h = [0.0; DM_LB_HIDDEN];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut s = b1[j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w1[i * DM_LB_HIDDEN + j];
            }
            *hj = s.max(0.0);
        }
        let mut y = [0.0; DM_LB_OUTPUTS];
        for (o, yo) in y.iter_mut().enumerate() {
            let mut s = b2[o];
            for (j, hj) in h.iter().enumerate() {
                s += hj * w2[j * DM_LB_OUTPUTS + o];
            }
            *yo = s;
        }
        onorm.invert(&mut y);
        Ok(y)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (inorm, onorm) = self.norms()?;
        let mut set = self.params.clone();
        set.add("norm.in_mean", Tensor::vector(inorm.mean.clone()));
        set.add("norm.in_std", Tensor::vector(inorm.std.clone()));
        set.add("norm.out_mean", Tensor::vector(onorm.mean.clone()));
        set.add("norm.out_std", Tensor::vector(onorm.std.clone()));
        checkpoint::save(&set, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set = checkpoint::load(path)?;
        let mut m = MlpDynamicModel::init(0);
        checkpoint::restore_into(&mut m.params, &set)?;
        let get = |name: &str| -> Result<Vec<f64>> {
            let id = set
                .find(name)
                .ok_or_else(|| DrfError::Unnormalized(format!("checkpoint lacks {name}")))?;
            Ok(set.get(id).data().to_vec())
        };
        m.set_normalization(
            Standardizer {
                mean: get("norm.in_mean")?,
                std: get("norm.in_std")?,
            },
            Standardizer {
                mean: get("norm.out_mean")?,
                std: get("norm.out_std")?,
            },
        )?;
        Ok(m)
    }
}

pub fn dm_lb_tick(cmd: &ControlCommand, state: &VehicleState, model: &MlpDynamicModel) -> Result<(f64, f64)> {
    let y = model.forward(&lb_input(cmd, state))?;
    Ok((y[0], y[1]))
}

fn lb_input(cmd: &ControlCommand, state: &VehicleState) -> [f64; DM_LB_INPUTS] {
    [cmd.throttle, cmd.brake, cmd.steering, state.speed, state.acceleration]
}

/// Either dynamic model.
#[derive(Clone, Debug, PartialEq)]
pub enum DynamicModel {
    RuleBased(RuleBasedParams),
    Learned(MlpDynamicModel),
}

impl DynamicModel {
    pub fn name(&self) -> &'static str {
        match self {
            DynamicModel::RuleBased(_) => "dm-rb",
            DynamicModel::Learned(_) => "dm-lb",
        }
    }

    pub fn tick(&self, cmd: &ControlCommand, state: &VehicleState) -> Result<(f64, f64)> {
        match self {
            DynamicModel::RuleBased(p) => Ok(dm_rb_tick(cmd, state, p)),
            DynamicModel::Learned(m) => dm_lb_tick(cmd, state, m),
        }
    }
}

/// Open-loop propagation: `commands.len() + 1` poses and self-consistent
/// states, the first being the given start.
pub fn propagate(
    model: &DynamicModel,
    start_pose: Pose,
    start_state: VehicleState,
    commands: &[ControlCommand],
    dt: f64,
) -> Result<(Vec<Pose>, Vec<VehicleState>)> {
    let mut poses = Vec::with_capacity(commands.len() + 1);
    let mut states = Vec::with_capacity(commands.len() + 1);
    let mut pose = Pose {
        heading: wrap_angle(start_pose.heading),
        ..start_pose
    };
    let mut state = VehicleState {
        heading: pose.heading,
        ..start_state
    };
    poses.push(pose);
    states.push(state);
    for cmd in commands {
        let (accel, rate) = model.tick(cmd, &state)?;
        let (next, speed) = integrate_step(pose, state.speed, accel, rate, dt)?;
        pose = next;
        state = VehicleState {
            speed,
            acceleration: accel,
            heading: pose.heading,
        };
        poses.push(pose);
        states.push(state);
    }
    Ok((poses, states))
}

/// [`propagate`] wrapped as a trajectory starting at `t0`.
pub fn rollout_dm(
    model: &DynamicModel,
    start_pose: Pose,
    start_state: VehicleState,
    commands: &[ControlCommand],
    t0: f64,
    dt: f64,
) -> Result<Trajectory> {
    let (poses, states) = propagate(model, start_pose, start_state, commands, dt)?;
    Trajectory::uniform(t0, dt, poses, Some(states))
}

/// Replays a log's commands from its first row.
pub fn rollout_log(model: &DynamicModel, log: &[LogRecord], dt: f64) -> Result<Trajectory> {
    let first = log.first().ok_or_else(|| DrfError::EmptyDataset("log".into()))?;
    let commands: Vec<ControlCommand> = log[..log.len() - 1].iter().map(|r| r.command).collect();
    rollout_dm(model, first.pose, first.state, &commands, first.t, dt)
}

/// One DM-LB training pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickSample {
    pub command: ControlCommand,
    pub state: VehicleState,
    /// `(acceleration, heading_rate)` observed over the next tick.
    pub target: [f64; 2],
}

/// Finite-difference labels `(v[k+1]-v[k])/dt` and `wrap(theta[k+1]-theta[k])/dt`.
pub fn tick_samples(log: &[LogRecord], dt: f64) -> Vec<TickSample> {
    log.windows(2)
        .map(|w| TickSample {
            command: w[0].command,
            state: w[0].state,
            target: [
                (w[1].state.speed - w[0].state.speed) / dt,
                wrap_angle(w[1].state.heading - w[0].state.heading) / dt,
            ],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmTrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    /// Std of Gaussian noise added to the z-scored acceleration input of
    /// each training minibatch.
    pub accel_input_noise: f64,
}

pub const DEFAULT_ACCEL_INPUT_NOISE: f64 = 1.0;

impl Default for DmTrainConfig {
    fn default() -> Self {
        DmTrainConfig {
            max_epochs: 200,
            batch_size: 256,
            learning_rate: 1e-2,
            patience: 10,
            seed: 0,
            accel_input_noise: DEFAULT_ACCEL_INPUT_NOISE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmTrainReport {
    /// Normalised-output MSE per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Validation loss of the untrained network.
    pub baseline_val_loss: f64,
    pub best_epoch: usize,
    pub skipped_steps: u64,
}

fn to_arrays(samples: &[TickSample]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(samples.len() * DM_LB_INPUTS);
    let mut y = Vec::with_capacity(samples.len() * DM_LB_OUTPUTS);
    for s in samples {
        x.extend_from_slice(&lb_input(&s.command, &s.state));
        y.extend_from_slice(&s.target);
    }
    (x, y)
}

fn batch_loss(g: &mut Graph, model: &MlpDynamicModel, vars: &drf_autodiff::Binding, x: &[f64], y: &[f64]) -> Result<drf_autodiff::Var> {
    let n = x.len() / DM_LB_INPUTS;
    let xv = g.constant(Tensor::new(vec![n, DM_LB_INPUTS], x.to_vec())?);
    let yv = g.constant(Tensor::new(vec![n, DM_LB_OUTPUTS], y.to_vec())?);
    let h = g.matmul(xv, vars.var(model.ids.w1))?;
    let h = g.add(h, vars.var(model.ids.b1))?;
    let h = g.relu(h);
    let o = g.matmul(h, vars.var(model.ids.w2))?;
    let o = g.add(o, vars.var(model.ids.b2))?;
    let d = g.sub(o, yv)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

fn eval_loss(model: &MlpDynamicModel, x: &[f64], y: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.params.bind_frozen(&mut g);
    let l = batch_loss(&mut g, model, &vars, x, y)?;
    Ok(g.value(l).item())
}

/// MSE training with Adam and early stopping on validation loss; returns
/// the best-validation weights. An empty `val` falls back to `train`.
pub fn train_dm_lb(train: &[TickSample], val: &[TickSample], cfg: &DmTrainConfig) -> Result<(MlpDynamicModel, DmTrainReport)> {
    if train.is_empty() {
        return Err(DrfError::EmptyDataset("DM-LB training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    let val = if val.is_empty() { train } else { val };
    let (mut tx, mut ty) = to_arrays(train);
    let (mut vx, mut vy) = to_arrays(val);
    let inorm = Standardizer::fit(&tx, DM_LB_INPUTS)?;
    let onorm = Standardizer::fit(&ty, DM_LB_OUTPUTS)?;
    inorm.apply(&mut tx);
    inorm.apply(&mut vx);
    onorm.apply(&mut ty);
    onorm.apply(&mut vy);

    let mut model = MlpDynamicModel::init(cfg.seed);
    model.set_normalization(inorm, onorm)?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let baseline = eval_loss(&model, &vx, &vy)?;
    let mut report = DmTrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        baseline_val_loss: baseline,
        best_epoch: 0,
        skipped_steps: 0,
    };
    let mut best = (f64::INFINITY, model.params.clone());
    let mut since_best = 0;
    let (mut bx, mut by) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&tx[i * DM_LB_INPUTS..(i + 1) * DM_LB_INPUTS]);
                by.extend_from_slice(&ty[i * DM_LB_OUTPUTS..(i + 1) * DM_LB_OUTPUTS]);
            }
            if cfg.accel_input_noise > 0.0 {
                for row in bx.chunks_exact_mut(DM_LB_INPUTS) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[DM_LB_INPUTS - 1] += cfg.accel_input_noise * z;
                }
            }
            let mut g = Graph::new();
            let vars = model.params.bind(&mut g);
            let loss = batch_loss(&mut g, &model, &vars, &bx, &by)?;
            total += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let grads = vars.gradients(&model.params, &grads);
            adam.step(&mut model.params, &grads);
        }
        let vl = eval_loss(&model, &vx, &vy)?;
        report.train_loss.push(total / train.len() as f64);
        report.val_loss.push(vl);
        debug!("dm-lb epoch {epoch}: train {:.3e} val {vl:.3e}", total / train.len() as f64);
        if vl < best.0 {
            best = (vl, model.params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.1;
    report.skipped_steps = adam.skipped();
    info!(
        "dm-lb trained: best epoch {} val {:.3e} (untrained {:.3e})",
        report.best_epoch, best.0, baseline
    );
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rb_zero_command_at_rest() {
        let p = RuleBasedParams::default();
        assert_eq!(dm_rb_tick(&ControlCommand::default(), &VehicleState::default(), &p), (0.0, 0.0));
    }

    #[test]
    fn rb_closed_form_heading_rate() {
        let p = RuleBasedParams {
            wheelbase: 2.85,
            max_front_wheel_angle: 0.47,
            ..RuleBasedParams::default()
        };
        let s = VehicleState {
            speed: 5.0,
            ..Default::default()
        };
        let (_, w) = dm_rb_tick(&ControlCommand::new(0.0, 0.0, 0.5).unwrap(), &s, &p);
        assert_eq!(w, 5.0 * (0.5f64 * 0.47).tan() / 2.85);
        let (_, w0) = dm_rb_tick(&ControlCommand::new(0.7, 0.0, 0.0).unwrap(), &s, &p);
        assert_eq!(w0, 0.0);
    }

    #[test]
    fn unnormalised_model_is_rejected() {
        let m = MlpDynamicModel::init(3);
        assert!(matches!(
            dm_lb_tick(&ControlCommand::default(), &VehicleState::default(), &m),
            Err(DrfError::Unnormalized(_))
        ));
    }

    #[test]
    fn rb_params_validation() {
        let mut p = RuleBasedParams::default();
        assert!(p.validate().is_ok());
        p.wheelbase = 0.0;
        assert!(p.validate().is_err());
        p = RuleBasedParams {
            brake_deadzone: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
