//! Residual correction: window labelling, joint encoder + GP training and
//! the corrected rollout.
//!
//! A residual is the gap between the logged pose `N` ticks after a window
//! start and the DM's open-loop prediction from the logged window-start pose,
//! expressed in the window-start ego frame. During rollout each correction
//! re-anchors on the corrected pose one window earlier.

use std::fs;
use std::path::Path;

use drf_autodiff::{checkpoint, rng, AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, DynamicModel, MlpDynamicModel, RuleBasedParams};
use crate::encoders::{window_features, Encoder, EncoderSpec, Window, DEFAULT_WINDOW, FEATURES};
use crate::error::{invalid, DrfError, Result};
use crate::stats::Standardizer;
use crate::svgp::{init_gp, GpConfig, ResidualPrediction, VariationalGp, TASKS};
use crate::vehicle::{rotate, ControlCommand, LogRecord, Pose, Trajectory, VehicleState};

pub const DEFAULT_OVERLAP: f64 = 0.85;
pub const DEFAULT_SANITY_BOUND: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSample {
    pub window: Window,
    /// Ego-frame `(dx, dy)` in metres.
    pub target: [f64; 2],
}

/// Window stride for a fractional overlap: `max(1, round((1 - overlap) N))`.
pub fn overlap_stride(window: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(invalid(format!("overlap must be in [0, 1), got {overlap}")));
    }
    Ok((((1.0 - overlap) * window as f64).round() as usize).max(1))
}

/// Number of windows a log of `rows` records yields.
pub fn window_count(rows: usize, window: usize, stride: usize) -> usize {
    if rows < window + 1 || stride == 0 {
        0
    } else {
        (rows - 1 - window) / stride + 1
    }
}

/// Labels every `stride`-th window of a fixed-step log. Windows whose target
/// exceeds `sanity_bound` on either axis are dropped; the count is returned.
pub fn label_residuals(
    log: &[LogRecord],
    dm: &DynamicModel,
    window: usize,
    stride: usize,
    dt: f64,
    sanity_bound: f64,
) -> Result<(Vec<ResidualSample>, usize)> {
    if stride == 0 || window == 0 {
        return Err(invalid("window and stride must be positive"));
    }
    let count = window_count(log.len(), window, stride);
    if count == 0 {
        log::warn!("log of {} rows is shorter than one window of {window} ticks", log.len());
        return Ok((Vec::new(), 0));
    }
    let commands: Vec<ControlCommand> = log.iter().map(|r| r.command).collect();
    let states: Vec<VehicleState> = log.iter().map(|r| r.state).collect();
    let mut out = Vec::with_capacity(count);
    let mut dropped = 0;
    for k in 0..count {
        let i = k * stride;
        let start = &log[i];
        let (poses, _) = propagate(dm, start.pose, start.state, &commands[i..i + window], dt)?;
        let end = poses[window];
        let gt = log[i + window].pose;
        let target = rotate([gt.x - end.x, gt.y - end.y], -start.state.heading);
        if !(target[0].abs() < sanity_bound && target[1].abs() < sanity_bound) {
            dropped += 1;
            continue;
        }
        out.push(ResidualSample {
            window: Window::from_ticks(&commands[i..i + window], &states[i..i + window], i, start.pose),
            target,
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} windows beyond the {sanity_bound} m sanity bound");
    }
    Ok((out, dropped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RcmConfig {
    pub window: usize,
    pub overlap: f64,
    pub sanity_bound: f64,
    pub encoder: EncoderSpec,
    pub gp: GpConfig,
    /// Feed corrected poses back into DM integration during rollout.
    pub feedback: bool,
    /// Ticks between corrections once the first window is complete.
    pub stride_eval: usize,
}

impl Default for RcmConfig {
    fn default() -> Self {
        RcmConfig {
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            sanity_bound: DEFAULT_SANITY_BOUND,
            encoder: EncoderSpec::cnn(),
            gp: GpConfig::default(),
            feedback: true,
            stride_eval: 1,
        }
    }
}

impl RcmConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gp.validate()?;
        overlap_stride(self.window, self.overlap)?;
        let min = self.encoder.min_window_length();
        if self.window < min {
            return Err(DrfError::WindowTooShort {
                encoder: self.encoder.name(),
                given: self.window,
                min,
            });
        }
        if self.stride_eval == 0 || !(self.sanity_bound > 0.0) {
            return Err(invalid("stride_eval and sanity_bound must be positive"));
        }
        Ok(())
    }
}

/// Encoder + GP + the DM whose residuals they model.
#[derive(Clone, Debug)]
pub struct DrfModel {
    pub dm: DynamicModel,
    pub encoder: Encoder,
    pub gp: VariationalGp,
    pub input_norm: Standardizer,
    pub target_norm: Standardizer,
    pub config: RcmConfig,
}

impl DrfModel {
    pub fn window(&self) -> usize {
        self.encoder.window()
    }

    /// Ego-frame residual predictions in metres for raw window features.
    pub fn predict_features(&self, windows: &[f64]) -> Result<Vec<ResidualPrediction>> {
        let mut x = windows.to_vec();
        self.input_norm.apply(&mut x);
        let z = self.encoder.encode(&x)?;
        let mut preds = self.gp.predict(&z)?;
        for p in &mut preds {
            for t in 0..TASKS {
                p.mean[t] = p.mean[t] * self.target_norm.std[t] + self.target_norm.mean[t];
                p.std[t] *= self.target_norm.std[t];
            }
        }
        Ok(preds)
    }

    pub fn predict_samples(&self, samples: &[ResidualSample]) -> Result<Vec<ResidualPrediction>> {
        let flat: Vec<f64> = samples.iter().flat_map(|s| s.window.data.iter().copied()).collect();
        self.predict_features(&flat)
    }

    /// A model whose residual head always predicts zero with unit spread.
    pub fn zeroed(mut self) -> Self {
        self.target_norm = Standardizer {
            mean: vec![0.0; TASKS],
            std: self.target_norm.std.clone(),
        };
        for t in 0..TASKS {
            self.gp.set_constant_mean(t, 0.0);
            let l = self.gp.inducing();
            let eye: Vec<f64> = (0..l * l).map(|k| if k % (l + 1) == 0 { 1.0 } else { 0.0 }).collect();
            self.gp.set_variational(t, &vec![0.0; l], &eye).expect("square identity");
        }
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RcmTrainReport {
    /// Mean per-sample negated ELBO of each epoch's minibatches.
    pub train_loss: Vec<f64>,
    /// Per-sample negated validation ELBO; entry 0 is the untrained model.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Mean absolute validation error of the best model, metres per axis.
    pub val_mae: [f64; 2],
    pub train_samples: usize,
    pub val_samples: usize,
    pub skipped_steps: u64,
}

impl RcmTrainReport {
    /// Relative improvement of the best validation loss over epoch 0.
    pub fn val_improvement(&self) -> f64 {
        match self.val_loss.first() {
            Some(&l0) if l0 != 0.0 => (l0 - self.val_loss[self.best_epoch]) / l0.abs(),
            _ => 0.0,
        }
    }
}

fn stack(samples: &[ResidualSample], idx: &[usize], norm: &Standardizer) -> Vec<f64> {
    let mut x: Vec<f64> = idx.iter().flat_map(|&i| samples[i].window.data.iter().copied()).collect();
    norm.apply(&mut x);
    x
}

fn targets(samples: &[ResidualSample], idx: &[usize], norm: &Standardizer) -> Vec<f64> {
    let mut y: Vec<f64> = idx.iter().flat_map(|&i| samples[i].target).collect();
    norm.apply(&mut y);
    y
}

/// Per-sample negated ELBO over a whole set with the model in eval mode.
fn eval_loss(enc: &Encoder, gp: &VariationalGp, samples: &[ResidualSample], inorm: &Standardizer, tnorm: &Standardizer, batch: usize) -> Result<f64> {
    let n = samples.len();
    let all: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let chunks = all.chunks(batch).count() as f64;
    for idx in all.chunks(batch) {
        let z = enc.encode(&stack(samples, idx, inorm))?;
        let mut g = Graph::new();
        let bind = gp.params().bind_frozen(&mut g);
        let x = g.constant(Tensor::new([idx.len(), enc.latent_dim()], z)?);
        let y = g.constant(Tensor::new([idx.len(), TASKS], targets(samples, idx, tnorm))?);
        let loss = gp.neg_elbo(&mut g, &bind, x, y, n)?;
        total += g.value(loss).item();
    }
    Ok(total / chunks / n as f64)
}

/// Joint Adam training of encoder and GP on the negated ELBO. Returns the
/// best-validation model; an empty `val` falls back to `train`.
pub fn train_rcm(dm: DynamicModel, train: &[ResidualSample], val: &[ResidualSample], cfg: &RcmConfig) -> Result<(DrfModel, RcmTrainReport)> {
    cfg.validate()?;
    let gcfg = &cfg.gp;
    let n = train.len();
    if n < gcfg.batch {
        return Err(invalid(format!("train-rcm needs at least {} samples, got {n}", gcfg.batch)));
    }
    if let Some(bad) = train.iter().chain(val).find(|s| s.window.len() != cfg.window) {
        return Err(invalid(format!("sample window of {} ticks, configured {}", bad.window.len(), cfg.window)));
    }
    let val = if val.is_empty() { train } else { val };
    let seed = gcfg.seed;
    let mut r = rng::stream(seed, rng::derive_seed(seed, "rcm"));

    let raw: Vec<f64> = train.iter().flat_map(|s| s.window.data.iter().copied()).collect();
    let inorm = Standardizer::fit(&raw, FEATURES)?;
    drop(raw);
    let traw: Vec<f64> = train.iter().flat_map(|s| s.target).collect();
    let tnorm = Standardizer::fit(&traw, TASKS)?;

    let mut enc = Encoder::new(cfg.encoder.clone(), cfg.window, rng::derive_seed(seed, "encoder"))?;
    let d = enc.latent_dim();
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut r);
    let seed_idx = &all[..n.min(2000)];
    let z0 = enc.encode(&stack(train, seed_idx, &inorm))?;
    let mut gp = init_gp(&z0, &targets(train, seed_idx, &tnorm), d, gcfg, &mut r)?;

    let adam_cfg = AdamConfig::with_lr(gcfg.lr);
    let mut adam_enc = AdamState::new(enc.params(), adam_cfg);
    let mut adam_gp = AdamState::new(gp.params(), adam_cfg);
    let mut report = RcmTrainReport {
        train_samples: n,
        val_samples: val.len(),
        ..Default::default()
    };
    report.val_loss.push(eval_loss(&enc, &gp, val, &inorm, &tnorm, gcfg.batch)?);
    let mut best = (enc.params().clone(), gp.params().clone());
    let mut step = 0u64;
    for epoch in 1..=gcfg.epochs {
        all.shuffle(&mut r);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in all.chunks(gcfg.batch) {
            let mut g = Graph::training(rng::derive_seed(seed, &format!("dropout{step}")));
            step += 1;
            let be = enc.params().bind(&mut g);
            let bg = gp.params().bind(&mut g);
            let x = g.constant(Tensor::new([idx.len(), cfg.window, FEATURES], stack(train, idx, &inorm))?);
            let y = g.constant(Tensor::new([idx.len(), TASKS], targets(train, idx, &tnorm))?);
            let z = enc.forward(&mut g, &be, x)?;
            let loss = gp.neg_elbo(&mut g, &bg, z, y, n)?;
            sum += g.value(loss).item() / n as f64;
            batches += 1;
            let grads = g.backward(loss)?;
            let ge = be.gradients(enc.params(), &grads);
            let mut gg = bg.gradients(gp.params(), &grads);
            gp.freeze_for(gcfg, &mut gg);
            // Both halves skip together so encoder and GP stay in step.
            if ge.iter().chain(&gg).all(Tensor::is_finite) {
                adam_enc.step(enc.params_mut(), &ge);
                adam_gp.step(gp.params_mut(), &gg);
            } else {
                report.skipped_steps += 1;
            }
        }
        report.train_loss.push(sum / batches as f64);
        let vl = eval_loss(&enc, &gp, val, &inorm, &tnorm, gcfg.batch)?;
        log::info!("rcm epoch {epoch}: train {:.4} val {vl:.4}", sum / batches as f64);
        report.val_loss.push(vl);
        if vl < report.val_loss[report.best_epoch] {
            report.best_epoch = epoch;
            best = (enc.params().clone(), gp.params().clone());
        }
    }
    checkpoint::restore_into(enc.params_mut(), &best.0)?;
    checkpoint::restore_into(gp.params_mut(), &best.1)?;
    let model = DrfModel {
        dm,
        encoder: enc,
        gp,
        input_norm: inorm,
        target_norm: tnorm,
        config: cfg.clone(),
    };
    let preds = model.predict_samples(val)?;
    for t in 0..TASKS {
        report.val_mae[t] = preds.iter().zip(val).map(|(p, s)| (p.mean[t] - s.target[t]).abs()).sum::<f64>() / val.len() as f64;
    }
    Ok((model, report))
}

/// One applied correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub tick: usize,
    pub prediction: ResidualPrediction,
    /// The prediction's mean rotated into the world frame.
    pub world: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub feedback: bool,
    pub stride_eval: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            feedback: true,
            stride_eval: 1,
        }
    }
}

/// Corrected rollout output.
#[derive(Clone, Debug, PartialEq)]
pub struct DrfRollout {
    pub trajectory: Trajectory,
    /// Per-tick world-frame standard deviations.
    pub sigmas: Vec<[f64; 2]>,
    pub corrections: Vec<Correction>,
}

/// Ticks at which corrections apply.
pub fn correction_ticks(len: usize, window: usize, stride_eval: usize) -> Vec<usize> {
    (window..len).step_by(stride_eval.max(1)).collect()
}

/// Applies residuals to a DM rollout. `residual(k, anchor)` returns the
/// ego-frame prediction for the window ending at tick `k`, given the
/// corrected pose at its start.
///
/// Positions are kept as the DM pose plus a world-frame offset: with feedback
/// the offset at `k` is the offset at `k - N` plus the rotated residual, and
/// ticks between corrections inherit the latest offset; without feedback
/// the offset is the rotated residual alone. Heading and speed stay the DM's.
pub fn apply_corrections(
    dm: &Trajectory,
    window: usize,
    opts: RolloutOptions,
    mut residual: impl FnMut(usize, &Pose) -> Result<ResidualPrediction>,
) -> Result<DrfRollout> {
    let n = dm.len();
    if n <= window {
        return Err(invalid(format!("rollout of {} poses needs more than {window}", n)));
    }
    let poses = dm.poses();
    let mut offset = vec![[0.0f64; 2]; n];
    let mut var = vec![[0.0f64; 2]; n];
    let mut out: Vec<Pose> = poses.to_vec();
    let mut corrections = Vec::new();
    let mut last = None;
    let ticks = correction_ticks(n, window, opts.stride_eval);
    let mut next = ticks.iter().peekable();
    for k in window..n {
        if next.peek() == Some(&&k) {
            next.next();
            let a = k - window;
            let p = residual(k, &out[a])?;
            let heading = poses[a].heading;
            let w = rotate(p.mean, heading);
            let (c, s) = (heading.cos(), heading.sin());
            let wv = [
                c * c * p.std[0].powi(2) + s * s * p.std[1].powi(2),
                s * s * p.std[0].powi(2) + c * c * p.std[1].powi(2),
            ];
            if opts.feedback {
                offset[k] = [offset[a][0] + w[0], offset[a][1] + w[1]];
                var[k] = [var[a][0] + wv[0], var[a][1] + wv[1]];
            } else {
                offset[k] = w;
                var[k] = wv;
            }
            corrections.push(Correction {
                tick: k,
                prediction: p,
                world: w,
            });
            last = Some(k);
        } else if let Some(l) = last {
            if opts.feedback {
                offset[k] = offset[l];
                var[k] = var[l];
            } else {
                offset[k] = [0.0, 0.0];
                var[k] = var[l];
            }
        }
        out[k] = Pose {
            x: poses[k].x + offset[k][0],
            y: poses[k].y + offset[k][1],
            heading: poses[k].heading,
        };
    }
    // Warm-up ticks carry the first correction's spread.
    let first = corrections.first().map(|c| var[c.tick]).unwrap_or([0.0, 0.0]);
    let sigmas = (0..n)
        .map(|k| {
            let v = if k < window { first } else { var[k] };
            [v[0].sqrt(), v[1].sqrt()]
        })
        .collect();
    let trajectory = Trajectory::new(dm.timestamps().to_vec(), out, dm.states().map(<[VehicleState]>::to_vec))?;
    Ok(DrfRollout {
        trajectory,
        sigmas,
        corrections,
    })
}

/// DM rollout from `start` under `commands` with learned corrections.
/// Window features come from the DM-propagated states.
pub fn drf_rollout(
    model: &DrfModel,
    start_pose: Pose,
    start_state: VehicleState,
    commands: &[ControlCommand],
    t0: f64,
    dt: f64,
    opts: RolloutOptions,
) -> Result<DrfRollout> {
    let w = model.window();
    if commands.len() < w {
        return Err(invalid(format!("rollout needs at least {w} commands, got {}", commands.len())));
    }
    let (poses, states) = propagate(&model.dm, start_pose, start_state, commands, dt)?;
    let dm = Trajectory::uniform(t0, dt, poses, Some(states.clone()))?;
    let ticks = correction_ticks(dm.len(), w, opts.stride_eval);
    let feats: Vec<f64> = ticks
        .iter()
        .flat_map(|&k| window_features(&commands[k - w..k], &states[k - w..k]))
        .collect();
    let preds = model.predict_features(&feats)?;
    let mut it = preds.into_iter();
    apply_corrections(&dm, w, opts, |_, _| it.next().ok_or_else(|| invalid("prediction count mismatch")))
}

/// Replays a log's commands from its first row through the DRF.
pub fn drf_rollout_log(model: &DrfModel, log: &[LogRecord], dt: f64, opts: RolloutOptions) -> Result<DrfRollout> {
    let first = log.first().ok_or_else(|| DrfError::EmptyDataset("log".into()))?;
    let commands: Vec<ControlCommand> = log[..log.len() - 1].iter().map(|r| r.command).collect();
    drf_rollout(model, first.pose, first.state, &commands, first.t, dt, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DmEntry {
    RuleBased { params: RuleBasedParams },
    Learned { checkpoint: String },
}

/// Writes `dm.json` (and `dm_lb.ckpt` for a learned model) into `dir`.
pub fn save_dm(dm: &DynamicModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let entry = match dm {
        DynamicModel::RuleBased(p) => DmEntry::RuleBased { params: *p },
        DynamicModel::Learned(m) => {
            m.save(dir.join("dm_lb.ckpt"))?;
            DmEntry::Learned {
                checkpoint: "dm_lb.ckpt".into(),
            }
        }
    };
    fs::write(dir.join("dm.json"), serde_json::to_string_pretty(&entry)?)?;
    Ok(())
}

/// Reads the model written by [`save_dm`].
pub fn load_dm(dir: impl AsRef<Path>) -> Result<DynamicModel> {
    let dir = dir.as_ref();
    let entry: DmEntry = serde_json::from_str(&fs::read_to_string(dir.join("dm.json"))?)?;
    Ok(match entry {
        DmEntry::RuleBased { params } => {
            params.validate()?;
            DynamicModel::RuleBased(params)
        }
        DmEntry::Learned { checkpoint } => DynamicModel::Learned(MlpDynamicModel::load(dir.join(checkpoint))?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BundleConfig {
    rcm: RcmConfig,
    encoder_checkpoint: String,
    gp_checkpoint: String,
    normalization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Normalization {
    input: Standardizer,
    target: Standardizer,
}

impl DrfModel {
    /// Writes `config.json`, `encoder.ckpt`, `gp.ckpt`, `normalization.json`
    /// and the DM files of [`save_dm`] into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_dm(&self.dm, dir)?;
        checkpoint::save(self.encoder.params(), dir.join("encoder.ckpt"))?;
        checkpoint::save(self.gp.params(), dir.join("gp.ckpt"))?;
        let norm = Normalization {
            input: self.input_norm.clone(),
            target: self.target_norm.clone(),
        };
        fs::write(dir.join("normalization.json"), serde_json::to_string_pretty(&norm)?)?;
        let cfg = BundleConfig {
            rcm: self.config.clone(),
            encoder_checkpoint: "encoder.ckpt".into(),
            gp_checkpoint: "gp.ckpt".into(),
            normalization: "normalization.json".into(),
        };
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg: BundleConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        cfg.rcm.validate()?;
        let dm = load_dm(dir)?;
        let encoder = Encoder::from_params(cfg.rcm.encoder.clone(), cfg.rcm.window, checkpoint::load(dir.join(&cfg.encoder_checkpoint))?)?;
        let gp = VariationalGp::from_params(checkpoint::load(dir.join(&cfg.gp_checkpoint))?, cfg.rcm.gp.jitter)?;
        if gp.dim() != encoder.latent_dim() {
            return Err(invalid(format!(
                "bundle gp input dimension {} differs from encoder latent {}",
                gp.dim(),
                encoder.latent_dim()
            )));
        }
        let norm: Normalization = serde_json::from_str(&fs::read_to_string(dir.join(&cfg.normalization))?)?;
        norm.input.validate()?;
        norm.target.validate()?;
        if norm.input.dim() != FEATURES || norm.target.dim() != TASKS {
            return Err(invalid("bundle normalization widths do not match the model"));
        }
        Ok(DrfModel {
            dm,
            encoder,
            gp,
            input_norm: norm.input,
            target_norm: norm.target,
            config: cfg.rcm,
        })
    }
}
