//! Sparse variational GP head with a Matern-5/2 ARD kernel.
//!
//! Two output tasks share the inducing inputs `Z` and the kernel but keep
//! their own whitened variational factors, constant means and noise levels.
//! With `K_ZZ = L_Z L_Z^T`, the inducing values are `u = L_Z v` and
//! `q(v) = N(m, S S^T)`.

use drf_autodiff::{rng, AdamConfig, AdamState, Binding, Graph, ParamId, ParamSet, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DrfError, Result};

pub const TASKS: usize = 2;
pub const MAX_JITTER: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub inducing: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub jitter: f64,
    pub init_noise: f64,
    pub seed: u64,
    /// When false the inducing inputs stay at their k-means++ seeds.
    pub learn_inducing: bool,
    /// When false the noise variances stay at `init_noise` (known-noise fits).
    pub learn_noise: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            inducing: 128,
            batch: 256,
            lr: 1e-2,
            epochs: 50,
            jitter: 1e-6,
            init_noise: 0.01,
            seed: 0,
            learn_inducing: true,
            learn_noise: true,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inducing == 0 || self.batch == 0 {
            return Err(invalid("inducing count and batch size must be positive"));
        }
        if self.inducing >= self.batch {
            return Err(DrfError::InducingNotBelowBatch {
                inducing: self.inducing,
                batch: self.batch,
            });
        }
        if !(self.lr > 0.0) || !(self.jitter > 0.0) || !(self.init_noise > 0.0) {
            return Err(invalid("learning rate, jitter and initial noise must be positive"));
        }
        Ok(())
    }
}

/// Matern-5/2 covariance with per-dimension lengthscales.
pub fn kernel_eval(a: &[f64], b: &[f64], lengthscales: &[f64], outputscale: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    outputscale * drf_autodiff::matern52_from_sq(r2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPrediction {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    z: ParamId,
    log_ls: ParamId,
    log_os: ParamId,
    m: [ParamId; TASKS],
    s_raw: [ParamId; TASKS],
    c: [ParamId; TASKS],
    log_noise: [ParamId; TASKS],
}

impl Ids {
    fn locate(p: &ParamSet) -> Result<Ids> {
        let f = |n: &str| p.find(n).ok_or_else(|| invalid(format!("gp checkpoint lacks {n:?}")));
        Ok(Ids {
            z: f("z")?,
            log_ls: f("log_lengthscale")?,
            log_os: f("log_outputscale")?,
            m: [f("m0")?, f("m1")?],
            s_raw: [f("s0")?, f("s1")?],
            c: [f("c0")?, f("c1")?],
            log_noise: [f("log_noise0")?, f("log_noise1")?],
        })
    }
}

/// Per-task latent-function moments on a batch, each `[B]`.
pub struct Moments {
    pub mean: [Var; TASKS],
    pub var: [Var; TASKS],
}

#[derive(Clone, Debug)]
pub struct VariationalGp {
    params: ParamSet,
    ids: Ids,
    jitter: f64,
}

impl VariationalGp {
    /// Fresh GP on inducing inputs `z` (`l x d`, row-major) with `q(v)` equal
    /// to the whitened prior.
    pub fn new(z: &[f64], dim: usize, lengthscale: f64, outputscale: f64, noise: f64, means: [f64; TASKS], jitter: f64) -> Result<Self> {
        if dim == 0 || z.is_empty() || z.len() % dim != 0 {
            return Err(invalid("inducing inputs must be a non-empty l x d matrix"));
        }
        if !(lengthscale > 0.0 && outputscale > 0.0 && noise > 0.0 && jitter > 0.0) {
            return Err(invalid("gp hyperparameters must be positive"));
        }
        let l = z.len() / dim;
        let mut p = ParamSet::new();
        p.add("z", Tensor::new([l, dim], z.to_vec())?);
        p.add("log_lengthscale", Tensor::full([dim], lengthscale.ln()));
        p.add("log_outputscale", Tensor::scalar(outputscale.ln()).reshape([1])?);
        for t in 0..TASKS {
            p.add(format!("m{t}"), Tensor::zeros([l, 1]));
            p.add(format!("s{t}"), Tensor::zeros([l, l]));
            p.add(format!("c{t}"), Tensor::full([1], means[t]));
            p.add(format!("log_noise{t}"), Tensor::full([1], noise.ln()));
        }
        let ids = Ids::locate(&p)?;
        Ok(VariationalGp { params: p, ids, jitter })
    }

    pub fn from_params(params: ParamSet, jitter: f64) -> Result<Self> {
        let ids = Ids::locate(&params)?;
        let gp = VariationalGp { params, ids, jitter };
        let (l, d) = (gp.inducing(), gp.dim());
        let ok = gp.params.get(ids.log_ls).shape() == [d]
            && (0..TASKS).all(|t| gp.params.get(ids.m[t]).shape() == [l, 1] && gp.params.get(ids.s_raw[t]).shape() == [l, l]);
        if !ok {
            return Err(invalid("gp checkpoint shapes are inconsistent"));
        }
        Ok(gp)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn set_jitter(&mut self, jitter: f64) {
        self.jitter = jitter;
    }

    pub fn inducing(&self) -> usize {
        self.params.get(self.ids.z).shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.ids.z).shape()[1]
    }

    pub fn inducing_points(&self) -> &[f64] {
        self.params.get(self.ids.z).data()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.params.get(self.ids.log_ls).data().iter().map(|v| v.exp()).collect()
    }

    pub fn outputscale(&self) -> f64 {
        self.params.get(self.ids.log_os).data()[0].exp()
    }

    pub fn noise(&self) -> [f64; TASKS] {
        [0, 1].map(|t| self.params.get(self.ids.log_noise[t]).data()[0].exp())
    }

    pub fn constant_means(&self) -> [f64; TASKS] {
        [0, 1].map(|t| self.params.get(self.ids.c[t]).data()[0])
    }

    pub fn variational_mean(&self, task: usize) -> &[f64] {
        self.params.get(self.ids.m[task]).data()
    }

    /// Sets `q(v)` for one task from a mean and a lower-triangular factor with
    /// positive diagonal.
    pub fn set_variational(&mut self, task: usize, mean: &[f64], chol: &[f64]) -> Result<()> {
        let l = self.inducing();
        if task >= TASKS || mean.len() != l || chol.len() != l * l {
            return Err(invalid("variational parameters do not match the inducing count"));
        }
        let mut raw = vec![0.0; l * l];
        for i in 0..l {
            if !(chol[i * l + i] > 0.0) {
                return Err(invalid("variational factor needs a positive diagonal"));
            }
            for j in 0..i {
                raw[i * l + j] = chol[i * l + j];
            }
            raw[i * l + i] = chol[i * l + i].ln();
        }
        self.params.set(self.ids.m[task], Tensor::new([l, 1], mean.to_vec())?);
        self.params.set(self.ids.s_raw[task], Tensor::new([l, l], raw)?);
        Ok(())
    }

    pub fn set_constant_mean(&mut self, task: usize, c: f64) {
        self.params.set(self.ids.c[task], Tensor::full([1], c));
    }

    pub fn set_noise(&mut self, task: usize, noise: f64) {
        self.params.set(self.ids.log_noise[task], Tensor::full([1], noise.ln()));
    }

    fn freeze(&self, grads: &mut [Tensor], ids: &[ParamId]) {
        for id in ids {
            let g = &mut grads[id.index()];
            *g = Tensor::zeros(g.shape().to_vec());
        }
    }

    /// Zeroes the gradients of parameters `cfg` holds fixed.
    pub fn freeze_for(&self, cfg: &GpConfig, grads: &mut [Tensor]) {
        if !cfg.learn_inducing {
            self.freeze(grads, &[self.ids.z]);
        }
        if !cfg.learn_noise {
            self.freeze(grads, &self.ids.log_noise);
        }
    }

    fn scaled(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Var> {
        let ls = g.exp(bind.var(self.ids.log_ls));
        Ok(g.div(x, ls)?)
    }

    fn cross_cov(&self, g: &mut Graph, bind: &Binding, a: Var, b: Var) -> Result<Var> {
        let d2 = g.pairwise_sqdist(a, b)?;
        let k = g.matern52(d2);
        let os = g.exp(bind.var(self.ids.log_os));
        Ok(g.mul(k, os)?)
    }

    /// Cholesky factor of `K_ZZ + jitter I`, escalating the jitter by 10x
    /// up to [`MAX_JITTER`].
    fn kzz_factor(&self, g: &mut Graph, bind: &Binding, zs: Var) -> Result<Var> {
        let l = self.inducing();
        let kzz = self.cross_cov(g, bind, zs, zs)?;
        let mut jitter = self.jitter;
        loop {
            let j = g.constant(Tensor::eye(l).map(|v| v * jitter));
            let a = g.add(kzz, j)?;
            match g.cholesky(a) {
                Ok(lz) => return Ok(lz),
                Err(drf_autodiff::AutodiffError::NotPositiveDefinite { .. }) if jitter * 10.0 <= MAX_JITTER * (1.0 + 1e-9) => {
                    jitter *= 10.0;
                }
                Err(drf_autodiff::AutodiffError::NotPositiveDefinite { .. }) => {
                    return Err(DrfError::Cholesky { jitter });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Moments of `q(f)` at the latents `x` (`[B, d]`).
    pub fn moments(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Moments> {
        let b = g.shape(x)[0];
        let z = bind.var(self.ids.z);
        let zs = self.scaled(g, bind, z)?;
        let xs = self.scaled(g, bind, x)?;
        let lz = self.kzz_factor(g, bind, zs)?;
        let kxz = self.cross_cov(g, bind, xs, zs)?;
        let kzx = g.transpose(kxz)?;
        let a = g.solve_lower(lz, kzx)?;
        let at = g.transpose(a)?;
        let a2 = g.square(a);
        let explained = g.sum_axis(a2, 0)?;
        let os = g.exp(bind.var(self.ids.log_os));
        let prior = g.sub(os, explained)?;
        let mut mean = [x; TASKS];
        let mut var = [x; TASKS];
        for t in 0..TASKS {
            let mu = g.matmul(at, bind.var(self.ids.m[t]))?;
            let mu = g.reshape(mu, &[b])?;
            mean[t] = g.add(mu, bind.var(self.ids.c[t]))?;
            let s = g.lower_exp_diag(bind.var(self.ids.s_raw[t]))?;
            let st = g.transpose(s)?;
            let sa = g.matmul(st, a)?;
            let sa2 = g.square(sa);
            let extra = g.sum_axis(sa2, 0)?;
            var[t] = g.add(prior, extra)?;
        }
        Ok(Moments { mean, var })
    }

    /// `KL(q(v) || N(0, I))` for one task.
    pub fn kl(&self, g: &mut Graph, bind: &Binding, task: usize) -> Result<Var> {
        let l = self.inducing() as f64;
        let raw = bind.var(self.ids.s_raw[task]);
        let s = g.lower_exp_diag(raw)?;
        let s2 = g.square(s);
        let tr = g.sum(s2);
        let m = bind.var(self.ids.m[task]);
        let m2 = g.square(m);
        let mm = g.sum(m2);
        let logdiag = g.diag(raw)?;
        let logdet = g.sum(logdiag);
        let quad = g.add(tr, mm)?;
        let quad = g.add_scalar(quad, -l);
        let half = g.scale(quad, 0.5);
        Ok(g.sub(half, logdet)?)
    }

    /// Negated ELBO for a minibatch: `-(n/B * sum E_q[log p(y|f)] - sum KL)`.
    pub fn neg_elbo(&self, g: &mut Graph, bind: &Binding, x: Var, y: Var, total_n: usize) -> Result<Var> {
        let b = g.shape(x)[0];
        if b == 0 || total_n < b || g.shape(y) != [b, TASKS] {
            return Err(invalid(format!("elbo needs B >= 1, total_n >= B and [B, {TASKS}] targets")));
        }
        let mo = self.moments(g, bind, x)?;
        let mut ell_sum = None;
        let mut kl_sum = None;
        for t in 0..TASKS {
            let yt = g.slice(y, 1, t, t + 1)?;
            let yt = g.reshape(yt, &[b])?;
            let r = g.sub(yt, mo.mean[t])?;
            let r2 = g.square(r);
            let num = g.add(r2, mo.var[t])?;
            let log_noise = bind.var(self.ids.log_noise[t]);
            let inv = g.neg(log_noise);
            let inv = g.exp(inv);
            let quad = g.mul(num, inv)?;
            let quad = g.sum(quad);
            let half = g.scale(quad, -0.5);
            let ln = g.sum(log_noise);
            let norm = g.add_scalar(ln, LN_2PI);
            let norm = g.scale(norm, -0.5 * b as f64);
            let ell = g.add(half, norm)?;
            ell_sum = Some(match ell_sum {
                None => ell,
                Some(acc) => g.add(acc, ell)?,
            });
            let kl = self.kl(g, bind, t)?;
            kl_sum = Some(match kl_sum {
                None => kl,
                Some(acc) => g.add(acc, kl)?,
            });
        }
        let ell = g.scale(ell_sum.expect("two tasks"), total_n as f64 / b as f64);
        let elbo = g.sub(ell, kl_sum.expect("two tasks"))?;
        Ok(g.neg(elbo))
    }

    /// Predictive means and standard deviations (noise included) for
    /// row-major `[n, d]` latents.
    pub fn predict(&self, latents: &[f64]) -> Result<Vec<ResidualPrediction>> {
        const CHUNK: usize = 512;
        let d = self.dim();
        if latents.len() % d != 0 {
            return Err(invalid("latent batch width does not match the gp input dimension"));
        }
        let noise = self.noise();
        let mut out = Vec::with_capacity(latents.len() / d);
        for chunk in latents.chunks(CHUNK * d) {
            let n = chunk.len() / d;
            let mut g = Graph::new();
            let bind = self.params.bind_frozen(&mut g);
            let x = g.constant(Tensor::new([n, d], chunk.to_vec())?);
            let mo = self.moments(&mut g, &bind, x)?;
            for i in 0..n {
                let mut p = ResidualPrediction {
                    mean: [0.0; 2],
                    std: [0.0; 2],
                };
                for t in 0..TASKS {
                    p.mean[t] = g.value(mo.mean[t]).data()[i];
                    p.std[t] = (g.value(mo.var[t]).data()[i].max(0.0) + noise[t]).sqrt();
                }
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// k-means++ seeding: `k` rows of `points` (`[n, d]`), the first uniform and
/// each next one drawn with probability proportional to its squared distance
/// from the chosen set. Duplicate picks are avoided while any distance is positive.
pub fn kmeans_pp(points: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = points.len() / d.max(1);
    if d == 0 || n < k || k == 0 {
        return Err(invalid(format!("k-means++ needs at least {k} points, got {n}")));
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(dist(row(i), row(next)));
        }
    }
    Ok(chosen.iter().flat_map(|&i| row(i).to_vec()).collect())
}

/// Inducing inputs from k-means++ over at most `subsample` random rows.
pub fn init_inducing(latents: &[f64], d: usize, l: usize, subsample: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = latents.len() / d.max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(subsample.max(l));
    let sub: Vec<f64> = idx.iter().flat_map(|&i| latents[i * d..(i + 1) * d].to_vec()).collect();
    kmeans_pp(&sub, d, l, rng)
}

/// Initial lengthscale: `sqrt(d)` times the pooled per-dimension standard
/// deviation, so the scaled distance between typical latents is `O(1)`.
pub fn initial_lengthscale(latents: &[f64], d: usize) -> f64 {
    let n = latents.len() / d.max(1);
    if n < 2 {
        return (d as f64).sqrt();
    }
    let mut pooled = 0.0;
    for j in 0..d {
        let col = latents.iter().skip(j).step_by(d);
        let mean = col.clone().sum::<f64>() / n as f64;
        pooled += col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    }
    let sd = (pooled / d as f64).sqrt();
    let sd = if sd > 1e-9 { sd } else { 1.0 };
    (d as f64).sqrt() * sd
}

/// Builds a GP initialised from data: k-means++ inducing inputs, data-scaled
/// lengthscales, unit outputscale and constant means at the target means.
pub fn init_gp(latents: &[f64], targets: &[f64], d: usize, cfg: &GpConfig, rng: &mut ChaCha8Rng) -> Result<VariationalGp> {
    let n = latents.len() / d.max(1);
    if targets.len() != n * TASKS {
        return Err(invalid("one target pair per latent row is required"));
    }
    let z = init_inducing(latents, d, cfg.inducing, 2000, rng)?;
    let means = [0, 1].map(|t| targets.iter().skip(t).step_by(TASKS).sum::<f64>() / n as f64);
    VariationalGp::new(&z, d, initial_lengthscale(latents, d), 1.0, cfg.init_noise, means, cfg.jitter)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iteration_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub skipped_steps: u64,
}

/// Standalone fit on fixed latents `[n, d]` and targets `[n, 2]`.
pub fn fit_svgp(latents: &[f64], targets: &[f64], d: usize, cfg: &GpConfig) -> Result<(VariationalGp, FitReport)> {
    cfg.validate()?;
    let n = latents.len() / d.max(1);
    if n < cfg.batch {
        return Err(invalid(format!("dataset of {n} rows is smaller than the batch size {}", cfg.batch)));
    }
    let mut r = rng::stream(cfg.seed, rng::derive_seed(cfg.seed, "svgp"));
    let mut gp = init_gp(latents, targets, d, cfg, &mut r)?;
    let mut adam = AdamState::new(gp.params(), AdamConfig::with_lr(cfg.lr));
    let mut report = FitReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut epoch = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch) {
            let xb: Vec<f64> = idx.iter().flat_map(|&i| latents[i * d..(i + 1) * d].to_vec()).collect();
            let yb: Vec<f64> = idx.iter().flat_map(|&i| targets[i * TASKS..(i + 1) * TASKS].to_vec()).collect();
            let mut g = Graph::new();
            let bind = gp.params().bind(&mut g);
            let x = g.constant(Tensor::new([idx.len(), d], xb)?);
            let y = g.constant(Tensor::new([idx.len(), TASKS], yb)?);
            let loss = gp.neg_elbo(&mut g, &bind, x, y, n)?;
            let value = g.value(loss).item() / n as f64;
            let grads = g.backward(loss)?;
            let mut grads = bind.gradients(gp.params(), &grads);
            gp.freeze_for(cfg, &mut grads);
            adam.step(gp.params_mut(), &grads);
            report.iteration_losses.push(value);
            epoch += value;
            batches += 1;
        }
        report.epoch_losses.push(epoch / batches as f64);
    }
    report.skipped_steps = adam.skipped();
    Ok((gp, report))
}
