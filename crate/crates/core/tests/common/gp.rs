//! Dense GP oracles and the seeded SVGP experiments shared with the
//! acceptance suite.

use drf::metrics::two_sigma_defect_values;
use drf::svgp::{fit_svgp, kernel_eval, FitReport, GpConfig, VariationalGp, TASKS};
use drf_autodiff::{rng, Graph, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

pub fn dense_kernel(x: &[f64], d: usize, ls: &[f64], os: f64) -> DMatrix<f64> {
    let n = x.len() / d;
    DMatrix::from_fn(n, n, |i, j| kernel_eval(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d], ls, os))
}

/// Exact Gaussian log marginal likelihood of one task.
pub fn dense_lml(k: &DMatrix<f64>, y: &[f64], c: f64, noise: f64) -> f64 {
    let n = y.len();
    let ky = k + DMatrix::identity(n, n) * noise;
    let chol = ky.cholesky().expect("spd");
    let r = DVector::from_iterator(n, y.iter().map(|v| v - c));
    let alpha = chol.solve(&r);
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub fn elbo(gp: &VariationalGp, x: &[f64], y: &[f64], d: usize) -> f64 {
    let n = x.len() / d;
    let mut g = Graph::new();
    let bind = gp.params().bind_frozen(&mut g);
    let xv = g.constant(Tensor::new([n, d], x.to_vec()).unwrap());
    let yv = g.constant(Tensor::new([n, TASKS], y.to_vec()).unwrap());
    let loss = gp.neg_elbo(&mut g, &bind, xv, yv, n).unwrap();
    -g.value(loss).item()
}

pub fn uniform(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn column(y: &[f64], t: usize) -> Vec<f64> {
    y.iter().skip(t).step_by(TASKS).copied().collect()
}

pub fn sin_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, 0);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let x = uniform(n, -3.0, 3.0, &mut r);
    let y = x
        .iter()
        .flat_map(|v| {
            let a = v.sin() + noise.sample(&mut r);
            let b = v.sin() + noise.sample(&mut r);
            [a, b]
        })
        .collect();
    (x, y)
}

/// Approximate GP prior draws via random Fourier features of the Matern-5/2
/// spectral density (Student-t with 5 degrees of freedom).
pub struct PriorSample {
    omega: Vec<f64>,
    phase: Vec<f64>,
    scale: f64,
}

impl PriorSample {
    pub fn new(lengthscale: f64, outputscale: f64, features: usize, r: &mut ChaCha8Rng) -> Self {
        let t = StudentT::new(5.0).unwrap();
        PriorSample {
            omega: (0..features).map(|_| t.sample(r) / lengthscale).collect(),
            phase: (0..features).map(|_| r.random_range(0.0..2.0 * std::f64::consts::PI)).collect(),
            scale: (2.0 * outputscale / features as f64).sqrt(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.omega.iter().zip(&self.phase).map(|(w, b)| (w * x + b).cos()).sum::<f64>()
    }
}

pub fn prior_data(n: usize, f: [&PriorSample; 2], noise: f64, r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let eps = Normal::new(0.0, noise.sqrt()).unwrap();
    let x = uniform(n, 0.0, 5.0, r);
    let y = x.iter().flat_map(|&v| [f[0].eval(v) + eps.sample(r), f[1].eval(v) + eps.sample(r)]).collect();
    (x, y)
}


/// Smallest `exact - elbo` over 20 random instances of up to 19 points.
pub fn lower_bound_slack() -> f64 {
    let mut worst = f64::INFINITY;
    let mut r = rng::stream(1, 0);
    for case in 0..20 {
        let (n, d, l) = (4 + case % 16, 1 + case % 2, 2 + case % 5);
        let x = uniform(n * d, -2.0, 2.0, &mut r);
        let y = uniform(n * TASKS, -1.0, 1.0, &mut r);
        let z = uniform(l * d, -2.0, 2.0, &mut r);
        let mut gp = VariationalGp::new(&z, d, 0.8, 1.3, 0.05, [0.1, -0.2], 1e-6).unwrap();
        for t in 0..TASKS {
            let m = uniform(l, -1.0, 1.0, &mut r);
            let mut s = vec![0.0; l * l];
            for i in 0..l {
                for j in 0..i {
                    s[i * l + j] = r.random_range(-0.3..0.3);
                }
                s[i * l + i] = r.random_range(0.2..1.2);
            }
            gp.set_variational(t, &m, &s).unwrap();
        }
        let k = dense_kernel(&x, d, &gp.lengthscales(), gp.outputscale());
        let exact: f64 = (0..TASKS)
            .map(|t| dense_lml(&k, &column(&y, t), gp.constant_means()[t], gp.noise()[t]))
            .sum();
        let bound = elbo(&gp, &x, &y, d);
        worst = worst.min(exact - bound);
    }
    worst
}

/// `|exact - elbo|` with inducing inputs at the data and q the exact posterior.
pub fn exact_posterior_gap() -> f64 {
    let mut r = rng::stream(2, 0);
    let n = 12;
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.45 + r.random_range(0.0..0.1)).collect();
    let y = uniform(n * TASKS, -1.0, 1.0, &mut r);
    let mut gp = VariationalGp::new(&x, 1, 1.0, 1.0, 0.1, [0.2, -0.1], 1e-10).unwrap();
    let k = dense_kernel(&x, 1, &gp.lengthscales(), gp.outputscale());
    let lz = (&k + DMatrix::identity(n, n) * gp.jitter()).cholesky().unwrap().l();
    // f = A^T v with A = L_Z^{-1} K_ZX = L_Z^T.
    let a = lz.transpose();
    for t in 0..TASKS {
        let s2 = gp.noise()[t];
        let resid = DVector::from_iterator(n, column(&y, t).iter().map(|v| v - gp.constant_means()[t]));
        let prec = DMatrix::identity(n, n) + &a * a.transpose() / s2;
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * &a * resid / s2;
        let cov = (&cov + cov.transpose()) * 0.5;
        let s = cov.cholesky().unwrap().l();
        let s_rows: Vec<f64> = (0..n * n).map(|k| s[(k / n, k % n)]).collect();
        gp.set_variational(t, mean.as_slice(), &s_rows).unwrap();
    }
    let exact: f64 = (0..TASKS)
        .map(|t| dense_lml(&k, &column(&y, t), gp.constant_means()[t], gp.noise()[t]))
        .sum();
    let bound = elbo(&gp, &x, &y, 1);
    (exact - bound).abs()
}

/// Held-out RMSE of the seeded sin-toy fit (noise std 0.1) and its report.
pub fn sin_toy_fit() -> (f64, FitReport) {
    let (x, y) = sin_data(500, 5);
    let cfg = GpConfig {
        inducing: 32,
        lr: 0.01,
        epochs: 300,
        seed: 7,
        ..GpConfig::default()
    };
    let (gp, report) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let (xt, yt) = sin_data(200, 99);
    let pred = gp.predict(&xt).unwrap();
    let mse: f64 = pred.iter().zip(column(&yt, 0)).map(|(p, t)| (p.mean[0] - t).powi(2)).sum::<f64>() / xt.len() as f64;
    (mse.sqrt(), report)
}

/// Two-sigma defect rate per task on 5000 held-out draws from a GP prior.
pub fn prior_defect_rates() -> [f64; TASKS] {
    let mut r = rng::stream(9, 0);
    let fa = PriorSample::new(0.7, 1.0, 3000, &mut r);
    let fb = PriorSample::new(0.7, 1.0, 3000, &mut r);
    let (x, y) = prior_data(2000, [&fa, &fb], 0.04, &mut r);
    let cfg = GpConfig {
        inducing: 64,
        batch: 256,
        lr: 0.02,
        epochs: 80,
        seed: 2,
        ..GpConfig::default()
    };
    let (gp, _) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let (xt, yt) = prior_data(5000, [&fa, &fb], 0.04, &mut r);
    let pred = gp.predict(&xt).unwrap();
    let mut out = [0.0; TASKS];
    for t in 0..TASKS {
        let truth = column(&yt, t);
        let mean: Vec<f64> = pred.iter().map(|p| p.mean[t]).collect();
        let std: Vec<f64> = pred.iter().map(|p| p.std[t]).collect();
        out[t] = two_sigma_defect_values(&truth, &mean, &std);
    }
    out
}
