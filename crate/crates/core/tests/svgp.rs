mod common;

use common::gp::*;
use drf::svgp::{fit_svgp, kernel_eval, GpConfig, VariationalGp, TASKS};
use drf_autodiff::{gradcheck, rng, Binding, Graph, Tensor};
use nalgebra::DMatrix;

#[test]
fn kernel_matches_extended_precision_value() {
    // (1 + sqrt5 + 5/3) exp(-sqrt5) from 40-digit decimal arithmetic.
    let want = 0.523_994_108_831_820_3;
    let got = kernel_eval(&[0.0], &[1.0], &[1.0], 1.0);
    assert!((got - want).abs() < 1e-15, "{got}");
}

#[test]
fn elbo_is_a_lower_bound_on_the_exact_marginal_likelihood() {
    let slack = lower_bound_slack();
    assert!(slack >= -1e-9, "{slack}");
}

#[test]
fn elbo_is_tight_at_the_exact_posterior() {
    let gap = exact_posterior_gap();
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn elbo_gradients_pass_finite_difference_check() {
    let mut r = rng::stream(3, 0);
    let (l, b, d) = (3, 4, 2);
    let z = uniform(l * d, -1.0, 1.0, &mut r);
    let mut gp = VariationalGp::new(&z, d, 0.9, 1.1, 0.2, [0.3, -0.4], 1e-6).unwrap();
    for t in 0..TASKS {
        let m = uniform(l, -0.5, 0.5, &mut r);
        let s = vec![0.8, 0.0, 0.0, 0.1, 0.6, 0.0, -0.2, 0.3, 0.9];
        gp.set_variational(t, &m, &s).unwrap();
    }
    let x = Tensor::new([b, d], uniform(b * d, -1.0, 1.0, &mut r)).unwrap();
    let y = Tensor::new([b, TASKS], uniform(b * TASKS, -1.0, 1.0, &mut r)).unwrap();
    let np = gp.params().len();
    let mut inputs = gp.params().tensors().to_vec();
    inputs.push(x);
    let report = gradcheck::check(&inputs, 1e-6, |g: &mut Graph, vars| {
        let bind = Binding::from_vars(vars[..np].to_vec());
        let yv = g.constant(y.clone());
        gp.neg_elbo(g, &bind, vars[np], yv, 10)
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-4, "{:?}", report.relative_errors);
}

#[test]
fn jitter_level_barely_moves_the_elbo() {
    let mut r = rng::stream(4, 0);
    let x = uniform(30, -3.0, 3.0, &mut r);
    let y: Vec<f64> = x.iter().flat_map(|v| [v.sin(), v.cos()]).collect();
    let z: Vec<f64> = (0..8).map(|i| -3.0 + i as f64 * 0.8).collect();
    let mut gp = VariationalGp::new(&z, 1, 1.0, 1.0, 0.01, [0.0; 2], 1e-8).unwrap();
    gp.set_variational(0, &[0.3; 8], &DMatrix::<f64>::identity(8, 8).scale(0.5).as_slice().to_vec())
        .unwrap();
    let a = elbo(&gp, &x, &y, 1);
    gp.set_jitter(1e-6);
    let b = elbo(&gp, &x, &y, 1);
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn sin_toy_fit_and_monotone_trend() {
    let (rmse, report) = sin_toy_fit();
    assert!(rmse < 0.2, "held-out rmse {rmse}");

    let blocks: Vec<f64> = report
        .iteration_losses
        .chunks_exact(50)
        .map(|c| c.iter().sum::<f64>() / 50.0)
        .collect();
    let violations = blocks.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(violations <= 2, "{violations} increases in {blocks:?}");
}

#[test]
fn constant_targets_are_recovered_by_the_mean() {
    let mut r = rng::stream(6, 0);
    let x = uniform(300, -2.0, 2.0, &mut r);
    let y: Vec<f64> = x.iter().flat_map(|_| [1.7, -0.4]).collect();
    let cfg = GpConfig {
        inducing: 16,
        batch: 64,
        epochs: 100,
        ..GpConfig::default()
    };
    let (gp, _) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let c = gp.constant_means();
    assert!((c[0] - 1.7).abs() < 0.05 && (c[1] + 0.4).abs() < 0.05, "{c:?}");
    for t in 0..TASKS {
        let m: f64 = gp.variational_mean(t).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(m < 0.5, "task {t} |m| = {m}");
    }
}

#[test]
fn lengthscale_is_recovered_from_prior_draws() {
    let mut r = rng::stream(8, 0);
    let fa = PriorSample::new(0.5, 1.0, 3000, &mut r);
    let fb = PriorSample::new(0.5, 1.0, 3000, &mut r);
    let (x, y) = prior_data(1000, [&fa, &fb], 0.01, &mut r);
    let cfg = GpConfig {
        inducing: 48,
        batch: 128,
        lr: 0.02,
        epochs: 150,
        seed: 1,
        ..GpConfig::default()
    };
    let (gp, _) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let log_ls = gp.lengthscales()[0].ln();
    assert!((log_ls - 0.5f64.ln()).abs() < 0.5, "lengthscale {}", gp.lengthscales()[0]);
}

#[test]
fn predictive_bands_are_calibrated_on_prior_draws() {
    for (t, rate) in prior_defect_rates().into_iter().enumerate() {
        assert!((0.01..=0.12).contains(&rate), "task {t} defect rate {rate}");
    }
}

#[test]
fn predictive_variance_never_drops_below_noise() {
    let (x, y) = sin_data(300, 10);
    let cfg = GpConfig {
        inducing: 16,
        batch: 64,
        epochs: 40,
        ..GpConfig::default()
    };
    let (gp, _) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let probe: Vec<f64> = (0..400).map(|i| -6.0 + i as f64 * 0.03).collect();
    let noise = gp.noise();
    for p in gp.predict(&probe).unwrap() {
        for t in 0..TASKS {
            assert!(p.std[t] * p.std[t] >= noise[t] * (1.0 - 1e-12));
        }
    }
}

#[test]
fn noiseless_fit_interpolates_at_inducing_points() {
    let x: Vec<f64> = (0..200).map(|i| -3.0 + 6.0 * (i % 10) as f64 / 9.0).collect();
    let y: Vec<f64> = x.iter().flat_map(|v| [v.sin(), v.cos()]).collect();
    let cfg = GpConfig {
        inducing: 10,
        batch: 100,
        lr: 0.05,
        epochs: 1000,
        init_noise: 1e-6,
        seed: 4,
        learn_inducing: false,
        learn_noise: false,
        ..GpConfig::default()
    };
    let (gp, _) = fit_svgp(&x, &y, 1, &cfg).unwrap();
    let z = x[..10].to_vec();
    let pred = gp.predict(&z).unwrap();
    for (zi, p) in z.iter().zip(&pred) {
        assert!((p.mean[0] - zi.sin()).abs() < 1e-3, "at {zi}: {} vs {}", p.mean[0], zi.sin());
    }
}
