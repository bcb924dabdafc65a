//! Sparse variational GP on a noisy 1-D sine with two output tasks.

use drf::svgp::{fit_svgp, GpConfig};
use drf_autodiff::rng::stream;
use rand::Rng;

fn main() -> drf::Result<()> {
    let mut r = stream(7, 0);
    let n = 500;
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .flat_map(|&x: &f64| [x.sin() + 0.1 * r.random_range(-1.0..1.0), (2.0 * x).cos()])
        .collect();
    let cfg = GpConfig {
        inducing: 20,
        batch: 100,
        epochs: 150,
        lr: 0.05,
        ..Default::default()
    };
    let (gp, report) = fit_svgp(&x, &y, 1, &cfg)?;
    println!(
        "neg ELBO {:.3} -> {:.3}; lengthscale {:.3}, noise {:?}",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap(),
        gp.lengthscales()[0],
        gp.noise()
    );
    let grid: Vec<f64> = (0..=12).map(|k| -3.0 + 0.5 * k as f64).collect();
    for (x, p) in grid.iter().zip(gp.predict(&grid)?) {
        println!(
            "x {x:+.1}  sin {:+.3} pred {:+.3} +- {:.3} | cos2x {:+.3} pred {:+.3} +- {:.3}",
            x.sin(),
            p.mean[0],
            2.0 * p.std[0],
            (2.0 * x).cos(),
            p.mean[1],
            2.0 * p.std[1]
        );
    }
    Ok(())
}
