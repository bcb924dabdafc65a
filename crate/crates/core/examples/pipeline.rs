//! The file-based stages behind the `drf` binary, run in one process on a
//! shortened configuration.
//!
//! `cargo run --release --example pipeline -- [out_dir]`

use drf::config::RunConfig;
use drf::pipeline::{evaluate, generate, prepare, train_rcm, EvalOptions, Layout};

fn main() -> drf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/drf-run".into());
    let mut cfg = RunConfig::default().with_seed(3);
    cfg.generate.training_logs = 10;
    cfg.rcm.gp.epochs = 10;
    let layout = Layout::new(&out);
    generate(&cfg, &layout)?;
    let manifest = prepare(&cfg, &layout, None)?;
    println!("dataset: {} train, {} val", manifest.train, manifest.val);
    let (bundle, _) = train_rcm(&cfg, &layout)?;
    let summary = evaluate(
        &cfg,
        &layout,
        &EvalOptions {
            models: vec![bundle],
            include_loop: false,
            feedback: None,
            plots: true,
        },
    )?;
    for m in &summary.models {
        if let Some(avg) = &m.average {
            println!("{:16} average m-ATE(EoT) {:.3} m", m.model, avg.m_ate_eot());
        }
    }
    println!("metrics and plots under {}", layout.eval().display());
    Ok(())
}
