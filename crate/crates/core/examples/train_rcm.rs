//! Trains the CNN residual model on a small dataset and rolls it out on the
//! golden scenarios with and without feedback.

use drf::datapipe::{prepare, IngestedLog, SplitConfig};
use drf::dynamics::{rollout_log, DynamicModel};
use drf::metrics::ate;
use drf::rcm::{drf_rollout_log, train_rcm, RcmConfig, RolloutOptions};
use drf::scenarios::{generate_golden_set, generate_training_set, OracleVehicle, ScenarioKind};
use drf::svgp::GpConfig;
use drf::vehicle::DEFAULT_DT;
use drf::Trajectory;

fn main() -> drf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let oracle = OracleVehicle::default();
    let dm = DynamicModel::RuleBased(oracle.nominal_rule_based());
    let cfg = RcmConfig {
        gp: GpConfig {
            inducing: 64,
            epochs: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let logs: Vec<IngestedLog> = generate_training_set(&oracle, 0, DEFAULT_DT, 15, 120.0)?
        .into_iter()
        .map(|s| IngestedLog {
            path: s.name.into(),
            records: s.log,
            dropped: 0,
        })
        .collect();
    let ds = prepare(&logs, &dm, cfg.window, cfg.overlap, DEFAULT_DT, cfg.sanity_bound, &SplitConfig::default())?;
    let (model, report) = train_rcm(dm.clone(), &ds.train_samples(), &ds.val_samples(), &cfg)?;
    println!(
        "{} train / {} val windows, val MAE {:.3} / {:.3} m, val ELBO improvement {:.1}%",
        report.train_samples,
        report.val_samples,
        report.val_mae[0],
        report.val_mae[1],
        100.0 * report.val_improvement()
    );

    println!("{:16} {:>8} {:>8} {:>8} {:>10}", "scenario", "dm", "drf", "no-fb", "mean 2sigma");
    for s in generate_golden_set(&oracle, 0, DEFAULT_DT, None)?.into_iter().filter(|s| s.kind == ScenarioKind::Golden) {
        let gt = Trajectory::from_log(&s.log)?;
        let base = ate(&rollout_log(&dm, &s.log, DEFAULT_DT)?, &gt, None)?.m_ate;
        let fb = drf_rollout_log(&model, &s.log, DEFAULT_DT, RolloutOptions::default())?;
        let open = drf_rollout_log(
            &model,
            &s.log,
            DEFAULT_DT,
            RolloutOptions {
                feedback: false,
                stride_eval: 1,
            },
        )?;
        let band = fb.sigmas.iter().map(|s| 2.0 * s[0].hypot(s[1])).sum::<f64>() / fb.sigmas.len() as f64;
        println!(
            "{:16} {base:8.3} {:8.3} {:8.3} {band:10.3}",
            s.name,
            ate(&fb.trajectory, &gt, None)?.m_ate,
            ate(&open.trajectory, &gt, None)?.m_ate
        );
    }
    Ok(())
}
