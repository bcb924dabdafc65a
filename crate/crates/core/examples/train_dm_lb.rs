//! Fits the learned dynamic model on tick-level labels from a few oracle
//! drives and compares its open-loop rollout with the rule-based model.

use drf::dynamics::{rollout_log, tick_samples, train_dm_lb, DmTrainConfig, DynamicModel};
use drf::metrics::ate;
use drf::scenarios::{generate_golden_set, generate_training_set, OracleVehicle, ScenarioKind};
use drf::vehicle::DEFAULT_DT;
use drf::Trajectory;

fn main() -> drf::Result<()> {
    let oracle = OracleVehicle::default();
    let logs = generate_training_set(&oracle, 0, DEFAULT_DT, 10, 120.0)?;
    let (train, val) = logs.split_at(8);
    let samples = |s: &[drf::scenarios::Scenario]| s.iter().flat_map(|s| tick_samples(&s.log, DEFAULT_DT)).collect::<Vec<_>>();
    let cfg = DmTrainConfig {
        max_epochs: 40,
        ..Default::default()
    };
    let (mlp, report) = train_dm_lb(&samples(train), &samples(val), &cfg)?;
    println!(
        "val loss {:.4} -> {:.4} (best epoch {})",
        report.baseline_val_loss, report.val_loss[report.best_epoch], report.best_epoch
    );

    let models = [DynamicModel::RuleBased(oracle.nominal_rule_based()), DynamicModel::Learned(mlp)];
    for s in generate_golden_set(&oracle, 0, DEFAULT_DT, None)?.into_iter().filter(|s| s.kind == ScenarioKind::Golden) {
        let gt = Trajectory::from_log(&s.log)?;
        let mut line = format!("{:16}", s.name);
        for m in &models {
            let a = ate(&rollout_log(m, &s.log, DEFAULT_DT)?, &gt, None)?;
            line += &format!(" {} {:7.3}", m.name(), a.m_ate);
        }
        println!("{line}");
    }
    Ok(())
}
