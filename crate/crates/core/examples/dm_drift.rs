//! Open-loop drift of the rule-based dynamic model against the oracle on
//! every golden scenario.

use drf::dynamics::{rollout_log, DynamicModel};
use drf::metrics::grade;
use drf::scenarios::{generate_golden_set, OracleVehicle, ScenarioKind};
use drf::vehicle::DEFAULT_DT;
use drf::Trajectory;

fn main() -> drf::Result<()> {
    let oracle = OracleVehicle::default();
    let dm = DynamicModel::RuleBased(oracle.nominal_rule_based());
    println!("m-ATE per horizon (1s, 5s, 10s, 30s, EoT)");
    for s in generate_golden_set(&oracle, 0, DEFAULT_DT, None)?.into_iter().filter(|s| s.kind == ScenarioKind::Golden) {
        let gt = Trajectory::from_log(&s.log)?;
        let report = grade(&rollout_log(&dm, &s.log, DEFAULT_DT)?, None, &gt)?;
        let m: Vec<String> = report.horizons.iter().map(|h| format!("{:8.3}", h.m_ate)).collect();
        println!("{:16} {}", s.name, m.join(" "));
    }
    Ok(())
}
