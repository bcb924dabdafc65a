//! Expands a hyper-parameter grid and ranks it on a short residual-model fit.

use drf::config::{RunConfig, TuneGrid};
use drf::datapipe::{prepare, IngestedLog};
use drf::dynamics::DynamicModel;
use drf::pipeline::{expand_grid, run_grid};
use drf::rcm::train_rcm;
use drf::scenarios::{generate_training_set, OracleVehicle};

fn main() -> drf::Result<()> {
    let mut base = RunConfig::default();
    base.rcm.gp.inducing = 32;
    let oracle = OracleVehicle::default();
    let dm = DynamicModel::RuleBased(oracle.nominal_rule_based());
    let logs: Vec<IngestedLog> = generate_training_set(&oracle, 0, base.dt, 6, 60.0)?
        .into_iter()
        .map(|s| IngestedLog {
            path: s.name.into(),
            records: s.log,
            dropped: 0,
        })
        .collect();
    let r = &base.rcm;
    let ds = prepare(&logs, &dm, r.window, r.overlap, base.dt, r.sanity_bound, &base.split)?;
    let (train, val) = (ds.train_samples(), ds.val_samples());

    let grid = TuneGrid {
        batch: vec![64, 128],
        inducing: vec![16, 32],
        lr: vec![0.01, 0.003],
        ..Default::default()
    };
    let points = expand_grid(&base, &grid);
    println!("{} grid points on {} / {} windows", points.len(), train.len(), val.len());
    let board = run_grid(&base, &points, 2, |c| {
        let (_, rep) = train_rcm(dm.clone(), &train, &val, &c.rcm)?;
        Ok(rep.val_loss[rep.best_epoch])
    });
    for e in &board.entries {
        println!("batch {:4} inducing {:3} lr {:.3} -> val {:.4}", e.point.batch, e.point.inducing, e.point.lr, e.val_loss);
    }
    for s in &board.skipped {
        println!("skipped batch {} inducing {}: {}", s.point.batch, s.point.inducing, s.reason);
    }
    Ok(())
}
