//! Labels residual windows on oracle drives, balances them over the
//! speed / pedal / steering grid and saves the split dataset.
//!
//! `cargo run --release --example prepare_dataset -- [out_dir]`

use drf::datapipe::{prepare, Dataset, IngestedLog, SplitConfig};
use drf::dynamics::DynamicModel;
use drf::encoders::DEFAULT_WINDOW;
use drf::rcm::{DEFAULT_OVERLAP, DEFAULT_SANITY_BOUND};
use drf::scenarios::{generate_training_set, OracleVehicle};
use drf::vehicle::DEFAULT_DT;

fn main() -> drf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/dataset".into());
    let oracle = OracleVehicle::default();
    let dm = DynamicModel::RuleBased(oracle.nominal_rule_based());
    let logs: Vec<IngestedLog> = generate_training_set(&oracle, 0, DEFAULT_DT, 10, 120.0)?
        .into_iter()
        .map(|s| IngestedLog {
            path: s.name.into(),
            records: s.log,
            dropped: 0,
        })
        .collect();
    let mut ds = prepare(
        &logs,
        &dm,
        DEFAULT_WINDOW,
        DEFAULT_OVERLAP,
        DEFAULT_DT,
        DEFAULT_SANITY_BOUND,
        &SplitConfig::default(),
    )?;
    let m = &ds.manifest;
    let available: usize = m.categories.iter().map(|c| c.available).sum();
    println!(
        "stride {} | {available} windows in {} categories, cap {} -> train {} val {}",
        m.stride,
        m.categories.len(),
        m.cap,
        m.train,
        m.val
    );
    for c in m.categories.iter().take(8) {
        println!("  {:?}: {} available, kept {} ({} / {})", c.key, c.available, c.kept, c.train, c.val);
    }
    ds.save(&out)?;
    let back = Dataset::load(&out)?;
    println!("saved to {out}, sha256 {}", back.manifest.windows_sha256);
    Ok(())
}
