//! Generates the golden catalogue from the oracle vehicle and writes each
//! drive as a log CSV.
//!
//! `cargo run --release --example generate_scenarios -- [out_dir]`

use drf::io::write_log;
use drf::scenarios::{generate_golden_set, net_heading_change, OracleVehicle};
use drf::vehicle::DEFAULT_DT;

fn main() -> drf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/golden".into());
    std::fs::create_dir_all(&out)?;
    let oracle = OracleVehicle::default();
    for s in generate_golden_set(&oracle, 0, DEFAULT_DT, None)? {
        let last = s.log.last().unwrap();
        println!(
            "{:16} {:?} rows {:6} heading change {:+7.2} rad, final speed {:5.2} m/s at ({:8.1}, {:8.1})",
            s.name,
            s.kind,
            s.log.len(),
            net_heading_change(&s.log),
            last.state.speed,
            last.pose.x,
            last.pose.y
        );
        write_log(format!("{out}/{}.csv", s.name), &s.log)?;
    }
    Ok(())
}
