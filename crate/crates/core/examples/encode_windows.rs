//! Runs every encoder family on real command/state windows and reports the
//! latent size, parameter count and minimum window length.

use drf::encoders::{window_features, Encoder, EncoderSpec, FEATURES};
use drf::scenarios::{generate_training_set, OracleVehicle};
use drf::vehicle::DEFAULT_DT;

const WINDOW: usize = 100;

fn main() -> drf::Result<()> {
    let drive = generate_training_set(&OracleVehicle::default(), 0, DEFAULT_DT, 1, 30.0)?.remove(0).log;
    let mut batch = Vec::new();
    for start in (0..drive.len() - WINDOW).step_by(500) {
        let rows = &drive[start..start + WINDOW];
        let cmds: Vec<_> = rows.iter().map(|r| r.command).collect();
        let states: Vec<_> = rows.iter().map(|r| r.state).collect();
        batch.extend(window_features(&cmds, &states));
    }
    let b = batch.len() / (WINDOW * FEATURES);
    for spec in EncoderSpec::all_defaults() {
        let enc = Encoder::new(spec.clone(), WINDOW, 0)?;
        let t = std::time::Instant::now();
        let z = enc.encode(&batch)?;
        let norm = z.chunks(enc.latent_dim()).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / b as f64;
        println!(
            "{:12} latent {:3} params {:7} min window {:3} | {b} windows in {:?}, mean latent norm {norm:.3}",
            spec.name(),
            enc.latent_dim(),
            enc.params().num_values(),
            spec.min_window_length(),
            t.elapsed()
        );
    }
    Ok(())
}
