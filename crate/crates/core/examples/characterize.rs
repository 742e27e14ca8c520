//! Runs the full characterization on the simulated model: current-loop
//! step, droop filter, droop slope and restore ramp.
//!
//! ```text
//! cargo run --release --example characterize
//! ```

use droopkit::ident::characterize_model;
use droopkit::ConverterParams;

fn main() -> Result<(), droopkit::Error> {
    let report = characterize_model(&ConverterParams::table1())?;
    for (k, v) in report.key_values() {
        println!("{k}={v}");
    }
    for (p, v) in &report.droop_points {
        println!("droop point: {p:.0} W -> {v:.3} V");
    }
    Ok(())
}
