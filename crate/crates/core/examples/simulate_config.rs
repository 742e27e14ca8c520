//! Loads a scenario file and writes the simulated trace as CSV.
//!
//! ```text
//! cargo run --release --example simulate_config -- crates/core/fixtures/fig12_k10.cfg trace.csv
//! ```

use std::fs::File;
use std::io::BufWriter;

use droopkit::config::parse_config;
use droopkit::simcore::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let cfg = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/fig12_k10.cfg").into());
    let (_, scenario) = parse_config(&std::fs::read_to_string(&cfg)?)?;
    let trace = run_scenario(&scenario)?;
    let last = trace.len() - 1;
    println!(
        "{cfg}: {} samples, final v_bus {:.3} V, i_l {:.3} A, p_load {:.0} W",
        trace.len(),
        trace.v_bus[last],
        trace.i_l[last],
        trace.p_load[last]
    );
    for a in &trace.annotations {
        println!("t = {:.3} s: {}", a.t, a.message);
    }
    if let Some(out) = args.next() {
        trace.write_csv(BufWriter::new(File::create(&out)?))?;
        println!("trace written to {out}");
    }
    Ok(())
}
