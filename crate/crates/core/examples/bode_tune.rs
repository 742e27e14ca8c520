//! Tunes both PI loops at full load and prints the current-loop Bode data
//! around its crossover.
//!
//! ```text
//! cargo run --example bode_tune
//! ```

use droopkit::looptune::{check_hierarchy, design_loops};
use droopkit::tfcore::bode;
use droopkit::ConverterParams;

fn main() -> Result<(), droopkit::Error> {
    let params = ConverterParams::table1();
    let d = design_loops(&params, params.v_nl, 3600.0)?;
    println!(
        "operating point: duty {:.4}, i_l {:.3} A",
        d.op.duty, d.op.i_l
    );
    for (name, r) in [("current", &d.current), ("voltage", &d.voltage)] {
        println!(
            "{name:>7}: kp {:.5} ki {:.2} ({}) crossover {:.1} Hz, PM {:.1} deg, GM {} dB",
            r.gains.kp(),
            r.gains.ki(),
            r.gains.polarity(),
            r.achieved.crossover_hz,
            r.achieved.phase_margin_deg,
            r.achieved.gain_margin_db,
        );
    }
    for h in check_hierarchy(&params) {
        println!("{h}");
    }
    println!("\nf_hz,mag_db,phase_deg");
    for p in bode(&d.tc, 5e3, 80e3, 5)? {
        println!("{:.0},{:.3},{:.2}", p.f, p.magnitude_db, p.phase_deg);
    }
    Ok(())
}
