//! Constant-power-load stability of a 760 uH line feeding a 30.8 uF bus:
//! the analytic bound, then ramped-load simulations with and without a
//! physical series resistance in the line.
//!
//! ```text
//! cargo run --release --example cpl_stability
//! ```

use droopkit::scenarios::{cpl_ramp, CPL_BUS_C, CPL_LINE_L};
use droopkit::simcore::run_scenario;
use droopkit::stability::{assess, detect_oscillation, predict_instability_power};
use droopkit::ConverterParams;

fn main() -> Result<(), droopkit::Error> {
    let params = ConverterParams::table1();
    let k = params.k_vi;
    let p_crit = predict_instability_power(&params, CPL_LINE_L, CPL_BUS_C, k)?;
    println!("predicted instability power: {p_crit:?} W");
    for p in [4000.0, 4600.0, 5000.0] {
        let a = assess(&params, CPL_LINE_L, CPL_BUS_C, k, p)?;
        println!(
            "{p:.0} W: v {:.2} V, Re {:.2} ohm, c_min {:.2} uF, margin {:.3}, stable {}",
            a.v,
            a.re,
            a.c_min * 1e6,
            a.margin,
            a.stable
        );
    }

    for (r_line, c_bus) in [
        (0.0, CPL_BUS_C),
        (0.0, 2.0 * CPL_BUS_C),
        (k, CPL_BUS_C),
        (k, 2.0 * CPL_BUS_C),
    ] {
        let mut s = cpl_ramp(&params, c_bus);
        s.network.r_line = r_line;
        let trace = run_scenario(&s)?;
        let onset = detect_oscillation(&trace, 100.0, 5000.0)?;
        let at = onset.and_then(|t| trace.value_at("p_load", t));
        match (onset, at) {
            (Some(t), Some(p)) => println!(
                "r_line {r_line} ohm, c_bus {:.1} uF: oscillation from t = {t:.3} s at {p:.0} W",
                c_bus * 1e6
            ),
            _ => println!(
                "r_line {r_line} ohm, c_bus {:.1} uF: no oscillation",
                c_bus * 1e6
            ),
        }
    }
    Ok(())
}
