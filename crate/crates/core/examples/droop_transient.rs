//! Switches a 60 V/3600 W droop in at full load, then restores the bus
//! through the ramp limiter, and fits both transients.
//!
//! ```text
//! cargo run --release --example droop_transient
//! ```

use droopkit::ident::{fit_ramp_rate, fit_time_constant, settle_time};
use droopkit::scenarios::{droop_enable_and_restore, DROOP_ENABLE_TIME, RESTORE_TIME};
use droopkit::simcore::run_scenario;
use droopkit::ConverterParams;

fn main() -> Result<(), droopkit::Error> {
    let params = ConverterParams::table1();
    let trace = run_scenario(&droop_enable_and_restore(&params))?;
    let v = |t| trace.value_at("v_bus", t).unwrap();
    println!(
        "v_bus before droop {:.2} V, with droop {:.2} V, restored {:.2} V",
        v(0.9),
        v(1.9),
        v(3.4)
    );

    let fit = fit_time_constant(&trace.t, &trace.v_bus, DROOP_ENABLE_TIME, 0.05)?;
    println!(
        "droop transient: tau {:.3} ms, 1/tau {:.1} Hz, 1/(2 pi tau) {:.1} Hz, lsq tau {:.3} ms",
        fit.tau * 1e3,
        fit.bw_paper,
        fit.bw_standard,
        fit.tau_lsq * 1e3
    );
    let rate = fit_ramp_rate(
        &trace.t,
        &trace.v_bus,
        RESTORE_TIME + 0.2,
        RESTORE_TIME + 1.0,
    )?;
    let settle = settle_time(&trace.t, &trace.v_bus, RESTORE_TIME, 0.1).unwrap();
    println!("restore: {rate:.3} V/s, within 0.1 V after {settle:.3} s");
    Ok(())
}
