//! Instability power over a grid of line inductance and bus capacitance.
//!
//! ```text
//! cargo run --example stability_map
//! ```

use droopkit::stability::sweep;
use droopkit::ConverterParams;

fn main() -> Result<(), droopkit::Error> {
    let params = ConverterParams::table1();
    let ls: Vec<f64> = (1..=4).map(|i| 380e-6 * i as f64).collect();
    let cs: Vec<f64> = (1..=4).map(|i| 15.4e-6 * i as f64).collect();
    println!("l_uh,c_uf,p_crit_w,stable_at_4600w");
    for r in sweep(&params, &ls, &cs, &[params.k_vi], 4600.0)? {
        let p = r
            .p_crit
            .map_or_else(|| "none".into(), |p| format!("{p:.0}"));
        println!("{:.0},{:.1},{p},{}", r.l * 1e6, r.c * 1e6, r.stable);
    }
    Ok(())
}
