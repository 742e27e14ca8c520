use std::path::PathBuf;

use droopkit::config::parse_config;
use droopkit::plant::ConverterParams;
use droopkit::scenarios;
use droopkit::simcore::{run_scenario, Scenario, SimError, SimTrace};

fn fixture(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap();
    parse_config(&text)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .1
}

fn assert_ramp_bounded(trace: &SimTrace, rate: f64) {
    let r = &trace.v_ref_ramped;
    for k in 1..r.len() {
        let dt = trace.t[k] - trace.t[k - 1];
        let step = (r[k] - r[k - 1]).abs();
        let resolution = 4.0 * f64::EPSILON * r[k].abs();
        assert!(
            step <= rate * dt * (1.0 + 1e-6) + resolution,
            "reference moved {step} V in {dt} s at t = {}",
            trace.t[k]
        );
    }
}

#[test]
fn fixtures_match_builders() {
    let p = ConverterParams::table1();
    let (params, _) = parse_config(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/table1.cfg"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(params, p);
    assert_eq!(fixture("fig8.cfg"), scenarios::current_step(&p));
    assert_eq!(
        fixture("fig10.cfg"),
        scenarios::droop_enable_and_restore(&p)
    );
    assert_eq!(
        fixture("fig12_k10.cfg"),
        scenarios::droop_settle(&p, 10.0 / 3600.0, 3600.0)
    );
    assert_eq!(
        fixture("fig12_k20.cfg"),
        scenarios::droop_settle(&p, 20.0 / 3600.0, 3600.0)
    );
    assert_eq!(
        fixture("fig14.cfg"),
        scenarios::cpl_ramp(&p, scenarios::CPL_BUS_C)
    );
    let double = fixture("fig14_double_c.cfg");
    assert_eq!(double.network.c_bus, 2.0 * scenarios::CPL_BUS_C);
    assert_eq!(double.events, fixture("fig14.cfg").events);
}

#[test]
fn ramp_limit_holds_on_fixture_traces() {
    for name in ["fig8.cfg", "fig10.cfg", "fig12_k20.cfg", "fig14.cfg"] {
        let s = fixture(name);
        let trace = run_scenario(&s).unwrap();
        assert_ramp_bounded(&trace, s.params.ramp);
    }
}

#[test]
fn empty_event_list_holds_initial_state() {
    let s = fixture("table1.cfg");
    assert!(s.events.is_empty());
    let trace = run_scenario(&s).unwrap();
    let v0 = trace.v_bus[0];
    assert!(trace.v_bus.iter().all(|v| (v - v0).abs() < 1e-6));
    assert!((v0 - s.params.v_nl).abs() < 1e-9);
}

#[test]
fn halving_dt_converges() {
    let p = ConverterParams::table1();
    let coarse = scenarios::droop_enable_and_restore(&p);
    let mut fine = coarse.clone();
    fine.dt = coarse.dt / 2.0;
    fine.decimation = coarse.decimation * 2;
    let t_end = coarse.t_end;
    let mean = |s: &Scenario| {
        run_scenario(s)
            .unwrap()
            .window_mean("v_bus", 0.9 * t_end, t_end)
            .unwrap()
    };
    let (a, b) = (mean(&coarse), mean(&fine));
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn step_larger_than_current_loop_allows_is_rejected() {
    let mut s = scenarios::droop_settle(&ConverterParams::table1(), 10.0 / 3600.0, 3600.0);
    s.dt = 1e-5;
    assert!(matches!(
        run_scenario(&s),
        Err(SimError::InvalidScenario(_))
    ));
}

#[test]
fn deterministic_traces() {
    let s = fixture("fig8.cfg");
    let (mut a, mut b) = (Vec::new(), Vec::new());
    run_scenario(&s).unwrap().write_csv(&mut a).unwrap();
    run_scenario(&s).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,v_bus,v_c,i_l,i_line,p_load,duty,v_ref_eff\n"));
}
