//! Builders for the reference experiments run against the equivalent model.
//!
//! Each builder returns a ready-to-run [`Scenario`]; the shipped fixture
//! configs describe the same experiments in file form.

use crate::plant::ConverterParams;
use crate::simcore::{Action, DroopMode, Network, Scenario};

/// Time of the 5 A current-reference step, s.
pub const CURRENT_STEP_TIME: f64 = 1.0e-3;
/// Current reference before and after the step, A.
pub const CURRENT_STEP_LEVELS: (f64, f64) = (5.0, 10.0);

/// Droop enabled here in the droop/restore experiment, s.
pub const DROOP_ENABLE_TIME: f64 = 1.0;
/// Reference raised here to cancel the droop drop, s.
pub const RESTORE_TIME: f64 = 2.0;
/// Droop coefficient of the droop/restore experiment, V/W.
pub const RESTORE_DROOP: f64 = 60.0 / 3600.0;

/// Load step time in the steady-state droop runs, s.
pub const DROOP_LOAD_STEP_TIME: f64 = 0.1;
/// Load points of the droop sweep, W.
pub const DROOP_SWEEP_POWERS: [f64; 4] = [900.0, 1800.0, 2700.0, 3600.0];

/// Line inductance, bus capacitance and starting load of the CPL ramp.
pub const CPL_LINE_L: f64 = 760e-6;
pub const CPL_BUS_C: f64 = 30.8e-6;
pub const CPL_RAMP_START: f64 = 1.0;
pub const CPL_RAMP_FROM: f64 = 4000.0;
pub const CPL_RAMP_TO: f64 = 5400.0;
pub const CPL_RAMP_RATE: f64 = 1000.0;

/// Voltage loop opened and the inductor current stepped from 5 A to 10 A
/// at light load.
pub fn current_step(params: &ConverterParams) -> Scenario {
    let (i0, i1) = CURRENT_STEP_LEVELS;
    let mut s = Scenario::new(*params);
    // Load drawing about i0 from the source so the override starts bumpless.
    s.p_load = params.e_src * i0 - params.r_series() * i0 * i0;
    s.t_end = 1.6e-3;
    s.decimation = 1;
    s.with_event(0.5 * CURRENT_STEP_TIME, Action::SetCurrentRef(i0))
        .with_event(CURRENT_STEP_TIME, Action::SetCurrentRef(i1))
}

/// Full-load run: droop of 60 V at 3600 W switched in, then the reference
/// raised by the same 60 V through the ramp limiter.
pub fn droop_enable_and_restore(params: &ConverterParams) -> Scenario {
    let mut s = Scenario::new(*params);
    s.p_load = 3600.0;
    s.t_end = 3.5;
    s.decimation = 10;
    let v_restore = params.v_nl + RESTORE_DROOP * s.p_load;
    s.with_event(
        DROOP_ENABLE_TIME,
        Action::SetDroop {
            mode: DroopMode::Vp,
            coefficient: RESTORE_DROOP,
        },
    )
    .with_event(RESTORE_TIME, Action::SetVref(v_restore))
}

/// VP droop active from the start, CPL stepped from zero to `p_load`.
pub fn droop_settle(params: &ConverterParams, k_vp: f64, p_load: f64) -> Scenario {
    let mut s = Scenario::new(*params);
    s.droop_mode = DroopMode::Vp;
    s.droop_coeff = k_vp;
    s.t_end = 0.6;
    s.decimation = 10;
    s.with_event(DROOP_LOAD_STEP_TIME, Action::SetLoadPower(p_load))
}

/// CPL behind a lossless line, load ramped slowly through the predicted
/// instability power.
pub fn cpl_ramp(params: &ConverterParams, c_bus: f64) -> Scenario {
    let mut s = Scenario::new(*params);
    s.network = Network {
        l_line: CPL_LINE_L,
        r_line: 0.0,
        c_bus,
    };
    s.droop_mode = DroopMode::Vp;
    s.droop_coeff = params.k_vp;
    s.p_load = CPL_RAMP_FROM;
    s.t_end = CPL_RAMP_START + (CPL_RAMP_TO - CPL_RAMP_FROM) / CPL_RAMP_RATE + 0.6;
    s.decimation = 10;
    s.with_event(
        CPL_RAMP_START,
        Action::RampLoadPower {
            target: CPL_RAMP_TO,
            rate: CPL_RAMP_RATE,
        },
    )
}
