//! Fixed-step averaged simulation of the droop-controlled boost converter.
//!
//! Control structure, outermost first: ramp-limited voltage reference, minus
//! the low-pass-filtered droop drop, into a voltage PI producing the
//! inductor-current reference, into a current PI producing the duty cycle.
//! The power stage feeds a line inductance and bus capacitance loaded by a
//! constant-power load. The controller runs once per integration step and
//! its duty is held across the RK4 stages.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::looptune::{self, PiGains, TuneError};
use crate::plant::{self, ConverterParams, PlantError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("simulation diverged at t = {t} s")]
    Diverged { t: f64, trace: Box<SimTrace> },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Tune(#[from] TuneError),
}

pub const DUTY_MAX: f64 = 0.98;
pub const DEFAULT_I_MAX: f64 = 60.0;
pub const DEFAULT_V_MIN: f64 = 50.0;
pub const DEFAULT_DT: f64 = 1e-6;
pub const DEFAULT_DECIMATION: usize = 100;
/// Load power at which the simulation controller is designed.
pub const DESIGN_POWER: f64 = 3600.0;
pub const CURRENT_LOOP_PM: f64 = 85.0;
pub const VOLTAGE_LOOP_PM: f64 = 45.0;

/// Moves `prev` toward `target` by at most `rate·dt`, landing exactly on
/// `target` once within reach.
pub fn ramp_step(prev: f64, target: f64, rate: f64, dt: f64) -> f64 {
    let max_step = rate * dt;
    let diff = target - prev;
    if diff.abs() <= max_step * (1.0 + 1e-9) {
        target
    } else {
        prev + max_step.copysign(diff)
    }
}

/// Exact discretization of a first-order lag with time constant `1/f_lpf`.
pub fn lpf_step(state: f64, input: f64, f_lpf: f64, dt: f64) -> f64 {
    let alpha = -(-dt * f_lpf).exp_m1();
    state + (input - state) * alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DroopMode {
    #[default]
    None,
    /// Drop proportional to output power, V/W.
    Vp,
    /// Drop proportional to output current, V/A (a virtual resistance).
    Vi,
}

impl fmt::Display for DroopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DroopMode::None => "none",
            DroopMode::Vp => "vp",
            DroopMode::Vi => "vi",
        })
    }
}

impl FromStr for DroopMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DroopMode::None),
            "vp" => Ok(DroopMode::Vp),
            "vi" => Ok(DroopMode::Vi),
            other => Err(format!(
                "unknown droop mode `{other}` (expected none, vp or vi)"
            )),
        }
    }
}

pub fn droop_drop(mode: DroopMode, coefficient: f64, p_out: f64, i_out: f64) -> f64 {
    match mode {
        DroopMode::None => 0.0,
        DroopMode::Vp => coefficient * p_out,
        DroopMode::Vi => coefficient * i_out,
    }
}

/// Constant-power load current with a resistive crossover below `v_min`.
pub fn cpl_current(v_bus: f64, p: f64, v_min: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if v_bus >= v_min {
        p / v_bus
    } else {
        p * v_bus / (v_min * v_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub current: PiGains,
    pub voltage: PiGains,
}

/// Designs the simulation controller at the `DESIGN_POWER` point.
///
/// The current loop is tuned on the averaged duty-to-current plant with its
/// crossover at `f_i/2π` Hz, which makes the closed-loop time constant
/// `1/f_i`. The voltage loop is tuned on `Gvi·Tci` with crossover `f_v`.
pub fn design_control(params: &ConverterParams) -> Result<ControlGains, SimError> {
    let op = plant::solve_operating_point(params, params.v_nl, DESIGN_POWER)?;
    let gid = plant::gid_averaged(params, &op);
    let current = looptune::tune_pi(&gid, params.f_i / (2.0 * PI), CURRENT_LOOP_PM)?;
    let tci = looptune::loop_gain_current(&gid, &current.gains)
        .close_unity_feedback()
        .map_err(TuneError::from)?;
    let plant_v = plant::gvi(params, &op).series(&tci);
    let voltage = looptune::tune_pi(&plant_v, params.f_v, VOLTAGE_LOOP_PM)?;
    Ok(ControlGains {
        current: current.gains,
        voltage: voltage.gains,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlState {
    pub v_ref_cmd: f64,
    pub v_ref_ramped: f64,
    pub droop_lpf: f64,
    pub int_v: f64,
    pub int_i: f64,
    pub droop_mode: DroopMode,
    pub droop_coeff: f64,
    /// Current reference forced from outside; the voltage loop tracks it
    /// bumplessly while engaged.
    pub i_ref_override: Option<f64>,
}

impl ControlState {
    pub fn v_ref_eff(&self) -> f64 {
        self.v_ref_ramped - self.droop_lpf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkState {
    pub i_l: f64,
    pub v_c: f64,
    /// Converter output current (the line current).
    pub i_line: f64,
    pub v_bus: f64,
}

impl NetworkState {
    fn is_finite(&self) -> bool {
        self.i_l.is_finite()
            && self.v_c.is_finite()
            && self.i_line.is_finite()
            && self.v_bus.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    pub i_max: f64,
    pub duty_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            i_max: DEFAULT_I_MAX,
            duty_max: DUTY_MAX,
        }
    }
}

/// One controller update. Returns the duty to hold over the next step.
pub fn controller_step(
    ctl: &ControlState,
    meas: &NetworkState,
    gains: &ControlGains,
    params: &ConverterParams,
    limits: &ControlLimits,
    dt: f64,
) -> (f64, ControlState) {
    let mut next = *ctl;
    next.v_ref_ramped = ramp_step(ctl.v_ref_ramped, ctl.v_ref_cmd, params.ramp, dt);
    let p_out = meas.v_c * meas.i_line;
    let drop = droop_drop(ctl.droop_mode, ctl.droop_coeff, p_out, meas.i_line);
    next.droop_lpf = lpf_step(ctl.droop_lpf, drop, params.f_lpf, dt);

    let gv = &gains.voltage;
    let e_v = next.v_ref_eff() - meas.v_c;
    let i_ref = match ctl.i_ref_override {
        Some(i_ref) => {
            next.int_v = gv.polarity().sign() * i_ref - gv.kp() * e_v;
            i_ref
        }
        None => {
            let raw = gv.polarity().sign() * (gv.kp() * e_v + ctl.int_v);
            let clamped = raw.clamp(-limits.i_max, limits.i_max);
            if clamped == raw {
                next.int_v = ctl.int_v + gv.ki() * e_v * dt;
            }
            clamped
        }
    };

    let gi = &gains.current;
    let e_i = i_ref - meas.i_l;
    let raw = gi.polarity().sign() * (gi.kp() * e_i + ctl.int_i);
    let duty = raw.clamp(0.0, limits.duty_max);
    if duty == raw {
        next.int_i = ctl.int_i + gi.ki() * e_i * dt;
    }
    (duty, next)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Network {
    pub l_line: f64,
    pub r_line: f64,
    pub c_bus: f64,
}

impl Network {
    /// No line dynamics: the load hangs directly on the output capacitor.
    pub fn is_collapsed(&self) -> bool {
        self.l_line == 0.0 && self.c_bus == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    SetLoadPower(f64),
    /// Moves the load power toward `target` at `rate` W/s.
    RampLoadPower {
        target: f64,
        rate: f64,
    },
    SetDroop {
        mode: DroopMode,
        coefficient: f64,
    },
    SetVref(f64),
    EnableDroop,
    DisableDroop,
    /// Opens the voltage loop and commands the inductor current directly.
    SetCurrentRef(f64),
    ReleaseCurrentRef,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ConverterParams,
    pub network: Network,
    pub dt: f64,
    pub t_end: f64,
    /// Record every n-th integration step.
    pub decimation: usize,
    pub p_load: f64,
    pub v_ref: f64,
    pub droop_mode: DroopMode,
    pub droop_coeff: f64,
    pub limits: ControlLimits,
    pub v_min: f64,
    /// Controller gains; designed from `params` when absent.
    pub gains: Option<ControlGains>,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn new(params: ConverterParams) -> Self {
        Self {
            params,
            network: Network::default(),
            dt: DEFAULT_DT,
            t_end: 1.0,
            decimation: DEFAULT_DECIMATION,
            p_load: 0.0,
            v_ref: params.v_nl,
            droop_mode: DroopMode::None,
            droop_coeff: 0.0,
            limits: ControlLimits::default(),
            v_min: DEFAULT_V_MIN,
            gains: None,
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, t: f64, action: Action) -> Self {
        self.events.push(Event { t, action });
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let dt_max = 1.0 / (20.0 * self.params.f_i);
        if self.dt > dt_max * (1.0 + 1e-12) {
            return bad(format!("dt = {} exceeds 1/(20·f_i) = {dt_max}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.decimation == 0 {
            return bad("decimation must be at least 1".into());
        }
        let n = &self.network;
        if n.l_line < 0.0 || n.r_line < 0.0 || n.c_bus < 0.0 {
            return bad("network values must be non-negative".into());
        }
        if (n.l_line > 0.0) != (n.c_bus > 0.0) {
            return bad("l_line and c_bus must both be positive or both zero".into());
        }
        if n.is_collapsed() && n.r_line != 0.0 {
            return bad("r_line requires a line inductance and bus capacitance".into());
        }
        if !(self.p_load >= 0.0) {
            return bad(format!("p_load must be non-negative, got {}", self.p_load));
        }
        if !(self.droop_coeff >= 0.0) {
            return bad(format!(
                "droop_coeff must be non-negative, got {}",
                self.droop_coeff
            ));
        }
        if !(self.limits.i_max > 0.0) || !(self.v_min > 0.0) {
            return bad("i_max and v_min must be positive".into());
        }
        if !(self.limits.duty_max > 0.0 && self.limits.duty_max < 1.0) {
            return bad("duty_max must lie in (0, 1)".into());
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("events must be sorted by time".into());
        }
        for ev in &self.events {
            if !(ev.t >= 0.0 && ev.t.is_finite()) {
                return bad(format!("event time {} is invalid", ev.t));
            }
            let ok = match ev.action {
                Action::SetLoadPower(p) => p >= 0.0,
                Action::RampLoadPower { target, rate } => target >= 0.0 && rate > 0.0,
                Action::SetDroop { coefficient, .. } => coefficient >= 0.0,
                Action::SetVref(v) => v > 0.0,
                Action::SetCurrentRef(i) => i.is_finite(),
                _ => true,
            };
            if !ok {
                return bad(format!("event at t = {} has invalid arguments", ev.t));
            }
        }
        Ok(())
    }

    /// Largest load power the scenario schedules.
    pub fn peak_load_power(&self) -> f64 {
        self.events
            .iter()
            .filter_map(|e| match e.action {
                Action::SetLoadPower(p) => Some(p),
                Action::RampLoadPower { target, .. } => Some(target),
                _ => None,
            })
            .fold(self.p_load, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceAnnotation {
    pub t: f64,
    pub message: String,
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "t",
    "v_bus",
    "v_c",
    "i_l",
    "i_line",
    "p_load",
    "duty",
    "v_ref_eff",
];

/// Uniformly sampled simulation record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub v_bus: Vec<f64>,
    pub v_c: Vec<f64>,
    pub i_l: Vec<f64>,
    pub i_line: Vec<f64>,
    pub p_load: Vec<f64>,
    pub duty: Vec<f64>,
    pub v_ref_eff: Vec<f64>,
    /// Ramp-limiter output at each sample.
    pub v_ref_ramped: Vec<f64>,
    pub annotations: Vec<TraceAnnotation>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        Some(match name {
            "t" => &self.t,
            "v_bus" => &self.v_bus,
            "v_c" => &self.v_c,
            "i_l" => &self.i_l,
            "i_line" => &self.i_line,
            "p_load" => &self.p_load,
            "duty" => &self.duty,
            "v_ref_eff" => &self.v_ref_eff,
            "v_ref_ramped" => &self.v_ref_ramped,
            _ => return None,
        })
    }

    /// Mean of a column over samples with `t0 <= t <= t1`.
    pub fn window_mean(&self, name: &str, t0: f64, t1: f64) -> Option<f64> {
        let col = self.column(name)?;
        let (sum, n) = self
            .t
            .iter()
            .zip(col)
            .filter(|(&t, _)| t >= t0 && t <= t1)
            .fold((0.0, 0usize), |(s, n), (_, &v)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Value at the first sample with `t >= at`.
    pub fn value_at(&self, name: &str, at: f64) -> Option<f64> {
        let col = self.column(name)?;
        let idx = self.t.iter().position(|&t| t >= at)?;
        Some(col[idx])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                self.t[k],
                self.v_bus[k],
                self.v_c[k],
                self.i_l[k],
                self.i_line[k],
                self.p_load[k],
                self.duty[k],
                self.v_ref_eff[k]
            )?;
        }
        Ok(())
    }
}

/// Steady state of the whole system for a given reference, load and droop.
fn initial_state(s: &Scenario) -> Result<(NetworkState, f64), SimError> {
    let p = s.p_load;
    let r = s.network.r_line;
    let mode = s.droop_mode;
    let k = s.droop_coeff;
    // Fixed point on the bus voltage: v_c = v_ref − drop(v_c, i),
    // i = cpl(v_bus), v_bus = v_c − r·i.
    let mut v_bus = s.v_ref;
    for _ in 0..500 {
        let i_out = cpl_current(v_bus, p, s.v_min);
        let v_c = v_bus + r * i_out;
        let target_vc = s.v_ref - droop_drop(mode, k, v_c * i_out, i_out);
        let next_bus = target_vc - r * i_out;
        let done = (next_bus - v_bus).abs() < 1e-13 * s.v_ref;
        v_bus = 0.5 * (v_bus + next_bus);
        if done {
            break;
        }
    }
    let i_out = cpl_current(v_bus, p, s.v_min);
    let v_c_final = v_bus + r * i_out;
    if !(v_bus > 0.0) {
        return Err(SimError::InvalidScenario("no initial steady state".into()));
    }
    let op = plant::solve_operating_point(&s.params, v_c_final, v_c_final * i_out)?;
    Ok((
        NetworkState {
            i_l: op.i_l,
            v_c: v_c_final,
            i_line: i_out,
            v_bus,
        },
        op.duty,
    ))
}

#[derive(Clone, Copy)]
struct Deriv {
    i_l: f64,
    v_c: f64,
    i_line: f64,
    v_bus: f64,
}

struct Plant<'a> {
    params: &'a ConverterParams,
    network: &'a Network,
    v_min: f64,
}

impl Plant<'_> {
    fn output_current(&self, x: &NetworkState, p: f64) -> f64 {
        if self.network.is_collapsed() {
            cpl_current(x.v_c, p, self.v_min)
        } else {
            x.i_line
        }
    }

    fn deriv(&self, x: &NetworkState, duty: f64, p: f64) -> Deriv {
        let pr = self.params;
        let u = 1.0 - duty;
        let i_out = self.output_current(x, p);
        let d_il = (pr.e_src - x.i_l * pr.r_series() - u * x.v_c) / pr.l_ind;
        let d_vc = (u * x.i_l - i_out) / pr.c_out;
        if self.network.is_collapsed() {
            Deriv {
                i_l: d_il,
                v_c: d_vc,
                i_line: 0.0,
                v_bus: 0.0,
            }
        } else {
            let n = self.network;
            Deriv {
                i_l: d_il,
                v_c: d_vc,
                i_line: (x.v_c - n.r_line * x.i_line - x.v_bus) / n.l_line,
                v_bus: (x.i_line - cpl_current(x.v_bus, p, self.v_min)) / n.c_bus,
            }
        }
    }

    /// Fills the algebraic outputs of a collapsed network.
    fn complete(&self, mut x: NetworkState, p: f64) -> NetworkState {
        if self.network.is_collapsed() {
            x.v_bus = x.v_c;
            x.i_line = cpl_current(x.v_c, p, self.v_min);
        }
        x
    }

    fn rk4(
        &self,
        x: &NetworkState,
        duty: f64,
        load: &LoadProfile,
        t: f64,
        dt: f64,
    ) -> NetworkState {
        let add = |x: &NetworkState, k: &Deriv, h: f64| NetworkState {
            i_l: x.i_l + h * k.i_l,
            v_c: x.v_c + h * k.v_c,
            i_line: x.i_line + h * k.i_line,
            v_bus: x.v_bus + h * k.v_bus,
        };
        let p0 = load.power_at(t);
        let pm = load.power_at(t + 0.5 * dt);
        let p1 = load.power_at(t + dt);
        let k1 = self.deriv(x, duty, p0);
        let k2 = self.deriv(&add(x, &k1, 0.5 * dt), duty, pm);
        let k3 = self.deriv(&add(x, &k2, 0.5 * dt), duty, pm);
        let k4 = self.deriv(&add(x, &k3, dt), duty, p1);
        let sum = Deriv {
            i_l: k1.i_l + 2.0 * k2.i_l + 2.0 * k3.i_l + k4.i_l,
            v_c: k1.v_c + 2.0 * k2.v_c + 2.0 * k3.v_c + k4.v_c,
            i_line: k1.i_line + 2.0 * k2.i_line + 2.0 * k3.i_line + k4.i_line,
            v_bus: k1.v_bus + 2.0 * k2.v_bus + 2.0 * k3.v_bus + k4.v_bus,
        };
        self.complete(add(x, &sum, dt / 6.0), p1)
    }
}

/// Piecewise-linear load power: a level plus an optional ramp toward a target.
#[derive(Debug, Clone, Copy)]
struct LoadProfile {
    p0: f64,
    t0: f64,
    target: f64,
    rate: f64,
}

impl LoadProfile {
    fn constant(p: f64, t: f64) -> Self {
        Self {
            p0: p,
            t0: t,
            target: p,
            rate: 0.0,
        }
    }

    fn power_at(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            return self.p0;
        }
        let moved = self.rate * (t - self.t0).max(0.0);
        if self.target >= self.p0 {
            (self.p0 + moved).min(self.target)
        } else {
            (self.p0 - moved).max(self.target)
        }
    }
}

/// Flags a sustained large bus-voltage swing, the point where the real
/// converter's protection would disconnect it.
struct TripMonitor {
    block_len: usize,
    count: usize,
    lo: f64,
    hi: f64,
    hot_blocks: usize,
    needed_blocks: usize,
    threshold: f64,
    fired: bool,
}

impl TripMonitor {
    const BLOCK: f64 = 10e-3;
    const HOLD: f64 = 0.2;
    const FRACTION: f64 = 0.2;

    fn new(dt: f64, v_nominal: f64) -> Self {
        Self {
            block_len: ((Self::BLOCK / dt).round() as usize).max(1),
            count: 0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            hot_blocks: 0,
            needed_blocks: (Self::HOLD / Self::BLOCK).round() as usize,
            threshold: Self::FRACTION * v_nominal,
            fired: false,
        }
    }

    fn push(&mut self, t: f64, v: f64) -> Option<TraceAnnotation> {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
        self.count += 1;
        if self.count < self.block_len {
            return None;
        }
        let p2p = self.hi - self.lo;
        self.count = 0;
        self.lo = f64::INFINITY;
        self.hi = f64::NEG_INFINITY;
        if p2p > self.threshold {
            self.hot_blocks += 1;
        } else {
            self.hot_blocks = 0;
        }
        if !self.fired && self.hot_blocks >= self.needed_blocks {
            self.fired = true;
            return Some(TraceAnnotation {
                t,
                message: format!(
                    "protective trip: v_bus peak-to-peak above {} V for {} s",
                    self.threshold,
                    Self::HOLD
                ),
            });
        }
        None
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<SimTrace, SimError> {
    scenario.validate()?;
    let params = &scenario.params;
    let gains = match scenario.gains {
        Some(g) => g,
        None => design_control(params)?,
    };
    let (mut x, duty0) = initial_state(scenario)?;
    let mut ctl = ControlState {
        v_ref_cmd: scenario.v_ref,
        v_ref_ramped: scenario.v_ref,
        droop_lpf: droop_drop(
            scenario.droop_mode,
            scenario.droop_coeff,
            x.v_c * x.i_line,
            x.i_line,
        ),
        int_v: gains.voltage.polarity().sign() * x.i_l,
        int_i: gains.current.polarity().sign() * duty0,
        droop_mode: scenario.droop_mode,
        droop_coeff: scenario.droop_coeff,
        i_ref_override: None,
    };
    // Droop mode remembered across disable/enable.
    let mut last_mode = scenario.droop_mode;
    let mut load = LoadProfile::constant(scenario.p_load, 0.0);
    let plant = Plant {
        params,
        network: &scenario.network,
        v_min: scenario.v_min,
    };
    let dt = scenario.dt;
    let n_steps = (scenario.t_end / dt).round() as usize;
    let mut trace = SimTrace::default();
    let mut monitor = TripMonitor::new(dt, params.v_nl);
    let mut next_event = 0;
    let mut duty;

    for n in 0..=n_steps {
        let t = n as f64 * dt;
        while next_event < scenario.events.len() && scenario.events[next_event].t <= t + 1e-9 * dt {
            let ev = scenario.events[next_event];
            let p_now = load.power_at(t);
            match ev.action {
                Action::SetLoadPower(p) => load = LoadProfile::constant(p, t),
                Action::RampLoadPower { target, rate } => {
                    load = LoadProfile {
                        p0: p_now,
                        t0: t,
                        target,
                        rate,
                    }
                }
                Action::SetDroop { mode, coefficient } => {
                    ctl.droop_mode = mode;
                    ctl.droop_coeff = coefficient;
                    last_mode = mode;
                }
                Action::SetVref(v) => ctl.v_ref_cmd = v,
                Action::EnableDroop => ctl.droop_mode = last_mode,
                Action::DisableDroop => ctl.droop_mode = DroopMode::None,
                Action::SetCurrentRef(i) => ctl.i_ref_override = Some(i),
                Action::ReleaseCurrentRef => ctl.i_ref_override = None,
            }
            next_event += 1;
        }
        x = plant.complete(x, load.power_at(t));

        let (d, next_ctl) = controller_step(&ctl, &x, &gains, params, &scenario.limits, dt);
        duty = d;
        if n % scenario.decimation == 0 {
            trace.t.push(t);
            trace.v_bus.push(x.v_bus);
            trace.v_c.push(x.v_c);
            trace.i_l.push(x.i_l);
            trace.i_line.push(x.i_line);
            trace.p_load.push(load.power_at(t));
            trace.duty.push(duty);
            trace.v_ref_eff.push(next_ctl.v_ref_eff());
            trace.v_ref_ramped.push(next_ctl.v_ref_ramped);
        }
        if let Some(a) = monitor.push(t, x.v_bus) {
            trace.annotations.push(a);
        }
        ctl = next_ctl;
        if n == n_steps {
            break;
        }
        x = plant.rk4(&x, duty, &load, t, dt);
        if !x.is_finite() {
            return Err(SimError::Diverged {
                t: t + dt,
                trace: Box::new(trace),
            });
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ramp_fixed_point_and_clamp() {
        assert_eq!(ramp_step(350.0, 350.0, 50.0, 1e-3), 350.0);
        assert_eq!(ramp_step(349.999, 350.0, 50.0, 1e-3), 350.0);
        assert_eq!(ramp_step(350.0, 340.0, 50.0, 1e-3), 350.0 - 0.05);
    }

    #[test]
    fn ramp_restores_sixty_volts_in_1_2_s() {
        let dt = 1e-3;
        let mut v = 290.0;
        let mut steps = 0;
        while v != 350.0 {
            v = ramp_step(v, 350.0, 50.0, dt);
            steps += 1;
            assert!(steps < 2000);
        }
        assert_eq!(steps, 1200);
    }

    #[test]
    fn lpf_properties() {
        assert_eq!(lpf_step(12.5, 12.5, 200.0, 1e-6), 12.5);
        assert!((lpf_step(0.0, 60.0, 200.0, 10.0) - 60.0).abs() < 1e-9);
        // One time constant in many small steps.
        let dt = 1e-6;
        let mut y = 0.0;
        for _ in 0..5000 {
            y = lpf_step(y, 60.0, 200.0, dt);
        }
        assert_relative_eq!(y, 60.0 * (1.0 - (-1.0f64).exp()), max_relative = 1e-9);
        assert!((y - 37.9).abs() < 0.05);
    }

    #[test]
    fn droop_laws() {
        assert_relative_eq!(droop_drop(DroopMode::Vp, 10.0 / 3600.0, 3600.0, 0.0), 10.0);
        assert_eq!(droop_drop(DroopMode::Vp, 1000.0 / 60000.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(
            droop_drop(DroopMode::Vp, 500.0 / 60000.0, 320.0, 0.0),
            2.6667,
            epsilon = 1e-4
        );
        assert_eq!(droop_drop(DroopMode::Vi, 1.0, 500.0, 7.0), 7.0);
        assert_eq!(droop_drop(DroopMode::None, 1.0, 500.0, 7.0), 0.0);
    }

    #[test]
    fn cpl_current_values() {
        assert_relative_eq!(cpl_current(350.0, 3600.0, 50.0), 10.2857, epsilon = 1e-4);
        assert_eq!(cpl_current(123.0, 0.0, 50.0), 0.0);
        // Continuous at the resistive crossover.
        let a = cpl_current(50.0, 1000.0, 50.0);
        let b = cpl_current(50.0 - 1e-9, 1000.0, 50.0);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn cpl_incremental_impedance_by_finite_difference() {
        let (v, p, h) = (337.0, 4600.0, 1e-4);
        let di = cpl_current(v + h, p, 50.0) - cpl_current(v - h, p, 50.0);
        let z = 2.0 * h / di;
        assert_relative_eq!(z, -v * v / p, max_relative = 1e-6);
        assert!((z + 24.7).abs() < 0.05);
    }

    #[test]
    fn controller_equilibrium_is_stationary() {
        let params = ConverterParams::table1();
        let gains = design_control(&params).unwrap();
        let ctl = ControlState {
            v_ref_cmd: 350.0,
            v_ref_ramped: 350.0,
            droop_lpf: 0.0,
            int_v: 20.0,
            int_i: 0.6,
            droop_mode: DroopMode::None,
            droop_coeff: 0.0,
            i_ref_override: None,
        };
        let meas = NetworkState {
            i_l: 20.0,
            v_c: 350.0,
            i_line: 7.0,
            v_bus: 350.0,
        };
        let (duty, next) = controller_step(
            &ctl,
            &meas,
            &gains,
            &params,
            &ControlLimits::default(),
            1e-6,
        );
        assert_eq!(next, ctl);
        assert_eq!(duty, 0.6);
    }

    #[test]
    fn voltage_integrator_freezes_on_clamp() {
        let params = ConverterParams::table1();
        let gains = design_control(&params).unwrap();
        let ctl = ControlState {
            v_ref_cmd: 350.0,
            v_ref_ramped: 350.0,
            droop_lpf: 0.0,
            int_v: 59.0,
            int_i: 0.6,
            droop_mode: DroopMode::None,
            droop_coeff: 0.0,
            i_ref_override: None,
        };
        let meas = NetworkState {
            i_l: 20.0,
            v_c: 300.0,
            i_line: 7.0,
            v_bus: 300.0,
        };
        let (_, next) = controller_step(
            &ctl,
            &meas,
            &gains,
            &params,
            &ControlLimits::default(),
            1e-6,
        );
        assert_eq!(next.int_v, 59.0);
    }

    #[test]
    fn designed_gains_are_direct_and_positive() {
        let g = design_control(&ConverterParams::table1()).unwrap();
        assert_eq!(g.current.polarity(), looptune::Polarity::Direct);
        assert_eq!(g.voltage.polarity(), looptune::Polarity::Direct);
    }

    #[test]
    fn scenario_validation() {
        let p = ConverterParams::table1();
        let mut s = Scenario::new(p);
        s.dt = 1e-5;
        assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
        let mut s = Scenario::new(p);
        s.network.l_line = 1e-4;
        assert!(s.validate().is_err());
        let s = Scenario::new(p)
            .with_event(2.0, Action::SetVref(360.0))
            .with_event(1.0, Action::SetVref(350.0));
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_scenario_holds_initial_condition() {
        let mut s = Scenario::new(ConverterParams::table1());
        s.t_end = 0.01;
        s.p_load = 1000.0;
        let trace = run_scenario(&s).unwrap();
        assert_eq!(trace.len(), 101);
        for v in &trace.v_bus {
            assert!((v - 350.0).abs() < 1e-6, "{v}");
        }
        let spacing = trace.t[1] - trace.t[0];
        assert!(trace
            .t
            .windows(2)
            .all(|w| ((w[1] - w[0]) - spacing).abs() < 1e-12));
    }

    #[test]
    fn trace_csv_layout() {
        let mut s = Scenario::new(ConverterParams::table1());
        s.t_end = 1e-3;
        let trace = run_scenario(&s).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("t,v_bus,v_c,i_l,i_line,p_load,duty,v_ref_eff")
        );
        assert!(lines.all(|l| l.split(',').count() == 8));
    }
}
