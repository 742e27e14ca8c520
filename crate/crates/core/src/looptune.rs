//! PI synthesis by loop shaping, loop-gain assembly and the bandwidth
//! hierarchy audit.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::plant::{self, ConverterParams, OperatingPoint};
use crate::tfcore::{self, wrap_deg, LoopMargins, TfError, TransferFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("invalid PI gains kp = {kp}, ki = {ki} (need kp > 0, ki >= 0)")]
    InvalidGains { kp: f64, ki: f64 },
    #[error("plant magnitude is zero at {f_hz} Hz")]
    Untunable { f_hz: f64 },
    #[error("target crossover must be positive, got {0} Hz")]
    InvalidCrossover(f64),
    #[error("target phase margin must lie in (0, 180) degrees, got {0}")]
    InvalidPhaseMargin(f64),
    #[error(transparent)]
    Tf(#[from] TfError),
}

/// Sign of the controller in the loop. `Reverse` feeds the negated PI output
/// to the plant, which is what a plant whose high-frequency gain is negative
/// needs in order to be stabilized with positive gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Direct,
    Reverse,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Direct => 1.0,
            Polarity::Reverse => -1.0,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Direct => "direct",
            Polarity::Reverse => "reverse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    kp: f64,
    ki: f64,
    polarity: Polarity,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self, TuneError> {
        Self::with_polarity(kp, ki, Polarity::Direct)
    }

    pub fn with_polarity(kp: f64, ki: f64, polarity: Polarity) -> Result<Self, TuneError> {
        if !(kp > 0.0 && kp.is_finite() && ki >= 0.0 && ki.is_finite()) {
            return Err(TuneError::InvalidGains { kp, ki });
        }
        Ok(Self { kp, ki, polarity })
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn scaled(&self, k: f64) -> Result<Self, TuneError> {
        Self::with_polarity(self.kp * k, self.ki * k, self.polarity)
    }
}

/// `±(kp·s + ki)/s`.
pub fn pi_tf(g: &PiGains) -> TransferFunction {
    let sign = g.polarity.sign();
    TransferFunction::new(&[sign * g.kp, sign * g.ki], &[1.0, 0.0]).expect("den = s")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneReport {
    pub gains: PiGains,
    pub achieved: LoopMargins,
    pub target_f: f64,
    pub target_pm: f64,
    /// Both targets met by the closed-form solution.
    pub exact: bool,
}

impl TuneReport {
    pub fn key_values(&self, prefix: &str) -> Vec<(String, String)> {
        let k = |s: &str| format!("{prefix}{s}");
        vec![
            (k("kp"), self.gains.kp.to_string()),
            (k("ki"), self.gains.ki.to_string()),
            (k("polarity"), self.gains.polarity.to_string()),
            (k("target_f_hz"), self.target_f.to_string()),
            (k("target_pm_deg"), self.target_pm.to_string()),
            (k("crossover_hz"), self.achieved.crossover_hz.to_string()),
            (
                k("phase_margin_deg"),
                self.achieved.phase_margin_deg.to_string(),
            ),
            (
                k("gain_margin_db"),
                self.achieved.gain_margin_db.to_string(),
            ),
            (k("exact"), self.exact.to_string()),
        ]
    }
}

/// Decades searched on either side of the target when measuring the
/// achieved margins.
const MARGIN_SPAN: f64 = 100.0;

/// Synthesizes a PI controller placing the gain crossover of
/// `pi_tf(g)·plant` at `f_c` with phase margin `pm_target`.
///
/// At a single frequency the two conditions fix the complex value of the
/// controller, so the gains follow in closed form: with
/// `θ = pm_target − 180° − ∠plant`, `kp = cos θ/|plant|` and
/// `ki = −ω·sin θ/|plant|`. The polarity is chosen so that θ lands in the
/// PI's reachable phase range (−90°, 0]. When neither polarity can do that
/// (the plant already has too much lag at `f_c`), the PI zero is placed a
/// decade below `f_c`, `kp` is scaled for unity loop gain at `f_c`, the
/// polarity with the larger phase margin wins and `exact` is false.
pub fn tune_pi(
    plant: &TransferFunction,
    f_c: f64,
    pm_target: f64,
) -> Result<TuneReport, TuneError> {
    if !(f_c > 0.0 && f_c.is_finite()) {
        return Err(TuneError::InvalidCrossover(f_c));
    }
    if !(pm_target > 0.0 && pm_target < 180.0) {
        return Err(TuneError::InvalidPhaseMargin(pm_target));
    }
    let h = plant.response(f_c)?;
    let mag = h.norm();
    if mag == 0.0 || !mag.is_finite() {
        return Err(TuneError::Untunable { f_hz: f_c });
    }
    let w = 2.0 * PI * f_c;
    let plant_phase = h.arg().to_degrees();

    for polarity in [Polarity::Direct, Polarity::Reverse] {
        let offset = if polarity == Polarity::Reverse {
            180.0
        } else {
            0.0
        };
        let theta = wrap_deg(pm_target - 180.0 - plant_phase - offset);
        if theta > -90.0 && theta <= 0.0 {
            let th = theta.to_radians();
            let kp = th.cos() / mag;
            let ki = (-w * th.sin() / mag).max(0.0);
            let gains = PiGains::with_polarity(kp, ki, polarity)?;
            let achieved = achieved_margins(plant, &gains, f_c)?;
            return Ok(TuneReport {
                gains,
                achieved,
                target_f: f_c,
                target_pm: pm_target,
                exact: true,
            });
        }
    }

    // Zero one decade below crossover: |kp + ki/jω| = kp·√(1 + 0.01).
    let kp = 1.0 / (mag * (1.0f64 + 0.01).sqrt());
    let ki = kp * w / 10.0;
    let mut best: Option<(PiGains, f64)> = None;
    for polarity in [Polarity::Direct, Polarity::Reverse] {
        let gains = PiGains::with_polarity(kp, ki, polarity)?;
        let loop_h = pi_tf(&gains).response(f_c)? * h;
        let pm = wrap_deg(180.0 + loop_h.arg().to_degrees());
        if best.is_none_or(|(_, b)| pm > b) {
            best = Some((gains, pm));
        }
    }
    let (gains, _) = best.expect("two candidates");
    let achieved = achieved_margins(plant, &gains, f_c)?;
    Ok(TuneReport {
        gains,
        achieved,
        target_f: f_c,
        target_pm: pm_target,
        exact: false,
    })
}

fn achieved_margins(
    plant: &TransferFunction,
    g: &PiGains,
    f_c: f64,
) -> Result<LoopMargins, TfError> {
    let t = pi_tf(g).series(plant);
    tfcore::margins(&t, f_c / MARGIN_SPAN, f_c * MARGIN_SPAN)
}

/// `Tc(s) = Gid(s)·Gc(s)`.
pub fn loop_gain_current(plant_gid: &TransferFunction, gc: &PiGains) -> TransferFunction {
    plant_gid.series(&pi_tf(gc))
}

/// `Tv(s) = Gvi(s)·Gv(s)·Tci(s)`.
pub fn loop_gain_voltage(
    gvi: &TransferFunction,
    gv: &PiGains,
    tci: &TransferFunction,
) -> TransferFunction {
    gvi.series(&pi_tf(gv)).series(tci)
}

/// Both tuned loops of the converter at one operating point.
#[derive(Debug, Clone)]
pub struct LoopDesign {
    pub op: OperatingPoint,
    pub current: TuneReport,
    pub voltage: TuneReport,
    /// Current-loop gain.
    pub tc: TransferFunction,
    /// Closed current loop, the inner plant of the voltage loop.
    pub tci: TransferFunction,
    /// Voltage-loop gain.
    pub tv: TransferFunction,
}

/// Phase-margin targets used by [`design_loops`].
pub const CURRENT_PM_TARGET: f64 = 90.0;
pub const VOLTAGE_PM_TARGET: f64 = 45.0;

/// Tunes the current loop on `gid` at `f_i` and the voltage loop on
/// `gvi·Tci` at `f_v`, both at the operating point `(v_out, p_out)`.
pub fn design_loops(
    params: &ConverterParams,
    v_out: f64,
    p_out: f64,
) -> Result<LoopDesign, crate::Error> {
    let op = plant::solve_operating_point(params, v_out, p_out)?;
    let gid = plant::gid(params, &op);
    let current = tune_pi(&gid, params.f_i, CURRENT_PM_TARGET)?;
    let tc = loop_gain_current(&gid, &current.gains);
    let tci = tc.close_unity_feedback().map_err(TuneError::from)?;
    let gvi = plant::gvi(params, &op);
    let voltage = tune_pi(&gvi.series(&tci), params.f_v, VOLTAGE_PM_TARGET)?;
    let tv = loop_gain_voltage(&gvi, &voltage.gains, &tci);
    Ok(LoopDesign {
        op,
        current,
        voltage,
        tc,
        tci,
        tv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyCheck {
    pub lower: &'static str,
    pub lower_hz: f64,
    pub upper: &'static str,
    pub upper_hz: f64,
    pub strict: bool,
    pub pass: bool,
}

impl fmt::Display for HierarchyCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = if self.strict { "<" } else { "<=" };
        write!(
            f,
            "{} {} {} ({} {} {}): {}",
            self.lower,
            rel,
            self.upper,
            self.lower_hz,
            rel,
            self.upper_hz,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Audits `f_lpf ≤ f_v < f_i < f_sw`, innermost-last.
pub fn check_hierarchy(params: &ConverterParams) -> Vec<HierarchyCheck> {
    [
        ("f_lpf", params.f_lpf, "f_v", params.f_v, false),
        ("f_v", params.f_v, "f_i", params.f_i, true),
        ("f_i", params.f_i, "f_sw", params.f_sw, true),
    ]
    .into_iter()
    .map(
        |(lower, lower_hz, upper, upper_hz, strict)| HierarchyCheck {
            lower,
            lower_hz,
            upper,
            upper_hz,
            strict,
            pass: if strict {
                lower_hz < upper_hz
            } else {
                lower_hz <= upper_hz
            },
        },
    )
    .collect()
}
