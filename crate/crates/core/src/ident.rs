//! Characterization from time-domain data: first-order time constants,
//! droop slopes and ramp rates, for simulated traces and measured CSVs alike.

use std::io::Read;

use thiserror::Error;

use crate::plant::ConverterParams;
use crate::scenarios;
use crate::simcore::{self, SimError};

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("signal has no detectable step at t = {t_step} s (change {delta} below noise floor)")]
    NoStep { t_step: f64, delta: f64 },
    #[error("step response does not reach the 63.2% level before settling; not first-order-like")]
    NonFirstOrder,
    #[error("trace does not cover [{from}, {to}] s")]
    NotCovered { from: f64, to: f64 },
    #[error("need at least {needed} samples in the fit window, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("x values are all identical; slope is undetermined")]
    RankDeficient,
    #[error("time and value columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("measurement file: {0}")]
    Measurement(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Fraction of a first-order step completed after one time constant.
pub const ONE_TAU_FRACTION: f64 = 0.632_120_558_828_557_7;
const PRE_STEP_SAMPLES: usize = 10;
const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFit {
    pub t_step: f64,
    pub y0: f64,
    pub y_inf: f64,
    /// Time from the step to the 63.2% crossing.
    pub tau: f64,
    /// `1/tau`: the bandwidth convention used for every reported bandwidth
    /// of the equivalent model.
    pub bw_paper: f64,
    /// `1/(2π·tau)`: the corner frequency of the fitted pole.
    pub bw_standard: f64,
    /// Time constant of a least-squares exponential fit over the same window.
    pub tau_lsq: f64,
    /// RMS deviation of the data from the least-squares exponential.
    pub rms_residual: f64,
}

impl StepFit {
    fn from_tau(
        t_step: f64,
        y0: f64,
        y_inf: f64,
        tau: f64,
        tau_lsq: f64,
        rms_residual: f64,
    ) -> Self {
        Self {
            t_step,
            y0,
            y_inf,
            tau,
            bw_paper: 1.0 / tau,
            bw_standard: 1.0 / (2.0 * std::f64::consts::PI * tau),
            tau_lsq,
            rms_residual,
        }
    }
}

fn check_lengths(t: &[f64], y: &[f64]) -> Result<(), IdentError> {
    if t.len() != y.len() {
        return Err(IdentError::LengthMismatch(t.len(), y.len()));
    }
    Ok(())
}

fn step_model(t: f64, t_step: f64, y0: f64, y_inf: f64, tau: f64) -> f64 {
    y0 + (y_inf - y0) * -(-(t - t_step) / tau).exp_m1()
}

/// Fits a first-order step by the single-crossing rule.
///
/// `y0` is the mean of the last 10 samples before `t_step`, `y_inf` the mean
/// over the final quarter of `[t_step, t_step + settle_window]`, and `tau` the
/// linearly interpolated time at which the signal first reaches
/// `y0 + 0.632·(y_inf − y0)`. Sampling need not be uniform.
pub fn fit_time_constant(
    t: &[f64],
    y: &[f64],
    t_step: f64,
    settle_window: f64,
) -> Result<StepFit, IdentError> {
    check_lengths(t, y)?;
    let t_end = t_step + settle_window;
    let first_after = t.iter().position(|&ti| ti >= t_step).unwrap_or(t.len());
    if first_after < PRE_STEP_SAMPLES || t.last().is_none_or(|&tl| tl < t_end * (1.0 - 1e-12)) {
        return Err(IdentError::NotCovered {
            from: t_step,
            to: t_end,
        });
    }
    let y0 = y[first_after - PRE_STEP_SAMPLES..first_after]
        .iter()
        .sum::<f64>()
        / PRE_STEP_SAMPLES as f64;

    let tail_from = t_end - 0.25 * settle_window;
    let tail: Vec<f64> = t
        .iter()
        .zip(y)
        .filter(|(&ti, _)| ti >= tail_from && ti <= t_end)
        .map(|(_, &v)| v)
        .collect();
    if tail.is_empty() {
        return Err(IdentError::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    let y_inf = tail.iter().sum::<f64>() / tail.len() as f64;

    let window: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(&ti, _)| ti >= t_step && ti <= t_end)
        .map(|(&a, &b)| (a, b))
        .collect();
    let full_scale = window.iter().map(|(_, v)| v.abs()).fold(y0.abs(), f64::max);
    let delta = y_inf - y0;
    if full_scale == 0.0 || delta.abs() < NOISE_FLOOR * full_scale {
        return Err(IdentError::NoStep { t_step, delta });
    }

    // Progress along the step, 0 at y0 and 1 at y_inf.
    let level = ONE_TAU_FRACTION;
    let progress = |v: f64| (v - y0) / delta;
    let mut prev = (t_step, 0.0);
    let mut crossing = None;
    // A crossing inside the tail means the window never settled.
    for &(ti, v) in window.iter().take_while(|(ti, _)| *ti < tail_from) {
        let g = progress(v);
        if g >= level {
            let (ta, ga) = prev;
            crossing = Some(if g == ga {
                ti
            } else {
                ta + (level - ga) * (ti - ta) / (g - ga)
            });
            break;
        }
        prev = (ti, g);
    }
    let t_cross = crossing.ok_or(IdentError::NonFirstOrder)?;
    let tau = t_cross - t_step;
    if !(tau > 0.0) {
        return Err(IdentError::NonFirstOrder);
    }

    let sse = |tau_c: f64| {
        window
            .iter()
            .map(|&(ti, v)| {
                let e = v - step_model(ti, t_step, y0, y_inf, tau_c);
                e * e
            })
            .sum::<f64>()
    };
    let tau_lsq = golden_section_log(sse, tau / 5.0, tau * 5.0);
    let rms_residual = (sse(tau_lsq) / window.len() as f64).sqrt();
    Ok(StepFit::from_tau(
        t_step,
        y0,
        y_inf,
        tau,
        tau_lsq,
        rms_residual,
    ))
}

/// Minimizes `f` over `[lo, hi]` in log space.
fn golden_section_log<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    (0.5 * (a + b)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopFit {
    /// Positive for voltage falling with load, V/W or V/A.
    pub slope: f64,
    /// No-load voltage, V.
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `v = intercept − slope·x`.
pub fn fit_droop_slope(points: &[(f64, f64)]) -> Result<DroopFit, IdentError> {
    let (b, a, r2) = least_squares(points.iter().copied())?;
    Ok(DroopFit {
        slope: -b,
        intercept: a,
        r_squared: r2,
    })
}

/// Returns `(slope, intercept, r²)` of `y = intercept + slope·x`.
fn least_squares<I: Iterator<Item = (f64, f64)> + Clone>(
    pts: I,
) -> Result<(f64, f64, f64), IdentError> {
    let n = pts.clone().count();
    if n < 2 {
        return Err(IdentError::TooFewSamples {
            needed: 2,
            found: n,
        });
    }
    let nf = n as f64;
    let mx = pts.clone().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.clone().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.clone().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pts.clone().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(IdentError::RankDeficient);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = pts.clone().map(|(_, y)| (y - my) * (y - my)).sum();
    let ss_res: f64 = pts
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r2))
}

/// Least-squares slope of `y` against `t` over `[t_start, t_end]`, in units/s.
pub fn fit_ramp_rate(t: &[f64], y: &[f64], t_start: f64, t_end: f64) -> Result<f64, IdentError> {
    check_lengths(t, y)?;
    let pts = t
        .iter()
        .zip(y)
        .filter(|(&ti, _)| ti >= t_start && ti <= t_end)
        .map(|(&a, &b)| (a, b));
    let found = pts.clone().count();
    if found < 3 {
        return Err(IdentError::TooFewSamples { needed: 3, found });
    }
    least_squares(pts).map(|(slope, _, _)| slope)
}

/// A measured record: a `t` column plus named signal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub t: Vec<f64>,
    pub signals: Vec<(String, Vec<f64>)>,
}

impl Measurement {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, IdentError> {
        let err = |m: String| IdentError::Measurement(m);
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let t_idx = headers
            .iter()
            .position(|h| h == "t")
            .ok_or_else(|| err("missing `t` column".into()))?;
        if headers.len() < 2 {
            return Err(err("need at least one signal column besides `t`".into()));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| err(format!("row {}: `{field}` is not a number", row + 2)))?;
                cols[k].push(v);
            }
        }
        let t = std::mem::take(&mut cols[t_idx]);
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(err("`t` must be strictly increasing".into()));
        }
        let signals = headers
            .iter()
            .zip(cols)
            .enumerate()
            .filter(|(k, _)| *k != t_idx)
            .map(|(_, (h, c))| (h.to_string(), c))
            .collect();
        Ok(Self { t, signals })
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        self.signals
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }
}

/// Numbers reproduced by running the characterization experiments on the
/// simulated model.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationReport {
    pub current_step: StepFit,
    pub droop_step: StepFit,
    pub droop: DroopFit,
    /// Load points and settled bus voltages behind `droop`.
    pub droop_points: Vec<(f64, f64)>,
    pub ramp_rate: f64,
    /// Time from the restore command until the bus is within 0.1 V of its
    /// final value.
    pub restore_time: f64,
}

impl CharacterizationReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        let mut push = |k: &str, v: f64| kv.push((k.to_string(), v.to_string()));
        push("current_tau_s", self.current_step.tau);
        push("current_bw_paper_hz", self.current_step.bw_paper);
        push("current_bw_standard_hz", self.current_step.bw_standard);
        push("droop_tau_s", self.droop_step.tau);
        push("droop_bw_paper_hz", self.droop_step.bw_paper);
        push("droop_bw_standard_hz", self.droop_step.bw_standard);
        push("droop_slope", self.droop.slope);
        push("droop_intercept_v", self.droop.intercept);
        push("droop_r_squared", self.droop.r_squared);
        push("ramp_rate_v_per_s", self.ramp_rate);
        push("restore_time_s", self.restore_time);
        kv
    }
}

/// Time after `t_from` at which `y` first comes within `band` of its final
/// sample.
pub fn settle_time(t: &[f64], y: &[f64], t_from: f64, band: f64) -> Option<f64> {
    let y_final = *y.last()?;
    t.iter()
        .zip(y)
        .find(|(&ti, &v)| ti > t_from && (v - y_final).abs() <= band)
        .map(|(&ti, _)| ti - t_from)
}

/// Settling window after the current-reference step, s.
pub const CURRENT_SETTLE: f64 = 0.5e-3;
/// Settling window after droop is enabled, s.
pub const DROOP_SETTLE: f64 = 50e-3;

/// Runs the characterization experiments on the simulated model: a 5 A
/// current-reference step, droop enable with its LPF transient, a droop
/// sweep over four load points, and the reference-restore ramp.
pub fn characterize_model(params: &ConverterParams) -> Result<CharacterizationReport, IdentError> {
    let trace = simcore::run_scenario(&scenarios::current_step(params))?;
    let current_step = fit_time_constant(
        &trace.t,
        &trace.i_l,
        scenarios::CURRENT_STEP_TIME,
        CURRENT_SETTLE,
    )?;

    let trace = simcore::run_scenario(&scenarios::droop_enable_and_restore(params))?;
    let droop_step = fit_time_constant(
        &trace.t,
        &trace.v_bus,
        scenarios::DROOP_ENABLE_TIME,
        DROOP_SETTLE,
    )?;
    let t_restore = scenarios::RESTORE_TIME;
    let ramp_rate = fit_ramp_rate(&trace.t, &trace.v_bus, t_restore + 0.2, t_restore + 1.0)?;
    let restore_time =
        settle_time(&trace.t, &trace.v_bus, t_restore, 0.1).ok_or(IdentError::NonFirstOrder)?;

    let mut droop_points = Vec::new();
    for p in scenarios::DROOP_SWEEP_POWERS {
        let sweep = scenarios::droop_settle(params, params.k_vp, p);
        let trace = simcore::run_scenario(&sweep)?;
        let t_end = sweep.t_end;
        let v = trace
            .window_mean("v_bus", 0.9 * t_end, t_end)
            .expect("window inside trace");
        droop_points.push((p, v));
    }
    let droop = fit_droop_slope(&droop_points)?;

    Ok(CharacterizationReport {
        current_step,
        droop_step,
        droop,
        droop_points,
        ramp_rate,
        restore_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Flat until `t_step`, then `y0 + a·(1 − e^{−(t−t_step)/tau})`.
    fn exp_step(
        tau: f64,
        dt: f64,
        t_step: f64,
        t_end: f64,
        y0: f64,
        a: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = (t_end / dt).round() as usize;
        let t: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let y = t
            .iter()
            .map(|&ti| {
                if ti <= t_step {
                    y0
                } else {
                    y0 + a * (1.0 - (-(ti - t_step) / tau).exp())
                }
            })
            .collect();
        (t, y)
    }

    #[test]
    fn current_loop_time_constant() {
        let (t, y) = exp_step(5e-5, 1e-6, 1e-4, 1e-4 + 1e-3, 0.0, 5.0);
        let fit = fit_time_constant(&t, &y, 1e-4, 1e-3).unwrap();
        assert_relative_eq!(fit.tau, 5e-5, max_relative = 1e-2);
        assert_relative_eq!(fit.bw_paper, 20e3, max_relative = 1e-2);
        assert_relative_eq!(fit.tau_lsq, 5e-5, max_relative = 1e-4);
    }

    #[test]
    fn droop_lpf_time_constant() {
        let (t, y) = exp_step(4.87e-3, 1e-5, 0.01, 0.07, 350.0, -60.0);
        let fit = fit_time_constant(&t, &y, 0.01, 0.05).unwrap();
        assert!((fit.bw_paper - 205.3).abs() < 2.0, "{}", fit.bw_paper);
        assert_eq!(fit.bw_paper, 1.0 / fit.tau);
    }

    #[test]
    fn constant_signal_has_no_step() {
        let t: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let y = vec![3.0; 100];
        assert!(matches!(
            fit_time_constant(&t, &y, 20.0, 50.0),
            Err(IdentError::NoStep { .. })
        ));
    }

    #[test]
    fn uncovered_window_rejected() {
        let (t, y) = exp_step(1.0, 0.1, 0.5, 5.0, 0.0, 1.0);
        assert!(matches!(
            fit_time_constant(&t, &y, 0.5, 50.0),
            Err(IdentError::NotCovered { .. })
        ));
        assert!(matches!(
            fit_time_constant(&t, &y, 0.2, 1.0),
            Err(IdentError::NotCovered { .. })
        ));
    }

    #[test]
    fn late_step_is_not_first_order() {
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&ti| if ti < 3.5 { 0.0 } else { 1.0 })
            .collect();
        let r = fit_time_constant(&t, &y, 1.0, 2.9);
        assert!(matches!(r, Err(IdentError::NonFirstOrder)), "{r:?}");
    }

    #[test]
    fn droop_lines() {
        let k = 500.0 / 60000.0;
        let pts: Vec<(f64, f64)> = (0..=8)
            .map(|i| {
                let x = 40.0 * i as f64;
                (x, 100.0 - k * x)
            })
            .collect();
        let fit = fit_droop_slope(&pts).unwrap();
        assert_relative_eq!(fit.slope, 8.333e-3, max_relative = 1e-4);
        assert_relative_eq!(fit.intercept, 100.0, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);

        let fit = fit_droop_slope(&[(0.0, 350.0), (3600.0, 340.0)]).unwrap();
        assert_relative_eq!(fit.slope, 10.0 / 3600.0, max_relative = 1e-12);

        assert!(matches!(
            fit_droop_slope(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(IdentError::RankDeficient)
        ));
    }

    #[test]
    fn ramp_rates() {
        let t: Vec<f64> = (0..=1200).map(|k| k as f64 * 1e-3).collect();
        let y: Vec<f64> = t.iter().map(|&ti| 290.0 + 50.0 * ti).collect();
        assert_relative_eq!(
            fit_ramp_rate(&t, &y, 0.0, 1.2).unwrap(),
            50.0,
            max_relative = 1e-9
        );
        let flat = vec![12.0; t.len()];
        assert_eq!(fit_ramp_rate(&t, &flat, 0.1, 0.5).unwrap(), 0.0);
        assert!(matches!(
            fit_ramp_rate(&t, &y, 0.1, 0.1005),
            Err(IdentError::TooFewSamples { needed: 3, .. })
        ));
    }

    #[test]
    fn measurement_csv() {
        let text = "t, i_l\n0,1\n0.5,2\n0.7,3\n";
        let m = Measurement::read_csv(text.as_bytes()).unwrap();
        assert_eq!(m.t, vec![0.0, 0.5, 0.7]);
        assert_eq!(m.signal("i_l").unwrap(), &[1.0, 2.0, 3.0]);
        assert!(Measurement::read_csv("x,y\n1,2\n".as_bytes()).is_err());
        assert!(Measurement::read_csv("t\n1\n".as_bytes()).is_err());
        assert!(Measurement::read_csv("t,y\n1,2\n1,3\n".as_bytes()).is_err());
    }
}
