//! Reduced-order stability of a droop source feeding a constant-power load
//! through a line inductance and bus capacitance.
//!
//! The network is stable while `C > L/(K·Re)`, equivalently `L < K·C·Re`,
//! where `K` is the droop resistance and `Re = v²/p` the magnitude of the
//! load's incremental negative impedance at the drooped voltage.

use thiserror::Error;

use crate::plant::ConverterParams;
use crate::simcore::SimTrace;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("droop drives the voltage to {v} V at {p} W")]
    VoltageCollapse { v: f64, p: f64 },
    #[error("sample rate {rate} Hz must exceed twice f_hi = {f_hi} Hz")]
    Undersampled { rate: f64, f_hi: f64 },
    #[error("band [{f_lo}, {f_hi}] Hz is empty or invalid")]
    InvalidBand { f_lo: f64, f_hi: f64 },
    #[error("trace is too short for one {window} s window")]
    TraceTooShort { window: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, StabilityError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(StabilityError::NonPositive { name, value })
    }
}

/// Magnitude of the incremental impedance `v²/p` of a constant-power load.
/// `None` at zero power, where the load is an open circuit.
pub fn equivalent_cpl_impedance(v: f64, p: f64) -> Option<f64> {
    if p == 0.0 {
        None
    } else {
        Some(v * v / p)
    }
}

/// Smallest bus capacitance that keeps the line stable, `L/(K·Re)`.
pub fn min_capacitance(l: f64, k: f64, re: f64) -> f64 {
    l / (k * re)
}

/// Largest line inductance that keeps the bus stable, `K·C·Re`.
pub fn max_inductance(k: f64, c: f64, re: f64) -> f64 {
    k * c * re
}

/// Droop-law bus voltage at load `p`.
pub fn drooped_voltage(params: &ConverterParams, p: f64) -> f64 {
    params.v_nl - params.k_vp * p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityAssessment {
    /// Power and drooped voltage the assessment was made at.
    pub p: f64,
    pub v: f64,
    pub c_min: f64,
    pub l_max: f64,
    pub re: f64,
    pub stable: bool,
    /// Predicted instability power; `None` when no instability exists below
    /// the search bound.
    pub p_crit: Option<f64>,
    /// `C / c_min`.
    pub margin: f64,
}

impl StabilityAssessment {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let p_crit = self
            .p_crit
            .map_or_else(|| "none".to_string(), |p| p.to_string());
        vec![
            ("p_w".into(), self.p.to_string()),
            ("v_v".into(), self.v.to_string()),
            ("re_ohm".into(), self.re.to_string()),
            ("c_min_f".into(), self.c_min.to_string()),
            ("l_max_h".into(), self.l_max.to_string()),
            ("margin".into(), self.margin.to_string()),
            ("stable".into(), self.stable.to_string()),
            ("p_crit_w".into(), p_crit),
        ]
    }
}

/// Evaluates the bound for line `l`, bus capacitance `c` and droop
/// resistance `k` at load `p` on the droop line of `params`.
pub fn assess(
    params: &ConverterParams,
    l: f64,
    c: f64,
    k: f64,
    p: f64,
) -> Result<StabilityAssessment, StabilityError> {
    positive("l", l)?;
    positive("c", c)?;
    positive("k", k)?;
    positive("p", p)?;
    let v = drooped_voltage(params, p);
    if !(v > 0.0) {
        return Err(StabilityError::VoltageCollapse { v, p });
    }
    let re = equivalent_cpl_impedance(v, p).expect("p > 0");
    let c_min = min_capacitance(l, k, re);
    Ok(StabilityAssessment {
        p,
        v,
        c_min,
        l_max: max_inductance(k, c, re),
        re,
        stable: c > c_min,
        p_crit: predict_instability_power(params, l, c, k)?,
        margin: c / c_min,
    })
}

/// Relative tolerance of the instability-power search.
pub const P_CRIT_RTOL: f64 = 1e-4;

/// Load power where the bus capacitance just meets the bound, searched on
/// `(0, p_upper]` with `p_upper` where the droop law reaches `v_nl/2`.
/// Without droop the bracket grows geometrically instead. `None` when the
/// network stays stable over the whole range.
pub fn predict_instability_power(
    params: &ConverterParams,
    l: f64,
    c: f64,
    k: f64,
) -> Result<Option<f64>, StabilityError> {
    positive("l", l)?;
    positive("c", c)?;
    positive("k", k)?;
    positive("v_nl", params.v_nl)?;
    if params.k_vp < 0.0 {
        return Err(StabilityError::NonPositive {
            name: "k_vp",
            value: params.k_vp,
        });
    }
    // Positive once the capacitance no longer meets the bound.
    let g = |p: f64| {
        let v = drooped_voltage(params, p);
        p * l / (k * v * v) - c
    };
    let p_upper = if params.k_vp > 0.0 {
        0.5 * params.v_nl / params.k_vp
    } else {
        let mut hi = 1.0;
        while g(hi) <= 0.0 {
            hi *= 2.0;
            if hi > 1e15 {
                return Ok(None);
            }
        }
        hi
    };
    Ok(bisect_first_root(g, p_upper))
}

/// Smallest sign change of `g` from non-positive to positive on `(0, hi]`.
fn bisect_first_root<G: Fn(f64) -> f64>(g: G, hi: f64) -> Option<f64> {
    const SCAN: usize = 1000;
    let mut a = 0.0;
    let mut b = None;
    for i in 1..=SCAN {
        let p = hi * i as f64 / SCAN as f64;
        if g(p) > 0.0 {
            b = Some(p);
            break;
        }
        a = p;
    }
    let mut b = b?;
    while b - a > 0.5 * P_CRIT_RTOL * b {
        let m = 0.5 * (a + b);
        if g(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Sliding-window peak-to-peak detector for growing bus oscillations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationDetector {
    /// Window length, s.
    pub window: f64,
    /// Onset threshold as a fraction of the nominal bus voltage.
    pub threshold: f64,
    /// Minimum ratio of a window's peak-to-peak to the previous one.
    pub min_growth: f64,
    /// Nominal bus voltage; taken from the first window when `None`.
    pub nominal: Option<f64>,
}

impl Default for OscillationDetector {
    fn default() -> Self {
        Self {
            window: 0.05,
            threshold: 0.02,
            min_growth: 1.0,
            nominal: None,
        }
    }
}

impl OscillationDetector {
    /// Time at the end of the first window whose detrended `v_bus`
    /// peak-to-peak exceeds the threshold without decaying from the
    /// previous window.
    pub fn detect(
        &self,
        trace: &SimTrace,
        f_lo: f64,
        f_hi: f64,
    ) -> Result<Option<f64>, StabilityError> {
        if !(f_lo > 0.0 && f_hi > f_lo && f_hi.is_finite()) {
            return Err(StabilityError::InvalidBand { f_lo, f_hi });
        }
        positive("window", self.window)?;
        let t = &trace.t;
        if t.len() < 3 {
            return Err(StabilityError::TraceTooShort {
                window: self.window,
            });
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let rate = 1.0 / dt;
        if rate <= 2.0 * f_hi {
            return Err(StabilityError::Undersampled { rate, f_hi });
        }
        // At least two periods of the slowest band frequency per window.
        let span = self.window.max(2.0 / f_lo);
        let n = (span / dt).round() as usize;
        if n < 3 || n >= t.len() {
            return Err(StabilityError::TraceTooShort { window: span });
        }
        let v = &trace.v_bus;
        let nominal = self
            .nominal
            .unwrap_or_else(|| (v[..n].iter().sum::<f64>() / n as f64).abs());
        let limit = self.threshold * nominal;
        let hop = (n / 2).max(1);

        let mut prev: Option<f64> = None;
        let mut start = 0;
        while start + n <= v.len() {
            let pp = detrended_peak_to_peak(&v[start..start + n]);
            if let Some(prev_pp) = prev {
                if pp > limit && pp >= self.min_growth * prev_pp {
                    return Ok(Some(t[start + n - 1]));
                }
            }
            prev = Some(pp);
            start += hop;
        }
        Ok(None)
    }
}

/// Peak-to-peak after removing the mean slope: first differences minus
/// their mean, integrated back up.
fn detrended_peak_to_peak(v: &[f64]) -> f64 {
    let m = v.len() - 1;
    let slope = (v[m] - v[0]) / m as f64;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut acc = 0.0;
    for w in v.windows(2) {
        acc += w[1] - w[0] - slope;
        lo = lo.min(acc);
        hi = hi.max(acc);
    }
    hi - lo
}

/// [`OscillationDetector::detect`] with the default 50 ms window, 2%
/// threshold and non-decaying envelope.
pub fn detect_oscillation(
    trace: &SimTrace,
    f_lo: f64,
    f_hi: f64,
) -> Result<Option<f64>, StabilityError> {
    OscillationDetector::default().detect(trace, f_lo, f_hi)
}

/// One cell of an `(l, c, k)` stability map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub l: f64,
    pub c: f64,
    pub k: f64,
    pub p_crit: Option<f64>,
    /// Stability at the evaluation power.
    pub stable: bool,
}

/// Evaluates every combination of the three axes at load `p`.
pub fn sweep(
    params: &ConverterParams,
    ls: &[f64],
    cs: &[f64],
    ks: &[f64],
    p: f64,
) -> Result<Vec<SweepRow>, StabilityError> {
    let mut rows = Vec::with_capacity(ls.len() * cs.len() * ks.len());
    for &l in ls {
        for &c in cs {
            for &k in ks {
                let a = assess(params, l, c, k, p)?;
                rows.push(SweepRow {
                    l,
                    c,
                    k,
                    p_crit: a.p_crit,
                    stable: a.stable,
                });
            }
        }
    }
    Ok(rows)
}
