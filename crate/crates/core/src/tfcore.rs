//! Rational transfer functions in `s`, frequency response and loop margins.
//!
//! Coefficient convention: every polynomial in this crate is stored with the
//! highest power of `s` first, so `[a, b, c]` means `a·s² + b·s + c`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfError {
    #[error("denominator has no nonzero coefficient")]
    ZeroDenominator,
    #[error("evaluation at a pole (f = {f_hz} Hz)")]
    PoleEvaluation { f_hz: f64 },
    #[error("frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("1 + T(s) is identically zero")]
    DegenerateFeedback,
    #[error("no gain crossover between {f_lo} Hz and {f_hi} Hz")]
    NoCrossover { f_lo: f64, f_hi: f64 },
    #[error("invalid frequency range [{f_lo}, {f_hi}]")]
    InvalidRange { f_lo: f64, f_hi: f64 },
}

/// Polynomial helpers over highest-power-first coefficient slices.
pub mod poly {
    use num_complex::Complex64;

    pub fn eval(coeffs: &[f64], s: Complex64) -> Complex64 {
        coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        if a.is_empty() || b.is_empty() {
            return vec![0.0];
        }
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = a.len().max(b.len());
        let mut out = vec![0.0; n];
        for (k, &x) in a.iter().rev().enumerate() {
            out[n - 1 - k] += x;
        }
        for (k, &y) in b.iter().rev().enumerate() {
            out[n - 1 - k] += y;
        }
        out
    }

    /// Drops leading zeros; an all-zero polynomial becomes `[0.0]`.
    pub fn trim(coeffs: &[f64]) -> Vec<f64> {
        match coeffs.iter().position(|&c| c != 0.0) {
            Some(i) => coeffs[i..].to_vec(),
            None => vec![0.0],
        }
    }

    /// Sum of |c_k|·|s|^k, the scale against which a value of `eval` is
    /// compared when deciding whether it is numerically zero.
    pub fn magnitude_scale(coeffs: &[f64], s_abs: f64) -> f64 {
        coeffs.iter().fold(0.0, |acc, &c| acc * s_abs + c.abs())
    }
}

/// A rational function `num(s)/den(s)` kept in normalized form: leading
/// zeros trimmed, common factors of `s` removed, and the leading
/// denominator coefficient scaled to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: &[f64], den: &[f64]) -> Result<Self, TfError> {
        let mut den = poly::trim(den);
        if den == [0.0] {
            return Err(TfError::ZeroDenominator);
        }
        let mut num = poly::trim(num);
        if num == [0.0] {
            return Ok(Self {
                num,
                den: vec![1.0],
            });
        }
        // Exact cancellation of common roots at s = 0.
        while num.len() > 1 && den.len() > 1 && num.last() == Some(&0.0) && den.last() == Some(&0.0)
        {
            num.pop();
            den.pop();
        }
        let lead = den[0];
        for c in num.iter_mut() {
            *c /= lead;
        }
        for c in den.iter_mut() {
            *c /= lead;
        }
        Ok(Self { num, den })
    }

    pub fn unity() -> Self {
        Self::gain(1.0)
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: vec![k],
            den: vec![1.0],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Value at an arbitrary complex `s`.
    pub fn eval_s(&self, s: Complex64) -> Option<Complex64> {
        let d = poly::eval(&self.den, s);
        let scale = poly::magnitude_scale(&self.den, s.norm());
        if d.norm() <= 4.0 * f64::EPSILON * scale {
            return None;
        }
        Some(poly::eval(&self.num, s) / d)
    }

    /// Complex response at `s = j·2πf`.
    pub fn response(&self, f_hz: f64) -> Result<Complex64, TfError> {
        if !(f_hz > 0.0 && f_hz.is_finite()) {
            return Err(TfError::InvalidFrequency(f_hz));
        }
        self.eval_s(Complex64::new(0.0, 2.0 * PI * f_hz))
            .ok_or(TfError::PoleEvaluation { f_hz })
    }

    pub fn eval_freq(&self, f_hz: f64) -> Result<FrequencyPoint, TfError> {
        let h = self.response(f_hz)?;
        Ok(FrequencyPoint::from_response(f_hz, h))
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: poly::trim(&self.num.iter().map(|c| c * k).collect::<Vec<_>>()),
            den: self.den.clone(),
        }
    }

    pub fn series(&self, other: &Self) -> Self {
        Self::new(
            &poly::mul(&self.num, &other.num),
            &poly::mul(&self.den, &other.den),
        )
        .expect("product of nonzero denominators is nonzero")
    }

    /// `t / (1 + t)`.
    pub fn close_unity_feedback(&self) -> Result<Self, TfError> {
        let den = poly::add(&self.den, &self.num);
        if poly::trim(&den) == [0.0] {
            return Err(TfError::DegenerateFeedback);
        }
        Self::new(&self.num, &den)
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} / {:?}", self.num, self.den)
    }
}

pub fn series(a: &TransferFunction, b: &TransferFunction) -> TransferFunction {
    a.series(b)
}

pub fn close_unity_feedback(t: &TransferFunction) -> Result<TransferFunction, TfError> {
    t.close_unity_feedback()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPoint {
    pub f: f64,
    pub magnitude: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

impl FrequencyPoint {
    fn from_response(f: f64, h: Complex64) -> Self {
        let magnitude = h.norm();
        Self {
            f,
            magnitude,
            magnitude_db: 20.0 * magnitude.log10(),
            phase_deg: h.arg().to_degrees(),
        }
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_deg(mut a: f64) -> f64 {
    a %= 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

/// Logarithmically spaced frequencies including both endpoints.
pub fn log_grid(f_lo: f64, f_hi: f64, points_per_decade: usize) -> Vec<f64> {
    let decades = (f_hi / f_lo).log10();
    let n = ((decades * points_per_decade as f64).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            if i == n {
                f_hi
            } else {
                f_lo * 10f64.powf(decades * i as f64 / n as f64)
            }
        })
        .collect()
}

/// Frequency sweep with phase unwrapped continuously from the first point.
pub fn bode(
    tf: &TransferFunction,
    f_lo: f64,
    f_hi: f64,
    points_per_decade: usize,
) -> Result<Vec<FrequencyPoint>, TfError> {
    if !(f_lo > 0.0 && f_hi > f_lo && f_hi.is_finite()) {
        return Err(TfError::InvalidRange { f_lo, f_hi });
    }
    let mut out = Vec::new();
    let mut prev: Option<f64> = None;
    for f in log_grid(f_lo, f_hi, points_per_decade) {
        let mut p = tf.eval_freq(f)?;
        if let Some(last) = prev {
            p.phase_deg = last + wrap_deg(p.phase_deg - last);
        }
        prev = Some(p.phase_deg);
        out.push(p);
    }
    Ok(out)
}

pub fn write_bode_csv<W: Write>(mut w: W, points: &[FrequencyPoint]) -> io::Result<()> {
    writeln!(w, "f_hz,mag_db,phase_deg")?;
    for p in points {
        writeln!(w, "{},{},{}", p.f, p.magnitude_db, p.phase_deg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMargin {
    Finite(f64),
    Infinite,
}

impl fmt::Display for GainMargin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainMargin::Finite(db) => write!(f, "{db}"),
            GainMargin::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopMargins {
    pub crossover_hz: f64,
    pub phase_margin_deg: f64,
    pub gain_margin_db: GainMargin,
    /// More than one gain crossover was found; `crossover_hz` is the lowest.
    pub multiple_crossovers: bool,
}

const POINTS_PER_DECADE: usize = 200;
const CROSSOVER_REL_TOL: f64 = 1e-6;

fn bisect_log<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut g_lo = g(lo);
    while (hi - lo) > CROSSOVER_REL_TOL * lo * 1e-2 {
        let mid = (lo * hi).sqrt();
        let g_mid = g(mid);
        if (g_mid > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Gain crossover, phase margin and gain margin of an open loop `t`.
///
/// The crossover is located on a 200 point/decade log grid and refined by
/// bisection in log-frequency. Phase is unwrapped along the grid starting
/// from its principal value at `f_lo`; the phase margin is reported in
/// (-180, 180]. The gain margin is taken at the phase crossover closest to
/// instability (smallest |GM|), or infinite when the phase never reaches
/// -180° inside the range.
pub fn margins(t: &TransferFunction, f_lo: f64, f_hi: f64) -> Result<LoopMargins, TfError> {
    let sweep = bode(t, f_lo, f_hi, POINTS_PER_DECADE)?;
    let log_mag = |f: f64| t.response(f).map(|h| h.norm().ln()).unwrap_or(f64::NAN);

    // Sign changes of ln|T|; a run of exact zeros between opposite signs
    // counts once, a flat |T| = 1 never does.
    let mut crossings = Vec::new();
    let mut last_nonzero: Option<usize> = None;
    for (k, p) in sweep.iter().enumerate() {
        let b = p.magnitude.ln();
        if b == 0.0 {
            continue;
        }
        if let Some(j) = last_nonzero {
            let a = sweep[j].magnitude.ln();
            if (a > 0.0) != (b > 0.0) {
                if k == j + 1 {
                    let fc = bisect_log(log_mag, sweep[j].f, p.f);
                    // Continue the unwrapped phase from the left grid point.
                    let ph = t.eval_freq(fc)?.phase_deg;
                    let ph = sweep[j].phase_deg + wrap_deg(ph - sweep[j].phase_deg);
                    crossings.push((fc, ph));
                } else {
                    crossings.push((sweep[j + 1].f, sweep[j + 1].phase_deg));
                }
            }
        }
        last_nonzero = Some(k);
    }
    let (crossover_hz, phase_at_crossover) = *crossings
        .first()
        .ok_or(TfError::NoCrossover { f_lo, f_hi })?;

    // Phase crossovers: unwrapped phase passing through -180 + 360k.
    let shifted = |ph: f64| ph + 180.0;
    let mut gm: Option<f64> = None;
    for w in sweep.windows(2) {
        let (a, b) = (shifted(w[0].phase_deg), shifted(w[1].phase_deg));
        let k_a = (a / 360.0).floor();
        let k_b = (b / 360.0).floor();
        let boundary = if k_a != k_b {
            Some(360.0 * k_a.max(k_b))
        } else if a.rem_euclid(360.0) == 0.0 {
            Some(a)
        } else {
            None
        };
        if let Some(level) = boundary {
            let g = |f: f64| {
                let ph = t.eval_freq(f).map(|p| p.phase_deg).unwrap_or(f64::NAN);
                let ph = w[0].phase_deg + wrap_deg(ph - w[0].phase_deg);
                shifted(ph) - level
            };
            let fp = if g(w[0].f) == 0.0 {
                w[0].f
            } else {
                bisect_log(g, w[0].f, w[1].f)
            };
            let margin = -t.eval_freq(fp)?.magnitude_db;
            if gm.is_none_or(|m| margin.abs() < m.abs()) {
                gm = Some(margin);
            }
        }
    }

    Ok(LoopMargins {
        crossover_hz,
        phase_margin_deg: wrap_deg(180.0 + phase_at_crossover),
        gain_margin_db: gm.map_or(GainMargin::Infinite, GainMargin::Finite),
        multiple_crossovers: crossings.len() > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tf(n: &[f64], d: &[f64]) -> TransferFunction {
        TransferFunction::new(n, d).unwrap()
    }

    #[test]
    fn unity_evaluates_to_one() {
        let u = tf(&[1.0], &[1.0]);
        let h = u.response(123.0).unwrap();
        assert_eq!(h, Complex64::new(1.0, 0.0));
        let p = u.eval_freq(5.0).unwrap();
        assert_eq!(p.magnitude, 1.0);
        assert_eq!(p.phase_deg, 0.0);
    }

    #[test]
    fn integrator_at_one_rad_per_second() {
        let i = tf(&[1.0], &[1.0, 0.0]);
        let h = i.response(1.0 / (2.0 * PI)).unwrap();
        assert_relative_eq!(h.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(h.im, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn common_scaling_normalizes_identically() {
        assert_eq!(
            tf(&[2.0, 4.0], &[2.0, 4.0, 6.0]),
            tf(&[1.0, 2.0], &[1.0, 2.0, 3.0])
        );
        assert_eq!(tf(&[0.0, 0.0, 3.0], &[0.0, 3.0]), tf(&[1.0], &[1.0]));
    }

    #[test]
    fn zero_denominator_rejected() {
        assert_eq!(
            TransferFunction::new(&[1.0], &[0.0, 0.0]),
            Err(TfError::ZeroDenominator)
        );
        assert_eq!(
            TransferFunction::new(&[1.0], &[]),
            Err(TfError::ZeroDenominator)
        );
    }

    #[test]
    fn first_order_corner() {
        let p = tf(&[1.0], &[1.0, 1.0]).eval_freq(1.0 / (2.0 * PI)).unwrap();
        assert_relative_eq!(p.magnitude, 1.0 / 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(p.phase_deg, -45.0, max_relative = 1e-12);
        assert_relative_eq!(p.magnitude_db, 20.0 * p.magnitude.log10());
    }

    #[test]
    fn pole_evaluation_names_frequency() {
        let w0 = 2.0 * PI * 50.0;
        let res = tf(&[1.0], &[1.0, 0.0, w0 * w0]).eval_freq(50.0);
        assert_eq!(res, Err(TfError::PoleEvaluation { f_hz: 50.0 }));
    }

    #[test]
    fn series_inverse_pair_and_identity() {
        let integ = tf(&[1.0], &[1.0, 0.0]);
        let diff = tf(&[1.0, 0.0], &[1.0]);
        assert_eq!(series(&integ, &diff), TransferFunction::unity());
        let x = tf(&[3.0, 1.0], &[1.0, 5.0, 7.0]);
        assert_eq!(series(&TransferFunction::unity(), &x), x);
    }

    #[test]
    fn feedback_of_constant_and_integrator() {
        let half = TransferFunction::unity().close_unity_feedback().unwrap();
        assert_relative_eq!(half.response(10.0).unwrap().re, 0.5);
        let closed = tf(&[1.0], &[1.0, 0.0]).close_unity_feedback().unwrap();
        assert_eq!(closed, tf(&[1.0], &[1.0, 1.0]));
        assert_eq!(
            TransferFunction::gain(-1.0).close_unity_feedback(),
            Err(TfError::DegenerateFeedback)
        );
    }

    #[test]
    fn integrator_margins() {
        let k = 2.0 * PI * 100.0;
        let m = margins(&tf(&[k], &[1.0, 0.0]), 1.0, 1e4).unwrap();
        assert_relative_eq!(m.crossover_hz, 100.0, max_relative = 1e-6);
        assert_relative_eq!(m.phase_margin_deg, 90.0, epsilon = 1e-6);
        assert_eq!(m.gain_margin_db, GainMargin::Infinite);
        assert!(!m.multiple_crossovers);
    }

    #[test]
    fn flat_gain_has_no_crossover() {
        assert!(matches!(
            margins(&TransferFunction::unity(), 1.0, 1e3),
            Err(TfError::NoCrossover { .. })
        ));
    }

    #[test]
    fn third_order_gain_margin() {
        // K/(s+1)^3 with K = 8: phase crossover at w = sqrt(3), |T| = 1, GM = 0 dB.
        let t = tf(&[8.0], &[1.0, 3.0, 3.0, 1.0]);
        let m = margins(&t, 0.01, 10.0).unwrap();
        match m.gain_margin_db {
            GainMargin::Finite(g) => assert!(g.abs() < 1e-5, "gm = {g}"),
            GainMargin::Infinite => panic!("expected finite gm"),
        }
        // Gain crossover and phase crossover coincide: zero phase margin.
        assert!(m.phase_margin_deg.abs() < 1e-3);
    }

    #[test]
    fn bode_csv_header_and_order() {
        let pts = bode(&tf(&[1.0], &[1.0, 1.0]), 0.1, 10.0, 5).unwrap();
        let mut buf = Vec::new();
        write_bode_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("f_hz,mag_db,phase_deg"));
        let fs: Vec<f64> = lines
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(fs.len(), pts.len());
        assert!(fs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn unwrapping_tracks_past_minus_180() {
        // Four poles at -1: phase reaches -360 at high frequency.
        let t = tf(&[1.0], &[1.0, 4.0, 6.0, 4.0, 1.0]);
        let pts = bode(&t, 0.001, 100.0, 50).unwrap();
        let last = pts.last().unwrap().phase_deg;
        assert!(last < -340.0 && last > -360.0, "{last}");
    }
}
