//! Converter parameters, steady-state operating point and small-signal plants.

use thiserror::Error;

use crate::tfcore::TransferFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("source voltage {e_src} V must be below the no-load reference {v_nl} V")]
    NotBoost { e_src: f64, v_nl: f64 },
    #[error("bandwidth hierarchy violated: {lower} = {lower_hz} Hz must be {relation} {upper} = {upper_hz} Hz")]
    Hierarchy {
        lower: &'static str,
        lower_hz: f64,
        relation: &'static str,
        upper: &'static str,
        upper_hz: f64,
    },
    #[error("output voltage {v_out} V must exceed the source voltage {e_src} V")]
    VoltageBelowSource { v_out: f64, e_src: f64 },
    #[error("output power must be non-negative, got {0} W")]
    NegativePower(f64),
    #[error("no steady state delivers {p_out} W at {v_out} V (source limit {p_max} W)")]
    Infeasible { v_out: f64, p_out: f64, p_max: f64 },
}

/// Physical and control parameters of the equivalent boost converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterParams {
    /// Global no-load voltage reference, V.
    pub v_nl: f64,
    /// Source voltage, V.
    pub e_src: f64,
    /// Source resistance, Ω.
    pub r_bat: f64,
    /// Boost inductance, H.
    pub l_ind: f64,
    /// Inductor ESR, Ω.
    pub r_esr: f64,
    /// Output capacitance, F.
    pub c_out: f64,
    /// VP droop coefficient, V/W.
    pub k_vp: f64,
    /// Equivalent VI droop resistance, Ω.
    pub k_vi: f64,
    /// Current-loop bandwidth, Hz.
    pub f_i: f64,
    /// Voltage-loop bandwidth, Hz.
    pub f_v: f64,
    /// Droop low-pass filter bandwidth, Hz.
    pub f_lpf: f64,
    /// Voltage reference ramp rate, V/s.
    pub ramp: f64,
    /// Switching frequency, Hz.
    pub f_sw: f64,
}

impl ConverterParams {
    pub const FIELD_NAMES: [&'static str; 13] = [
        "v_nl", "e_src", "r_bat", "l_ind", "r_esr", "c_out", "k_vp", "k_vi", "f_i", "f_v", "f_lpf",
        "ramp", "f_sw",
    ];

    /// The reference parameter set of the equivalent model.
    pub fn table1() -> Self {
        Self {
            v_nl: 350.0,
            e_src: 130.0,
            r_bat: 0.03,
            l_ind: 2e-3,
            r_esr: 0.01,
            c_out: 3.3e-3,
            k_vp: 10.0 / 3600.0,
            k_vi: 1.0,
            f_i: 20e3,
            f_v: 200.0,
            f_lpf: 200.0,
            ramp: 50.0,
            f_sw: 30e3,
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 13] {
        [
            ("v_nl", self.v_nl),
            ("e_src", self.e_src),
            ("r_bat", self.r_bat),
            ("l_ind", self.l_ind),
            ("r_esr", self.r_esr),
            ("c_out", self.c_out),
            ("k_vp", self.k_vp),
            ("k_vi", self.k_vi),
            ("f_i", self.f_i),
            ("f_v", self.f_v),
            ("f_lpf", self.f_lpf),
            ("ramp", self.ramp),
            ("f_sw", self.f_sw),
        ]
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "v_nl" => &mut self.v_nl,
            "e_src" => &mut self.e_src,
            "r_bat" => &mut self.r_bat,
            "l_ind" => &mut self.l_ind,
            "r_esr" => &mut self.r_esr,
            "c_out" => &mut self.c_out,
            "k_vp" => &mut self.k_vp,
            "k_vi" => &mut self.k_vi,
            "f_i" => &mut self.f_i,
            "f_v" => &mut self.f_v,
            "f_lpf" => &mut self.f_lpf,
            "ramp" => &mut self.ramp,
            "f_sw" => &mut self.f_sw,
            _ => return None,
        })
    }

    /// Series resistance seen by the inductor current (ESR + source).
    pub fn r_series(&self) -> f64 {
        self.r_esr + self.r_bat
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        for (name, value) in self.fields() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PlantError::NonPositive { name, value });
            }
        }
        if self.e_src >= self.v_nl {
            return Err(PlantError::NotBoost {
                e_src: self.e_src,
                v_nl: self.v_nl,
            });
        }
        let chain = [
            ("f_lpf", self.f_lpf, "<=", "f_v", self.f_v),
            ("f_v", self.f_v, "<", "f_i", self.f_i),
            ("f_i", self.f_i, "<", "f_sw", self.f_sw),
        ];
        for (lower, lower_hz, relation, upper, upper_hz) in chain {
            let ok = if relation == "<=" {
                lower_hz <= upper_hz
            } else {
                lower_hz < upper_hz
            };
            if !ok {
                return Err(PlantError::Hierarchy {
                    lower,
                    lower_hz,
                    relation,
                    upper,
                    upper_hz,
                });
            }
        }
        Ok(())
    }
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self::table1()
    }
}

/// Steady state of the averaged boost converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub duty: f64,
    pub i_l: f64,
    pub v_out: f64,
    pub p_out: f64,
    /// `v_out²/p_out`; infinite at no load.
    pub r_load: f64,
}

impl OperatingPoint {
    /// `1 − duty`.
    pub fn off_ratio(&self) -> f64 {
        1.0 - self.duty
    }

    /// Residuals of the two averaged steady-state equations, each relative
    /// to the magnitude of its terms.
    pub fn residuals(&self, params: &ConverterParams) -> (f64, f64) {
        let u = self.off_ratio();
        let volt = u * self.v_out - (params.e_src - self.i_l * params.r_series());
        let volt_scale = params.e_src.abs().max(u * self.v_out);
        let curr = self.i_l * u - self.p_out / self.v_out;
        let curr_scale = (self.i_l * u).abs().max(1.0);
        (volt / volt_scale, curr / curr_scale)
    }
}

/// Solves `(1−D)·v_out = E − i_L·(r_esr + r_bat)` and `i_L·(1−D) = p_out/v_out`
/// for the low-current root by Newton iteration.
pub fn solve_operating_point(
    params: &ConverterParams,
    v_out: f64,
    p_out: f64,
) -> Result<OperatingPoint, PlantError> {
    if !(p_out >= 0.0) || !p_out.is_finite() {
        return Err(PlantError::NegativePower(p_out));
    }
    if !(v_out > params.e_src) {
        return Err(PlantError::VoltageBelowSource {
            v_out,
            e_src: params.e_src,
        });
    }
    let e = params.e_src;
    let rs = params.r_series();
    // Eliminating the duty leaves rs·i² − E·i + p = 0.
    let p_max = if rs > 0.0 {
        e * e / (4.0 * rs)
    } else {
        f64::INFINITY
    };
    if p_out > p_max {
        return Err(PlantError::Infeasible {
            v_out,
            p_out,
            p_max,
        });
    }
    let i_l = if p_out == 0.0 {
        0.0
    } else if rs == 0.0 {
        p_out / e
    } else {
        // Starting left of the low root on a convex, decreasing branch
        // makes the iterates increase monotonically onto that root.
        let f = |i: f64| rs * i * i - e * i + p_out;
        let mut i = p_out / e;
        for _ in 0..100 {
            let slope = 2.0 * rs * i - e;
            if slope >= 0.0 {
                break;
            }
            let next = i - f(i) / slope;
            let done = (next - i).abs() <= 1e-15 * next.abs();
            i = next;
            if done || f(i).abs() < 1e-13 * p_out {
                break;
            }
        }
        i
    };
    let u = (e - i_l * rs) / v_out;
    Ok(OperatingPoint {
        duty: 1.0 - u,
        i_l,
        v_out,
        p_out,
        r_load: if p_out > 0.0 {
            v_out * v_out / p_out
        } else {
            f64::INFINITY
        },
    })
}

fn load_conductance(op: &OperatingPoint) -> f64 {
    if op.r_load.is_infinite() {
        0.0
    } else {
        1.0 / op.r_load
    }
}

/// Shared numerator `(1−Dc)·Vo − s·L·IL` of both printed plants.
fn rhp_numerator(params: &ConverterParams, op: &OperatingPoint) -> [f64; 2] {
    [-params.l_ind * op.i_l, op.off_ratio() * op.v_out]
}

/// `((1−Dc)·Vo − s·L·IL) / (L·C·s² + (L/R)·s + (1−Dc)²)` with `R` the load
/// resistance of the operating point.
pub fn gid(params: &ConverterParams, op: &OperatingPoint) -> TransferFunction {
    let u = op.off_ratio();
    let den = [
        params.l_ind * params.c_out,
        params.l_ind * load_conductance(op),
        u * u,
    ];
    TransferFunction::new(&rhp_numerator(params, op), &den).expect("L·C > 0")
}

/// `((1−Dc)·Vo − s·L·IL) / (Vo·C·s + 2·(1−Dc)·IL)`.
pub fn gvi(params: &ConverterParams, op: &OperatingPoint) -> TransferFunction {
    let den = [op.v_out * params.c_out, 2.0 * op.off_ratio() * op.i_l];
    TransferFunction::new(&rhp_numerator(params, op), &den).expect("Vo·C > 0")
}

/// Duty-to-inductor-current plant of the averaged model that `simcore`
/// integrates, linearized with a resistive load of `op.r_load`:
///
/// `(Vo·(C·s + G) + (1−Dc)·IL) / ((L·s + Rs)·(C·s + G) + (1−Dc)²)`, `G = 1/R`.
pub fn gid_averaged(params: &ConverterParams, op: &OperatingPoint) -> TransferFunction {
    let u = op.off_ratio();
    let g = load_conductance(op);
    let (l, c, rs) = (params.l_ind, params.c_out, params.r_series());
    let num = [op.v_out * c, op.v_out * g + u * op.i_l];
    let den = [l * c, l * g + rs * c, rs * g + u * u];
    TransferFunction::new(&num, &den).expect("L·C > 0")
}
