//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad config, infeasible
//! operating point, failed fit), 2 on a usage error. Data goes to stdout or
//! the `--out` file; diagnostics go to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::parse_config;
use crate::ident::{self, Measurement};
use crate::looptune::{self, LoopDesign};
use crate::plant::ConverterParams;
use crate::simcore::{self, Scenario};
use crate::stability;
use crate::tfcore;
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "droopkit",
    version,
    about = "Equivalent-model toolkit for droop-controlled DC/DC converters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LoopKind {
    Current,
    Voltage,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bode sweep of a tuned loop gain as CSV `f_hz,mag_db,phase_deg`.
    Bode {
        config: PathBuf,
        #[arg(long = "loop", value_enum)]
        which: LoopKind,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Operating power for the small-signal plants, W.
        #[arg(long, default_value_t = simcore::DESIGN_POWER)]
        power: f64,
        #[arg(long, default_value_t = 1.0)]
        f_lo: f64,
        #[arg(long, default_value_t = 1e6)]
        f_hi: f64,
        #[arg(long, default_value_t = 50)]
        ppd: usize,
    },
    /// Tune both PI loops and report gains and achieved margins.
    Tune {
        config: PathBuf,
        #[arg(long, default_value_t = simcore::DESIGN_POWER)]
        power: f64,
        /// Also write the current-loop Bode CSV here.
        #[arg(long)]
        bode_current: Option<PathBuf>,
        /// Also write the voltage-loop Bode CSV here.
        #[arg(long)]
        bode_voltage: Option<PathBuf>,
    },
    /// Run the scenario and export the trace CSV.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit time constants, droop slope and ramp rate, either on the
    /// simulated model or on a measured CSV.
    Characterize {
        #[arg(required_unless_present = "measured", conflicts_with = "measured")]
        config: Option<PathBuf>,
        /// Measured CSV with a `t` column.
        #[arg(long, requires = "step_time")]
        measured: Option<PathBuf>,
        /// Step time in the measured record, s.
        #[arg(long, requires = "measured")]
        step_time: Option<f64>,
        /// Column to fit; the first signal column when omitted.
        #[arg(long, requires = "measured")]
        signal: Option<String>,
        /// Settling window after the step, s; the rest of the record when omitted.
        #[arg(long, requires = "measured")]
        settle: Option<f64>,
        /// Write `t,measured,fitted` here.
        #[arg(long, requires = "measured")]
        overlay: Option<PathBuf>,
    },
    /// Evaluate the constant-power-load stability bound for the configured line.
    Stability {
        config: PathBuf,
        /// Load power to assess at; the scenario's peak load when omitted.
        #[arg(long)]
        power: Option<f64>,
        /// Droop resistance, Ω; `k_vi` when omitted.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Stability map over a grid of line inductance, bus capacitance and
    /// droop resistance, as CSV `l,c,k,p_crit,stable`.
    Sweep {
        config: PathBuf,
        /// Axes as `name=start:stop:count` or `name=value`, comma separated,
        /// names `l`, `c`, `k`; missing axes take the configured value.
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        power: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Grid {
    l: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
    k: Option<Vec<f64>>,
}

fn parse_axis(spec: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| -> Result<f64, String> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{s}` is not a number"))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("`{n}` is not a count"))?;
            match n {
                0 => Err("count must be at least 1".into()),
                1 => Ok(vec![a]),
                _ => Ok((0..n)
                    .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                    .collect()),
            }
        }
        _ => Err(format!(
            "axis `{spec}` must be `value` or `start:stop:count`"
        )),
    }
}

fn parse_grid(spec: &str) -> Result<Grid, String> {
    let mut g = Grid::default();
    for part in spec.split(',') {
        let (name, axis) = part
            .split_once('=')
            .ok_or_else(|| format!("expected `name=spec`, found `{part}`"))?;
        let slot = match name.trim() {
            "l" => &mut g.l,
            "c" => &mut g.c,
            "k" => &mut g.k,
            other => return Err(format!("unknown axis `{other}` (expected l, c or k)")),
        };
        if slot.replace(parse_axis(axis)?).is_some() {
            return Err(format!("axis `{}` given twice", name.trim()));
        }
    }
    Ok(g)
}

/// Runs the binary with `std` streams and returns the exit code.
pub fn dispatch(args: &[String]) -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`dispatch`] with explicit streams.
pub fn run<O: Write, E: Write>(args: &[String], out: &mut O, err: &mut E) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load(path: &Path) -> Result<(ConverterParams, Scenario), Error> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|mut e| {
        e.file = Some(path.display().to_string());
        e.into()
    })
}

/// Writes to the file when given, else to `out`.
fn emit<O: Write>(
    target: Option<&Path>,
    out: &mut O,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Error> {
    match target {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => body(out)?,
    }
    Ok(())
}

fn key_values<O: Write>(out: &mut O, kv: &[(String, String)]) -> io::Result<()> {
    for (k, v) in kv {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

fn design(params: &ConverterParams, power: f64) -> Result<LoopDesign, Error> {
    looptune::design_loops(params, params.v_nl, power)
}

fn write_bode(
    tf: &tfcore::TransferFunction,
    f_lo: f64,
    f_hi: f64,
    ppd: usize,
    w: &mut dyn Write,
) -> Result<(), Error> {
    let pts = tfcore::bode(tf, f_lo, f_hi, ppd)?;
    tfcore::write_bode_csv(w, &pts)?;
    Ok(())
}

fn execute<O: Write, E: Write>(cmd: Command, out: &mut O, err: &mut E) -> Result<(), Error> {
    match cmd {
        Command::Bode {
            config,
            which,
            out: path,
            power,
            f_lo,
            f_hi,
            ppd,
        } => {
            let (params, _) = load(&config)?;
            let d = design(&params, power)?;
            let (tf, report) = match which {
                LoopKind::Current => (&d.tc, &d.current),
                LoopKind::Voltage => (&d.tv, &d.voltage),
            };
            let pts = tfcore::bode(tf, f_lo, f_hi, ppd)?;
            emit(path.as_deref(), out, |w| tfcore::write_bode_csv(w, &pts))?;
            key_values(err, &report.key_values(""))?;
        }
        Command::Tune {
            config,
            power,
            bode_current,
            bode_voltage,
        } => {
            let (params, _) = load(&config)?;
            let d = design(&params, power)?;
            writeln!(out, "op.duty={}", d.op.duty)?;
            writeln!(out, "op.i_l={}", d.op.i_l)?;
            key_values(out, &d.current.key_values("current."))?;
            key_values(out, &d.voltage.key_values("voltage."))?;
            for h in looptune::check_hierarchy(&params) {
                writeln!(
                    out,
                    "hierarchy.{}_{}={}",
                    h.lower,
                    h.upper,
                    if h.pass { "pass" } else { "fail" }
                )?;
            }
            if let Some(p) = bode_current {
                write_bode(
                    &d.tc,
                    d.current.target_f / 1e3,
                    d.current.target_f * 1e3,
                    50,
                    &mut BufWriter::new(File::create(p)?),
                )?;
            }
            if let Some(p) = bode_voltage {
                write_bode(
                    &d.tv,
                    d.voltage.target_f / 1e3,
                    d.voltage.target_f * 1e3,
                    50,
                    &mut BufWriter::new(File::create(p)?),
                )?;
            }
        }
        Command::Simulate { config, out: path } => {
            let (_, scenario) = load(&config)?;
            let trace = simcore::run_scenario(&scenario)?;
            emit(path.as_deref(), out, |w| trace.write_csv(w))?;
            for a in &trace.annotations {
                writeln!(err, "t={}: {}", a.t, a.message)?;
            }
        }
        Command::Characterize {
            config,
            measured,
            step_time,
            signal,
            settle,
            overlay,
        } => match (config, measured) {
            (Some(config), None) => {
                let (params, _) = load(&config)?;
                let report = ident::characterize_model(&params)?;
                key_values(out, &report.key_values())?;
            }
            (None, Some(path)) => {
                let m = Measurement::read_csv(File::open(&path)?)?;
                let t_step = step_time.expect("required by clap");
                let (name, y) = match &signal {
                    Some(s) => (
                        s.as_str(),
                        m.signal(s).ok_or_else(|| {
                            ident::IdentError::Measurement(format!("no column `{s}`"))
                        })?,
                    ),
                    None => (m.signals[0].0.as_str(), m.signals[0].1.as_slice()),
                };
                let t_last = *m.t.last().unwrap_or(&t_step);
                let window = settle.unwrap_or(t_last - t_step);
                let fit = ident::fit_time_constant(&m.t, y, t_step, window)?;
                writeln!(out, "signal={name}")?;
                for (k, v) in [
                    ("t_step_s", fit.t_step),
                    ("y0", fit.y0),
                    ("y_inf", fit.y_inf),
                    ("tau_s", fit.tau),
                    ("bw_paper_hz", fit.bw_paper),
                    ("bw_standard_hz", fit.bw_standard),
                    ("tau_lsq_s", fit.tau_lsq),
                    ("rms_residual", fit.rms_residual),
                ] {
                    writeln!(out, "{k}={v}")?;
                }
                if let Some(p) = overlay {
                    let mut w = BufWriter::new(File::create(p)?);
                    writeln!(w, "t,measured,fitted")?;
                    for (&t, &v) in m.t.iter().zip(y) {
                        let fitted = if t < fit.t_step {
                            fit.y0
                        } else {
                            fit.y0
                                + (fit.y_inf - fit.y0) * (1.0 - (-(t - fit.t_step) / fit.tau).exp())
                        };
                        writeln!(w, "{t},{v},{fitted}")?;
                    }
                    w.flush()?;
                }
            }
            _ => unreachable!("clap enforces exactly one source"),
        },
        Command::Stability { config, power, k } => {
            let (params, scenario) = load(&config)?;
            let (l, c) = line_of(&scenario)?;
            let p = power.unwrap_or_else(|| scenario.peak_load_power());
            let a = stability::assess(&params, l, c, k.unwrap_or(params.k_vi), p)?;
            key_values(out, &a.key_values())?;
        }
        Command::Sweep {
            config,
            grid,
            out: path,
            power,
        } => {
            let (params, scenario) = load(&config)?;
            let net = scenario.network;
            let p = power.unwrap_or_else(|| scenario.peak_load_power());
            let axis =
                |given: Option<Vec<f64>>, fallback: f64| given.unwrap_or_else(|| vec![fallback]);
            let rows = stability::sweep(
                &params,
                &axis(grid.l, net.l_line),
                &axis(grid.c, net.c_bus),
                &axis(grid.k, params.k_vi),
                p,
            )?;
            emit(path.as_deref(), out, |w| {
                writeln!(w, "l,c,k,p_crit,stable")?;
                for r in &rows {
                    let p_crit = r
                        .p_crit
                        .map_or_else(|| "none".to_string(), |p| p.to_string());
                    writeln!(w, "{},{},{},{},{}", r.l, r.c, r.k, p_crit, r.stable)?;
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}

fn line_of(scenario: &Scenario) -> Result<(f64, f64), Error> {
    let n = scenario.network;
    if n.is_collapsed() {
        return Err(stability::StabilityError::NonPositive {
            name: "l_line",
            value: n.l_line,
        }
        .into());
    }
    Ok((n.l_line, n.c_bus))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        let g = parse_grid("l=1e-4:3e-4:3,k=2").unwrap();
        assert_eq!(g.k, Some(vec![2.0]));
        let l = g.l.unwrap();
        assert_eq!(l.len(), 3);
        assert!((l[1] - 2e-4).abs() < 1e-18);
        assert_eq!(g.c, None);
        assert!(parse_grid("x=1").is_err());
        assert!(parse_grid("l=1:2").is_err());
        assert!(parse_grid("l=1,l=2").is_err());
        assert!(parse_grid("c=1:2:0").is_err());
    }

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(&args, &mut o, &mut e);
        (
            code,
            String::from_utf8(o).unwrap(),
            String::from_utf8(e).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_two() {
        let (code, out, err) = run_args(&["droopkit", "frobnicate"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(run_args(&["droopkit"]).0, 2);
        assert_eq!(run_args(&["droopkit", "--help"]).0, 0);
    }

    #[test]
    fn missing_file_is_domain_error() {
        let (code, out, err) = run_args(&["droopkit", "tune", "/nonexistent/x.cfg"]);
        assert_eq!(code, 1);
        assert!(out.is_empty());
        assert!(err.starts_with("error:"));
    }
}
