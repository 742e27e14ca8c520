//! Scenario files: a flat INI-like format with `[converter]`, `[network]`,
//! `[sim]` and `[events]` sections.
//!
//! ```text
//! [converter]
//! v_nl = 350
//! # ... all thirteen converter fields
//!
//! [network]
//! l_line = 760e-6
//! r_line = 0
//! c_bus = 30.8e-6
//!
//! [sim]
//! p_load = 3600
//! t_end = 3.5
//!
//! [events]
//! t=1.0 action=set_droop mode=vp coeff=0.016666666666666666
//! t=2.0 action=set_vref v=410
//! ```
//!
//! Values are plain SI numbers. `#` starts a comment. Unknown sections and
//! keys are rejected, and every diagnostic carries its line number.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::looptune::{PiGains, Polarity};
use crate::plant::{ConverterParams, PlantError};
use crate::simcore::{Action, ControlGains, DroopMode, Event, Network, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    /// File the text came from, when known.
    pub file: Option<String>,
    /// 1-based line, or 0 when the problem is not tied to a line.
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{file}: ")?;
        }
        if self.line > 0 {
            write!(f, "line {}: ", self.line)?;
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

fn err(line: usize, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        file: None,
        line,
        key: key.map(str::to_string),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Section {
    Converter,
    Network,
    Sim,
    Events,
}

impl Section {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "converter" => Section::Converter,
            "network" => Section::Network,
            "sim" => Section::Sim,
            "events" => Section::Events,
            _ => return None,
        })
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Section::Converter => &ConverterParams::FIELD_NAMES,
            Section::Network => &NETWORK_KEYS,
            Section::Sim => &SIM_KEYS,
            Section::Events => &[],
        }
    }
}

const NETWORK_KEYS: [&str; 3] = ["l_line", "r_line", "c_bus"];
const SIM_KEYS: [&str; 15] = [
    "dt",
    "t_end",
    "decimation",
    "p_load",
    "v_ref",
    "droop_mode",
    "droop_coeff",
    "i_max",
    "duty_max",
    "v_min",
    "kp_i",
    "ki_i",
    "kp_v",
    "ki_v",
    "polarity",
];
const GAIN_KEYS: [&str; 4] = ["kp_i", "ki_i", "kp_v", "ki_v"];

/// A `key = value` entry and the line it came from.
#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Default)]
struct Raw {
    headers: HashMap<Section, usize>,
    values: HashMap<(Section, &'static str), Entry>,
    events: Vec<(usize, String)>,
}

impl Raw {
    fn get(&self, section: Section, key: &str) -> Option<&Entry> {
        self.values
            .get(&(section, section.keys().iter().find(|k| **k == key)?))
    }

    fn num(
        &self,
        section: Section,
        key: &'static str,
    ) -> Result<Option<(usize, f64)>, ConfigError> {
        self.get(section, key)
            .map(|e| parse_num(e.line, key, &e.value).map(|v| (e.line, v)))
            .transpose()
    }
}

fn parse_num(line: usize, key: &str, text: &str) -> Result<f64, ConfigError> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(
            line,
            Some(key),
            format!("`{text}` is not a finite number"),
        )),
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn lex(text: &str) -> Result<Raw, ConfigError> {
    let mut raw = Raw::default();
    let mut section: Option<Section> = None;
    for (idx, full) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(full);
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, None, "unterminated section header"))?
                .trim();
            let s = Section::parse(name)
                .ok_or_else(|| err(line, None, format!("unknown section `[{name}]`")))?;
            if raw.headers.insert(s, line).is_some() {
                return Err(err(line, None, format!("section `[{name}]` appears twice")));
            }
            section = Some(s);
            continue;
        }
        let s = section.ok_or_else(|| err(line, None, "entry outside of any section"))?;
        if s == Section::Events {
            raw.events.push((line, body.to_string()));
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| err(line, None, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        let key = *s
            .keys()
            .iter()
            .find(|known| **known == k)
            .ok_or_else(|| err(line, Some(k), "unknown key"))?;
        if v.is_empty() {
            return Err(err(line, Some(k), "missing value"));
        }
        let prev = raw.values.insert(
            (s, key),
            Entry {
                line,
                value: v.to_string(),
            },
        );
        if prev.is_some() {
            return Err(err(line, Some(k), "duplicate key"));
        }
    }
    Ok(raw)
}

fn plant_error_key(e: &PlantError) -> Option<&'static str> {
    match e {
        PlantError::NonPositive { name, .. } => Some(name),
        PlantError::NotBoost { .. } => Some("e_src"),
        PlantError::Hierarchy { lower, .. } => Some(lower),
        _ => None,
    }
}

fn parse_converter(raw: &Raw) -> Result<ConverterParams, ConfigError> {
    let header = *raw
        .headers
        .get(&Section::Converter)
        .ok_or_else(|| err(0, None, "missing `[converter]` section"))?;
    let mut params = ConverterParams::table1();
    for name in ConverterParams::FIELD_NAMES {
        let (_, v) = raw
            .num(Section::Converter, name)?
            .ok_or_else(|| err(header, Some(name), "missing required key"))?;
        *params.field_mut(name).expect("known field") = v;
    }
    params.validate().map_err(|e| {
        let key = plant_error_key(&e);
        let line = key
            .and_then(|k| raw.get(Section::Converter, k))
            .map_or(header, |entry| entry.line);
        err(line, key, e.to_string())
    })?;
    Ok(params)
}

fn parse_network(raw: &Raw) -> Result<Network, ConfigError> {
    let mut n = Network::default();
    for (key, slot) in NETWORK_KEYS
        .into_iter()
        .zip([&mut n.l_line, &mut n.r_line, &mut n.c_bus])
    {
        if let Some((_, v)) = raw.num(Section::Network, key)? {
            *slot = v;
        }
    }
    Ok(n)
}

fn parse_polarity(line: usize, key: &str, text: &str) -> Result<Polarity, ConfigError> {
    match text {
        "direct" => Ok(Polarity::Direct),
        "reverse" => Ok(Polarity::Reverse),
        other => Err(err(
            line,
            Some(key),
            format!("unknown polarity `{other}` (expected direct or reverse)"),
        )),
    }
}

fn parse_sim(raw: &Raw, s: &mut Scenario) -> Result<(), ConfigError> {
    use Section::Sim;
    let set = |key: &'static str, slot: &mut f64| -> Result<(), ConfigError> {
        if let Some((_, v)) = raw.num(Sim, key)? {
            *slot = v;
        }
        Ok(())
    };
    set("dt", &mut s.dt)?;
    set("t_end", &mut s.t_end)?;
    set("p_load", &mut s.p_load)?;
    set("v_ref", &mut s.v_ref)?;
    set("i_max", &mut s.limits.i_max)?;
    set("duty_max", &mut s.limits.duty_max)?;
    set("v_min", &mut s.v_min)?;
    if let Some(e) = raw.get(Sim, "decimation") {
        s.decimation = e.value.parse().map_err(|_| {
            err(
                e.line,
                Some("decimation"),
                format!("`{}` is not a positive integer", e.value),
            )
        })?;
    }
    if let Some(e) = raw.get(Sim, "droop_mode") {
        s.droop_mode = e
            .value
            .parse()
            .map_err(|m: String| err(e.line, Some("droop_mode"), m))?;
    }
    s.droop_coeff = match raw.num(Sim, "droop_coeff")? {
        Some((_, v)) => v,
        None => default_coefficient(&s.params, s.droop_mode),
    };

    let given: Vec<&str> = GAIN_KEYS
        .into_iter()
        .filter(|k| raw.get(Sim, k).is_some())
        .collect();
    if !given.is_empty() {
        if given.len() != GAIN_KEYS.len() {
            let missing = GAIN_KEYS
                .iter()
                .find(|k| !given.contains(k))
                .expect("one missing");
            let line = raw.get(Sim, given[0]).map_or(0, |e| e.line);
            return Err(err(
                line,
                Some(missing),
                "gain overrides need all of kp_i, ki_i, kp_v, ki_v",
            ));
        }
        let polarity = match raw.get(Sim, "polarity") {
            Some(e) => {
                let (a, b) = e.value.split_once(',').ok_or_else(|| {
                    err(e.line, Some("polarity"), "expected `<current>,<voltage>`")
                })?;
                (
                    parse_polarity(e.line, "polarity", a.trim())?,
                    parse_polarity(e.line, "polarity", b.trim())?,
                )
            }
            None => (Polarity::Direct, Polarity::Direct),
        };
        let pi = |kp: &'static str, ki: &'static str, pol| -> Result<PiGains, ConfigError> {
            let (line, p) = raw.num(Sim, kp)?.expect("checked above");
            let (_, i) = raw.num(Sim, ki)?.expect("checked above");
            PiGains::with_polarity(p, i, pol).map_err(|e| err(line, Some(kp), e.to_string()))
        };
        s.gains = Some(ControlGains {
            current: pi("kp_i", "ki_i", polarity.0)?,
            voltage: pi("kp_v", "ki_v", polarity.1)?,
        });
    } else if let Some(e) = raw.get(Sim, "polarity") {
        return Err(err(
            e.line,
            Some("polarity"),
            "polarity needs explicit gains",
        ));
    }
    Ok(())
}

fn default_coefficient(params: &ConverterParams, mode: DroopMode) -> f64 {
    match mode {
        DroopMode::None => 0.0,
        DroopMode::Vp => params.k_vp,
        DroopMode::Vi => params.k_vi,
    }
}

/// Argument names each action accepts, required unless marked optional.
fn action_args(name: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    Some(match name {
        "set_load_power" => (&["p"], &[]),
        "ramp_load_power" => (&["p", "rate"], &[]),
        "set_droop" => (&["mode"], &["coeff"]),
        "set_vref" => (&["v"], &[]),
        "enable_droop" | "disable_droop" | "release_iref" => (&[], &[]),
        "set_iref" => (&["i"], &[]),
        _ => return None,
    })
}

fn parse_event(params: &ConverterParams, line: usize, body: &str) -> Result<Event, ConfigError> {
    let mut t = None;
    let mut action = None;
    let mut args: Vec<(&str, &str)> = Vec::new();
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(line, None, format!("expected `key=value`, found `{tok}`")))?;
        let slot_taken = match k {
            "t" => t.replace(v).is_some(),
            "action" => action.replace(v).is_some(),
            _ => {
                let dup = args.iter().any(|(a, _)| *a == k);
                args.push((k, v));
                dup
            }
        };
        if slot_taken {
            return Err(err(line, Some(k), "duplicate key"));
        }
    }
    let t_text = t.ok_or_else(|| err(line, Some("t"), "missing event time"))?;
    let t = parse_num(line, "t", t_text)?;
    let name = action.ok_or_else(|| err(line, Some("action"), "missing action"))?;
    let (required, optional) = action_args(name)
        .ok_or_else(|| err(line, Some("action"), format!("unknown action `{name}`")))?;
    for (k, _) in &args {
        if !required.contains(k) && !optional.contains(k) {
            return Err(err(line, Some(k), format!("unknown argument for `{name}`")));
        }
    }
    let text = |key: &'static str| -> Result<&str, ConfigError> {
        args.iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| err(line, Some(key), format!("`{name}` needs `{key}`")))
    };
    let num = |key: &'static str| text(key).and_then(|v| parse_num(line, key, v));
    let action = match name {
        "set_load_power" => Action::SetLoadPower(num("p")?),
        "ramp_load_power" => Action::RampLoadPower {
            target: num("p")?,
            rate: num("rate")?,
        },
        "set_droop" => {
            let mode: DroopMode = text("mode")?
                .parse()
                .map_err(|m: String| err(line, Some("mode"), m))?;
            let coefficient = if args.iter().any(|(k, _)| *k == "coeff") {
                num("coeff")?
            } else {
                default_coefficient(params, mode)
            };
            Action::SetDroop { mode, coefficient }
        }
        "set_vref" => Action::SetVref(num("v")?),
        "enable_droop" => Action::EnableDroop,
        "disable_droop" => Action::DisableDroop,
        "set_iref" => Action::SetCurrentRef(num("i")?),
        "release_iref" => Action::ReleaseCurrentRef,
        _ => unreachable!("checked by action_args"),
    };
    Ok(Event { t, action })
}

/// Parses and fully validates a scenario file.
pub fn parse_config(text: &str) -> Result<(ConverterParams, Scenario), ConfigError> {
    let raw = lex(text)?;
    let params = parse_converter(&raw)?;
    let mut scenario = Scenario::new(params);
    scenario.network = parse_network(&raw)?;
    parse_sim(&raw, &mut scenario)?;

    let mut last_t = f64::NEG_INFINITY;
    for (line, body) in &raw.events {
        let ev = parse_event(&params, *line, body)?;
        if ev.t < last_t {
            return Err(err(*line, Some("t"), "events must be listed in time order"));
        }
        last_t = ev.t;
        let single = Scenario {
            events: vec![ev],
            ..scenario.clone()
        };
        single
            .validate()
            .map_err(|e| err(*line, None, e.to_string()))?;
        scenario.events.push(ev);
    }
    scenario.validate().map_err(|e| {
        let line = raw
            .headers
            .get(&Section::Sim)
            .or_else(|| raw.headers.get(&Section::Network))
            .copied()
            .unwrap_or(0);
        err(line, None, e.to_string())
    })?;
    Ok((params, scenario))
}

fn action_line(out: &mut String, action: &Action) {
    let _ = match action {
        Action::SetLoadPower(p) => write!(out, "action=set_load_power p={p}"),
        Action::RampLoadPower { target, rate } => {
            write!(out, "action=ramp_load_power p={target} rate={rate}")
        }
        Action::SetDroop { mode, coefficient } => {
            write!(out, "action=set_droop mode={mode} coeff={coefficient}")
        }
        Action::SetVref(v) => write!(out, "action=set_vref v={v}"),
        Action::EnableDroop => write!(out, "action=enable_droop"),
        Action::DisableDroop => write!(out, "action=disable_droop"),
        Action::SetCurrentRef(i) => write!(out, "action=set_iref i={i}"),
        Action::ReleaseCurrentRef => write!(out, "action=release_iref"),
    };
}

/// Writes a scenario back out in the file format. Parsing the result yields
/// the same scenario.
pub fn write_config(scenario: &Scenario) -> String {
    let mut out = String::from("[converter]\n");
    for (name, v) in scenario.params.fields() {
        let _ = writeln!(out, "{name} = {v}");
    }
    let n = &scenario.network;
    let _ = writeln!(
        out,
        "\n[network]\nl_line = {}\nr_line = {}\nc_bus = {}",
        n.l_line, n.r_line, n.c_bus
    );
    let _ = writeln!(out, "\n[sim]");
    let _ = writeln!(out, "dt = {}", scenario.dt);
    let _ = writeln!(out, "t_end = {}", scenario.t_end);
    let _ = writeln!(out, "decimation = {}", scenario.decimation);
    let _ = writeln!(out, "p_load = {}", scenario.p_load);
    let _ = writeln!(out, "v_ref = {}", scenario.v_ref);
    let _ = writeln!(out, "droop_mode = {}", scenario.droop_mode);
    let _ = writeln!(out, "droop_coeff = {}", scenario.droop_coeff);
    let _ = writeln!(out, "i_max = {}", scenario.limits.i_max);
    let _ = writeln!(out, "duty_max = {}", scenario.limits.duty_max);
    let _ = writeln!(out, "v_min = {}", scenario.v_min);
    if let Some(g) = &scenario.gains {
        let _ = writeln!(out, "kp_i = {}\nki_i = {}", g.current.kp(), g.current.ki());
        let _ = writeln!(out, "kp_v = {}\nki_v = {}", g.voltage.kp(), g.voltage.ki());
        let _ = writeln!(
            out,
            "polarity = {},{}",
            g.current.polarity(),
            g.voltage.polarity()
        );
    }
    out.push_str("\n[events]\n");
    for ev in &scenario.events {
        let _ = write!(out, "t={} ", ev.t);
        action_line(&mut out, &ev.action);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_text() -> String {
        let mut s = String::from("[converter]\n");
        for (k, v) in ConverterParams::table1().fields() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    #[test]
    fn minimal_file_parses() {
        let (p, s) = parse_config(&table1_text()).unwrap();
        assert_eq!(p, ConverterParams::table1());
        assert!(s.events.is_empty());
        assert!(s.network.is_collapsed());
    }

    #[test]
    fn hierarchy_violation_names_key_and_line() {
        let text = table1_text().replace("f_i = 20000", "f_i = 100");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("f_v"));
        assert_eq!(e.line, 11);
        assert!(e.message.contains("hierarchy"), "{e}");
    }

    #[test]
    fn rejects_unknown_and_missing() {
        let e = parse_config(&(table1_text() + "bogus = 1\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (15, Some("bogus")));
        let e = parse_config(&table1_text().replace("ramp = 50\n", "")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (1, Some("ramp")));
        let e = parse_config(&(table1_text() + "[extra]\n")).unwrap_err();
        assert_eq!(e.line, 15);
        let e = parse_config(&(table1_text() + "[events]\nt=1 action=explode\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (16, Some("action")));
        let e = parse_config(&(table1_text() + "[events]\nt=1 action=set_vref\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (16, Some("v")));
        let e = parse_config(
            &(table1_text() + "[events]\nt=2 action=enable_droop\nt=1 action=disable_droop\n"),
        )
        .unwrap_err();
        assert_eq!(e.line, 17);
        assert!(parse_config("").is_err());
        assert!(parse_config("v_nl = 3").is_err());
    }

    #[test]
    fn round_trip() {
        let text = table1_text()
            + "[network]\nl_line = 760e-6\nc_bus = 30.8e-6\n[sim]\np_load = 4000\ndroop_mode = vp\n\
               kp_i = 0.1\nki_i = 200\nkp_v = 9\nki_v = 3000\npolarity = reverse,direct\n\
               [events]\nt=1 action=ramp_load_power p=5400 rate=1000 # ramp\nt=2 action=set_droop mode=vi\n";
        let (p, s) = parse_config(&text).unwrap();
        assert_eq!(s.droop_coeff, p.k_vp);
        assert_eq!(
            s.events[1].action,
            Action::SetDroop {
                mode: DroopMode::Vi,
                coefficient: p.k_vi
            }
        );
        assert_eq!(s.gains.unwrap().current.polarity(), Polarity::Reverse);
        let (p2, s2) = parse_config(&write_config(&s)).unwrap();
        assert_eq!((p, s), (p2, s2));
    }
}
