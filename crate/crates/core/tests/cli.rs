use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn droopkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_droopkit"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .to_string()
}

#[test]
fn simulate_writes_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = droopkit(&[
        "simulate",
        &fixture("fig8.cfg"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("t,v_bus,v_c,i_l,i_line,p_load,duty,v_ref_eff")
    );
    assert!(
        lines.all(|l| l.split(',').count() == 8 && l.split(',').all(|f| f.parse::<f64>().is_ok()))
    );

    let again = dir.path().join("again.csv");
    droopkit(&[
        "simulate",
        &fixture("fig8.cfg"),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn simulate_to_stdout_is_pure_csv() {
    let o = droopkit(&["simulate", &fixture("fig8.cfg")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("t,v_bus"));
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').all(|f| f.parse::<f64>().is_ok())));
}

#[test]
fn stability_reports_critical_power() {
    let o = droopkit(&["stability", &fixture("fig14.cfg")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let p: f64 = value(&text, "p_crit_w").parse().unwrap();
    assert!((p - 4600.0).abs() < 0.05 * 4600.0, "{p}");
    assert_eq!(value(&text, "stable"), "false");
    let o = droopkit(&["stability", &fixture("fig14.cfg"), "--power", "4000"]);
    assert_eq!(value(&stdout(&o), "stable"), "true");
}

#[test]
fn stability_needs_a_line() {
    let o = droopkit(&["stability", &fixture("fig10.cfg")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn tune_reports_both_loops() {
    let dir = tempfile::tempdir().unwrap();
    let bode = dir.path().join("tc.csv");
    let o = droopkit(&[
        "tune",
        &fixture("table1.cfg"),
        "--bode-current",
        bode.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let fc: f64 = value(&text, "current.crossover_hz").parse().unwrap();
    let fv: f64 = value(&text, "voltage.crossover_hz").parse().unwrap();
    assert!((fc - 20e3).abs() < 200.0 && (fv - 200.0).abs() < 2.0);
    assert_eq!(value(&text, "hierarchy.f_v_f_i"), "pass");
    assert!(std::fs::read_to_string(bode)
        .unwrap()
        .starts_with("f_hz,mag_db,phase_deg\n"));
}

#[test]
fn bode_writes_csv() {
    let o = droopkit(&[
        "bode",
        &fixture("table1.cfg"),
        "--loop",
        "voltage",
        "--ppd",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 60 + 1);
    let o = droopkit(&["bode", &fixture("table1.cfg"), "--loop", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("map.csv");
    let o = droopkit(&[
        "sweep",
        &fixture("fig14.cfg"),
        "--grid",
        "l=380e-6:760e-6:2,c=30.8e-6:61.6e-6:3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "l,c,k,p_crit,stable");
    assert_eq!(lines.len(), 1 + 6);
    let o = droopkit(&["sweep", &fixture("fig14.cfg"), "--grid", "q=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn characterize_measured_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("step.csv");
    let overlay = dir.path().join("overlay.csv");
    let mut text = String::from("t,i\n");
    for k in 0..2000 {
        let t = k as f64 * 1e-6;
        let i = if t <= 1e-4 {
            5.0
        } else {
            5.0 + 5.0 * (1.0 - (-(t - 1e-4) / 5e-5).exp())
        };
        text.push_str(&format!("{t},{i}\n"));
    }
    std::fs::write(&data, text).unwrap();
    let o = droopkit(&[
        "characterize",
        "--measured",
        data.to_str().unwrap(),
        "--step-time",
        "1e-4",
        "--overlay",
        overlay.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let tau: f64 = value(&stdout(&o), "tau_s").parse().unwrap();
    assert!((tau - 5e-5).abs() < 5e-7);
    assert!(std::fs::read_to_string(overlay)
        .unwrap()
        .starts_with("t,measured,fitted\n"));

    let o = droopkit(&["characterize", "--measured", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(fixture("table1.cfg"))
        .unwrap()
        .replace("f_i = 20000", "f_i = 100");
    std::fs::write(&cfg, text).unwrap();
    let o = droopkit(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 13") && err.contains("f_v"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = droopkit(&["transmogrify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("Usage"));
}
