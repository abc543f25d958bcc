use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn catseye(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catseye"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .parse()
        .unwrap()
}

const QUICK_SCENE: &str =
    r#""scene": {"theta": {"min": -20, "max": 20, "step": 10}}, "run": {"rays": 2000}"#;

#[test]
fn paraxial_selected_ball() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", r#"{"design": {"preset": "selected_C"}}"#);
    let out = stdout(&catseye(&["paraxial", "--config", s(&cfg)]));
    assert!((field(&out, "BFL") - 0.29526).abs() < 5e-6);
    assert!((field(&out, "R_m") - 0.64526).abs() < 5e-6);
}

#[test]
fn paraxial_previous_has_flat_mirror() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", r#"{"design": {"preset": "previous"}}"#);
    assert!(stdout(&catseye(&["paraxial", "--config", s(&cfg)])).contains("R_m\tflat\n"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let degenerate = write_config(
        &dir,
        "n1.json",
        r#"{"design": {"family": "ball_C", "R_l": 0.5, "a": 1.0, "n": 1.0, "offset": 0.1}}"#,
    );
    let o = catseye(&["paraxial", "--config", s(&degenerate)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());

    let unknown = write_config(
        &dir,
        "u.json",
        r#"{"design": {"preset": "previous"}, "extra": 1}"#,
    );
    assert_eq!(
        catseye(&["paraxial", "--config", s(&unknown)])
            .status
            .code(),
        Some(2)
    );

    let missing = dir.path().join("absent.json");
    assert_eq!(
        catseye(&["paraxial", "--config", s(&missing)])
            .status
            .code(),
        Some(2)
    );

    let preset = write_config(&dir, "p.json", r#"{"design": {"preset": "nonexistent"}}"#);
    assert_eq!(
        catseye(&["paraxial", "--config", s(&preset)]).status.code(),
        Some(2)
    );
}

#[test]
fn delta_d_sweep_emits_three_series() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sweep.json",
        &format!(
            r#"{{"design": {{"preset": "selected_C"}}, "sweep": {{"axis": "delta_d", "values": [0, 0.05, 0.1]}}, {QUICK_SCENE}}}"#
        ),
    );
    let plot = dir.path().join("sweep.svg");
    let csv = stdout(&catseye(&[
        "sweep",
        "--config",
        s(&cfg),
        "--plot",
        s(&plot),
    ]));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("design,theta_deg,distance_mm,fraction,stderr")
    );
    assert_eq!(lines.count(), 3 * 5 * 2);
    let svg = std::fs::read_to_string(plot).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sweep.json",
        r#"{"design": {"preset": "selected_C"}, "sweep": {"axis": "aperture", "values": []}}"#,
    );
    assert_eq!(
        catseye(&["sweep", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
}

#[test]
fn sweep_is_byte_identical_across_runs_and_workers() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sweep.json",
        &format!(
            r#"{{"design": {{"preset": "selected_A"}}, "sweep": {{"axis": "distance", "values": [0, 0.14]}}, {QUICK_SCENE}}}"#
        ),
    );
    let run = |workers: &str, tag: &str| {
        let out = dir.path().join(format!("{tag}.csv"));
        let plot = dir.path().join(format!("{tag}.svg"));
        let o = catseye(&[
            "sweep",
            "--config",
            s(&cfg),
            "--workers",
            workers,
            "--out",
            s(&out),
            "--plot",
            s(&plot),
        ]);
        assert!(o.status.success());
        (std::fs::read(out).unwrap(), std::fs::read(plot).unwrap())
    };
    let first = run("1", "a");
    assert_eq!(run("1", "b"), first);
    assert_eq!(run("3", "c"), first);
}

#[test]
fn compare_needs_two_designs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "one.json",
        r#"{"designs": [{"preset": "selected_C"}]}"#,
    );
    assert_eq!(
        catseye(&["compare", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
}

fn mean_by_design(csv: &str) -> std::collections::BTreeMap<String, f64> {
    let mut acc: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let e = acc.entry(cols[0].to_string()).or_default();
        e.0 += cols[3].parse::<f64>().unwrap();
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

#[test]
fn nonsequential_compare_ranks_markers() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "cmp.json",
        &format!(
            r#"{{"designs": [
                {{"preset": "selected_C", "fresnel_enabled": true}},
                {{"preset": "previous", "fresnel_enabled": true}},
                {{"preset": "full_diffuse"}}], {QUICK_SCENE}}}"#
        ),
    );
    let means = mean_by_design(&stdout(&catseye(&[
        "compare",
        "--config",
        s(&cfg),
        "--mode",
        "mc",
    ])));
    assert!(means["selected_C"] > means["previous"]);
    assert!(means["previous"] > means["full_diffuse"]);
}

#[test]
fn optimize_single_cell_echoes_design() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "opt.json",
        &format!(
            r#"{{"optimize": {{"family": "ball_C", "pixel_footprint_mm": 1.0, "d_offsets": [0.15]}}, {QUICK_SCENE}}}"#
        ),
    );
    let text = stdout(&catseye(&["optimize", "--config", s(&cfg)]));
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    catseye_cli::report::validate(&doc).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["grid"].as_array().unwrap().len(), 1);
    assert_eq!(doc["best"], doc["grid"][0]["design"]);
    assert_eq!(doc["best"]["R_l"], 0.5);
    let selected = serde_json::to_value(catseye::designs::preset(
        catseye::designs::Preset::SelectedC,
    ))
    .unwrap();
    assert_eq!(doc["best"], selected);
}

#[test]
fn corrupted_report_fails_validation() {
    let mut doc = serde_json::json!({"schema_version": 2});
    assert!(catseye_cli::report::validate(&doc).is_err());
    doc["schema_version"] = 1.into();
    assert!(catseye_cli::report::validate(&doc).is_err());
}

#[test]
fn experiment_reports_both_distances_and_a_gain() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "exp.json",
        r#"{"scene": {"theta": {"min": -20, "max": 20, "step": 20}}, "run": {"rays": 4000}}"#,
    );
    let csv = stdout(&catseye(&["experiment", "--config", s(&cfg)]));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("theta_deg,distance_mm,proposed,proposed_stderr,previous,previous_stderr,ratio")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r[1] == 300.0) && rows.iter().any(|r| r[1] == 500.0));
    assert!(rows.iter().all(|r| r[6] >= 1.5));
}

#[test]
fn trace_dump_lists_every_ray() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "d.json",
        r#"{"design": {"preset": "selected_C"}, "run": {"rays": 50}}"#,
    );
    let out = stdout(&catseye(&[
        "trace-dump",
        "--config",
        s(&cfg),
        "--theta",
        "-5",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[0].split('\t').count(), 6);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 6));
}
