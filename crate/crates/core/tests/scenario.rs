use std::path::PathBuf;

use pilotwave::scenario::*;
use pilotwave::wavemodel::ModelKind;

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> ScenarioConfig {
    parse_scenario(&bundled().join(name)).unwrap()
}

const STANDING: &str = r#"
name = "sw"
[model]
kind = "klein_gordon"
signature = [1, -1]
shared_energy = 1.4142135623730951
[[model.modes]]
k = [1.0]
amplitude = [0.6, 0.0]
[[model.modes]]
k = [-1.0]
amplitude = [0.4, 0.0]
[geometry]
box_lengths = [6.283185307179586]
"#;

#[test]
fn every_bundled_scenario_parses_and_builds() {
    let mut count = 0;
    for entry in std::fs::read_dir(bundled()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = parse_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let model = cfg.build_model().unwrap();
            let geom = cfg.build_geometry().unwrap();
            assert_eq!(geom.dim(), model.dim());
            count += 1;
        }
    }
    assert!(count >= 5);
}

#[test]
fn standing_wave_round_trips() {
    let cfg = load("standing_wave.toml");
    let text = cfg.to_toml().unwrap();
    let again = parse_scenario_str(&text).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(again.to_toml().unwrap(), text);
}

#[test]
fn defaults_fill_run_and_thresholds() {
    let cfg = parse_scenario_str(STANDING).unwrap();
    assert_eq!(cfg.run.seed, 42);
    assert_eq!(cfg.run.bins, 64);
    assert_eq!(cfg.verify.probes, 100);
    assert_eq!(cfg.model.kind, ModelKind::KleinGordon);
    let g = cfg.build_geometry().unwrap();
    let t = 2.0 * std::f64::consts::PI / 2f64.sqrt();
    assert!((g.axes[0].length - t).abs() < 1e-12);
    // t = 0 sits at the centre of the first time bin.
    assert!((g.axes[0].origin + t / 128.0).abs() < 1e-12);
}

#[test]
fn off_shell_mode_is_named() {
    let text = STANDING.replace("k = [-1.0]", "k = [-1.1]");
    let err = parse_scenario_str(&text).unwrap_err();
    let issues = err.issues();
    assert!(issues.iter().any(|i| i.field == "model.modes[1]" && i.message.contains("off-shell")), "{err}");
}

#[test]
fn explicit_energy_is_checked() {
    let text = STANDING
        .replace("shared_energy = 1.4142135623730951\n", "")
        .replace("amplitude = [0.4, 0.0]", "amplitude = [0.4, 0.0]\nenergy = 1.5")
        .replace("box_lengths", "time_period = 4.442882938158366\nbox_lengths");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(err.issues().iter().any(|i| i.field == "model.modes[1]"), "{err}");
}

#[test]
fn non_commensurate_box_is_rejected() {
    let text = STANDING.replace("box_lengths = [6.283185307179586]", "box_lengths = [5.0]");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(
        err.issues()
            .iter()
            .any(|i| i.field == "geometry.box_lengths[0]" && i.message.contains("non-commensurate")),
        "{err}"
    );
}

#[test]
fn non_commensurate_time_period_is_rejected() {
    let text = STANDING.replace("box_lengths", "time_period = 3.0\nbox_lengths");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(err.issues().iter().any(|i| i.field == "geometry.time_period"), "{err}");
}

#[test]
fn all_issues_are_reported_together() {
    let text = format!("{STANDING}\n[run]\ndtau = -1.0\nbins = 2\n[verify]\ntolerance = 0.0\n");
    let err = parse_scenario_str(&text).unwrap_err();
    let fields: Vec<&str> = err.issues().iter().map(|i| i.field.as_str()).collect();
    for f in ["run.dtau", "run.bins", "verify.tolerance"] {
        assert!(fields.contains(&f), "{fields:?}");
    }
}

#[test]
fn syntax_and_unknown_fields_are_parse_errors() {
    assert!(matches!(parse_scenario_str("name = "), Err(ScenarioError::Parse(_))));
    let text = STANDING.replace("[geometry]", "[geometry]\nbox_length = 1.0");
    assert!(matches!(parse_scenario_str(&text), Err(ScenarioError::Parse(_))));
}

#[test]
fn kind_specific_fields_are_enforced() {
    let text = STANDING.replace("signature = [1, -1]\n", "");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(err.issues().iter().any(|i| i.field == "model.signature"));
    let text = STANDING.replace("kind = \"klein_gordon\"", "kind = \"schrodinger\"");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(err.issues().iter().any(|i| i.field == "model.shared_energy"));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        parse_scenario(&bundled().join("no_such_file.toml")),
        Err(ScenarioError::Io { .. })
    ));
}

#[test]
fn schrodinger_geometry_uses_an_open_lab_time_axis() {
    let cfg = load("mixed_schrodinger.toml");
    let g = cfg.build_geometry().unwrap();
    assert!(!g.axes[0].periodic);
    assert_eq!(g.axes[0].origin, cfg.geometry.lab_time_start);
    assert!(g.axes[1].periodic);
}
