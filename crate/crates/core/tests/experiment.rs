//! Experiment runner: identification, closed loop, artifacts, comparison.

use std::path::Path;

use mmpc_core::experiment::{
    cmd_compare, cmd_control, compare_runs, identify, read_trajectory, simulate, write_run, ControlMode,
    ExperimentConfig,
};
use mmpc_core::Error;

const SMALL: &str = r#"
[plant]
noise_std = [0.0, 0.0]

[excitation]
register_length = 9
clock_period = 3
samples = 2000
amplitude = [4.0, 1.0]

[identification]
[[identification.models]]
id = "a"
future = 10
past = 10
order = { method = "aic", min = 1, max = 6 }
gain = "riccati"

[[identification.models]]
id = "b"
future = 10
past = 10
order = { method = "aic", min = 1, max = 6 }
gain = "riccati"

[controller]
prediction_horizon = 30
control_horizon = 10
output_weights = [1.0, 1.0]
move_weights = [0.1, 0.1]
y_min = [0.0, 0.0]
y_max = [900.0, 1150.0]
ts = 0.5

[multimodel]
models = ["a", "b"]

[run]
duration = 30.0
seed = 3
initial_setpoint = [777.0, 965.0]

[[run.setpoints]]
t = 2.0
values = [780.0, 965.0]

[output]
directory = "out"
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = text.replace("directory = \"out\"", &format!("directory = {:?}", out.to_str().unwrap()));
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_section_is_a_config_error_naming_it() {
    let text = SMALL.replace("[excitation]", "[ignored_excitation]");
    // unknown section is itself rejected
    assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));

    let mut cfg = small();
    cfg.excitation = None;
    match identify(&cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("[excitation]"), "{msg}"),
        other => panic!("expected config error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn split_is_reported() {
    let mut cfg = small();
    cfg.excitation.as_mut().unwrap().samples = 5000;
    let out = identify(&cfg).unwrap();
    assert_eq!((out.n_train, out.n_valid), (2500, 2500));
    assert!(out.summary().contains("2500 train / 2500 validation"));
}

#[test]
fn empty_schedule_holds_equilibrium() {
    let mut cfg = small();
    let run = cfg.run.as_mut().unwrap();
    run.setpoints.clear();
    run.initial_setpoint = None;
    let models = identify(&cfg).unwrap().models();
    for mode in [ControlMode::Single, ControlMode::Multi] {
        let out = simulate(&cfg, mode, &models).unwrap();
        for c in &out.summary.channels {
            assert!(c.iae < 1e-6, "{mode:?}: IAE {}", c.iae);
        }
        assert!(out.rows.iter().all(|r| r.du.iter().all(|d| d.abs() < 1e-9)));
    }
}

#[test]
fn single_mode_equals_duplicate_bank() {
    let cfg = small();
    let models = identify(&cfg).unwrap().models();
    assert_eq!(models[0].model, models[1].model);
    let single = simulate(&cfg, ControlMode::Single, &models).unwrap();
    let multi = simulate(&cfg, ControlMode::Multi, &models).unwrap();
    assert_eq!(single.rows.len(), multi.rows.len());
    for (s, m) in single.rows.iter().zip(&multi.rows) {
        assert_eq!(s.u, m.u);
        assert_eq!(s.y, m.y);
        assert_eq!(s.model_id, m.model_id);
    }
    assert_eq!(multi.summary.selection_frequency, vec![1.0, 0.0]);
}

#[test]
fn runs_are_reproducible_and_self_comparison_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), SMALL);
    let first = cmd_control(&path, ControlMode::Multi, true).unwrap();
    let copy = tmp.path().join("first");
    std::fs::rename(&first.dir, &copy).unwrap();
    let second = cmd_control(&path, ControlMode::Multi, true).unwrap();

    for name in ["trajectory.csv", "events.csv", "summary.toml", "config.toml"] {
        let a = std::fs::read(copy.join(name)).unwrap();
        let b = std::fs::read(second.dir.join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
    assert!(second.dir.join("metadata.toml").is_file());
    let resolved = ExperimentConfig::from_toml(&std::fs::read_to_string(second.dir.join("config.toml")).unwrap()).unwrap();
    assert!(resolved.plant.surrogate.is_some());

    let cmp = cmd_compare(&copy, &second.dir, Some(&tmp.path().join("cmp"))).unwrap();
    assert!(tmp.path().join("cmp/comparison.toml").is_file());
    assert!(tmp.path().join("cmp/overlay_y1.csv").is_file());
    assert!(cmp.report.contains("winner tie"));
    assert!(!cmp.report.contains("winner a") && !cmp.report.contains("winner b"));
}

#[test]
fn mismatched_schedules_and_missing_dirs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let models = identify(&cfg).unwrap().models();
    let a = simulate(&cfg, ControlMode::Single, &models).unwrap();
    let mut other = cfg.clone();
    other.run.as_mut().unwrap().setpoints[0].values = vec![781.0, 965.0];
    let b = simulate(&other, ControlMode::Single, &models).unwrap();
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    write_run(&a, &da, false).unwrap();
    write_run(&b, &db, false).unwrap();
    assert_eq!(read_trajectory(&da.join("trajectory.csv")).unwrap(), a.rows);

    match compare_runs(&da, &db, &tmp.path().join("c"), false) {
        Err(Error::Config(msg)) => assert!(msg.contains("mismatched schedules"), "{msg}"),
        other => panic!("expected config error, got {:?}", other.map(|_| ())),
    }
    assert!(matches!(
        compare_runs(&da, &tmp.path().join("nope"), &tmp.path().join("c"), false),
        Err(Error::Io { .. })
    ));
}

#[test]
fn control_without_identification_needs_model_files() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), SMALL);
    assert!(matches!(cmd_control(&path, ControlMode::Single, false), Err(Error::Config(_))));
}

#[test]
fn fallbacks_are_logged_when_a_bound_is_unreachable() {
    // the plant starts at y1 = 777, above this bound, and moves are limited
    let mut cfg = small();
    let mpc = cfg.controller.as_mut().unwrap();
    mpc.y_max = vec![776.0, 1150.0];
    mpc.du_max = Some(vec![0.2, 0.2]);
    let models = identify(&cfg).unwrap().models();
    let out = simulate(&cfg, ControlMode::Multi, &models).unwrap();
    let fallback_t: Vec<f64> = out.events.iter().filter(|e| e.kind == "fallback").map(|e| e.t).collect();
    assert!(out.summary.fallback_count > 0);
    assert_eq!(fallback_t.len(), out.summary.fallback_count);
    assert!(out.rows.iter().filter(|r| fallback_t.contains(&r.t)).all(|r| r.j.is_finite()));
    // bounds act on the model's predictions, so plant-model mismatch can
    // leave the plant marginally outside once the hard problem is feasible
    let worst = out
        .rows
        .iter()
        .filter(|r| !fallback_t.contains(&r.t))
        .map(|r| r.y[0] - 776.0)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < 0.1, "{worst}");
}
