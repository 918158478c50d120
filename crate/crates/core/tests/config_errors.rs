mod common;

use fourbar_opt::pipeline::{ConfigError, PipelineConfig};
use std::path::Path;

fn base() -> toml::Table {
    let text = std::fs::read_to_string(common::config_path("synthetic.toml")).unwrap();
    text.parse().unwrap()
}

fn load(table: &toml::Table) -> Result<PipelineConfig, ConfigError> {
    PipelineConfig::from_toml_str(&toml::to_string(table).unwrap(), Path::new("."))
}

fn set(table: &mut toml::Table, path: &[&str], value: toml::Value) {
    let (last, parents) = path.split_last().unwrap();
    let mut t = table;
    for p in parents {
        t = t.get_mut(*p).unwrap().as_table_mut().unwrap();
    }
    t.insert(last.to_string(), value);
}

fn remove(table: &mut toml::Table, path: &[&str]) {
    let (last, parents) = path.split_last().unwrap();
    let mut t = table;
    for p in parents {
        t = t.get_mut(*p).unwrap().as_table_mut().unwrap();
    }
    t.remove(*last);
}

fn with(path: &[&str], value: toml::Value) -> Result<PipelineConfig, ConfigError> {
    let mut t = base();
    set(&mut t, path, value);
    load(&t)
}

fn floats(v: &[f64]) -> toml::Value {
    toml::Value::Array(v.iter().map(|x| toml::Value::Float(*x)).collect())
}

#[test]
fn shipped_configs_load() {
    for name in ["synthetic.toml", "ventilator.toml"] {
        PipelineConfig::load(&common::config_path(name)).unwrap();
    }
}

#[test]
fn missing_file() {
    let err = PipelineConfig::load(Path::new("/nonexistent/config.toml")).unwrap_err();
    assert!(matches!(err, ConfigError::Read { .. }), "{err}");
}

#[test]
fn malformed_and_unknown_keys() {
    let err = PipelineConfig::from_toml_str("format_version = [", Path::new(".")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)), "{err}");
    let err = with(&["sampling", "spacing"], 1.0.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)), "{err}");
    let mut t = base();
    remove(&mut t, &["design_box"]);
    assert!(matches!(load(&t), Err(ConfigError::Parse(_))));
}

#[test]
fn format_version() {
    let err = with(&["format_version"], 2.into()).unwrap_err();
    assert!(
        matches!(
            err,
            ConfigError::Version {
                found: 2,
                expected: 1
            }
        ),
        "{err}"
    );
}

#[test]
fn design_box() {
    let err = with(&["design_box", "bc"], floats(&[300.0, 200.0])).unwrap_err();
    assert!(
        matches!(err, ConfigError::DesignBox { axis: "bc", .. }),
        "{err}"
    );
    let err = with(&["design_box", "oa"], floats(&[0.0, 10.0])).unwrap_err();
    assert!(
        matches!(err, ConfigError::DesignBox { axis: "oa", .. }),
        "{err}"
    );
}

#[test]
fn geometry() {
    let err = with(&["geometry", "pivot_c"], floats(&[0.0, 0.0])).unwrap_err();
    assert!(matches!(err, ConfigError::Geometry(_)), "{err}");
    let mut t = base();
    let mut ee = toml::Table::new();
    ee.insert("k".into(), 5.0.into());
    ee.insert("b".into(), 2.0.into());
    set(&mut t, &["geometry", "end_effector"], ee.into());
    assert!(matches!(load(&t), Err(ConfigError::Geometry(_))));
}

#[test]
fn task() {
    let err = with(&["task", "psi_e"], (-0.05).into()).unwrap_err();
    assert!(matches!(err, ConfigError::Task(_)), "{err}");
    let err = with(&["task", "delta_i"], 0.1.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Task(_)), "{err}");
    // End-effector angles without the end-effector geometry.
    let mut t = base();
    remove(&mut t, &["task", "psi_i"]);
    remove(&mut t, &["task", "psi_e"]);
    set(&mut t, &["task", "delta_i"], 0.1.into());
    set(&mut t, &["task", "delta_e"], 0.3.into());
    assert!(matches!(load(&t), Err(ConfigError::Task(_))));
}

#[test]
fn motion() {
    let err = with(&["motion", "period"], (-1.0).into()).unwrap_err();
    assert!(matches!(err, ConfigError::Motion(_)), "{err}");
    let err = with(&["motion", "n_samples"], 10.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Motion(_)), "{err}");
}

#[test]
fn mass() {
    let err = with(&["mass", "end_effector_mass"], (-2.0).into()).unwrap_err();
    assert!(matches!(err, ConfigError::Mass(_)), "{err}");
}

#[test]
fn objective() {
    let err = with(&["objective", "terms"], toml::Value::Array(vec![])).unwrap_err();
    assert!(matches!(err, ConfigError::Objective(_)), "{err}");
}

#[test]
fn sampling() {
    let mut zero = toml::Table::new();
    for k in ["oa", "bc", "ab"] {
        zero.insert(k.into(), 0.0.into());
    }
    let err = with(&["sampling", "delta"], zero.clone().into()).unwrap_err();
    assert!(matches!(err, ConfigError::Sampling(_)), "{err}");
    let err = with(&["sampling", "lines"], 4.into()).unwrap_err();
    assert!(err.to_string().contains("4 lines"), "{err}");
    let err = with(&["sampling", "min_samples"], 500.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Sampling(_)), "{err}");
    let err = with(&["sampling", "origin_shift"], zero.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Sampling(_)), "{err}");
}

#[test]
fn fitting() {
    let err = with(&["fitting", "svd_tol"], 2.0.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Fitting(_)), "{err}");
    let err = with(&["fitting", "order"], 0.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Fitting(_)), "{err}");
    let err = with(&["fitting", "order"], 30.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Fitting(_)), "{err}");
}

#[test]
fn validation() {
    let err = with(&["validation", "lines"], 0.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Validation(_)), "{err}");
    let err = with(&["validation", "min_angle_deg"], 0.0.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Validation(_)), "{err}");
}

#[test]
fn optimization() {
    let err = with(
        &["optimization", "resolution"],
        toml::Value::Array(vec![1.into(), 5.into(), 5.into()]),
    )
    .unwrap_err();
    assert!(matches!(err, ConfigError::Optimization(_)), "{err}");
    let err = with(&["optimization", "local_search"], true.into()).unwrap_err();
    assert!(matches!(err, ConfigError::Optimization(_)), "{err}");
}
