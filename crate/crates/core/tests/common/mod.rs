//! Helpers and independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fourbar_opt::pipeline::{PipelineConfig, Run};
use std::path::{Path, PathBuf};

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

/// Load a shipped configuration with its outputs redirected into `dir`.
pub fn config_in(name: &str, dir: &Path) -> PipelineConfig {
    let text = std::fs::read_to_string(config_path(name)).unwrap();
    let mut config = PipelineConfig::from_toml_str(&text, dir).unwrap();
    config.output.dir = PathBuf::from("out");
    config
}

pub fn run_in(name: &str, dir: &Path) -> Run {
    Run::new(config_in(name, dir), None, None, None).unwrap()
}

/// Joint A on the "up" branch (A left of O->B) by circle intersection, or
/// `None` when the triangle O-A-B cannot close.
pub fn joint_a(oa: f64, ab: f64, b: [f64; 2], up: bool) -> Option<[f64; 2]> {
    let d = b[0].hypot(b[1]);
    if !(d < oa + ab && d > (oa - ab).abs()) {
        return None;
    }
    let along = (oa * oa - ab * ab + d * d) / (2.0 * d);
    let h = (oa * oa - along * along).max(0.0).sqrt();
    let (ux, uy) = (b[0] / d, b[1] / d);
    let s = if up { h } else { -h };
    Some([ux * along - uy * s, uy * along + ux * s])
}

pub fn joint_b(bc: f64, c: [f64; 2], psi: f64) -> [f64; 2] {
    [c[0] + bc * psi.cos(), c[1] + bc * psi.sin()]
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let mut a = a.rem_euclid(t);
    if a > std::f64::consts::PI {
        a -= t;
    }
    a
}

/// Feasibility by brute force: the linkage closes at `steps + 1` evenly spaced
/// output angles and the driver angle moves in one direction throughout.
#[allow(clippy::too_many_arguments)]
pub fn sweep_feasible(
    oa: f64,
    ab: f64,
    bc: f64,
    c: [f64; 2],
    up: bool,
    psi_i: f64,
    psi_e: f64,
    steps: usize,
) -> bool {
    let mut prev: Option<f64> = None;
    let mut sign = 0.0;
    for k in 0..=steps {
        let psi = psi_i + (psi_e - psi_i) * k as f64 / steps as f64;
        let Some(a) = joint_a(oa, ab, joint_b(bc, c, psi), up) else {
            return false;
        };
        let theta = a[1].atan2(a[0]);
        if let Some(p) = prev {
            let d = wrap(theta - p);
            if d == 0.0 {
                return false;
            }
            if sign == 0.0 {
                sign = d.signum();
            } else if d.signum() != sign {
                return false;
            }
        }
        prev = Some(theta);
    }
    true
}
