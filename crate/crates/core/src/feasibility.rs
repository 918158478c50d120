//! Feasibility of a four-bar design for a point-to-point output task.
//!
//! A design is feasible when it can be assembled at both end angles of the
//! stroke and the driver angle keeps one direction of travel over the stroke,
//! checked through the sign of `dtheta/dpsi` at the two end points.

use crate::geometry::{normalize_angle, pose_for_output, FourBarDesign};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Finite-difference step for `dtheta/dpsi`, rad.
pub const RATE_STEP: f64 = 1e-6;

/// Margins below this are treated as the stretched/folded boundary.
pub const MARGIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error("task end angles must differ and lie in (-pi, pi] (psi_i = {psi_i}, psi_e = {psi_e})")]
    InvalidTask { psi_i: f64, psi_e: f64 },
    #[error("rate unreliable near the assembly boundary at psi = {psi} (margin {margin:e})")]
    NearSingular { psi: f64, margin: f64 },
}

/// Rest-to-rest output stroke between two angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtpTask {
    pub psi_i: f64,
    pub psi_e: f64,
}

impl PtpTask {
    pub fn new(psi_i: f64, psi_e: f64) -> Result<Self, FeasibilityError> {
        let in_range = |a: f64| a.is_finite() && a > -PI && a <= PI;
        if !(in_range(psi_i) && in_range(psi_e)) || psi_i == psi_e {
            return Err(FeasibilityError::InvalidTask { psi_i, psi_e });
        }
        Ok(Self { psi_i, psi_e })
    }

    pub fn reversed(&self) -> Self {
        Self {
            psi_i: self.psi_e,
            psi_e: self.psi_i,
        }
    }

    /// Output travel `psi_e - psi_i`.
    pub fn stroke(&self) -> f64 {
        self.psi_e - self.psi_i
    }
}

/// `U^2 + V^2 - W^2` at `psi`; non-negative exactly when the linkage assembles.
pub fn static_margin(design: &FourBarDesign, psi: f64) -> f64 {
    let (u, v, w) = design.uvw(psi);
    u * u + v * v - w * w
}

/// Both end angles assemble with a strictly positive margin.
pub fn is_static_feasible(design: &FourBarDesign, task: &PtpTask) -> bool {
    static_margin(design, task.psi_i) > 0.0 && static_margin(design, task.psi_e) > 0.0
}

/// `dtheta/dpsi` on the design's elbow branch by central differences.
pub fn input_rate(design: &FourBarDesign, psi: f64) -> Result<f64, FeasibilityError> {
    rate_with_step(design, psi, RATE_STEP)
}

pub(crate) fn rate_with_step(
    design: &FourBarDesign,
    psi: f64,
    h: f64,
) -> Result<f64, FeasibilityError> {
    let probe = |p: f64| {
        let margin = static_margin(design, p);
        if margin.is_nan() || margin < MARGIN_FLOOR {
            return Err(FeasibilityError::NearSingular { psi, margin });
        }
        pose_for_output(design, p)
            .map(|pose| pose.theta)
            .ok_or(FeasibilityError::NearSingular { psi, margin })
    };
    let hi = probe(psi + h)?;
    let lo = probe(psi - h)?;
    Ok(normalize_angle(hi - lo) / (2.0 * h))
}

/// Why the driver-direction check failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DynamicFailure {
    /// `dtheta/dpsi` changes sign between the two end angles.
    SignChange,
    /// The rate could not be evaluated reliably at this angle.
    NearSingular { psi: f64 },
}

/// Sign check of `dtheta/dpsi` at both end angles.
pub fn dynamic_check(design: &FourBarDesign, task: &PtpTask) -> Result<(f64, f64), DynamicFailure> {
    let rate = |psi: f64| input_rate(design, psi).map_err(|_| DynamicFailure::NearSingular { psi });
    let ri = rate(task.psi_i)?;
    let re = rate(task.psi_e)?;
    if ri == 0.0 || re == 0.0 || ri.signum() != re.signum() {
        return Err(DynamicFailure::SignChange);
    }
    Ok((ri, re))
}

pub fn is_dynamic_feasible(design: &FourBarDesign, task: &PtpTask) -> bool {
    dynamic_check(design, task).is_ok()
}

/// Outcome of the full feasibility classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub static_i: bool,
    pub static_e: bool,
    pub dynamic_ok: bool,
    pub margin_i: f64,
    pub margin_e: f64,
    pub rate_i: Option<f64>,
    pub rate_e: Option<f64>,
    pub dynamic_failure: Option<DynamicFailure>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.static_i && self.static_e && self.dynamic_ok
    }
}

pub fn classify(design: &FourBarDesign, task: &PtpTask) -> FeasibilityReport {
    let margin_i = static_margin(design, task.psi_i);
    let margin_e = static_margin(design, task.psi_e);
    let static_i = margin_i > 0.0;
    let static_e = margin_e > 0.0;
    let mut report = FeasibilityReport {
        static_i,
        static_e,
        dynamic_ok: false,
        margin_i,
        margin_e,
        rate_i: None,
        rate_e: None,
        dynamic_failure: None,
    };
    if !(static_i && static_e) {
        return report;
    }
    match dynamic_check(design, task) {
        Ok((ri, re)) => {
            report.dynamic_ok = true;
            report.rate_i = Some(ri);
            report.rate_e = Some(re);
        }
        Err(failure) => {
            report.rate_i = input_rate(design, task.psi_i).ok();
            report.rate_e = input_rate(design, task.psi_e).ok();
            report.dynamic_failure = Some(failure);
        }
    }
    report
}
