//! Closed-form position analysis of the planar four-bar.
//!
//! The fixed frame has its origin in the driven joint `O`. The input link `OA`
//! makes angle `theta` with the x-axis, the output link `BC` makes angle `psi`
//! with the x-axis and rotates about the second ground pivot `C`.
//!
//! Given an output angle the input angle follows from the coupler length
//! constraint `|B - A|^2 = |AB|^2`, which reduces to
//! `U(psi) cos(theta) + V(psi) sin(theta) + W(psi) = 0`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Planar point or vector in millimetres.
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("link length {name} must be positive and finite, got {value}")]
    NonPositiveLength { name: &'static str, value: f64 },
    #[error("ground pivots O and C coincide")]
    CoincidentPivots,
    #[error("end-effector map requires b > 0 and |k| <= b (k = {k}, b = {b})")]
    InvalidEndEffector { k: f64, b: f64 },
    #[error("arcsine argument {value} outside [-1, 1] for delta = {delta}")]
    Domain { delta: f64, value: f64 },
}

/// Assembly configuration, distinguished by the side of diagonal `OB` on which
/// joint `A` lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Elbow {
    /// `A` on the counter-clockwise side of `O -> B` (cross product `OB x OA > 0`).
    #[default]
    Up,
    /// `A` on the clockwise side of `O -> B`.
    Down,
}

/// Link lengths and fixed ground geometry of one four-bar candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourBarDesign {
    pub oa: f64,
    pub ab: f64,
    pub bc: f64,
    pub pivot_c: Vec2,
    pub elbow: Elbow,
}

impl FourBarDesign {
    pub fn new(
        oa: f64,
        ab: f64,
        bc: f64,
        pivot_c: Vec2,
        elbow: Elbow,
    ) -> Result<Self, GeometryError> {
        for (name, value) in [("|OA|", oa), ("|AB|", ab), ("|BC|", bc)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GeometryError::NonPositiveLength { name, value });
            }
        }
        if pivot_c.x == 0.0 && pivot_c.y == 0.0 {
            return Err(GeometryError::CoincidentPivots);
        }
        Ok(Self {
            oa,
            ab,
            bc,
            pivot_c,
            elbow,
        })
    }

    /// Position of joint `B` for output angle `psi`.
    pub fn joint_b(&self, psi: f64) -> Vec2 {
        self.pivot_c + self.bc * Vec2::new(psi.cos(), psi.sin())
    }

    /// Coefficients `(U, V, W)` of the input/output relation at `psi`.
    pub fn uvw(&self, psi: f64) -> (f64, f64, f64) {
        let (s, c) = psi.sin_cos();
        let (xc, yc) = (self.pivot_c.x, self.pivot_c.y);
        let u = -2.0 * xc * self.oa - 2.0 * self.oa * self.bc * c;
        let v = -2.0 * yc * self.oa - 2.0 * self.oa * self.bc * s;
        let w = xc * xc + yc * yc + self.oa * self.oa + self.bc * self.bc - self.ab * self.ab
            + 2.0 * c * xc * self.bc
            + 2.0 * s * yc * self.bc;
        (u, v, w)
    }
}

/// Conversion from the end-effector beam angle `delta` to the output angle `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorMap {
    /// Fixed offset constant, mm.
    pub k: f64,
    /// Output beam length, mm.
    pub b: f64,
}

impl EndEffectorMap {
    pub fn new(k: f64, b: f64) -> Result<Self, GeometryError> {
        if !(b.is_finite() && k.is_finite() && b > 0.0 && k.abs() <= b) {
            return Err(GeometryError::InvalidEndEffector { k, b });
        }
        Ok(Self { k, b })
    }
}

/// Output angle for end-effector angle `delta`, principal arcsine branch.
///
/// `sin(delta) * k / tan(delta)` is evaluated as `k cos(delta)` so that
/// `delta = 0` needs no limit special case.
pub fn end_effector_to_output(delta: f64, map: &EndEffectorMap) -> Result<f64, GeometryError> {
    let (s, c) = delta.sin_cos();
    let arg = (map.k * c + s * (map.b * map.b - map.k * map.k).sqrt()) / map.b;
    if !arg.is_finite() || arg.abs() > 1.0 + 1e-12 {
        return Err(GeometryError::Domain { delta, value: arg });
    }
    Ok(arg.clamp(-1.0, 1.0).asin())
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// The two input-angle roots for one output angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputRoots {
    /// Root with the arccos term subtracted.
    pub minus: f64,
    /// Root with the arccos term added.
    pub plus: f64,
}

impl InputRoots {
    pub fn as_pair(&self) -> (f64, f64) {
        (self.minus, self.plus)
    }
}

/// Both input angles `theta` compatible with output angle `psi`, or `None` when
/// the linkage cannot be assembled there (or an input is NaN).
///
/// Before wrapping, `minus <= plus`; both are returned in `(-pi, pi]`.
pub fn output_to_input_angles(design: &FourBarDesign, psi: f64) -> Option<InputRoots> {
    let (u, v, w) = design.uvw(psi);
    let rho = u.hypot(v);
    let ratio = w / rho;
    if !ratio.is_finite() || !(-1.0..=1.0).contains(&ratio) {
        return None;
    }
    let base = v.atan2(u) + PI;
    let spread = ratio.acos();
    Some(InputRoots {
        minus: normalize_angle(base - spread),
        plus: normalize_angle(base + spread),
    })
}

/// Complete linkage configuration at one output angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkagePose {
    pub theta: f64,
    pub psi: f64,
    pub a_pt: Vec2,
    pub b_pt: Vec2,
    /// Both roots coincide with `A` on the diagonal `OB` (stretched or folded).
    pub degenerate: bool,
}

impl LinkagePose {
    /// Angle of the coupler `AB` against the x-axis.
    pub fn coupler_angle(&self) -> f64 {
        let d = self.b_pt - self.a_pt;
        d.y.atan2(d.x)
    }
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Pose on the design's elbow branch at output angle `psi`.
pub fn pose_for_output(design: &FourBarDesign, psi: f64) -> Option<LinkagePose> {
    let roots = output_to_input_angles(design, psi)?;
    let b_pt = design.joint_b(psi);
    let point = |theta: f64| design.oa * Vec2::new(theta.cos(), theta.sin());
    let (a_minus, a_plus) = (point(roots.minus), point(roots.plus));
    let (c_minus, c_plus) = (cross(&b_pt, &a_minus), cross(&b_pt, &a_plus));
    let scale = design.oa * b_pt.norm();
    // acos near +-1 loses half the digits, so the tolerance sits near sqrt(eps).
    let degenerate = c_minus.abs().max(c_plus.abs()) <= 1e-7 * scale;
    let pick_plus = match design.elbow {
        Elbow::Up => c_plus >= c_minus,
        Elbow::Down => c_plus < c_minus,
    };
    let (theta, a_pt) = if pick_plus {
        (roots.plus, a_plus)
    } else {
        (roots.minus, a_minus)
    };
    Some(LinkagePose {
        theta,
        psi,
        a_pt,
        b_pt,
        degenerate,
    })
}
