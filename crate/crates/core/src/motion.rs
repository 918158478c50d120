//! Two-pass motion simulation: imposed output motion, inverse kinematics for
//! the driver profile, then inverse dynamics for the driving torque at `O`.
//!
//! Links are uniform slender rods; a lumped end-effector mass rides on the
//! output link. The driving torque follows from the virtual-work balance in the
//! single generalized coordinate. Sensitivities are taken by finite differences
//! of the closed-form pose map in `psi` and converted to `theta` through
//! `dtheta/dpsi`.

use crate::feasibility::{classify, input_rate, DynamicFailure, PtpTask};
use crate::geometry::{normalize_angle, pose_for_output, FourBarDesign, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Step for first-order pose sensitivities, rad.
pub const SENSITIVITY_STEP: f64 = 1e-6;
/// Step for second-order pose sensitivities, rad.
pub const CURVATURE_STEP: f64 = 1e-4;

const MM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("motion law needs period > 0 and at least 64 samples (period {period}, samples {n_samples})")]
    InvalidLaw { period: f64, n_samples: usize },
    #[error("invalid mass model: {0}")]
    InvalidMass(&'static str),
    #[error("linkage cannot be assembled at psi = {psi}")]
    Unassemblable { psi: f64 },
    #[error("driver angle jumps by {jump} rad between samples {index} and {next} (bound {bound})", next = index + 1)]
    BranchJump { index: usize, jump: f64, bound: f64 },
    #[error("near-singular configuration at psi = {psi}")]
    NearSingular { psi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileLaw {
    Cubic,
    #[default]
    Quintic,
    Cycloidal,
}

impl ProfileLaw {
    /// Normalized displacement and its first two derivatives at `tau` in [0, 1].
    pub fn shape(self, tau: f64) -> (f64, f64, f64) {
        match self {
            ProfileLaw::Cubic => (
                tau * tau * (3.0 - 2.0 * tau),
                6.0 * tau * (1.0 - tau),
                6.0 - 12.0 * tau,
            ),
            ProfileLaw::Quintic => {
                let t2 = tau * tau;
                let t3 = t2 * tau;
                (
                    t3 * (10.0 - 15.0 * tau + 6.0 * t2),
                    30.0 * t2 * (1.0 - tau) * (1.0 - tau),
                    60.0 * tau * (1.0 - 3.0 * tau + 2.0 * t2),
                )
            }
            ProfileLaw::Cycloidal => {
                let (s, c) = (TAU * tau).sin_cos();
                (tau - s / TAU, 1.0 - c, TAU * s)
            }
        }
    }
}

/// Imposed reciprocating output motion. `period` is the duration of one stroke.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLaw {
    pub task: PtpTask,
    pub period: f64,
    pub profile: ProfileLaw,
    /// Samples per stroke, end points included.
    pub n_samples: usize,
}

impl MotionLaw {
    pub fn new(
        task: PtpTask,
        period: f64,
        profile: ProfileLaw,
        n_samples: usize,
    ) -> Result<Self, MotionError> {
        if !(period.is_finite() && period > 0.0) || n_samples < 64 {
            return Err(MotionError::InvalidLaw { period, n_samples });
        }
        Ok(Self {
            task,
            period,
            profile,
            n_samples,
        })
    }

    pub fn with_task(&self, task: PtpTask) -> Self {
        Self { task, ..*self }
    }
}

/// Uniformly time-sampled output motion.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputProfile {
    pub t: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_dot: Vec<f64>,
    pub psi_ddot: Vec<f64>,
}

pub fn generate_profile(law: &MotionLaw) -> OutputProfile {
    let n = law.n_samples;
    let span = law.task.stroke();
    let period = law.period;
    let mut out = OutputProfile {
        t: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        psi_dot: Vec::with_capacity(n),
        psi_ddot: Vec::with_capacity(n),
    };
    for k in 0..n {
        let tau = k as f64 / (n - 1) as f64;
        let (s, ds, dds) = law.profile.shape(tau);
        out.t.push(tau * period);
        out.psi.push(if k == n - 1 {
            law.task.psi_e
        } else {
            law.task.psi_i + span * s
        });
        out.psi_dot.push(span * ds / period);
        out.psi_ddot.push(span * dds / (period * period));
    }
    out
}

/// Driver motion reconstructed from an output profile.
#[derive(Debug, Clone, PartialEq)]
pub struct IkTrace {
    pub profile: OutputProfile,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
    /// `dtheta/dpsi` per sample.
    pub rate: Vec<f64>,
    /// `d2theta/dpsi2` per sample.
    pub curvature: Vec<f64>,
}

fn theta_at(design: &FourBarDesign, psi: f64) -> Result<f64, MotionError> {
    pose_for_output(design, psi)
        .map(|p| p.theta)
        .ok_or(MotionError::Unassemblable { psi })
}

fn second_difference(lo: f64, mid: f64, hi: f64, h: f64) -> f64 {
    (normalize_angle(hi - mid) - normalize_angle(mid - lo)) / (h * h)
}

pub fn inverse_kinematics_trace(
    design: &FourBarDesign,
    profile: &OutputProfile,
) -> Result<IkTrace, MotionError> {
    let n = profile.psi.len();
    let mut theta: Vec<f64> = Vec::with_capacity(n);
    let mut rate: Vec<f64> = Vec::with_capacity(n);
    let mut curvature = Vec::with_capacity(n);
    for (k, &psi) in profile.psi.iter().enumerate() {
        let raw = theta_at(design, psi)?;
        let value = match theta.last() {
            Some(&prev) => prev + normalize_angle(raw - prev),
            None => raw,
        };
        let r = input_rate(design, psi).map_err(|_| MotionError::NearSingular { psi })?;
        let h = CURVATURE_STEP;
        let c = second_difference(
            theta_at(design, psi - h)?,
            raw,
            theta_at(design, psi + h)?,
            h,
        );
        if k > 0 {
            let jump: f64 = (value - theta[k - 1]).abs();
            let dpsi = (psi - profile.psi[k - 1]).abs();
            let bound = rate[k - 1].abs().max(r.abs()) * dpsi;
            if jump > 10.0 * bound + 1e-12 {
                return Err(MotionError::BranchJump {
                    index: k - 1,
                    jump,
                    bound,
                });
            }
        }
        theta.push(value);
        rate.push(r);
        curvature.push(c);
    }
    let theta_dot = rate
        .iter()
        .zip(&profile.psi_dot)
        .map(|(r, w)| r * w)
        .collect();
    let theta_ddot = (0..n)
        .map(|k| curvature[k] * profile.psi_dot[k].powi(2) + rate[k] * profile.psi_ddot[k])
        .collect();
    Ok(IkTrace {
        profile: profile.clone(),
        theta,
        theta_dot,
        theta_ddot,
        rate,
        curvature,
    })
}

/// Which stroke carries the external load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stroke {
    /// `psi_i -> psi_e`.
    Forward,
    /// `psi_e -> psi_i`.
    #[default]
    Return,
}

/// Inertial, gravitational and dissipative properties of the mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassModel {
    /// Mass per unit length of OA, AB, BC, kg/m.
    pub link_density: [f64; 3],
    /// Lumped end-effector mass, kg.
    pub end_effector_mass: f64,
    /// Distance of the end-effector mass from `C` along the output link, mm.
    pub end_effector_arm: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: [f64; 2],
    /// Viscous damping at joints O, A, B, C, N m s/rad.
    pub joint_damping: [f64; 4],
    /// Resisting torque on the output link during the loaded stroke, N m.
    pub external_load_torque: f64,
    #[serde(default)]
    pub loaded_stroke: Stroke,
}

impl MassModel {
    /// No mass, no gravity, no damping, no load.
    pub fn zero() -> Self {
        Self {
            link_density: [0.0; 3],
            end_effector_mass: 0.0,
            end_effector_arm: 0.0,
            gravity: [0.0, 0.0],
            joint_damping: [0.0; 4],
            external_load_torque: 0.0,
            loaded_stroke: Stroke::Return,
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let finite = self
            .link_density
            .iter()
            .chain(&self.joint_damping)
            .chain(&self.gravity)
            .all(|v| v.is_finite())
            && self.end_effector_mass.is_finite()
            && self.end_effector_arm.is_finite()
            && self.external_load_torque.is_finite();
        if !finite {
            return Err(MotionError::InvalidMass(
                "all mass-model values must be finite",
            ));
        }
        if self.link_density.iter().any(|d| *d < 0.0) || self.end_effector_mass < 0.0 {
            return Err(MotionError::InvalidMass(
                "densities and masses must be non-negative",
            ));
        }
        if self.joint_damping.iter().any(|d| *d < 0.0) {
            return Err(MotionError::InvalidMass(
                "joint damping must be non-negative",
            ));
        }
        Ok(())
    }

    /// Same model with damping and load removed.
    pub fn conservative(&self) -> Self {
        Self {
            joint_damping: [0.0; 4],
            external_load_torque: 0.0,
            ..*self
        }
    }
}

/// Time-sampled driver motion and torque.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TorqueTrace {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
    pub torque: Vec<f64>,
}

impl TorqueTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Append another trace, shifting its time axis to start at `offset`.
    pub fn append_shifted(&mut self, other: &TorqueTrace, offset: f64) {
        self.t.extend(other.t.iter().map(|t| t + offset));
        self.theta.extend(&other.theta);
        self.theta_dot.extend(&other.theta_dot);
        self.theta_ddot.extend(&other.theta_ddot);
        self.torque.extend(&other.torque);
    }

    /// CSV with columns `t,theta,theta_dot,theta_ddot,torque`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,theta,theta_dot,theta_ddot,torque\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.t[k], self.theta[k], self.theta_dot[k], self.theta_ddot[k], self.torque[k]
            ));
        }
        out
    }
}

/// One rigid body of the mechanism as a function of the output angle.
#[derive(Debug, Clone, Copy)]
struct BodyState {
    com: Vec2,
    angle: f64,
}

/// Centres of mass (m) and orientations of OA, AB, BC and the end-effector.
fn bodies(design: &FourBarDesign, arm: f64, psi: f64) -> Result<[BodyState; 4], MotionError> {
    let pose = pose_for_output(design, psi).ok_or(MotionError::Unassemblable { psi })?;
    let c = design.pivot_c;
    let dir = Vec2::new(psi.cos(), psi.sin());
    Ok([
        BodyState {
            com: pose.a_pt * (0.5 * MM),
            angle: pose.theta,
        },
        BodyState {
            com: (pose.a_pt + pose.b_pt) * (0.5 * MM),
            angle: pose.coupler_angle(),
        },
        BodyState {
            com: (pose.b_pt + c) * (0.5 * MM),
            angle: psi,
        },
        BodyState {
            com: (c + dir * arm) * MM,
            angle: psi,
        },
    ])
}

/// Mass (kg) and central inertia (kg m^2) of OA, AB, BC and the end-effector.
fn inertia(design: &FourBarDesign, mass: &MassModel) -> [(f64, f64); 4] {
    let rod = |density: f64, len_mm: f64| {
        let len = len_mm * MM;
        let m = density * len;
        (m, m * len * len / 12.0)
    };
    [
        rod(mass.link_density[0], design.oa),
        rod(mass.link_density[1], design.ab),
        rod(mass.link_density[2], design.bc),
        (mass.end_effector_mass, 0.0),
    ]
}

/// First and second `psi`-derivatives of every body's COM and angle.
#[derive(Debug, Clone, Copy)]
struct Sensitivity {
    com_d: Vec2,
    com_dd: Vec2,
    angle_d: f64,
    angle_dd: f64,
}

fn sensitivities(
    design: &FourBarDesign,
    arm: f64,
    psi: f64,
) -> Result<[Sensitivity; 4], MotionError> {
    let h1 = SENSITIVITY_STEP;
    let h2 = CURVATURE_STEP;
    let mid = bodies(design, arm, psi)?;
    let p1 = bodies(design, arm, psi + h1)?;
    let m1 = bodies(design, arm, psi - h1)?;
    let p2 = bodies(design, arm, psi + h2)?;
    let m2 = bodies(design, arm, psi - h2)?;
    Ok(std::array::from_fn(|i| Sensitivity {
        com_d: (p1[i].com - m1[i].com) / (2.0 * h1),
        com_dd: (p2[i].com - mid[i].com * 2.0 + m2[i].com) / (h2 * h2),
        angle_d: normalize_angle(p1[i].angle - m1[i].angle) / (2.0 * h1),
        angle_dd: second_difference(m2[i].angle, mid[i].angle, p2[i].angle, h2),
    }))
}

/// Driver torque along a kinematic trace. `load_active` switches the external
/// load on for this stroke; it resists the direction of travel.
pub fn inverse_dynamics_torque(
    design: &FourBarDesign,
    mass: &MassModel,
    ik: &IkTrace,
    load_active: bool,
) -> Result<TorqueTrace, MotionError> {
    let props = inertia(design, mass);
    let g = Vec2::new(mass.gravity[0], mass.gravity[1]);
    let psi = &ik.profile.psi;
    let n = psi.len();
    let travel = (psi[n - 1] - psi[0]).signum();
    let load = if load_active {
        mass.external_load_torque * travel
    } else {
        0.0
    };
    let [d_o, d_a, d_b, d_c] = mass.joint_damping;
    let mut torque = Vec::with_capacity(n);
    for (k, &p) in psi.iter().enumerate() {
        let w = ik.profile.psi_dot[k];
        let wd = ik.profile.psi_ddot[k];
        let rate = ik.rate[k];
        if rate.abs() < 1e-9 {
            return Err(MotionError::NearSingular { psi: p });
        }
        let sens = sensitivities(design, mass.end_effector_arm, p)?;
        // Generalized force conjugate to psi.
        let mut q = load;
        for (s, (m, inertia)) in sens.iter().zip(props) {
            let acc = s.com_dd * (w * w) + s.com_d * wd;
            let alpha = s.angle_dd * w * w + s.angle_d * wd;
            q += m * (acc - g).dot(&s.com_d) + inertia * alpha * s.angle_d;
        }
        // Relative joint rates per unit psi-rate: O, A, B, C.
        let coupler = sens[1].angle_d;
        for (c, j) in [
            (d_o, rate),
            (d_a, coupler - rate),
            (d_b, 1.0 - coupler),
            (d_c, 1.0),
        ] {
            q += c * j * j * w;
        }
        torque.push(q / rate);
    }
    Ok(TorqueTrace {
        t: ik.profile.t.clone(),
        theta: ik.theta.clone(),
        theta_dot: ik.theta_dot.clone(),
        theta_ddot: ik.theta_ddot.clone(),
        torque,
    })
}

pub fn rms_torque(trace: &TorqueTrace) -> f64 {
    let sum: f64 = trace.torque.iter().map(|t| t * t).sum();
    (sum / trace.torque.len() as f64).sqrt()
}

pub fn max_torque(trace: &TorqueTrace) -> f64 {
    trace.torque.iter().fold(0.0, |acc, t| acc.max(t.abs()))
}

/// Kinetic and potential energy (J) of the mechanism at one state.
pub fn mechanism_energy(
    design: &FourBarDesign,
    mass: &MassModel,
    psi: f64,
    psi_dot: f64,
) -> Result<(f64, f64), MotionError> {
    let props = inertia(design, mass);
    let g = Vec2::new(mass.gravity[0], mass.gravity[1]);
    let state = bodies(design, mass.end_effector_arm, psi)?;
    let sens = sensitivities(design, mass.end_effector_arm, psi)?;
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for ((b, s), (m, inertia)) in state.iter().zip(&sens).zip(props) {
        let v = s.com_d * psi_dot;
        let omega = s.angle_d * psi_dot;
        kinetic += 0.5 * m * v.norm_squared() + 0.5 * inertia * omega * omega;
        potential -= m * g.dot(&b.com);
    }
    Ok((kinetic, potential))
}

/// Why a design has no objective value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InfeasibleReason {
    StaticInitial,
    StaticEnd,
    DirectionChange,
    NearSingular,
    BranchJump,
    Unassemblable,
    /// Outside the configured design box.
    OutsideBox,
}

impl InfeasibleReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            InfeasibleReason::StaticInitial => "static_initial",
            InfeasibleReason::StaticEnd => "static_end",
            InfeasibleReason::DirectionChange => "direction_change",
            InfeasibleReason::NearSingular => "near_singular",
            InfeasibleReason::BranchJump => "branch_jump",
            InfeasibleReason::Unassemblable => "unassemblable",
            InfeasibleReason::OutsideBox => "outside_box",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "static_initial" => InfeasibleReason::StaticInitial,
            "static_end" => InfeasibleReason::StaticEnd,
            "direction_change" => InfeasibleReason::DirectionChange,
            "near_singular" => InfeasibleReason::NearSingular,
            "branch_jump" => InfeasibleReason::BranchJump,
            "unassemblable" => InfeasibleReason::Unassemblable,
            "outside_box" => InfeasibleReason::OutsideBox,
            _ => return None,
        })
    }
}

impl From<MotionError> for InfeasibleReason {
    fn from(err: MotionError) -> Self {
        match err {
            MotionError::BranchJump { .. } => InfeasibleReason::BranchJump,
            MotionError::Unassemblable { .. } => InfeasibleReason::Unassemblable,
            _ => InfeasibleReason::NearSingular,
        }
    }
}

/// Objective value of one design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ObjectiveSample {
    Value { t_rms: f64, t_max: f64 },
    Infeasible { reason: InfeasibleReason },
}

impl ObjectiveSample {
    pub fn value(&self) -> Option<f64> {
        match self {
            ObjectiveSample::Value { t_rms, .. } => Some(*t_rms),
            ObjectiveSample::Infeasible { .. } => None,
        }
    }
}

/// Torque over one full reciprocal cycle: forward stroke then the mirrored
/// return stroke.
pub fn simulate_cycle(
    design: &FourBarDesign,
    law: &MotionLaw,
    mass: &MassModel,
) -> Result<TorqueTrace, MotionError> {
    let mut cycle = TorqueTrace::default();
    for (stroke, task) in [
        (Stroke::Forward, law.task),
        (Stroke::Return, law.task.reversed()),
    ] {
        let profile = generate_profile(&law.with_task(task));
        let ik = inverse_kinematics_trace(design, &profile)?;
        let trace = inverse_dynamics_torque(design, mass, &ik, mass.loaded_stroke == stroke)?;
        let offset = if stroke == Stroke::Forward {
            0.0
        } else {
            law.period
        };
        cycle.append_shifted(&trace, offset);
    }
    Ok(cycle)
}

/// Full pipeline for one design: feasibility, kinematic pass, dynamic pass,
/// reduction to the RMS torque.
pub fn sample_objective(
    design: &FourBarDesign,
    task: &PtpTask,
    law: &MotionLaw,
    mass: &MassModel,
) -> ObjectiveSample {
    let report = classify(design, task);
    if !report.feasible() {
        let reason = if !report.static_i {
            InfeasibleReason::StaticInitial
        } else if !report.static_e {
            InfeasibleReason::StaticEnd
        } else {
            match report.dynamic_failure {
                Some(DynamicFailure::NearSingular { .. }) => InfeasibleReason::NearSingular,
                _ => InfeasibleReason::DirectionChange,
            }
        };
        return ObjectiveSample::Infeasible { reason };
    }
    match simulate_cycle(design, &law.with_task(*task), mass) {
        Ok(trace) => ObjectiveSample::Value {
            t_rms: rms_torque(&trace),
            t_max: max_torque(&trace),
        },
        Err(err) => ObjectiveSample::Infeasible { reason: err.into() },
    }
}
