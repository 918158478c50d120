//! Global design optimization of planar four-bar point-to-point mechanisms.
//!
//! The crate covers the full chain from linkage geometry to an optimum:
//!
//! - [`geometry`]: closed-form position analysis and the end-effector angle map.
//! - [`feasibility`]: assemblability and branch/circuit-defect screening.
//! - [`motion`]: inverse kinematics and inverse dynamics, reduced to the RMS torque.
//! - [`sparse`]: per-line exponential fits blended into a 3D surrogate.
//! - [`optimizer`]: trust region, brute-force grid search and a pattern-search baseline.
//! - [`pipeline`]: configuration, sample cache and the batch commands behind the CLI.

// Checks like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod feasibility;
pub mod geometry;
pub mod motion;
pub mod optimizer;
pub mod pipeline;
pub mod sparse;

pub use feasibility::{classify, FeasibilityReport, PtpTask};
pub use geometry::{Elbow, EndEffectorMap, FourBarDesign, LinkagePose, Vec2};
pub use motion::{
    sample_objective, MassModel, MotionLaw, ObjectiveSample, ProfileLaw, TorqueTrace,
};

/// Design-space vector `(|OA|, |BC|, |AB|)` in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
