//! The objective as the pipeline sees it: a function of the design vector that
//! is either simulated or, for verification runs, given in closed form.

use super::config::{ConfigError, DesignBox, ExpTerm, ObjectiveConfig, PipelineConfig};
use crate::motion::{sample_objective, InfeasibleReason, MassModel, MotionLaw, ObjectiveSample};
use crate::optimizer::{DesignSpace, NodeStatus};
use crate::Vec3;
use serde::Serialize;

/// Version tag of the simulator; cached samples from another version are not reused.
pub const SIM_VERSION: &str = "fourbar-sim/1";

#[derive(Debug, Clone)]
pub struct Problem {
    pub design_box: DesignBox,
    pub space: DesignSpace,
    pub law: MotionLaw,
    pub mass: MassModel,
    pub objective: ObjectiveConfig,
}

impl Problem {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            design_box: config.design_box,
            space: config.design_space()?,
            law: config.motion_law()?,
            mass: config.mass,
            objective: config.objective.clone(),
        })
    }

    /// Objective sample at an absolute design vector.
    pub fn evaluate(&self, x: &Vec3) -> ObjectiveSample {
        if !self.design_box.contains(x) {
            return ObjectiveSample::Infeasible {
                reason: InfeasibleReason::OutsideBox,
            };
        }
        match &self.objective {
            ObjectiveConfig::Simulator => match self.space.design(x) {
                Some(design) => sample_objective(&design, &self.space.task, &self.law, &self.mass),
                None => ObjectiveSample::Infeasible {
                    reason: InfeasibleReason::Unassemblable,
                },
            },
            ObjectiveConfig::Synthetic { terms } => {
                let v = synthetic_value(terms, x);
                ObjectiveSample::Value { t_rms: v, t_max: v }
            }
        }
    }

    /// Cheap feasibility screen (no dynamics pass).
    pub fn status(&self, x: &Vec3) -> NodeStatus {
        if !self.design_box.contains(x) {
            return NodeStatus::StaticInfeasible;
        }
        match self.objective {
            ObjectiveConfig::Simulator => self.space.status(x),
            ObjectiveConfig::Synthetic { .. } => NodeStatus::Feasible,
        }
    }
}

pub fn synthetic_value(terms: &[ExpTerm], x: &Vec3) -> f64 {
    terms
        .iter()
        .map(|t| t.coefficient * t.exponent.to_vec3().dot(x).exp())
        .sum()
}

/// Digest of every input that determines the training samples.
pub fn sampling_fingerprint(config: &PipelineConfig) -> String {
    #[derive(Serialize)]
    struct Inputs<'a> {
        design_box: &'a DesignBox,
        geometry: &'a super::config::GeometryConfig,
        task: &'a super::config::TaskConfig,
        motion: &'a super::config::MotionConfig,
        mass: &'a MassModel,
        objective: &'a ObjectiveConfig,
        sampling: &'a super::config::SamplingConfig,
    }
    let inputs = Inputs {
        design_box: &config.design_box,
        geometry: &config.geometry,
        task: &config.task,
        motion: &config.motion,
        mass: &config.mass,
        objective: &config.objective,
        sampling: &config.sampling,
    };
    super::cache::sha256_hex(
        serde_json::to_string(&inputs)
            .expect("config serializes")
            .as_bytes(),
    )
}
