//! Pipeline configuration (TOML).

use crate::feasibility::PtpTask;
use crate::geometry::{end_effector_to_output, Elbow, EndEffectorMap, Vec2};
use crate::motion::{MassModel, MotionLaw, ProfileLaw};
use crate::optimizer::{Bounds, DesignSpace};
use crate::Vec3;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported format_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("design_box.{axis}: need 0 < min < max, got [{min}, {max}]")]
    DesignBox {
        axis: &'static str,
        min: f64,
        max: f64,
    },
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("task: {0}")]
    Task(String),
    #[error("motion: {0}")]
    Motion(String),
    #[error("mass: {0}")]
    Mass(String),
    #[error("objective: {0}")]
    Objective(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("fitting: {0}")]
    Fitting(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("optimization: {0}")]
    Optimization(String),
}

/// Link lengths by name, mm. As a design-space vector the order is
/// `(|OA|, |BC|, |AB|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lengths {
    pub oa: f64,
    pub bc: f64,
    pub ab: f64,
}

impl Lengths {
    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.oa, self.bc, self.ab)
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        Self {
            oa: v.x,
            bc: v.y,
            ab: v.z,
        }
    }

    fn is_finite(&self) -> bool {
        self.oa.is_finite() && self.bc.is_finite() && self.ab.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBox {
    pub oa: [f64; 2],
    pub bc: [f64; 2],
    pub ab: [f64; 2],
}

impl DesignBox {
    pub fn bounds(&self) -> Bounds {
        [self.oa, self.bc, self.ab]
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.bounds()
            .iter()
            .zip(x.iter())
            .all(|(r, v)| *v >= r[0] && *v <= r[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub pivot_c: [f64; 2],
    #[serde(default)]
    pub elbow: Elbow,
    /// Needed only when the task is given in end-effector angles.
    #[serde(default)]
    pub end_effector: Option<EndEffectorConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffectorConfig {
    pub k: f64,
    pub b: f64,
}

/// Stroke end points, either as output angles or as end-effector angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub psi_i: Option<f64>,
    pub psi_e: Option<f64>,
    pub delta_i: Option<f64>,
    pub delta_e: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    /// Duration of one stroke, s.
    pub period: f64,
    #[serde(default)]
    pub profile: ProfileLaw,
    pub n_samples: usize,
}

/// One term `coefficient * exp(<exponent, U>)` of a synthetic objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTerm {
    pub coefficient: f64,
    pub exponent: Lengths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// The inverse-dynamics simulator.
    Simulator,
    /// A closed-form sum of exponentials, feasible everywhere in the design box.
    Synthetic { terms: Vec<ExpTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Step between consecutive samples on a line, mm.
    pub delta: Lengths,
    pub lines: usize,
    /// Start of line 0.
    pub origin_shift: Lengths,
    /// Explicit line offsets relative to `origin_shift`; the first must be zero.
    #[serde(default)]
    pub shifts: Option<Vec<Lengths>>,
    /// Longest line, in steps.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Shortest acceptable line, in samples.
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    /// Steps a line must stay feasible beyond its last sample, keeping samples
    /// away from the steep rise of the torque near singular configurations.
    #[serde(default)]
    pub boundary_margin: usize,
    /// Candidate lines per axis of the normal plane when shifts are chosen automatically.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
}

fn default_max_steps() -> usize {
    400
}
fn default_min_samples() -> usize {
    16
}
fn default_candidates() -> usize {
    21
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittingConfig {
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default = "default_svd_tol")]
    pub svd_tol: f64,
}

fn default_svd_tol() -> f64 {
    crate::sparse::DEFAULT_SVD_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub lines: usize,
    /// Split point for the restricted RMSE, N m.
    pub threshold: f64,
    pub seed: u64,
    /// Fewest points on one holdout line.
    #[serde(default = "default_min_points")]
    pub min_points: usize,
    /// Evenly spaced points on each holdout chord, before infeasible ones are dropped.
    #[serde(default = "default_points_per_line")]
    pub points_per_line: usize,
    /// Smallest angle between a holdout direction and the sampling direction, degrees.
    #[serde(default = "default_min_angle")]
    pub min_angle_deg: f64,
}

fn default_min_points() -> usize {
    8
}
fn default_points_per_line() -> usize {
    24
}
fn default_min_angle() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    pub resolution: [usize; 3],
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Reference design for savings, also the local-search start.
    #[serde(default)]
    pub original: Option<Lengths>,
    #[serde(default)]
    pub local_search: bool,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
}

fn default_top_k() -> usize {
    10
}
fn default_max_evaluations() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the configuration file.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub name: String,
    pub design_box: DesignBox,
    pub geometry: GeometryConfig,
    pub task: TaskConfig,
    pub motion: MotionConfig,
    pub mass: MassModel,
    pub objective: ObjectiveConfig,
    pub sampling: SamplingConfig,
    pub fitting: FittingConfig,
    pub validation: ValidationConfig,
    pub optimization: OptimizationConfig,
    pub output: OutputConfig,
    /// Directory of the configuration file; output paths are relative to it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml_str(&text, &base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: PipelineConfig = toml::from_str(text)?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }

    /// Check every invariant the later stages rely on.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(ConfigError::Version {
                found: self.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        for (axis, r) in [
            ("oa", self.design_box.oa),
            ("bc", self.design_box.bc),
            ("ab", self.design_box.ab),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] < r[1]) {
                return Err(ConfigError::DesignBox {
                    axis,
                    min: r[0],
                    max: r[1],
                });
            }
        }
        let c = self.geometry.pivot_c;
        if !(c[0].is_finite() && c[1].is_finite()) || (c[0] == 0.0 && c[1] == 0.0) {
            return Err(ConfigError::Geometry(
                "pivot_c must be finite and distinct from the origin".into(),
            ));
        }
        if let Some(ee) = self.geometry.end_effector {
            EndEffectorMap::new(ee.k, ee.b).map_err(|e| ConfigError::Geometry(e.to_string()))?;
        }
        let task = self.task()?;
        MotionLaw::new(
            task,
            self.motion.period,
            self.motion.profile,
            self.motion.n_samples,
        )
        .map_err(|e| ConfigError::Motion(e.to_string()))?;
        self.mass
            .validate()
            .map_err(|e| ConfigError::Mass(e.to_string()))?;
        if let ObjectiveConfig::Synthetic { terms } = &self.objective {
            if terms.is_empty() {
                return Err(ConfigError::Objective(
                    "a synthetic objective needs at least one term".into(),
                ));
            }
            if terms
                .iter()
                .any(|t| !(t.coefficient.is_finite() && t.exponent.is_finite()))
            {
                return Err(ConfigError::Objective("terms must be finite".into()));
            }
        }
        self.validate_sampling()?;
        let fit = &self.fitting;
        if !(fit.svd_tol > 0.0 && fit.svd_tol < 1.0) {
            return Err(ConfigError::Fitting("svd_tol must lie in (0, 1)".into()));
        }
        if fit.order == Some(0) {
            return Err(ConfigError::Fitting("order must be at least 1".into()));
        }
        if let Some(n) = fit.order {
            if self.sampling.min_samples < 2 * n {
                return Err(ConfigError::Fitting(format!(
                    "order {n} needs sampling.min_samples >= {}",
                    2 * n
                )));
            }
        }
        let v = &self.validation;
        if v.lines == 0 || v.min_points < 2 || v.points_per_line < v.min_points {
            return Err(ConfigError::Validation(
                "need lines >= 1 and 2 <= min_points <= points_per_line".into(),
            ));
        }
        if !v.threshold.is_finite() {
            return Err(ConfigError::Validation("threshold must be finite".into()));
        }
        if !(v.min_angle_deg > 0.0 && v.min_angle_deg <= 90.0) {
            return Err(ConfigError::Validation(
                "min_angle_deg must lie in (0, 90]".into(),
            ));
        }
        let o = &self.optimization;
        if o.resolution.iter().any(|r| *r < 2) {
            return Err(ConfigError::Optimization(
                "resolution must be at least 2 per axis".into(),
            ));
        }
        if let Some(orig) = o.original {
            if !self.design_box.contains(&orig.to_vec3()) {
                return Err(ConfigError::Optimization(
                    "original design lies outside the design box".into(),
                ));
            }
        } else if o.local_search {
            return Err(ConfigError::Optimization(
                "local_search needs an original design to start from".into(),
            ));
        }
        Ok(())
    }

    fn validate_sampling(&self) -> Result<(), ConfigError> {
        let s = &self.sampling;
        let delta = s.delta.to_vec3();
        if !(s.delta.is_finite() && delta.norm() > 0.0) {
            return Err(ConfigError::Sampling(
                "delta must be nonzero and finite".into(),
            ));
        }
        if s.lines == 0 {
            return Err(ConfigError::Sampling("need at least one line".into()));
        }
        if !self.design_box.contains(&s.origin_shift.to_vec3()) {
            return Err(ConfigError::Sampling(
                "origin_shift lies outside the design box".into(),
            ));
        }
        if s.min_samples < 2 || s.max_steps < s.min_samples {
            return Err(ConfigError::Sampling(
                "need 2 <= min_samples <= max_steps".into(),
            ));
        }
        if s.candidates < 2 {
            return Err(ConfigError::Sampling(
                "candidates must be at least 2".into(),
            ));
        }
        if let Some(shifts) = &s.shifts {
            if shifts.len() != s.lines {
                return Err(ConfigError::Sampling(format!(
                    "{} shifts given for {} lines",
                    shifts.len(),
                    s.lines
                )));
            }
            if shifts[0].to_vec3() != Vec3::zeros() {
                return Err(ConfigError::Sampling("the first shift must be zero".into()));
            }
            for (i, a) in shifts.iter().enumerate() {
                if !a.is_finite() {
                    return Err(ConfigError::Sampling("shifts must be finite".into()));
                }
                if shifts[..i].iter().any(|b| b == a) {
                    return Err(ConfigError::Sampling(format!(
                        "shift {i} repeats an earlier one"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stroke end points as output angles.
    pub fn task(&self) -> Result<PtpTask, ConfigError> {
        let t = &self.task;
        let (psi_i, psi_e) = match (t.psi_i, t.psi_e, t.delta_i, t.delta_e) {
            (Some(i), Some(e), None, None) => (i, e),
            (None, None, Some(di), Some(de)) => {
                let ee = self.geometry.end_effector.ok_or_else(|| {
                    ConfigError::Task("end-effector angles need geometry.end_effector".into())
                })?;
                let map = EndEffectorMap::new(ee.k, ee.b)
                    .map_err(|e| ConfigError::Geometry(e.to_string()))?;
                let conv = |d: f64| {
                    end_effector_to_output(d, &map).map_err(|e| ConfigError::Task(e.to_string()))
                };
                (conv(di)?, conv(de)?)
            }
            _ => {
                return Err(ConfigError::Task(
                    "give either psi_i and psi_e, or delta_i and delta_e".into(),
                ))
            }
        };
        PtpTask::new(psi_i, psi_e).map_err(|e| ConfigError::Task(e.to_string()))
    }

    pub fn motion_law(&self) -> Result<MotionLaw, ConfigError> {
        MotionLaw::new(
            self.task()?,
            self.motion.period,
            self.motion.profile,
            self.motion.n_samples,
        )
        .map_err(|e| ConfigError::Motion(e.to_string()))
    }

    pub fn design_space(&self) -> Result<DesignSpace, ConfigError> {
        Ok(DesignSpace {
            pivot_c: Vec2::new(self.geometry.pivot_c[0], self.geometry.pivot_c[1]),
            elbow: self.geometry.elbow,
            task: self.task()?,
        })
    }
}
