//! Blending per-line exponential models into one 3D surrogate.
//!
//! Every design point `U` (relative to the plan's origin) is described by its
//! position `p` along the sampling direction and by two linear forms that are
//! constant on each line parallel to the direction. Each line model's terms
//! are carried along `p`, and their coefficients vary across lines through
//! Chebyshev cardinal functions that are one on their own line and zero on all
//! the others.

use super::chebyshev::{chebyshev_values, graded_basis, BasisTerm};
use super::pencil::{LineExpModel, C64};
use super::InterpError;
use crate::Vec3;
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Model file schema version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest accepted condition number of the collocation matrix.
pub const MAX_COLLOCATION_CONDITION: f64 = 1e12;

/// Minimum sine of the angle between the two linear forms of a coordinate pair.
const PAIR_TOL: f64 = 1e-6;

/// Lines `origin_shift + k * delta + shifts[i]`, `k = 0..counts[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub delta: Vec3,
    pub shifts: Vec<Vec3>,
    pub origin_shift: Vec3,
    pub counts: Vec<usize>,
}

impl SamplingPlan {
    /// Absolute design point of sample `k` on line `i`.
    pub fn point(&self, line: usize, k: f64) -> Vec3 {
        self.origin_shift + self.delta * k + self.shifts[line]
    }

    pub fn total_samples(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `p = <delta, u> / |delta|^2` and the foot `u - p * delta` in the normal plane.
pub fn normal_projection(delta: &Vec3, u: &Vec3) -> (f64, Vec3) {
    let p = delta.dot(u) / delta.norm_squared();
    (p, u - delta * p)
}

/// Which two of the three line-invariant expressions are used:
/// `e1 = d_v u - d_u v`, `e2 = d_w u - d_u w`, `e3 = d_w v - d_v w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordPair {
    E1E2,
    E1E3,
    E2E3,
}

impl CoordPair {
    pub const ALL: [CoordPair; 3] = [CoordPair::E1E2, CoordPair::E1E3, CoordPair::E2E3];

    /// Row vectors of the two linear forms.
    pub fn forms(self, d: &Vec3) -> [Vec3; 2] {
        let e1 = Vec3::new(d.y, -d.x, 0.0);
        let e2 = Vec3::new(d.z, 0.0, -d.x);
        let e3 = Vec3::new(0.0, d.z, -d.y);
        match self {
            CoordPair::E1E2 => [e1, e2],
            CoordPair::E1E3 => [e1, e3],
            CoordPair::E2E3 => [e2, e3],
        }
    }

    fn is_degenerate(self, d: &Vec3) -> bool {
        let [a, b] = self.forms(d);
        let scale = a.norm() * b.norm();
        !(scale > 0.0) || a.cross(&b).norm() <= PAIR_TOL * scale
    }
}

/// First pair in `E1E2, E1E3, E2E3` order whose forms are independent.
pub fn select_pair(delta: &Vec3) -> Result<CoordPair, InterpError> {
    if !(delta.iter().all(|c| c.is_finite()) && delta.norm() > 0.0) {
        return Err(InterpError::ZeroDirection);
    }
    CoordPair::ALL
        .into_iter()
        .find(|pair| !pair.is_degenerate(delta))
        .ok_or(InterpError::ZeroDirection)
}

/// The two line-invariant coordinates of `u` for the given pair.
pub fn line_coordinates(
    delta: &Vec3,
    u: &Vec3,
    pair: CoordPair,
) -> Result<(f64, f64), InterpError> {
    if pair.is_degenerate(delta) {
        return Err(InterpError::DegeneratePair { pair });
    }
    let [a, b] = pair.forms(delta);
    Ok((a.dot(u), b.dot(u)))
}

/// Affine map of line coordinates onto `[-1, 1]^2` (anchor bounding box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqScaling {
    pub center: [f64; 2],
    pub half_width: [f64; 2],
}

impl PqScaling {
    fn from_points(points: &[[f64; 2]]) -> Self {
        let mut center = [0.0; 2];
        let mut half_width = [1.0; 2];
        for axis in 0..2 {
            let lo = points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = points
                .iter()
                .map(|p| p[axis])
                .fold(f64::NEG_INFINITY, f64::max);
            center[axis] = 0.5 * (lo + hi);
            let hw = 0.5 * (hi - lo);
            if hw > 1e-12 * center[axis].abs().max(1.0) {
                half_width[axis] = hw;
            }
        }
        Self { center, half_width }
    }

    pub fn apply(&self, pq: (f64, f64)) -> (f64, f64) {
        (
            (pq.0 - self.center[0]) / self.half_width[0],
            (pq.1 - self.center[1]) / self.half_width[1],
        )
    }
}

/// Global surrogate built from `l` line models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendedModel {
    pub format_version: u32,
    pub plan: SamplingPlan,
    pub pair: CoordPair,
    pub basis: Vec<BasisTerm>,
    pub pq_scaling: PqScaling,
    /// Unscaled line coordinates of each line.
    pub anchors: Vec<[f64; 2]>,
    pub line_models: Vec<LineExpModel>,
    /// `tau[i][j][b]`: Chebyshev coefficients of term `j` of line `i`.
    pub tau: Vec<Vec<Vec<C64>>>,
    pub collocation_condition: f64,
}

/// Blend fitted line models into the global model.
pub fn build_blended(
    plan: &SamplingPlan,
    line_models: &[LineExpModel],
) -> Result<BlendedModel, InterpError> {
    let l = plan.shifts.len();
    if l == 0 || line_models.len() != l || plan.counts.len() != l {
        return Err(InterpError::PlanMismatch {
            lines: line_models.len(),
            shifts: l,
        });
    }
    let pair = select_pair(&plan.delta)?;
    let forms = pair.forms(&plan.delta);
    let anchors: Vec<[f64; 2]> = plan
        .shifts
        .iter()
        .map(|s| [forms[0].dot(s), forms[1].dot(s)])
        .collect();
    let pq_scaling = PqScaling::from_points(&anchors);
    let basis = graded_basis(l);
    let dmax = basis.iter().map(|b| b.max_degree()).max().unwrap_or(0) as usize;
    let mut tp = vec![0.0; dmax + 1];
    let mut tq = vec![0.0; dmax + 1];
    let mut colloc = Mat::<f64>::zeros(l, l);
    for (m, anchor) in anchors.iter().enumerate() {
        let (s, t) = pq_scaling.apply((anchor[0], anchor[1]));
        chebyshev_values(s, &mut tp);
        chebyshev_values(t, &mut tq);
        for (b, term) in basis.iter().enumerate() {
            colloc[(m, b)] = term.eval_with(&tp, &tq);
        }
    }
    let sigma = colloc
        .singular_values()
        .map_err(|_| InterpError::Numerical("collocation SVD did not converge"))?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let smin = sigma.last().copied().unwrap_or(0.0);
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_COLLOCATION_CONDITION) {
        return Err(InterpError::CollocationSingular { condition });
    }
    let cardinal = colloc.partial_piv_lu().solve(Mat::<f64>::identity(l, l));
    let tau = line_models
        .iter()
        .enumerate()
        .map(|(i, lm)| {
            let (p_shift, _) = normal_projection(&plan.delta, &plan.shifts[i]);
            lm.coefficients
                .iter()
                .zip(&lm.log_nodes)
                .map(|(beta, lambda)| {
                    let alpha = beta * (-lambda * p_shift).exp();
                    (0..l).map(|b| alpha * cardinal[(b, i)]).collect()
                })
                .collect()
        })
        .collect();
    Ok(BlendedModel {
        format_version: MODEL_FORMAT_VERSION,
        plan: plan.clone(),
        pair,
        basis,
        pq_scaling,
        anchors,
        line_models: line_models.to_vec(),
        tau,
        collocation_condition: condition,
    })
}

/// Largest basis degree supported by the stack buffers in evaluation.
const MAX_DEGREE: usize = 15;

impl BlendedModel {
    pub fn n_terms(&self) -> usize {
        self.line_models.iter().map(|m| m.n_terms()).sum()
    }

    /// `p` and the scaled line coordinates of an absolute design point.
    pub fn coordinates(&self, design: &Vec3) -> (f64, f64, f64) {
        let u = design - self.plan.origin_shift;
        let d = &self.plan.delta;
        let p = d.dot(&u) / d.norm_squared();
        let [a, b] = self.pair.forms(d);
        let (s, t) = self.pq_scaling.apply((a.dot(&u), b.dot(&u)));
        (p, s, t)
    }

    /// Complex model value at an absolute design point.
    pub fn evaluate_complex(&self, design: &Vec3) -> C64 {
        let (p, s, t) = self.coordinates(design);
        let dmax = self.basis.iter().map(|b| b.max_degree()).max().unwrap_or(0) as usize;
        assert!(
            dmax <= MAX_DEGREE,
            "basis degree {dmax} exceeds {MAX_DEGREE}"
        );
        let mut tp = [0.0; MAX_DEGREE + 1];
        let mut tq = [0.0; MAX_DEGREE + 1];
        chebyshev_values(s, &mut tp[..=dmax]);
        chebyshev_values(t, &mut tq[..=dmax]);
        let phi: Vec<f64> = self.basis.iter().map(|b| b.eval_with(&tp, &tq)).collect();
        let mut total = C64::new(0.0, 0.0);
        for (lm, tau_line) in self.line_models.iter().zip(&self.tau) {
            for (lambda, tau) in lm.log_nodes.iter().zip(tau_line) {
                let mut a = C64::new(0.0, 0.0);
                for (c, f) in tau.iter().zip(&phi) {
                    a += c * *f;
                }
                let e = if lambda.im == 0.0 {
                    C64::new((lambda.re * p).exp(), 0.0)
                } else {
                    (lambda * p).exp()
                };
                total += a * e;
            }
        }
        total
    }

    /// Real part of the model value at an absolute design point.
    pub fn evaluate(&self, design: &Vec3) -> f64 {
        self.evaluate_complex(design).re
    }

    /// Coefficient function `a_j^(i)` at scaled coordinates.
    pub fn coefficient_function(&self, line: usize, term: usize, s: f64, t: f64) -> C64 {
        let dmax = self.basis.iter().map(|b| b.max_degree()).max().unwrap_or(0) as usize;
        let mut tp = vec![0.0; dmax + 1];
        let mut tq = vec![0.0; dmax + 1];
        chebyshev_values(s, &mut tp);
        chebyshev_values(t, &mut tq);
        self.tau[line][term]
            .iter()
            .zip(&self.basis)
            .map(|(c, b)| c * b.eval_with(&tp, &tq))
            .sum()
    }
}

/// Error statistics of a model against simulated points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub count: usize,
    pub rmse: Option<f64>,
    /// RMS of the simulated values, for relative errors.
    pub reference_rms: Option<f64>,
    pub threshold: f64,
    pub count_below: usize,
    /// RMSE over points whose simulated value is below the threshold.
    pub rmse_below: Option<f64>,
    pub max_abs_error: f64,
    /// Largest `|Im| / |Re|` of the model over the points.
    pub max_imag_ratio: f64,
}

impl ValidationReport {
    pub fn relative_rmse(&self) -> Option<f64> {
        match (self.rmse, self.reference_rms) {
            (Some(e), Some(r)) if r > 0.0 => Some(e / r),
            _ => None,
        }
    }
}

pub fn validate_model(
    model: &BlendedModel,
    holdout: &[(Vec3, f64)],
    threshold: f64,
) -> ValidationReport {
    let mut sq = 0.0;
    let mut sq_ref = 0.0;
    let mut sq_below = 0.0;
    let mut count_below = 0;
    let mut max_abs_error: f64 = 0.0;
    let mut max_imag_ratio: f64 = 0.0;
    for (design, value) in holdout {
        let z = model.evaluate_complex(design);
        let err = z.re - value;
        sq += err * err;
        sq_ref += value * value;
        max_abs_error = max_abs_error.max(err.abs());
        if z.re != 0.0 {
            max_imag_ratio = max_imag_ratio.max(z.im.abs() / z.re.abs());
        }
        if *value < threshold {
            sq_below += err * err;
            count_below += 1;
        }
    }
    let n = holdout.len();
    let mean_root = |s: f64, c: usize| (c > 0).then(|| (s / c as f64).sqrt());
    ValidationReport {
        count: n,
        rmse: mean_root(sq, n),
        reference_rms: mean_root(sq_ref, n),
        threshold,
        count_below,
        rmse_below: mean_root(sq_below, count_below),
        max_abs_error,
        max_imag_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::pencil::{fit_line_exponential, LineSamples, DEFAULT_SVD_TOL};
    use approx::assert_abs_diff_eq;

    const PAPER_DELTA: [f64; 3] = [0.0, 0.920, 0.503];

    #[test]
    fn projection_examples() {
        let d = Vec3::from(PAPER_DELTA);
        let (p, r) = normal_projection(&d, &(d * 2.5));
        assert_abs_diff_eq!(p, 2.5, epsilon = 1e-15);
        assert!(r.norm() < 1e-15);
        let ortho = Vec3::new(3.0, -0.503, 0.920);
        let (p, r) = normal_projection(&d, &ortho);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-15);
        assert_eq!(r, ortho);
        let (p, r) = normal_projection(&d, &Vec3::new(1.0, 1.0, 1.0));
        // Independent evaluation: 1.423 / 1.099409.
        assert_abs_diff_eq!(p, 1.423 / 1.099409, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 1.29433, epsilon = 1e-5);
        assert_abs_diff_eq!(r.y, -0.19078, epsilon = 1e-5);
        assert_abs_diff_eq!(r.z, 0.34895, epsilon = 1e-5);
        assert!(d.dot(&r).abs() <= 1e-12 * d.norm() * 3f64.sqrt());
    }

    #[test]
    fn pair_selection_and_invariance() {
        let d = Vec3::from(PAPER_DELTA);
        assert!(matches!(
            line_coordinates(&d, &Vec3::new(1.0, 2.0, 3.0), CoordPair::E1E2),
            Err(InterpError::DegeneratePair { .. })
        ));
        assert_eq!(select_pair(&d).unwrap(), CoordPair::E1E3);
        let u = Vec3::new(4.0, -1.0, 2.5);
        let a = line_coordinates(&d, &u, CoordPair::E1E3).unwrap();
        let b = line_coordinates(&d, &(u + d * 3.0), CoordPair::E1E3).unwrap();
        assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-12);
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(select_pair(&x).unwrap(), CoordPair::E1E2);
        assert_eq!(
            line_coordinates(&x, &Vec3::new(5.0, 2.0, 3.0), CoordPair::E1E2).unwrap(),
            (-2.0, -3.0)
        );
        assert!(select_pair(&Vec3::zeros()).is_err());
    }

    fn exact_line(values: Vec<f64>, line: usize) -> LineExpModel {
        fit_line_exponential(
            &LineSamples {
                line_index: line,
                values,
            },
            None,
            DEFAULT_SVD_TOL,
        )
        .unwrap()
    }

    #[test]
    fn single_line_model_is_the_line_model_everywhere() {
        let d = Vec3::new(0.0, 1.0, 0.5);
        let plan = SamplingPlan {
            delta: d,
            shifts: vec![Vec3::zeros()],
            origin_shift: Vec3::new(10.0, 20.0, 30.0),
            counts: vec![10],
        };
        let line = exact_line((0..10).map(|k| 2.0 * 1.1f64.powi(k) + 0.5).collect(), 0);
        let model = build_blended(&plan, std::slice::from_ref(&line)).unwrap();
        for (off, k) in [
            (Vec3::new(3.0, -1.0, 2.0), 2.3),
            (Vec3::new(-5.0, 4.0, 0.0), 7.0),
        ] {
            let x = plan.point(0, 0.0) + off + d * k;
            let (p, _) = normal_projection(&d, &(off + d * k));
            assert_abs_diff_eq!(model.evaluate(&x), line.evaluate(p), epsilon = 1e-10);
        }
    }

    #[test]
    fn triangle_cardinals_are_affine_lagrange() {
        let d = Vec3::new(1.0, 0.0, 0.0);
        let shifts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.5, 3.0),
        ];
        let plan = SamplingPlan {
            delta: d,
            shifts: shifts.clone(),
            origin_shift: Vec3::zeros(),
            counts: vec![6; 3],
        };
        let lines: Vec<LineExpModel> = (0..3).map(|i| exact_line(vec![1.0; 6], i)).collect();
        let model = build_blended(&plan, &lines).unwrap();
        // Raw line coordinates are (-v, -w); Lagrange basis on the triangle by direct solve.
        let pts: Vec<[f64; 2]> = shifts.iter().map(|s| [-s.y, -s.z]).collect();
        let m = nalgebra::Matrix3::from_fn(|r, c| if c == 0 { 1.0 } else { pts[r][c - 1] });
        let inv = m.try_inverse().unwrap();
        for probe in [[-0.7, -1.0], [-1.5, -0.2], [0.3, 0.4]] {
            let (s, t) = model.pq_scaling.apply((probe[0], probe[1]));
            for i in 0..3 {
                let lagrange = inv[(0, i)] + inv[(1, i)] * probe[0] + inv[(2, i)] * probe[1];
                let a = model.coefficient_function(i, 0, s, t);
                assert_abs_diff_eq!(a.re, lagrange, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn collinear_anchors_are_rejected() {
        let d = Vec3::new(1.0, 0.0, 0.0);
        let shifts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 1.0),
            Vec3::new(0.0, 2.0, 2.0),
        ];
        let plan = SamplingPlan {
            delta: d,
            shifts,
            origin_shift: Vec3::zeros(),
            counts: vec![6; 3],
        };
        let lines: Vec<LineExpModel> = (0..3).map(|i| exact_line(vec![1.0; 6], i)).collect();
        assert!(matches!(
            build_blended(&plan, &lines),
            Err(InterpError::CollocationSingular { .. })
        ));
    }

    #[test]
    fn validation_edge_cases() {
        let d = Vec3::new(1.0, 0.0, 0.0);
        let plan = SamplingPlan {
            delta: d,
            shifts: vec![Vec3::zeros()],
            origin_shift: Vec3::zeros(),
            counts: vec![8],
        };
        let line = exact_line((0..8).map(|k| 3.0 * 1.2f64.powi(k)).collect(), 0);
        let model = build_blended(&plan, &[line]).unwrap();
        let training: Vec<(Vec3, f64)> = (0..8)
            .map(|k| (plan.point(0, k as f64), 3.0 * 1.2f64.powi(k)))
            .collect();
        let report = validate_model(&model, &training, 1.0);
        assert!(report.rmse.unwrap() < 1e-9);
        assert_eq!(report.count_below, 0);
        assert_eq!(report.rmse_below, None);
        assert_eq!(validate_model(&model, &[], 1.0).rmse, None);
    }
}
