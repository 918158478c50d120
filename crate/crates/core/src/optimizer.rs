//! Trust region of a sampling plan, brute-force grid search of a surrogate and
//! a compass-search baseline on the simulator.

use crate::feasibility::{is_dynamic_feasible, is_static_feasible, PtpTask};
use crate::geometry::{Elbow, FourBarDesign, Vec2};
use crate::sparse::{select_pair, CoordPair, InterpError, SamplingPlan};
use crate::Vec3;
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("no grid node is feasible inside the trust region ({rejections})")]
    EmptyRegion { rejections: RejectionCounts },
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("design box and trust region do not overlap")]
    NoOverlap,
    #[error("the anchors span no area")]
    DegenerateHull,
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// Region between the sampling lines: the convex hull of the line anchors in
/// the normal plane, extruded over the sampled range along the direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegion {
    pub delta: Vec3,
    pub origin_shift: Vec3,
    pub pair: CoordPair,
    pub anchors: Vec<[f64; 2]>,
    /// Counter-clockwise hull vertices.
    pub hull: Vec<[f64; 2]>,
    pub p_range: [f64; 2],
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; collinear points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(hull: &[[f64; 2]]) -> f64 {
    let n = hull.len();
    (0..n)
        .map(|i| hull[i][0] * hull[(i + 1) % n][1] - hull[(i + 1) % n][0] * hull[i][1])
        .sum::<f64>()
        * 0.5
}

impl TrustRegion {
    pub fn from_plan(plan: &SamplingPlan) -> Result<Self, OptimizeError> {
        let pair = select_pair(&plan.delta)?;
        let [f1, f2] = pair.forms(&plan.delta);
        let anchors: Vec<[f64; 2]> = plan.shifts.iter().map(|s| [f1.dot(s), f2.dot(s)]).collect();
        let hull = convex_hull(&anchors);
        if anchors.len() >= 3 && !(polygon_area(&hull) > 0.0) {
            return Err(OptimizeError::DegenerateHull);
        }
        let d2 = plan.delta.norm_squared();
        let mut p_range = [f64::INFINITY, f64::NEG_INFINITY];
        for (shift, &n) in plan.shifts.iter().zip(&plan.counts) {
            let p = plan.delta.dot(shift) / d2;
            p_range[0] = p_range[0].min(p);
            p_range[1] = p_range[1].max(p + n.saturating_sub(1) as f64);
        }
        Ok(Self {
            delta: plan.delta,
            origin_shift: plan.origin_shift,
            pair,
            anchors,
            hull,
            p_range,
        })
    }

    fn tolerance(&self) -> f64 {
        let scale = self
            .anchors
            .iter()
            .flat_map(|a| a.iter())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        1e-9 * scale
    }

    /// `(p, a, b)`: position along the direction and the two line coordinates.
    pub fn coordinates(&self, design: &Vec3) -> (f64, f64, f64) {
        let u = design - self.origin_shift;
        let [f1, f2] = self.pair.forms(&self.delta);
        (
            self.delta.dot(&u) / self.delta.norm_squared(),
            f1.dot(&u),
            f2.dot(&u),
        )
    }

    pub fn hull_contains(&self, q: [f64; 2]) -> bool {
        let tol = self.tolerance();
        match self.hull.len() {
            0 => false,
            1 => (q[0] - self.hull[0][0]).hypot(q[1] - self.hull[0][1]) <= tol,
            2 => {
                let (a, b) = (self.hull[0], self.hull[1]);
                let ab = [b[0] - a[0], b[1] - a[1]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let t = (((q[0] - a[0]) * ab[0] + (q[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
                (q[0] - a[0] - t * ab[0]).hypot(q[1] - a[1] - t * ab[1]) <= tol
            }
            n => (0..n).all(|i| {
                let (a, b) = (self.hull[i], self.hull[(i + 1) % n]);
                cross(a, b, q) >= -tol * (b[0] - a[0]).hypot(b[1] - a[1])
            }),
        }
    }

    fn inverse_map(&self) -> Option<Matrix3<f64>> {
        let [f1, f2] = self.pair.forms(&self.delta);
        let d = self.delta / self.delta.norm_squared();
        Matrix3::from_rows(&[f1.transpose(), f2.transpose(), d.transpose()]).try_inverse()
    }

    /// Absolute design with coordinates `(p, a, b)`; inverse of [`Self::coordinates`].
    pub fn design_at(&self, p: f64, a: f64, b: f64) -> Option<Vec3> {
        Some(self.inverse_map()? * Vec3::new(a, b, p) + self.origin_shift)
    }

    /// Corners of the prism in absolute design coordinates.
    pub fn corners(&self) -> Vec<Vec3> {
        let Some(inv) = self.inverse_map() else {
            return vec![];
        };
        self.hull
            .iter()
            .flat_map(|h| self.p_range.iter().map(move |&p| Vec3::new(h[0], h[1], p)))
            .map(|rhs| inv * rhs + self.origin_shift)
            .collect()
    }
}

/// Whether a design lies in the trust region (on its boundary counts as inside).
pub fn hull_membership(region: &TrustRegion, design: &Vec3) -> bool {
    let (p, a, b) = region.coordinates(design);
    let tol = 1e-9 * (region.p_range[1] - region.p_range[0]).abs().max(1.0);
    p >= region.p_range[0] - tol && p <= region.p_range[1] + tol && region.hull_contains([a, b])
}

/// Fixed geometry that turns a design vector `(|OA|, |BC|, |AB|)` into a linkage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub pivot_c: Vec2,
    pub elbow: Elbow,
    pub task: PtpTask,
}

impl DesignSpace {
    pub fn design(&self, x: &Vec3) -> Option<FourBarDesign> {
        FourBarDesign::new(x.x, x.z, x.y, self.pivot_c, self.elbow).ok()
    }

    /// Feasibility of a design vector for the task.
    pub fn status(&self, x: &Vec3) -> NodeStatus {
        match self.design(x) {
            None => NodeStatus::StaticInfeasible,
            Some(d) if !is_static_feasible(&d, &self.task) => NodeStatus::StaticInfeasible,
            Some(d) if !is_dynamic_feasible(&d, &self.task) => NodeStatus::DynamicInfeasible,
            Some(_) => NodeStatus::Feasible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Feasible,
    StaticInfeasible,
    DynamicInfeasible,
}

/// Per-axis `[min, max]` bounds, in the order `(|OA|, |BC|, |AB|)`.
pub type Bounds = [[f64; 2]; 3];

/// Why grid nodes were skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub outside_region: usize,
    pub static_infeasible: usize,
    pub dynamic_infeasible: usize,
}

impl std::fmt::Display for RejectionCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "outside trust region: {}, not assemblable: {}, direction change: {}",
            self.outside_region, self.static_infeasible, self.dynamic_infeasible
        )
    }
}

impl RejectionCounts {
    fn add(&mut self, other: &Self) {
        self.outside_region += other.outside_region;
        self.static_infeasible += other.static_infeasible;
        self.dynamic_infeasible += other.dynamic_infeasible;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub design: Vec3,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub argmin: Vec3,
    pub value: f64,
    pub grid_resolution: [usize; 3],
    pub bounds: Bounds,
    /// Grid nodes visited.
    pub evaluated: usize,
    /// Nodes at which the objective was evaluated.
    pub feasible_evaluated: usize,
    pub rejections: RejectionCounts,
    /// Best grid-local minima, best first.
    pub top_k: Vec<Candidate>,
}

/// Coordinate of node `i` on an axis with `r` nodes. Grids with `2r - 1`
/// nodes reproduce every node of the `r` grid bit for bit.
pub fn grid_coordinate(range: [f64; 2], i: usize, r: usize) -> f64 {
    range[0] + (range[1] - range[0]) * (i as f64 / (r - 1) as f64)
}

/// Grid bounds: the trust region's bounding box clipped to the design box.
pub fn search_bounds(region: &TrustRegion, design_box: &Bounds) -> Result<Bounds, OptimizeError> {
    let corners = region.corners();
    if corners.is_empty() {
        return Err(OptimizeError::DegenerateHull);
    }
    let mut out = *design_box;
    for (axis, range) in out.iter_mut().enumerate() {
        let lo = corners
            .iter()
            .map(|c| c[axis])
            .fold(f64::INFINITY, f64::min);
        let hi = corners
            .iter()
            .map(|c| c[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        range[0] = range[0].max(lo);
        range[1] = range[1].min(hi);
        if !(range[0] <= range[1]) {
            return Err(OptimizeError::NoOverlap);
        }
    }
    Ok(out)
}

fn is_local_min(values: &[f64], res: [usize; 3], i: usize, j: usize, k: usize) -> bool {
    let idx = |a: usize, b: usize, c: usize| (a * res[1] + b) * res[2] + c;
    let v = values[idx(i, j, k)];
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            for dk in -1i64..=1 {
                if di == 0 && dj == 0 && dk == 0 {
                    continue;
                }
                let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                if a < 0
                    || b < 0
                    || c < 0
                    || a >= res[0] as i64
                    || b >= res[1] as i64
                    || c >= res[2] as i64
                {
                    continue;
                }
                let w = values[idx(a as usize, b as usize, c as usize)];
                // Ties go to the node that comes first in index order.
                let earlier = (a, b, c) < (i as i64, j as i64, k as i64);
                if w < v || (w == v && earlier) {
                    return false;
                }
            }
        }
    }
    true
}

/// Evaluate `objective` at every grid node inside `bounds` that lies in the
/// trust region and that `status` reports feasible; report the minimum and the best
/// `top_k` grid-local minima. Ties are broken towards the lexicographically
/// smallest design.
pub fn grid_search<F, S>(
    objective: F,
    region: &TrustRegion,
    status: S,
    bounds: &Bounds,
    resolution: [usize; 3],
    top_k: usize,
) -> Result<OptimumReport, OptimizeError>
where
    F: Fn(&Vec3) -> f64 + Sync,
    S: Fn(&Vec3) -> NodeStatus + Sync,
{
    if resolution.iter().any(|&r| r < 2) {
        return Err(OptimizeError::Resolution(resolution));
    }
    let [ri, rj, rk] = resolution;
    let node = |i: usize, j: usize, k: usize| {
        Vec3::new(
            grid_coordinate(bounds[0], i, ri),
            grid_coordinate(bounds[1], j, rj),
            grid_coordinate(bounds[2], k, rk),
        )
    };
    let slabs: Vec<(Vec<f64>, RejectionCounts)> = (0..ri)
        .into_par_iter()
        .map(|i| {
            let mut counts = RejectionCounts::default();
            let mut slab = vec![f64::INFINITY; rj * rk];
            for j in 0..rj {
                for k in 0..rk {
                    let x = node(i, j, k);
                    if !hull_membership(region, &x) {
                        counts.outside_region += 1;
                        continue;
                    }
                    match status(&x) {
                        NodeStatus::Feasible => {}
                        NodeStatus::StaticInfeasible => {
                            counts.static_infeasible += 1;
                            continue;
                        }
                        NodeStatus::DynamicInfeasible => {
                            counts.dynamic_infeasible += 1;
                            continue;
                        }
                    }
                    let v = objective(&x);
                    slab[j * rk + k] = if v.is_nan() { f64::INFINITY } else { v };
                }
            }
            (slab, counts)
        })
        .collect();
    let mut rejections = RejectionCounts::default();
    let mut values = Vec::with_capacity(ri * rj * rk);
    for (slab, counts) in &slabs {
        rejections.add(counts);
        values.extend_from_slice(slab);
    }
    drop(slabs);
    let total = ri * rj * rk;
    let feasible_evaluated = total
        - rejections.outside_region
        - rejections.static_infeasible
        - rejections.dynamic_infeasible;
    let mut best: Option<(usize, f64)> = None;
    for (n, &v) in values.iter().enumerate() {
        if v < f64::INFINITY && best.is_none_or(|(_, b)| v < b) {
            best = Some((n, v));
        }
    }
    let Some((best_idx, value)) = best else {
        return Err(OptimizeError::EmptyRegion { rejections });
    };
    let unflat = |n: usize| (n / (rj * rk), (n / rk) % rj, n % rk);
    let mut minima: Vec<(f64, usize)> = (0..total)
        .into_par_iter()
        .filter(|&n| {
            let (i, j, k) = unflat(n);
            values[n] < f64::INFINITY && is_local_min(&values, resolution, i, j, k)
        })
        .map(|n| (values[n], n))
        .collect();
    minima.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let top_k = minima
        .iter()
        .take(top_k)
        .map(|&(v, n)| {
            let (i, j, k) = unflat(n);
            Candidate {
                design: node(i, j, k),
                value: v,
            }
        })
        .collect();
    let (i, j, k) = unflat(best_idx);
    Ok(OptimumReport {
        argmin: node(i, j, k),
        value,
        grid_resolution: resolution,
        bounds: *bounds,
        evaluated: total,
        feasible_evaluated,
        rejections,
        top_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSearchOptions {
    /// Initial step as a fraction of each axis range.
    pub initial_step: f64,
    /// Stop once every step is below this fraction of its axis range.
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for PatternSearchOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            min_step: 1e-4,
            max_evaluations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchReport {
    pub start: Vec3,
    pub argmin: Vec3,
    pub value: f64,
    pub evaluations: usize,
    /// Probes that were infeasible or left the design box.
    pub rejected: usize,
}

/// Compass search from `start`: poll `+-step` along each axis in turn, move to
/// the first improving probe, halve all steps after a poll without
/// improvement. `objective` returns `None` for infeasible designs.
pub fn local_search_baseline<F>(
    objective: F,
    start: Vec3,
    design_box: &Bounds,
    options: &PatternSearchOptions,
) -> Option<LocalSearchReport>
where
    F: Fn(&Vec3) -> Option<f64>,
{
    let span: Vec<f64> = design_box.iter().map(|r| r[1] - r[0]).collect();
    let mut step: Vec<f64> = span.iter().map(|s| s * options.initial_step).collect();
    let mut x = start;
    let mut fx = objective(&x)?;
    let mut evaluations = 1;
    let mut rejected = 0;
    while evaluations < options.max_evaluations
        && step
            .iter()
            .zip(&span)
            .any(|(s, r)| *s >= options.min_step * r)
    {
        let mut improved = false;
        'poll: for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut y = x;
                y[axis] += sign * step[axis];
                if y[axis] < design_box[axis][0] || y[axis] > design_box[axis][1] {
                    rejected += 1;
                    continue;
                }
                evaluations += 1;
                match objective(&y) {
                    Some(fy) if fy < fx => {
                        x = y;
                        fx = fy;
                        improved = true;
                        break 'poll;
                    }
                    Some(_) => {}
                    None => rejected += 1,
                }
                if evaluations >= options.max_evaluations {
                    break 'poll;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Some(LocalSearchReport {
        start,
        argmin: x,
        value: fx,
        evaluations,
        rejected,
    })
}
