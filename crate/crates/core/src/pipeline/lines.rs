//! Placement of the training lines and of the random holdout lines.

use super::cache::SampleRow;
use super::config::{SamplingConfig, ValidationConfig};
use super::problem::Problem;
use crate::motion::ObjectiveSample;
use crate::optimizer::{NodeStatus, TrustRegion};
use crate::sparse::SamplingPlan;
use crate::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("line {line} has {samples} feasible samples, at least {needed} needed")]
    ShortLine {
        line: usize,
        samples: usize,
        needed: usize,
    },
    #[error("only {found} of {wanted} training lines could be placed")]
    TooFewLines { found: usize, wanted: usize },
    #[error("holdout line {line}: no feasible segment found in {attempts} attempts")]
    Holdout { line: usize, attempts: usize },
}

/// Simulate `origin + shift + k * delta` for `k = 0, 1, ...` up to the first
/// infeasible sample or `max_steps + margin` samples, then drop the last
/// `margin` feasible samples. An infeasible sample, if any, is kept as the last
/// row.
pub fn sample_line(
    problem: &Problem,
    plan_delta: &Vec3,
    origin: &Vec3,
    shift: &Vec3,
    line: usize,
    max_steps: usize,
    margin: usize,
) -> Vec<SampleRow> {
    let mut rows = Vec::new();
    for step in 0..max_steps + margin {
        let design = origin + shift + plan_delta * step as f64;
        let sample = problem.evaluate(&design);
        rows.push(SampleRow {
            line,
            step,
            design,
            sample,
        });
        if sample.value().is_none() {
            break;
        }
    }
    let feasible = feasible_run(&rows);
    let keep = feasible.saturating_sub(margin).min(max_steps);
    rows.drain(keep..feasible);
    rows
}

/// Number of leading feasible rows.
pub fn feasible_run(rows: &[SampleRow]) -> usize {
    rows.iter()
        .take_while(|r| r.sample.value().is_some())
        .count()
}

/// Orthonormal basis of the plane normal to `d`.
fn normal_basis(d: &Vec3) -> [Vec3; 2] {
    let dn = d.normalize();
    let axis = (0..3)
        .min_by(|&a, &b| dn[a].abs().total_cmp(&dn[b].abs()))
        .unwrap_or(0);
    let mut e = Vec3::zeros();
    e[axis] = 1.0;
    let n1 = dn.cross(&e).normalize();
    [n1, dn.cross(&n1)]
}

/// A candidate line: normal-plane anchor and its feasible run from the anchor.
#[derive(Debug, Clone, Copy)]
struct CandidateLine {
    normal: [f64; 2],
    shift: Vec3,
}

#[derive(Default)]
struct Accepted {
    shifts: Vec<Vec3>,
    counts: Vec<usize>,
    rows: Vec<SampleRow>,
}

impl Accepted {
    /// Keep a sampled line if its feasible run is long enough.
    fn accept(&mut self, shift: Vec3, mut line_rows: Vec<SampleRow>, min_samples: usize) -> bool {
        let line = self.shifts.len();
        line_rows.iter_mut().for_each(|r| r.line = line);
        let n = feasible_run(&line_rows);
        if n < min_samples {
            return false;
        }
        self.shifts.push(shift);
        self.counts.push(n);
        self.rows.extend(line_rows);
        true
    }
}

/// Training lines and their samples.
///
/// Line 0 starts at the origin. With explicit shifts every line starts at its
/// shift. Otherwise candidate anchors form a grid over the plane through the
/// origin normal to `delta`; a candidate qualifies when its feasible run from
/// the anchor is long enough, and lines are picked greedily by largest distance
/// to the anchors already chosen.
pub fn plan_training_lines(
    problem: &Problem,
    sampling: &SamplingConfig,
) -> Result<(SamplingPlan, Vec<SampleRow>), LineError> {
    let delta = sampling.delta.to_vec3();
    let origin = sampling.origin_shift.to_vec3();
    let mut acc = Accepted::default();
    let min = sampling.min_samples;
    if let Some(explicit) = &sampling.shifts {
        let lines: Vec<Vec<SampleRow>> = explicit
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                sample_line(
                    problem,
                    &delta,
                    &origin,
                    &s.to_vec3(),
                    i,
                    sampling.max_steps,
                    sampling.boundary_margin,
                )
            })
            .collect();
        for (i, (s, line_rows)) in explicit.iter().zip(lines).enumerate() {
            let n = feasible_run(&line_rows);
            if !acc.accept(s.to_vec3(), line_rows, min) {
                return Err(LineError::ShortLine {
                    line: i,
                    samples: n,
                    needed: sampling.min_samples,
                });
            }
        }
    } else {
        let first = sample_line(
            problem,
            &delta,
            &origin,
            &Vec3::zeros(),
            0,
            sampling.max_steps,
            sampling.boundary_margin,
        );
        let n = feasible_run(&first);
        if !acc.accept(Vec3::zeros(), first, min) {
            return Err(LineError::ShortLine {
                line: 0,
                samples: n,
                needed: sampling.min_samples,
            });
        }
        let mut candidates = candidate_lines(problem, sampling, &delta, &origin);
        let mut chosen: Vec<[f64; 2]> = vec![[0.0, 0.0]];
        while acc.shifts.len() < sampling.lines && !candidates.is_empty() {
            let dist = |c: &CandidateLine| {
                chosen
                    .iter()
                    .map(|a| (c.normal[0] - a[0]).hypot(c.normal[1] - a[1]))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut best = 0;
            for i in 1..candidates.len() {
                if dist(&candidates[i]) > dist(&candidates[best]) {
                    best = i;
                }
            }
            let c = candidates.remove(best);
            if !(dist(&c) > 0.0) {
                break;
            }
            let line_rows = sample_line(
                problem,
                &delta,
                &origin,
                &c.shift,
                0,
                sampling.max_steps,
                sampling.boundary_margin,
            );
            if acc.accept(c.shift, line_rows, min) {
                chosen.push(c.normal);
            }
        }
        if acc.shifts.len() < sampling.lines {
            return Err(LineError::TooFewLines {
                found: acc.shifts.len(),
                wanted: sampling.lines,
            });
        }
    }
    Ok((
        SamplingPlan {
            delta,
            shifts: acc.shifts,
            origin_shift: origin,
            counts: acc.counts,
        },
        acc.rows,
    ))
}

fn candidate_lines(
    problem: &Problem,
    sampling: &SamplingConfig,
    delta: &Vec3,
    origin: &Vec3,
) -> Vec<CandidateLine> {
    let bounds = problem.design_box.bounds();
    let [n1, n2] = normal_basis(delta);
    let mut ext = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for corner in 0..8 {
        let c = Vec3::from_fn(|a, _| bounds[a][(corner >> a) & 1]) - origin;
        for (e, n) in ext.iter_mut().zip([n1, n2]) {
            let v = n.dot(&c);
            e[0] = e[0].min(v);
            e[1] = e[1].max(v);
        }
    }
    let m = sampling.candidates;
    let grid: Vec<[f64; 2]> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| {
            let f = |e: [f64; 2], k: usize| e[0] + (e[1] - e[0]) * k as f64 / (m - 1) as f64;
            [f(ext[0], i), f(ext[1], j)]
        })
        .collect();
    grid.par_iter()
        .filter_map(|&[a, b]| {
            let offset = n1 * a + n2 * b;
            let length = (0..sampling.max_steps + sampling.boundary_margin)
                .take_while(|&k| {
                    problem.status(&(origin + offset + delta * k as f64)) == NodeStatus::Feasible
                })
                .count();
            (length >= sampling.min_samples + sampling.boundary_margin).then_some(CandidateLine {
                normal: [a, b],
                shift: offset,
            })
        })
        .collect()
}

/// Random lines through the trust region for validation.
///
/// Each line passes through a uniform random point of the region in a random
/// direction at least `min_angle_deg` away from the sampling direction. Its
/// chord through the region is sampled at `points_per_line` evenly spaced
/// interior points and only feasible points are kept.
pub fn holdout_lines(
    problem: &Problem,
    region: &TrustRegion,
    validation: &ValidationConfig,
    seed: u64,
) -> Result<Vec<SampleRow>, LineError> {
    const ATTEMPTS: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = problem.design_box.bounds();
    let inside =
        |x: &Vec3| problem.design_box.contains(x) && crate::optimizer::hull_membership(region, x);
    let diag = bounds
        .iter()
        .map(|r| (r[1] - r[0]).powi(2))
        .sum::<f64>()
        .sqrt();
    let (mut a_rng, mut b_rng) = (
        [f64::INFINITY, f64::NEG_INFINITY],
        [f64::INFINITY, f64::NEG_INFINITY],
    );
    for h in &region.hull {
        a_rng = [a_rng[0].min(h[0]), a_rng[1].max(h[0])];
        b_rng = [b_rng[0].min(h[1]), b_rng[1].max(h[1])];
    }
    let dhat = region.delta.normalize();
    let max_cos = validation.min_angle_deg.to_radians().cos();
    let n = validation.points_per_line;
    let mut rows = Vec::new();
    for line in 0..validation.lines {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let p = rng.random_range(region.p_range[0]..=region.p_range[1]);
            let a = rng.random_range(a_rng[0]..=a_rng[1]);
            let b = rng.random_range(b_rng[0]..=b_rng[1]);
            let dir = loop {
                let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
                let norm = v.norm();
                if norm > 1e-3 && norm <= 1.0 && (v / norm).dot(&dhat).abs() <= max_cos {
                    break v / norm;
                }
            };
            if !region.hull_contains([a, b]) {
                continue;
            }
            let Some(x) = region.design_at(p, a, b) else {
                continue;
            };
            if !inside(&x) {
                continue;
            }
            let t_hi = chord_end(&x, &dir, diag, &inside);
            let t_lo = -chord_end(&x, &(-dir), diag, &inside);
            if !(t_hi - t_lo > 0.0) {
                continue;
            }
            let line_rows: Vec<SampleRow> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let t = t_lo + (t_hi - t_lo) * (i as f64 + 0.5) / n as f64;
                    let design = x + dir * t;
                    SampleRow {
                        line,
                        step: i,
                        design,
                        sample: problem.evaluate(&design),
                    }
                })
                .collect();
            let feasible: Vec<SampleRow> = line_rows
                .into_iter()
                .filter(|r| matches!(r.sample, ObjectiveSample::Value { .. }))
                .collect();
            if feasible.len() >= validation.min_points {
                rows.extend(feasible);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(LineError::Holdout {
                line,
                attempts: ATTEMPTS,
            });
        }
    }
    Ok(rows)
}

/// Largest `t` in `[0, limit]` with `x + t * dir` inside, assuming convexity.
fn chord_end(x: &Vec3, dir: &Vec3, limit: f64, inside: &impl Fn(&Vec3) -> bool) -> f64 {
    let (mut lo, mut hi) = (0.0, limit);
    if inside(&(x + dir * hi)) {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(&(x + dir * mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
