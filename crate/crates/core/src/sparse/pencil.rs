//! One-dimensional exponential fitting by the matrix-pencil method.
//!
//! For equidistant samples `T_k = sum_j beta_j mu_j^k` the nodes `mu_j` are the
//! generalized eigenvalues of the two shifted Hankel matrices built from the
//! sequence. The dominant right singular subspace of the Hankel matrix is
//! split into its "drop last row" and "drop first row" parts, and the nodes are
//! the eigenvalues of the least-squares map between them. Coefficients then
//! follow from the Vandermonde least-squares system.

use super::InterpError;
use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

pub type C64 = num_complex::Complex<f64>;

/// Default singular-value ratio for automatic order selection.
pub const DEFAULT_SVD_TOL: f64 = 1e-8;

/// Singular-value ratio below which a forced order is rejected as rank deficient.
pub const RANK_FLOOR: f64 = 1e-14;

const REFINE_ITERATIONS: usize = 40;

/// Samples of the objective along one sampling line, `T_k` for `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSamples {
    pub line_index: usize,
    pub values: Vec<f64>,
}

/// Something worth knowing about a fit that did not prevent it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitWarning {
    /// Vandermonde residual exceeds `1e-6 * ||samples||`.
    Conditioning { residual: f64, norm: f64 },
    /// A node on the negative real axis makes the principal logarithm branch matter.
    NegativeRealNode { node_re: f64 },
}

/// Sparse exponential model of one line: `T(k) = sum_j beta_j exp(k lambda_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineExpModel {
    pub coefficients: Vec<C64>,
    pub nodes: Vec<C64>,
    /// Principal logarithms of the nodes.
    pub log_nodes: Vec<C64>,
    /// Root-mean-square residual on the training samples.
    pub residual: f64,
    #[serde(default)]
    pub warnings: Vec<FitWarning>,
}

impl LineExpModel {
    pub fn n_terms(&self) -> usize {
        self.nodes.len()
    }

    /// Model value at (possibly fractional) step `k`.
    pub fn evaluate_complex(&self, k: f64) -> C64 {
        self.coefficients
            .iter()
            .zip(&self.log_nodes)
            .map(|(b, l)| b * (l * k).exp())
            .sum()
    }

    pub fn evaluate(&self, k: f64) -> f64 {
        self.evaluate_complex(k).re
    }
}

fn hankel(values: &[f64], rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |r, c| values[r + c])
}

/// Pair complex nodes with their conjugates and enforce exact conjugate
/// symmetry on nodes and coefficients, as required for real data.
fn enforce_conjugate_pairs(nodes: &mut [C64], coeffs: &mut [C64]) {
    let n = nodes.len();
    let mut used = vec![false; n];
    for a in 0..n {
        if used[a] {
            continue;
        }
        used[a] = true;
        let scale = nodes[a].norm().max(1.0);
        let partner = (0..n)
            .filter(|&b| !used[b])
            .min_by(|&x, &y| {
                (nodes[x] - nodes[a].conj())
                    .norm()
                    .total_cmp(&(nodes[y] - nodes[a].conj()).norm())
            })
            // A partner must sit closer to the conjugate than the node sits to the real axis.
            .filter(|&b| (nodes[b] - nodes[a].conj()).norm() < nodes[a].im.abs());
        match partner {
            Some(b) if nodes[a].im.abs() > 1e-13 * scale => {
                used[b] = true;
                let node = (nodes[a] + nodes[b].conj()) * 0.5;
                let coeff = (coeffs[a] + coeffs[b].conj()) * 0.5;
                nodes[a] = node;
                nodes[b] = node.conj();
                coeffs[a] = coeff;
                coeffs[b] = coeff.conj();
            }
            _ => {
                nodes[a].im = 0.0;
                coeffs[a].im = 0.0;
            }
        }
    }
}

/// Least-squares coefficients for given nodes, and the RMS residual.
pub fn vandermonde_coefficients(values: &[f64], nodes: &[C64]) -> (Vec<C64>, f64) {
    let n_samples = values.len();
    let z = Mat::<C64>::from_fn(n_samples, nodes.len(), |k, j| nodes[j].powu(k as u32));
    let rhs = Mat::<C64>::from_fn(n_samples, 1, |k, _| C64::new(values[k], 0.0));
    let beta = z.qr().solve_lstsq(&rhs);
    let resid = (&z * &beta - &rhs).norm_l2() / (n_samples as f64).sqrt();
    ((0..nodes.len()).map(|j| beta[(j, 0)]).collect(), resid)
}

/// Fit a sparse exponential model to one line of samples.
///
/// With `order = None` the number of terms is the count of Hankel singular
/// values with `sigma_n / sigma_1 > svd_tol`.
pub fn fit_line_exponential(
    samples: &LineSamples,
    order: Option<usize>,
    svd_tol: f64,
) -> Result<LineExpModel, InterpError> {
    let values = &samples.values;
    let line = samples.line_index;
    let n_samples = values.len();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(InterpError::NonFinite { line });
    }
    if let Some(n) = order {
        if n == 0 || n_samples < 2 * n {
            return Err(InterpError::InsufficientSamples {
                line,
                samples: n_samples,
                needed: 2 * n.max(1),
            });
        }
    } else if n_samples < 2 {
        return Err(InterpError::InsufficientSamples {
            line,
            samples: n_samples,
            needed: 2,
        });
    }
    // Pencil parameter in the middle of the admissible range.
    let pencil = n_samples / 2;
    let rows = n_samples - pencil;
    let svd = hankel(values, rows, pencil + 1)
        .thin_svd()
        .map_err(|_| InterpError::Numerical("Hankel SVD did not converge"))?;
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let top = sigma.first().copied().unwrap_or(0.0);
    let max_order = pencil.min(rows);
    let n = match order {
        Some(n) => {
            let rank = sigma.iter().take_while(|s| **s > RANK_FLOOR * top).count();
            if n > max_order || rank < n {
                return Err(InterpError::Rank {
                    line,
                    requested: n,
                    rank,
                });
            }
            n
        }
        None => sigma
            .iter()
            .take(max_order)
            .take_while(|s| top > 0.0 && **s > svd_tol * top)
            .count(),
    };
    if n == 0 {
        return Ok(LineExpModel {
            coefficients: vec![],
            nodes: vec![],
            log_nodes: vec![],
            residual: rms(values),
            warnings: vec![],
        });
    }
    let signal = svd.V().subcols(0, n);
    let upper = signal.subrows(0, pencil).to_owned();
    let lower = signal.subrows(1, pencil).to_owned();
    let map = upper.qr().solve_lstsq(&lower);
    let mut nodes: Vec<C64> = map
        .eigenvalues()
        .map_err(|_| InterpError::Numerical("pencil eigenvalues did not converge"))?;
    nodes.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let (mut coefficients, _) = vandermonde_coefficients(values, &nodes);
    refine(values, &mut nodes, &mut coefficients);
    enforce_conjugate_pairs(&mut nodes, &mut coefficients);
    finish(values, nodes, coefficients)
}

/// Per-sample weights `1 / sum_j |beta_j| |mu_j|^k`, so that every sample
/// counts relative to the size of the signal envelope there.
fn envelope_weights(n_samples: usize, nodes: &[C64], coeffs: &[C64]) -> Vec<f64> {
    (0..n_samples)
        .map(|k| {
            let env: f64 = nodes
                .iter()
                .zip(coeffs)
                .map(|(z, b)| b.norm() * z.norm().powi(k as i32))
                .sum();
            if env > 0.0 && env.is_finite() {
                1.0 / env
            } else {
                1.0
            }
        })
        .collect()
}

fn weighted_residual(values: &[f64], weights: &[f64], nodes: &[C64], coeffs: &[C64]) -> f64 {
    let mut powers = vec![C64::new(1.0, 0.0); nodes.len()];
    let mut sq = 0.0;
    for (v, w) in values.iter().zip(weights) {
        let mut model = C64::new(0.0, 0.0);
        for (p, (b, z)) in powers.iter_mut().zip(coeffs.iter().zip(nodes)) {
            model += b * *p;
            *p *= z;
        }
        sq += ((model - v) * w).norm_sqr();
    }
    sq.sqrt()
}

/// Weighted Gauss-Newton polish of nodes and coefficients jointly on the
/// samples. Steps that do not reduce the residual are discarded.
fn refine(values: &[f64], nodes: &mut [C64], coeffs: &mut [C64]) {
    let n = nodes.len();
    let n_samples = values.len();
    let weights = envelope_weights(n_samples, nodes, coeffs);
    let mut current = weighted_residual(values, &weights, nodes, coeffs);
    for _ in 0..REFINE_ITERATIONS {
        if current == 0.0 {
            break;
        }
        let mut jac = Mat::<C64>::zeros(n_samples, 2 * n);
        let mut rhs = Mat::<C64>::zeros(n_samples, 1);
        for (k, v) in values.iter().enumerate() {
            rhs[(k, 0)] = C64::new(v * weights[k], 0.0);
        }
        for j in 0..n {
            let mut p = C64::new(1.0, 0.0);
            let mut dp = C64::new(0.0, 0.0);
            for k in 0..n_samples {
                jac[(k, j)] = p * weights[k];
                jac[(k, n + j)] = coeffs[j] * dp * weights[k];
                rhs[(k, 0)] -= coeffs[j] * p * weights[k];
                dp = dp * nodes[j] + p;
                p *= nodes[j];
            }
        }
        let scale: Vec<f64> = (0..2 * n)
            .map(|c| {
                let norm = (0..n_samples)
                    .map(|k| jac[(k, c)].norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                if norm > 0.0 {
                    norm
                } else {
                    1.0
                }
            })
            .collect();
        for (c, s) in scale.iter().enumerate() {
            for k in 0..n_samples {
                jac[(k, c)] /= *s;
            }
        }
        let step = jac.qr().solve_lstsq(&rhs);
        let trial_coeffs: Vec<C64> = (0..n)
            .map(|j| coeffs[j] + step[(j, 0)] / scale[j])
            .collect();
        let trial_nodes: Vec<C64> = (0..n)
            .map(|j| nodes[j] + step[(n + j, 0)] / scale[n + j])
            .collect();
        let trial = weighted_residual(values, &weights, &trial_nodes, &trial_coeffs);
        if !(trial < current) {
            break;
        }
        coeffs.copy_from_slice(&trial_coeffs);
        nodes.copy_from_slice(&trial_nodes);
        current = trial;
    }
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len().max(1) as f64).sqrt()
}

fn finish(
    values: &[f64],
    nodes: Vec<C64>,
    coefficients: Vec<C64>,
) -> Result<LineExpModel, InterpError> {
    let mut warnings = Vec::new();
    let log_nodes: Vec<C64> = nodes.iter().map(|m| m.ln()).collect();
    for m in &nodes {
        if m.re < 0.0 && m.im == 0.0 {
            warnings.push(FitWarning::NegativeRealNode { node_re: m.re });
        }
    }
    let mut model = LineExpModel {
        coefficients,
        nodes,
        log_nodes,
        residual: 0.0,
        warnings,
    };
    let sq: f64 = values
        .iter()
        .enumerate()
        .map(|(k, v)| (model.evaluate(k as f64) - v).powi(2))
        .sum();
    model.residual = (sq / values.len() as f64).sqrt();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if sq.sqrt() > 1e-6 * norm {
        model.warnings.push(FitWarning::Conditioning {
            residual: sq.sqrt(),
            norm,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(values: Vec<f64>) -> LineSamples {
        LineSamples {
            line_index: 0,
            values,
        }
    }

    #[test]
    fn constant_signal_has_one_unit_node() {
        let m = fit_line_exponential(&samples(vec![5.0; 12]), None, DEFAULT_SVD_TOL).unwrap();
        assert_eq!(m.n_terms(), 1);
        assert!((m.nodes[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((m.coefficients[0] - C64::new(5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_exponential_is_exact() {
        let values = (0..8).map(|k| 2.0 * 1.1f64.powi(k)).collect();
        let m = fit_line_exponential(&samples(values), None, DEFAULT_SVD_TOL).unwrap();
        assert_eq!(m.n_terms(), 1);
        assert!((m.nodes[0].re - 1.1).abs() < 1e-10 && m.nodes[0].im == 0.0);
        assert!((m.coefficients[0].re - 2.0).abs() < 1e-10);
    }

    #[test]
    fn two_real_exponentials() {
        let values = (0..10)
            .map(|k| 3.0 * 0.9f64.powi(k) + 1.05f64.powi(k))
            .collect();
        let m = fit_line_exponential(&samples(values), None, DEFAULT_SVD_TOL).unwrap();
        assert_eq!(m.n_terms(), 2);
        assert!((m.nodes[0].re - 0.9).abs() < 1e-8 && (m.coefficients[0].re - 3.0).abs() < 1e-8);
        assert!((m.nodes[1].re - 1.05).abs() < 1e-8 && (m.coefficients[1].re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn damped_cosine_gives_conjugate_pair() {
        let values: Vec<f64> = (0..16)
            .map(|k| 0.95f64.powi(k) * (0.4 * k as f64).cos())
            .collect();
        let m = fit_line_exponential(&samples(values.clone()), Some(2), DEFAULT_SVD_TOL).unwrap();
        assert_eq!(m.nodes[0], m.nodes[1].conj());
        assert_eq!(m.coefficients[0], m.coefficients[1].conj());
        for (k, v) in values.iter().enumerate() {
            let z = m.evaluate_complex(k as f64);
            assert!((z.re - v).abs() < 1e-10 && z.im.abs() < 1e-14);
        }
    }

    #[test]
    fn forced_order_beyond_rank_is_rejected() {
        let err =
            fit_line_exponential(&samples(vec![5.0; 12]), Some(3), DEFAULT_SVD_TOL).unwrap_err();
        assert!(matches!(
            err,
            InterpError::Rank {
                requested: 3,
                rank: 1,
                ..
            }
        ));
    }

    #[test]
    fn too_few_samples() {
        let err = fit_line_exponential(&samples(vec![1.0, 2.0, 3.0]), Some(2), DEFAULT_SVD_TOL)
            .unwrap_err();
        assert!(matches!(
            err,
            InterpError::InsufficientSamples { needed: 4, .. }
        ));
        assert!(fit_line_exponential(&samples(vec![1.0, f64::NAN, 3.0, 4.0]), None, 1e-8).is_err());
    }

    #[test]
    fn negative_node_is_flagged() {
        let values = (0..8).map(|k| (-0.8f64).powi(k)).collect();
        let m = fit_line_exponential(&samples(values), None, DEFAULT_SVD_TOL).unwrap();
        assert!(m
            .warnings
            .iter()
            .any(|w| matches!(w, FitWarning::NegativeRealNode { .. })));
    }

    #[test]
    fn inexact_data_records_conditioning_warning() {
        let values: Vec<f64> = (0..20).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let m = fit_line_exponential(&samples(values), Some(1), DEFAULT_SVD_TOL).unwrap();
        assert!(m
            .warnings
            .iter()
            .any(|w| matches!(w, FitWarning::Conditioning { .. })));
        assert!(m.residual > 0.0);
    }
}
