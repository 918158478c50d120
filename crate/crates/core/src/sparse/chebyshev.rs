//! Bivariate Chebyshev bases used for the coefficient functions.

use serde::{Deserialize, Serialize};

/// A basis function: the sum of `T_m(p) T_n(q)` over its degree pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisTerm(pub Vec<(u32, u32)>);

impl BasisTerm {
    pub fn max_degree(&self) -> u32 {
        self.0.iter().map(|(m, n)| (*m).max(*n)).max().unwrap_or(0)
    }

    /// Value from precomputed `T_0..T_d` at `p` and `q`.
    pub fn eval_with(&self, tp: &[f64], tq: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|&(m, n)| tp[m as usize] * tq[n as usize])
            .sum()
    }
}

/// `T_0(x), ..., T_d(x)` into `out`.
pub fn chebyshev_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = 2.0 * x * out[k - 1] - out[k - 2];
    }
}

/// The first `l` bivariate Chebyshev functions in graded total degree.
///
/// Within one degree the most balanced products come first and mirrored
/// pairs `(m, n)`, `(n, m)` travel together. When fewer slots are left than a
/// pair needs, the pair enters as the symmetric sum `T_m T_n + T_n T_m`. For
/// `l = 7` this gives `1, T1(p), T1(q), T1T1, T2(p), T2(q), T2T1 + T1T2`.
pub fn graded_basis(l: usize) -> Vec<BasisTerm> {
    let mut basis = Vec::with_capacity(l);
    let mut degree = 0u32;
    while basis.len() < l {
        let mut groups: Vec<Vec<(u32, u32)>> = Vec::new();
        for m in (0..=degree).rev() {
            let n = degree - m;
            if m < n {
                break;
            }
            groups.push(if m == n {
                vec![(m, n)]
            } else {
                vec![(m, n), (n, m)]
            });
        }
        groups.sort_by_key(|g| g[0].0 - g[0].1);
        for g in groups {
            let slots = l - basis.len();
            if slots == 0 {
                break;
            }
            if g.len() <= slots {
                basis.extend(g.into_iter().map(|t| BasisTerm(vec![t])));
            } else {
                basis.push(BasisTerm(g));
            }
        }
        degree += 1;
    }
    basis
}
