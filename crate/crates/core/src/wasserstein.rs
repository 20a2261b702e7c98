//! Exact 1-Wasserstein distances between finite marginals and
//! Kantorovich potentials.

use serde::{Deserialize, Serialize};

use crate::error::{EmotError, Result};
use crate::lattice::MarginalMeasure;
use crate::lp::{LinearProgram, Relation, Var};
use crate::scalar::Scalar;

const MASS_MISMATCH_TOL: f64 = 1e-10;

/// Ground metric on a marginal's node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "table", rename_all = "snake_case")]
pub enum GroundMetric<S> {
    /// `|x - y|` on a single-asset node set.
    Euclidean,
    /// Pairwise distance table indexed like the nodes.
    Custom(Vec<Vec<S>>),
}

impl<S: Scalar> GroundMetric<S> {
    /// Checks the metric axioms (triangle inequality exhaustively on up to
    /// 200 nodes).
    pub fn validate(&self, nodes: usize) -> Result<()> {
        let GroundMetric::Custom(d) = self else { return Ok(()) };
        if d.len() != nodes || d.iter().any(|r| r.len() != nodes) {
            return Err(EmotError::DimensionMismatch(format!("metric table must be {nodes}x{nodes}")));
        }
        let tol = S::c(1e-12);
        for i in 0..nodes {
            if d[i][i] != S::zero() {
                return Err(EmotError::InvalidParameter("metric diagonal must vanish".into()));
            }
            for k in 0..nodes {
                if !d[i][k].is_finite() || d[i][k] < S::zero() || (d[i][k] - d[k][i]).abs() > tol {
                    return Err(EmotError::InvalidParameter(format!("metric entry ({i},{k}) invalid")));
                }
            }
        }
        if nodes <= 200 {
            for i in 0..nodes {
                for j in 0..nodes {
                    for k in 0..nodes {
                        if d[i][k] > d[i][j] + d[j][k] + tol {
                            return Err(EmotError::InvalidParameter(format!(
                                "triangle inequality fails at ({i},{j},{k})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Distance table on `support`; Euclidean needs one-dimensional points.
    pub fn table(&self, support: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
        match self {
            GroundMetric::Custom(d) => {
                self.validate(support.len())?;
                Ok(d.clone())
            }
            GroundMetric::Euclidean => {
                if support.iter().any(|p| p.len() != 1) {
                    return Err(EmotError::Unsupported(
                        "Euclidean ground metric is defined for single-asset marginals; pass a custom table".into(),
                    ));
                }
                Ok(support
                    .iter()
                    .map(|a| support.iter().map(|b| (a[0] - b[0]).abs()).collect())
                    .collect())
            }
        }
    }

    /// Whether the sorted CDF formula applies.
    pub fn is_line(&self, support: &[Vec<S>]) -> bool {
        matches!(self, GroundMetric::Euclidean)
            && support.iter().all(|p| p.len() == 1)
            && support.windows(2).all(|w| w[0][0] < w[1][0])
    }
}

fn check_pair<S: Scalar>(mu: &MarginalMeasure<S>, nu: &MarginalMeasure<S>) -> Result<()> {
    mu.check_same_support(nu)?;
    if (mu.mass() - nu.mass()).abs() > S::c(MASS_MISMATCH_TOL) {
        return Err(EmotError::InvalidMeasure(format!(
            "Wasserstein distance needs equal masses ({} vs {})",
            mu.mass(),
            nu.mass()
        )));
    }
    Ok(())
}

/// `W_1(mu, nu)` for the given ground metric.
pub fn w1<S: Scalar>(mu: &MarginalMeasure<S>, nu: &MarginalMeasure<S>, metric: &GroundMetric<S>) -> Result<S> {
    check_pair(mu, nu)?;
    if metric.is_line(&mu.support) {
        return Ok(cdf_distance(&mu.points(), &mu.weights, &nu.weights));
    }
    let d = metric.table(&mu.support)?;
    Ok(transport_lp(&d, &mu.weights, &nu.weights)?.0)
}

/// `sum_k gap_k |F_mu(k) - F_nu(k)|` on sorted points.
pub(crate) fn cdf_distance<S: Scalar>(points: &[S], mu: &[S], nu: &[S]) -> S {
    let mut fm = S::zero();
    let mut fn_ = S::zero();
    let mut acc = S::zero();
    for k in 0..points.len().saturating_sub(1) {
        fm += mu[k];
        fn_ += nu[k];
        acc += (points[k + 1] - points[k]) * (fm - fn_).abs();
    }
    acc
}

/// Optimal transport LP; returns the value and the duals `(a, b)` with
/// `a_i + b_k <= d_ik`.
fn transport_lp<S: Scalar>(d: &[Vec<S>], mu: &[S], nu: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    let n = mu.len();
    let mut lp = LinearProgram::new();
    let mut pi: Vec<Vec<Var>> = Vec::with_capacity(n);
    for row in d.iter().take(n) {
        pi.push(row.iter().take(n).map(|dik| lp.add_var(*dik)).collect());
    }
    let rows_mu: Vec<usize> = (0..n)
        .map(|i| {
            let coeffs: Vec<(Var, S)> = (0..n).map(|k| (pi[i][k], S::one())).collect();
            lp.add_row(&coeffs, Relation::Eq, mu[i])
        })
        .collect();
    // the last column constraint is implied by equal masses
    let rows_nu: Vec<usize> = (0..n - 1)
        .map(|k| {
            let coeffs: Vec<(Var, S)> = (0..n).map(|i| (pi[i][k], S::one())).collect();
            lp.add_row(&coeffs, Relation::Eq, nu[k])
        })
        .collect();
    let sol = lp.minimize().optimal()?;
    let a: Vec<S> = rows_mu.iter().map(|&r| sol.duals[r]).collect();
    let mut b: Vec<S> = rows_nu.iter().map(|&r| sol.duals[r]).collect();
    b.push(S::zero());
    Ok((sol.value, a, b))
}

/// Kantorovich potential `l` with `|l(x) - l(y)| <= d(x, y)` and
/// `int l dmu - int l dnu = W_1(mu, nu)`, normalized by `l(first) = 0`.
pub fn kr_dual_witness<S: Scalar>(
    mu: &MarginalMeasure<S>,
    nu: &MarginalMeasure<S>,
    metric: &GroundMetric<S>,
) -> Result<(S, Vec<S>)> {
    check_pair(mu, nu)?;
    let n = mu.len();
    let mut ell = vec![S::zero(); n];
    let value;
    if metric.is_line(&mu.support) {
        let x = mu.points();
        let (mut fm, mut fn_) = (S::zero(), S::zero());
        for k in 0..n - 1 {
            fm += mu.weights[k];
            fn_ += nu.weights[k];
            let diff = fm - fn_;
            let step = if diff > S::zero() {
                -S::one()
            } else if diff < S::zero() {
                S::one()
            } else {
                S::zero()
            };
            ell[k + 1] = ell[k] + step * (x[k + 1] - x[k]);
        }
        value = cdf_distance(&x, &mu.weights, &nu.weights);
    } else {
        let d = metric.table(&mu.support)?;
        let (v, _, b) = transport_lp(&d, &mu.weights, &nu.weights)?;
        // c-transform: l_i = min_k d_ik - b_k is 1-Lipschitz
        for i in 0..n {
            ell[i] = (0..n).map(|k| d[i][k] - b[k]).fold(S::infinity(), S::min);
        }
        let base = ell[0];
        for v in ell.iter_mut() {
            *v -= base;
        }
        // clip to the Lipschitz constraint and re-verify
        for _ in 0..n {
            let mut changed = false;
            for i in 0..n {
                for k in 0..n {
                    if ell[i] > ell[k] + d[i][k] {
                        ell[i] = ell[k] + d[i][k];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        value = v;
    }
    Ok((value, ell))
}
