use serde::{Deserialize, Serialize};

use super::grid::MarketGrid;
use super::measure::{PathFunction, PathMeasure};
use crate::error::{EmotError, Result};
use crate::scalar::Scalar;

/// Default residual tolerance for membership tests.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// The hedging cone and, through its polar, the admissible measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum ConeSpec<S> {
    /// Stochastic integrals; polar = martingale measures.
    Martingale,
    /// Integrals minus `eps` times the per-date sup-norm budget.
    EpsMartingale { eps: S },
    /// Nonnegative positions; polar = supermartingale measures.
    NoShortSelling,
    /// Nonpositive positions; polar = submartingale measures.
    NoLongBuying,
    /// `{0}`; every probability is admissible.
    NullCone,
}

impl<S: Scalar> ConeSpec<S> {
    pub fn validate(&self) -> Result<()> {
        if let ConeSpec::EpsMartingale { eps } = self {
            if !eps.is_finite() || *eps < S::zero() {
                return Err(EmotError::InvalidParameter("eps must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConeSpec::Martingale => "martingale",
            ConeSpec::EpsMartingale { .. } => "eps_martingale",
            ConeSpec::NoShortSelling => "no_short_selling",
            ConeSpec::NoLongBuying => "no_long_buying",
            ConeSpec::NullCone => "null_cone",
        }
    }
}

/// Conditional increments `m_{t,j}(p) = sum_{x extends p} Q(x) (x_{t+1}^j - x_t^j)`,
/// indexed `[t][j][prefix]` for `t < T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleResiduals<S>(pub Vec<Vec<Vec<S>>>);

impl<S: Scalar> MartingaleResiduals<S> {
    pub fn max_abs(&self) -> S {
        self.0.iter().flatten().flatten().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// `sum_{j,p} |m_{t,j}(p)|` for each `t`.
    pub fn l1_per_time(&self) -> Vec<S> {
        self.0
            .iter()
            .map(|per_t| per_t.iter().flatten().map(|v| v.abs()).sum())
            .collect()
    }

    /// `E_Q[I^Delta] = sum Delta * m`.
    pub fn pair(&self, dynamic: &[Vec<Vec<S>>]) -> S {
        self.0
            .iter()
            .zip(dynamic)
            .flat_map(|(mt, dt)| mt.iter().zip(dt).flat_map(|(mj, dj)| mj.iter().zip(dj).map(|(a, b)| *a * *b)))
            .sum()
    }
}

pub fn martingale_residuals<S: Scalar>(grid: &MarketGrid<S>, q: &PathMeasure<S>) -> Result<MartingaleResiduals<S>> {
    q.check_len(grid)?;
    let d = grid.num_assets();
    let mut out: Vec<Vec<Vec<S>>> = (0..grid.horizon())
        .map(|t| vec![vec![S::zero(); grid.prefix_count(t)]; d])
        .collect();
    for (p, &w) in q.weights().iter().enumerate() {
        if w == S::zero() {
            continue;
        }
        for (t, per_t) in out.iter_mut().enumerate() {
            let prefix = grid.prefix_of(p, t);
            for (j, per_j) in per_t.iter_mut().enumerate() {
                per_j[prefix] += w * (grid.value(p, t + 1, j) - grid.value(p, t, j));
            }
        }
    }
    Ok(MartingaleResiduals(out))
}

/// Location of a violated residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualWitness<S> {
    pub t: usize,
    pub asset: usize,
    pub prefix: usize,
    pub residual: S,
}

/// Result of [`cone_membership`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Membership<S> {
    Member,
    /// A single residual breaks the (super/sub)martingale condition.
    Residual(ResidualWitness<S>),
    /// The per-date l1 mass of residuals exceeds `eps`; the sign strategy
    /// `Delta = sign(m_t)` on date `t` realizes the excess gain.
    Budget { t: usize, l1: S, eps: S },
}

impl<S> Membership<S> {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member)
    }
}

/// Polar-cone membership of a probability measure.
///
/// The eps-martingale condition `E_Q[I^Delta] <= eps * sum_t max_j ||Delta_t^j||`
/// is checked through its finite-grid equivalent
/// `sum_{j,p} |m_{t,j}(p)| <= eps` for every `t`.
pub fn cone_membership<S: Scalar>(
    grid: &MarketGrid<S>,
    spec: &ConeSpec<S>,
    q: &PathMeasure<S>,
    tol: S,
) -> Result<Membership<S>> {
    spec.validate()?;
    if matches!(spec, ConeSpec::NullCone) {
        return Ok(Membership::Member);
    }
    let res = martingale_residuals(grid, q)?;
    let first = |pred: &dyn Fn(S) -> bool| -> Option<ResidualWitness<S>> {
        for (t, per_t) in res.0.iter().enumerate() {
            for (j, per_j) in per_t.iter().enumerate() {
                for (p, &m) in per_j.iter().enumerate() {
                    if pred(m) {
                        return Some(ResidualWitness { t, asset: j, prefix: p, residual: m });
                    }
                }
            }
        }
        None
    };
    let out = match spec {
        ConeSpec::Martingale => first(&|m| m.abs() > tol).map(Membership::Residual),
        ConeSpec::NoShortSelling => first(&|m| m > tol).map(Membership::Residual),
        ConeSpec::NoLongBuying => first(&|m| m < -tol).map(Membership::Residual),
        ConeSpec::EpsMartingale { eps } => res
            .l1_per_time()
            .into_iter()
            .enumerate()
            .find(|(_, l1)| *l1 > *eps + tol)
            .map(|(t, l1)| Membership::Budget { t, l1, eps: *eps }),
        ConeSpec::NullCone => None,
    };
    Ok(out.unwrap_or(Membership::Member))
}

/// `c(x) >= -A (1 + sum_{t,j} |x_t^j|)` on every path.
pub fn growth_bound_check<S: Scalar>(grid: &MarketGrid<S>, a: S, c: &PathFunction<S>) -> Result<bool> {
    c.check_len(grid)?;
    Ok((0..grid.path_count()).all(|p| {
        let norm: S = (0..=grid.horizon())
            .flat_map(|t| (0..grid.num_assets()).map(move |j| (t, j)))
            .map(|(t, j)| grid.value(p, t, j).abs())
            .sum();
        c.values()[p] >= -a * (S::one() + norm)
    }))
}

/// Checks `1 + sum |x_s^j| <= a * sum (|x_s^j| - A/beta)^+` with
/// `a = 2d(T+2) + 2`, `beta = 2d(T+1)` at every lattice point outside the
/// cube `[-A, A]^{d(T+1)}`. Requires `A > 1`.
pub fn control_cone_bound_holds<S: Scalar>(grid: &MarketGrid<S>, big_a: S) -> Result<bool> {
    if !(big_a > S::one()) {
        return Err(EmotError::InvalidParameter("the control bound needs A > 1".into()));
    }
    let d = S::from_count(grid.num_assets());
    let horizon = S::from_count(grid.horizon());
    let a = S::c(2.0) * d * (horizon + S::c(2.0)) + S::c(2.0);
    let beta = S::c(2.0) * d * (horizon + S::one());
    let cutoff = big_a / beta;
    Ok(grid.paths().all(|path| {
        let coords = path.values.iter().flatten();
        let outside = coords.clone().any(|v| v.abs() > big_a);
        if !outside {
            return true;
        }
        let lhs = S::one() + coords.clone().map(|v| v.abs()).sum::<S>();
        let rhs = a * coords.map(|v| (v.abs() - cutoff).max(S::zero())).sum::<S>();
        lhs <= rhs
    }))
}
