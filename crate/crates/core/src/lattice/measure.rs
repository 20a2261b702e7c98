use serde::{Deserialize, Serialize};

use super::grid::{MarketGrid, Path};
use crate::error::{EmotError, Result};
use crate::scalar::{weighted, Scalar};

/// Mass tolerance for probability checks.
pub const MASS_TOL: f64 = 1e-12;

/// Real value per path. Cost functions may carry `+inf` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathFunction<S>(pub Vec<S>);

impl<S: Scalar> PathFunction<S> {
    pub fn new(values: Vec<S>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &MarketGrid<S>) -> Self {
        Self(vec![S::zero(); grid.path_count()])
    }

    pub fn constant(grid: &MarketGrid<S>, k: S) -> Self {
        Self(vec![k; grid.path_count()])
    }

    pub fn from_fn<F: FnMut(&Path<S>) -> S>(grid: &MarketGrid<S>, mut f: F) -> Self {
        Self(grid.paths().map(|p| f(&p)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.0
    }

    pub fn check_len(&self, grid: &MarketGrid<S>) -> Result<()> {
        if self.0.len() != grid.path_count() {
            return Err(EmotError::DimensionMismatch(format!(
                "path function has {} entries, grid has {} paths",
                self.0.len(),
                grid.path_count()
            )));
        }
        Ok(())
    }

    /// Rejects NaN and `-inf`; `+inf` is allowed (extended cost).
    pub fn check_cost(&self) -> Result<()> {
        if self.0.iter().any(|v| v.is_nan() || *v == S::neg_infinity()) {
            return Err(EmotError::InvalidParameter("cost has NaN or -inf entries".into()));
        }
        Ok(())
    }

    pub fn map<F: FnMut(S) -> S>(&self, f: F) -> Self {
        Self(self.0.iter().copied().map(f).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a + *b).collect())
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn shift(&self, k: S) -> Self {
        self.map(|v| v + k)
    }

    pub fn min_value(&self) -> S {
        self.0.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_finite(&self) -> S {
        self.0
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(S::neg_infinity(), S::max)
    }
}

/// Nonnegative weight per path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMeasure<S> {
    weights: Vec<S>,
    mass: S,
}

impl<S: Scalar> PathMeasure<S> {
    pub fn new(weights: Vec<S>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(EmotError::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let mass = weights.iter().copied().sum();
        Ok(Self { weights, mass })
    }

    /// Like [`PathMeasure::new`] but additionally requires unit mass.
    pub fn probability(weights: Vec<S>) -> Result<Self> {
        let m = Self::new(weights)?;
        if !m.is_probability() {
            return Err(EmotError::InvalidMeasure(format!("total mass {} is not 1", m.mass)));
        }
        Ok(m)
    }

    /// Clips tiny negative round-off and renormalizes to unit mass.
    pub fn from_solver(weights: Vec<S>) -> Self {
        let w: Vec<S> = weights.into_iter().map(|v| v.max(S::zero())).collect();
        let mass: S = w.iter().copied().sum();
        let w: Vec<S> = if mass > S::zero() { w.into_iter().map(|v| v / mass).collect() } else { w };
        let mass = w.iter().copied().sum();
        Self { weights: w, mass }
    }

    pub fn uniform(grid: &MarketGrid<S>) -> Self {
        let n = grid.path_count();
        Self::from_solver(vec![S::one(); n])
    }

    pub fn dirac(grid: &MarketGrid<S>, path: usize) -> Self {
        let mut w = vec![S::zero(); grid.path_count()];
        w[path] = S::one();
        Self { weights: w, mass: S::one() }
    }

    /// Product measure from per-time marginals (single block per date).
    pub fn product(grid: &MarketGrid<S>, marginals: &[MarginalMeasure<S>]) -> Result<Self> {
        if marginals.len() != grid.horizon() + 1 {
            return Err(EmotError::DimensionMismatch("need one marginal per date".into()));
        }
        for (t, m) in marginals.iter().enumerate() {
            if m.len() != grid.block_size(t) {
                return Err(EmotError::DimensionMismatch(format!("marginal {t} has wrong node count")));
            }
        }
        let w = (0..grid.path_count())
            .map(|p| (0..=grid.horizon()).map(|t| marginals[t].weights[grid.block_of(p, t)]).product())
            .collect();
        Self::new(w)
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn mass(&self) -> S {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass - S::one()).abs() <= S::c(MASS_TOL)
    }

    pub fn check_len(&self, grid: &MarketGrid<S>) -> Result<()> {
        if self.weights.len() != grid.path_count() {
            return Err(EmotError::DimensionMismatch(format!(
                "measure has {} weights, grid has {} paths",
                self.weights.len(),
                grid.path_count()
            )));
        }
        Ok(())
    }

    /// `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &Self, lambda: S) -> Self {
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda * *a + (S::one() - lambda) * *b)
            .collect();
        Self::new(w).expect("convex combination of measures")
    }

    /// Total variation distance `sum |p - q| / 2`.
    pub fn total_variation(&self, other: &Self) -> S {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (*a - *b).abs())
            .sum::<S>()
            * S::c(0.5)
    }
}

/// Nonnegative weights on the time-`t` product node set, with the node
/// coordinates attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMeasure<S> {
    pub time: usize,
    /// `support[k]` is the coordinate vector (one entry per asset) of node `k`.
    pub support: Vec<Vec<S>>,
    pub weights: Vec<S>,
}

impl<S: Scalar> MarginalMeasure<S> {
    /// Marginal on the time-`t` product node set of `grid`.
    pub fn new(grid: &MarketGrid<S>, t: usize, weights: Vec<S>) -> Result<Self> {
        grid.check_time(t)?;
        if weights.len() != grid.block_size(t) {
            return Err(EmotError::DimensionMismatch(format!(
                "marginal at t={t} needs {} weights, got {}",
                grid.block_size(t),
                weights.len()
            )));
        }
        let support = (0..grid.block_size(t)).map(|b| grid.block_point(t, b)).collect();
        Self::from_parts(t, support, weights)
    }

    /// Single-asset marginal on sorted `points`.
    pub fn on_line(t: usize, points: &[S], weights: Vec<S>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(EmotError::DimensionMismatch("points and weights differ in length".into()));
        }
        Self::from_parts(t, points.iter().map(|p| vec![*p]).collect(), weights)
    }

    pub fn from_parts(time: usize, support: Vec<Vec<S>>, weights: Vec<S>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(EmotError::InvalidMeasure("marginal weights must be finite and nonnegative".into()));
        }
        Ok(Self { time, support, weights })
    }

    pub fn uniform(grid: &MarketGrid<S>, t: usize) -> Result<Self> {
        let n = grid.block_size(t);
        Self::new(grid, t, vec![S::one() / S::from_count(n); n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> S {
        self.weights.iter().copied().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - S::one()).abs() <= S::c(MASS_TOL)
    }

    pub fn is_one_dim(&self) -> bool {
        self.support.iter().all(|p| p.len() == 1)
    }

    /// First coordinates of the support (single-asset view).
    pub fn points(&self) -> Vec<S> {
        self.support.iter().map(|p| p[0]).collect()
    }

    /// Expectation of a function given per node.
    pub fn integrate(&self, f: &[S]) -> S {
        self.weights.iter().zip(f).map(|(w, v)| weighted(*w, *v)).sum()
    }

    /// Mean of asset `j`.
    pub fn mean(&self, j: usize) -> S {
        self.weights.iter().zip(&self.support).map(|(w, p)| *w * p[j]).sum()
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.support == other.support
    }

    pub fn check_same_support(&self, other: &Self) -> Result<()> {
        if self.same_support(other) {
            Ok(())
        } else {
            Err(EmotError::DimensionMismatch("marginals live on different node sets".into()))
        }
    }
}

/// `E_Q[f]` with `0 * inf = 0`; `+inf` when a charged path has `f = +inf`.
pub fn expectation<S: Scalar>(q: &PathMeasure<S>, f: &PathFunction<S>) -> S {
    q.weights().iter().zip(f.values()).map(|(w, v)| weighted(*w, *v)).sum()
}

/// Time-`t` marginal of a path measure.
pub fn marginal<S: Scalar>(grid: &MarketGrid<S>, q: &PathMeasure<S>, t: usize) -> Result<MarginalMeasure<S>> {
    grid.check_time(t)?;
    q.check_len(grid)?;
    let mut w = vec![S::zero(); grid.block_size(t)];
    for (p, &qp) in q.weights().iter().enumerate() {
        w[grid.block_of(p, t)] += qp;
    }
    MarginalMeasure::new(grid, t, w)
}

/// All marginals `Q_0, ..., Q_T`.
pub fn marginals<S: Scalar>(grid: &MarketGrid<S>, q: &PathMeasure<S>) -> Result<Vec<MarginalMeasure<S>>> {
    (0..=grid.horizon()).map(|t| marginal(grid, q, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> MarketGrid<f64> {
        MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
    }

    #[test]
    fn expectation_of_constants_and_diracs() {
        let g = g1();
        let q = PathMeasure::probability(vec![0.2, 0.5, 0.3]).unwrap();
        assert!((expectation(&q, &PathFunction::constant(&g, 4.5)) - 4.5).abs() < 1e-15);
        let f = PathFunction::new(vec![3.0, -1.0, 7.0]);
        assert_eq!(expectation(&PathMeasure::dirac(&g, 2), &f), 7.0);
    }

    #[test]
    fn expectation_of_call_under_uniform() {
        let g = g1();
        let call = PathFunction::from_fn(&g, |p| (p.x(1, 0) - 1.0).max(0.0));
        assert!((expectation(&PathMeasure::uniform(&g), &call) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn infinite_cost_convention() {
        let f = PathFunction::new(vec![f64::INFINITY, 1.0, 2.0]);
        let q0 = PathMeasure::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert_eq!(expectation(&q0, &f), 1.5);
        let q1 = PathMeasure::new(vec![0.1, 0.4, 0.5]).unwrap();
        assert_eq!(expectation(&q1, &f), f64::INFINITY);
    }

    #[test]
    fn product_marginals_factorize() {
        let g = MarketGrid::one_dim(vec![vec![1.0, 2.0], vec![0.0, 1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        let ms = vec![
            MarginalMeasure::new(&g, 0, vec![0.25, 0.75]).unwrap(),
            MarginalMeasure::new(&g, 1, vec![0.2, 0.3, 0.5]).unwrap(),
            MarginalMeasure::new(&g, 2, vec![0.6, 0.4]).unwrap(),
        ];
        let q = PathMeasure::product(&g, &ms).unwrap();
        for t in 0..=2 {
            let m = marginal(&g, &q, t).unwrap();
            for (a, b) in m.weights.iter().zip(&ms[t].weights) {
                assert!(f64::abs(*a - *b) < 1e-15);
            }
        }
        assert!(marginal(&g, &q, 3).is_err());
    }

    #[test]
    fn rejects_negative_weights() {
        assert!(PathMeasure::new(vec![0.5, -0.1]).is_err());
        assert!(PathMeasure::probability(vec![0.5, 0.4]).is_err());
    }
}
