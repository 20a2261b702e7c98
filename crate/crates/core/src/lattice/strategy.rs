use serde::{Deserialize, Serialize};

use super::grid::MarketGrid;
use super::measure::PathFunction;
use crate::error::{EmotError, Result};
use crate::scalar::Scalar;

/// Static option positions plus an adapted dynamic position in each asset.
///
/// `statics[t][b]` is the payoff of the time-`t` static position at product
/// node `b`; `dynamic[t][j][p]` is the number of shares of asset `j` held
/// over `(t, t+1]` after prefix `p` (adapted by indexing); `cash[t]` is the
/// cash shift attached to the time-`t` valuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemistaticStrategy<S> {
    pub statics: Vec<Vec<S>>,
    pub dynamic: Vec<Vec<Vec<S>>>,
    pub cash: Vec<S>,
}

impl<S: Scalar> SemistaticStrategy<S> {
    pub fn zeros(grid: &MarketGrid<S>) -> Self {
        let horizon = grid.horizon();
        Self {
            statics: (0..=horizon).map(|t| vec![S::zero(); grid.block_size(t)]).collect(),
            dynamic: zero_dynamic(grid),
            cash: vec![S::zero(); horizon + 1],
        }
    }

    pub fn check_shape(&self, grid: &MarketGrid<S>) -> Result<()> {
        check_statics(grid, &self.statics)?;
        check_dynamic(grid, &self.dynamic)?;
        if self.cash.len() != grid.horizon() + 1 {
            return Err(EmotError::DimensionMismatch("cash vector needs T+1 entries".into()));
        }
        let all_finite = self.statics.iter().flatten().all(|v| v.is_finite())
            && self.dynamic.iter().flatten().flatten().all(|v| v.is_finite())
            && self.cash.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(EmotError::InvalidParameter("strategy entries must be finite".into()));
        }
        Ok(())
    }

    /// Largest `|Delta_t^j(p)|` over `j` and prefixes, per `t`.
    pub fn dynamic_budget(&self) -> Vec<S> {
        self.dynamic
            .iter()
            .map(|per_t| per_t.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs())))
            .collect()
    }
}

/// Zero dynamic table shaped `[t][j][prefix]` for `t < T`.
pub fn zero_dynamic<S: Scalar>(grid: &MarketGrid<S>) -> Vec<Vec<Vec<S>>> {
    (0..grid.horizon())
        .map(|t| vec![vec![S::zero(); grid.prefix_count(t)]; grid.num_assets()])
        .collect()
}

pub(crate) fn check_statics<S: Scalar>(grid: &MarketGrid<S>, statics: &[Vec<S>]) -> Result<()> {
    if statics.len() != grid.horizon() + 1 {
        return Err(EmotError::DimensionMismatch(format!(
            "need {} static vectors, got {}",
            grid.horizon() + 1,
            statics.len()
        )));
    }
    for (t, phi) in statics.iter().enumerate() {
        if phi.len() != grid.block_size(t) {
            return Err(EmotError::DimensionMismatch(format!(
                "static position at t={t} has {} entries, node set has {}",
                phi.len(),
                grid.block_size(t)
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_dynamic<S: Scalar>(grid: &MarketGrid<S>, dynamic: &[Vec<Vec<S>>]) -> Result<()> {
    if dynamic.len() != grid.horizon() {
        return Err(EmotError::DimensionMismatch(format!(
            "need {} dynamic tables, got {}",
            grid.horizon(),
            dynamic.len()
        )));
    }
    for (t, per_t) in dynamic.iter().enumerate() {
        if per_t.len() != grid.num_assets() {
            return Err(EmotError::DimensionMismatch(format!("dynamic table at t={t} has wrong asset count")));
        }
        for per_j in per_t {
            if per_j.len() != grid.prefix_count(t) {
                return Err(EmotError::DimensionMismatch(format!(
                    "dynamic table at t={t} needs {} prefixes, got {}",
                    grid.prefix_count(t),
                    per_j.len()
                )));
            }
        }
    }
    Ok(())
}

/// `I^Delta(x) = sum_t sum_j Delta_t^j(x_{0:t}) (x_{t+1}^j - x_t^j)` on every path.
pub fn stochastic_integral<S: Scalar>(grid: &MarketGrid<S>, dynamic: &[Vec<Vec<S>>]) -> Result<PathFunction<S>> {
    check_dynamic(grid, dynamic)?;
    let d = grid.num_assets();
    let values = (0..grid.path_count())
        .map(|p| {
            let mut acc = S::zero();
            for (t, per_t) in dynamic.iter().enumerate() {
                let prefix = grid.prefix_of(p, t);
                for j in 0..d {
                    let pos = per_t[j][prefix];
                    if pos != S::zero() {
                        acc += pos * (grid.value(p, t + 1, j) - grid.value(p, t, j));
                    }
                }
            }
            acc
        })
        .collect();
    Ok(PathFunction(values))
}

/// `sum_t phi_t(x_t)` on every path.
pub fn static_sum<S: Scalar>(grid: &MarketGrid<S>, statics: &[Vec<S>]) -> Result<PathFunction<S>> {
    check_statics(grid, statics)?;
    let values = (0..grid.path_count())
        .map(|p| {
            statics
                .iter()
                .enumerate()
                .map(|(t, phi)| phi[grid.block_of(p, t)])
                .sum()
        })
        .collect();
    Ok(PathFunction(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_identity_position() {
        let g = MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let dyn_ = vec![vec![vec![1.0]]];
        let i = stochastic_integral(&g, &dyn_).unwrap();
        assert_eq!(i.values(), &[-1.0, 0.0, 1.0]);
        let zero = stochastic_integral(&g, &zero_dynamic(&g)).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn static_coordinate_function() {
        let g = MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let f = static_sum(&g, &[vec![0.0], vec![0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(f.values(), &[0.0, 1.0, 2.0]);
        let c = static_sum(&g, &[vec![1.5], vec![2.0, 2.0, 2.0]]).unwrap();
        assert!(c.values().iter().all(|v| *v == 3.5));
    }

    #[test]
    fn shape_errors() {
        let g = MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        assert!(stochastic_integral(&g, &[vec![vec![1.0, 2.0]]]).is_err());
        assert!(static_sum(&g, &[vec![0.0], vec![1.0]]).is_err());
        let mut s = SemistaticStrategy::zeros(&g);
        assert!(s.check_shape(&g).is_ok());
        s.cash.pop();
        assert!(s.check_shape(&g).is_err());
    }
}
