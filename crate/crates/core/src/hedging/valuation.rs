use serde::Serialize;

use crate::error::{EmotError, Result};
use crate::lattice::{MarginalMeasure, MarketGrid};
use crate::penalties::{dual_market_valuation, dual_wasserstein_valuation, MarketOption, PenaltySpec, WassersteinTerm};
use crate::scalar::Scalar;
use crate::valuation::{oce_value, stock_additive_value, UtilityFunction};

/// Per-date valuation `S_t` of a static position.
#[derive(Debug, Clone)]
pub enum Valuation<S> {
    /// `E_target[phi]`.
    Expectation(Vec<S>),
    /// `sup_beta E_ref[u(phi + beta)] - beta`, with mass allowed on null
    /// reference nodes at the utility's singular slope.
    Oce {
        utility: UtilityFunction<S>,
        reference: MarginalMeasure<S>,
    },
    /// Optimized over a stock position as well (single asset).
    StockAdditive {
        utility: UtilityFunction<S>,
        reference: MarginalMeasure<S>,
        spot: S,
    },
    MarketPrice(Vec<MarketOption<S>>),
    Wasserstein(WassersteinTerm<S>),
    /// `min phi` (no information at this date).
    Worst,
}

/// Value with a supergradient (a probability vector on the nodes).
#[derive(Debug, Clone, Serialize)]
pub struct Evaluated<S> {
    pub value: S,
    pub gradient: Vec<S>,
}

impl<S: Scalar> Valuation<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Valuation::Expectation(_) => "expectation",
            Valuation::Oce { .. } => "oce",
            Valuation::StockAdditive { .. } => "stock_additive",
            Valuation::MarketPrice(_) => "market_price",
            Valuation::Wasserstein(_) => "wasserstein",
            Valuation::Worst => "worst",
        }
    }

    /// Closed-form or one-dimensional evaluations (no linear programs).
    pub fn is_cheap(&self) -> bool {
        matches!(
            self,
            Valuation::Expectation(_) | Valuation::Oce { .. } | Valuation::StockAdditive { .. } | Valuation::Worst
        )
    }

    /// Valuations matching each date of a penalty (their concave conjugates).
    pub fn from_penalty(grid: &MarketGrid<S>, penalty: &PenaltySpec<S>) -> Vec<Self> {
        (0..=grid.horizon())
            .map(|t| match penalty {
                PenaltySpec::FixedMarginals(v) => match &v[t] {
                    Some(m) => Valuation::Expectation(m.weights.clone()),
                    None => Valuation::Worst,
                },
                PenaltySpec::DivergenceSum(v) => match &v[t] {
                    Some(d) => Valuation::Oce {
                        utility: d.utility.clone(),
                        reference: d.reference.clone(),
                    },
                    None => Valuation::Worst,
                },
                PenaltySpec::MarketPrice(v) if !v[t].is_empty() => Valuation::MarketPrice(v[t].clone()),
                PenaltySpec::WassersteinBall(v) => match &v[t] {
                    Some(w) => Valuation::Wasserstein(w.clone()),
                    None => Valuation::Worst,
                },
                _ => Valuation::Worst,
            })
            .collect()
    }

    pub fn evaluate(&self, grid: &MarketGrid<S>, t: usize, phi: &[S], tol: S) -> Result<Evaluated<S>> {
        grid.check_time(t)?;
        if phi.len() != grid.block_size(t) {
            return Err(EmotError::DimensionMismatch(format!("valuation at t={t} needs {} entries", grid.block_size(t))));
        }
        match self {
            Valuation::Expectation(w) => {
                if w.len() != phi.len() {
                    return Err(EmotError::DimensionMismatch("expectation weights".into()));
                }
                Ok(Evaluated {
                    value: phi.iter().zip(w).map(|(a, b)| *a * *b).sum(),
                    gradient: w.clone(),
                })
            }
            Valuation::Worst => {
                let (i, v) = phi
                    .iter()
                    .enumerate()
                    .fold((0, S::infinity()), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
                let mut gradient = vec![S::zero(); phi.len()];
                gradient[i] = S::one();
                Ok(Evaluated { value: v, gradient })
            }
            Valuation::Oce { utility, reference } => oce_with_nulls(phi, &reference.weights, utility),
            Valuation::StockAdditive {
                utility,
                reference,
                spot,
            } => {
                let v = stock_additive_value(phi, reference, utility, *spot)?;
                Ok(Evaluated {
                    value: v.value,
                    gradient: v.gradient,
                })
            }
            Valuation::MarketPrice(options) => {
                let v = dual_market_valuation(grid, t, phi, options, tol)?;
                Ok(Evaluated {
                    value: v.value,
                    gradient: v.marginal,
                })
            }
            Valuation::Wasserstein(term) => {
                let v = dual_wasserstein_valuation(grid, t, phi, term, tol)?;
                Ok(Evaluated {
                    value: v.value,
                    gradient: v.marginal,
                })
            }
        }
    }
}

/// OCE over probabilities that may charge null reference nodes: the cash
/// shift is constrained by `beta >= edge - phi_b` on those nodes.
fn oce_with_nulls<S: Scalar>(phi: &[S], reference: &[S], u: &UtilityFunction<S>) -> Result<Evaluated<S>> {
    let base = oce_value(phi, reference, u)?;
    let edge = u.edge();
    let nulls: Vec<usize> = (0..phi.len()).filter(|&i| reference[i] <= S::zero()).collect();
    if nulls.is_empty() || edge == S::neg_infinity() {
        return Ok(Evaluated {
            value: base.value,
            gradient: base.gradient,
        });
    }
    let (bind, beta_lo) = nulls
        .iter()
        .map(|&i| (i, edge - phi[i]))
        .fold((nulls[0], S::neg_infinity()), |acc, v| if v.1 > acc.1 { v } else { acc });
    if base.shift.is_some_and(|b| b >= beta_lo) {
        return Ok(Evaluated {
            value: base.value,
            gradient: base.gradient,
        });
    }
    let mut value = -beta_lo;
    let mut gradient = vec![S::zero(); phi.len()];
    let mut used = S::zero();
    for i in 0..phi.len() {
        if reference[i] > S::zero() {
            value += reference[i] * u.eval(phi[i] + beta_lo);
            gradient[i] = reference[i] * u.derivative(phi[i] + beta_lo);
            used += gradient[i];
        }
    }
    gradient[bind] = (S::one() - used).max(S::zero());
    Ok(Evaluated { value, gradient })
}
