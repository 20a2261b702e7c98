use serde::Serialize;

use super::loss::LossFunction;
use crate::error::{EmotError, Result};
use crate::lattice::{marginals, MarginalMeasure, MarketGrid, PathMeasure};
use crate::lp::{LinearProgram, Relation};
use crate::polytope::{add_martingale_copy, marginal_coeffs};
use crate::scalar::Scalar;
use crate::valuation::{divergence, UtilityFunction};
use crate::wasserstein::{w1, GroundMetric};

/// Catalog names of the penalty families.
pub const PENALTY_NAMES: [&str; 4] = ["fixed_marginals", "divergence", "market_price", "wasserstein_ball"];

/// Tolerance for matching fixed marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct DivergenceTerm<S> {
    pub utility: UtilityFunction<S>,
    pub reference: MarginalMeasure<S>,
}

/// An option with payoff `f(x_t)` observed at price `price`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketOption<S> {
    pub payoff: Vec<S>,
    pub price: S,
    pub loss: LossFunction<S>,
}

#[derive(Debug, Clone)]
pub struct WassersteinTerm<S> {
    pub reference: MarginalMeasure<S>,
    pub loss: LossFunction<S>,
    pub metric: GroundMetric<S>,
}

/// Penalty on the marginals of the candidate measure; every family is
/// indexed by `t` in `0..=T` (`None` / empty = no penalty at that date).
#[derive(Debug, Clone)]
pub enum PenaltySpec<S> {
    FixedMarginals(Vec<Option<MarginalMeasure<S>>>),
    DivergenceSum(Vec<Option<DivergenceTerm<S>>>),
    MarketPrice(Vec<Vec<MarketOption<S>>>),
    WassersteinBall(Vec<Option<WassersteinTerm<S>>>),
}

fn place<S, T: Clone>(grid: &MarketGrid<S>, items: Vec<(usize, T)>) -> Result<Vec<Option<T>>>
where
    S: Scalar,
{
    let mut out = vec![None; grid.horizon() + 1];
    for (t, item) in items {
        grid.check_time(t)?;
        if out[t].is_some() {
            return Err(EmotError::InvalidParameter(format!("two penalty terms at t={t}")));
        }
        out[t] = Some(item);
    }
    Ok(out)
}

impl<S: Scalar> PenaltySpec<S> {
    /// No penalty at any date.
    pub fn none(grid: &MarketGrid<S>) -> Self {
        Self::FixedMarginals(vec![None; grid.horizon() + 1])
    }

    /// Pins each supplied marginal (placed at its own `time`).
    pub fn fixed_marginals(grid: &MarketGrid<S>, targets: Vec<MarginalMeasure<S>>) -> Result<Self> {
        let spec = Self::FixedMarginals(place(grid, targets.into_iter().map(|m| (m.time, m)).collect())?);
        spec.validate(grid)?;
        Ok(spec)
    }

    /// Same utility on every supplied reference.
    pub fn divergence(grid: &MarketGrid<S>, utility: UtilityFunction<S>, references: Vec<MarginalMeasure<S>>) -> Result<Self> {
        let terms = references
            .into_iter()
            .map(|r| {
                (
                    r.time,
                    DivergenceTerm {
                        utility: utility.clone(),
                        reference: r,
                    },
                )
            })
            .collect();
        let spec = Self::DivergenceSum(place(grid, terms)?);
        spec.validate(grid)?;
        Ok(spec)
    }

    /// Options as `(t, option)` pairs.
    pub fn market_price(grid: &MarketGrid<S>, options: Vec<(usize, MarketOption<S>)>) -> Result<Self> {
        let mut per_t = vec![Vec::new(); grid.horizon() + 1];
        for (t, o) in options {
            grid.check_time(t)?;
            per_t[t].push(o);
        }
        let spec = Self::MarketPrice(per_t);
        spec.validate(grid)?;
        Ok(spec)
    }

    pub fn wasserstein_ball(grid: &MarketGrid<S>, terms: Vec<WassersteinTerm<S>>) -> Result<Self> {
        let spec = Self::WassersteinBall(place(grid, terms.into_iter().map(|w| (w.reference.time, w)).collect())?);
        spec.validate(grid)?;
        Ok(spec)
    }

    pub fn family(&self) -> &'static str {
        match self {
            PenaltySpec::FixedMarginals(_) => "fixed_marginals",
            PenaltySpec::DivergenceSum(_) => "divergence",
            PenaltySpec::MarketPrice(_) => "market_price",
            PenaltySpec::WassersteinBall(_) => "wasserstein_ball",
        }
    }

    /// Whether any date carries a penalty term.
    pub fn is_active(&self, t: usize) -> bool {
        match self {
            PenaltySpec::FixedMarginals(v) => v.get(t).is_some_and(|x| x.is_some()),
            PenaltySpec::DivergenceSum(v) => v.get(t).is_some_and(|x| x.is_some()),
            PenaltySpec::MarketPrice(v) => v.get(t).is_some_and(|x| !x.is_empty()),
            PenaltySpec::WassersteinBall(v) => v.get(t).is_some_and(|x| x.is_some()),
        }
    }

    fn len(&self) -> usize {
        match self {
            PenaltySpec::FixedMarginals(v) => v.len(),
            PenaltySpec::DivergenceSum(v) => v.len(),
            PenaltySpec::MarketPrice(v) => v.len(),
            PenaltySpec::WassersteinBall(v) => v.len(),
        }
    }

    /// Whether the time-`t` penalty is restricted to marginals of
    /// martingale measures on the grid.
    pub fn restricts_to_martingale_marginals(&self, t: usize) -> bool {
        match self {
            PenaltySpec::MarketPrice(v) => !v[t].is_empty(),
            PenaltySpec::WassersteinBall(v) => v[t].is_some(),
            _ => false,
        }
    }

    pub fn validate(&self, grid: &MarketGrid<S>) -> Result<()> {
        if self.len() != grid.horizon() + 1 {
            return Err(EmotError::DimensionMismatch(format!(
                "penalty needs {} per-date entries, got {}",
                grid.horizon() + 1,
                self.len()
            )));
        }
        let check_ref = |t: usize, m: &MarginalMeasure<S>, what: &str| -> Result<()> {
            let expect = MarginalMeasure::uniform(grid, t)?;
            if m.time != t || !m.same_support(&expect) {
                return Err(EmotError::DimensionMismatch(format!("{what} at t={t} is not on the grid's node set")));
            }
            if !m.is_probability() {
                return Err(EmotError::InvalidMeasure(format!("{what} at t={t} must be a probability")));
            }
            Ok(())
        };
        match self {
            PenaltySpec::FixedMarginals(v) => {
                for (t, m) in v.iter().enumerate() {
                    if let Some(m) = m {
                        check_ref(t, m, "target marginal")?;
                    }
                }
            }
            PenaltySpec::DivergenceSum(v) => {
                for (t, d) in v.iter().enumerate() {
                    if let Some(d) = d {
                        check_ref(t, &d.reference, "divergence reference")?;
                    }
                }
            }
            PenaltySpec::MarketPrice(v) => {
                for (t, opts) in v.iter().enumerate() {
                    for o in opts {
                        o.loss.validate()?;
                        if o.payoff.len() != grid.block_size(t) || o.payoff.iter().any(|f| !f.is_finite()) {
                            return Err(EmotError::DimensionMismatch(format!(
                                "option payoff at t={t} must have {} finite entries",
                                grid.block_size(t)
                            )));
                        }
                        if !o.price.is_finite() {
                            return Err(EmotError::InvalidParameter("option price must be finite".into()));
                        }
                    }
                }
            }
            PenaltySpec::WassersteinBall(v) => {
                for (t, w) in v.iter().enumerate() {
                    if let Some(w) = w {
                        check_ref(t, &w.reference, "Wasserstein reference")?;
                        w.loss.validate()?;
                        w.metric.table(&w.reference.support)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Whether some martingale measure on the grid has time-`t` marginal `m`.
pub fn is_martingale_marginal<S: Scalar>(grid: &MarketGrid<S>, m: &MarginalMeasure<S>) -> Result<bool> {
    let t = m.time;
    grid.check_time(t)?;
    let mut lp = LinearProgram::new();
    let vars = add_martingale_copy(&mut lp, grid);
    for (b, w) in m.weights.iter().enumerate() {
        lp.add_row(&marginal_coeffs(grid, &vars, t, b), Relation::Eq, *w);
    }
    Ok(lp.minimize().optimal().is_ok())
}

/// `D(Q)` for the given family.
pub fn penalty_value<S: Scalar>(grid: &MarketGrid<S>, spec: &PenaltySpec<S>, q: &PathMeasure<S>) -> Result<S> {
    spec.validate(grid)?;
    q.check_len(grid)?;
    if !q.is_probability() {
        return Err(EmotError::Precondition("penalty needs a probability measure".into()));
    }
    let ms = marginals(grid, q)?;
    let mut total = S::zero();
    for (t, m) in ms.iter().enumerate() {
        let term = match spec {
            PenaltySpec::FixedMarginals(v) => match &v[t] {
                Some(target) => {
                    let off = m
                        .weights
                        .iter()
                        .zip(&target.weights)
                        .any(|(a, b)| (*a - *b).abs() > S::c(MARGINAL_TOL));
                    if off {
                        S::infinity()
                    } else {
                        S::zero()
                    }
                }
                None => S::zero(),
            },
            PenaltySpec::DivergenceSum(v) => match &v[t] {
                Some(d) => divergence(m, &d.reference, &d.utility)?,
                None => S::zero(),
            },
            PenaltySpec::MarketPrice(v) => v[t]
                .iter()
                .map(|o| o.loss.eval((m.integrate(&o.payoff) - o.price).abs()))
                .sum(),
            PenaltySpec::WassersteinBall(v) => match &v[t] {
                Some(w) => w.loss.eval(w1(m, &w.reference, &w.metric)?),
                None => S::zero(),
            },
        };
        total += term;
        if total == S::infinity() {
            return Ok(total);
        }
    }
    for (t, m) in ms.iter().enumerate() {
        if spec.restricts_to_martingale_marginals(t) && !is_martingale_marginal(grid, m)? {
            return Ok(S::infinity());
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> MarketGrid<f64> {
        MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
    }

    #[test]
    fn divergence_center_is_zero() {
        let g = g1();
        let spec = PenaltySpec::divergence(
            &g,
            UtilityFunction::exponential(),
            vec![MarginalMeasure::uniform(&g, 1).unwrap()],
        )
        .unwrap();
        let q = PathMeasure::uniform(&g);
        assert!(penalty_value(&g, &spec, &q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn fixed_marginals_indicator() {
        let g = g1();
        let spec = PenaltySpec::fixed_marginals(&g, vec![MarginalMeasure::uniform(&g, 1).unwrap()]).unwrap();
        assert_eq!(penalty_value(&g, &spec, &PathMeasure::uniform(&g)).unwrap(), 0.0);
        let q = PathMeasure::probability(vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(penalty_value(&g, &spec, &q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn market_price_threshold() {
        let g = g1();
        let opt = MarketOption {
            payoff: vec![0.0, 0.0, 1.0],
            price: 1.0 / 3.0,
            loss: LossFunction::Threshold { eps: 0.05 },
        };
        let spec = PenaltySpec::market_price(&g, vec![(1, opt)]).unwrap();
        assert_eq!(penalty_value(&g, &spec, &PathMeasure::uniform(&g)).unwrap(), 0.0);
        let q = PathMeasure::probability(vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(penalty_value(&g, &spec, &q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn martingale_marginal_membership() {
        let g = g1();
        let ok = MarginalMeasure::new(&g, 1, vec![0.5, 0.0, 0.5]).unwrap();
        assert!(is_martingale_marginal(&g, &ok).unwrap());
        let bad = MarginalMeasure::new(&g, 1, vec![0.6, 0.0, 0.4]).unwrap();
        assert!(!is_martingale_marginal(&g, &bad).unwrap());
    }

    #[test]
    fn wasserstein_penalty() {
        let g = g1();
        let r = MarginalMeasure::uniform(&g, 1).unwrap();
        let spec = PenaltySpec::wasserstein_ball(
            &g,
            vec![WassersteinTerm {
                reference: r,
                loss: LossFunction::Power { p: 2.0 },
                metric: GroundMetric::Euclidean,
            }],
        )
        .unwrap();
        // (1/2, 0, 1/2) vs uniform: W = 1/6 + 1/6 = 1/3
        let q = PathMeasure::probability(vec![0.5, 0.0, 0.5]).unwrap();
        let v = penalty_value(&g, &spec, &q).unwrap();
        assert!((v - (1.0f64 / 3.0).powi(2) / 2.0).abs() < 1e-14);
    }
}
