//! Penalty families on marginals, loss functions, the dual (sup-side)
//! market and Wasserstein valuations, and monotone penalty sequences.

mod dual;
mod loss;
mod sequence;
mod spec;

pub use dual::{dual_market_valuation, dual_wasserstein_valuation, pi_sub, DualValue};
pub use loss::{loss_conjugate, LossFunction, INDICATOR_TOL};
pub use sequence::{monotone_sequence, PenaltySequence};
pub use spec::{
    is_martingale_marginal, penalty_value, DivergenceTerm, MarketOption, PenaltySpec, WassersteinTerm, MARGINAL_TOL,
    PENALTY_NAMES,
};
