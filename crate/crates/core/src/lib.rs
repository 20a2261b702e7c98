//! Entropic martingale optimal transport on finite path lattices.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod convergence;
pub mod error;
pub mod hedging;
pub mod lattice;
pub mod lp;
pub mod optimize;
pub mod oracle;
pub mod penalties;
mod polytope;
mod superlp;
pub mod solver;
pub mod valuation;
pub mod wasserstein;
pub mod scalar;

pub use error::{EmotError, Result};
pub use lattice::*;
pub use scalar::Scalar;

pub type Grid = MarketGrid<f64>;
pub type Measure = PathMeasure<f64>;
pub type Payoff = PathFunction<f64>;
pub type Marginal = MarginalMeasure<f64>;
pub type Cone = ConeSpec<f64>;
pub type Utility = valuation::UtilityFunction<f64>;
