//! Finite path lattice: grids, path functions and measures, semistatic
//! strategies, stochastic integrals and the hedging cones with their polar
//! membership tests.

mod cone;
mod grid;
mod measure;
mod strategy;

pub use cone::{
    cone_membership, control_cone_bound_holds, growth_bound_check, martingale_residuals, ConeSpec,
    MartingaleResiduals, Membership, ResidualWitness, RESIDUAL_TOL,
};
pub use grid::{MarketGrid, Path, DEFAULT_PATH_LIMIT};
pub use measure::{expectation, marginal, marginals, MarginalMeasure, PathFunction, PathMeasure, MASS_TOL};
pub use strategy::{static_sum, stochastic_integral, zero_dynamic, SemistaticStrategy};
#[allow(unused_imports)]
pub(crate) use strategy::{check_dynamic, check_statics};
