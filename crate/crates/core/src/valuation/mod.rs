//! Utilities and their conjugates, divergences with singular parts,
//! certainty equivalents (plain, stock-additive and indirect).

mod goce;
mod oce;
mod utility;

pub use goce::{goce_indirect, GoceReport};
pub use oce::{additive_value, divergence, oce_value, stock_additive_value, OceValue};
#[allow(unused_imports)]
pub(crate) use oce::divergence_weights;
pub use utility::{CustomUtility, UtilityFunction, UtilityKind, UTILITY_NAMES};
