use serde::{Deserialize, Serialize};

use crate::error::{EmotError, Result};
use crate::scalar::Scalar;

/// Indicator slack used when evaluating threshold losses on computed
/// (floating point) arguments.
pub const INDICATOR_TOL: f64 = 1e-10;

/// Convex nondecreasing loss `G` with `G(0) = 0` (and `G = 0` on `x <= 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFunction<S> {
    /// `G = 0`: the option carries no information.
    Zero,
    /// `G(x) = x^p / p` on `x >= 0`, `p > 1`.
    Power { p: S },
    /// `G(x) = 0` on `x <= eps`, `+inf` above.
    Threshold { eps: S },
    /// Threshold with `eps = 0`.
    Hard,
}

impl<S: Scalar> LossFunction<S> {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossFunction::Power { p } if !(*p > S::one()) || !p.is_finite() => {
                Err(EmotError::InvalidParameter("power loss needs finite p > 1".into()))
            }
            LossFunction::Threshold { eps } if !(*eps >= S::zero()) || !eps.is_finite() => {
                Err(EmotError::InvalidParameter("threshold must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossFunction::Zero => "zero",
            LossFunction::Power { .. } => "power",
            LossFunction::Threshold { .. } => "threshold",
            LossFunction::Hard => "hard",
        }
    }

    /// Radius of the indicator losses (`None` for `Zero` and `Power`).
    pub fn radius(&self) -> Option<S> {
        match self {
            LossFunction::Threshold { eps } => Some(*eps),
            LossFunction::Hard => Some(S::zero()),
            _ => None,
        }
    }

    pub fn eval(&self, x: S) -> S {
        if x <= S::zero() {
            return S::zero();
        }
        match self {
            LossFunction::Zero => S::zero(),
            LossFunction::Power { p } => x.powf(*p) / *p,
            LossFunction::Threshold { .. } | LossFunction::Hard => {
                let r = self.radius().unwrap_or_else(S::zero);
                if x <= r + S::c(INDICATOR_TOL) * (S::one() + r) {
                    S::zero()
                } else {
                    S::infinity()
                }
            }
        }
    }

    /// `G'(x)` for the power loss (`0` elsewhere on the finite domain).
    pub fn derivative(&self, x: S) -> S {
        match self {
            LossFunction::Power { p } if x > S::zero() => x.powf(*p - S::one()),
            _ => S::zero(),
        }
    }

    /// `G*(y) = sup_x x y - G(x)`.
    pub fn conjugate(&self, y: S) -> S {
        if y < S::zero() {
            return S::infinity();
        }
        match self {
            LossFunction::Zero => {
                if y == S::zero() {
                    S::zero()
                } else {
                    S::infinity()
                }
            }
            LossFunction::Power { p } => {
                let q = *p / (*p - S::one());
                y.powf(q) / q
            }
            LossFunction::Threshold { eps } => *eps * y,
            LossFunction::Hard => S::zero(),
        }
    }

    /// `(G*)'(y)` on `y >= 0`.
    pub fn conjugate_derivative(&self, y: S) -> S {
        match self {
            LossFunction::Power { p } => y.max(S::zero()).powf(S::one() / (*p - S::one())),
            LossFunction::Threshold { eps } => *eps,
            _ => S::zero(),
        }
    }
}

/// Free-function form of [`LossFunction::conjugate`].
pub fn loss_conjugate<S: Scalar>(g: &LossFunction<S>, y: S) -> S {
    g.conjugate(y)
}
