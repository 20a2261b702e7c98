use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EmotError, Result};
use crate::optimize::{bracket_concave_max, golden_max, Bracket};
use crate::scalar::Scalar;

/// Catalog names accepted by [`UtilityFunction::from_name`].
pub const UTILITY_NAMES: [&str; 6] = [
    "linear",
    "exponential",
    "piecewise_linear",
    "log",
    "hyperbolic",
    "truncated_exponential",
];

/// User supplied utility: evaluator plus the lower edge of its domain.
#[derive(Clone)]
pub struct CustomUtility<S> {
    pub name: String,
    eval: Arc<dyn Fn(S) -> S + Send + Sync>,
    /// `M`: `u = -inf` below it. `-inf` for full-domain utilities.
    pub edge: S,
}

impl<S> fmt::Debug for CustomUtility<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUtility").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum UtilityKind<S> {
    /// `u(x) = x`
    Linear,
    /// `u(x) = 1 - e^{-x}`
    Exponential,
    /// `u(x) = alpha * min(x, 0)`, `alpha >= 1`
    PiecewiseLinear { alpha: S },
    /// `u(x) = ln(1 + x)` on `x > -1`
    Log,
    /// `u(x) = x / (x + 1)` on `x > -1`
    Hyperbolic,
    /// `u(x) = 1 - e^{-x}` on `x >= 0`, `-inf` below
    TruncatedExponential,
    Custom(CustomUtility<S>),
}

/// A utility `u_n(x) = n u(x / n)` with `u` from the catalog (or custom)
/// and scale `n > 0`; scaling multiplies the conjugate by `n`.
#[derive(Debug, Clone)]
pub struct UtilityFunction<S> {
    pub kind: UtilityKind<S>,
    pub scale: S,
}

impl<S: Scalar> UtilityFunction<S> {
    fn base(kind: UtilityKind<S>) -> Self {
        Self { kind, scale: S::one() }
    }

    pub fn linear() -> Self {
        Self::base(UtilityKind::Linear)
    }

    pub fn exponential() -> Self {
        Self::base(UtilityKind::Exponential)
    }

    pub fn piecewise_linear(alpha: S) -> Result<Self> {
        if !(alpha >= S::one()) || !alpha.is_finite() {
            return Err(EmotError::InvalidParameter("piecewise linear slope must be finite and >= 1".into()));
        }
        Ok(Self::base(UtilityKind::PiecewiseLinear { alpha }))
    }

    pub fn log() -> Self {
        Self::base(UtilityKind::Log)
    }

    pub fn hyperbolic() -> Self {
        Self::base(UtilityKind::Hyperbolic)
    }

    pub fn truncated_exponential() -> Self {
        Self::base(UtilityKind::TruncatedExponential)
    }

    /// Custom utility, validated by sampling: `u(0) = 0`, nondecreasing,
    /// midpoint concave and `u(x) <= x`.
    pub fn custom<F>(name: &str, edge: S, f: F) -> Result<Self>
    where
        F: Fn(S) -> S + Send + Sync + 'static,
    {
        if edge > S::zero() {
            return Err(EmotError::InvalidParameter("domain edge must be <= 0".into()));
        }
        let u = Self::base(UtilityKind::Custom(CustomUtility {
            name: name.to_string(),
            eval: Arc::new(f),
            edge,
        }));
        u.check_shape(1000, 0)?;
        Ok(u)
    }

    /// Catalog lookup; `param` is the slope for `piecewise_linear`.
    pub fn from_name(name: &str, param: Option<S>) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear()),
            "exponential" => Ok(Self::exponential()),
            "piecewise_linear" => Self::piecewise_linear(param.unwrap_or_else(|| S::c(2.0))),
            "log" => Ok(Self::log()),
            "hyperbolic" => Ok(Self::hyperbolic()),
            "truncated_exponential" => Ok(Self::truncated_exponential()),
            other => Err(EmotError::InvalidParameter(format!("unknown utility '{other}'"))),
        }
    }

    /// `n u(x / n)`; composes with an existing scale.
    pub fn scaled(&self, n: S) -> Result<Self> {
        if !(n > S::zero()) || !n.is_finite() {
            return Err(EmotError::InvalidParameter("utility scale must be positive".into()));
        }
        Ok(Self {
            kind: self.kind.clone(),
            scale: self.scale * n,
        })
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            UtilityKind::Linear => "linear",
            UtilityKind::Exponential => "exponential",
            UtilityKind::PiecewiseLinear { .. } => "piecewise_linear",
            UtilityKind::Log => "log",
            UtilityKind::Hyperbolic => "hyperbolic",
            UtilityKind::TruncatedExponential => "truncated_exponential",
            UtilityKind::Custom(c) => &c.name,
        }
    }

    /// Lower edge `M` of the domain (`-inf` when `dom u = R`).
    pub fn edge(&self) -> S {
        let base = match &self.kind {
            UtilityKind::Log | UtilityKind::Hyperbolic => -S::one(),
            UtilityKind::TruncatedExponential => S::zero(),
            UtilityKind::Custom(c) => c.edge,
            _ => S::neg_infinity(),
        };
        if base == S::neg_infinity() {
            base
        } else {
            base * self.scale
        }
    }

    pub fn has_full_domain(&self) -> bool {
        self.edge() == S::neg_infinity()
    }

    /// `(v*)'_inf = lim v*(y) / y = -M`.
    pub fn singular_slope(&self) -> S {
        -self.edge()
    }

    /// Whether the divergence is a polyhedral indicator (linear programs
    /// handle it exactly) rather than a smooth convex function.
    pub fn is_polyhedral(&self) -> bool {
        matches!(self.kind, UtilityKind::Linear | UtilityKind::PiecewiseLinear { .. })
    }

    pub fn eval(&self, x: S) -> S {
        self.scale * self.eval_base(x / self.scale)
    }

    fn eval_base(&self, x: S) -> S {
        let one = S::one();
        match &self.kind {
            UtilityKind::Linear => x,
            UtilityKind::Exponential => one - (-x).exp(),
            UtilityKind::PiecewiseLinear { alpha } => *alpha * x.min(S::zero()),
            UtilityKind::Log => {
                if x > -one {
                    x.ln_1p()
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::Hyperbolic => {
                if x > -one {
                    x / (x + one)
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::TruncatedExponential => {
                if x >= S::zero() {
                    one - (-x).exp()
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::Custom(c) => {
                if x < c.edge {
                    S::neg_infinity()
                } else {
                    (c.eval)(x)
                }
            }
        }
    }

    /// A supergradient `u'(x)`; `+inf` at or below a finite domain edge.
    /// At the kink of the piecewise linear utility the right derivative
    /// (0) is returned.
    pub fn derivative(&self, x: S) -> S {
        let z = x / self.scale;
        let one = S::one();
        match &self.kind {
            UtilityKind::Linear => one,
            UtilityKind::Exponential => (-z).exp(),
            UtilityKind::PiecewiseLinear { alpha } => {
                if z < S::zero() {
                    *alpha
                } else {
                    S::zero()
                }
            }
            UtilityKind::Log => {
                if z > -one {
                    one / (one + z)
                } else {
                    S::infinity()
                }
            }
            UtilityKind::Hyperbolic => {
                if z > -one {
                    one / ((z + one) * (z + one))
                } else {
                    S::infinity()
                }
            }
            UtilityKind::TruncatedExponential => {
                if z >= S::zero() {
                    (-z).exp()
                } else {
                    S::infinity()
                }
            }
            UtilityKind::Custom(c) => {
                if z <= c.edge {
                    return S::infinity();
                }
                let h = S::c(1e-6) * (one + z.abs());
                let lo = (z - h).max(c.edge);
                ((c.eval)(z + h) - (c.eval)(lo)) / (z + h - lo)
            }
        }
    }

    /// Convex conjugate `v*(y) = sup_x u(x) - x y`.
    pub fn conjugate(&self, y: S) -> S {
        let v = self.conjugate_base(y);
        if v == S::infinity() {
            v
        } else {
            self.scale * v
        }
    }

    fn conjugate_base(&self, y: S) -> S {
        let zero = S::zero();
        let one = S::one();
        let inf = S::infinity();
        if y.is_nan() {
            return y;
        }
        match &self.kind {
            UtilityKind::Linear => {
                if (y - one).abs() <= S::c(1e-9) {
                    zero
                } else {
                    inf
                }
            }
            UtilityKind::Exponential => {
                if y < zero {
                    inf
                } else if y == zero {
                    one
                } else {
                    y * y.ln() - y + one
                }
            }
            UtilityKind::PiecewiseLinear { alpha } => {
                let slack = S::c(1e-12);
                if y >= -slack && y <= *alpha + slack {
                    zero
                } else {
                    inf
                }
            }
            UtilityKind::Log => {
                if y > zero {
                    y - y.ln() - one
                } else {
                    inf
                }
            }
            UtilityKind::Hyperbolic => {
                if y >= zero {
                    y - S::c(2.0) * y.sqrt() + one
                } else {
                    inf
                }
            }
            UtilityKind::TruncatedExponential => {
                if y < zero {
                    inf
                } else if y == zero {
                    one
                } else if y <= one {
                    y * y.ln() - y + one
                } else {
                    zero
                }
            }
            UtilityKind::Custom(c) => custom_conjugate(c, y).0,
        }
    }

    /// Derivative of the conjugate `(v*)'(y)` on the interior of its
    /// domain; `-inf` at a singular left edge.
    pub fn conjugate_derivative(&self, y: S) -> S {
        let zero = S::zero();
        let one = S::one();
        let d = match &self.kind {
            UtilityKind::Linear | UtilityKind::PiecewiseLinear { .. } => zero,
            UtilityKind::Exponential => {
                if y > zero {
                    y.ln()
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::Log => {
                if y > zero {
                    one - one / y
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::Hyperbolic => {
                if y > zero {
                    one - one / y.sqrt()
                } else {
                    S::neg_infinity()
                }
            }
            UtilityKind::TruncatedExponential => {
                if y <= zero {
                    S::neg_infinity()
                } else if y < one {
                    y.ln()
                } else {
                    zero
                }
            }
            UtilityKind::Custom(c) => -custom_conjugate(c, y).1,
        };
        if d.is_infinite() {
            d
        } else {
            self.scale * d
        }
    }

    /// Whether `(v*)'` diverges at `0` (the divergence gradient is
    /// singular at zero mass).
    pub fn singular_at_zero(&self) -> bool {
        !self.is_polyhedral() && self.conjugate_derivative(S::zero()) == S::neg_infinity()
    }

    /// Sampled shape checks; returns the first violation.
    pub fn check_shape(&self, samples: usize, seed: u64) -> Result<()> {
        let tol = S::c(1e-9);
        if self.eval(S::zero()).abs() > tol {
            return Err(EmotError::InvalidParameter(format!("{}: u(0) != 0", self.name())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = if self.has_full_domain() { -10.0 } else { self.edge().to_f64_lossy() + 1e-6 };
        for _ in 0..samples {
            let a = S::c(rng.gen_range(lo..10.0));
            let b = S::c(rng.gen_range(lo..10.0));
            let (ua, ub) = (self.eval(a), self.eval(b));
            let mid = self.eval((a + b) * S::c(0.5));
            if mid < (ua + ub) * S::c(0.5) - tol * (S::one() + ua.abs() + ub.abs()) {
                return Err(EmotError::InvalidParameter(format!("{}: not concave near {a}, {b}", self.name())));
            }
            let (lo_x, hi_x, ulo, uhi) = if a <= b { (a, b, ua, ub) } else { (b, a, ub, ua) };
            if uhi < ulo - tol * (S::one() + ulo.abs()) {
                return Err(EmotError::InvalidParameter(format!(
                    "{}: decreasing between {lo_x} and {hi_x}",
                    self.name()
                )));
            }
            if ua > a + tol * (S::one() + a.abs()) {
                return Err(EmotError::InvalidParameter(format!("{}: u(x) > x at {a}", self.name())));
            }
        }
        Ok(())
    }
}

/// `(v*(y), argmax x)` for a custom utility by bracketed golden section.
fn custom_conjugate<S: Scalar>(c: &CustomUtility<S>, y: S) -> (S, S) {
    let zero = S::zero();
    if y < zero {
        return (S::infinity(), S::infinity());
    }
    let obj = |x: S| {
        if x < c.edge {
            S::neg_infinity()
        } else {
            (c.eval)(x) - x * y
        }
    };
    let cap = S::c(1048576.0);
    if y == zero {
        // u nondecreasing: sup is the limit at +inf, approximated far out
        return (obj(cap), cap);
    }
    let center = if c.edge.is_finite() { c.edge + S::one() } else { zero };
    match bracket_concave_max(obj, center, S::one(), cap) {
        Bracket::Found(lo, hi) => {
            let lo = if c.edge.is_finite() { lo.max(c.edge) } else { lo };
            let (x, v) = golden_max(obj, lo, hi, S::c(1e-11) * (S::one() + hi.abs()), 400);
            (v, x)
        }
        Bracket::Unbounded => (S::infinity(), S::infinity()),
    }
}
