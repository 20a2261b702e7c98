use serde::Serialize;

use super::utility::{UtilityFunction, UtilityKind};
use crate::error::{EmotError, Result};
use crate::lattice::MarginalMeasure;
use crate::optimize::{bisect_decreasing, bracket_concave_max, golden_max, Bracket};
use crate::scalar::{weighted, Scalar};

/// Value of an optimized certainty equivalent with its maximizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OceValue<S> {
    pub value: S,
    /// Stock position for stock-additive valuations.
    pub alpha: Option<S>,
    /// Cash shift `beta` (or `lambda`).
    pub shift: Option<S>,
    /// Supergradient in the payoff: a probability vector on the nodes.
    pub gradient: Vec<S>,
}

/// `F(mu | ref) = sum_{ref>0} ref v*(mu/ref) + (v*)'_inf mu({ref = 0})`
/// with `inf * 0 = 0`.
pub fn divergence<S: Scalar>(mu: &MarginalMeasure<S>, reference: &MarginalMeasure<S>, u: &UtilityFunction<S>) -> Result<S> {
    mu.check_same_support(reference)?;
    Ok(divergence_weights(&mu.weights, &reference.weights, u))
}

pub(crate) fn divergence_weights<S: Scalar>(mu: &[S], reference: &[S], u: &UtilityFunction<S>) -> S {
    let slope = u.singular_slope();
    let mut acc = S::zero();
    for (&m, &r) in mu.iter().zip(reference) {
        let term = if r > S::zero() {
            r * u.conjugate(m / r)
        } else {
            weighted(m, slope)
        };
        acc += term;
        if acc == S::infinity() {
            return acc;
        }
    }
    acc
}

/// `S(f) = sup_beta E_ref[u(f + beta)] - beta`.
pub fn oce_value<S: Scalar>(f: &[S], reference: &[S], u: &UtilityFunction<S>) -> Result<OceValue<S>> {
    if f.len() != reference.len() {
        return Err(EmotError::DimensionMismatch("payoff and reference differ in length".into()));
    }
    let support: Vec<usize> = (0..f.len()).filter(|&i| reference[i] > S::zero()).collect();
    if support.is_empty() {
        return Err(EmotError::InvalidMeasure("reference has no mass".into()));
    }
    if support.iter().any(|&i| f[i].is_nan()) {
        return Err(EmotError::InvalidParameter("payoff has NaN entries".into()));
    }
    if support.iter().any(|&i| f[i] == S::neg_infinity()) {
        return Ok(OceValue {
            value: S::neg_infinity(),
            alpha: None,
            shift: None,
            gradient: vec![S::zero(); f.len()],
        });
    }
    let fmin = support.iter().map(|&i| f[i]).fold(S::infinity(), S::min);
    let n = u.scale;
    let objective = |beta: S| -> S {
        let mut acc = -beta;
        for &i in &support {
            acc += reference[i] * u.eval(f[i] + beta);
        }
        acc
    };
    let grad_at = |beta: S| -> Vec<S> {
        (0..f.len())
            .map(|i| {
                if reference[i] > S::zero() {
                    reference[i] * u.derivative(f[i] + beta)
                } else {
                    S::zero()
                }
            })
            .collect()
    };
    // exponential-type closed forms use a shifted log-sum-exp
    let log_mean_exp = || -> S {
        let a = support.iter().map(|&i| -f[i] / n).fold(S::neg_infinity(), S::max);
        let s: S = support.iter().map(|&i| reference[i] * (-f[i] / n - a).exp()).sum();
        n * (a + s.ln())
    };
    let (value, beta, gradient) = match &u.kind {
        UtilityKind::Linear => {
            let v = support.iter().map(|&i| reference[i] * f[i]).sum();
            (v, S::zero(), reference.to_vec())
        }
        UtilityKind::Exponential => {
            let beta = log_mean_exp();
            (-beta, beta, grad_at(beta))
        }
        UtilityKind::TruncatedExponential => {
            let beta = log_mean_exp().max(-fmin);
            (objective(beta), beta, grad_at(beta))
        }
        UtilityKind::PiecewiseLinear { alpha } => {
            let mut best = (S::neg_infinity(), S::zero());
            for &i in &support {
                let b = -f[i];
                let v = objective(b);
                if v > best.0 {
                    best = (v, b);
                }
            }
            let beta = best.1;
            (best.0, beta, piecewise_gradient(f, reference, *alpha, beta))
        }
        UtilityKind::Log | UtilityKind::Hyperbolic => {
            let lo = u.edge() - fmin;
            let g = |b: S| -> S {
                let mut acc = -S::one();
                for &i in &support {
                    acc += reference[i] * u.derivative(f[i] + b);
                }
                acc
            };
            let mut width = S::one() + n;
            while g(lo + width) > S::zero() {
                width *= S::c(2.0);
            }
            let beta = bisect_decreasing(g, lo, lo + width, S::zero(), 2000);
            (objective(beta), beta, grad_at(beta))
        }
        UtilityKind::Custom(_) => {
            let mean: S = support.iter().map(|&i| reference[i] * f[i]).sum();
            let center = if u.has_full_domain() {
                -mean
            } else {
                u.edge() - fmin + S::one()
            };
            let span = S::one() + support.iter().map(|&i| f[i].abs()).fold(S::zero(), S::max);
            let (lo, hi) = match bracket_concave_max(objective, center, span, S::c(1e12)) {
                Bracket::Found(lo, hi) => (lo, hi),
                Bracket::Unbounded => {
                    return Err(EmotError::CertificateFailure("certainty equivalent unbounded".into()))
                }
            };
            let lo = if u.has_full_domain() { lo } else { lo.max(u.edge() - fmin) };
            let (beta, v) = golden_max(objective, lo, hi, S::c(1e-12) * (S::one() + hi.abs()), 600);
            (v, beta, grad_at(beta))
        }
    };
    Ok(OceValue {
        value,
        alpha: None,
        shift: Some(beta),
        gradient,
    })
}

/// Supergradient of the piecewise linear OCE at the breakpoint `beta`:
/// nodes below the kink get `alpha ref`, the kink absorbs the remainder.
fn piecewise_gradient<S: Scalar>(f: &[S], reference: &[S], alpha: S, beta: S) -> Vec<S> {
    let tol = S::c(1e-12) * (S::one() + beta.abs());
    let mut g = vec![S::zero(); f.len()];
    let mut below = S::zero();
    let mut kink = S::zero();
    for i in 0..f.len() {
        if reference[i] <= S::zero() {
            continue;
        }
        let z = f[i] + beta;
        if z < -tol {
            g[i] = alpha * reference[i];
            below += g[i];
        } else if z <= tol {
            kink += reference[i];
        }
    }
    let rest = (S::one() - below).max(S::zero());
    if kink > S::zero() {
        for i in 0..f.len() {
            if reference[i] > S::zero() && (f[i] + beta).abs() <= tol {
                g[i] = rest * reference[i] / kink;
            }
        }
    }
    g
}

/// `U(phi) = sup_{alpha, lambda} E_ref[u(phi + alpha x + lambda)] - alpha x0 - lambda`
/// on a single-asset node set.
pub fn stock_additive_value<S: Scalar>(
    phi: &[S],
    reference: &MarginalMeasure<S>,
    u: &UtilityFunction<S>,
    x0: S,
) -> Result<OceValue<S>> {
    if !reference.is_one_dim() {
        return Err(EmotError::Unsupported("stock-additive valuation needs a single asset".into()));
    }
    if phi.len() != reference.len() {
        return Err(EmotError::DimensionMismatch("payoff and reference differ in length".into()));
    }
    let x = reference.points();
    let w = &reference.weights;
    let shifted = |alpha: S| -> Vec<S> { phi.iter().zip(&x).map(|(p, xi)| *p + alpha * (*xi - x0)).collect() };
    if matches!(u.kind, UtilityKind::Linear) {
        let mean = reference.mean(0);
        if (mean - x0).abs() > S::c(1e-12) * (S::one() + x0.abs()) {
            return Err(EmotError::CertificateFailure(
                "linear stock-additive value is unbounded: reference mean differs from spot".into(),
            ));
        }
        let mut out = oce_value(phi, w, u)?;
        out.alpha = Some(S::zero());
        return Ok(out);
    }
    let obj = |alpha: S| -> S {
        match oce_value(&shifted(alpha), w, u) {
            Ok(v) => v.value,
            Err(_) => S::neg_infinity(),
        }
    };
    let b = S::one() + x.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let (lo, hi) = match bracket_concave_max(obj, S::zero(), b, S::c(1048576.0)) {
        Bracket::Found(lo, hi) => (lo, hi),
        Bracket::Unbounded => {
            return Err(EmotError::CertificateFailure(
                "stock-additive value did not bracket; reference may not have mean equal to the spot".into(),
            ))
        }
    };
    let (alpha, _) = golden_max(obj, lo, hi, S::c(1e-11) * (S::one() + hi.abs()), 600);
    let mut out = oce_value(&shifted(alpha), w, u)?;
    out.alpha = Some(alpha);
    out.shift = out.shift.map(|beta| beta - alpha * x0);
    Ok(out)
}

/// `S^U(phi) = sum_t S_t(phi_t)` with `+inf - inf = -inf`.
pub fn additive_value<S: Scalar>(parts: &[S]) -> S {
    if parts.iter().any(|v| *v == S::neg_infinity()) {
        return S::neg_infinity();
    }
    parts.iter().copied().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn relative_entropy_example() {
        let r = MarginalMeasure::<f64>::on_line(1, &[0.0, 1.0, 2.0], vec![1.0 / 3.0; 3]).unwrap();
        let m = MarginalMeasure::<f64>::on_line(1, &[0.0, 1.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
        let d = divergence(&m, &r, &UtilityFunction::exponential()).unwrap();
        let expect = 0.5 * ln(1.5) + 0.5 * ln(0.75);
        assert!((d - expect).abs() < 1e-14);
        assert!(divergence(&r, &r, &UtilityFunction::exponential()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn singular_part_counts_slope() {
        let r = MarginalMeasure::<f64>::on_line(1, &[0.0, 1.0, 2.0], vec![0.5, 0.0, 0.5]).unwrap();
        let m = MarginalMeasure::<f64>::on_line(1, &[0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(divergence(&m, &r, &UtilityFunction::hyperbolic()).unwrap(), 2.0);
        assert_eq!(divergence(&m, &r, &UtilityFunction::exponential()).unwrap(), f64::INFINITY);
        assert_eq!(divergence(&m, &r, &UtilityFunction::truncated_exponential()).unwrap(), 1.0);
    }

    #[test]
    fn oce_closed_forms() {
        let r: [f64; 3] = [0.25, 0.5, 0.25];
        let f: [f64; 3] = [0.0, 1.0, 3.0];
        let lin = oce_value(&f, &r, &UtilityFunction::linear()).unwrap();
        assert!((lin.value - 1.25).abs() < 1e-15);
        let e = oce_value(&f, &r, &UtilityFunction::exponential()).unwrap();
        let expect = -(0.25 + 0.5 * (-1f64).exp() + 0.25 * (-3f64).exp()).ln();
        assert!((e.value - expect).abs() < 1e-14);
        let sum: f64 = e.gradient.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_oce_agrees_with_custom_search() {
        let r: [f64; 3] = [0.2, 0.3, 0.5];
        let f: [f64; 3] = [-0.5, 0.2, 1.4];
        for (u, c) in [
            (
                UtilityFunction::log(),
                UtilityFunction::custom("log-copy", -1.0, |x: f64| if x > -1.0 { x.ln_1p() } else { f64::NEG_INFINITY })
                    .unwrap(),
            ),
            (
                UtilityFunction::hyperbolic(),
                UtilityFunction::custom("hyp-copy", -1.0, |x: f64| if x > -1.0 { x / (x + 1.0) } else { f64::NEG_INFINITY })
                    .unwrap(),
            ),
        ] {
            let a = oce_value(&f, &r, &u).unwrap().value;
            let b = oce_value(&f, &r, &c).unwrap().value;
            assert!((a - b).abs() < 1e-9, "{} vs custom: {a} {b}", u.name());
        }
    }

    #[test]
    fn oce_is_cash_additive_and_zero_at_zero() {
        let r: [f64; 3] = [0.1, 0.6, 0.3];
        let f: [f64; 3] = [0.4, -0.2, 0.9];
        for u in [
            UtilityFunction::linear(),
            UtilityFunction::exponential(),
            UtilityFunction::piecewise_linear(3.0).unwrap(),
            UtilityFunction::log(),
            UtilityFunction::hyperbolic(),
            UtilityFunction::truncated_exponential(),
        ] {
            assert!(oce_value(&[0.0; 3], &r, &u).unwrap().value.abs() < 1e-12, "{}", u.name());
            let a = oce_value(&f, &r, &u).unwrap().value;
            let g: Vec<f64> = f.iter().map(|v| v + 0.7).collect();
            let b = oce_value(&g, &r, &u).unwrap().value;
            assert!((b - a - 0.7).abs() < 1e-10, "{}", u.name());
        }
    }

    #[test]
    fn stock_additive_linear_and_zero() {
        let r = MarginalMeasure::<f64>::on_line(1, &[0.0, 1.0, 2.0], vec![1.0 / 3.0; 3]).unwrap();
        let v = stock_additive_value(&[0.0, 1.0, 2.0], &r, &UtilityFunction::linear(), 1.0).unwrap();
        assert!((v.value - 1.0).abs() < 1e-14);
        let z = stock_additive_value(&[0.0; 3], &r, &UtilityFunction::exponential(), 1.0).unwrap();
        assert!(z.value.abs() < 1e-12);
    }

    #[test]
    fn stock_additive_exponential_example() {
        // ref uniform on {0,2}, x0 = 1, phi = (0, ln 3)
        let r = MarginalMeasure::<f64>::on_line(1, &[0.0, 2.0], vec![0.5, 0.5]).unwrap();
        let phi: [f64; 2] = [0.0, 3f64.ln()];
        let u = UtilityFunction::exponential();
        let v = stock_additive_value(&phi, &r, &u, 1.0).unwrap();
        let inner = oce_value(&phi, &r.weights, &u).unwrap().value;
        assert!((inner - 1.5f64.ln()).abs() < 1e-14);
        assert!(v.value >= inner - 1e-12);
        // the martingale measure with mean 1 is the reference itself, so the
        // stock position cannot help beyond pricing by the tilted measure:
        // value = min over q on {0,2} with mean 1 of <phi,q> + H(q|ref) = ln(3)/2
        assert!((v.value - 3f64.ln() / 2.0).abs() < 1e-9, "{}", v.value);
    }
}
