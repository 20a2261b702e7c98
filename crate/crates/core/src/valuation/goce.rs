use serde::Serialize;

use super::oce::oce_value;
use super::utility::UtilityFunction;
use crate::error::{EmotError, Result};
use crate::lattice::{
    cone_membership, stochastic_integral, zero_dynamic, ConeSpec, MarketGrid, PathFunction, PathMeasure, RESIDUAL_TOL,
};
use crate::optimize::{bfgs_maximize, BfgsOptions};
use crate::scalar::Scalar;

/// Result of the indirect-utility certainty equivalent.
#[derive(Debug, Clone, Serialize)]
pub struct GoceReport<S> {
    pub value: S,
    /// Optimal dynamic position `[t][j][prefix]`.
    pub dynamic: Vec<Vec<Vec<S>>>,
    pub shift: S,
}

/// `sup_{Delta, beta} E_ref[u(c + I^Delta + beta)] - beta` for a martingale
/// reference and a utility with full domain.
pub fn goce_indirect<S: Scalar>(
    grid: &MarketGrid<S>,
    c: &PathFunction<S>,
    reference: &PathMeasure<S>,
    u: &UtilityFunction<S>,
    tol: S,
) -> Result<GoceReport<S>> {
    c.check_len(grid)?;
    reference.check_len(grid)?;
    if c.values().iter().any(|v| !v.is_finite()) {
        return Err(EmotError::InvalidParameter("payoff must be finite".into()));
    }
    if !reference.is_probability() {
        return Err(EmotError::Precondition("reference must be a probability".into()));
    }
    if !cone_membership(grid, &ConeSpec::Martingale, reference, S::c(RESIDUAL_TOL))?.is_member() {
        return Err(EmotError::Precondition("reference is not a martingale measure".into()));
    }
    if !u.has_full_domain() {
        return Err(EmotError::Precondition("indirect utility needs dom(u) = R".into()));
    }
    let shape = zero_dynamic(grid);
    let layout: Vec<(usize, usize, usize)> = shape
        .iter()
        .enumerate()
        .flat_map(|(t, per_t)| {
            per_t
                .iter()
                .enumerate()
                .flat_map(move |(j, per_j)| (0..per_j.len()).map(move |p| (t, j, p)))
        })
        .collect();
    let unpack = |v: &[S]| -> Vec<Vec<Vec<S>>> {
        let mut d = shape.clone();
        for (k, &(t, j, p)) in layout.iter().enumerate() {
            d[t][j][p] = v[k];
        }
        d
    };
    let weights = reference.weights();
    let eval = |v: &[S]| -> (S, Vec<S>, S) {
        let dynamic = unpack(v);
        let integral = match stochastic_integral(grid, &dynamic) {
            Ok(i) => i,
            Err(_) => return (S::neg_infinity(), vec![S::zero(); v.len()], S::zero()),
        };
        let payoff: Vec<S> = c.values().iter().zip(integral.values()).map(|(a, b)| *a + *b).collect();
        let oce = match oce_value(&payoff, weights, u) {
            Ok(o) => o,
            Err(_) => return (S::neg_infinity(), vec![S::zero(); v.len()], S::zero()),
        };
        let mut grad = vec![S::zero(); v.len()];
        for (k, &(t, j, p)) in layout.iter().enumerate() {
            let block = grid.suffix_count(t);
            let start = p * block;
            let mut acc = S::zero();
            for x in start..start + block {
                acc += oce.gradient[x] * (grid.value(x, t + 1, j) - grid.value(x, t, j));
            }
            grad[k] = acc;
        }
        (oce.value, grad, oce.shift.unwrap_or_else(S::zero))
    };
    let opts = BfgsOptions {
        max_iter: 2000,
        grad_tol: tol,
        value_tol: S::zero(),
    };
    let (best, _) = bfgs_maximize(
        |v| {
            let (val, g, _) = eval(v);
            (val, g)
        },
        vec![S::zero(); layout.len()],
        opts,
    );
    let (value, _, shift) = eval(&best);
    Ok(GoceReport {
        value,
        dynamic: unpack(&best),
        shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> MarketGrid<f64> {
        MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
    }

    #[test]
    fn constants_and_linear() {
        let g = g1();
        let q = PathMeasure::uniform(&g);
        let k = PathFunction::constant(&g, 2.5);
        let r = goce_indirect(&g, &k, &q, &UtilityFunction::exponential(), 1e-10).unwrap();
        assert!((r.value - 2.5).abs() < 1e-10);
        let call = PathFunction::new(vec![0.0, 0.0, 1.0]);
        let r = goce_indirect(&g, &call, &q, &UtilityFunction::linear(), 1e-10).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_martingale_reference() {
        let g = g1();
        let q = PathMeasure::dirac(&g, 0);
        let c = PathFunction::zeros(&g);
        assert!(matches!(
            goce_indirect(&g, &c, &q, &UtilityFunction::exponential(), 1e-10),
            Err(EmotError::Precondition(_))
        ));
        let u = UtilityFunction::log();
        assert!(goce_indirect(&g, &c, &PathMeasure::uniform(&g), &u, 1e-10).is_err());
    }

    #[test]
    fn exponential_matches_one_dimensional_search() {
        let g = g1();
        let q = PathMeasure::uniform(&g);
        let call = PathFunction::new(vec![0.0, 0.0, 1.0]);
        let r = goce_indirect(&g, &call, &q, &UtilityFunction::exponential(), 1e-11).unwrap();
        let h = |d: f64| -((f64::exp(d) + 1.0 + f64::exp(-1.0 - d)) / 3.0).ln();
        let (_, best) = crate::optimize::golden_max(h, -5.0, 5.0, 1e-12, 500);
        assert!((r.value - best).abs() < 1e-10);
    }
}
