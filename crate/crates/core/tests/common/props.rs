//! Property checks shared by the acceptance target and the proptest suites.
//! Each returns `Err` with a description of the violated case.

use emot::hedging::{solve_sup, HedgeProblem};
use emot::lattice::control_cone_bound_holds;
use emot::solver::{solve_inf, EmotProblem};
use emot::valuation::{divergence, oce_value, stock_additive_value, UtilityFunction};
use emot::wasserstein::{kr_dual_witness, w1, GroundMetric};
use emot::{MarginalMeasure, MarketGrid, PathFunction};

use super::{g1, penalty, Family};

pub type Check = Result<(), String>;

pub fn catalog() -> Vec<UtilityFunction<f64>> {
    vec![
        UtilityFunction::linear(),
        UtilityFunction::exponential(),
        UtilityFunction::piecewise_linear(2.0).unwrap(),
        UtilityFunction::log(),
        UtilityFunction::hyperbolic(),
        UtilityFunction::truncated_exponential(),
    ]
}

/// Utilities with full domain and strictly concave parts (usable with any
/// payoff in the sup forms).
pub fn smooth_catalog() -> Vec<UtilityFunction<f64>> {
    vec![UtilityFunction::exponential(), UtilityFunction::truncated_exponential()]
}

fn uniform3() -> Vec<f64> {
    vec![1.0 / 3.0; 3]
}

fn su(u: &UtilityFunction<f64>, phi: &[[f64; 3]; 2]) -> Result<f64, String> {
    let r = uniform3();
    let mut total = 0.0;
    for p in phi {
        total += oce_value(p, &r, u).map_err(|e| e.to_string())?.value;
    }
    Ok(total)
}

/// `S^U(phi + beta) = S^U(phi) + sum beta` and midpoint concavity.
pub fn oce_cash_and_concavity(u: &UtilityFunction<f64>, a: [[f64; 3]; 2], b: [[f64; 3]; 2], beta: [f64; 2]) -> Check {
    let sa = su(u, &a)?;
    let sb = su(u, &b)?;
    let shifted = [a[0].map(|v| v + beta[0]), a[1].map(|v| v + beta[1])];
    let ss = su(u, &shifted)?;
    if (ss - sa - beta[0] - beta[1]).abs() > 1e-9 * (1.0 + sa.abs()) {
        return Err(format!("{}: cash additivity {ss} vs {sa} + {beta:?}", u.name()));
    }
    let mid = [0, 1].map(|t| [0, 1, 2].map(|i| 0.5 * (a[t][i] + b[t][i])));
    let sm = su(u, &mid)?;
    if sm < 0.5 * (sa + sb) - 1e-9 {
        return Err(format!("{}: midpoint {sm} < {}", u.name(), 0.5 * (sa + sb)));
    }
    Ok(())
}

fn g1_ref() -> MarginalMeasure<f64> {
    MarginalMeasure::on_line(1, &[0.0, 1.0, 2.0], uniform3()).unwrap()
}

fn sav(u: &UtilityFunction<f64>, phi: &[f64]) -> Result<f64, String> {
    stock_additive_value(phi, &g1_ref(), u, 1.0).map(|v| v.value).map_err(|e| e.to_string())
}

/// `U(phi + a x + b) = U(phi) + a x0 + b`.
pub fn stock_additivity(u: &UtilityFunction<f64>, phi: [f64; 3], a: f64, b: f64) -> Check {
    let base = sav(u, &phi)?;
    let moved: Vec<f64> = phi.iter().zip([0.0, 1.0, 2.0]).map(|(p, x)| p + a * x + b).collect();
    let v = sav(u, &moved)?;
    if (v - base - a - b).abs() > 1e-8 * (1.0 + base.abs() + a.abs() + b.abs()) {
        return Err(format!("{}: {v} vs {base} + {a} + {b}", u.name()));
    }
    Ok(())
}

/// Moving `k x_1` from the first static into the second (as `-k x_2`, the
/// difference being the integral `k (x_2 - x_1)`) and cash `h` between
/// them leaves the total stock-additive value unchanged.
pub fn well_defined(u: &UtilityFunction<f64>, phi: [[f64; 3]; 2], k: f64, h: f64) -> Check {
    let nodes = [0.0, 1.0, 2.0];
    let before = sav(u, &phi[0])? + sav(u, &phi[1])?;
    let psi1: Vec<f64> = phi[0].iter().zip(nodes).map(|(p, x)| p + k * x + h).collect();
    let psi2: Vec<f64> = phi[1].iter().zip(nodes).map(|(p, x)| p - k * x - h).collect();
    let after = sav(u, &psi1)? + sav(u, &psi2)?;
    if (after - before).abs() > 1e-8 * (1.0 + before.abs() + k.abs() + h.abs()) {
        return Err(format!("{}: {after} vs {before}", u.name()));
    }
    Ok(())
}

/// `u(x) <= x y + v*(y)`.
pub fn fenchel(u: &UtilityFunction<f64>, x: f64, y: f64) -> Check {
    let lhs = u.eval(x);
    let rhs = x * y + u.conjugate(y);
    if lhs == f64::NEG_INFINITY || rhs == f64::INFINITY {
        return Ok(());
    }
    if lhs > rhs + 1e-10 * (1.0 + lhs.abs().max(rhs.abs())) {
        return Err(format!("{}: u({x}) = {lhs} > {rhs} at y = {y}", u.name()));
    }
    Ok(())
}

/// Cost on G1 from three path values.
pub fn cost3(v: [f64; 3]) -> PathFunction<f64> {
    PathFunction::new(v.to_vec())
}

fn value_pair(c: &PathFunction<f64>) -> Result<(f64, f64), String> {
    let g = g1();
    let p = EmotProblem::new(g.clone(), c.clone(), penalty(&g, Family::Market, false), emot::ConeSpec::Martingale);
    let inf = solve_inf(&p).map_err(|e| e.to_string())?.inf_value;
    let sup = solve_sup(&HedgeProblem::from_emot(&p)).map_err(|e| e.to_string())?.sup_value;
    Ok((inf, sup))
}

/// Cash additivity, monotonicity and midpoint concavity of `c -> value`
/// for both sides on a market-price instance solved exactly.
pub fn value_map(c1: [f64; 3], c2: [f64; 3], k: f64, bump: [f64; 3]) -> Check {
    let tol = 2.0 * 1e-8;
    let a = cost3(c1);
    let b = cost3(c2);
    let (ia, sa) = value_pair(&a)?;
    let (ib, sb) = value_pair(&b)?;
    let (ik, sk) = value_pair(&a.shift(k))?;
    let (iu, su_) = value_pair(&a.add(&cost3(bump)))?;
    let (im, sm) = value_pair(&a.add(&b).scale(0.5))?;
    for (name, x, y, z, w, m) in [("inf", ia, ib, ik, iu, im), ("sup", sa, sb, sk, su_, sm)] {
        let scale = 1.0 + x.abs() + y.abs() + k.abs();
        if (z - x - k).abs() > tol * scale {
            return Err(format!("{name}: cash additivity {z} vs {x} + {k}"));
        }
        if w < x - tol * scale {
            return Err(format!("{name}: monotonicity {w} < {x}"));
        }
        if m < 0.5 * (x + y) - tol * scale {
            return Err(format!("{name}: midpoint {m} < {}", 0.5 * (x + y)));
        }
    }
    Ok(())
}

/// Primal transport value equals the Kantorovich dual with a 1-Lipschitz
/// potential, for both the line formula and the LP.
pub fn kantorovich(points: &[f64], mu: &[f64], nu: &[f64]) -> Check {
    let a = MarginalMeasure::on_line(1, points, mu.to_vec()).map_err(|e| e.to_string())?;
    let b = MarginalMeasure::on_line(1, points, nu.to_vec()).map_err(|e| e.to_string())?;
    let table: Vec<Vec<f64>> = points.iter().map(|x| points.iter().map(|y| (x - y).abs()).collect()).collect();
    let primal = w1(&a, &b, &GroundMetric::Euclidean).map_err(|e| e.to_string())?;
    for metric in [GroundMetric::Euclidean, GroundMetric::Custom(table.clone())] {
        let (value, ell) = kr_dual_witness(&a, &b, &metric).map_err(|e| e.to_string())?;
        let gain: f64 = ell.iter().zip(mu.iter().zip(nu)).map(|(l, (m, n))| l * (m - n)).sum();
        if (value - primal).abs() > 1e-8 || (gain - primal).abs() > 1e-8 {
            return Err(format!("value {value}, dual gain {gain}, primal {primal}"));
        }
        for i in 0..ell.len() {
            for k in 0..ell.len() {
                if (ell[i] - ell[k]).abs() > table[i][k] {
                    return Err(format!("potential not 1-Lipschitz at ({i},{k})"));
                }
            }
        }
    }
    Ok(())
}

/// Hyperbolic utility, reference (1/2, 0, 1/2), measure (0, 1, 0).
pub fn singular_divergence() -> Result<f64, String> {
    let pts = [0.0, 1.0, 2.0];
    let mu = MarginalMeasure::on_line(1, &pts, vec![0.0, 1.0, 0.0]).unwrap();
    let r = MarginalMeasure::on_line(1, &pts, vec![0.5, 0.0, 0.5]).unwrap();
    divergence(&mu, &r, &UtilityFunction::hyperbolic()).map_err(|e| e.to_string())
}

/// Exhaustive scan of the control bound on a small lattice.
pub fn control_bound(nodes: Vec<Vec<f64>>, big_a: f64) -> Check {
    let g = MarketGrid::one_dim(nodes).map_err(|e| e.to_string())?;
    match control_cone_bound_holds(&g, big_a) {
        Ok(true) => Ok(()),
        Ok(false) => Err(format!("bound fails for A = {big_a}")),
        Err(e) => Err(e.to_string()),
    }
}
