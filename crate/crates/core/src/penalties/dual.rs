use serde::Serialize;

use super::loss::LossFunction;
use super::spec::{MarketOption, WassersteinTerm};
use crate::error::{EmotError, Result};
use crate::lattice::{ConeSpec, MarketGrid};
use crate::lp::{LpSolution, Relation, Var};
use crate::scalar::Scalar;
use crate::superlp::{solve_max, Bounded, SubhedgeLp};

const KELLEY_MAX_ROUNDS: usize = 400;

/// Value of a dual valuation with the measure that prices it.
#[derive(Debug, Clone, Serialize)]
pub struct DualValue<S> {
    pub value: S,
    /// Time-`t` marginal of the minimizing martingale measure (a
    /// supergradient of the valuation in `phi_t`).
    pub marginal: Vec<S>,
    /// Option multipliers `y_n`, or the single Wasserstein multiplier.
    pub multipliers: Vec<S>,
    /// Lipschitz potential `l` (Wasserstein only; `h = y l`).
    pub potential: Option<Vec<S>>,
}

fn rhs_of<S: Scalar>(grid: &MarketGrid<S>, t: usize, phi: &[S]) -> Result<Vec<S>> {
    grid.check_time(t)?;
    if phi.len() != grid.block_size(t) {
        return Err(EmotError::DimensionMismatch(format!(
            "static position at t={t} needs {} entries",
            grid.block_size(t)
        )));
    }
    Ok((0..grid.path_count()).map(|x| phi[grid.block_of(x, t)]).collect())
}

fn marginal_of<S: Scalar>(grid: &MarketGrid<S>, t: usize, lp: &SubhedgeLp<S>, sol: &LpSolution<S>) -> Vec<S> {
    let q = lp.path_measure(sol);
    let mut m = vec![S::zero(); grid.block_size(t)];
    for (x, w) in q.iter().enumerate() {
        m[grid.block_of(x, t)] += *w;
    }
    m
}

/// `Pi^sub(phi(x_t)) = max { m : m + I^Delta <= phi(x_t) }` over the full
/// martingale grid, with the minimizing martingale marginal at `t`.
pub fn pi_sub<S: Scalar>(grid: &MarketGrid<S>, t: usize, phi: &[S]) -> Result<(S, Vec<S>)> {
    let rhs = rhs_of(grid, t, phi)?;
    let mut lp = SubhedgeLp::new(grid, &ConeSpec::Martingale);
    lp.add_path_rows(grid, &rhs, |_| Vec::new());
    match solve_max(&lp)? {
        Bounded::Value(sol) => {
            let m = marginal_of(grid, t, &lp, &sol);
            Ok((sol.value, m))
        }
        Bounded::PlusInfinity => Err(EmotError::Infeasible { residual: 0.0 }),
    }
}

/// A convex penalty `tau >= G*(y)` approximated by tangent cuts.
struct Epigraph<S> {
    y: Var,
    tau: Var,
    /// `(G*(y0), slope)`; `+inf` outside the domain.
    conj: Box<dyn Fn(S) -> (S, S)>,
}

/// Cutting-plane maximization; the reported value is evaluated exactly at
/// the best multiplier found, so it is a lower bound for the sup.
fn kelley<S: Scalar>(
    mut lp: SubhedgeLp<S>,
    epis: Vec<Epigraph<S>>,
    tol: S,
) -> Result<Option<(S, LpSolution<S>, SubhedgeLp<S>)>> {
    let mut best: Option<(S, LpSolution<S>)> = None;
    let mut cut_points: Vec<Vec<S>> = vec![Vec::new(); epis.len()];
    for _ in 0..KELLEY_MAX_ROUNDS {
        let sol = match solve_max(&lp)? {
            Bounded::Value(s) => s,
            Bounded::PlusInfinity => return Ok(None),
        };
        // objective with every cut epigraph replaced by its exact conjugate
        let mut exact = sol.value;
        let mut cuts = Vec::new();
        for (k, e) in epis.iter().enumerate() {
            let y0 = sol.x[e.y.0];
            let (g, slope) = (e.conj)(y0);
            exact += sol.x[e.tau.0] - g;
            let repeated = cut_points[k].iter().any(|p| (*p - y0).abs() <= S::c(1e-12) * (S::one() + y0.abs()));
            if g > sol.x[e.tau.0] + tol * S::c(1e-3) && !repeated {
                cut_points[k].push(y0);
                cuts.push((e.y, e.tau, y0, g, slope));
            }
        }
        if best.as_ref().is_none_or(|(v, _)| exact > *v) {
            best = Some((exact, sol.clone()));
        }
        let lower = best.as_ref().map(|b| b.0).unwrap_or(exact);
        if sol.value - lower <= tol * (S::one() + lower.abs()) || cuts.is_empty() {
            break;
        }
        for (y, tau, y0, g, slope) in cuts {
            // tau - slope * y >= g - slope * y0
            lp.lp.add_row(&[(tau, S::one()), (y, -slope)], Relation::Ge, g - slope * y0);
        }
    }
    Ok(best.map(|(v, s)| (v, s, lp)))
}

fn power_anchor<S: Scalar>(p: S, slope_needed: S) -> S {
    // (G*)'(Y) = Y^{1/(p-1)} >= slope_needed
    slope_needed.max(S::one()).powf(p - S::one())
}

/// `U^G_t(phi) = sup_y Pi^sub(phi + sum_n y_n (f_n - c_n)) - sum_n G*_n(|y_n|)`.
pub fn dual_market_valuation<S: Scalar>(
    grid: &MarketGrid<S>,
    t: usize,
    phi: &[S],
    options: &[MarketOption<S>],
    tol: S,
) -> Result<DualValue<S>> {
    let rhs = rhs_of(grid, t, phi)?;
    let mut lp = SubhedgeLp::new(grid, &ConeSpec::Martingale);
    let mut active: Vec<(usize, Var)> = Vec::new();
    let mut epis = Vec::new();
    for (n, o) in options.iter().enumerate() {
        o.loss.validate()?;
        if o.payoff.len() != grid.block_size(t) {
            return Err(EmotError::DimensionMismatch(format!("option {n} payoff length")));
        }
        if matches!(o.loss, LossFunction::Zero) {
            continue;
        }
        let y = lp.lp.add_free_var(S::zero());
        let tau = lp.lp.add_var(-S::one());
        active.push((n, y));
        match o.loss {
            LossFunction::Threshold { eps } => {
                lp.lp.add_row(&[(tau, S::one()), (y, -eps)], Relation::Ge, S::zero());
                lp.lp.add_row(&[(tau, S::one()), (y, eps)], Relation::Ge, S::zero());
            }
            LossFunction::Power { p } => {
                let spread = o.payoff.iter().map(|f| (*f - o.price).abs()).fold(S::zero(), S::max);
                let anchor = power_anchor(p, S::c(2.0) * (spread + S::one()));
                let loss = o.loss;
                for y0 in [anchor, -anchor, S::one(), -S::one()] {
                    let g = loss.conjugate(y0.abs());
                    let slope = loss.conjugate_derivative(y0.abs()) * y0.signum();
                    lp.lp.add_row(&[(tau, S::one()), (y, -slope)], Relation::Ge, g - slope * y0);
                }
                epis.push(Epigraph {
                    y,
                    tau,
                    conj: Box::new(move |y0: S| {
                        (loss.conjugate(y0.abs()), loss.conjugate_derivative(y0.abs()) * y0.signum())
                    }),
                });
            }
            _ => {}
        }
    }
    lp.add_path_rows(grid, &rhs, |x| {
        let b = grid.block_of(x, t);
        active
            .iter()
            .map(|&(n, y)| (y, -(options[n].payoff[b] - options[n].price)))
            .collect()
    });
    finish(grid, t, kelley(lp, epis, tol)?, |sol| {
        let mut ys = vec![S::zero(); options.len()];
        for &(n, y) in &active {
            ys[n] = sol.x[y.0];
        }
        (ys, None)
    })
}

fn finish<S: Scalar, F>(
    grid: &MarketGrid<S>,
    t: usize,
    res: Option<(S, LpSolution<S>, SubhedgeLp<S>)>,
    extract: F,
) -> Result<DualValue<S>>
where
    F: FnOnce(&LpSolution<S>) -> (Vec<S>, Option<Vec<S>>),
{
    match res {
        Some((value, sol, lp)) => {
            let marginal = marginal_of(grid, t, &lp, &sol);
            let (multipliers, potential) = extract(&sol);
            Ok(DualValue {
                value,
                marginal,
                multipliers,
                potential,
            })
        }
        None => Ok(DualValue {
            value: S::infinity(),
            marginal: vec![S::zero(); grid.block_size(t)],
            multipliers: Vec::new(),
            potential: None,
        }),
    }
}

/// `U^W_t(phi) = sup_{y >= 0, l in Lip(1)} Pi^sub(phi + y l) - y int l dref - G*(y)`,
/// solved in `h = y l` with `|h_i - h_k| <= y d_ik`.
pub fn dual_wasserstein_valuation<S: Scalar>(
    grid: &MarketGrid<S>,
    t: usize,
    phi: &[S],
    term: &WassersteinTerm<S>,
    tol: S,
) -> Result<DualValue<S>> {
    let rhs = rhs_of(grid, t, phi)?;
    term.loss.validate()?;
    let support = &term.reference.support;
    if support.len() != grid.block_size(t) {
        return Err(EmotError::DimensionMismatch("Wasserstein reference support".into()));
    }
    let table = term.metric.table(support)?;
    let n = support.len();
    let mut lp = SubhedgeLp::new(grid, &ConeSpec::Martingale);
    let h: Vec<Var> = (0..n).map(|i| lp.lp.add_free_var(-term.reference.weights[i])).collect();
    let y = lp.lp.add_var(S::zero());
    let tau = lp.lp.add_var(-S::one());
    let pairs: Vec<(usize, usize)> = if term.metric.is_line(support) {
        (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
    } else {
        (0..n).flat_map(|i| (i + 1..n).map(move |k| (i, k))).collect()
    };
    for (i, k) in pairs {
        let d = table[i][k];
        lp.lp.add_row(&[(h[i], S::one()), (h[k], -S::one()), (y, -d)], Relation::Le, S::zero());
        lp.lp.add_row(&[(h[k], S::one()), (h[i], -S::one()), (y, -d)], Relation::Le, S::zero());
    }
    let mut epis = Vec::new();
    match term.loss {
        LossFunction::Zero => {
            lp.lp.add_row(&[(y, S::one())], Relation::Le, S::zero());
        }
        LossFunction::Threshold { eps } => {
            lp.lp.add_row(&[(tau, S::one()), (y, -eps)], Relation::Ge, S::zero());
        }
        LossFunction::Hard => {}
        LossFunction::Power { p } => {
            let diam = table.iter().flatten().fold(S::zero(), |m, v| m.max(*v));
            let loss = term.loss;
            for y0 in [power_anchor(p, S::c(2.0) * (diam + S::one())), S::one()] {
                let g = loss.conjugate(y0);
                let slope = loss.conjugate_derivative(y0);
                lp.lp.add_row(&[(tau, S::one()), (y, -slope)], Relation::Ge, g - slope * y0);
            }
            epis.push(Epigraph {
                y,
                tau,
                conj: Box::new(move |y0: S| (loss.conjugate(y0.max(S::zero())), loss.conjugate_derivative(y0))),
            });
        }
    }
    lp.add_path_rows(grid, &rhs, |x| vec![(h[grid.block_of(x, t)], -S::one())]);
    let res = kelley(lp, epis, tol)?;
    finish(grid, t, res, |sol| {
        let yv = sol.x[y.0];
        let pot = if yv > S::zero() {
            let base = sol.x[h[0].0];
            Some(h.iter().map(|hi| (sol.x[hi.0] - base) / yv).collect())
        } else {
            None
        };
        (vec![yv], pot)
    })
}
