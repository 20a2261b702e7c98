//! Sup side: semistatic subhedging with per-date valuations, the
//! superhedging mirror and pointwise feasibility checks.

mod valuation;

use std::time::Instant;

use serde::Serialize;

pub use valuation::{Evaluated, Valuation};

use crate::error::{EmotError, Result};
use crate::lattice::{
    check_dynamic, check_statics, stochastic_integral, zero_dynamic, ConeSpec, MarketGrid, PathFunction,
    SemistaticStrategy,
};
use crate::optimize::{bfgs_maximize, BfgsOptions};
use crate::scalar::Scalar;
use crate::solver::EmotProblem;
use crate::superlp::{solve_max, Bounded, SubhedgeLp};

/// Tolerance of the pointwise feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct HedgeOptions<S> {
    /// Accuracy of the inner valuations (cutting planes, root finds).
    pub tol: S,
    /// Run the log-barrier refinement on starts with cheap valuations.
    pub polish: bool,
    pub barrier_stages: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for HedgeOptions<S> {
    fn default() -> Self {
        Self {
            tol: S::c(1e-10),
            polish: true,
            barrier_stages: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HedgeProblem<S> {
    pub grid: MarketGrid<S>,
    pub cost: PathFunction<S>,
    /// One valuation per date `0..=T`.
    pub valuations: Vec<Valuation<S>>,
    pub cone: ConeSpec<S>,
    pub options: HedgeOptions<S>,
    /// Static positions to start from (e.g. the inf side's dual prices).
    pub warm_starts: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> HedgeProblem<S> {
    pub fn new(grid: MarketGrid<S>, cost: PathFunction<S>, valuations: Vec<Valuation<S>>, cone: ConeSpec<S>) -> Self {
        Self {
            grid,
            cost,
            valuations,
            cone,
            options: HedgeOptions::default(),
            warm_starts: Vec::new(),
        }
    }

    /// The sup-side counterpart of a measure-side problem.
    pub fn from_emot(problem: &EmotProblem<S>) -> Self {
        let valuations = Valuation::from_penalty(&problem.grid, &problem.penalty);
        Self::new(problem.grid.clone(), problem.cost.clone(), valuations, problem.cone)
    }

    pub fn with_warm_start(mut self, statics: Vec<Vec<S>>) -> Self {
        self.warm_starts.push(statics);
        self
    }

    fn validate(&self) -> Result<()> {
        self.cost.check_len(&self.grid)?;
        self.cost.check_cost()?;
        self.cone.validate()?;
        if self.valuations.len() != self.grid.horizon() + 1 {
            return Err(EmotError::DimensionMismatch("one valuation per date is required".into()));
        }
        for s in &self.warm_starts {
            check_statics(&self.grid, s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StartRecord<S> {
    pub start: String,
    pub value: S,
}

#[derive(Debug, Clone, Serialize)]
pub struct HedgeReport<S> {
    /// `sum_t S_t(phi_t) + cash` of the witness: a lower bound on the
    /// subhedging value (`+inf` when the cone admits no measure).
    pub sup_value: S,
    pub witness: SemistaticStrategy<S>,
    /// Per-date budgets `b_t` (eps-martingale cones only).
    pub budget: Vec<S>,
    pub valuation_values: Vec<S>,
    /// `min_x c(x) - sum_t phi_t(x_t) - I(x) - cash - eps sum_t b_t`.
    pub min_slack: S,
    pub duality_margin: Option<S>,
    pub starts: Vec<StartRecord<S>>,
    pub wall_time_ms: f64,
    pub note: Option<String>,
}

impl<S: Scalar> HedgeReport<S> {
    /// Records `inf_value - sup_value`.
    pub fn with_inf(mut self, inf_value: S) -> Self {
        self.duality_margin = Some(inf_value - self.sup_value);
        self
    }

    /// Per-date call decomposition of the static witness (single asset):
    /// `phi(x) = a + b (x - k_0) + sum_i w_i (x - k_i)^+` with rows
    /// `t,kind,strike,weight`.
    pub fn call_decomposition_csv(&self, grid: &MarketGrid<S>) -> Result<String> {
        let mut out = String::from("t,kind,strike,weight\n");
        for (t, phi) in self.witness.statics.iter().enumerate() {
            for (kind, k, w) in call_decomposition(grid.nodes(t, 0), phi)? {
                out.push_str(&format!("{t},{kind},{k},{w}\n"));
            }
        }
        Ok(out)
    }

    /// Dynamic positions as rows `t,asset,prefix,shares`.
    pub fn delta_csv(&self) -> String {
        let mut out = String::from("t,asset,prefix,shares\n");
        for (t, per_t) in self.witness.dynamic.iter().enumerate() {
            for (j, per_j) in per_t.iter().enumerate() {
                for (p, d) in per_j.iter().enumerate() {
                    out.push_str(&format!("{t},{j},{p},{d}\n"));
                }
            }
        }
        out
    }
}

/// Splits a function on sorted nodes into cash, a forward and calls struck
/// at interior nodes (second differences of the slopes).
pub fn call_decomposition<S: Scalar>(nodes: &[S], phi: &[S]) -> Result<Vec<(&'static str, S, S)>> {
    if nodes.len() != phi.len() {
        return Err(EmotError::DimensionMismatch("call decomposition needs a single asset".into()));
    }
    let mut idx: Vec<usize> = (0..nodes.len()).collect();
    idx.sort_by(|a, b| nodes[*a].partial_cmp(&nodes[*b]).unwrap());
    let k0 = nodes[idx[0]];
    let mut rows = vec![("cash", k0, phi[idx[0]])];
    if nodes.len() == 1 {
        return Ok(rows);
    }
    let slope = |i: usize| (phi[idx[i + 1]] - phi[idx[i]]) / (nodes[idx[i + 1]] - nodes[idx[i]]);
    rows.push(("forward", k0, slope(0)));
    for i in 1..nodes.len() - 1 {
        rows.push(("call", nodes[idx[i]], slope(i) - slope(i - 1)));
    }
    Ok(rows)
}

/// Outcome of the pointwise check `sum_t phi_t(x_t) + I(x) <= c(x)`.
#[derive(Debug, Clone, Serialize)]
pub struct Feasibility<S> {
    pub feasible: bool,
    /// Most violated (or tightest) path.
    pub worst_path: usize,
    /// `max_x sum phi + I - c`.
    pub violation: S,
}

pub fn feasible<S: Scalar>(
    grid: &MarketGrid<S>,
    statics: &[Vec<S>],
    dynamic: &[Vec<Vec<S>>],
    cost: &PathFunction<S>,
) -> Result<Feasibility<S>> {
    check_statics(grid, statics)?;
    check_dynamic(grid, dynamic)?;
    cost.check_len(grid)?;
    let integral = stochastic_integral(grid, dynamic)?;
    let mut worst = (0, S::neg_infinity());
    for x in 0..grid.path_count() {
        let lhs: S = (0..=grid.horizon()).map(|t| statics[t][grid.block_of(x, t)]).sum::<S>() + integral.0[x];
        let excess = lhs - cost.0[x];
        if excess > worst.1 {
            worst = (x, excess);
        }
    }
    Ok(Feasibility {
        feasible: worst.1 <= S::c(FEASIBILITY_TOL),
        worst_path: worst.0,
        violation: worst.1,
    })
}

/// Cash, dynamic positions and budgets maximizing the cash subject to
/// `cash + I + eps sum b <= c - sum_t phi_t`.
struct Completion<S> {
    cash: S,
    dynamic: Vec<Vec<Vec<S>>>,
    budget: Vec<S>,
}

fn complete<S: Scalar>(
    grid: &MarketGrid<S>,
    cone: &ConeSpec<S>,
    cost: &PathFunction<S>,
    statics: &[Vec<S>],
) -> Result<Completion<S>> {
    let rhs: Vec<S> = (0..grid.path_count())
        .map(|x| {
            if cost.0[x] == S::infinity() {
                S::infinity()
            } else {
                cost.0[x] - (0..=grid.horizon()).map(|t| statics[t][grid.block_of(x, t)]).sum::<S>()
            }
        })
        .collect();
    let mut lp = SubhedgeLp::new(grid, cone);
    lp.add_path_rows(grid, &rhs, |_| Vec::new());
    match solve_max(&lp)? {
        Bounded::Value(sol) => Ok(Completion {
            cash: sol.value,
            dynamic: lp.dynamic_table(grid, &sol),
            budget: lp.budget_values(&sol),
        }),
        Bounded::PlusInfinity => Ok(Completion {
            cash: S::infinity(),
            dynamic: zero_dynamic(grid),
            budget: Vec::new(),
        }),
    }
}

/// `Pi^sub(c) = sup { m : m + I <= c }` over the cone, with its witness.
pub fn subhedge_no_options<S: Scalar>(
    grid: &MarketGrid<S>,
    cost: &PathFunction<S>,
    cone: &ConeSpec<S>,
) -> Result<(S, Vec<Vec<Vec<S>>>)> {
    cost.check_len(grid)?;
    cost.check_cost()?;
    let statics: Vec<Vec<S>> = (0..=grid.horizon()).map(|t| vec![S::zero(); grid.block_size(t)]).collect();
    let c = complete(grid, cone, cost, &statics)?;
    Ok((c.cash, c.dynamic))
}

struct Candidate<S> {
    value: S,
    statics: Vec<Vec<S>>,
    parts: Vec<S>,
    completion: Completion<S>,
}

fn evaluate_candidate<S: Scalar>(problem: &HedgeProblem<S>, statics: Vec<Vec<S>>) -> Result<Candidate<S>> {
    let grid = &problem.grid;
    let mut parts = Vec::with_capacity(statics.len());
    for (t, v) in problem.valuations.iter().enumerate() {
        parts.push(v.evaluate(grid, t, &statics[t], problem.options.tol)?.value);
    }
    let completion = complete(grid, &problem.cone, &problem.cost, &statics)?;
    let value = if parts.iter().any(|p| *p == S::neg_infinity()) {
        S::neg_infinity()
    } else {
        parts.iter().copied().sum::<S>() + completion.cash
    };
    Ok(Candidate {
        value,
        statics,
        parts,
        completion,
    })
}

/// Maximizes `sum_t S_t(phi_t)` over semistatic subhedges of `c`.
pub fn solve_sup<S: Scalar>(problem: &HedgeProblem<S>) -> Result<HedgeReport<S>> {
    let start = Instant::now();
    problem.validate()?;
    let grid = &problem.grid;
    let zero: Vec<Vec<S>> = (0..=grid.horizon()).map(|t| vec![S::zero(); grid.block_size(t)]).collect();
    let mut starts: Vec<(String, Vec<Vec<S>>)> = vec![("zero".into(), zero)];
    for (i, s) in problem.warm_starts.iter().enumerate() {
        starts.push((format!("warm{i}"), s.clone()));
    }
    let polishable = problem.options.polish
        && problem.valuations.iter().all(|v| v.is_cheap())
        && matches!(problem.cone, ConeSpec::Martingale | ConeSpec::NullCone)
        && problem.cost.0.iter().all(|c| c.is_finite());
    let mut records = Vec::new();
    let mut best: Option<Candidate<S>> = None;
    for (name, statics) in starts {
        let mut cand = evaluate_candidate(problem, statics)?;
        records.push(StartRecord {
            start: name.clone(),
            value: cand.value,
        });
        if polishable && cand.value.is_finite() {
            if let Some(p) = polish(problem, &cand)? {
                records.push(StartRecord {
                    start: format!("{name}+barrier"),
                    value: p.value,
                });
                if p.value > cand.value {
                    cand = p;
                }
            }
        }
        if best.as_ref().is_none_or(|b| cand.value > b.value) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one start");
    let mut cash = vec![S::zero(); grid.horizon() + 1];
    cash[0] = if best.completion.cash.is_finite() { best.completion.cash } else { S::zero() };
    let witness = SemistaticStrategy {
        statics: best.statics,
        dynamic: best.completion.dynamic,
        cash,
    };
    let min_slack = slack(problem, &witness, &best.completion.budget)?;
    let note = (best.completion.cash == S::infinity())
        .then(|| "the cone admits no probability measure; the subhedging value is unbounded".to_string());
    Ok(HedgeReport {
        sup_value: best.value,
        witness,
        budget: best.completion.budget,
        valuation_values: best.parts,
        min_slack,
        duality_margin: None,
        starts: records,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        note,
    })
}

fn eps_of<S: Scalar>(cone: &ConeSpec<S>) -> S {
    match cone {
        ConeSpec::EpsMartingale { eps } => *eps,
        _ => S::zero(),
    }
}

fn slack<S: Scalar>(problem: &HedgeProblem<S>, w: &SemistaticStrategy<S>, budget: &[S]) -> Result<S> {
    let grid = &problem.grid;
    let integral = stochastic_integral(grid, &w.dynamic)?;
    let extra = eps_of(&problem.cone) * budget.iter().copied().sum::<S>();
    let cash: S = w.cash.iter().copied().sum();
    let mut m = S::infinity();
    for x in 0..grid.path_count() {
        if problem.cost.0[x] == S::infinity() {
            continue;
        }
        let lhs: S = (0..=grid.horizon()).map(|t| w.statics[t][grid.block_of(x, t)]).sum::<S>();
        m = m.min(problem.cost.0[x] - lhs - integral.0[x] - cash - extra);
    }
    Ok(m)
}

/// Log-barrier refinement over `(phi, Delta, cash)` followed by an exact
/// completion; returns the improved candidate, if any.
fn polish<S: Scalar>(problem: &HedgeProblem<S>, cand: &Candidate<S>) -> Result<Option<Candidate<S>>> {
    let grid = &problem.grid;
    let horizon = grid.horizon();
    // free static coordinates: dates whose valuation is not `Worst`
    let slots: Vec<(usize, usize)> = (0..=horizon)
        .filter(|&t| !matches!(problem.valuations[t], Valuation::Worst))
        .flat_map(|t| (0..grid.block_size(t)).map(move |b| (t, b)))
        .collect();
    let dyn_slots: Vec<(usize, usize, usize)> = if matches!(problem.cone, ConeSpec::NullCone) {
        Vec::new()
    } else {
        (0..horizon)
            .flat_map(|t| (0..grid.num_assets()).flat_map(move |j| (0..grid.prefix_count(t)).map(move |p| (t, j, p))))
            .collect()
    };
    let ns = slots.len();
    let nd = dyn_slots.len();
    if ns == 0 {
        return Ok(None);
    }
    let cmax = problem.cost.0.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let shrink = S::c(1e-3) * (S::one() + cmax);
    let mut z: Vec<S> = slots.iter().map(|&(t, b)| cand.statics[t][b]).collect();
    z.extend(dyn_slots.iter().map(|&(t, j, p)| cand.completion.dynamic[t][j][p]));
    z.push(cand.completion.cash - shrink);
    let incr: Vec<Vec<(usize, S)>> = (0..grid.path_count())
        .map(|x| {
            dyn_slots
                .iter()
                .enumerate()
                .filter(|(_, &(t, _, p))| grid.prefix_of(x, t) == p)
                .map(|(k, &(t, j, _))| (k, grid.value(x, t + 1, j) - grid.value(x, t, j)))
                .collect()
        })
        .collect();
    let unpack = |z: &[S]| -> Vec<Vec<S>> {
        let mut st: Vec<Vec<S>> = (0..=horizon).map(|t| vec![S::zero(); grid.block_size(t)]).collect();
        for (k, &(t, b)) in slots.iter().enumerate() {
            st[t][b] = z[k];
        }
        st
    };
    let tol = problem.options.tol;
    let mut mu = S::c(1e-2) * (S::one() + cand.value.abs());
    let mut best: Option<Candidate<S>> = None;
    for _ in 0..problem.options.barrier_stages {
        let f = |z: &[S]| -> (S, Vec<S>) {
            let st = unpack(z);
            let mut val = z[ns + nd];
            let mut g = vec![S::zero(); z.len()];
            g[ns + nd] = S::one();
            for t in 0..=horizon {
                if matches!(problem.valuations[t], Valuation::Worst) {
                    continue;
                }
                match problem.valuations[t].evaluate(grid, t, &st[t], tol) {
                    Ok(e) if e.value.is_finite() => {
                        val += e.value;
                        for (k, &(tt, b)) in slots.iter().enumerate() {
                            if tt == t {
                                g[k] += e.gradient[b];
                            }
                        }
                    }
                    _ => return (S::neg_infinity(), g),
                }
            }
            for x in 0..grid.path_count() {
                let mut s = problem.cost.0[x] - z[ns + nd];
                for (k, &(t, b)) in slots.iter().enumerate() {
                    if grid.block_of(x, t) == b {
                        s -= z[k];
                    }
                }
                for &(k, a) in &incr[x] {
                    s -= z[ns + k] * a;
                }
                if !(s > S::zero()) {
                    return (S::neg_infinity(), g);
                }
                val += mu * s.ln();
                let w = mu / s;
                for (k, &(t, b)) in slots.iter().enumerate() {
                    if grid.block_of(x, t) == b {
                        g[k] -= w;
                    }
                }
                for &(k, a) in &incr[x] {
                    g[ns + k] -= w * a;
                }
                g[ns + nd] -= w;
            }
            (val, g)
        };
        let (zn, _) = bfgs_maximize(
            f,
            z.clone(),
            BfgsOptions {
                max_iter: 200,
                grad_tol: S::c(1e-9),
                value_tol: S::c(1e-14),
            },
        );
        z = zn;
        let c = evaluate_candidate(problem, unpack(&z))?;
        if c.value.is_finite() && best.as_ref().is_none_or(|b| c.value > b.value) {
            best = Some(c);
        }
        mu *= S::c(0.2);
    }
    Ok(best)
}

/// Upper hedging value `-P(-g)`; the witness is sign-flipped so that
/// `sum phi + I >= g` pointwise.
pub fn superhedge<S: Scalar>(problem: &HedgeProblem<S>, g: &PathFunction<S>) -> Result<HedgeReport<S>> {
    let mut neg = problem.clone();
    neg.cost = g.map(|v| -v);
    neg.warm_starts = problem
        .warm_starts
        .iter()
        .map(|s| s.iter().map(|r| r.iter().map(|v| -*v).collect()).collect())
        .collect();
    let mut r = solve_sup(&neg)?;
    r.sup_value = -r.sup_value;
    for v in r.witness.statics.iter_mut().flatten() {
        *v = -*v;
    }
    for v in r.witness.dynamic.iter_mut().flatten().flatten() {
        *v = -*v;
    }
    for v in r.witness.cash.iter_mut() {
        *v = -*v;
    }
    for v in r.valuation_values.iter_mut() {
        *v = -*v;
    }
    for s in r.starts.iter_mut() {
        s.value = -s.value;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MarginalMeasure;
    use crate::penalties::PenaltySpec;
    use crate::solver::{solve_inf, SolverOptions};
    use crate::valuation::UtilityFunction;

    fn g1() -> MarketGrid<f64> {
        MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
    }

    fn call(g: &MarketGrid<f64>) -> PathFunction<f64> {
        PathFunction::from_fn(g, |p| (p.x(1, 0) - 1.0).max(0.0))
    }

    #[test]
    fn no_options_examples() {
        let g = g1();
        let (v, d) = subhedge_no_options(&g, &PathFunction::constant(&g, 2.5), &ConeSpec::Martingale).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        assert!(d.iter().flatten().flatten().all(|x| x.abs() < 1e-12));
        let (v, _) = subhedge_no_options(&g, &call(&g), &ConeSpec::Martingale).unwrap();
        assert!(v.abs() < 1e-12);
        let (v, d) =
            subhedge_no_options(&g, &PathFunction::from_fn(&g, |p| p.x(1, 0)), &ConeSpec::Martingale).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!((d[0][0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_marginal_sub_and_super_pin() {
        let g = g1();
        let u = MarginalMeasure::uniform(&g, 1).unwrap();
        let pen = PenaltySpec::fixed_marginals(&g, vec![u]).unwrap();
        let p = EmotProblem::new(g.clone(), call(&g), pen, ConeSpec::Martingale);
        let h = HedgeProblem::from_emot(&p);
        let sub = solve_sup(&h).unwrap();
        assert!((sub.sup_value - 1.0 / 3.0).abs() < 1e-9, "{}", sub.sup_value);
        let sup = superhedge(&h, &call(&g)).unwrap();
        assert!((sup.sup_value - 1.0 / 3.0).abs() < 1e-9, "{}", sup.sup_value);
        let f = feasible(&g, &sub.witness.statics, &sub.witness.dynamic, &call(&g).shift(-sub.witness.cash[0])).unwrap();
        assert!(f.feasible, "{:?}", f);
    }

    #[test]
    fn entropic_gap_closes_from_both_starts() {
        let g = g1();
        let pen =
            PenaltySpec::divergence(&g, UtilityFunction::exponential(), vec![MarginalMeasure::uniform(&g, 1).unwrap()])
                .unwrap();
        let p = EmotProblem::new(g.clone(), call(&g), pen, ConeSpec::Martingale)
            .with_options(SolverOptions::default().with_tol(1e-10));
        let inf = solve_inf(&p).unwrap();
        let h = HedgeProblem::from_emot(&p);
        let cold = solve_sup(&h).unwrap();
        assert!((cold.sup_value - inf.inf_value).abs() < 1e-6, "{} {}", cold.sup_value, inf.inf_value);
        let warm = solve_sup(&h.with_warm_start(inf.dual_statics.clone().unwrap())).unwrap();
        assert!(warm.sup_value <= inf.inf_value + 1e-8);
        assert!(inf.inf_value - warm.sup_value < 1e-8, "{} {}", warm.sup_value, inf.inf_value);
        assert!(warm.min_slack >= -1e-8);
    }

    #[test]
    fn calls_reassemble_the_static() {
        let nodes: [f64; 4] = [0.0, 1.0, 2.0, 4.0];
        let phi = [1.0, -1.0, 3.0, 0.5];
        let rows = call_decomposition(&nodes, &phi).unwrap();
        for (i, x) in nodes.iter().enumerate() {
            let v: f64 = rows
                .iter()
                .map(|(kind, k, w)| match *kind {
                    "cash" => *w,
                    "forward" => w * (x - k),
                    _ => w * (x - k).max(0.0),
                })
                .sum();
            assert!((v - phi[i]).abs() < 1e-12);
        }
    }
}
