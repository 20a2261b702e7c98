//! Builder for subhedging linear programs: maximize a cash amount plus
//! extra terms subject to `cash + I^Delta(x) + eps sum_t b_t + extra(x) <= rhs(x)`
//! on every path, with the sign restrictions of the hedging cone.

use crate::error::Result;
use crate::lattice::{zero_dynamic, ConeSpec, MarketGrid};
use crate::lp::{LinearProgram, LpOutcome, LpSolution, Relation, Var};
use crate::scalar::Scalar;

pub(crate) struct SubhedgeLp<S> {
    pub lp: LinearProgram<S>,
    pub cash: Var,
    /// `(t, j, prefix, var, sign)`: `Delta = sign * var`.
    dynamic: Vec<(usize, usize, usize, Var, S)>,
    budget: Vec<Var>,
    eps: S,
    /// Row index per path (`None` when the right-hand side is `+inf`).
    pub path_rows: Vec<Option<usize>>,
}

impl<S: Scalar> SubhedgeLp<S> {
    /// Creates cash and cone variables; the objective starts as `+cash`
    /// (the program is maximized).
    pub fn new(grid: &MarketGrid<S>, cone: &ConeSpec<S>) -> Self {
        let mut lp = LinearProgram::new();
        let cash = lp.add_free_var(S::one());
        let mut dynamic = Vec::new();
        let mut budget = Vec::new();
        let mut eps = S::zero();
        if !matches!(cone, ConeSpec::NullCone) {
            for t in 0..grid.horizon() {
                for j in 0..grid.num_assets() {
                    for p in 0..grid.prefix_count(t) {
                        let (v, sign) = match cone {
                            ConeSpec::NoShortSelling => (lp.add_var(S::zero()), -S::one()),
                            ConeSpec::NoLongBuying => (lp.add_var(S::zero()), S::one()),
                            _ => (lp.add_free_var(S::zero()), S::one()),
                        };
                        dynamic.push((t, j, p, v, sign));
                    }
                }
            }
        }
        if let ConeSpec::EpsMartingale { eps: e } = cone {
            eps = *e;
            for _ in 0..grid.horizon() {
                let b = lp.add_var(S::zero());
                budget.push(b);
            }
            for &(t, _, _, v, _) in &dynamic {
                lp.add_row(&[(v, S::one()), (budget[t], -S::one())], Relation::Le, S::zero());
                lp.add_row(&[(v, -S::one()), (budget[t], -S::one())], Relation::Le, S::zero());
            }
        }
        Self {
            lp,
            cash,
            dynamic,
            budget,
            eps,
            path_rows: Vec::new(),
        }
    }

    /// Adds one row per path with finite `rhs`; `extra(path)` supplies the
    /// additional coefficients.
    pub fn add_path_rows<F>(&mut self, grid: &MarketGrid<S>, rhs: &[S], mut extra: F)
    where
        F: FnMut(usize) -> Vec<(Var, S)>,
    {
        self.path_rows = (0..grid.path_count())
            .map(|x| {
                if rhs[x] == S::infinity() {
                    return None;
                }
                let mut coeffs = vec![(self.cash, S::one())];
                for &(t, j, p, v, sign) in &self.dynamic {
                    if grid.prefix_of(x, t) == p {
                        let incr = grid.value(x, t + 1, j) - grid.value(x, t, j);
                        if incr != S::zero() {
                            coeffs.push((v, sign * incr));
                        }
                    }
                }
                for &b in &self.budget {
                    coeffs.push((b, self.eps));
                }
                coeffs.extend(extra(x));
                Some(self.lp.add_row(&coeffs, Relation::Le, rhs[x]))
            })
            .collect();
    }

    pub fn maximize(&self) -> LpOutcome<S> {
        self.lp.maximize()
    }

    pub fn dynamic_table(&self, grid: &MarketGrid<S>, sol: &LpSolution<S>) -> Vec<Vec<Vec<S>>> {
        let mut d = zero_dynamic(grid);
        for &(t, j, p, v, sign) in &self.dynamic {
            d[t][j][p] = sign * sol.x[v.0];
        }
        d
    }

    pub fn budget_values(&self, sol: &LpSolution<S>) -> Vec<S> {
        self.budget.iter().map(|b| sol.x[b.0]).collect()
    }

    /// Path weights read off the row duals (a measure in the polar cone).
    pub fn path_measure(&self, sol: &LpSolution<S>) -> Vec<S> {
        self.path_rows
            .iter()
            .map(|r| r.map(|r| sol.duals[r].max(S::zero())).unwrap_or_else(S::zero))
            .collect()
    }
}

/// Outcome of a subhedging LP that may be unbounded above.
pub(crate) enum Bounded<S> {
    Value(LpSolution<S>),
    PlusInfinity,
}

pub(crate) fn solve_max<S: Scalar>(lp: &SubhedgeLp<S>) -> Result<Bounded<S>> {
    match lp.maximize() {
        LpOutcome::Optimal(s) => Ok(Bounded::Value(s)),
        LpOutcome::Unbounded => Ok(Bounded::PlusInfinity),
        other => other.optimal().map(Bounded::Value),
    }
}
