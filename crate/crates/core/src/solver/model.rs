//! Translation of a penalized problem into a polytope over path and
//! auxiliary variables plus a separable smooth term.

use crate::error::{EmotError, Result};
use crate::lattice::{ConeSpec, MarketGrid, PathFunction};
use crate::lp::{LinearProgram, Relation, Var};
use crate::penalties::{LossFunction, MarketOption, PenaltySpec, WassersteinTerm};
use crate::polytope::{add_cone_rows, add_martingale_copy, add_simplex_row, marginal_coeffs};
use crate::scalar::Scalar;
use crate::valuation::{UtilityFunction, UtilityKind};
use crate::wasserstein::GroundMetric;

/// One-dimensional convex term on a single variable.
#[derive(Debug, Clone)]
pub(crate) enum SmoothKind<S> {
    /// `r v*(m / r)`.
    Divergence { reference: S, utility: UtilityFunction<S> },
    /// `G(z)`.
    Loss(LossFunction<S>),
}

impl<S: Scalar> SmoothKind<S> {
    pub fn value(&self, x: S) -> S {
        let x = if x < S::zero() && x > -S::c(1e-13) { S::zero() } else { x };
        match self {
            SmoothKind::Divergence { reference, utility } => *reference * utility.conjugate(x / *reference),
            SmoothKind::Loss(g) => g.eval(x),
        }
    }

    pub fn derivative(&self, x: S) -> S {
        match self {
            SmoothKind::Divergence { reference, utility } => utility.conjugate_derivative(x / *reference),
            SmoothKind::Loss(g) => g.derivative(x),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Smooth<S> {
    pub var: Var,
    pub kind: SmoothKind<S>,
}

#[derive(Debug, Clone)]
pub(crate) struct Model<S> {
    /// Feasible polytope; costs hold the linear part of the objective.
    pub lp: LinearProgram<S>,
    pub path_vars: Vec<Option<Var>>,
    /// Per date: the marginal definition rows `m_b - sum_{x in b} Q(x) = 0`.
    pub marginal_rows: Vec<Option<Vec<usize>>>,
    pub smooth: Vec<Smooth<S>>,
}

impl<S: Scalar> Model<S> {
    pub fn is_linear(&self) -> bool {
        self.smooth.is_empty()
    }

    pub fn objective(&self, x: &[S]) -> S {
        let mut v: S = self.lp.costs().iter().zip(x).map(|(c, xi)| *c * *xi).sum();
        for s in &self.smooth {
            v += s.kind.value(x[s.var.0]);
        }
        v
    }

    /// `phi_t = -pi_t` read off the marginal definition rows.
    pub fn statics_from_duals(&self, grid: &MarketGrid<S>, duals: &[S]) -> Vec<Vec<S>> {
        (0..=grid.horizon())
            .map(|t| match &self.marginal_rows[t] {
                Some(rows) => rows.iter().map(|r| -duals[*r]).collect(),
                None => vec![S::zero(); grid.block_size(t)],
            })
            .collect()
    }

    pub fn path_weights(&self, x: &[S]) -> Vec<S> {
        self.path_vars
            .iter()
            .map(|v| v.map(|v| x[v.0].max(S::zero())).unwrap_or_else(S::zero))
            .collect()
    }
}

struct Builder<'a, S> {
    grid: &'a MarketGrid<S>,
    cone: &'a ConeSpec<S>,
    lp: LinearProgram<S>,
    path_vars: Vec<Option<Var>>,
    smooth: Vec<Smooth<S>>,
}

impl<'a, S: Scalar> Builder<'a, S> {
    /// Marginal variables at `t` with their definition rows.
    fn marginal(&mut self, t: usize) -> (Vec<Var>, Vec<usize>) {
        let mut vars = Vec::new();
        let mut rows = Vec::new();
        for b in 0..self.grid.block_size(t) {
            let m = self.lp.add_var(S::zero());
            let mut coeffs: Vec<(Var, S)> = marginal_coeffs(self.grid, &self.path_vars, t, b)
                .into_iter()
                .map(|(v, a)| (v, -a))
                .collect();
            coeffs.push((m, S::one()));
            rows.push(self.lp.add_row(&coeffs, Relation::Eq, S::zero()));
            vars.push(m);
        }
        (vars, rows)
    }

    /// Ties the marginal to a fresh martingale measure when the cone does
    /// not already force one.
    fn restrict_to_martingale_marginal(&mut self, t: usize, m: &[Var]) {
        if matches!(self.cone, ConeSpec::Martingale) {
            return;
        }
        let copy = add_martingale_copy(&mut self.lp, self.grid);
        for (b, mv) in m.iter().enumerate() {
            let mut coeffs = marginal_coeffs(self.grid, &copy, t, b);
            coeffs.push((*mv, -S::one()));
            self.lp.add_row(&coeffs, Relation::Eq, S::zero());
        }
    }

    fn divergence(&mut self, m: &[Var], reference: &[S], u: &UtilityFunction<S>) {
        for (b, mv) in m.iter().enumerate() {
            let r = reference[b];
            if r > S::zero() {
                match u.kind {
                    UtilityKind::Linear => {
                        self.lp.add_row(&[(*mv, S::one())], Relation::Eq, r);
                    }
                    UtilityKind::PiecewiseLinear { alpha } => {
                        self.lp.add_row(&[(*mv, S::one())], Relation::Le, alpha * r);
                    }
                    _ => self.smooth.push(Smooth {
                        var: *mv,
                        kind: SmoothKind::Divergence {
                            reference: r,
                            utility: u.clone(),
                        },
                    }),
                }
            } else {
                let slope = u.singular_slope();
                if slope == S::infinity() {
                    self.lp.add_row(&[(*mv, S::one())], Relation::Eq, S::zero());
                } else {
                    self.lp.set_cost(*mv, slope);
                }
            }
        }
    }

    fn market(&mut self, m: &[Var], options: &[MarketOption<S>]) {
        for o in options {
            let expr: Vec<(Var, S)> = m.iter().zip(&o.payoff).map(|(v, f)| (*v, *f)).collect();
            match o.loss {
                LossFunction::Zero => {}
                LossFunction::Threshold { .. } | LossFunction::Hard => {
                    let r = o.loss.radius().unwrap_or_else(S::zero);
                    self.lp.add_row(&expr, Relation::Le, o.price + r);
                    self.lp.add_row(&expr, Relation::Ge, o.price - r);
                }
                LossFunction::Power { .. } => {
                    let bound = o.payoff.iter().map(|f| (*f - o.price).abs()).fold(S::zero(), S::max);
                    let z = self.abs_epigraph(&expr, o.price, bound);
                    self.smooth.push(Smooth {
                        var: z,
                        kind: SmoothKind::Loss(o.loss),
                    });
                }
            }
        }
    }

    /// `z >= |expr - c|`, `z <= bound`.
    fn abs_epigraph(&mut self, expr: &[(Var, S)], c: S, bound: S) -> Var {
        let z = self.lp.add_var(S::zero());
        let mut up = expr.iter().map(|&(v, a)| (v, -a)).collect::<Vec<_>>();
        up.push((z, S::one()));
        self.lp.add_row(&up, Relation::Ge, -c);
        let mut down = expr.to_vec();
        down.push((z, S::one()));
        self.lp.add_row(&down, Relation::Ge, c);
        self.lp.add_row(&[(z, S::one())], Relation::Le, bound);
        z
    }

    /// Linear expression equal to `W_1(m, ref)` at the optimum of any
    /// objective nondecreasing in it.
    fn wasserstein_expr(&mut self, m: &[Var], term: &WassersteinTerm<S>) -> Result<(Vec<(Var, S)>, S)> {
        let support = &term.reference.support;
        let table = term.metric.table(support)?;
        let diam = table.iter().flatten().fold(S::zero(), |a, b| a.max(*b));
        let n = support.len();
        if matches!(term.metric, GroundMetric::Euclidean) && term.metric.is_line(support) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| support[*a][0].partial_cmp(&support[*b][0]).unwrap());
            let mut expr = Vec::new();
            let mut cum_ref = S::zero();
            for k in 0..n.saturating_sub(1) {
                cum_ref += term.reference.weights[order[k]];
                let gap = support[order[k + 1]][0] - support[order[k]][0];
                let cdf: Vec<(Var, S)> = order[..=k].iter().map(|&i| (m[i], S::one())).collect();
                let e = self.abs_epigraph(&cdf, cum_ref, S::one());
                expr.push((e, gap));
            }
            Ok((expr, diam))
        } else {
            let mut expr = Vec::new();
            let mut cols: Vec<Vec<(Var, S)>> = vec![Vec::new(); n];
            for i in 0..n {
                let mut row = Vec::new();
                for k in 0..n {
                    let p = self.lp.add_var(S::zero());
                    row.push((p, S::one()));
                    cols[k].push((p, S::one()));
                    if table[i][k] != S::zero() {
                        expr.push((p, table[i][k]));
                    }
                }
                row.push((m[i], -S::one()));
                self.lp.add_row(&row, Relation::Eq, S::zero());
            }
            for (k, col) in cols.iter().enumerate() {
                self.lp.add_row(col, Relation::Eq, term.reference.weights[k]);
            }
            Ok((expr, diam))
        }
    }

    fn wasserstein(&mut self, m: &[Var], term: &WassersteinTerm<S>) -> Result<()> {
        if matches!(term.loss, LossFunction::Zero) {
            return Ok(());
        }
        let (expr, diam) = self.wasserstein_expr(m, term)?;
        match term.loss {
            LossFunction::Threshold { .. } | LossFunction::Hard => {
                let r = term.loss.radius().unwrap_or_else(S::zero);
                self.lp.add_row(&expr, Relation::Le, r);
            }
            LossFunction::Power { .. } => {
                let w = self.lp.add_var(S::zero());
                let mut row: Vec<(Var, S)> = expr.iter().map(|&(v, a)| (v, -a)).collect();
                row.push((w, S::one()));
                self.lp.add_row(&row, Relation::Ge, S::zero());
                self.lp.add_row(&[(w, S::one())], Relation::Le, diam);
                self.smooth.push(Smooth {
                    var: w,
                    kind: SmoothKind::Loss(term.loss),
                });
            }
            LossFunction::Zero => {}
        }
        Ok(())
    }
}

pub(crate) fn build_model<S: Scalar>(
    grid: &MarketGrid<S>,
    cost: &PathFunction<S>,
    penalty: &PenaltySpec<S>,
    cone: &ConeSpec<S>,
) -> Result<Model<S>> {
    cost.check_len(grid)?;
    cost.check_cost()?;
    penalty.validate(grid)?;
    cone.validate()?;
    let mut lp = LinearProgram::new();
    let path_vars: Vec<Option<Var>> = cost
        .values()
        .iter()
        .map(|c| (*c != S::infinity()).then(|| lp.add_var(*c)))
        .collect();
    if path_vars.iter().all(|v| v.is_none()) {
        return Err(EmotError::Precondition("cost is +inf on every path".into()));
    }
    add_simplex_row(&mut lp, &path_vars);
    add_cone_rows(&mut lp, grid, &path_vars, cone);
    let mut b = Builder {
        grid,
        cone,
        lp,
        path_vars,
        smooth: Vec::new(),
    };
    let mut marginal_rows = vec![None; grid.horizon() + 1];
    for (t, slot) in marginal_rows.iter_mut().enumerate() {
        if !penalty.is_active(t) {
            continue;
        }
        let (m, rows) = b.marginal(t);
        *slot = Some(rows);
        match penalty {
            PenaltySpec::FixedMarginals(v) => {
                let target = v[t].as_ref().expect("active");
                for (mv, w) in m.iter().zip(&target.weights) {
                    b.lp.add_row(&[(*mv, S::one())], Relation::Eq, *w);
                }
            }
            PenaltySpec::DivergenceSum(v) => {
                let d = v[t].as_ref().expect("active");
                b.divergence(&m, &d.reference.weights, &d.utility);
            }
            PenaltySpec::MarketPrice(v) => {
                b.restrict_to_martingale_marginal(t, &m);
                b.market(&m, &v[t]);
            }
            PenaltySpec::WassersteinBall(v) => {
                let w = v[t].as_ref().expect("active");
                b.restrict_to_martingale_marginal(t, &m);
                b.wasserstein(&m, w)?;
            }
        }
    }
    Ok(Model {
        lp: b.lp,
        path_vars: b.path_vars,
        marginal_rows,
        smooth: b.smooth,
    })
}
