//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Every row receives an artificial column, so the final tableau carries
//! `B^{-1}` in the artificial block and row duals come for free. Free
//! variables are split into positive and negative parts internally.
//!
//! [`LpOracle`] keeps the phase-one basis alive so that a sequence of
//! objectives over the same polytope (the linear minimization oracle of a
//! conditional-gradient method) can be solved from a warm start.

use serde::Serialize;

use crate::error::{EmotError, Result};
use crate::scalar::Scalar;

/// Handle to a decision variable of a [`LinearProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarKind {
    NonNeg,
    Free,
}

#[derive(Debug, Clone)]
struct Row<S> {
    coeffs: Vec<(usize, S)>,
    rel: Relation,
    rhs: S,
}

/// A linear program `min c.x` over rows `a.x {<=,>=,=} b` with
/// nonnegative or free variables.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram<S> {
    costs: Vec<S>,
    kinds: Vec<VarKind>,
    rows: Vec<Row<S>>,
}

/// Primal/dual optimum of a [`LinearProgram`].
#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub value: S,
    /// Primal values indexed like the variables.
    pub x: Vec<S>,
    /// Row duals `y` with `c - A^T y >= 0` on nonnegative columns
    /// (sign convention of a minimization).
    pub duals: Vec<S>,
    /// Largest `|x_j * reduced_cost_j|` over structural columns.
    pub complementary_slackness: S,
    pub pivots: usize,
}

/// Farkas-type evidence of infeasibility: a row combination `y` with
/// `y^T A <= 0` on every nonnegative column, `= 0` on free columns and
/// `y^T b > 0`.
#[derive(Debug, Clone, Serialize)]
pub struct FarkasCertificate<S> {
    pub row_weights: Vec<S>,
    pub phase_one_residual: S,
}

#[derive(Debug, Clone)]
pub enum LpOutcome<S> {
    Optimal(LpSolution<S>),
    Infeasible(FarkasCertificate<S>),
    Unbounded,
}

impl<S> LpOutcome<S> {
    pub fn optimal(self) -> Result<LpSolution<S>>
    where
        S: Scalar,
    {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            LpOutcome::Infeasible(cert) => Err(EmotError::Infeasible {
                residual: cert.phase_one_residual.to_f64_lossy(),
            }),
            LpOutcome::Unbounded => Err(EmotError::Unbounded),
        }
    }
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new() -> Self {
        Self {
            costs: Vec::new(),
            kinds: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds a variable constrained to be `>= 0`.
    pub fn add_var(&mut self, cost: S) -> Var {
        self.costs.push(cost);
        self.kinds.push(VarKind::NonNeg);
        Var(self.costs.len() - 1)
    }

    /// Adds an unrestricted variable.
    pub fn add_free_var(&mut self, cost: S) -> Var {
        self.costs.push(cost);
        self.kinds.push(VarKind::Free);
        Var(self.costs.len() - 1)
    }

    pub fn set_cost(&mut self, v: Var, cost: S) {
        self.costs[v.0] = cost;
    }

    pub fn costs(&self) -> &[S] {
        &self.costs
    }

    /// Adds a row and returns its index (used to read its dual).
    pub fn add_row(&mut self, coeffs: &[(Var, S)], rel: Relation, rhs: S) -> usize {
        let mut merged: Vec<(usize, S)> = Vec::with_capacity(coeffs.len());
        for &(v, a) in coeffs {
            assert!(v.0 < self.costs.len(), "row references unknown variable");
            if let Some(e) = merged.iter_mut().find(|e| e.0 == v.0) {
                e.1 += a;
            } else {
                merged.push((v.0, a));
            }
        }
        self.rows.push(Row {
            coeffs: merged,
            rel,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn minimize(&self) -> LpOutcome<S> {
        let mut tab = match Tableau::build(self) {
            Ok(t) => t,
            Err(cert) => return LpOutcome::Infeasible(cert),
        };
        let costs = self.costs.clone();
        match tab.phase_two(&costs) {
            Ok(()) => LpOutcome::Optimal(tab.solution(self, &costs)),
            Err(()) => LpOutcome::Unbounded,
        }
    }

    /// Maximizes `c.x`; the returned value and duals are those of the
    /// maximization (`y` with `A^T y >= c` on nonnegative columns).
    pub fn maximize(&self) -> LpOutcome<S> {
        let mut neg = self.clone();
        for c in neg.costs.iter_mut() {
            *c = -*c;
        }
        match neg.minimize() {
            LpOutcome::Optimal(mut s) => {
                s.value = -s.value;
                for y in s.duals.iter_mut() {
                    *y = -*y;
                }
                LpOutcome::Optimal(s)
            }
            other => other,
        }
    }

    /// Runs phase one once and returns a reusable oracle for objectives
    /// over the same feasible set.
    pub fn into_oracle(self) -> std::result::Result<LpOracle<S>, FarkasCertificate<S>> {
        let tab = Tableau::build(&self)?;
        Ok(LpOracle { lp: self, tab })
    }
}

/// Warm-started repeated minimization over a fixed polytope.
#[derive(Debug, Clone)]
pub struct LpOracle<S> {
    lp: LinearProgram<S>,
    tab: Tableau<S>,
}

impl<S: Scalar> LpOracle<S> {
    pub fn num_vars(&self) -> usize {
        self.lp.num_vars()
    }

    /// Minimizes `costs . x`; `costs` is indexed like the variables.
    pub fn minimize(&mut self, costs: &[S]) -> Result<LpSolution<S>> {
        assert_eq!(costs.len(), self.lp.num_vars());
        self.tab
            .phase_two(costs)
            .map_err(|_| EmotError::Unbounded)?;
        Ok(self.tab.solution(&self.lp, costs))
    }
}

#[derive(Debug, Clone)]
struct Tableau<S> {
    /// `m` rows of `ncols + 1` entries; last entry is the right-hand side.
    a: Vec<Vec<S>>,
    /// Reduced-cost row, `ncols + 1` entries; last entry is `-objective`.
    d: Vec<S>,
    basis: Vec<usize>,
    /// Column of each structural variable's positive part (and negative
    /// part for free variables).
    pos_col: Vec<usize>,
    neg_col: Vec<Option<usize>>,
    art_start: usize,
    ncols: usize,
    row_flipped: Vec<bool>,
    tol: S,
    pivots: usize,
}

impl<S: Scalar> Tableau<S> {
    fn build(lp: &LinearProgram<S>) -> std::result::Result<Self, FarkasCertificate<S>> {
        let m = lp.rows.len();
        let mut pos_col = Vec::with_capacity(lp.costs.len());
        let mut neg_col = Vec::with_capacity(lp.costs.len());
        let mut ncols = 0;
        for k in &lp.kinds {
            pos_col.push(ncols);
            ncols += 1;
            if *k == VarKind::Free {
                neg_col.push(Some(ncols));
                ncols += 1;
            } else {
                neg_col.push(None);
            }
        }
        let slack_start = ncols;
        let nslack = lp.rows.iter().filter(|r| r.rel != Relation::Eq).count();
        let art_start = slack_start + nslack;
        let total = art_start + m;

        let mut a = vec![vec![S::zero(); total + 1]; m];
        let mut row_flipped = vec![false; m];
        let mut slack = slack_start;
        for (i, row) in lp.rows.iter().enumerate() {
            let flip = row.rhs < S::zero();
            row_flipped[i] = flip;
            let sgn = if flip { -S::one() } else { S::one() };
            for &(v, coef) in &row.coeffs {
                a[i][pos_col[v]] += sgn * coef;
                if let Some(nc) = neg_col[v] {
                    a[i][nc] -= sgn * coef;
                }
            }
            match row.rel {
                Relation::Le => {
                    a[i][slack] = sgn;
                    slack += 1;
                }
                Relation::Ge => {
                    a[i][slack] = -sgn;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            a[i][art_start + i] = S::one();
            a[i][total] = sgn * row.rhs;
        }

        let scale = lp
            .rows
            .iter()
            .flat_map(|r| r.coeffs.iter().map(|c| c.1.abs()).chain(std::iter::once(r.rhs.abs())))
            .fold(S::one(), |acc, v| acc.max(v));
        let mut tab = Tableau {
            a,
            d: vec![S::zero(); total + 1],
            basis: (art_start..art_start + m).collect(),
            pos_col,
            neg_col,
            art_start,
            ncols: total,
            row_flipped,
            tol: S::pivot_tol() * scale,
            pivots: 0,
        };

        // Phase one: minimize the sum of artificials.
        let mut c1 = vec![S::zero(); total];
        for c in c1.iter_mut().skip(art_start) {
            *c = S::one();
        }
        tab.price(&c1);
        tab.run(true).expect("phase one is bounded below by zero");
        let residual = -tab.d[total];
        if residual > tab.tol * S::c(10.0) {
            // Duals of phase one: y_i = c_B B^{-1} e_i = 1 - d_{art_i}.
            let row_weights = (0..m)
                .map(|i| {
                    let y = S::one() - tab.d[art_start + i];
                    if tab.row_flipped[i] {
                        -y
                    } else {
                        y
                    }
                })
                .collect();
            return Err(FarkasCertificate {
                row_weights,
                phase_one_residual: residual,
            });
        }
        tab.purge_artificials();
        Ok(tab)
    }

    /// Drives basic artificials (at level zero) out of the basis when a
    /// non-artificial pivot exists; otherwise the row is redundant.
    fn purge_artificials(&mut self) {
        for r in 0..self.a.len() {
            if self.basis[r] < self.art_start {
                continue;
            }
            let mut best: Option<(usize, S)> = None;
            for j in 0..self.art_start {
                let v = self.a[r][j].abs();
                if v > self.tol && best.is_none_or(|b| v > b.1) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                self.pivot(r, j);
            }
        }
    }

    /// Recomputes the reduced-cost row for `costs` over all columns
    /// (artificial costs default to zero when `costs` is shorter).
    fn price(&mut self, costs: &[S]) {
        let total = self.ncols;
        for j in 0..=total {
            self.d[j] = if j < costs.len() { costs[j] } else { S::zero() };
        }
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = if b < costs.len() { costs[b] } else { S::zero() };
            if cb != S::zero() {
                for j in 0..=total {
                    self.d[j] -= cb * self.a[r][j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, col: usize) {
        self.pivots += 1;
        let total = self.ncols;
        let p = self.a[r][col];
        for j in 0..=total {
            self.a[r][j] /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != S::zero() {
                for j in 0..=total {
                    row[j] -= f * pivot_row[j];
                }
                row[col] = S::zero();
            }
        }
        let f = self.d[col];
        if f != S::zero() {
            for j in 0..=total {
                self.d[j] -= f * pivot_row[j];
            }
            self.d[col] = S::zero();
        }
        self.basis[r] = col;
    }

    /// Bland's rule simplex iterations on the current reduced-cost row.
    fn run(&mut self, allow_artificial: bool) -> std::result::Result<(), ()> {
        let limit = if allow_artificial { self.ncols } else { self.art_start };
        let total = self.ncols;
        let max_pivots = 50_000 + 100 * total * self.a.len().max(1);
        let mut count = 0;
        loop {
            let entering = (0..limit).find(|&j| self.d[j] < -self.tol);
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, S)> = None;
            for r in 0..self.a.len() {
                let arc = self.a[r][col];
                if arc > self.tol {
                    let ratio = self.a[r][total] / arc;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let better = ratio < lratio - self.tol
                                || (ratio <= lratio + self.tol && self.basis[r] < self.basis[lr]);
                            if better {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else { return Err(()) };
            self.pivot(r, col);
            count += 1;
            if count > max_pivots {
                // Bland's rule terminates in exact arithmetic; this guards
                // against floating-point stalls only.
                return Ok(());
            }
        }
    }

    fn phase_two(&mut self, costs: &[S]) -> std::result::Result<(), ()> {
        let mut full = vec![S::zero(); self.art_start];
        for (v, &c) in costs.iter().enumerate() {
            full[self.pos_col[v]] = c;
            if let Some(nc) = self.neg_col[v] {
                full[nc] = -c;
            }
        }
        self.price(&full);
        self.run(false)
    }

    fn solution(&self, lp: &LinearProgram<S>, costs: &[S]) -> LpSolution<S> {
        let total = self.ncols;
        let mut col_val = vec![S::zero(); total];
        for (r, &b) in self.basis.iter().enumerate() {
            col_val[b] = self.a[r][total].max(S::zero());
        }
        let x: Vec<S> = (0..lp.costs.len())
            .map(|v| {
                let p = col_val[self.pos_col[v]];
                match self.neg_col[v] {
                    Some(nc) => p - col_val[nc],
                    None => p,
                }
            })
            .collect();
        let duals: Vec<S> = (0..self.a.len())
            .map(|i| {
                let y = -self.d[self.art_start + i];
                if self.row_flipped[i] {
                    -y
                } else {
                    y
                }
            })
            .collect();
        let value = x.iter().zip(costs).map(|(&xi, &ci)| xi * ci).sum();
        let complementary_slackness = (0..self.art_start)
            .map(|j| (col_val[j] * self.d[j]).abs())
            .fold(S::zero(), S::max);
        LpSolution {
            value,
            x,
            duals,
            complementary_slackness,
            pivots: self.pivots,
        }
    }
}
