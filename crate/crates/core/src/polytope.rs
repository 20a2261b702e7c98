//! Linear rows shared by the measure-side programs: simplex, cone
//! (martingale, super/sub-martingale, eps-martingale) and marginal rows.

use crate::lattice::{ConeSpec, MarketGrid};
use crate::lp::{LinearProgram, Relation, Var};
use crate::scalar::Scalar;

/// Adds `sum Q = 1` and returns the row index.
pub(crate) fn add_simplex_row<S: Scalar>(lp: &mut LinearProgram<S>, path_vars: &[Option<Var>]) -> usize {
    let coeffs: Vec<(Var, S)> = path_vars.iter().flatten().map(|v| (*v, S::one())).collect();
    lp.add_row(&coeffs, Relation::Eq, S::one())
}

/// Conditional-increment expression `m_{t,j}(p)` as LP coefficients.
fn residual_coeffs<S: Scalar>(
    grid: &MarketGrid<S>,
    path_vars: &[Option<Var>],
    t: usize,
    j: usize,
    p: usize,
) -> Vec<(Var, S)> {
    let block = grid.suffix_count(t);
    (p * block..(p + 1) * block)
        .filter_map(|x| {
            let v = path_vars[x]?;
            let incr = grid.value(x, t + 1, j) - grid.value(x, t, j);
            (incr != S::zero()).then_some((v, incr))
        })
        .collect()
}

/// Adds the polar-cone rows for `cone` over the path variables.
pub(crate) fn add_cone_rows<S: Scalar>(
    lp: &mut LinearProgram<S>,
    grid: &MarketGrid<S>,
    path_vars: &[Option<Var>],
    cone: &ConeSpec<S>,
) {
    for t in 0..grid.horizon() {
        let mut budget: Vec<(Var, S)> = Vec::new();
        for j in 0..grid.num_assets() {
            for p in 0..grid.prefix_count(t) {
                let mut coeffs = residual_coeffs(grid, path_vars, t, j, p);
                match cone {
                    ConeSpec::Martingale => {
                        lp.add_row(&coeffs, Relation::Eq, S::zero());
                    }
                    ConeSpec::NoShortSelling => {
                        lp.add_row(&coeffs, Relation::Le, S::zero());
                    }
                    ConeSpec::NoLongBuying => {
                        lp.add_row(&coeffs, Relation::Ge, S::zero());
                    }
                    ConeSpec::EpsMartingale { .. } => {
                        // r >= |m|
                        let r = lp.add_var(S::zero());
                        coeffs.push((r, -S::one()));
                        lp.add_row(&coeffs, Relation::Le, S::zero());
                        let neg: Vec<(Var, S)> = coeffs
                            .iter()
                            .map(|&(v, a)| if v == r { (v, a) } else { (v, -a) })
                            .collect();
                        lp.add_row(&neg, Relation::Le, S::zero());
                        budget.push((r, S::one()));
                    }
                    ConeSpec::NullCone => {}
                }
            }
        }
        if let ConeSpec::EpsMartingale { eps } = cone {
            lp.add_row(&budget, Relation::Le, *eps);
        }
    }
}

/// Coefficients of the time-`t` marginal weight at product node `block`.
pub(crate) fn marginal_coeffs<S: Scalar>(
    grid: &MarketGrid<S>,
    path_vars: &[Option<Var>],
    t: usize,
    block: usize,
) -> Vec<(Var, S)> {
    (0..grid.path_count())
        .filter(|&x| grid.block_of(x, t) == block)
        .filter_map(|x| path_vars[x].map(|v| (v, S::one())))
        .collect()
}

/// Fresh martingale probability on the grid (all paths), returning its
/// path variables.
pub(crate) fn add_martingale_copy<S: Scalar>(lp: &mut LinearProgram<S>, grid: &MarketGrid<S>) -> Vec<Option<Var>> {
    let vars: Vec<Option<Var>> = (0..grid.path_count()).map(|_| Some(lp.add_var(S::zero()))).collect();
    add_simplex_row(lp, &vars);
    add_cone_rows(lp, grid, &vars, &ConeSpec::Martingale);
    vars
}
