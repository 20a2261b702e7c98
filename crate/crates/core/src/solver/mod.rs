//! Measure-side solver: `inf_Q E_Q[c] + D(Q)` over probabilities in the
//! polar of the hedging cone.

mod fw;
mod model;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{EmotError, Result};
use crate::lattice::{martingale_residuals, ConeSpec, MarginalMeasure, MarketGrid, PathFunction, PathMeasure};
use crate::lp::{FarkasCertificate, LinearProgram, LpOutcome, Relation};
use crate::oracle;
use crate::penalties::PenaltySpec;
use crate::polytope::{add_cone_rows, add_simplex_row};
use crate::scalar::Scalar;
use crate::valuation::UtilityKind;

pub(crate) use model::{build_model, Model};

pub const DEFAULT_LP_TOL: f64 = 1e-8;
pub const DEFAULT_FW_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 50_000;
pub const DEFAULT_MAX_VARS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Linear program when the objective is polyhedral, else conditional gradient.
    #[default]
    Auto,
    Lp,
    #[serde(rename = "fw")]
    FrankWolfe,
    Oracle,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Auto => "auto",
            Backend::Lp => "lp",
            Backend::FrankWolfe => "fw",
            Backend::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions<S> {
    pub backend: Backend,
    /// `None` picks the backend default.
    pub tol: Option<S>,
    pub max_iter: usize,
    pub seed: u64,
    pub max_vars: usize,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            tol: None,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            max_vars: DEFAULT_MAX_VARS,
        }
    }
}

impl<S: Scalar> SolverOptions<S> {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_tol(mut self, tol: S) -> Self {
        self.tol = Some(tol);
        self
    }
}

#[derive(Debug, Clone)]
pub struct EmotProblem<S> {
    pub grid: MarketGrid<S>,
    pub cost: PathFunction<S>,
    pub penalty: PenaltySpec<S>,
    pub cone: ConeSpec<S>,
    pub options: SolverOptions<S>,
}

impl<S: Scalar> EmotProblem<S> {
    pub fn new(grid: MarketGrid<S>, cost: PathFunction<S>, penalty: PenaltySpec<S>, cone: ConeSpec<S>) -> Self {
        Self {
            grid,
            cost,
            penalty,
            cone,
            options: SolverOptions::default(),
        }
    }

    pub fn with_options(mut self, options: SolverOptions<S>) -> Self {
        self.options = options;
        self
    }

    pub fn with_cost(&self, cost: PathFunction<S>) -> Self {
        let mut p = self.clone();
        p.cost = cost;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveStatus<S> {
    Optimal,
    GapCertified { gap: S },
    IterationLimit,
    Infeasible,
}

impl<S> SolveStatus<S> {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapCertified { .. } => "gap_certified",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GapCertified { .. })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary<S> {
    pub max_abs: S,
    pub l1_per_time: Vec<S>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<S> {
    pub status: SolveStatus<S>,
    /// `+inf` when the feasible set is empty or every candidate has
    /// infinite penalty.
    pub inf_value: S,
    pub optimizer: Option<PathMeasure<S>>,
    pub residuals: Option<ResidualSummary<S>>,
    /// Upper bound on `inf_value - true infimum`.
    pub gap: S,
    pub backend: &'static str,
    pub iterations: usize,
    pub wall_time_ms: f64,
    /// Static prices `phi_t` read from the linearized problem's duals.
    pub dual_statics: Option<Vec<Vec<S>>>,
    pub certificate: Option<FarkasCertificate<S>>,
    pub note: Option<String>,
}

impl<S: Scalar> SolveReport<S> {
    fn infeasible(backend: &'static str, certificate: Option<FarkasCertificate<S>>, note: &str, start: Instant) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            inf_value: S::infinity(),
            optimizer: None,
            residuals: None,
            gap: S::zero(),
            backend,
            iterations: 0,
            wall_time_ms: elapsed_ms(start),
            dual_statics: None,
            certificate,
            note: Some(note.to_string()),
        }
    }

    /// Optimizer as CSV rows `path,x_0_0,...,weight`.
    pub fn optimizer_csv(&self, grid: &MarketGrid<S>) -> Option<String> {
        let q = self.optimizer.as_ref()?;
        let mut out = String::from("path");
        for t in 0..=grid.horizon() {
            for j in 0..grid.num_assets() {
                out.push_str(&format!(",x{t}_{j}"));
            }
        }
        out.push_str(",weight\n");
        for (i, w) in q.weights().iter().enumerate() {
            out.push_str(&i.to_string());
            for t in 0..=grid.horizon() {
                for j in 0..grid.num_assets() {
                    out.push_str(&format!(",{}", grid.value(i, t, j)));
                }
            }
            out.push_str(&format!(",{w}\n"));
        }
        Some(out)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn residual_summary<S: Scalar>(grid: &MarketGrid<S>, q: &PathMeasure<S>) -> Result<ResidualSummary<S>> {
    let r = martingale_residuals(grid, q)?;
    Ok(ResidualSummary {
        max_abs: r.max_abs(),
        l1_per_time: r.l1_per_time(),
    })
}

/// Exact minimum of a linear objective over the cone polytope.
#[derive(Debug, Clone, Serialize)]
pub struct LpMinimum<S> {
    pub value: S,
    pub measure: PathMeasure<S>,
    /// Duals of the extra rows, in order.
    pub row_duals: Vec<S>,
    pub complementary_slackness: S,
}

/// An additional linear row `sum_x coeffs[x] Q(x) rel rhs`.
#[derive(Debug, Clone)]
pub struct PathRow<S> {
    pub coeffs: Vec<S>,
    pub relation: Relation,
    pub rhs: S,
}

/// Minimizes `E_Q[objective]` over `{Q >= 0, sum Q = 1, cone rows, extra rows}`.
pub fn lp_minimize<S: Scalar>(
    grid: &MarketGrid<S>,
    objective: &PathFunction<S>,
    cone: &ConeSpec<S>,
    rows: &[PathRow<S>],
) -> Result<LpMinimum<S>> {
    objective.check_len(grid)?;
    if grid.path_count() > DEFAULT_MAX_VARS {
        return Err(EmotError::TooLarge(format!("{} path variables", grid.path_count())));
    }
    let mut lp = LinearProgram::new();
    let vars: Vec<_> = objective.values().iter().map(|c| Some(lp.add_var(*c))).collect();
    add_simplex_row(&mut lp, &vars);
    add_cone_rows(&mut lp, grid, &vars, cone);
    let mut idx = Vec::new();
    for r in rows {
        if r.coeffs.len() != grid.path_count() {
            return Err(EmotError::DimensionMismatch("row needs one coefficient per path".into()));
        }
        let coeffs: Vec<_> = vars.iter().zip(&r.coeffs).map(|(v, a)| (v.unwrap(), *a)).collect();
        idx.push(lp.add_row(&coeffs, r.relation, r.rhs));
    }
    let sol = lp.minimize().optimal()?;
    let w: Vec<S> = vars.iter().map(|v| sol.x[v.unwrap().0]).collect();
    Ok(LpMinimum {
        value: sol.value,
        measure: PathMeasure::from_solver(w),
        row_duals: idx.iter().map(|i| sol.duals[*i]).collect(),
        complementary_slackness: sol.complementary_slackness,
    })
}

/// Solves the measure-side problem with the configured backend.
pub fn solve_inf<S: Scalar>(problem: &EmotProblem<S>) -> Result<SolveReport<S>> {
    let start = Instant::now();
    let opts = &problem.options;
    if opts.backend == Backend::Oracle {
        return solve_with_oracle(problem, start);
    }
    let model = build_model(&problem.grid, &problem.cost, &problem.penalty, &problem.cone)?;
    if model.lp.num_vars() > opts.max_vars {
        return Err(EmotError::TooLarge(format!("{} variables", model.lp.num_vars())));
    }
    let use_lp = match opts.backend {
        Backend::Lp => {
            if !model.is_linear() {
                return Err(EmotError::Unsupported(
                    "the penalty is not polyhedral; use the conditional-gradient backend".into(),
                ));
            }
            true
        }
        Backend::FrankWolfe => false,
        _ => model.is_linear(),
    };
    if use_lp {
        solve_lp(problem, &model, start)
    } else {
        solve_fw(problem, &model, start)
    }
}

fn finish_report<S: Scalar>(
    problem: &EmotProblem<S>,
    model: &Model<S>,
    x: &[S],
    value: S,
    duals: &[S],
) -> Result<(PathMeasure<S>, ResidualSummary<S>, Vec<Vec<S>>)> {
    let q = PathMeasure::from_solver(model.path_weights(x));
    let res = residual_summary(&problem.grid, &q)?;
    let statics = model.statics_from_duals(&problem.grid, duals);
    debug_assert!(value.is_finite());
    Ok((q, res, statics))
}

fn solve_lp<S: Scalar>(problem: &EmotProblem<S>, model: &Model<S>, start: Instant) -> Result<SolveReport<S>> {
    match model.lp.minimize() {
        LpOutcome::Optimal(sol) => {
            let (q, res, statics) = finish_report(problem, model, &sol.x, sol.value, &sol.duals)?;
            Ok(SolveReport {
                status: SolveStatus::Optimal,
                inf_value: sol.value,
                optimizer: Some(q),
                residuals: Some(res),
                gap: sol.complementary_slackness.abs(),
                backend: "lp",
                iterations: sol.pivots,
                wall_time_ms: elapsed_ms(start),
                dual_statics: Some(statics),
                certificate: None,
                note: None,
            })
        }
        LpOutcome::Infeasible(cert) => Ok(SolveReport::infeasible(
            "lp",
            Some(cert),
            "no measure in the polar cone satisfies the penalty constraints",
            start,
        )),
        LpOutcome::Unbounded => Err(EmotError::Unbounded),
    }
}

fn solve_fw<S: Scalar>(problem: &EmotProblem<S>, model: &Model<S>, start: Instant) -> Result<SolveReport<S>> {
    let tol = problem.options.tol.unwrap_or_else(|| S::c(DEFAULT_FW_TOL));
    match fw::frank_wolfe(model, tol, problem.options.max_iter)? {
        fw::FwStart::Infeasible(cert) => Ok(SolveReport::infeasible(
            "fw",
            Some(cert),
            "no measure in the polar cone satisfies the penalty constraints",
            start,
        )),
        fw::FwStart::InfiniteValue => Ok(SolveReport::infeasible(
            "fw",
            None,
            "every feasible measure misses reference mass the divergence cannot spare",
            start,
        )),
        fw::FwStart::Ready(out) => {
            let (q, res, statics) = finish_report(problem, model, &out.x, out.value, &out.lmo.duals)?;
            Ok(SolveReport {
                status: if out.converged {
                    SolveStatus::GapCertified { gap: out.gap }
                } else {
                    SolveStatus::IterationLimit
                },
                inf_value: out.value,
                optimizer: Some(q),
                residuals: Some(res),
                gap: out.gap,
                backend: "fw",
                iterations: out.iterations,
                wall_time_ms: elapsed_ms(start),
                dual_statics: Some(statics),
                certificate: None,
                note: None,
            })
        }
    }
}

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn oracle_result<S: Scalar>(problem: &EmotProblem<S>) -> Result<oracle::OracleResult> {
    let grid = &problem.grid;
    if grid.horizon() != 1 || grid.num_assets() != 1 || !grid.has_deterministic_start() {
        return Err(EmotError::Unsupported(
            "the oracle backend handles one-period single-asset grids".into(),
        ));
    }
    let x0 = grid.spot(0).expect("deterministic start").to_f64_lossy();
    let nodes = to_f64(grid.nodes(1, 0));
    let cost = to_f64(problem.cost.values());
    let mean = match problem.cone {
        ConeSpec::Martingale => Some(x0),
        ConeSpec::NullCone => None,
        _ => return Err(EmotError::Unsupported("the oracle backend needs a martingale or null cone".into())),
    };
    match &problem.penalty {
        PenaltySpec::DivergenceSum(terms) if terms[0].is_none() => {
            let term = terms[1]
                .as_ref()
                .ok_or_else(|| EmotError::Unsupported("oracle needs a divergence at t=1".into()))?;
            if !matches!(term.utility.kind, UtilityKind::Exponential) {
                return Err(EmotError::Unsupported("oracle divergence must be exponential".into()));
            }
            let n = term.utility.scale.to_f64_lossy();
            let scaled: Vec<f64> = cost.iter().map(|c| c / n).collect();
            let mut r = oracle::gibbs_tilt(&nodes, &to_f64(&term.reference.weights), &scaled, mean)?;
            r.value *= n;
            Ok(r)
        }
        PenaltySpec::FixedMarginals(targets) if targets[0].is_none() => {
            if mean.is_none() {
                return Err(EmotError::Unsupported("oracle enumeration needs the martingale cone".into()));
            }
            let marginals = vec![None, targets[1].as_ref().map(|m| to_f64(&m.weights))];
            let g64 = MarketGrid::one_dim(vec![vec![x0], nodes])?;
            oracle::vertex_enum_mot(&g64, &marginals, &cost)
        }
        _ => Err(EmotError::Unsupported("no oracle for this penalty".into())),
    }
}

fn solve_with_oracle<S: Scalar>(problem: &EmotProblem<S>, start: Instant) -> Result<SolveReport<S>> {
    let result = match oracle_result(problem) {
        Err(EmotError::Infeasible { .. }) => {
            return Ok(SolveReport::infeasible("oracle", None, "oracle found an empty feasible set", start))
        }
        other => other?,
    };
    let q = PathMeasure::from_solver(result.argmin.iter().map(|v| S::c(*v)).collect());
    let res = residual_summary(&problem.grid, &q)?;
    Ok(SolveReport {
        status: SolveStatus::Optimal,
        inf_value: S::c(result.value),
        optimizer: Some(q),
        residuals: Some(res),
        gap: S::zero(),
        backend: "oracle",
        iterations: 0,
        wall_time_ms: elapsed_ms(start),
        dual_statics: None,
        certificate: None,
        note: Some(format!("method {:?}", result.method)),
    })
}

/// Entropic/penalized problem without a market: cone must be `NullCone`.
pub fn solve_eot<S: Scalar>(problem: &EmotProblem<S>) -> Result<SolveReport<S>> {
    if !matches!(problem.cone, ConeSpec::NullCone) {
        return Err(EmotError::Precondition("solve_eot needs the null cone".into()));
    }
    solve_inf(problem)
}

/// Classical martingale optimal transport value with pinned marginals.
pub fn mot_value<S: Scalar>(
    grid: &MarketGrid<S>,
    marginals: Vec<MarginalMeasure<S>>,
    cost: &PathFunction<S>,
) -> Result<SolveReport<S>> {
    let penalty = PenaltySpec::fixed_marginals(grid, marginals)?;
    let problem = EmotProblem::new(grid.clone(), cost.clone(), penalty, ConeSpec::Martingale)
        .with_options(SolverOptions::default().with_backend(Backend::Lp));
    solve_inf(&problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalties::{LossFunction, MarketOption, WassersteinTerm};
    use crate::valuation::UtilityFunction;
    use crate::wasserstein::GroundMetric;

    fn g1() -> MarketGrid<f64> {
        MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
    }

    fn call(g: &MarketGrid<f64>, t: usize, k: f64) -> PathFunction<f64> {
        PathFunction::from_fn(g, |p| (p.x(t, 0) - k).max(0.0))
    }

    #[test]
    fn fixed_marginal_mot_is_one_third() {
        let g = g1();
        let r = mot_value(&g, vec![MarginalMeasure::uniform(&g, 1).unwrap()], &call(&g, 1, 1.0)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.inf_value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn free_martingale_call_is_zero() {
        let g = g1();
        let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), PenaltySpec::none(&g), ConeSpec::Martingale);
        let r = solve_inf(&p).unwrap();
        assert!(r.inf_value.abs() < 1e-12);
    }

    #[test]
    fn spot_outside_hull_is_infeasible() {
        let g = MarketGrid::one_dim(vec![vec![3.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), PenaltySpec::none(&g), ConeSpec::Martingale);
        let r = solve_inf(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.certificate.is_some());
    }

    #[test]
    fn entropic_matches_gibbs() {
        let g = g1();
        let pen =
            PenaltySpec::divergence(&g, UtilityFunction::exponential(), vec![MarginalMeasure::uniform(&g, 1).unwrap()])
                .unwrap();
        let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), pen, ConeSpec::Martingale)
            .with_options(SolverOptions::default().with_tol(1e-11));
        let r = solve_inf(&p).unwrap();
        let o = oracle::gibbs_tilt(&[0.0, 1.0, 2.0], &[1.0 / 3.0; 3], &[0.0, 0.0, 1.0], Some(1.0)).unwrap();
        assert!(r.status.is_certified(), "{:?}", r.status);
        assert!((r.inf_value - o.value).abs() < 1e-8, "{} vs {}", r.inf_value, o.value);
        let or = solve_inf(&p.clone().with_options(SolverOptions::default().with_backend(Backend::Oracle))).unwrap();
        assert!((or.inf_value - o.value).abs() < 1e-12);
    }

    #[test]
    fn market_and_wasserstein_lp_models() {
        let g = g1();
        let opt = MarketOption {
            payoff: vec![0.0, 0.0, 1.0],
            price: 1.0 / 3.0,
            loss: LossFunction::Threshold { eps: 0.05 },
        };
        let pen = PenaltySpec::market_price(&g, vec![(1, opt)]).unwrap();
        for cone in [ConeSpec::Martingale, ConeSpec::NullCone] {
            let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), pen.clone(), cone);
            let r = solve_inf(&p).unwrap();
            assert!((r.inf_value - (1.0 / 3.0 - 0.05)).abs() < 1e-10, "{}", r.inf_value);
        }
        for metric in [GroundMetric::Euclidean, GroundMetric::Custom(vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ])] {
            let pen = PenaltySpec::wasserstein_ball(&g, vec![WassersteinTerm {
                reference: MarginalMeasure::uniform(&g, 1).unwrap(),
                loss: LossFunction::Threshold { eps: 0.1 },
                metric,
            }])
            .unwrap();
            let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), pen, ConeSpec::NullCone);
            let r = solve_inf(&p).unwrap();
            assert!((r.inf_value - (1.0 / 3.0 - 0.05)).abs() < 1e-10, "{}", r.inf_value);
        }
    }

    #[test]
    fn power_losses_use_conditional_gradient() {
        let g = g1();
        let opt = MarketOption {
            payoff: vec![0.0, 0.0, 1.0],
            price: 1.0 / 3.0,
            loss: LossFunction::Power { p: 2.0 },
        };
        let pen = PenaltySpec::market_price(&g, vec![(1, opt)]).unwrap();
        let p = EmotProblem::new(g.clone(), call(&g, 1, 1.0), pen, ConeSpec::Martingale)
            .with_options(SolverOptions::default().with_tol(1e-10));
        let r = solve_inf(&p).unwrap();
        assert_eq!(r.backend, "fw");
        assert!((r.inf_value - 1.0 / 18.0).abs() < 1e-8, "{}", r.inf_value);
    }
}
