//! Value tables along monotone penalty sequences, eps-martingale schedules
//! and perturbed reference marginals.

use std::time::Instant;

use serde::Serialize;

use crate::error::{EmotError, Result};
use crate::lattice::{ConeSpec, MarginalMeasure, MarketGrid, PathFunction};
use crate::penalties::{LossFunction, PenaltySequence, PenaltySpec, WassersteinTerm};
use crate::scalar::Scalar;
use crate::solver::{solve_inf, EmotProblem, SolveReport, SolverOptions, DEFAULT_FW_TOL};
use crate::wasserstein::{w1, GroundMetric};

/// Default absolute distance at which the limit counts as reached.
pub const LIMIT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow<S> {
    pub n: usize,
    /// Schedule parameter (radius, eps) when the index is not the parameter.
    pub parameter: Option<S>,
    pub value: S,
    pub certificate_gap: S,
    pub limit_gap: S,
    pub wall_time_ms: f64,
    pub status: &'static str,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable<S> {
    pub rows: Vec<ConvergenceRow<S>>,
    pub limit_value: S,
    /// Largest drop `value_n - value_{n+1}` between certified neighbours.
    pub max_violation: S,
    pub monotone: bool,
    /// Whether the last certified value is within `tolerance` of the limit
    /// (only claimed when the schedule's hypotheses hold).
    pub converged: bool,
    pub tolerance: S,
    /// First row index whose value equals the limit within `1e-9`.
    pub exact_index: Option<usize>,
    pub hypothesis_holds: bool,
    pub note: Option<String>,
}

impl<S: Scalar> ConvergenceTable<S> {
    pub fn to_csv(&self) -> String {
        let with_errors = self.rows.iter().any(|r| r.error.is_some());
        let mut out = String::from("n,value,certificate_gap,limit_gap,wall_time_ms");
        if with_errors {
            out.push_str(",error");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.3}",
                r.n, r.value, r.certificate_gap, r.limit_gap, r.wall_time_ms
            ));
            if with_errors {
                out.push_str(&format!(",{}", r.error.as_deref().unwrap_or("").replace(',', ";")));
            }
            out.push('\n');
        }
        out
    }

    pub fn final_limit_gap(&self) -> Option<S> {
        self.rows.iter().rev().find(|r| r.error.is_none()).map(|r| r.limit_gap)
    }

    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }
}

/// A monotone sequence `n -> (D_n, A_n)` evaluated at `indices`.
#[derive(Debug, Clone)]
pub struct ConvergenceExperiment<S> {
    pub grid: MarketGrid<S>,
    pub cost: PathFunction<S>,
    pub sequence: PenaltySequence<S>,
    pub indices: Vec<usize>,
    pub options: SolverOptions<S>,
    pub limit_tol: S,
    /// Worker threads for the per-index solves.
    pub jobs: usize,
}

impl<S: Scalar> ConvergenceExperiment<S> {
    pub fn new(grid: MarketGrid<S>, cost: PathFunction<S>, sequence: PenaltySequence<S>, indices: Vec<usize>) -> Self {
        Self {
            grid,
            cost,
            sequence,
            indices,
            options: SolverOptions::default(),
            limit_tol: S::c(LIMIT_TOL),
            jobs: 1,
        }
    }
}

fn check_indices(indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(EmotError::InvalidParameter("empty schedule".into()));
    }
    if indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EmotError::InvalidParameter("indices must be strictly increasing".into()));
    }
    Ok(())
}

/// `max(1e-3, 10 * solver tolerance)`.
pub fn default_limit_tol<S: Scalar>(solver_tol: S) -> S {
    S::c(LIMIT_TOL).max(S::c(10.0) * solver_tol)
}

/// Runs `jobs` at a time, keeping the input order.
fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn timed_solve<S: Scalar>(problem: &EmotProblem<S>) -> (Result<SolveReport<S>>, f64) {
    let start = Instant::now();
    let r = solve_inf(problem);
    (r, start.elapsed().as_secs_f64() * 1e3)
}

fn solver_tol<S: Scalar>(options: &SolverOptions<S>) -> S {
    options.tol.unwrap_or_else(|| S::c(DEFAULT_FW_TOL))
}

fn assemble<S: Scalar>(
    indexed: Vec<(usize, Option<S>, Result<SolveReport<S>>, f64)>,
    limit_value: S,
    tol: S,
    limit_tol: S,
    hypothesis_holds: bool,
) -> ConvergenceTable<S> {
    let rows: Vec<ConvergenceRow<S>> = indexed
        .into_iter()
        .map(|(n, parameter, r, ms)| match r {
            Ok(rep) => {
                let error = (!rep.status.is_certified()).then(|| format!("status {}", rep.status.name()));
                ConvergenceRow {
                    n,
                    parameter,
                    value: rep.inf_value,
                    certificate_gap: rep.gap,
                    limit_gap: (limit_value - rep.inf_value).abs(),
                    wall_time_ms: ms,
                    status: rep.status.name(),
                    error,
                }
            }
            Err(e) => ConvergenceRow {
                n,
                parameter,
                value: S::nan(),
                certificate_gap: S::nan(),
                limit_gap: S::nan(),
                wall_time_ms: ms,
                status: "error",
                error: Some(e.to_string()),
            },
        })
        .collect();
    let certified: Vec<&ConvergenceRow<S>> = rows.iter().filter(|r| r.error.is_none()).collect();
    let mut max_violation = S::zero();
    for w in certified.windows(2) {
        max_violation = max_violation.max(w[0].value - w[1].value);
    }
    let slack = S::c(2.0) * tol.max(certified.iter().map(|r| r.certificate_gap).fold(S::zero(), S::max));
    let exact_index = rows
        .iter()
        .position(|r| r.error.is_none() && r.limit_gap <= S::c(1e-9) * (S::one() + limit_value.abs()));
    let last_gap = certified.last().map(|r| r.limit_gap);
    ConvergenceTable {
        monotone: max_violation <= slack,
        max_violation,
        converged: hypothesis_holds && last_gap.is_some_and(|g| g <= limit_tol),
        tolerance: limit_tol,
        exact_index,
        hypothesis_holds,
        note: (!hypothesis_holds).then(|| "schedule hypotheses not met; no convergence claim".to_string()),
        rows,
        limit_value,
    }
}

fn limit_of<S: Scalar>(
    grid: &MarketGrid<S>,
    cost: &PathFunction<S>,
    penalty: PenaltySpec<S>,
    cone: ConeSpec<S>,
    options: &SolverOptions<S>,
) -> Result<S> {
    let p = EmotProblem::new(grid.clone(), cost.clone(), penalty, cone).with_options(options.clone());
    let r = solve_inf(&p)?;
    if !r.status.is_certified() || !r.inf_value.is_finite() {
        return Err(EmotError::Precondition(format!(
            "limit problem is not solvable with a finite certified value (status {})",
            r.status.name()
        )));
    }
    Ok(r.inf_value)
}

/// Values `P_n(c)` along a monotone sequence against the limit value.
pub fn run_monotone<S: Scalar>(exp: &ConvergenceExperiment<S>) -> Result<ConvergenceTable<S>> {
    check_indices(&exp.indices)?;
    exp.sequence.check_monotone(&exp.grid, &exp.indices, 16, exp.options.seed)?;
    let (lp, lc) = exp.sequence.limit().clone();
    let limit = limit_of(&exp.grid, &exp.cost, lp, lc, &exp.options)?;
    let results = par_map(&exp.indices, exp.jobs, |&n| {
        let (r, ms) = match exp.sequence.at(n) {
            Ok((pen, cone)) => {
                let p = EmotProblem::new(exp.grid.clone(), exp.cost.clone(), pen, cone).with_options(exp.options.clone());
                timed_solve(&p)
            }
            Err(e) => (Err(e), 0.0),
        };
        (n, None, r, ms)
    });
    Ok(assemble(results, limit, solver_tol(&exp.options), exp.limit_tol, true))
}

/// Inf values over eps-martingale measures for a decreasing `eps` schedule.
pub fn run_eps_martingale<S: Scalar>(
    grid: &MarketGrid<S>,
    cost: &PathFunction<S>,
    penalty: &PenaltySpec<S>,
    schedule: &[S],
    options: &SolverOptions<S>,
) -> Result<ConvergenceTable<S>> {
    if schedule.is_empty() {
        return Err(EmotError::InvalidParameter("empty schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|e| *e < S::zero()) {
        return Err(EmotError::InvalidParameter("eps schedule must be nonnegative and decreasing".into()));
    }
    let limit = limit_of(grid, cost, penalty.clone(), ConeSpec::Martingale, options)?;
    let items: Vec<(usize, S)> = schedule.iter().copied().enumerate().collect();
    let results = items
        .iter()
        .map(|&(k, eps)| {
            let p = EmotProblem::new(grid.clone(), cost.clone(), penalty.clone(), ConeSpec::EpsMartingale { eps })
                .with_options(options.clone());
            let (r, ms) = timed_solve(&p);
            (k, Some(eps), r, ms)
        })
        .collect();
    let tol = solver_tol(options);
    Ok(assemble(results, limit, tol, default_limit_tol(tol), true))
}

/// One step of a reference-perturbation schedule.
#[derive(Debug, Clone)]
pub struct PerturbationStep<S> {
    pub n: usize,
    pub references: Vec<MarginalMeasure<S>>,
    pub loss: LossFunction<S>,
}

/// Wasserstein-ball values around perturbed references against the MOT
/// value of the limit marginals.
#[allow(clippy::too_many_arguments)]
pub fn run_marginal_perturbation<S: Scalar>(
    grid: &MarketGrid<S>,
    cost: &PathFunction<S>,
    limit: &[MarginalMeasure<S>],
    schedule: &[PerturbationStep<S>],
    metric: &GroundMetric<S>,
    cone: ConeSpec<S>,
    options: &SolverOptions<S>,
    limit_tol: S,
) -> Result<ConvergenceTable<S>> {
    check_indices(&schedule.iter().map(|s| s.n).collect::<Vec<_>>())?;
    let limit_value = limit_of(grid, cost, PenaltySpec::fixed_marginals(grid, limit.to_vec())?, cone, options)
        .map_err(|e| EmotError::Precondition(format!("limit MOT problem invalid: {e}")))?;
    // G^n(W_1(ref_n, ref_inf)) must vanish and the radii must shrink to 0
    let mut hypothesis = true;
    for step in schedule {
        for r in &step.references {
            let target = limit
                .iter()
                .find(|m| m.time == r.time)
                .ok_or_else(|| EmotError::InvalidParameter(format!("no limit marginal at t={}", r.time)))?;
            let d = w1(r, target, metric)?;
            if step.loss.eval(d) != S::zero() {
                hypothesis = false;
            }
        }
    }
    match schedule.last().map(|s| s.loss.radius()) {
        Some(Some(r)) if r <= limit_tol => {}
        _ => hypothesis = false,
    }
    let results = schedule
        .iter()
        .map(|step| {
            let terms = step
                .references
                .iter()
                .map(|r| WassersteinTerm {
                    reference: r.clone(),
                    loss: step.loss,
                    metric: metric.clone(),
                })
                .collect();
            let (r, ms) = match PenaltySpec::wasserstein_ball(grid, terms) {
                Ok(pen) => {
                    let p = EmotProblem::new(grid.clone(), cost.clone(), pen, cone).with_options(options.clone());
                    timed_solve(&p)
                }
                Err(e) => (Err(e), 0.0),
            };
            (step.n, step.loss.radius(), r, ms)
        })
        .collect();
    Ok(assemble(results, limit_value, solver_tol(options), limit_tol, hypothesis))
}

fn rank<S: Scalar>(mut rows: Vec<Vec<S>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).max_by(|a, b| rows[*a][c].abs().partial_cmp(&rows[*b][c].abs()).unwrap()) else {
            break;
        };
        if rows[p][c].abs() <= S::c(1e-10) {
            continue;
        }
        rows.swap(r, p);
        for i in r + 1..rows.len() {
            let f = rows[i][c] / rows[r][c];
            for k in c..cols {
                let v = rows[r][k];
                rows[i][k] -= f * v;
            }
        }
        r += 1;
    }
    r
}

/// First position in a growing list of option payoff sets at which cash,
/// the forward and the options span every function of `x_t`, so that the
/// marginal is pinned by its prices.
pub fn pinning_index<S: Scalar>(nodes: &[S], payoff_sets: &[Vec<Vec<S>>]) -> Option<usize> {
    let base = vec![vec![S::one(); nodes.len()], nodes.to_vec()];
    payoff_sets.iter().position(|set| {
        let mut rows = base.clone();
        rows.extend(set.iter().cloned());
        rank(rows) == nodes.len()
    })
}
