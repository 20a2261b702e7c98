use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use emot::convergence::{
    default_limit_tol, pinning_index, run_eps_martingale, run_marginal_perturbation, run_monotone, ConvergenceExperiment,
    ConvergenceTable, PerturbationStep,
};
use emot::hedging::{solve_sup, HedgeProblem, HedgeReport};
use emot::penalties::{monotone_sequence, PenaltySpec};
use emot::solver::{solve_inf, Backend, EmotProblem, SolveReport, SolveStatus, DEFAULT_FW_TOL};
use serde_json::json;

use crate::scenario::{self, Loaded, SchemaError, SequenceBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Error = 1,
    Infeasible = 2,
    Schema = 64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Auto,
    Lp,
    Fw,
    Oracle,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Auto => Backend::Auto,
            BackendArg::Lp => Backend::Lp,
            BackendArg::Fw => Backend::FrankWolfe,
            BackendArg::Oracle => Backend::Oracle,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Solver tolerance (overrides the scenario).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Also solve the subhedging side.
    #[arg(long)]
    pub both: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent solves.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for reports and tables.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    fn error(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Error,
            message: message.into(),
        }
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Self {
            exit: Exit::Schema,
            message: format!("schema error: {e}"),
        }
    }
}

impl From<emot::EmotError> for Failure {
    fn from(e: emot::EmotError) -> Self {
        Self::error(format!("error: {e}"))
    }
}

pub type Outcome = Result<Exit, Failure>;

pub fn read(path: &Path) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::error(format!("cannot read {}: {e}", path.display())))?;
    Ok(scenario::load(&text)?)
}

fn apply(flags: &Flags, p: &mut EmotProblem<f64>) -> Result<(), Failure> {
    if let Some(t) = flags.tol {
        if t.is_nan() || t <= 0.0 || !t.is_finite() {
            return Err(SchemaError::new("--tol must be a positive number").into());
        }
        p.options.tol = Some(t);
    }
    if let Some(b) = flags.backend {
        p.options.backend = b.into();
    }
    if let Some(s) = flags.seed {
        p.options.seed = s;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::error(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::error(format!("cannot write {}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::error(e.to_string()))?;
    text.push('\n');
    write(dir, name, &text)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10}")
    } else {
        format!("{v}")
    }
}

fn exit_for(status: &SolveStatus<f64>) -> Exit {
    match status {
        SolveStatus::Infeasible => Exit::Infeasible,
        s if s.is_certified() => Exit::Ok,
        _ => Exit::Error,
    }
}

fn sup_side(p: &EmotProblem<f64>, inf: &SolveReport<f64>, seed: u64) -> Result<HedgeReport<f64>, Failure> {
    let mut h = HedgeProblem::from_emot(p);
    h.options.seed = seed;
    if let Some(s) = &inf.dual_statics {
        h = h.with_warm_start(s.clone());
    }
    Ok(solve_sup(&h)?.with_inf(inf.inf_value))
}

fn summary(inf: &SolveReport<f64>, sup: Option<&HedgeReport<f64>>) -> String {
    let (sup_text, gap) = match sup {
        Some(s) if inf.inf_value == s.sup_value => (num(s.sup_value), 0.0),
        Some(s) => (num(s.sup_value), (inf.inf_value - s.sup_value).abs()),
        None => ("NA".to_string(), inf.gap),
    };
    format!("inf={} sup={} gap={gap:.3e} status={}", num(inf.inf_value), sup_text, inf.status.name())
}

fn solve_both(loaded: &Loaded, flags: &Flags, command: &str, with_sup: bool) -> Outcome {
    let mut p = loaded.problem.clone();
    apply(flags, &mut p)?;
    let inf = solve_inf(&p)?;
    let sup = if with_sup && !matches!(inf.status, SolveStatus::Infeasible) {
        Some(sup_side(&p, &inf, p.options.seed)?)
    } else {
        None
    };
    let line = summary(&inf, sup.as_ref());
    let report = json!({
        "scenario": loaded.scenario.name,
        "command": command,
        "options": p.options,
        "summary": line,
        "inf": inf,
        "sup": sup,
    });
    write_json(&flags.out, "report.json", &report)?;
    if let Some(s) = &sup {
        if command == "hedge" {
            if p.grid.num_assets() == 1 {
                write(&flags.out, "calls.csv", &s.call_decomposition_csv(&p.grid)?)?;
            }
            write(&flags.out, "delta.csv", &s.delta_csv())?;
        }
    }
    println!("{line}");
    Ok(exit_for(&inf.status))
}

pub fn solve(path: &Path, flags: &Flags) -> Outcome {
    let loaded = read(path)?;
    solve_both(&loaded, flags, "solve", flags.both)
}

pub fn hedge(path: &Path, flags: &Flags) -> Outcome {
    let loaded = read(path)?;
    solve_both(&loaded, flags, "hedge", true)
}

pub fn oracle(path: &Path, flags: &Flags) -> Outcome {
    let loaded = read(path)?;
    let mut p = loaded.problem.clone();
    apply(flags, &mut p)?;
    p.options.backend = Backend::Oracle;
    let r = solve_inf(&p)?;
    write_json(&flags.out, "report.json", &json!({"scenario": loaded.scenario.name, "command": "oracle", "inf": r}))?;
    println!(
        "oracle={} status={} {}",
        num(r.inf_value),
        r.status.name(),
        r.note.as_deref().unwrap_or("")
    );
    Ok(exit_for(&r.status))
}

pub fn validate(path: &Path) -> Outcome {
    let l = read(path)?;
    let g = &l.problem.grid;
    println!(
        "valid: paths={} horizon={} assets={} penalty={} cone={}{}",
        g.path_count(),
        g.horizon(),
        g.num_assets(),
        l.problem.penalty.family(),
        l.problem.cone.name(),
        if l.scenario.sequence.is_some() { " sequence=yes" } else { "" }
    );
    Ok(Exit::Ok)
}

pub fn catalog() -> Outcome {
    println!("{}", serde_json::to_string_pretty(&crate::catalog::catalog()).expect("catalog serializes"));
    Ok(Exit::Ok)
}

fn run_sequence(loaded: &Loaded, p: &EmotProblem<f64>, jobs: usize) -> Result<(ConvergenceTable<f64>, Option<usize>), Failure> {
    let seq = loaded
        .scenario
        .sequence
        .as_ref()
        .ok_or_else(|| Failure::from(SchemaError::new("converge needs a 'sequence' block")))?;
    let grid = &p.grid;
    let tol = p.options.tol.unwrap_or(DEFAULT_FW_TOL);
    match seq {
        SequenceBlock::UtilityScaling { indices } => {
            let PenaltySpec::DivergenceSum(terms) = &p.penalty else {
                return Err(SchemaError::new("utility_scaling needs a divergence penalty").into());
            };
            let refs: Vec<_> = terms.iter().flatten().map(|t| t.reference.clone()).collect();
            let utility = terms.iter().flatten().next().map(|t| t.utility.clone());
            let Some(utility) = utility else {
                return Err(SchemaError::new("utility_scaling needs at least one divergence term").into());
            };
            let (g, r, cone) = (grid.clone(), refs.clone(), p.cone);
            let sequence = monotone_sequence(
                move |n| Ok((PenaltySpec::divergence(&g, utility.scaled(n as f64)?, r.clone())?, cone)),
                (PenaltySpec::fixed_marginals(grid, refs)?, p.cone),
            );
            let mut exp = ConvergenceExperiment::new(grid.clone(), p.cost.clone(), sequence, indices.clone());
            exp.options = p.options.clone();
            exp.limit_tol = default_limit_tol(tol);
            exp.jobs = jobs;
            Ok((run_monotone(&exp)?, None))
        }
        SequenceBlock::EpsMartingale { eps } => Ok((run_eps_martingale(grid, &p.cost, &p.penalty, eps, &p.options)?, None)),
        SequenceBlock::WassersteinPerturbation { limit, steps, metric, tol: limit_tol } => {
            let limit = scenario::marginals_of(grid, limit)?;
            let schedule = steps
                .iter()
                .map(|s| {
                    Ok(PerturbationStep {
                        n: s.n,
                        references: scenario::marginals_of(grid, &s.references)?,
                        loss: s.loss.into(),
                    })
                })
                .collect::<Result<Vec<_>, SchemaError>>()?;
            let table = run_marginal_perturbation(
                grid,
                &p.cost,
                &limit,
                &schedule,
                &scenario::metric_of(metric),
                p.cone,
                &p.options,
                limit_tol.unwrap_or_else(|| default_limit_tol(tol)),
            )?;
            Ok((table, None))
        }
        SequenceBlock::OptionGrowth { options, limit, indices } => {
            let opts = scenario::options_of(grid, options).map_err(|e| match e {
                scenario::Located::Plain(s) => Failure::from(s),
                scenario::Located::Expr(t, err) => SchemaError::new(format!("expression '{t}': {}", err.message)).into(),
            })?;
            let indices = indices.clone().unwrap_or_else(|| (1..=opts.len()).collect());
            let limit = scenario::marginals_of(grid, limit)?;
            let pinned = option_pinning(grid, &opts, &indices, &limit);
            let (g, o, cone) = (grid.clone(), opts.clone(), p.cone);
            let sequence = monotone_sequence(
                move |n| Ok((PenaltySpec::market_price(&g, o[..n.min(o.len())].to_vec())?, cone)),
                (PenaltySpec::fixed_marginals(grid, limit)?, p.cone),
            );
            let mut exp = ConvergenceExperiment::new(grid.clone(), p.cost.clone(), sequence, indices);
            exp.options = p.options.clone();
            exp.limit_tol = default_limit_tol(tol);
            exp.jobs = jobs;
            Ok((run_monotone(&exp)?, pinned))
        }
    }
}

/// Smallest index at which every limit date's options (with cash and the
/// forward) span all functions of the price.
fn option_pinning(
    grid: &emot::MarketGrid<f64>,
    opts: &[(usize, emot::penalties::MarketOption<f64>)],
    indices: &[usize],
    limit: &[emot::MarginalMeasure<f64>],
) -> Option<usize> {
    if grid.num_assets() != 1 {
        return None;
    }
    let mut worst = 0;
    for m in limit {
        let sets: Vec<Vec<Vec<f64>>> = indices
            .iter()
            .map(|&n| opts[..n].iter().filter(|(t, _)| *t == m.time).map(|(_, o)| o.payoff.clone()).collect())
            .collect();
        worst = worst.max(pinning_index(grid.nodes(m.time, 0), &sets)?);
    }
    indices.get(worst).copied()
}

pub fn converge(path: &Path, flags: &Flags) -> Outcome {
    let loaded = read(path)?;
    let mut p = loaded.problem.clone();
    apply(flags, &mut p)?;
    let (table, pinned) = run_sequence(&loaded, &p, flags.jobs.max(1))?;
    write(&flags.out, "converge.csv", &table.to_csv())?;
    write_json(
        &flags.out,
        "converge.json",
        &json!({"scenario": loaded.scenario.name, "table": table, "pinning_index": pinned}),
    )?;
    let final_gap = table.final_limit_gap().unwrap_or(f64::NAN);
    let mut line = format!(
        "rows={} limit={} final_gap={final_gap:.3e} monotone={} converged={}",
        table.rows.len(),
        num(table.limit_value),
        table.monotone,
        table.converged
    );
    if let Some(k) = pinned {
        line.push_str(&format!(" pinning_index={k}"));
    }
    if let Some(note) = &table.note {
        line.push_str(&format!(" note=\"{note}\""));
    }
    println!("{line}");
    if table.has_errors() {
        for r in table.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!("n={}: {}", r.n, r.error.as_deref().unwrap_or(""));
        }
        return Ok(Exit::Error);
    }
    Ok(Exit::Ok)
}
