//! Scenario documents and their conversion into solver inputs.

use std::fmt;

use emot::penalties::{LossFunction, MarketOption, PenaltySpec, WassersteinTerm};
use emot::solver::{Backend, EmotProblem, SolverOptions};
use emot::valuation::UtilityFunction;
use emot::wasserstein::GroundMetric;
use emot::{ConeSpec, MarginalMeasure, MarketGrid, PathFunction};
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub grid: GridBlock,
    pub cost: CostBlock,
    #[serde(default)]
    pub penalty: PenaltyBlock,
    #[serde(default)]
    pub cone: ConeBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceBlock>,
}

/// `nodes[t][j]`: sorted node values of asset `j` at date `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub nodes: Vec<Vec<Vec<f64>>>,
}

/// Exactly one of `expr` and `table` (values by lexicographic path index).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalBlock {
    pub t: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityBlock {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossBlock {
    Zero,
    Power { p: f64 },
    Threshold { eps: f64 },
    Hard,
}

impl From<LossBlock> for LossFunction<f64> {
    fn from(l: LossBlock) -> Self {
        match l {
            LossBlock::Zero => LossFunction::Zero,
            LossBlock::Power { p } => LossFunction::Power { p },
            LossBlock::Threshold { eps } => LossFunction::Threshold { eps },
            LossBlock::Hard => LossFunction::Hard,
        }
    }
}

/// Option payoff: an expression in `x` or explicit node values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayoffBlock {
    Expr(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionBlock {
    pub t: usize,
    pub payoff: PayoffBlock,
    pub price: f64,
    pub loss: LossBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricBlock {
    Euclidean,
    Custom { table: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinBlock {
    pub t: usize,
    pub weights: Vec<f64>,
    pub loss: LossBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricBlock>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyBlock {
    #[default]
    None,
    FixedMarginals {
        terms: Vec<MarginalBlock>,
    },
    Divergence {
        utility: UtilityBlock,
        terms: Vec<MarginalBlock>,
    },
    MarketPrice {
        options: Vec<OptionBlock>,
    },
    WassersteinBall {
        terms: Vec<WassersteinBlock>,
    },
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeBlock {
    #[default]
    Martingale,
    EpsMartingale {
        eps: f64,
    },
    NoShortSelling,
    NoLongBuying,
    NullCone,
}

impl From<ConeBlock> for ConeSpec<f64> {
    fn from(c: ConeBlock) -> Self {
        match c {
            ConeBlock::Martingale => ConeSpec::Martingale,
            ConeBlock::EpsMartingale { eps } => ConeSpec::EpsMartingale { eps },
            ConeBlock::NoShortSelling => ConeSpec::NoShortSelling,
            ConeBlock::NoLongBuying => ConeSpec::NoLongBuying,
            ConeBlock::NullCone => ConeSpec::NullCone,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepBlock {
    pub n: usize,
    pub references: Vec<MarginalBlock>,
    pub loss: LossBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceBlock {
    /// `n u(x / n)` applied to the scenario's divergence penalty; the limit
    /// pins the references.
    UtilityScaling { indices: Vec<usize> },
    /// The scenario's penalty over eps-martingale cones.
    EpsMartingale { eps: Vec<f64> },
    /// Wasserstein balls around perturbed references.
    WassersteinPerturbation {
        limit: Vec<MarginalBlock>,
        steps: Vec<StepBlock>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric: Option<MetricBlock>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
    },
    /// Index `n` prices the first `n` options; the limit pins `limit`.
    OptionGrowth {
        options: Vec<OptionBlock>,
        limit: Vec<MarginalBlock>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        indices: Option<Vec<usize>>,
    },
}

/// A schema or validation failure, with a location when known.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl SchemaError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

impl From<emot::EmotError> for SchemaError {
    fn from(e: emot::EmotError) -> Self {
        SchemaError::new(e.to_string())
    }
}

/// Line and column (1-based) of the first occurrence of `needle` as a JSON
/// string literal, shifted by `offset` bytes into the literal.
fn locate(source: &str, needle: &str, offset: usize) -> (Option<usize>, Option<usize>) {
    let quoted = serde_json::to_string(needle).unwrap_or_default();
    let Some(at) = source.find(&quoted) else { return (None, None) };
    let pos = at + 1 + offset.min(needle.len());
    let before = &source[..pos];
    let line = before.matches('\n').count() + 1;
    let column = pos - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (Some(line), Some(column))
}

/// Parsed and converted scenario.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub problem: EmotProblem<f64>,
}

pub fn parse(source: &str) -> Result<Scenario, SchemaError> {
    serde_json::from_str(source).map_err(|e| SchemaError {
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string().split(" at line").next().unwrap_or_default().to_string(),
    })
}

pub fn load(source: &str) -> Result<Loaded, SchemaError> {
    let scenario = parse(source)?;
    let problem = scenario.problem().map_err(|e| match e {
        Located::Expr(text, err) => {
            let (line, column) = locate(source, &text, err.offset);
            SchemaError {
                line,
                column,
                message: format!("expression '{text}': {}", err.message),
            }
        }
        Located::Plain(e) => e,
    })?;
    if let Some(seq) = &scenario.sequence {
        scenario.check_sequence(seq, &problem)?;
    }
    Ok(Loaded { scenario, problem })
}

/// Conversion failure, keeping expression text for source location.
pub enum Located {
    Expr(String, crate::expr::ExprError),
    Plain(SchemaError),
}

impl<E: Into<SchemaError>> From<E> for Located {
    fn from(e: E) -> Self {
        Located::Plain(e.into())
    }
}

fn parse_expr(text: &str) -> Result<Expr, Located> {
    Expr::parse(text).map_err(|e| Located::Expr(text.to_string(), e))
}

pub fn grid_of(block: &GridBlock) -> Result<MarketGrid<f64>, SchemaError> {
    Ok(MarketGrid::new(block.nodes.clone())?)
}

fn marginal(grid: &MarketGrid<f64>, m: &MarginalBlock) -> Result<MarginalMeasure<f64>, SchemaError> {
    grid.check_time(m.t)?;
    Ok(MarginalMeasure::new(grid, m.t, m.weights.clone())?)
}

fn metric(m: &Option<MetricBlock>) -> GroundMetric<f64> {
    match m {
        None | Some(MetricBlock::Euclidean) => GroundMetric::Euclidean,
        Some(MetricBlock::Custom { table }) => GroundMetric::Custom(table.clone()),
    }
}

pub fn option_of(grid: &MarketGrid<f64>, o: &OptionBlock) -> Result<(usize, MarketOption<f64>), Located> {
    grid.check_time(o.t).map_err(SchemaError::from)?;
    let payoff = match &o.payoff {
        PayoffBlock::Values(v) => v.clone(),
        PayoffBlock::Expr(text) => {
            let e = parse_expr(text)?;
            let mut bad = None;
            e.visit_vars(&mut |v| {
                if let Var::Coord { t, j } = v {
                    if t != o.t || j >= grid.num_assets() {
                        bad = Some(format!("x{t}_{j}"));
                    }
                }
            });
            if let Some(b) = bad {
                return Err(SchemaError::new(format!("option payoff at t={} refers to {b}", o.t)).into());
            }
            if grid.num_assets() != 1 && text.contains('x') {
                let mut local = false;
                e.visit_vars(&mut |v| local |= v == Var::Local);
                if local {
                    return Err(SchemaError::new("'x' is ambiguous with several assets; use x<t>_<j>").into());
                }
            }
            (0..grid.block_size(o.t))
                .map(|b| {
                    e.eval(&|v| match v {
                        Var::Local => grid.block_value(o.t, b, 0),
                        Var::Coord { j, .. } => grid.block_value(o.t, b, j),
                    })
                })
                .collect()
        }
    };
    if payoff.iter().any(|v| !v.is_finite()) {
        return Err(SchemaError::new(format!("option payoff at t={} is not finite", o.t)).into());
    }
    Ok((
        o.t,
        MarketOption {
            payoff,
            price: o.price,
            loss: o.loss.into(),
        },
    ))
}

pub fn options_of(grid: &MarketGrid<f64>, opts: &[OptionBlock]) -> Result<Vec<(usize, MarketOption<f64>)>, Located> {
    opts.iter().map(|o| option_of(grid, o)).collect()
}

impl Scenario {
    pub fn cost(&self, grid: &MarketGrid<f64>) -> Result<PathFunction<f64>, Located> {
        match (&self.cost.expr, &self.cost.table) {
            (Some(text), None) => {
                let e = parse_expr(text)?;
                let mut bad = None;
                e.visit_vars(&mut |v| match v {
                    Var::Local => bad = Some("x".to_string()),
                    Var::Coord { t, j } if t > grid.horizon() || j >= grid.num_assets() => {
                        bad = Some(format!("x{t}_{j}"))
                    }
                    _ => {}
                });
                if let Some(b) = bad {
                    return Err(SchemaError::new(format!("cost refers to {b}, which is not a grid coordinate")).into());
                }
                Ok(PathFunction::from_fn(grid, |p| {
                    e.eval(&|v| match v {
                        Var::Coord { t, j } => p.x(t, j),
                        Var::Local => f64::NAN,
                    })
                }))
            }
            (None, Some(table)) => {
                let c = PathFunction::new(table.clone());
                c.check_len(grid).map_err(SchemaError::from)?;
                Ok(c)
            }
            _ => Err(SchemaError::new("cost needs exactly one of 'expr' and 'table'").into()),
        }
    }

    pub fn penalty(&self, grid: &MarketGrid<f64>) -> Result<PenaltySpec<f64>, Located> {
        Ok(match &self.penalty {
            PenaltyBlock::None => PenaltySpec::none(grid),
            PenaltyBlock::FixedMarginals { terms } => {
                let m = terms.iter().map(|m| marginal(grid, m)).collect::<Result<_, _>>()?;
                PenaltySpec::fixed_marginals(grid, m).map_err(SchemaError::from)?
            }
            PenaltyBlock::Divergence { utility, terms } => {
                let u = UtilityFunction::from_name(&utility.name, utility.param).map_err(SchemaError::from)?;
                let m = terms.iter().map(|m| marginal(grid, m)).collect::<Result<_, _>>()?;
                PenaltySpec::divergence(grid, u, m).map_err(SchemaError::from)?
            }
            PenaltyBlock::MarketPrice { options } => {
                PenaltySpec::market_price(grid, options_of(grid, options)?).map_err(SchemaError::from)?
            }
            PenaltyBlock::WassersteinBall { terms } => {
                let w = terms
                    .iter()
                    .map(|w| {
                        Ok(WassersteinTerm {
                            reference: marginal(grid, &MarginalBlock { t: w.t, weights: w.weights.clone() })?,
                            loss: w.loss.into(),
                            metric: metric(&w.metric),
                        })
                    })
                    .collect::<Result<_, SchemaError>>()?;
                PenaltySpec::wasserstein_ball(grid, w).map_err(SchemaError::from)?
            }
        })
    }

    pub fn options(&self) -> SolverOptions<f64> {
        let mut o = SolverOptions::default();
        if let Some(b) = self.solver.backend {
            o.backend = b;
        }
        o.tol = self.solver.tol;
        if let Some(m) = self.solver.max_iter {
            o.max_iter = m;
        }
        if let Some(s) = self.solver.seed {
            o.seed = s;
        }
        o
    }

    fn problem(&self) -> Result<EmotProblem<f64>, Located> {
        let grid = grid_of(&self.grid)?;
        let cost = self.cost(&grid)?;
        cost.check_cost().map_err(SchemaError::from)?;
        let penalty = self.penalty(&grid)?;
        let cone: ConeSpec<f64> = self.cone.into();
        cone.validate().map_err(SchemaError::from)?;
        if let Some(tol) = self.solver.tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(SchemaError::new("solver.tol must be positive").into());
            }
        }
        Ok(EmotProblem::new(grid, cost, penalty, cone).with_options(self.options()))
    }

    fn check_sequence(&self, seq: &SequenceBlock, problem: &EmotProblem<f64>) -> Result<(), SchemaError> {
        let increasing = |v: &[usize]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        match seq {
            SequenceBlock::UtilityScaling { indices } => {
                if !increasing(indices) || indices[0] == 0 {
                    return Err(SchemaError::new("sequence.indices must be a nonempty increasing list of positive integers"));
                }
                if !matches!(self.penalty, PenaltyBlock::Divergence { .. }) {
                    return Err(SchemaError::new("utility_scaling needs a divergence penalty"));
                }
            }
            SequenceBlock::EpsMartingale { eps } => {
                if eps.is_empty() || eps.windows(2).any(|w| w[1] >= w[0]) || eps.iter().any(|e| *e < 0.0) {
                    return Err(SchemaError::new("sequence.eps must be a nonempty decreasing list of nonnegative numbers"));
                }
            }
            SequenceBlock::WassersteinPerturbation { limit, steps, metric: m, tol } => {
                let ns: Vec<usize> = steps.iter().map(|s| s.n).collect();
                if !increasing(&ns) {
                    return Err(SchemaError::new("sequence.steps must be nonempty with increasing n"));
                }
                for l in limit {
                    marginal(&problem.grid, l)?;
                }
                for s in steps {
                    for r in &s.references {
                        marginal(&problem.grid, r)?;
                    }
                    LossFunction::from(s.loss).validate()?;
                }
                if let Some(MetricBlock::Custom { table }) = m {
                    for l in limit {
                        GroundMetric::Custom(table.clone()).validate(problem.grid.block_size(l.t))?;
                    }
                }
                if tol.is_some_and(|t| t.is_nan() || t <= 0.0) {
                    return Err(SchemaError::new("sequence.tol must be positive"));
                }
            }
            SequenceBlock::OptionGrowth { options, limit, indices } => {
                if options.is_empty() {
                    return Err(SchemaError::new("sequence.options must be nonempty"));
                }
                if let Some(ix) = indices {
                    if !increasing(ix) || ix[0] == 0 || *ix.last().unwrap() > options.len() {
                        return Err(SchemaError::new("sequence.indices must increase within 1..=options"));
                    }
                }
                for l in limit {
                    marginal(&problem.grid, l)?;
                }
                options_of(&problem.grid, options).map_err(|e| match e {
                    Located::Plain(s) => s,
                    Located::Expr(t, err) => SchemaError::new(format!("expression '{t}': {}", err.message)),
                })?;
            }
        }
        Ok(())
    }
}

pub fn marginals_of(grid: &MarketGrid<f64>, blocks: &[MarginalBlock]) -> Result<Vec<MarginalMeasure<f64>>, SchemaError> {
    blocks.iter().map(|m| marginal(grid, m)).collect()
}

pub fn metric_of(m: &Option<MetricBlock>) -> GroundMetric<f64> {
    metric(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const G1: &str = r#"{
  "grid": {"nodes": [[[1]], [[0, 1, 2]]]},
  "cost": {"expr": "call(x1, 1)"},
  "penalty": {"family": "divergence", "utility": {"name": "exponential"},
              "terms": [{"t": 1, "weights": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]}]}
}"#;

    #[test]
    fn loads_minimal_scenario() {
        let l = load(G1).unwrap();
        assert_eq!(l.problem.cost.values(), &[0.0, 0.0, 1.0]);
        assert_eq!(l.problem.penalty.family(), "divergence");
        assert_eq!(l.problem.cone, ConeSpec::Martingale);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = G1.replace("\"cost\"", "\"colour\": 1, \"cost\"");
        let e = load(&bad).unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("colour"), "{}", e.message);
        let bad = G1.replace("\"name\": \"exponential\"", "\"name\": \"exponential\", \"beta\": 2");
        assert!(load(&bad).is_err());
    }

    #[test]
    fn expression_errors_point_into_the_source() {
        let bad = G1.replace("call(x1, 1)", "call(x1, 1) + y");
        let e = load(&bad).unwrap_err();
        assert_eq!((e.line, e.column), (Some(3), Some(35)));
        let bad = G1.replace("call(x1, 1)", "x2");
        assert!(load(&bad).unwrap_err().message.contains("x2_0"));
    }
}
