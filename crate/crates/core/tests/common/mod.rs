#![allow(dead_code)]

use emot::hedging::{solve_sup, HedgeProblem};
use emot::penalties::{LossFunction, MarketOption, PenaltySpec, WassersteinTerm};
use emot::solver::{solve_inf, Backend, EmotProblem, SolverOptions};
use emot::valuation::UtilityFunction;
use emot::wasserstein::GroundMetric;
use emot::{Cone, ConeSpec, Grid, Marginal, MarginalMeasure, MarketGrid, Payoff, PathFunction};

pub fn g1() -> Grid {
    MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap()
}

pub fn g2() -> Grid {
    MarketGrid::one_dim(vec![vec![2.0], vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0, 4.0]]).unwrap()
}

pub fn call(g: &Grid, t: usize, k: f64) -> Payoff {
    PathFunction::from_fn(g, |p| (p.x(t, 0) - k).max(0.0))
}

pub fn uniforms(g: &Grid) -> Vec<Marginal> {
    (1..=g.horizon()).map(|t| MarginalMeasure::uniform(g, t).unwrap()).collect()
}

/// Call payoff on the nodes of `t`.
pub fn node_call(g: &Grid, t: usize, k: f64) -> Vec<f64> {
    g.nodes(t, 0).iter().map(|x| (x - k).max(0.0)).collect()
}

/// Price of `payoff` under the uniform marginal at `t`.
pub fn uniform_price(payoff: &[f64]) -> f64 {
    payoff.iter().sum::<f64>() / payoff.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Divergence,
    Fixed,
    Market,
    Wasserstein,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Divergence, Family::Fixed, Family::Market, Family::Wasserstein];

    pub fn name(self) -> &'static str {
        match self {
            Family::Divergence => "divergence",
            Family::Fixed => "fixed",
            Family::Market => "market",
            Family::Wasserstein => "wasserstein",
        }
    }
}

/// Penalty of the given family on every date `t >= 1`. `smooth` selects
/// the power-loss variants of the market and Wasserstein families.
pub fn penalty(g: &Grid, family: Family, smooth: bool) -> PenaltySpec<f64> {
    let refs = uniforms(g);
    match family {
        Family::Divergence => PenaltySpec::divergence(g, UtilityFunction::exponential(), refs).unwrap(),
        Family::Fixed => PenaltySpec::fixed_marginals(g, refs).unwrap(),
        Family::Market => {
            let mut options = Vec::new();
            for t in 1..=g.horizon() {
                let mid = g.nodes(t, 0)[g.block_size(t) / 2];
                for (k, shift, loss) in [
                    (mid, 0.05, if smooth { LossFunction::Power { p: 2.0 } } else { LossFunction::Threshold { eps: 0.02 } }),
                    (mid - 1.0, -0.03, LossFunction::Threshold { eps: 0.05 }),
                ] {
                    let payoff = node_call(g, t, k);
                    let price = uniform_price(&payoff) + shift;
                    options.push((t, MarketOption { payoff, price, loss }));
                }
            }
            PenaltySpec::market_price(g, options).unwrap()
        }
        Family::Wasserstein => {
            let loss = if smooth { LossFunction::Power { p: 2.0 } } else { LossFunction::Threshold { eps: 0.2 } };
            let terms = refs
                .into_iter()
                .map(|reference| WassersteinTerm {
                    reference,
                    loss,
                    metric: GroundMetric::Euclidean,
                })
                .collect();
            PenaltySpec::wasserstein_ball(g, terms).unwrap()
        }
    }
}

pub fn scenario_cost(g: &Grid) -> Payoff {
    let t = g.horizon();
    PathFunction::from_fn(g, |p| {
        let last = p.x(t, 0);
        let prev = p.x(t - 1, 0);
        (last - prev).abs() + 0.5 * (last - 1.5).max(0.0) - 0.25 * (prev - 1.0).max(0.0)
    })
}

pub struct GapResult {
    pub label: String,
    pub inf: f64,
    pub sup: f64,
    pub backend: &'static str,
    pub status: &'static str,
}

impl GapResult {
    pub fn gap(&self) -> f64 {
        (self.inf - self.sup).abs()
    }

    pub fn bound(&self) -> f64 {
        if self.backend == "lp" {
            1e-7
        } else {
            1e-4
        }
    }
}

/// Solves both sides; the sup side is warm-started from the inf side's
/// static prices.
pub fn gap_closure(label: String, problem: &EmotProblem<f64>) -> GapResult {
    let inf = solve_inf(problem).unwrap();
    let mut h = HedgeProblem::from_emot(problem);
    if let Some(s) = inf.dual_statics.clone() {
        h = h.with_warm_start(s);
    }
    let sup = solve_sup(&h).unwrap();
    GapResult {
        label,
        inf: inf.inf_value,
        sup: sup.sup_value,
        backend: inf.backend,
        status: inf.status.name(),
    }
}

pub fn gap_suite() -> Vec<(String, EmotProblem<f64>)> {
    let mut out = Vec::new();
    for (gname, g) in [("T1", g1()), ("T2", g2())] {
        let cost = scenario_cost(&g);
        for cone in [ConeSpec::Martingale, ConeSpec::EpsMartingale { eps: 0.05 }, ConeSpec::NullCone] {
            for family in Family::ALL {
                let smooth = gname == "T1";
                let pen = penalty(&g, family, smooth);
                let p = EmotProblem::new(g.clone(), cost.clone(), pen, cone)
                    .with_options(SolverOptions::default().with_tol(1e-10));
                out.push((format!("{gname}/{}/{}", cone.name(), family.name()), p));
            }
        }
    }
    out
}

pub fn lp_options() -> SolverOptions<f64> {
    SolverOptions::default().with_backend(Backend::Lp)
}

pub fn cone_list() -> [Cone; 3] {
    [ConeSpec::Martingale, ConeSpec::EpsMartingale { eps: 0.05 }, ConeSpec::NullCone]
}
pub mod props;
