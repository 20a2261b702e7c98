mod common;

use common::*;
use emot::convergence::{pinning_index, run_marginal_perturbation, run_monotone, ConvergenceExperiment, PerturbationStep};
use emot::penalties::{monotone_sequence, LossFunction, MarketOption, PenaltySpec};
use emot::solver::{mot_value, SolverOptions};
use emot::wasserstein::GroundMetric;
use emot::{ConeSpec, MarginalMeasure, MarketGrid, PathFunction};

#[test]
fn unperturbed_hard_schedule_is_constant() {
    let g = g1();
    let u = MarginalMeasure::uniform(&g, 1).unwrap();
    let schedule: Vec<PerturbationStep<f64>> = (1..=4)
        .map(|n| PerturbationStep {
            n,
            references: vec![u.clone()],
            loss: LossFunction::Hard,
        })
        .collect();
    let t = run_marginal_perturbation(
        &g,
        &call(&g, 1, 1.0),
        &[u],
        &schedule,
        &GroundMetric::Euclidean,
        ConeSpec::Martingale,
        &SolverOptions::default(),
        1e-3,
    )
    .unwrap();
    assert!(t.converged);
    for r in &t.rows {
        assert!((r.value - 1.0 / 3.0).abs() < 1e-9);
    }
}

#[test]
fn fixed_radius_makes_no_claim() {
    let g = g1();
    let pts = [0.0, 1.0, 2.0];
    let u = MarginalMeasure::uniform(&g, 1).unwrap();
    let schedule: Vec<PerturbationStep<f64>> = (1..=6)
        .map(|n| {
            let d = 2f64.powi(-(n as i32)) / 10.0;
            PerturbationStep {
                n,
                references: vec![MarginalMeasure::on_line(1, &pts, vec![1.0 / 3.0 + d, 1.0 / 3.0, 1.0 / 3.0 - d]).unwrap()],
                loss: LossFunction::Threshold { eps: 0.5 },
            }
        })
        .collect();
    let t = run_marginal_perturbation(
        &g,
        &call(&g, 1, 1.0),
        &[u],
        &schedule,
        &GroundMetric::Euclidean,
        ConeSpec::Martingale,
        &SolverOptions::default(),
        1e-3,
    )
    .unwrap();
    assert!(!t.hypothesis_holds);
    assert!(!t.converged);
    assert!(t.note.is_some());
    assert_eq!(t.rows.len(), 6);
}

#[test]
fn growing_option_lists_pin_the_marginal() {
    let g: emot::Grid = MarketGrid::one_dim(vec![vec![2.0], vec![0.0, 1.0, 2.0, 3.0, 4.0]]).unwrap();
    let u = MarginalMeasure::uniform(&g, 1).unwrap();
    let cost = PathFunction::from_fn(&g, |p| (p.x(1, 0) - 2.0).powi(2) * (p.x(1, 0) - 1.0).max(0.0));
    let options: Vec<(usize, MarketOption<f64>)> = [1.0, 2.0, 3.0, 0.5]
        .iter()
        .map(|k| {
            let payoff = node_call(&g, 1, *k);
            let price = uniform_price(&payoff);
            (1, MarketOption { payoff, price, loss: LossFunction::Hard })
        })
        .collect();
    let sets: Vec<Vec<Vec<f64>>> = (1..=4).map(|n| options[..n].iter().map(|(_, o)| o.payoff.clone()).collect()).collect();
    assert_eq!(pinning_index(g.nodes(1, 0), &sets), Some(2));
    let (gb, ob) = (g.clone(), options.clone());
    let seq = monotone_sequence(
        move |n| Ok((PenaltySpec::market_price(&gb, ob[..n].to_vec())?, ConeSpec::Martingale)),
        (PenaltySpec::fixed_marginals(&g, vec![u.clone()]).unwrap(), ConeSpec::Martingale),
    );
    let exp = ConvergenceExperiment::new(g.clone(), cost.clone(), seq, vec![1, 2, 3, 4]);
    let t = run_monotone(&exp).unwrap();
    assert!(t.monotone);
    let mot = mot_value(&g, vec![u], &cost).unwrap().inf_value;
    assert!((t.limit_value - mot).abs() < 1e-10);
    assert!(t.rows[2].limit_gap < 1e-9 && t.rows[3].limit_gap < 1e-9);
    assert!(t.rows[0].value < mot - 1e-6);
}
