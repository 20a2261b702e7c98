//! Pairwise conditional gradient over the model polytope with an exact
//! linear minimization oracle and exact line search.

use super::model::Model;
use crate::error::Result;
use crate::lp::{FarkasCertificate, LpOracle, LpSolution};
use crate::scalar::Scalar;

const LINE_SEARCH_STEPS: usize = 80;
const RENORMALIZE_EVERY: usize = 64;

pub(crate) enum FwStart<S> {
    Ready(FwOutput<S>),
    Infeasible(FarkasCertificate<S>),
    /// Every feasible point has infinite penalty.
    InfiniteValue,
}

pub(crate) struct FwOutput<S> {
    pub x: Vec<S>,
    pub value: S,
    pub gap: S,
    pub iterations: usize,
    pub converged: bool,
    /// Oracle solution for the gradient at `x` (its duals price the
    /// linearized problem).
    pub lmo: LpSolution<S>,
}

struct Vertex<S> {
    x: Vec<S>,
    weight: S,
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn same_point<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.iter().zip(b).all(|(x, y)| (*x - *y).abs() <= S::c(1e-12))
}

struct Problem<'a, S> {
    model: &'a Model<S>,
    frozen: Vec<bool>,
}

impl<'a, S: Scalar> Problem<'a, S> {
    fn gradient(&self, x: &[S]) -> Vec<S> {
        let mut g = self.model.lp.costs().to_vec();
        for (k, s) in self.model.smooth.iter().enumerate() {
            if !self.frozen[k] {
                g[s.var.0] += s.kind.derivative(x[s.var.0]);
            }
        }
        g
    }

    /// `d/dgamma F(x + gamma d)`.
    fn slope(&self, x: &[S], d: &[S], gamma: S, linear: S) -> S {
        let mut v = linear;
        for (k, s) in self.model.smooth.iter().enumerate() {
            let dk = d[s.var.0];
            if self.frozen[k] || dk == S::zero() {
                continue;
            }
            let der = s.kind.derivative(x[s.var.0] + gamma * dk);
            v += der * dk;
        }
        if v.is_nan() {
            S::infinity()
        } else {
            v
        }
    }

    fn line_search(&self, x: &[S], d: &[S], gamma_max: S) -> S {
        let linear = dot(self.model.lp.costs(), d);
        if self.slope(x, d, S::zero(), linear) >= S::zero() {
            return S::zero();
        }
        if self.slope(x, d, gamma_max, linear) <= S::zero() {
            return gamma_max;
        }
        let (mut lo, mut hi) = (S::zero(), gamma_max);
        for _ in 0..LINE_SEARCH_STEPS {
            let mid = (lo + hi) / S::c(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.slope(x, d, mid, linear) <= S::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

pub(crate) fn frank_wolfe<S: Scalar>(model: &Model<S>, tol: S, max_iter: usize) -> Result<FwStart<S>> {
    let mut oracle: LpOracle<S> = match model.lp.clone().into_oracle() {
        Ok(o) => o,
        Err(cert) => return Ok(FwStart::Infeasible(cert)),
    };
    let n = oracle.num_vars();
    // vertices maximizing each path and smooth coordinate
    let mut targets: Vec<usize> = model.path_vars.iter().flatten().map(|v| v.0).collect();
    targets.extend(model.smooth.iter().map(|s| s.var.0));
    let mut active: Vec<Vertex<S>> = Vec::new();
    for &i in &targets {
        let mut c = vec![S::zero(); n];
        c[i] = -S::one();
        let sol = oracle.minimize(&c)?;
        if !active.iter().any(|v| same_point(&v.x, &sol.x)) {
            active.push(Vertex { x: sol.x, weight: S::zero() });
        }
    }
    let share = S::one() / S::from_count(active.len());
    for v in active.iter_mut() {
        v.weight = share;
    }
    let frozen: Vec<bool> = model
        .smooth
        .iter()
        .map(|s| active.iter().all(|v| v.x[s.var.0] <= S::c(1e-14)))
        .collect();
    let prob = Problem { model, frozen };
    let mut x = combine(&active, n);
    if !model.objective(&x).is_finite() {
        return Ok(FwStart::InfiniteValue);
    }
    let mut iterations = 0;
    loop {
        let g = prob.gradient(&x);
        let s = oracle.minimize(&g)?;
        let gap = (dot(&g, &x) - dot(&g, &s.x)).max(S::zero());
        if gap <= tol || iterations >= max_iter {
            let value = model.objective(&x);
            return Ok(FwStart::Ready(FwOutput {
                x,
                value,
                gap,
                iterations,
                converged: gap <= tol,
                lmo: s,
            }));
        }
        iterations += 1;
        // away vertex: worst active vertex along the gradient
        let (away, _) = active
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(&g, &v.x)))
            .fold((0, S::neg_infinity()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let d: Vec<S> = s.x.iter().zip(&active[away].x).map(|(a, b)| *a - *b).collect();
        let gamma_max = active[away].weight;
        let gamma = prob.line_search(&x, &d, gamma_max);
        if gamma == S::zero() {
            // pairwise direction stalled; fall back to a plain step toward s
            let d: Vec<S> = s.x.iter().zip(&x).map(|(a, b)| *a - *b).collect();
            let gamma = prob.line_search(&x, &d, S::one());
            if gamma == S::zero() {
                let value = model.objective(&x);
                return Ok(FwStart::Ready(FwOutput {
                    x,
                    value,
                    gap,
                    iterations,
                    converged: false,
                    lmo: s,
                }));
            }
            for v in active.iter_mut() {
                v.weight *= S::one() - gamma;
            }
            add_vertex(&mut active, s.x.clone(), gamma);
        } else {
            if gamma >= gamma_max {
                active.swap_remove(away);
            } else {
                active[away].weight -= gamma;
            }
            add_vertex(&mut active, s.x.clone(), gamma);
        }
        active.retain(|v| v.weight > S::zero());
        if iterations % RENORMALIZE_EVERY == 0 {
            let total: S = active.iter().map(|v| v.weight).sum();
            for v in active.iter_mut() {
                v.weight /= total;
            }
        }
        x = combine(&active, n);
    }
}

fn add_vertex<S: Scalar>(active: &mut Vec<Vertex<S>>, x: Vec<S>, weight: S) {
    if let Some(v) = active.iter_mut().find(|v| same_point(&v.x, &x)) {
        v.weight += weight;
    } else {
        active.push(Vertex { x, weight });
    }
}

fn combine<S: Scalar>(active: &[Vertex<S>], n: usize) -> Vec<S> {
    let mut x = vec![S::zero(); n];
    for v in active {
        for (xi, vi) in x.iter_mut().zip(&v.x) {
            *xi += v.weight * *vi;
        }
    }
    x
}
