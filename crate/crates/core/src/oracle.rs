//! Slow, independent reference computations used to check the solvers:
//! closed-form Gibbs tilts, dense grid scans and exhaustive vertex
//! enumeration. Nothing here calls the linear programming or solver code.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{EmotError, Result};
use crate::lattice::MarketGrid;

pub const VERTEX_ENUM_MAX_PATHS: usize = 64;
pub const VERTEX_ENUM_MAX_BASES: u128 = 5_000_000;
pub const DENSE_DEFAULT_RESOLUTION: usize = 200;
pub const DENSE_DEFAULT_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    GibbsTilt,
    DenseGrid,
    VertexEnum,
    ClosedForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub value: f64,
    /// Minimizer: weights (Gibbs, vertex enumeration) or coordinates (grid scan).
    pub argmin: Vec<f64>,
    pub method: OracleMethod,
    /// Cell diameter after the final refinement (grid scans only).
    pub resolution: Option<f64>,
    /// Tilt parameter (Gibbs only).
    pub lambda: Option<f64>,
}

fn tilt(reference: &[f64], cost: &[f64], nodes: &[f64], lambda: f64) -> Vec<f64> {
    let logs: Vec<f64> = reference
        .iter()
        .zip(cost)
        .zip(nodes)
        .map(|((r, c), x)| r.ln() - c - lambda * x)
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn mean(q: &[f64], nodes: &[f64]) -> f64 {
    q.iter().zip(nodes).map(|(a, b)| a * b).sum()
}

/// `min_q <cost, q> + H(q | ref)` over probabilities on `nodes`, with the
/// mean pinned to `target` when given.
pub fn gibbs_tilt(nodes: &[f64], reference: &[f64], cost: &[f64], target: Option<f64>) -> Result<OracleResult> {
    if nodes.len() != reference.len() || nodes.len() != cost.len() || nodes.is_empty() {
        return Err(EmotError::DimensionMismatch("nodes, reference and cost differ in length".into()));
    }
    if reference.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(EmotError::InvalidMeasure("reference must be strictly positive".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(EmotError::InvalidParameter("cost must be finite".into()));
    }
    let mass: f64 = reference.iter().sum();
    let reference: Vec<f64> = reference.iter().map(|r| r / mass).collect();
    let lo_x = nodes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_x = nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda = match target {
        None => 0.0,
        Some(m) if lo_x == hi_x && m == lo_x => 0.0,
        Some(m) if m <= lo_x || m >= hi_x => return Err(EmotError::Infeasible { residual: 0.0 }),
        Some(m) => {
            let f = |l: f64| mean(&tilt(&reference, cost, nodes, l), nodes) - m;
            let mut b = 1.0;
            while !(f(-b) > 0.0 && f(b) < 0.0) {
                b *= 2.0;
                if b > 1e12 {
                    return Err(EmotError::CertificateFailure("tilt bracket did not close".into()));
                }
            }
            let (mut lo, mut hi) = (-b, b);
            for _ in 0..400 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let v = f(mid);
                if v.abs() <= 1e-13 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if v > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };
    let q = tilt(&reference, cost, nodes, lambda);
    let value = q
        .iter()
        .zip(cost)
        .zip(&reference)
        .map(|((qi, c), r)| qi * c + if *qi > 0.0 { qi * (qi / r).ln() } else { 0.0 })
        .sum();
    Ok(OracleResult {
        value,
        argmin: q,
        method: OracleMethod::GibbsTilt,
        resolution: None,
        lambda: Some(lambda),
    })
}

/// Axis-aligned box for [`dense_grid_min`]; the objective returns `+inf`
/// off the feasible region.
#[derive(Debug, Clone)]
pub struct DenseRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Full grid scan of the box followed by coordinate-descent refinement on
/// successively finer local grids.
pub fn dense_grid_min<F>(region: &DenseRegion, objective: F, resolution: usize, rounds: usize) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> f64,
{
    let d = region.lower.len();
    if d == 0 || d > 3 || region.upper.len() != d {
        return Err(EmotError::InvalidParameter("dense scans handle 1 to 3 dimensions".into()));
    }
    if resolution < 2 {
        return Err(EmotError::InvalidParameter("resolution must be at least 2".into()));
    }
    let steps: Vec<f64> = (0..d)
        .map(|i| (region.upper[i] - region.lower[i]) / (resolution - 1) as f64)
        .collect();
    let mut best = (f64::INFINITY, region.lower.clone());
    let mut idx = vec![0usize; d];
    loop {
        let x: Vec<f64> = (0..d).map(|i| region.lower[i] + idx[i] as f64 * steps[i]).collect();
        let v = objective(&x);
        if v < best.0 {
            best = (v, x);
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let mut h = steps.clone();
    for _ in 0..rounds {
        for _sweep in 0..50 {
            let mut improved = false;
            for i in 0..d {
                let center = best.1[i];
                for s in 0..resolution {
                    let mut x = best.1.clone();
                    x[i] = (center - h[i] + 2.0 * h[i] * s as f64 / (resolution - 1) as f64)
                        .clamp(region.lower[i], region.upper[i]);
                    let v = objective(&x);
                    if v < best.0 {
                        best = (v, x);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        for hi in h.iter_mut() {
            *hi *= 2.0 / (resolution - 1) as f64;
        }
    }
    let diameter = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(OracleResult {
        value: best.0,
        argmin: best.1,
        method: OracleMethod::DenseGrid,
        resolution: Some(diameter),
        lambda: None,
    })
}

/// Row-reduces `[a | b]` in place and returns the pivot columns; `None`
/// when the system is inconsistent.
fn row_reduce(a: &mut [Vec<f64>], b: &mut [f64], tol: f64) -> Option<Vec<usize>> {
    let (m, n) = (a.len(), a.first().map_or(0, Vec::len));
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..n {
        if r == m {
            break;
        }
        let (best, size) = (r..m)
            .map(|i| (i, a[i][c].abs()))
            .fold((r, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if size <= tol {
            continue;
        }
        a.swap(r, best);
        b.swap(r, best);
        let p = a[r][c];
        for k in 0..n {
            a[r][k] /= p;
        }
        b[r] /= p;
        for i in 0..m {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for k in 0..n {
                    a[i][k] -= f * a[r][k];
                }
                b[i] -= f * b[r];
            }
        }
        pivots.push(c);
        r += 1;
    }
    if b[r..].iter().any(|v| v.abs() > 1e-9) {
        return None;
    }
    Some(pivots)
}

/// Solves the square system restricted to `cols`; `None` when singular.
fn solve_square(a: &[Vec<f64>], b: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let r = cols.len();
    let mut m: Vec<Vec<f64>> = (0..r).map(|i| cols.iter().map(|&c| a[i][c]).collect()).collect();
    let mut rhs = b[..r].to_vec();
    for c in 0..r {
        let p = (c..r).max_by(|x, y| m[*x][c].abs().partial_cmp(&m[*y][c].abs()).unwrap())?;
        if m[p][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, p);
        rhs.swap(c, p);
        for i in 0..r {
            if i != c {
                let f = m[i][c] / m[c][c];
                if f != 0.0 {
                    for k in c..r {
                        m[i][k] -= f * m[c][k];
                    }
                    rhs[i] -= f * rhs[c];
                }
            }
        }
    }
    Some((0..r).map(|i| rhs[i] / m[i][i]).collect())
}

fn binomial(n: usize, k: usize) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exact minimum of `<cost, q>` over martingale probabilities on `grid`
/// with optionally pinned marginals (`marginals[t]`, indexed by product
/// node with asset 0 most significant), by enumerating every basis.
pub fn vertex_enum_mot(grid: &MarketGrid<f64>, marginals: &[Option<Vec<f64>>], cost: &[f64]) -> Result<OracleResult> {
    let paths: Vec<Vec<Vec<f64>>> = grid.paths().map(|p| p.values).collect();
    let n = paths.len();
    if n > VERTEX_ENUM_MAX_PATHS {
        return Err(EmotError::TooLarge(format!("{n} paths exceed the enumeration limit")));
    }
    if cost.len() != n {
        return Err(EmotError::DimensionMismatch("cost needs one entry per path".into()));
    }
    let horizon = paths[0].len() - 1;
    let assets = paths[0][0].len();
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut rhs = vec![1.0];
    for t in 0..horizon {
        let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for (i, p) in paths.iter().enumerate() {
            let key = p[..=t].iter().flatten().map(|v| v.to_bits()).collect();
            groups.entry(key).or_default().push(i);
        }
        for members in groups.values() {
            for j in 0..assets {
                let mut row = vec![0.0; n];
                for &i in members {
                    row[i] = paths[i][t + 1][j] - paths[i][t][j];
                }
                rows.push(row);
                rhs.push(0.0);
            }
        }
    }
    let nodes = grid.all_nodes();
    for (t, m) in marginals.iter().enumerate() {
        let Some(w) = m else { continue };
        if t > horizon {
            return Err(EmotError::TimeOutOfRange { t, horizon });
        }
        let mut block_rows = vec![vec![0.0; n]; w.len()];
        for (i, p) in paths.iter().enumerate() {
            let mut block = 0;
            for j in 0..assets {
                let k = nodes[t][j].iter().position(|v| *v == p[t][j]).expect("path value on grid");
                block = block * nodes[t][j].len() + k;
            }
            if block >= w.len() {
                return Err(EmotError::DimensionMismatch(format!("marginal at t={t} too short")));
            }
            block_rows[block][i] = 1.0;
        }
        rows.extend(block_rows);
        rhs.extend(w.iter().cloned());
    }
    let Some(pivots) = row_reduce(&mut rows, &mut rhs, 1e-11) else {
        return Err(EmotError::Infeasible { residual: 0.0 });
    };
    let r = pivots.len();
    if binomial(n, r) > VERTEX_ENUM_MAX_BASES {
        return Err(EmotError::TooLarge(format!("C({n},{r}) bases")));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut comb: Vec<usize> = (0..r).collect();
    loop {
        if let Some(sol) = solve_square(&rows, &rhs, &comb) {
            if sol.iter().all(|v| *v >= -1e-10) {
                let mut q = vec![0.0; n];
                for (c, v) in comb.iter().zip(&sol) {
                    q[*c] = v.max(0.0);
                }
                let value: f64 = q.iter().zip(cost).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * b }).sum();
                if best.as_ref().is_none_or(|b| value < b.0) {
                    best = Some((value, q));
                }
            }
        }
        // next combination
        let mut i = r;
        loop {
            if i == 0 {
                let (value, argmin) = best.ok_or(EmotError::Infeasible { residual: 0.0 })?;
                return Ok(OracleResult {
                    value,
                    argmin,
                    method: OracleMethod::VertexEnum,
                    resolution: None,
                    lambda: None,
                });
            }
            i -= 1;
            if comb[i] < n - r + i {
                comb[i] += 1;
                for k in i + 1..r {
                    comb[k] = comb[k - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gibbs_trivial_cases() {
        let r = gibbs_tilt(&[0.0, 1.0, 2.0], &[1.0 / 3.0; 3], &[0.0; 3], Some(1.0)).unwrap();
        assert!(r.value.abs() < 1e-14);
        assert!(r.argmin.iter().all(|q| (q - 1.0 / 3.0).abs() < 1e-12));
        let r = gibbs_tilt(&[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5], &[0.0; 3], Some(1.3)).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(gibbs_tilt(&[0.0, 1.0, 2.0], &[1.0 / 3.0; 3], &[0.0; 3], Some(2.0)).is_err());
    }

    #[test]
    fn gibbs_benchmark_meets_mean() {
        let nodes = [0.0, 1.0, 2.0];
        let r = gibbs_tilt(&nodes, &[1.0 / 3.0; 3], &[0.0, 0.0, 1.0], Some(1.0)).unwrap();
        assert!((mean(&r.argmin, &nodes) - 1.0).abs() < 1e-12);
        assert!(r.value > 0.0 && r.value < 1.0 / 3.0);
    }

    #[test]
    fn dense_scan_quadratic_and_linear() {
        let region = DenseRegion {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let quad = |x: &[f64]| {
            if x[0] + x[1] > 1.0 {
                f64::INFINITY
            } else {
                (x[0] - 0.3).powi(2) + (x[1] - 0.123456).powi(2)
            }
        };
        let r = dense_grid_min(&region, quad, 200, 3).unwrap();
        assert!(r.value < 1e-14);
        let lin = dense_grid_min(&region, |x: &[f64]| 2.0 * x[0] - x[1], 50, 1).unwrap();
        assert!((lin.value + 1.0).abs() < 1e-12);
        let c = dense_grid_min(&region, |_: &[f64]| 4.0, 10, 1).unwrap();
        assert_eq!(c.value, 4.0);
    }

    #[test]
    fn vertex_enumeration_examples() {
        let g = MarketGrid::one_dim(vec![vec![1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let call = [0.0, 0.0, 1.0];
        let pinned = vertex_enum_mot(&g, &[None, Some(vec![1.0 / 3.0; 3])], &call).unwrap();
        assert!((pinned.value - 1.0 / 3.0).abs() < 1e-14);
        let free = vertex_enum_mot(&g, &[None, None], &call).unwrap();
        assert!(free.value.abs() < 1e-14);
        assert!(matches!(
            vertex_enum_mot(&g, &[None, Some(vec![1.0, 0.0, 0.0])], &call),
            Err(EmotError::Infeasible { .. })
        ));
    }
}
