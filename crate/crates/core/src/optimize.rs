//! One-dimensional concave searches and a small BFGS ascent used by the
//! valuation and hedging layers.

use crate::scalar::Scalar;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of a concave (unimodal) function on `[a, b]`.
/// Returns `(argmax, max)`; evaluations may return `-inf`.
pub fn golden_max<S: Scalar, F: FnMut(S) -> S>(mut f: F, mut a: S, mut b: S, tol: S, max_iter: usize) -> (S, S) {
    let r = S::c(INV_PHI);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut it = 0;
    while (b - a) > tol && it < max_iter {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
        it += 1;
    }
    // Endpoints can win for monotone objectives.
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for x in [a, b] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Outcome of [`bracket_concave_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bracket<S> {
    /// Interval `[lo, hi]` containing a maximizer.
    Found(S, S),
    /// The objective kept increasing up to the cap; the sup may be `+inf`.
    Unbounded,
}

/// Grows `[center - w, center + w]`, doubling `w` from `initial` until the
/// concave objective no longer increases towards either edge, up to
/// `cap`. Probes at `-inf` count as "decreasing".
pub fn bracket_concave_max<S: Scalar, F: FnMut(S) -> S>(mut f: F, center: S, initial: S, cap: S) -> Bracket<S> {
    let mut w = initial;
    let f0 = f(center);
    loop {
        let fl = f(center - w);
        let fr = f(center + w);
        let left_ok = fl <= f(center - w * S::c(0.5)) || fl == S::neg_infinity();
        let right_ok = fr <= f(center + w * S::c(0.5)) || fr == S::neg_infinity();
        if (left_ok && right_ok) || (fl <= f0 && fr <= f0) {
            return Bracket::Found(center - w, center + w);
        }
        if w >= cap {
            return Bracket::Unbounded;
        }
        w *= S::c(2.0);
    }
}

/// Bisection for the root of a nonincreasing function `g` on `[a, b]`
/// with `g(a) >= 0 >= g(b)`.
pub fn bisect_decreasing<S: Scalar, G: FnMut(S) -> S>(mut g: G, mut a: S, mut b: S, tol: S, max_iter: usize) -> S {
    for _ in 0..max_iter {
        let m = (a + b) * S::c(0.5);
        if (b - a) <= tol || m <= a || m >= b {
            return m;
        }
        if g(m) > S::zero() {
            a = m;
        } else {
            b = m;
        }
    }
    (a + b) * S::c(0.5)
}

/// Options for [`bfgs_maximize`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<S> {
    pub max_iter: usize,
    pub grad_tol: S,
    pub value_tol: S,
}

impl<S: Scalar> Default for BfgsOptions<S> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: S::c(1e-10),
            value_tol: S::c(1e-15),
        }
    }
}

/// Quasi-Newton ascent with Armijo backtracking for smooth concave
/// objectives. `f` returns `(value, gradient)`; `-inf` values are treated
/// as infeasible and rejected by the line search. Returns the best point.
pub fn bfgs_maximize<S: Scalar, F>(mut f: F, x0: Vec<S>, opts: BfgsOptions<S>) -> (Vec<S>, S)
where
    F: FnMut(&[S]) -> (S, Vec<S>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if n == 0 || !fx.is_finite() {
        return (x, fx);
    }
    // inverse Hessian approximation of -f
    let mut h = identity::<S>(n);
    for _ in 0..opts.max_iter {
        let gnorm = g.iter().map(|v| v.abs()).fold(S::zero(), S::max);
        if gnorm <= opts.grad_tol {
            break;
        }
        let mut p: Vec<S> = (0..n).map(|i| (0..n).map(|j| h[i][j] * g[j]).sum()).collect();
        let mut slope: S = p.iter().zip(&g).map(|(a, b)| *a * *b).sum();
        if !(slope > S::zero()) {
            h = identity(n);
            p = g.clone();
            slope = g.iter().map(|v| *v * *v).sum();
        }
        let mut step = S::one();
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<S> = x.iter().zip(&p).map(|(a, b)| *a + step * *b).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ >= fx + S::c(1e-4) * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= S::c(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<S> = xn.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        // curvature of -f: y = -(g_new - g_old)
        let y: Vec<S> = gn.iter().zip(&g).map(|(a, b)| *b - *a).collect();
        let sy: S = s.iter().zip(&y).map(|(a, b)| *a * *b).sum();
        let improvement = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        if sy > S::epsilon() {
            let hy: Vec<S> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
            let yhy: S = y.iter().zip(&hy).map(|(a, b)| *a * *b).sum();
            let rho = S::one() / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] = h[i][j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        if improvement.abs() <= opts.value_tol * (S::one() + fx.abs()) {
            break;
        }
    }
    (x, fx)
}

fn identity<S: Scalar>(n: usize) -> Vec<Vec<S>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { S::one() } else { S::zero() }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x: f64| -(x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-12, 200);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_handles_monotone_objective() {
        let (x, _) = golden_max(|x: f64| x, 0.0, 1.0, 1e-12, 200);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn bracket_grows_until_peak_inside() {
        match bracket_concave_max(|x: f64| -(x - 100.0).abs(), 0.0, 1.0, 1e6) {
            Bracket::Found(lo, hi) => assert!(lo <= 100.0 && hi >= 100.0),
            Bracket::Unbounded => panic!(),
        }
        assert_eq!(bracket_concave_max(|x: f64| x, 0.0, 1.0, 1024.0), Bracket::Unbounded);
    }

    #[test]
    fn bisection_root() {
        let r = bisect_decreasing(|x: f64| 2.0 - x * x, 0.0, 2.0, 1e-15, 200);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bfgs_on_log_sum_exp() {
        // max -ln(e^{-x} + e^{x-y}) - (y - 1)^2 / 2 is concave
        let f = |v: &[f64]| {
            let (x, y) = (v[0], v[1]);
            let a = (-x).exp();
            let b = (x - y).exp();
            let s = a + b;
            let val = -s.ln() - 0.5 * (y - 1.0).powi(2);
            let gx = (a - b) / s;
            let gy = b / s - (y - 1.0);
            (val, vec![gx, gy])
        };
        let (x, _) = bfgs_maximize(f, vec![0.0, 0.0], BfgsOptions::default());
        let (_, g) = f(&x);
        assert!(g[0].abs() < 1e-8 && g[1].abs() < 1e-8);
    }
}
