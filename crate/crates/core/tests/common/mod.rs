//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the library's closed forms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `-max(sqrt(mu) - |x|, 0)^2 + tau (x - m)^2`, written out independently.
pub fn prox_obj(x: f64, m: f64, tau: f64, mu: f64) -> f64 {
    let gap = mu.sqrt() - x.abs();
    let pen = if gap > 0.0 { gap * gap } else { 0.0 };
    -pen + tau * (x - m) * (x - m)
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
        if (b - a).abs() < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Derivative of [`prox_obj`] away from `x = 0`.
fn prox_obj_slope(x: f64, m: f64, tau: f64, mu: f64) -> f64 {
    let gap = mu.sqrt() - x.abs();
    let pen = if gap > 0.0 { 2.0 * gap * x.signum() } else { 0.0 };
    pen + 2.0 * tau * (x - m)
}

/// Bisection on the slope when it changes sign over `[a, b]`, golden-section
/// search otherwise.
fn refine(m: f64, tau: f64, mu: f64, a: f64, b: f64) -> f64 {
    let d = |x| prox_obj_slope(x, m, tau, mu);
    if d(a) < 0.0 && d(b) > 0.0 {
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        golden(|x| prox_obj(x, m, tau, mu), a, b)
    }
}

/// Grid search over `[-R, R]` followed by golden-section refinement of every
/// grid-local minimum. Returns `(argmin, min)`.
pub fn prox_oracle(m: f64, tau: f64, mu: f64, step: f64) -> (f64, f64) {
    let f = |x: f64| prox_obj(x, m, tau, mu);
    let r = m.abs() + mu.sqrt() + 1.0;
    let n = (2.0 * r / step).ceil() as usize;
    let xs: Vec<f64> = (0..=n).map(|i| -r + i as f64 * step).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = (0.0, f(0.0));
    let mut consider = |x: f64| {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    };
    for &x in &[m, mu.sqrt(), -mu.sqrt()] {
        consider(x);
    }
    for i in 1..n {
        if vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
            consider(refine(m, tau, mu, xs[i - 1], xs[i + 1]));
            consider(xs[i]);
        }
    }
    best
}

/// Spectral prox via the scalar oracle on every singular value.
pub fn spectral_oracle(m: &DMatrix<f64>, tau: f64, mu: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let s = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .map(|&v| prox_oracle(v, tau, mu, 1e-3).0.max(0.0)),
    );
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    &u * DMatrix::from_diagonal(&s) * vt
}

/// `g(x) = r_mu(x) + x^2` from the definition of `r_mu`.
pub fn g_oracle(x: f64, mu: f64) -> f64 {
    let gap = (mu.sqrt() - x.abs()).max(0.0);
    mu - gap * gap + x * x
}

/// Stationary points of `r_mu(x) + (a x - b)^2` in 1-D found by scanning.
///
/// Away from zero `g` is differentiable, so stationarity is `psi(x) = 0` with
/// `psi(x) = 2 (1 - a^2) x + 2 a b - g'(x)`; zero itself is stationary iff
/// `|2 a b| <= 2 sqrt(mu)`. Zeros of `psi` are found from sign changes and
/// from grid-local minima of `|psi|` (tangential zeros), then refined.
pub fn stationary_scan(a: f64, b: f64, mu: f64, lim: f64, step: f64) -> Vec<f64> {
    let s = mu.sqrt();
    let gp = |x: f64| if x.abs() >= s { 2.0 * x } else { 2.0 * s * x.signum() };
    let psi = |x: f64| 2.0 * (1.0 - a * a) * x + 2.0 * a * b - gp(x);
    let mut out = Vec::new();
    if (a * b).abs() <= s + 1e-12 {
        out.push(0.0);
    }
    let n = (2.0 * lim / step).round() as usize;
    let xs: Vec<f64> = (0..=n).map(|i| -lim + i as f64 * step).collect();
    let mut push = |x: f64| {
        if x != 0.0 && psi(x).abs() < 1e-9 && !out.iter().any(|&y: &f64| (y - x).abs() < 1e-7) {
            out.push(x);
        }
    };
    for i in 0..n {
        let (x0, x1) = (xs[i], xs[i + 1]);
        if x0 < 0.0 && x1 > 0.0 {
            continue;
        }
        let (p0, p1) = (psi(x0), psi(x1));
        if p0 == 0.0 {
            push(x0);
        }
        if p0 * p1 < 0.0 {
            let (mut lo, mut hi) = (x0, x1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if psi(lo) * psi(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            push(0.5 * (lo + hi));
        }
        if i > 0 && i + 1 < n {
            let (pm, pp) = (psi(xs[i - 1]).abs(), psi(x1).abs());
            if p0.abs() <= pm && p0.abs() <= pp && p0.abs() < 1e-2 {
                let x = golden(|t| psi(t).abs(), xs[i - 1], x1);
                push(x);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}
