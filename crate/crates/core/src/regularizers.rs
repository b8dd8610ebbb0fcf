//! Closed-form regularizer evaluation and proximal operators.
//!
//! The non-convex penalty is
//!
//! ```text
//! r_mu(x) = sum_i ( mu - max(sqrt(mu) - |x_i|, 0)^2 )
//! ```
//!
//! which charges `mu` for every entry with `|x_i| >= sqrt(mu)` and grows
//! concavely below that. Adding `x^2` gives the convex function
//! `g(x) = r_mu(x) + x^2` used to characterise stationary points.
//!
//! Every proximal operator here minimises `reg(x) + tau * ||x - m||^2`
//! for a quadratic weight `tau >= 1`. Spectral variants apply the scalar rule
//! to the singular values and recompose with the original singular vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CARD_TOL, RANK_REL_TOL};

/// Which penalty is attached to the data term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `r_mu` on entries (vectors) or singular values (matrices).
    RMu,
    /// `2 sqrt(mu) ||x||_1`.
    L1,
    /// `2 sqrt(mu) ||X||_*`.
    Nuclear,
    /// `mu card(x)`.
    Card,
    /// `mu rank(X)`.
    Rank,
    /// No penalty: plain least squares.
    None,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::RMu => "rmu",
            RegKind::L1 => "l1",
            RegKind::Nuclear => "nuclear",
            RegKind::Card => "card",
            RegKind::Rank => "rank",
            RegKind::None => "none",
        }
    }

    pub fn is_spectral_only(self) -> bool {
        matches!(self, RegKind::Nuclear | RegKind::Rank)
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmu" | "r_mu" => Ok(RegKind::RMu),
            "l1" => Ok(RegKind::L1),
            "nuclear" => Ok(RegKind::Nuclear),
            "card" => Ok(RegKind::Card),
            "rank" => Ok(RegKind::Rank),
            "none" => Ok(RegKind::None),
            other => Err(Error::invalid(format!("unknown regularizer '{other}'"))),
        }
    }
}

/// Regularizer choice and strength.
///
/// For the convex baselines the weight on the norm is `mu' = 2 sqrt(mu)`,
/// so their proximal step soft-thresholds at exactly `sqrt(mu)` when
/// `tau = 1`, the same level at which `r_mu` hard-thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub kind: RegKind,
    pub mu: f64,
}

impl RegParams {
    pub fn new(kind: RegKind, mu: f64) -> Result<Self> {
        if kind == RegKind::None {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::invalid(format!("mu must be >= 0, got {mu}")));
            }
        } else {
            check_mu(mu)?;
        }
        Ok(Self { kind, mu })
    }

    pub fn none() -> Self {
        Self {
            kind: RegKind::None,
            mu: 0.0,
        }
    }

    pub fn sqrt_mu(&self) -> f64 {
        self.mu.sqrt()
    }

    /// `mu' = 2 sqrt(mu)`, the weight carried by the convex norms.
    pub fn convex_weight(&self) -> f64 {
        2.0 * self.sqrt_mu()
    }

    /// Soft-threshold level of the convex baselines at `tau = 1`.
    pub fn soft_level(&self) -> f64 {
        self.sqrt_mu()
    }

    /// Penalty value of a vector iterate.
    pub fn value_vector(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(match self.kind {
            RegKind::RMu => r_mu_sum(x.iter().copied(), self.mu),
            RegKind::L1 => self.convex_weight() * x.lp_norm(1),
            RegKind::Card => self.mu * linalg::cardinality(x, CARD_TOL) as f64,
            RegKind::None => 0.0,
            RegKind::Nuclear | RegKind::Rank => {
                return Err(Error::invalid(format!(
                    "regularizer '{}' needs a matrix-shaped problem",
                    self.kind.name()
                )))
            }
        })
    }

    /// Penalty value of a matrix iterate. `RMu`, `Nuclear` and `Rank` act on
    /// singular values, `L1` and `Card` on entries.
    pub fn value_matrix(&self, x: &DMatrix<f64>) -> Result<f64> {
        Ok(match self.kind {
            RegKind::RMu => r_mu_sum(linalg::singular_values(x).iter().copied(), self.mu),
            RegKind::Nuclear => self.convex_weight() * linalg::singular_values(x).sum(),
            RegKind::Rank => self.mu * linalg::numerical_rank(x, RANK_REL_TOL) as f64,
            RegKind::L1 => self.convex_weight() * x.iter().map(|v| v.abs()).sum::<f64>(),
            RegKind::Card => {
                self.mu * x.iter().filter(|v| v.abs() > CARD_TOL).count() as f64
            }
            RegKind::None => 0.0,
        })
    }
}

/// The subdifferential of `g` at a point, as a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSubgradient {
    pub lower: f64,
    pub upper: f64,
}

impl ScalarSubgradient {
    pub fn singleton(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn is_singleton(&self) -> bool {
        self.lower == self.upper
    }

    /// Distance from `v` to the interval (zero inside).
    pub fn distance(&self, v: f64) -> f64 {
        if v < self.lower {
            self.lower - v
        } else if v > self.upper {
            v - self.upper
        } else {
            0.0
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.distance(v) <= tol
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("mu must be positive and finite, got {mu}")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 1.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must be >= 1, got {tau}")))
    }
}

#[inline]
fn r_mu_scalar(x: f64, mu: f64) -> f64 {
    let (s, a) = (mu.sqrt(), x.abs());
    // mu - (s - a)^2 expanded so that r_mu(0) is exactly zero
    if a < s {
        a * (2.0 * s - a)
    } else {
        mu
    }
}

fn r_mu_sum(xs: impl Iterator<Item = f64>, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    xs.map(|x| r_mu_scalar(x, mu)).sum()
}

/// `r_mu(x) = sum_i (mu - max(sqrt(mu) - |x_i|, 0)^2)`.
pub fn eval_r_mu(x: &[f64], mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(r_mu_sum(x.iter().copied(), mu))
}

/// `g(x) = r_mu(x) + x^2`: `mu + x^2` outside `[-sqrt(mu), sqrt(mu)]`,
/// `2 sqrt(mu) |x|` inside.
pub fn eval_g(x: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = mu.sqrt();
    Ok(if x.abs() >= s {
        mu + x * x
    } else {
        2.0 * s * x.abs()
    })
}

pub fn subgrad_g(x: f64, mu: f64) -> Result<ScalarSubgradient> {
    check_mu(mu)?;
    Ok(subgrad_g_unchecked(x, mu.sqrt()))
}

pub(crate) fn subgrad_g_unchecked(x: f64, sqrt_mu: f64) -> ScalarSubgradient {
    if x == 0.0 {
        ScalarSubgradient {
            lower: -2.0 * sqrt_mu,
            upper: 2.0 * sqrt_mu,
        }
    } else if x.abs() >= sqrt_mu {
        ScalarSubgradient::singleton(2.0 * x)
    } else {
        ScalarSubgradient::singleton(2.0 * sqrt_mu * x.signum())
    }
}

/// Objective of the scalar proximal subproblem, without the constant `mu`:
/// `-max(sqrt(mu) - |x|, 0)^2 + tau (x - m)^2`.
pub fn prox_objective(x: f64, m: f64, tau: f64, mu: f64) -> f64 {
    let d = (mu.sqrt() - x.abs()).max(0.0);
    -d * d + tau * (x - m) * (x - m)
}

fn prox_scalar(m: f64, tau: f64, mu: f64) -> f64 {
    let s = mu.sqrt();
    if tau == 1.0 {
        // Plain thresholding; |m| == sqrt(mu) is a tie and resolves to 0.
        return if m.abs() > s { m } else { 0.0 };
    }
    let mut cands = [f64::NAN; 4];
    let mut k = 0;
    let mut push = |x: f64| {
        cands[k] = x;
        k += 1;
    };
    push(0.0);
    if m.abs() >= s {
        push(m);
    }
    let pos = (tau * m - s) / (tau - 1.0);
    if (0.0..=s).contains(&pos) {
        push(pos);
    }
    let neg = (tau * m + s) / (tau - 1.0);
    if (-s..=0.0).contains(&neg) {
        push(neg);
    }
    let tie_tol = 8.0 * f64::EPSILON * (mu + tau * m * m);
    let mut best = 0.0_f64;
    let mut best_obj = prox_objective(0.0, m, tau, mu);
    for &x in &cands[1..k] {
        let obj = prox_objective(x, m, tau, mu);
        if obj < best_obj - tie_tol || (obj <= best_obj + tie_tol && x.abs() < best.abs()) {
            best = x;
            best_obj = obj;
        }
    }
    best
}

/// Minimiser of `-max(sqrt(mu) - |x|, 0)^2 + tau (x - m)^2`.
///
/// The candidates are `m`, `0` and `(tau m +- sqrt(mu)) / (tau - 1)`, each
/// kept only inside the regime that produced it. For `tau = 1` this is hard
/// thresholding at `sqrt(mu)`.
pub fn prox_r_mu_scalar(m: f64, tau: f64, mu: f64) -> Result<f64> {
    check_tau(tau)?;
    check_mu(mu)?;
    Ok(prox_scalar(m, tau, mu))
}

pub fn prox_r_mu_vector(m: &DVector<f64>, tau: f64, mu: f64) -> Result<DVector<f64>> {
    check_tau(tau)?;
    check_mu(mu)?;
    Ok(m.map(|v| prox_scalar(v, tau, mu)))
}

/// Spectral proximal operator of `r_mu(sigma(X)) + tau ||X - M||_F^2`.
pub fn prox_r_mu_spectral(m: &DMatrix<f64>, tau: f64, mu: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    check_mu(mu)?;
    Ok(linalg::map_singular_values(m, |s| prox_scalar(s, tau, mu).max(0.0)))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "threshold level must be positive, got {level}"
        )))
    }
}

#[inline]
fn shrink(v: f64, level: f64) -> f64 {
    v.signum() * (v.abs() - level).max(0.0)
}

/// `sign(m_i) max(|m_i| - level, 0)`: the prox of `level ||x||_1` under
/// `||x - m||^2`.
pub fn soft_threshold(m: &DVector<f64>, level: f64) -> Result<DVector<f64>> {
    check_level(level)?;
    Ok(m.map(|v| shrink(v, level)))
}

/// Singular-value soft thresholding: the prox of `level ||X||_*`.
pub fn soft_threshold_spectral(m: &DMatrix<f64>, level: f64) -> Result<DMatrix<f64>> {
    check_level(level)?;
    Ok(linalg::map_singular_values(m, |s| (s - level).max(0.0)))
}

/// Keeps entries with `|m_i| > level`, zeroes the rest.
pub fn hard_threshold(m: &DVector<f64>, level: f64) -> Result<DVector<f64>> {
    check_level(level)?;
    Ok(m.map(|v| if v.abs() > level { v } else { 0.0 }))
}

pub fn hard_threshold_spectral(m: &DMatrix<f64>, level: f64) -> Result<DMatrix<f64>> {
    check_level(level)?;
    Ok(linalg::map_singular_values(m, |s| if s > level { s } else { 0.0 }))
}
