//! Separation certificate for stationary points.
//!
//! For a stationary point `x_s` of `r_mu(x) + ||Ax - b||^2` set
//! `z = (I - A^T A) x_s + A^T b`. If the operator satisfies a RIP with
//! constant `delta` for cardinality `c` and no `|z_i|` lies in the closed
//! interval `[(1 - delta) sqrt(mu), sqrt(mu) / (1 - delta)]`, every other
//! stationary point `x'` has `card(x' - x_s) > c`. The matrix version is the
//! same statement for the singular values of `Z` and `rank(X' - X_s) > r`.
//!
//! The interval test is only meaningful at a stationary point, so the check
//! first confirms that `x_s` is a minimiser of `r_mu(x) + ||x - z||^2`
//! (equivalently `2z` lies in the subdifferential of `g` at `x_s`) and
//! refuses to report otherwise.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::linear_ops::{DeltaSource, Instance, Shape};
use crate::regularizers;
use crate::solver;

/// Default bound on the fixed-point residual accepted as stationary.
pub const STATIONARITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateOptions {
    /// Every z-value must sit strictly farther than this from the interval.
    pub margin: f64,
    pub stationarity_tol: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            margin: 0.0,
            stationarity_tol: STATIONARITY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub shape: Shape,
    /// `|z_i|` for vectors, `sigma_i(Z)` for matrices.
    pub z_values: Vec<f64>,
    pub mu: f64,
    pub delta: f64,
    pub delta_source: DeltaSource,
    pub forbidden_interval: [f64; 2],
    /// Smallest signed distance from a z-value to the interval; negative
    /// when some value lies inside.
    pub margin: f64,
    pub required_margin: f64,
    pub passed: bool,
    /// `c` (vectors) or `r` (matrices) the RIP constant was stated for.
    pub separation: usize,
    /// Cardinality or rank of the certified point.
    pub support_size: usize,
    /// Passed and `support_size < separation / 2`: no sparser (lower-rank)
    /// stationary point exists.
    pub sparsest_implication: bool,
    pub stationarity_residual: f64,
    pub guarantee: String,
}

/// `[(1 - delta) sqrt(mu), sqrt(mu) / (1 - delta)]`.
pub fn forbidden_interval(mu: f64, delta: f64) -> (f64, f64) {
    let s = mu.sqrt();
    ((1.0 - delta) * s, s / (1.0 - delta))
}

/// `z = (I - A^T A) x_s + A^T b` (flattened column-major for matrices).
pub fn compute_z(x_s: &DVector<f64>, instance: &Instance) -> Result<DVector<f64>> {
    check_dim("stationary point", instance.op.input_len(), x_s.len())?;
    Ok(x_s - instance.op.adjoint(&instance.residual(x_s)))
}

/// Magnitudes of `z` or singular values of `Z`.
pub fn z_values(z: &DVector<f64>, shape: Shape) -> Vec<f64> {
    match shape.as_matrix(z) {
        Some(zm) => linalg::singular_values(&zm).iter().copied().collect(),
        None => z.iter().map(|v| v.abs()).collect(),
    }
}

/// Distance from `x_s` to the minimiser set of `r_mu(x) + ||x - z||^2`.
///
/// For vectors the set is a product of thresholded coordinates; where
/// `|z_i| = sqrt(mu)` (up to rounding) it is the whole segment `[0, z_i]`.
/// For matrices the distance to the singular-value thresholding of `Z` is
/// used.
pub fn stationarity_residual(
    x_s: &DVector<f64>,
    z: &DVector<f64>,
    shape: Shape,
    mu: f64,
) -> Result<f64> {
    check_dim("stationary point", shape.len(), x_s.len())?;
    check_dim("z", shape.len(), z.len())?;
    match (shape.as_matrix(x_s), shape.as_matrix(z)) {
        (Some(xm), Some(zm)) => {
            let p = regularizers::prox_r_mu_spectral(&zm, 1.0, mu)?;
            Ok((p - xm).norm())
        }
        _ => {
            if !(mu > 0.0) {
                return Err(Error::invalid(format!("mu must be positive, got {mu}")));
            }
            let s = mu.sqrt();
            let tie = 1e-12 * s.max(1.0);
            let sq: f64 = x_s
                .iter()
                .zip(z.iter())
                .map(|(&x, &zi)| {
                    let d = if zi.abs() > s + tie {
                        x - zi
                    } else if zi.abs() < s - tie {
                        x
                    } else {
                        let (lo, hi) = if zi >= 0.0 { (0.0, zi) } else { (zi, 0.0) };
                        if x < lo {
                            lo - x
                        } else if x > hi {
                            x - hi
                        } else {
                            0.0
                        }
                    };
                    d * d
                })
                .sum();
            Ok(sq.sqrt())
        }
    }
}

fn signed_distance(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        -(v - lo).min(hi - v)
    }
}

/// Runs the separation certificate at `x_s`.
///
/// `delta` overrides the instance's RIP constant (recorded as user-supplied);
/// without it the instance must carry one. `separation` is the cardinality
/// (rank) bound the constant holds for.
pub fn check_certificate(
    x_s: &DVector<f64>,
    instance: &Instance,
    mu: f64,
    delta: Option<f64>,
    separation: usize,
    options: &CertificateOptions,
) -> Result<CertificateReport> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    if !(options.margin >= 0.0) {
        return Err(Error::invalid("certificate margin must be >= 0"));
    }
    let (delta, delta_source) = match (delta, instance.delta) {
        (Some(d), _) => (d, DeltaSource::User),
        (None, Some(d)) => (d, instance.delta_source.unwrap_or(DeltaSource::Calibrated)),
        (None, None) => {
            return Err(Error::MissingDelta(
                "the instance has no calibrated RIP constant; pass delta explicitly".into(),
            ))
        }
    };
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let shape = instance.shape();
    let z = compute_z(x_s, instance)?;
    let residual = stationarity_residual(x_s, &z, shape, mu)?;
    if !(residual <= options.stationarity_tol) {
        return Err(Error::NotStationary {
            residual,
            tolerance: options.stationarity_tol,
        });
    }
    let values = z_values(&z, shape);
    let interval = forbidden_interval(mu, delta);
    let margin = values
        .iter()
        .map(|&v| signed_distance(v, interval))
        .fold(f64::INFINITY, f64::min);
    let passed = margin > options.margin;
    let support = solver::support_size(x_s, shape);
    let what = if shape.is_matrix() { "rank" } else { "card" };
    let guarantee = if passed {
        format!("any other stationary point x' satisfies {what}(x' - x_s) > {separation}")
    } else {
        "no separation guarantee".to_string()
    };
    Ok(CertificateReport {
        shape,
        z_values: values,
        mu,
        delta,
        delta_source,
        forbidden_interval: [interval.0, interval.1],
        margin,
        required_margin: options.margin,
        passed,
        separation,
        support_size: support,
        sparsest_implication: passed && 2 * support < separation,
        stationarity_residual: residual,
        guarantee,
    })
}

/// Fraction of reports that passed.
pub fn verified_fraction(reports: &[CertificateReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::invalid("verified fraction of an empty report list"));
    }
    Ok(reports.iter().filter(|r| r.passed).count() as f64 / reports.len() as f64)
}
