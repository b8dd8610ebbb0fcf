//! GIST proximal-linearisation solver.
//!
//! Each iteration linearises the data term at the current iterate and solves
//!
//! ```text
//! min_x reg(x) + tau * ||x - m||^2,   m = x_k - (A^T A x_k - A^T b) / tau
//! ```
//!
//! in closed form. A step is accepted only when it strictly lowers the full
//! objective `reg(x) + ||Ax - b||^2`; after an accepted step `tau` moves
//! toward 1 via `(tau - 1) / 1.1 + 1`, after a rejected step it grows via
//! `1.5 (tau - 1) + 1` and the step is retried.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, CARD_TOL, RANK_REL_TOL};
use crate::linear_ops::{Instance, Shape};
use crate::regularizers::{self, RegKind, RegParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tau0: f64,
    pub max_iters: usize,
    /// Rejected steps allowed within one iteration before giving up.
    pub max_backtracks_per_iter: usize,
    /// Relative objective decrease below which an accepted step ends the run.
    pub tol_obj: f64,
    /// Step norm (relative to `max(1, ||x||)`) below which the run ends.
    pub tol_step: f64,
    /// A candidate must lower the objective by more than
    /// `decrease_eps * max(|f|, f64::MIN_POSITIVE)` to be accepted.
    pub decrease_eps: f64,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau0: 5.0,
            max_iters: 5000,
            max_backtracks_per_iter: 60,
            tol_obj: 1e-10,
            tol_step: 1e-9,
            decrease_eps: 1e-12,
            record_history: true,
        }
    }
}

impl SolverConfig {
    /// Tolerances for runs that must resolve the minimiser itself rather than
    /// the objective value: the objective test is effectively disabled
    /// (`tol_obj = 1e-15`, any strict decrease accepted) so the run ends on
    /// the step-norm test.
    ///
    /// With the defaults a run stops once an accepted step lowers `f` by less
    /// than `1e-10 f`, which near a minimiser `x*` happens at
    /// `||x - x*|| ~ sqrt(1e-10 f(x*))`. When `f(x*)` is dominated by the
    /// constant `mu` per kept entry this is far above `1e-6`.
    pub fn precise() -> Self {
        Self {
            tol_obj: 1e-15,
            decrease_eps: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 >= 1.0 && self.tau0.is_finite()) {
            return Err(Error::invalid(format!("tau0 must be >= 1, got {}", self.tau0)));
        }
        if !(self.tol_obj > 0.0 && self.tol_step > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.decrease_eps >= 0.0) {
            return Err(Error::invalid("decrease_eps must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Running,
    ConvergedObjTol,
    ConvergedStepTol,
    MaxIters,
    Stalled,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SolveStatus::ConvergedObjTol | SolveStatus::ConvergedStepTol)
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub tau: f64,
    pub step_norm: f64,
}

/// Mutable state of one solve.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub iterate: DVector<f64>,
    pub tau: f64,
    pub objective: f64,
    pub history: Vec<TraceEntry>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub shape: Shape,
    #[serde(with = "linalg::dvector_serde")]
    pub solution: DVector<f64>,
    pub reg: RegParams,
    pub objective: f64,
    pub reg_value: f64,
    /// `||A x - b||`.
    pub residual: f64,
    /// Numerical cardinality (vectors) or rank (matrices).
    pub support_size: usize,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_tau: f64,
    pub status: SolveStatus,
    pub history: Vec<TraceEntry>,
}

/// `tau_{k+1}` after a successful (`(tau - 1) / 1.1 + 1`) or failed
/// (`1.5 (tau - 1) + 1`) step. Both maps fix `tau = 1`.
pub fn tau_update(tau: f64, success: bool) -> f64 {
    if success {
        (tau - 1.0) / 1.1 + 1.0
    } else {
        1.5 * (tau - 1.0) + 1.0
    }
}

fn check_reg_shape(shape: Shape, reg: &RegParams) -> Result<()> {
    if !shape.is_matrix() && reg.kind.is_spectral_only() {
        return Err(Error::invalid(format!(
            "regularizer '{}' needs a matrix-shaped problem",
            reg.kind.name()
        )));
    }
    Ok(())
}

/// Penalty value for a flat iterate of the given shape.
pub fn reg_value(x: &DVector<f64>, shape: Shape, reg: &RegParams) -> Result<f64> {
    check_dim("iterate", shape.len(), x.len())?;
    match shape.as_matrix(x) {
        Some(m) => reg.value_matrix(&m),
        None => reg.value_vector(x),
    }
}

/// Numerical cardinality or rank, depending on the shape.
pub fn support_size(x: &DVector<f64>, shape: Shape) -> usize {
    match shape.as_matrix(x) {
        Some(m) => linalg::numerical_rank(&m, RANK_REL_TOL),
        None => linalg::cardinality(x, CARD_TOL),
    }
}

/// `reg(x) + ||Ax - b||^2`.
pub fn objective(x: &DVector<f64>, instance: &Instance, reg: &RegParams) -> Result<f64> {
    let (r, res) = objective_parts(x, instance, reg)?;
    Ok(r + res * res)
}

/// `(reg(x), ||Ax - b||)`.
pub fn objective_parts(
    x: &DVector<f64>,
    instance: &Instance,
    reg: &RegParams,
) -> Result<(f64, f64)> {
    let shape = instance.shape();
    check_dim("iterate", shape.len(), x.len())?;
    let r = reg_value(x, shape, reg)?;
    Ok((r, instance.residual(x).norm()))
}

/// Proximal step of `reg + tau ||. - m||^2` for the given shape.
pub fn prox(m: &DVector<f64>, tau: f64, shape: Shape, reg: &RegParams) -> Result<DVector<f64>> {
    check_reg_shape(shape, reg)?;
    let s = reg.sqrt_mu();
    match (reg.kind, shape.as_matrix(m)) {
        (RegKind::None, _) => Ok(m.clone()),
        (RegKind::RMu, None) => regularizers::prox_r_mu_vector(m, tau, reg.mu),
        (RegKind::RMu, Some(mm)) => {
            Ok(linalg::flatten(&regularizers::prox_r_mu_spectral(&mm, tau, reg.mu)?))
        }
        // prox of 2 sqrt(mu) ||.||_1 under tau ||. - m||^2
        (RegKind::L1, _) => regularizers::soft_threshold(m, s / tau),
        (RegKind::Nuclear, Some(mm)) => Ok(linalg::flatten(
            &regularizers::soft_threshold_spectral(&mm, s / tau)?,
        )),
        // hard thresholding uses the tau = 1 level
        (RegKind::Card, _) => regularizers::hard_threshold(m, s),
        (RegKind::Rank, Some(mm)) => Ok(linalg::flatten(
            &regularizers::hard_threshold_spectral(&mm, s)?,
        )),
        (RegKind::Nuclear | RegKind::Rank, None) => unreachable!("rejected by check_reg_shape"),
    }
}

/// The GIST prox target `m = x - (A^T A x - A^T b) / tau`.
pub fn prox_target(x: &DVector<f64>, tau: f64, instance: &Instance) -> Result<DVector<f64>> {
    check_dim("iterate", instance.op.input_len(), x.len())?;
    if !(tau >= 1.0) {
        return Err(Error::invalid(format!("tau must be >= 1, got {tau}")));
    }
    let grad = instance.op.adjoint(&instance.residual(x));
    Ok(x - grad / tau)
}

/// One GIST candidate from `x` with weight `tau`.
pub fn gist_step(
    x: &DVector<f64>,
    tau: f64,
    instance: &Instance,
    reg: &RegParams,
) -> Result<DVector<f64>> {
    let m = prox_target(x, tau, instance)?;
    prox(&m, tau, instance.shape(), reg)
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs GIST from `x0` (zero by default).
pub fn solve(
    instance: &Instance,
    reg: &RegParams,
    config: &SolverConfig,
    x0: Option<&DVector<f64>>,
) -> Result<SolveResult> {
    config.validate()?;
    let shape = instance.shape();
    check_reg_shape(shape, reg)?;
    check_dim("observations", instance.op.output_len(), instance.b.len())?;
    let x = match x0 {
        Some(x0) => {
            check_dim("initial point", shape.len(), x0.len())?;
            x0.clone()
        }
        None => DVector::zeros(shape.len()),
    };
    let f = objective(&x, instance, reg)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("initial objective".into()));
    }
    let mut st = SolverState {
        iterate: x,
        tau: config.tau0,
        objective: f,
        history: Vec::new(),
        status: SolveStatus::Running,
        iterations: 0,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    if config.record_history {
        st.history.push(TraceEntry {
            iteration: 0,
            objective: f,
            tau: st.tau,
            step_norm: 0.0,
        });
    }

    'outer: while st.iterations < config.max_iters {
        st.iterations += 1;
        let mut backtracks = 0;
        loop {
            let cand = gist_step(&st.iterate, st.tau, instance, reg)?;
            if !finite(&cand) {
                return Err(Error::NonFinite(format!("iterate {}", st.iterations)));
            }
            let step = (&cand - &st.iterate).norm();
            if step <= config.tol_step * st.iterate.norm().max(1.0) {
                st.status = SolveStatus::ConvergedStepTol;
                break 'outer;
            }
            let f_new = objective(&cand, instance, reg)?;
            if !f_new.is_finite() {
                return Err(Error::NonFinite(format!("objective at iterate {}", st.iterations)));
            }
            let scale = st.objective.abs().max(f64::MIN_POSITIVE);
            if f_new < st.objective - config.decrease_eps * scale {
                let rel = (st.objective - f_new) / scale;
                st.iterate = cand;
                st.objective = f_new;
                st.accepted_steps += 1;
                st.tau = tau_update(st.tau, true);
                if config.record_history {
                    st.history.push(TraceEntry {
                        iteration: st.iterations,
                        objective: f_new,
                        tau: st.tau,
                        step_norm: step,
                    });
                }
                if rel <= config.tol_obj {
                    st.status = SolveStatus::ConvergedObjTol;
                    break 'outer;
                }
                break;
            }
            st.rejected_steps += 1;
            backtracks += 1;
            st.tau = tau_update(st.tau, false);
            if backtracks > config.max_backtracks_per_iter {
                st.status = SolveStatus::Stalled;
                break 'outer;
            }
        }
    }
    if st.status == SolveStatus::Running {
        st.status = SolveStatus::MaxIters;
    }
    finish(st, instance, reg)
}

fn finish(st: SolverState, instance: &Instance, reg: &RegParams) -> Result<SolveResult> {
    let shape = instance.shape();
    let (reg_val, residual) = objective_parts(&st.iterate, instance, reg)?;
    Ok(SolveResult {
        shape,
        support_size: support_size(&st.iterate, shape),
        solution: st.iterate,
        reg: *reg,
        objective: reg_val + residual * residual,
        reg_value: reg_val,
        residual,
        iterations: st.iterations,
        accepted_steps: st.accepted_steps,
        rejected_steps: st.rejected_steps,
        final_tau: st.tau,
        status: st.status,
        history: st.history,
    })
}

/// Writes a trace as JSON lines `{iteration, objective, tau, step_norm}`.
pub fn write_trace_jsonl(history: &[TraceEntry], mut w: impl Write) -> Result<()> {
    for e in history {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")
            .map_err(|err| Error::io("<trace writer>", err))?;
    }
    Ok(())
}

/// Stationary points of the scalar problem `r_mu(x) + (a x - b)^2`.
///
/// Isolated points are listed in `points`. Degenerate operators produce
/// whole stationary segments, reported in `intervals` (possibly unbounded).
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySet {
    pub points: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
}

/// Solves `2 (1 - a^2) x + 2 a b in dg(x)` by case analysis over the three
/// pieces of `dg`: the kink at zero, the flat-slope band `0 < |x| <= sqrt(mu)`
/// and the quadratic region `|x| >= sqrt(mu)`.
pub fn enumerate_stationary_1d(a: f64, b: f64, mu: f64) -> Result<StationarySet> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("a and b must be finite"));
    }
    let s = mu.sqrt();
    let c = 1.0 - a * a;
    let ab = a * b;
    // absorbs rounding in products such as (1/sqrt 2) * sqrt 2
    let eps = 1e-12 * (1.0 + s + ab.abs());
    let mut points = Vec::new();
    let mut intervals = Vec::new();

    if ab.abs() <= s + eps {
        points.push(0.0);
    }

    if a != 0.0 {
        let x = b / a;
        if x.abs() >= s - eps {
            points.push(x);
        }
    } else {
        intervals.push((f64::NEG_INFINITY, -s));
        intervals.push((s, f64::INFINITY));
    }

    for sign in [1.0f64, -1.0] {
        if c != 0.0 {
            let x = (sign * s - ab) / c;
            if x * sign > 0.0 && x.abs() <= s + eps {
                points.push(x);
            }
        } else if (ab - sign * s).abs() <= eps {
            let (lo, hi) = if sign > 0.0 { (0.0, s) } else { (-s, 0.0) };
            intervals.push((lo, hi));
        }
    }

    // plateau endpoints are reported through the intervals
    points.retain(|&x| !intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi));
    points.sort_by(|x, y| x.total_cmp(y));
    points.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    Ok(StationarySet { points, intervals })
}
