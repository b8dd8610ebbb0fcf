//! Experiment drivers: `(sigma, mu)` phase grids comparing `r_mu` against
//! its convex baseline, and the NRSfM fit-versus-rank study.
//!
//! Instances are generated per `(sigma index, trial)` from
//! `seed::derive(base_seed, [INSTANCE, sigma_index, trial])` (the operator
//! uses the `OPERATOR` stream) and shared by every `mu` and method of that
//! column, so methods are compared on identical data. Trials run in
//! parallel; aggregation walks the records in trial order, so results are
//! bit-identical for any thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{self, CertificateOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_REL_TOL};
use crate::linear_ops::{
    make_lowrank_instance, make_nrsfm_instance, make_sparse_instance, Instance, NrsfmParams,
    SensingOperator, Shape,
};
use crate::regularizers::{RegKind, RegParams};
use crate::seed::{self, stream};
use crate::solver::{self, SolveStatus, SolverConfig};

pub const GRID_SCHEMA: &str = "rmu-grid/1";
pub const NRSFM_SCHEMA: &str = "rmu-nrsfm/1";

/// Serialises non-finite floats as `null` and reads `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Sparse { n: usize, card: usize },
    LowRank { rows: usize, cols: usize, rank: usize },
}

impl ProblemSpec {
    pub fn shape(&self) -> Shape {
        match *self {
            ProblemSpec::Sparse { n, .. } => Shape::Vector { n },
            ProblemSpec::LowRank { rows, cols, .. } => Shape::Matrix { rows, cols },
        }
    }

    pub fn target(&self) -> usize {
        match *self {
            ProblemSpec::Sparse { card, .. } => card,
            ProblemSpec::LowRank { rank, .. } => rank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// Square operator with calibrated RIP constant `delta`.
    RipSquare { delta: f64 },
    /// i.i.d. Gaussian entries; no RIP constant is known.
    Gaussian { rows: usize, variance: f64 },
}

/// `r_mu` or the convex baseline of the problem (`l1` for vectors, nuclear
/// norm for matrices) at weight `2 sqrt(mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RMu,
    Convex,
}

impl Method {
    /// Regularizer for this method; `mu = 0` is plain least squares for both.
    pub fn reg(self, shape: Shape, mu: f64) -> Result<RegParams> {
        if mu == 0.0 {
            return Ok(RegParams::none());
        }
        let kind = match (self, shape.is_matrix()) {
            (Method::RMu, _) => RegKind::RMu,
            (Method::Convex, false) => RegKind::L1,
            (Method::Convex, true) => RegKind::Nuclear,
        };
        RegParams::new(kind, mu)
    }

    pub fn label(self, shape: Shape) -> &'static str {
        match (self, shape.is_matrix()) {
            (Method::RMu, _) => "r_mu",
            (Method::Convex, false) => "l1",
            (Method::Convex, true) => "nuclear",
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::RMu, Method::Convex]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub problem: ProblemSpec,
    pub operator: OperatorSpec,
    pub sigma_axis: Vec<f64>,
    pub mu_axis: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub base_seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub certificate: CertificateOptions,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

impl GridSpec {
    /// 200-dimensional card-10 vectors, `mu` in `[0, 3]`.
    pub fn sparse_default(fast: bool) -> Self {
        Self {
            problem: ProblemSpec::Sparse { n: 200, card: 10 },
            operator: OperatorSpec::RipSquare { delta: 0.2 },
            sigma_axis: linspace(0.0, 0.5, 6),
            mu_axis: linspace(0.0, 3.0, 13),
            trials: if fast { 10 } else { 50 },
            methods: default_methods(),
            base_seed: 0,
            solver: SolverConfig::default(),
            certificate: CertificateOptions::default(),
        }
    }

    /// 20 x 20 rank-5 matrices, `mu` in `[0, 12]`.
    pub fn lowrank_default(fast: bool) -> Self {
        Self {
            problem: ProblemSpec::LowRank {
                rows: 20,
                cols: 20,
                rank: 5,
            },
            mu_axis: linspace(0.0, 12.0, 13),
            ..Self::sparse_default(fast)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("sigma_axis", &self.sigma_axis), ("mu_axis", &self.mu_axis)] {
            if axis.is_empty() {
                return Err(Error::invalid(format!("{name} must not be empty")));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("{name} entries must be finite and >= 0")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("{name} must be strictly increasing")));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        let shape = self.problem.shape();
        if shape.is_empty() || self.problem.target() > shape_limit(shape) {
            return Err(Error::invalid(format!(
                "target {} does not fit problem {:?}",
                self.problem.target(),
                self.problem
            )));
        }
        match self.operator {
            OperatorSpec::RipSquare { delta } if !(delta > 0.0 && delta < 1.0) => {
                return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
            }
            OperatorSpec::Gaussian { rows, variance } if rows == 0 || !(variance > 0.0) => {
                return Err(Error::invalid("gaussian operator needs rows > 0 and variance > 0"))
            }
            _ => {}
        }
        self.solver.validate()?;
        if !(self.certificate.margin >= 0.0) {
            return Err(Error::invalid("certificate margin must be >= 0"));
        }
        Ok(())
    }

    /// The instance of column `sigma_index`, trial `trial`.
    pub fn instance(&self, sigma_index: usize, trial: usize) -> Result<Instance> {
        let path = [sigma_index as u64, trial as u64];
        let op_seed = seed::derive(self.base_seed, &[stream::OPERATOR, path[0], path[1]]);
        let inst_seed = seed::derive(self.base_seed, &[stream::INSTANCE, path[0], path[1]]);
        let shape = self.problem.shape();
        let sensing = match self.operator {
            OperatorSpec::RipSquare { delta } => SensingOperator::rip(shape, delta, op_seed)?,
            OperatorSpec::Gaussian { rows, variance } => {
                SensingOperator::gaussian(shape, rows, variance, op_seed)?
            }
        };
        let sigma = self.sigma_axis[sigma_index];
        match self.problem {
            ProblemSpec::Sparse { n, card } => make_sparse_instance(n, card, sigma, sensing, inst_seed),
            ProblemSpec::LowRank { rows, cols, rank } => {
                make_lowrank_instance(rows, cols, rank, sigma, sensing, inst_seed)
            }
        }
    }
}

fn shape_limit(shape: Shape) -> usize {
    match shape {
        Shape::Vector { n } => n,
        Shape::Matrix { rows, cols } => rows.min(cols),
    }
}

/// One solve within a grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub instance_seed: u64,
    /// Threshold level `sqrt(mu)` of the prox at `tau = 1`.
    pub threshold: f64,
    /// Penalty weight: `2 sqrt(mu)` for the convex baseline, `mu` for `r_mu`.
    pub weight: f64,
    #[serde(with = "nan_as_null")]
    pub gt_distance: f64,
    #[serde(with = "nan_as_null")]
    pub residual: f64,
    pub support_size: usize,
    pub hit_target: bool,
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    /// `None` when no certificate was attempted.
    pub verified: Option<bool>,
    pub certificate_margin: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub sigma_index: usize,
    pub mu_index: usize,
    pub sigma: f64,
    pub mu: f64,
    pub method: Method,
    pub reg_kind: RegKind,
    pub trials: usize,
    #[serde(with = "nan_as_null")]
    pub mean_gt_distance: f64,
    #[serde(with = "nan_as_null")]
    pub mean_residual: f64,
    pub target_fraction: f64,
    pub verified_fraction: Option<f64>,
    /// Trials that errored or did not converge.
    pub flagged_trials: usize,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub schema: String,
    pub spec: GridSpec,
    /// Ordered by sigma index, then mu index, then method.
    pub cells: Vec<CellResult>,
}

impl PhaseGrid {
    pub fn cell(&self, sigma_index: usize, mu_index: usize, method: Method) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.sigma_index == sigma_index && c.mu_index == mu_index && c.method == method
        })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: PhaseGrid = serde_json::from_str(&text)?;
        if grid.schema != GRID_SCHEMA {
            return Err(Error::invalid(format!("unsupported grid schema '{}'", grid.schema)));
        }
        Ok(grid)
    }
}

fn run_trial(spec: &GridSpec, sigma_index: usize, trial: usize) -> Vec<TrialRecord> {
    let shape = spec.problem.shape();
    let inst_seed = seed::derive(
        spec.base_seed,
        &[stream::INSTANCE, sigma_index as u64, trial as u64],
    );
    let per_solve = spec.mu_axis.len() * spec.methods.len();
    let failed = |mu: f64, msg: String| TrialRecord {
        trial,
        instance_seed: inst_seed,
        threshold: mu.sqrt(),
        weight: f64::NAN,
        gt_distance: f64::NAN,
        residual: f64::NAN,
        support_size: 0,
        hit_target: false,
        status: None,
        iterations: 0,
        verified: None,
        certificate_margin: None,
        error: Some(msg),
    };
    let inst = match spec.instance(sigma_index, trial) {
        Ok(i) => i,
        Err(e) => {
            return spec
                .mu_axis
                .iter()
                .flat_map(|&mu| std::iter::repeat_n(mu, spec.methods.len()))
                .map(|mu| failed(mu, e.to_string()))
                .collect()
        }
    };
    let gt = inst.ground_truth.clone().expect("generated instances carry ground truth");
    let target = spec.problem.target();
    let config = SolverConfig {
        record_history: false,
        ..spec.solver
    };
    let mut out = Vec::with_capacity(per_solve);
    for &mu in &spec.mu_axis {
        for &method in &spec.methods {
            let record = (|| -> Result<TrialRecord> {
                let reg = method.reg(shape, mu)?;
                let res = solver::solve(&inst, &reg, &config, None)?;
                let (verified, margin) = if method == Method::RMu && mu > 0.0 && inst.delta.is_some() {
                    match certificate::check_certificate(
                        &res.solution,
                        &inst,
                        mu,
                        None,
                        shape_limit(shape),
                        &spec.certificate,
                    ) {
                        Ok(r) => (Some(r.passed), Some(r.margin)),
                        Err(Error::NotStationary { .. }) => (Some(false), None),
                        Err(e) => return Err(e),
                    }
                } else {
                    (None, None)
                };
                Ok(TrialRecord {
                    trial,
                    instance_seed: inst_seed,
                    threshold: mu.sqrt(),
                    weight: match reg.kind {
                        RegKind::L1 | RegKind::Nuclear => reg.convex_weight(),
                        _ => mu,
                    },
                    gt_distance: (&res.solution - &gt).norm(),
                    residual: res.residual,
                    support_size: res.support_size,
                    hit_target: res.support_size == target,
                    status: Some(res.status),
                    iterations: res.iterations,
                    verified,
                    certificate_margin: margin,
                    error: None,
                })
            })();
            out.push(record.unwrap_or_else(|e| failed(mu, e.to_string())));
        }
    }
    out
}

/// Runs every `(sigma, trial)` column and aggregates per cell and method.
/// Solver failures are flagged in the records; the grid never aborts.
pub fn run_phase_grid(spec: &GridSpec) -> Result<PhaseGrid> {
    spec.validate()?;
    let work: Vec<(usize, usize)> = (0..spec.sigma_axis.len())
        .flat_map(|s| (0..spec.trials).map(move |t| (s, t)))
        .collect();
    let columns: Vec<Vec<TrialRecord>> = work
        .par_iter()
        .map(|&(s, t)| run_trial(spec, s, t))
        .collect();
    let shape = spec.problem.shape();
    let n_methods = spec.methods.len();
    let mut cells = Vec::new();
    for (si, &sigma) in spec.sigma_axis.iter().enumerate() {
        let trials = &columns[si * spec.trials..(si + 1) * spec.trials];
        for (mi, &mu) in spec.mu_axis.iter().enumerate() {
            for (k, &method) in spec.methods.iter().enumerate() {
                let records: Vec<TrialRecord> = trials
                    .iter()
                    .map(|col| col[mi * n_methods + k].clone())
                    .collect();
                cells.push(aggregate(si, mi, sigma, mu, method, method.reg(shape, mu)?.kind, records));
            }
        }
    }
    Ok(PhaseGrid {
        schema: GRID_SCHEMA.into(),
        spec: spec.clone(),
        cells,
    })
}

fn aggregate(
    sigma_index: usize,
    mu_index: usize,
    sigma: f64,
    mu: f64,
    method: Method,
    reg_kind: RegKind,
    records: Vec<TrialRecord>,
) -> CellResult {
    let n = records.len() as f64;
    let mean = |f: fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let certified: Vec<bool> = records.iter().filter_map(|r| r.verified).collect();
    CellResult {
        sigma_index,
        mu_index,
        sigma,
        mu,
        method,
        reg_kind,
        trials: records.len(),
        mean_gt_distance: mean(|r| r.gt_distance),
        mean_residual: mean(|r| r.residual),
        target_fraction: records.iter().filter(|r| r.hit_target).count() as f64 / n,
        verified_fraction: (!certified.is_empty())
            .then(|| certified.iter().filter(|&&v| v).count() as f64 / certified.len() as f64),
        flagged_trials: records
            .iter()
            .filter(|r| r.error.is_some() || !r.status.is_some_and(SolveStatus::is_converged))
            .count(),
        records,
    }
}

/// Mean ground-truth distance of each method at its smallest target-hitting
/// `mu`, over trials where both methods hit the target somewhere on the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageComparison {
    pub sigma_index: usize,
    pub paired_trials: usize,
    pub rmu_hits: usize,
    pub convex_hits: usize,
    pub rmu_mean_distance: f64,
    pub convex_mean_distance: f64,
}

/// Index on the mu axis and distance at the first target hit of `method`.
pub fn first_target_hit(
    grid: &PhaseGrid,
    sigma_index: usize,
    method: Method,
    trial: usize,
) -> Option<(usize, f64)> {
    (0..grid.spec.mu_axis.len()).find_map(|mi| {
        let r = &grid.cell(sigma_index, mi, method)?.records[trial];
        r.hit_target.then_some((mi, r.gt_distance))
    })
}

pub fn compare_shrinkage(grid: &PhaseGrid, sigma_index: usize) -> Result<ShrinkageComparison> {
    if sigma_index >= grid.spec.sigma_axis.len() {
        return Err(Error::invalid(format!("sigma index {sigma_index} out of range")));
    }
    let (mut rmu_hits, mut convex_hits) = (0, 0);
    let mut pairs = Vec::new();
    for t in 0..grid.spec.trials {
        let a = first_target_hit(grid, sigma_index, Method::RMu, t);
        let b = first_target_hit(grid, sigma_index, Method::Convex, t);
        rmu_hits += a.is_some() as usize;
        convex_hits += b.is_some() as usize;
        if let (Some(a), Some(b)) = (a, b) {
            pairs.push((a.1, b.1));
        }
    }
    let n = pairs.len() as f64;
    Ok(ShrinkageComparison {
        sigma_index,
        paired_trials: pairs.len(),
        rmu_hits,
        convex_hits,
        rmu_mean_distance: pairs.iter().map(|p| p.0).sum::<f64>() / n,
        convex_mean_distance: pairs.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Configuration of the NRSfM study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrsfmSpec {
    pub scene: NrsfmParams,
    pub mu_list: Vec<f64>,
    /// Adds `||D X#||^2` (first-order differences over frames) to both problems.
    pub with_derivative: bool,
    pub seed: u64,
    /// Defaults to [`SolverConfig::precise`]: the data fit must be resolved
    /// well below the objective scale.
    #[serde(default = "SolverConfig::precise")]
    pub solver: SolverConfig,
}

impl NrsfmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mu_list.is_empty() {
            return Err(Error::invalid("mu list must not be empty"));
        }
        if self.mu_list.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::invalid("mu values must be finite and positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrsfmRecord {
    pub mu: f64,
    pub rank: usize,
    /// `||R X - M||_F`, without the derivative term.
    pub data_fit: f64,
    /// `||X# - X#_gt||_F`.
    pub gt_distance: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrsfmCurve {
    pub method: Method,
    pub reg_kind: RegKind,
    pub with_derivative: bool,
    pub records: Vec<NrsfmRecord>,
}

impl NrsfmCurve {
    /// Data fit never increases with rank: for records with
    /// `rank_i < rank_j`, `fit_i >= fit_j - tol`.
    pub fn fit_monotone_in_rank(&self, tol: f64) -> bool {
        self.records.iter().all(|a| {
            self.records
                .iter()
                .all(|b| a.rank >= b.rank || a.data_fit >= b.data_fit - tol)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrsfmStudy {
    pub schema: String,
    pub spec: NrsfmSpec,
    pub curves: Vec<NrsfmCurve>,
}

/// Solves both regularized NRSfM problems for every `mu`.
pub fn run_nrsfm_study(spec: &NrsfmSpec) -> Result<NrsfmStudy> {
    spec.validate()?;
    let (base, ops) = make_nrsfm_instance(spec.scene, spec.seed)?;
    let inst = if spec.with_derivative {
        ops.derivative_instance(&base)?
    } else {
        base.clone()
    };
    let m = ops.measurements(&base);
    let sharp = ops.sharp_shape();
    let gt = base.ground_truth.clone().expect("synthetic scenes carry ground truth");
    let config = SolverConfig {
        record_history: false,
        ..spec.solver
    };
    let mut curves = Vec::new();
    for method in [Method::RMu, Method::Convex] {
        let records: Vec<NrsfmRecord> = spec
            .mu_list
            .par_iter()
            .map(|&mu| -> Result<NrsfmRecord> {
                let reg = method.reg(sharp, mu)?;
                let res = solver::solve(&inst, &reg, &config, None)?;
                let xs = sharp.as_matrix(&res.solution).expect("matrix shape");
                Ok(NrsfmRecord {
                    mu,
                    rank: linalg::numerical_rank(&xs, RANK_REL_TOL),
                    data_fit: ops.data_fit(&xs, &m),
                    gt_distance: (&res.solution - &gt).norm(),
                    objective: res.objective,
                    status: res.status,
                    iterations: res.iterations,
                })
            })
            .collect::<Result<_>>()?;
        curves.push(NrsfmCurve {
            method,
            reg_kind: method.reg(sharp, 1.0)?.kind,
            with_derivative: spec.with_derivative,
            records,
        });
    }
    Ok(NrsfmStudy {
        schema: NRSFM_SCHEMA.into(),
        spec: spec.clone(),
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(format!("unknown format '{other}'"))),
        }
    }
}

pub enum Results<'a> {
    Grid(&'a PhaseGrid),
    Nrsfm(&'a NrsfmStudy),
}

/// Column names of the grid CSV, one row per cell and method.
pub const GRID_CSV_HEADER: &[&str] = &[
    "sigma_index",
    "mu_index",
    "sigma",
    "mu",
    "method",
    "reg_kind",
    "threshold",
    "weight",
    "trials",
    "mean_gt_distance",
    "mean_residual",
    "target_fraction",
    "verified_fraction",
    "flagged_trials",
    "base_seed",
];

/// Column names of the NRSfM CSV, one row per method and `mu`.
pub const NRSFM_CSV_HEADER: &[&str] = &[
    "method",
    "reg_kind",
    "with_derivative",
    "mu",
    "threshold",
    "rank",
    "data_fit",
    "gt_distance",
    "objective",
    "status",
    "iterations",
    "seed",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn status_name(s: SolveStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Writes results as CSV or JSON.
///
/// CSV files open with a `# schema=<id> config=<json>` line carrying the full
/// resolved configuration, followed by the header and one row per cell (grid)
/// or per `mu` (NRSfM). JSON files hold the complete result structure
/// including per-trial records.
pub fn emit_results(results: Results<'_>, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Json => {
            match results {
                Results::Grid(g) => serde_json::to_writer_pretty(&mut w, g)?,
                Results::Nrsfm(s) => serde_json::to_writer_pretty(&mut w, s)?,
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        Format::Csv => {
            let (schema, config) = match results {
                Results::Grid(g) => (&g.schema, serde_json::to_string(&g.spec)?),
                Results::Nrsfm(s) => (&s.schema, serde_json::to_string(&s.spec)?),
            };
            writeln!(w, "# schema={schema} config={config}").map_err(|e| Error::io(path, e))?;
            let mut csv = csv::Writer::from_writer(&mut w);
            match results {
                Results::Grid(g) => {
                    csv.write_record(GRID_CSV_HEADER)?;
                    let shape = g.spec.problem.shape();
                    for c in &g.cells {
                        let weight = match c.reg_kind {
                            RegKind::L1 | RegKind::Nuclear => 2.0 * c.mu.sqrt(),
                            _ => c.mu,
                        };
                        csv.write_record([
                            c.sigma_index.to_string(),
                            c.mu_index.to_string(),
                            c.sigma.to_string(),
                            c.mu.to_string(),
                            c.method.label(shape).to_string(),
                            c.reg_kind.name().to_string(),
                            c.mu.sqrt().to_string(),
                            weight.to_string(),
                            c.trials.to_string(),
                            c.mean_gt_distance.to_string(),
                            c.mean_residual.to_string(),
                            c.target_fraction.to_string(),
                            opt(c.verified_fraction),
                            c.flagged_trials.to_string(),
                            g.spec.base_seed.to_string(),
                        ])?;
                    }
                }
                Results::Nrsfm(s) => {
                    csv.write_record(NRSFM_CSV_HEADER)?;
                    let shape = Shape::Matrix { rows: 1, cols: 1 };
                    for curve in &s.curves {
                        for r in &curve.records {
                            csv.write_record([
                                curve.method.label(shape).to_string(),
                                curve.reg_kind.name().to_string(),
                                curve.with_derivative.to_string(),
                                r.mu.to_string(),
                                r.mu.sqrt().to_string(),
                                r.rank.to_string(),
                                r.data_fit.to_string(),
                                r.gt_distance.to_string(),
                                r.objective.to_string(),
                                status_name(r.status),
                                r.iterations.to_string(),
                                s.spec.seed.to_string(),
                            ])?;
                        }
                    }
                }
            }
            csv.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Distance between the flat iterate and ground truth of `instance`.
pub fn ground_truth_distance(x: &DVector<f64>, instance: &Instance) -> Option<f64> {
    instance.ground_truth.as_ref().map(|gt| (x - gt).norm())
}
