//! Linear operators, random sensing ensembles and problem instances.
//!
//! A [`LinOp`] maps a flattened input (a vector, or a matrix stacked
//! column-major) to an observation vector. Dense operators carry their
//! matrix; the structured operators used for non-rigid structure from motion
//! (per-frame projections and the temporal difference operator) are applied
//! matrix-free. Every operator has an explicit adjoint.
//!
//! Instances serialize to a versioned JSON document. Generated operators are
//! stored by recipe (kind, parameters, seed) and rebuilt on load; explicit
//! operators store their entries column-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::seed;

pub const INSTANCE_SCHEMA: &str = "rmu-instance/1";

/// Shape of the unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Vector { n: usize },
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector { n } => n,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, Shape::Matrix { .. })
    }

    /// Reshapes a flat iterate when the shape is a matrix.
    pub fn as_matrix(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        match *self {
            Shape::Matrix { rows, cols } => Some(linalg::unflatten(x, rows, cols)),
            Shape::Vector { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
enum OpKind {
    Dense(DMatrix<f64>),
    Projection(NrsfmOps),
    Difference { frames: usize, width: usize },
    Stack(Vec<LinOp>),
}

/// A linear map from a [`Shape`] to `R^p`.
#[derive(Debug, Clone)]
pub struct LinOp {
    input: Shape,
    output_len: usize,
    kind: OpKind,
}

impl LinOp {
    /// Dense operator `A` acting on vectors of length `a.ncols()`.
    pub fn dense_vector(a: DMatrix<f64>) -> Self {
        Self {
            input: Shape::Vector { n: a.ncols() },
            output_len: a.nrows(),
            kind: OpKind::Dense(a),
        }
    }

    /// Dense representation `A_hat` (p x rows*cols) of a matrix operator,
    /// acting on the column-major stacking of its argument.
    pub fn dense_matrix(a_hat: DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        check_dim("dense matrix operator columns", rows * cols, a_hat.ncols())?;
        Ok(Self {
            input: Shape::Matrix { rows, cols },
            output_len: a_hat.nrows(),
            kind: OpKind::Dense(a_hat),
        })
    }

    /// Dense operator on either shape.
    pub fn dense(a: DMatrix<f64>, shape: Shape) -> Result<Self> {
        match shape {
            Shape::Vector { n } => {
                check_dim("dense operator columns", n, a.ncols())?;
                Ok(Self::dense_vector(a))
            }
            Shape::Matrix { rows, cols } => Self::dense_matrix(a, rows, cols),
        }
    }

    /// Operators sharing an input shape, outputs concatenated.
    pub fn stack(ops: Vec<LinOp>) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero operators"))?;
        let input = first.input;
        for op in &ops {
            if op.input != input {
                return Err(Error::invalid("stacked operators must share an input shape"));
            }
        }
        let output_len = ops.iter().map(|o| o.output_len).sum();
        Ok(Self {
            input,
            output_len,
            kind: OpKind::Stack(ops),
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    /// The stored dense matrix, if this is a dense operator.
    pub fn dense_matrix_ref(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            OpKind::Dense(a) => Some(a),
            _ => None,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.input_len());
        match &self.kind {
            OpKind::Dense(a) => a * x,
            OpKind::Projection(ops) => {
                let xs = linalg::unflatten(x, ops.frames, 3 * ops.points);
                linalg::flatten(&ops.project(&xs))
            }
            OpKind::Difference { frames, width } => {
                let xs = linalg::unflatten(x, *frames, *width);
                linalg::flatten(&difference(&xs))
            }
            OpKind::Stack(ops) => {
                let mut out = DVector::zeros(self.output_len);
                let mut off = 0;
                for op in ops {
                    let y = op.apply(x);
                    out.rows_mut(off, y.len()).copy_from(&y);
                    off += y.len();
                }
                out
            }
        }
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(y.len(), self.output_len);
        match &self.kind {
            OpKind::Dense(a) => a.tr_mul(y),
            OpKind::Projection(ops) => {
                let ym = linalg::unflatten(y, 2 * ops.frames, ops.points);
                linalg::flatten(&ops.project_adjoint(&ym))
            }
            OpKind::Difference { frames, width } => {
                let ym = linalg::unflatten(y, frames.saturating_sub(1), *width);
                linalg::flatten(&difference_adjoint(&ym, *frames))
            }
            OpKind::Stack(ops) => {
                let mut out = DVector::zeros(self.input_len());
                let mut off = 0;
                for op in ops {
                    let p = op.output_len;
                    out += op.adjoint(&y.rows(off, p).into_owned());
                    off += p;
                }
                out
            }
        }
    }

    /// Materialises the operator as a `p x N` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let OpKind::Dense(a) = &self.kind {
            return a.clone();
        }
        let n = self.input_len();
        let mut out = DMatrix::zeros(self.output_len, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        out
    }
}

/// First-order temporal difference of the rows of `xs`: row `f` of the
/// output is `xs[f + 1] - xs[f]`.
fn difference(xs: &DMatrix<f64>) -> DMatrix<f64> {
    let f = xs.nrows();
    if f < 2 {
        return DMatrix::zeros(0, xs.ncols());
    }
    xs.rows(1, f - 1) - xs.rows(0, f - 1)
}

fn difference_adjoint(y: &DMatrix<f64>, frames: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(frames, y.ncols());
    for r in 0..y.nrows() {
        let row = y.row(r);
        let mut hi = out.row_mut(r + 1);
        hi += row;
        let mut lo = out.row_mut(r);
        lo -= row;
    }
    out
}

/// Whether an instance's RIP constant was produced by calibration or
/// declared by the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSource {
    Calibrated,
    User,
}

/// Recipe for rebuilding an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSource {
    RipDense {
        rows: usize,
        cols: usize,
        delta: f64,
        seed: u64,
    },
    GaussianDense {
        rows: usize,
        cols: usize,
        variance: f64,
        seed: u64,
    },
    /// Explicit entries, column-major.
    Explicit {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Nrsfm {
        frames: usize,
        points: usize,
        /// Row-major 2x3 blocks.
        rotations: Vec<[f64; 6]>,
        derivative: bool,
    },
}

/// An operator together with its provenance and, when calibrated, its exact
/// RIP constant.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    pub op: LinOp,
    pub source: OperatorSource,
    pub delta: Option<f64>,
}

impl SensingOperator {
    pub fn from_source(source: &OperatorSource, shape: Shape) -> Result<Self> {
        match source {
            OperatorSource::RipDense {
                rows,
                cols,
                delta,
                seed,
            } => {
                check_dim("calibrated operator columns", shape.len(), *cols)?;
                let a = gen_rip_dense(*rows, *cols, *delta, *seed)?;
                Ok(Self {
                    op: LinOp::dense(a, shape)?,
                    source: source.clone(),
                    delta: Some(*delta),
                })
            }
            OperatorSource::GaussianDense {
                rows,
                cols,
                variance,
                seed,
            } => {
                check_dim("gaussian operator columns", shape.len(), *cols)?;
                let a = gen_gaussian_dense(*rows, *cols, *variance, *seed)?;
                Ok(Self {
                    op: LinOp::dense(a, shape)?,
                    source: source.clone(),
                    delta: None,
                })
            }
            OperatorSource::Explicit { rows, cols, data } => {
                check_dim("explicit operator entries", rows * cols, data.len())?;
                check_dim("explicit operator columns", shape.len(), *cols)?;
                let a = DMatrix::from_column_slice(*rows, *cols, data);
                Ok(Self {
                    op: LinOp::dense(a, shape)?,
                    source: source.clone(),
                    delta: None,
                })
            }
            OperatorSource::Nrsfm {
                frames,
                points,
                rotations,
                derivative,
            } => {
                check_dim("nrsfm rotations", *frames, rotations.len())?;
                let ops = NrsfmOps {
                    frames: *frames,
                    points: *points,
                    rotations: rotations
                        .iter()
                        .map(|r| Matrix2x3::from_row_slice(r))
                        .collect(),
                };
                let expected = Shape::Matrix {
                    rows: *frames,
                    cols: 3 * points,
                };
                if shape != expected {
                    return Err(Error::invalid("nrsfm operator needs an F x 3n shape"));
                }
                let op = if *derivative {
                    ops.derivative_operator()?
                } else {
                    ops.projection_operator()
                };
                Ok(Self {
                    op,
                    source: source.clone(),
                    delta: None,
                })
            }
        }
    }

    /// Square RIP-calibrated operator on `shape` (`p = N`).
    pub fn rip(shape: Shape, delta: f64, seed: u64) -> Result<Self> {
        let n = shape.len();
        Self::from_source(
            &OperatorSource::RipDense {
                rows: n,
                cols: n,
                delta,
                seed,
            },
            shape,
        )
    }

    pub fn gaussian(shape: Shape, rows: usize, variance: f64, seed: u64) -> Result<Self> {
        Self::from_source(
            &OperatorSource::GaussianDense {
                rows,
                cols: shape.len(),
                variance,
                seed,
            },
            shape,
        )
    }

    pub fn explicit(a: &DMatrix<f64>, shape: Shape) -> Result<Self> {
        Self::from_source(
            &OperatorSource::Explicit {
                rows: a.nrows(),
                cols: a.ncols(),
                data: a.as_slice().to_vec(),
            },
            shape,
        )
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gaussian matrix whose singular values are replaced by an inclusive linear
/// grid from `sqrt(1 - delta)` to `sqrt(1 + delta)`.
///
/// With `rows >= cols` every singular value lies in that range, so
/// `(1 - delta) ||x||^2 <= ||Ax||^2 <= (1 + delta) ||x||^2` for all `x`.
pub fn gen_rip_dense(rows: usize, cols: usize, delta: f64, seed: u64) -> Result<DMatrix<f64>> {
    check_delta(delta)?;
    if rows < cols {
        return Err(Error::invalid(format!(
            "calibrated operators need rows >= cols, got {rows} x {cols}"
        )));
    }
    if cols == 0 {
        return Ok(DMatrix::zeros(rows, 0));
    }
    let mut rng = seed::rng(seed);
    let g = gaussian_matrix(rows, cols, &mut rng);
    let d = linalg::svd(&g);
    let k = d.s.len();
    let (lo, hi) = ((1.0 - delta).sqrt(), (1.0 + delta).sqrt());
    // non-increasing, matching the SVD ordering
    let grid = DVector::from_fn(k, |i, _| {
        if k == 1 {
            lo
        } else {
            hi - (hi - lo) * i as f64 / (k - 1) as f64
        }
    });
    Ok(d.recompose_with(&grid))
}

/// I.i.d. `N(0, variance)` entries.
pub fn gen_gaussian_dense(
    rows: usize,
    cols: usize,
    variance: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("variance must be positive, got {variance}")));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    Ok(DMatrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng)))
}

/// A recovery problem: operator, observations and optional ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub op: LinOp,
    pub source: OperatorSource,
    pub b: DVector<f64>,
    pub ground_truth: Option<DVector<f64>>,
    pub delta: Option<f64>,
    pub delta_source: Option<DeltaSource>,
    /// Cardinality or rank of the ground truth.
    pub target: Option<usize>,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl Instance {
    /// Instance with given observations and no ground truth.
    pub fn from_operator(sensing: SensingOperator, b: DVector<f64>) -> Result<Self> {
        check_dim("observations", sensing.op.output_len(), b.len())?;
        let delta_source = sensing.delta.map(|_| DeltaSource::Calibrated);
        Ok(Self {
            op: sensing.op,
            source: sensing.source,
            b,
            ground_truth: None,
            delta: sensing.delta,
            delta_source,
            target: None,
            noise_sigma: 0.0,
            seed: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.op.input_shape()
    }

    /// Declares a RIP constant for an explicit operator.
    pub fn with_user_delta(mut self, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        match self.source {
            OperatorSource::Explicit { .. } => {
                self.delta = Some(delta);
                self.delta_source = Some(DeltaSource::User);
                Ok(self)
            }
            _ => Err(Error::invalid(
                "a RIP constant can only be declared for explicit operators",
            )),
        }
    }

    /// `A x - b`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.op.apply(x) - &self.b
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("observations", self.op.output_len(), self.b.len())?;
        if let Some(gt) = &self.ground_truth {
            check_dim("ground truth", self.op.input_len(), gt.len())?;
        }
        match (self.delta, self.delta_source) {
            (None, None) => {}
            (Some(d), Some(src)) => {
                check_delta(d)?;
                match (&self.source, src) {
                    (OperatorSource::RipDense { delta, rows, cols, .. }, DeltaSource::Calibrated) => {
                        if *delta != d {
                            return Err(Error::invalid(
                                "instance delta disagrees with the calibrated operator",
                            ));
                        }
                        if rows < cols {
                            return Err(Error::invalid("calibrated operator must have rows >= cols"));
                        }
                    }
                    (OperatorSource::Explicit { .. }, DeltaSource::User) => {}
                    _ => {
                        return Err(Error::invalid(
                            "delta is only meaningful for calibrated or explicit operators",
                        ))
                    }
                }
            }
            _ => return Err(Error::invalid("delta and delta_source must be given together")),
        }
        if !self.b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observations".into()));
        }
        Ok(())
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            schema: INSTANCE_SCHEMA.to_string(),
            shape: self.shape(),
            operator: self.source.clone(),
            b: self.b.as_slice().to_vec(),
            ground_truth: self.ground_truth.as_ref().map(|g| g.as_slice().to_vec()),
            delta: self.delta,
            delta_source: self.delta_source,
            target: self.target,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn from_file(file: InstanceFile) -> Result<Self> {
        if file.schema != INSTANCE_SCHEMA {
            return Err(Error::invalid(format!(
                "unsupported instance schema '{}', expected '{INSTANCE_SCHEMA}'",
                file.schema
            )));
        }
        let sensing = SensingOperator::from_source(&file.operator, file.shape)?;
        let inst = Self {
            op: sensing.op,
            source: file.operator,
            b: DVector::from_vec(file.b),
            ground_truth: file.ground_truth.map(DVector::from_vec),
            delta: file.delta,
            delta_source: file.delta_source,
            target: file.target,
            noise_sigma: file.noise_sigma,
            seed: file.seed,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// On-disk instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema: String,
    pub shape: Shape,
    pub operator: OperatorSource,
    pub b: Vec<f64>,
    pub ground_truth: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub delta_source: Option<DeltaSource>,
    pub target: Option<usize>,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")))
    }
}

/// `b = A x + eps` with `eps_i ~ N(0, sigma^2)`. The noise direction is drawn
/// even for `sigma = 0` so instances differing only in `sigma` share it.
fn observe(op: &LinOp, x: &DVector<f64>, sigma: f64, rng: &mut impl Rng) -> DVector<f64> {
    let mut b = op.apply(x);
    let eps = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    if sigma > 0.0 {
        b.axpy(sigma, &eps, 1.0);
    }
    b
}

/// Sparse ground truth with `cardinality` standard-normal entries on a
/// uniformly random support.
pub fn make_sparse_instance(
    n: usize,
    cardinality: usize,
    noise_sigma: f64,
    sensing: SensingOperator,
    seed: u64,
) -> Result<Instance> {
    check_sigma(noise_sigma)?;
    if cardinality > n {
        return Err(Error::invalid(format!(
            "cardinality {cardinality} exceeds dimension {n}"
        )));
    }
    if sensing.op.input_shape() != (Shape::Vector { n }) {
        return Err(Error::invalid(format!(
            "operator input shape {:?} does not match a length-{n} vector",
            sensing.op.input_shape()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut x = DVector::zeros(n);
    let mut support = rand::seq::index::sample(&mut rng, n, cardinality).into_vec();
    support.sort_unstable();
    for i in support {
        x[i] = rng.sample(StandardNormal);
    }
    let b = observe(&sensing.op, &x, noise_sigma, &mut rng);
    let mut inst = Instance::from_operator(sensing, b)?;
    inst.ground_truth = Some(x);
    inst.target = Some(cardinality);
    inst.noise_sigma = noise_sigma;
    inst.seed = Some(seed);
    Ok(inst)
}

/// Ground truth `X = U V^T` with standard-normal `U (m x rank)` and
/// `V (n x rank)`.
pub fn make_lowrank_instance(
    m: usize,
    n: usize,
    rank: usize,
    noise_sigma: f64,
    sensing: SensingOperator,
    seed: u64,
) -> Result<Instance> {
    check_sigma(noise_sigma)?;
    if rank > m.min(n) {
        return Err(Error::invalid(format!(
            "rank {rank} exceeds min({m}, {n})"
        )));
    }
    if sensing.op.input_shape() != (Shape::Matrix { rows: m, cols: n }) {
        return Err(Error::invalid(format!(
            "operator input shape {:?} does not match a {m} x {n} matrix",
            sensing.op.input_shape()
        )));
    }
    let mut rng = seed::rng(seed);
    let u = gaussian_matrix(m, rank, &mut rng);
    let v = gaussian_matrix(n, rank, &mut rng);
    let x = linalg::flatten(&(u * v.transpose()));
    let b = observe(&sensing.op, &x, noise_sigma, &mut rng);
    let mut inst = Instance::from_operator(sensing, b)?;
    inst.ground_truth = Some(x);
    inst.target = Some(rank);
    inst.noise_sigma = noise_sigma;
    inst.seed = Some(seed);
    Ok(inst)
}

/// Camera projections and reshaping for non-rigid structure from motion.
///
/// `X` stacks the per-frame `3 x n` shapes into a `3F x n` matrix; `X#` is
/// the `F x 3n` matrix whose row `f` concatenates the three rows of `X_f`.
/// The unknown of the recovery problem is `X#`.
#[derive(Debug, Clone, PartialEq)]
pub struct NrsfmOps {
    pub frames: usize,
    pub points: usize,
    /// Two orthonormal rows per frame.
    pub rotations: Vec<Matrix2x3<f64>>,
}

impl NrsfmOps {
    /// `3F x n` to `F x 3n`.
    pub fn to_sharp(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (f, n) = (self.frames, self.points);
        DMatrix::from_fn(f, 3 * n, |row, col| x[(3 * row + col / n, col % n)])
    }

    /// `F x 3n` to `3F x n`.
    pub fn from_sharp(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let (f, n) = (self.frames, self.points);
        DMatrix::from_fn(3 * f, n, |row, col| xs[(row / 3, (row % 3) * n + col)])
    }

    /// `R X` as a `2F x n` matrix, for `X#` given.
    pub fn project(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.points;
        let mut out = DMatrix::zeros(2 * self.frames, n);
        for (f, r) in self.rotations.iter().enumerate() {
            for i in 0..2 {
                for c in 0..3 {
                    let w = r[(i, c)];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[(2 * f + i, j)] += w * xs[(f, c * n + j)];
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::project`], returning an `F x 3n` matrix.
    pub fn project_adjoint(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.points;
        let mut out = DMatrix::zeros(self.frames, 3 * n);
        for (f, r) in self.rotations.iter().enumerate() {
            for i in 0..2 {
                for c in 0..3 {
                    let w = r[(i, c)];
                    for j in 0..n {
                        out[(f, c * n + j)] += w * y[(2 * f + i, j)];
                    }
                }
            }
        }
        out
    }

    /// `D X#`, the `(F-1) x 3n` frame-to-frame differences.
    pub fn difference(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        difference(xs)
    }

    pub fn projection_operator(&self) -> LinOp {
        LinOp {
            input: self.sharp_shape(),
            output_len: 2 * self.frames * self.points,
            kind: OpKind::Projection(self.clone()),
        }
    }

    pub fn difference_operator(&self) -> LinOp {
        LinOp {
            input: self.sharp_shape(),
            output_len: self.frames.saturating_sub(1) * 3 * self.points,
            kind: OpKind::Difference {
                frames: self.frames,
                width: 3 * self.points,
            },
        }
    }

    /// `[R; D]`, so that `||[R; D] X# - [M; 0]||^2 = ||RX - M||^2 + ||D X#||^2`.
    pub fn derivative_operator(&self) -> Result<LinOp> {
        LinOp::stack(vec![self.projection_operator(), self.difference_operator()])
    }

    pub fn sharp_shape(&self) -> Shape {
        Shape::Matrix {
            rows: self.frames,
            cols: 3 * self.points,
        }
    }

    /// `||R X - M||_F` for an iterate `X#` and measurements `M (2F x n)`.
    pub fn data_fit(&self, xs: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
        (self.project(xs) - m).norm()
    }

    /// The `2F x n` measurement matrix stored in an instance built by
    /// [`make_nrsfm_instance`] (with or without the derivative rows).
    pub fn measurements(&self, inst: &Instance) -> DMatrix<f64> {
        let len = 2 * self.frames * self.points;
        DMatrix::from_column_slice(2 * self.frames, self.points, &inst.b.as_slice()[..len])
    }

    /// Copy of a projection instance whose operator and observations also
    /// carry the derivative penalty `||D X#||_F^2`.
    pub fn derivative_instance(&self, inst: &Instance) -> Result<Instance> {
        let len = 2 * self.frames * self.points;
        check_dim("nrsfm observations", len, inst.b.len())?;
        let op = self.derivative_operator()?;
        let mut b = DVector::zeros(op.output_len());
        b.rows_mut(0, len).copy_from(&inst.b);
        let mut out = inst.clone();
        out.op = op;
        out.b = b;
        if let OperatorSource::Nrsfm { derivative, .. } = &mut out.source {
            *derivative = true;
        }
        Ok(out)
    }

    fn source(&self) -> OperatorSource {
        OperatorSource::Nrsfm {
            frames: self.frames,
            points: self.points,
            rotations: self
                .rotations
                .iter()
                .map(|r| {
                    let mut a = [0.0; 6];
                    for i in 0..2 {
                        for c in 0..3 {
                            a[3 * i + c] = r[(i, c)];
                        }
                    }
                    a
                })
                .collect(),
            derivative: false,
        }
    }
}

/// Parameters of a synthetic non-rigid scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrsfmParams {
    pub frames: usize,
    pub points: usize,
    /// Number of basis shapes.
    pub basis: usize,
    pub noise_sigma: f64,
    /// Standard deviation of an i.i.d. perturbation added to `X#`, making the
    /// ground truth full rank. Zero keeps it exactly rank `basis`.
    #[serde(default)]
    pub perturbation: f64,
}

/// Two rows of a uniformly random rotation: QR of a Gaussian 3x3 with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_camera(rng: &mut impl Rng) -> Matrix2x3<f64> {
    let g = Matrix3::from_fn(|_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..3 {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q.fixed_rows::<2>(0).into_owned()
}

/// Shape-basis scene: `X_f = sum_k c_fk B_k`, `x_f = R_f X_f (+ noise)`.
///
/// Basis entries are standard normal and coefficients are `N(0, 1/F)`, so
/// every coefficient column has unit expected squared norm and the nonzero
/// singular values of `X#` are close to `sqrt(3n)`.
pub fn make_nrsfm_instance(params: NrsfmParams, seed: u64) -> Result<(Instance, NrsfmOps)> {
    let NrsfmParams {
        frames,
        points,
        basis,
        noise_sigma,
        perturbation,
    } = params;
    check_sigma(noise_sigma)?;
    check_sigma(perturbation)?;
    if frames == 0 || points == 0 {
        return Err(Error::invalid("nrsfm scenes need at least one frame and one point"));
    }
    if basis > frames || basis > points {
        return Err(Error::invalid(format!(
            "basis size {basis} must not exceed frames ({frames}) or points ({points})"
        )));
    }
    let mut rng = seed::rng(seed);
    let coeffs = gaussian_matrix(frames, basis, &mut rng) / (frames as f64).sqrt();
    let basis_sharp = gaussian_matrix(basis, 3 * points, &mut rng);
    let rotations: Vec<_> = (0..frames).map(|_| random_camera(&mut rng)).collect();
    let mut xs = coeffs * basis_sharp;
    if perturbation > 0.0 {
        xs += gaussian_matrix(frames, 3 * points, &mut rng) * perturbation;
    }
    let ops = NrsfmOps {
        frames,
        points,
        rotations,
    };
    let mut m = ops.project(&xs);
    if noise_sigma > 0.0 {
        m += gaussian_matrix(2 * frames, points, &mut rng) * noise_sigma;
    }
    let inst = Instance {
        op: ops.projection_operator(),
        source: ops.source(),
        b: linalg::flatten(&m),
        ground_truth: Some(linalg::flatten(&xs)),
        delta: None,
        delta_source: None,
        target: Some(basis),
        noise_sigma,
        seed: Some(seed),
    };
    Ok((inst, ops))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rip_rejects_bad_parameters() {
        assert!(gen_rip_dense(10, 10, 0.0, 1).is_err());
        assert!(gen_rip_dense(10, 10, 1.0, 1).is_err());
        assert!(gen_rip_dense(5, 10, 0.2, 1).is_err());
    }

    #[test]
    fn tiny_delta_gives_orthogonal_operator() {
        let a = gen_rip_dense(30, 30, 1e-12, 3).unwrap();
        let s = a.singular_values();
        for v in s.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_rejects_zero_variance() {
        assert!(gen_gaussian_dense(3, 3, 0.0, 1).is_err());
        assert!(gen_gaussian_dense(3, 3, -1.0, 1).is_err());
    }

    #[test]
    fn sparse_instance_validation() {
        let op = SensingOperator::rip(Shape::Vector { n: 5 }, 0.2, 1).unwrap();
        assert!(make_sparse_instance(5, 6, 0.0, op.clone(), 1).is_err());
        assert!(make_sparse_instance(5, 2, -0.1, op.clone(), 1).is_err());
        assert!(make_sparse_instance(4, 2, 0.0, op, 1).is_err());
    }

    #[test]
    fn lowrank_instance_rank_zero_is_pure_noise() {
        let shape = Shape::Matrix { rows: 3, cols: 4 };
        let op = SensingOperator::rip(shape, 0.2, 1).unwrap();
        let inst = make_lowrank_instance(3, 4, 0, 0.5, op.clone(), 9).unwrap();
        assert_eq!(inst.ground_truth.as_ref().unwrap().norm(), 0.0);
        assert!(inst.b.norm() > 0.0);
        assert!(make_lowrank_instance(3, 4, 4, 0.0, op, 9).is_err());
    }

    #[test]
    fn difference_of_constant_trajectory_is_zero() {
        let row = DMatrix::from_row_slice(1, 6, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let xs = DMatrix::from_fn(4, 6, |_, c| row[(0, c)]);
        assert_eq!(difference(&xs).norm(), 0.0);
    }

    #[test]
    fn sharp_reshape_concatenates_rows() {
        let ops = NrsfmOps {
            frames: 2,
            points: 2,
            rotations: vec![Matrix2x3::identity(); 2],
        };
        let x = DMatrix::from_fn(6, 2, |r, c| (10 * r + c) as f64);
        let xs = ops.to_sharp(&x);
        // frame 1 = rows 3..6 of X
        assert_eq!(
            xs.row(1).iter().copied().collect::<Vec<_>>(),
            vec![30.0, 31.0, 40.0, 41.0, 50.0, 51.0]
        );
        assert_eq!(ops.from_sharp(&xs), x);
    }

    #[test]
    fn user_delta_only_for_explicit_operators() {
        let op = SensingOperator::gaussian(Shape::Vector { n: 3 }, 3, 1.0, 2).unwrap();
        let inst = Instance::from_operator(op, DVector::zeros(3)).unwrap();
        assert!(inst.with_user_delta(0.3).is_err());
        let a = DMatrix::from_element(1, 1, 0.5f64.sqrt());
        let op = SensingOperator::explicit(&a, Shape::Vector { n: 1 }).unwrap();
        let inst = Instance::from_operator(op, DVector::from_element(1, 1.0)).unwrap();
        let inst = inst.with_user_delta(0.5).unwrap();
        assert_eq!(inst.delta_source, Some(DeltaSource::User));
        assert!(inst.clone().with_user_delta(1.5).is_err());
    }

    #[test]
    fn validate_rejects_calibrated_claim_on_gaussian() {
        let op = SensingOperator::gaussian(Shape::Vector { n: 3 }, 3, 1.0, 2).unwrap();
        let mut inst = Instance::from_operator(op, DVector::zeros(3)).unwrap();
        inst.delta = Some(0.2);
        inst.delta_source = Some(DeltaSource::Calibrated);
        assert!(inst.validate().is_err());
    }
}
