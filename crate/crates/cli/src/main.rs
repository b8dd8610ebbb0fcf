//! `rmu`: generate instances, solve, certify and run experiment grids.
//!
//! Exit codes: 0 success, 1 certificate failed, 2 usage or invalid
//! configuration, 3 solver did not converge, 4 point not stationary,
//! 5 no RIP constant available, 6 I/O or parse failure.
//!
//! `RMU_THREADS` sets the worker thread count for grids and studies.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use rmu_core::certificate::{self, CertificateOptions, STATIONARITY_TOL};
use rmu_core::experiments::{
    emit_results, run_nrsfm_study, run_phase_grid, Format, GridSpec, NrsfmSpec, Results,
};
use rmu_core::linear_ops::{
    make_lowrank_instance, make_sparse_instance, Instance, NrsfmParams, SensingOperator, Shape,
};
use rmu_core::regularizers::{RegKind, RegParams};
use rmu_core::seed::{self, stream};
use rmu_core::solver::{self, SolveResult, SolverConfig};

pub const SOLVE_SCHEMA: &str = "rmu-solve/1";
pub const CERTIFICATE_SCHEMA: &str = "rmu-certificate/1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rmu_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn parse(path: &Path, source: serde_json::Error) -> Self {
        CliError::Parse {
            path: path.to_owned(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        use rmu_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Parse { .. } => 6,
            CliError::Core(e) => match e {
                E::InvalidParameter(_) => 2,
                E::NonFinite(_) => 3,
                E::NotStationary { .. } => 4,
                E::MissingDelta(_) => 5,
                E::DimensionMismatch { .. } | E::Io { .. } | E::Json(_) | E::Csv(_) => 6,
            },
        }
    }
}

const EXIT_CERT_FAILED: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "rmu", version, about = "Sparse and low-rank recovery with the r_mu regularizer")]
struct Cli {
    /// Suppress the summary line on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Run the GIST solver on an instance.
    Solve(SolveArgs),
    /// Check the separation certificate at a solution.
    Certify(CertifyArgs),
    /// Run a (sigma, mu) phase grid.
    Grid(GridArgs),
    /// Run the synthetic NRSfM fit-versus-rank study.
    Nrsfm(NrsfmArgs),
}

#[derive(Args)]
struct OperatorArgs {
    /// RIP constant of a square calibrated operator (default 0.2).
    #[arg(long, conflicts_with = "gaussian")]
    delta: Option<f64>,
    /// Use an i.i.d. Gaussian operator instead; no RIP constant is claimed.
    #[arg(long)]
    gaussian: bool,
    /// Rows of the Gaussian operator (default: input dimension).
    #[arg(long, requires = "gaussian")]
    rows: Option<usize>,
    /// Entry variance of the Gaussian operator (default: 1 / rows).
    #[arg(long, requires = "gaussian")]
    variance: Option<f64>,
}

#[derive(Subcommand)]
enum GenKind {
    /// Sparse vector ground truth.
    Sparse {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        card: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Low-rank matrix ground truth.
    Lowrank {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explicit operator and observations for a vector unknown.
    Explicit {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Operator entries, row-major, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        /// Observations, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        b: String,
        /// User-declared RIP constant.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// rmu, l1, nuclear, card, rank or none.
    #[arg(long)]
    reg: Option<RegKind>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol_obj: Option<f64>,
    #[arg(long)]
    tol_step: Option<f64>,
    /// Start from the tighter tolerance set (objective test off).
    #[arg(long)]
    precise: bool,
    /// JSON file with `reg`, `mu` and `solver` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the accepted-step trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Output of `rmu solve`.
    #[arg(long)]
    solution: PathBuf,
    /// Defaults to the mu recorded with the solution.
    #[arg(long)]
    mu: Option<f64>,
    /// RIP constant; overrides the one stored with the instance.
    #[arg(long)]
    delta: Option<f64>,
    /// Cardinality (rank) the constant holds for; default: full dimension.
    #[arg(long)]
    separation: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    #[arg(long, default_value_t = STATIONARITY_TOL)]
    stationarity_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    Sparse,
    Lowrank,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct GridArgs {
    kind: GridKind,
    /// 10 trials per cell instead of 50.
    #[arg(long)]
    fast: bool,
    /// JSON file with any subset of the grid specification.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise levels: `a,b,c`, `lo..hi` or `lo..hi:step`.
    #[arg(long)]
    sigma: Option<String>,
    /// Regularization strengths, same syntax as `--sigma`.
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Default: from the file extension, CSV otherwise.
    #[arg(long)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NrsfmArgs {
    #[arg(long, visible_alias = "F")]
    frames: Option<usize>,
    #[arg(long, visible_alias = "n")]
    points: Option<usize>,
    #[arg(long, visible_alias = "K")]
    basis: Option<usize>,
    /// Observation noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Full-rank perturbation of the ground truth.
    #[arg(long)]
    perturbation: Option<f64>,
    /// Same syntax as `grid --mu`; default `1..50`.
    #[arg(long)]
    mu: Option<String>,
    /// Add the first-order frame-difference penalty.
    #[arg(long)]
    derivative: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
}

/// Writes through a temporary sibling so failures leave no partial file.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = name.to_owned();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let res = write(&tmp).and_then(|_| fs::rename(&tmp, path).map_err(|e| CliError::io(path, e)));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(rmu_core::Error::from)?;
    text.push('\n');
    write_atomic(path, |tmp| fs::write(tmp, &text).map_err(|e| CliError::io(path, e)))
}

fn load_instance(path: &Path) -> Result<Instance, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Instance::from_json(&text).map_err(|e| match e {
        rmu_core::Error::Json(source) => CliError::parse(path, source),
        other => other.into(),
    })
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    config::parse_list(s).map_err(|e| CliError::Usage(format!("--{what}: {e}")))
}

fn sensing(op: &OperatorArgs, shape: Shape, seed: u64) -> Result<SensingOperator, CliError> {
    let op_seed = seed::derive(seed, &[stream::OPERATOR]);
    if op.gaussian {
        let rows = op.rows.unwrap_or(shape.len());
        let variance = op.variance.unwrap_or(1.0 / rows as f64);
        Ok(SensingOperator::gaussian(shape, rows, variance, op_seed)?)
    } else {
        Ok(SensingOperator::rip(shape, op.delta.unwrap_or(0.2), op_seed)?)
    }
}

fn cmd_gen(kind: GenKind) -> Result<(u8, String), CliError> {
    let (inst, out) = match kind {
        GenKind::Sparse {
            n,
            card,
            sigma,
            op,
            seed,
            out,
        } => {
            let s = sensing(&op, Shape::Vector { n }, seed)?;
            let inst_seed = seed::derive(seed, &[stream::INSTANCE]);
            (make_sparse_instance(n, card, sigma, s, inst_seed)?, out)
        }
        GenKind::Lowrank {
            m,
            n,
            rank,
            sigma,
            op,
            seed,
            out,
        } => {
            let s = sensing(&op, Shape::Matrix { rows: m, cols: n }, seed)?;
            let inst_seed = seed::derive(seed, &[stream::INSTANCE]);
            (make_lowrank_instance(m, n, rank, sigma, s, inst_seed)?, out)
        }
        GenKind::Explicit {
            rows,
            cols,
            a,
            b,
            delta,
            out,
        } => {
            let a = numbers(&a, "a")?;
            let b = numbers(&b, "b")?;
            if a.len() != rows * cols {
                return Err(CliError::Usage(format!(
                    "--a has {} entries, expected {rows} x {cols}",
                    a.len()
                )));
            }
            let s = SensingOperator::explicit(
                &DMatrix::from_row_slice(rows, cols, &a),
                Shape::Vector { n: cols },
            )?;
            let mut inst = Instance::from_operator(s, DVector::from_vec(b))?;
            if let Some(d) = delta {
                inst = inst.with_user_delta(d)?;
            }
            (inst, out)
        }
    };
    inst.validate()?;
    let text = inst.to_json()?;
    write_atomic(&out, |tmp| fs::write(tmp, &text).map_err(|e| CliError::io(&out, e)))?;
    Ok((0, format!("wrote instance {}", out.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    reg: RegKind,
    mu: Option<f64>,
    solver: SolverConfig,
}

#[derive(Serialize, Deserialize)]
struct SolveOutput {
    schema: String,
    instance: PathBuf,
    instance_seed: Option<u64>,
    config: SolveConfig,
    result: SolveResult,
}

fn put(map: &mut Map<String, Value>, key: &str, v: Option<impl Serialize>) {
    if let Some(v) = v {
        map.insert(key.into(), serde_json::to_value(v).expect("flag values serialise"));
    }
}

fn cmd_solve(args: SolveArgs) -> Result<(u8, String), CliError> {
    let defaults = SolveConfig {
        reg: RegKind::RMu,
        mu: None,
        solver: if args.precise {
            SolverConfig::precise()
        } else {
            SolverConfig::default()
        },
    };
    let mut solver_flags = Map::new();
    put(&mut solver_flags, "tau0", args.tau0);
    put(&mut solver_flags, "max_iters", args.max_iters);
    put(&mut solver_flags, "tol_obj", args.tol_obj);
    put(&mut solver_flags, "tol_step", args.tol_step);
    let mut flags = Map::new();
    put(&mut flags, "reg", args.reg);
    put(&mut flags, "mu", args.mu);
    flags.insert("solver".into(), Value::Object(solver_flags));
    let cfg = config::resolve(&defaults, args.config.as_deref(), Value::Object(flags))?;
    let mu = match (cfg.reg, cfg.mu) {
        (RegKind::None, mu) => mu.unwrap_or(0.0),
        (_, Some(mu)) => mu,
        (_, None) => return Err(CliError::Usage("--mu is required".into())),
    };
    let reg = RegParams::new(cfg.reg, mu)?;
    cfg.solver.validate()?;

    let inst = load_instance(&args.instance)?;
    let res = solver::solve(&inst, &reg, &cfg.solver, None)?;
    if let Some(trace) = &args.trace {
        write_atomic(trace, |tmp| {
            let f = fs::File::create(tmp).map_err(|e| CliError::io(trace, e))?;
            solver::write_trace_jsonl(&res.history, std::io::BufWriter::new(f))?;
            Ok(())
        })?;
    }
    let code = if res.status.is_converged() { 0 } else { EXIT_NOT_CONVERGED };
    let summary = format!(
        "{:?} after {} iterations: objective {:.6e}, support {}, threshold {}",
        res.status,
        res.iterations,
        res.objective,
        res.support_size,
        reg.sqrt_mu()
    );
    let out = SolveOutput {
        schema: SOLVE_SCHEMA.into(),
        instance: args.instance,
        instance_seed: inst.seed,
        config: SolveConfig {
            mu: Some(mu),
            ..cfg
        },
        result: res,
    };
    write_json(&args.out, &out)?;
    Ok((code, summary))
}

fn cmd_certify(args: CertifyArgs) -> Result<(u8, String), CliError> {
    let inst = load_instance(&args.instance)?;
    let sol = config::read_json(&args.solution)?;
    let result = sol.get("result").unwrap_or(&sol);
    let parsed: SolveResult = serde_json::from_value(result.clone())
        .map_err(|e| CliError::parse(&args.solution, e))?;
    let mu = args.mu.unwrap_or(parsed.reg.mu);
    let separation = args.separation.unwrap_or(match inst.shape() {
        Shape::Vector { n } => n,
        Shape::Matrix { rows, cols } => rows.min(cols),
    });
    let opts = CertificateOptions {
        margin: args.margin,
        stationarity_tol: args.stationarity_tol,
    };
    let report = certificate::check_certificate(
        &parsed.solution,
        &inst,
        mu,
        args.delta,
        separation,
        &opts,
    )?;
    let code = if report.passed { 0 } else { EXIT_CERT_FAILED };
    let summary = format!(
        "certificate {} (margin {:.3e}, delta {} {:?})",
        if report.passed { "passed" } else { "failed" },
        report.margin,
        report.delta,
        report.delta_source
    );
    let out = json!({
        "schema": CERTIFICATE_SCHEMA,
        "config": {
            "instance": args.instance,
            "instance_seed": inst.seed,
            "solution": args.solution,
            "mu": mu,
            "delta": args.delta,
            "separation": separation,
            "options": opts,
        },
        "report": report,
    });
    write_json(&args.out, &out)?;
    Ok((code, summary))
}

fn format_for(arg: Option<FormatArg>, out: &Path) -> Format {
    match arg {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Json) => Format::Json,
        None if out.extension().is_some_and(|e| e == "json") => Format::Json,
        None => Format::Csv,
    }
}

fn cmd_grid(args: GridArgs) -> Result<(u8, String), CliError> {
    let defaults = match args.kind {
        GridKind::Sparse => GridSpec::sparse_default(args.fast),
        GridKind::Lowrank => GridSpec::lowrank_default(args.fast),
    };
    let mut flags = Map::new();
    put(&mut flags, "trials", args.trials);
    put(&mut flags, "base_seed", args.seed);
    put(&mut flags, "sigma_axis", args.sigma.as_deref().map(|s| numbers(s, "sigma")).transpose()?);
    put(&mut flags, "mu_axis", args.mu.as_deref().map(|s| numbers(s, "mu")).transpose()?);
    if let Some(d) = args.delta {
        flags.insert("operator".into(), json!({"kind": "rip_square", "delta": d}));
    }
    let spec = config::resolve(&defaults, args.config.as_deref(), Value::Object(flags))?;
    spec.validate()?;
    let grid = run_phase_grid(&spec)?;
    let records: Vec<_> = grid.cells.iter().flat_map(|c| &c.records).collect();
    let errored = records.iter().filter(|r| r.error.is_some()).count();
    let flagged: usize = grid.cells.iter().map(|c| c.flagged_trials).sum();
    let format = format_for(args.format, &args.out);
    write_atomic(&args.out, |tmp| Ok(emit_results(Results::Grid(&grid), tmp, format)?))?;
    let code = if errored == records.len() { EXIT_NOT_CONVERGED } else { 0 };
    Ok((
        code,
        format!(
            "{} cells, {} solves ({flagged} flagged, {errored} errors) -> {}",
            grid.cells.len(),
            records.len(),
            args.out.display()
        ),
    ))
}

fn cmd_nrsfm(args: NrsfmArgs) -> Result<(u8, String), CliError> {
    let defaults = NrsfmSpec {
        scene: NrsfmParams {
            frames: 50,
            points: 30,
            basis: 4,
            noise_sigma: 0.0,
            perturbation: 0.0,
        },
        mu_list: (1..=50).map(f64::from).collect(),
        with_derivative: false,
        seed: 0,
        solver: SolverConfig::precise(),
    };
    let mut scene = Map::new();
    put(&mut scene, "frames", args.frames);
    put(&mut scene, "points", args.points);
    put(&mut scene, "basis", args.basis);
    put(&mut scene, "noise_sigma", args.sigma);
    put(&mut scene, "perturbation", args.perturbation);
    let mut flags = Map::new();
    flags.insert("scene".into(), Value::Object(scene));
    put(&mut flags, "mu_list", args.mu.as_deref().map(|s| numbers(s, "mu")).transpose()?);
    put(&mut flags, "seed", args.seed);
    if args.derivative {
        flags.insert("with_derivative".into(), Value::Bool(true));
    }
    let spec = config::resolve(&defaults, args.config.as_deref(), Value::Object(flags))?;
    let study = run_nrsfm_study(&spec)?;
    let format = format_for(args.format, &args.out);
    write_atomic(&args.out, |tmp| Ok(emit_results(Results::Nrsfm(&study), tmp, format)?))?;
    let unconverged = study
        .curves
        .iter()
        .flat_map(|c| &c.records)
        .filter(|r| !r.status.is_converged())
        .count();
    Ok((
        0,
        format!(
            "{} curves x {} mu values ({unconverged} not converged) -> {}",
            study.curves.len(),
            spec.mu_list.len(),
            args.out.display()
        ),
    ))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("RMU_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("RMU_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<(u8, String), CliError> {
        configure_threads()?;
        match cli.command {
            Command::Gen { kind } => cmd_gen(kind),
            Command::Solve(a) => cmd_solve(a),
            Command::Certify(a) => cmd_certify(a),
            Command::Grid(a) => cmd_grid(a),
            Command::Nrsfm(a) => cmd_nrsfm(a),
        }
    };
    match run() {
        Ok((code, summary)) => {
            if !cli.quiet {
                eprintln!("{summary}");
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
