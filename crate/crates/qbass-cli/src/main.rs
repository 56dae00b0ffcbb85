//! `qbass` command line: martingale transport solvers, q-Bass martingale
//! construction and simulation, and measure utilities over JSON files.
//!
//! Exit codes: 0 success, 1 domain errors (order violations, infeasible or
//! non-generating inputs), 2 I/O and schema errors. Results print to
//! stdout as a run-result envelope unless `--out` redirects them; floats
//! carry 17 significant digits so identical inputs yield byte-identical
//! output. `QBASS_LOG=error|info|debug` gates progress messages on stderr.

mod emit;
mod plot;

use clap::{Parser, Subcommand, ValueEnum};
use emit::{csv_float, digest_of, to_canonical_json, RunResult};
use qbass::bass::{self, BassDiagnostics, BassError, BassPair, FixedPointConfig};
use qbass::convexfn::{ConvexError, ConvexFunction};
use qbass::measures::{self, DiscreteMeasure, MeasureError};
use qbass::ot::{self, OtError};
use qbass::quantize::{self, QuantizeError};
use qbass::solver::{self, DualConfig, SolverError};
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qbass", version, about = "Martingale optimal transport with a general reference measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Result encoding; csv is available for tabular payloads.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Emit an SVG chart of the one-dimensional inputs and outputs.
    #[arg(long, global = true)]
    plot: Option<PathBuf>,
    /// Include wall time in the result (breaks byte-determinism).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Decide convex order of two measures via the martingale-transport LP.
    CheckOrder { mu: PathBuf, nu: PathBuf },
    /// Scan all atom pairs for irreducibility of an ordered pair.
    Irreducible { mu: PathBuf, nu: PathBuf },
    /// Maximal covariance and optimal coupling of two measures.
    Mcov { a: PathBuf, b: PathBuf },
    /// Solve the primal martingale problem as one joint LP.
    SolvePrimal { instance: PathBuf },
    /// Minimize the dual over convex potentials on supp(nu).
    SolveDual {
        instance: PathBuf,
        /// Gap tolerance of the subgradient solver.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Generate the q-Bass martingale of a generating potential.
    BuildBass { instance: PathBuf },
    /// Verify the pushforward identities of a pair against marginals.
    VerifyBass {
        pair: PathBuf,
        instance: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Simulate two-period paths of a verified pair.
    Simulate {
        pair: PathBuf,
        instance: PathBuf,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fixed-point search for a pair with prescribed marginals (d = 1).
    Fixpoint {
        instance: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        pieces: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Quantile quantization of the centered Gaussian.
    QuantizeGaussian {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
}

/// Domain errors exit 1; I/O and schema errors exit 2.
enum CliError {
    Domain(String),
    Io(String),
    Schema(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) | CliError::Schema(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Io(m) | CliError::Schema(m) => m,
        }
    }
}

macro_rules! domain_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}
domain_from!(SolverError, BassError, OtError, ConvexError, MeasureError, QuantizeError);

fn log_enabled(level: u8) -> bool {
    let setting = std::env::var("QBASS_LOG").unwrap_or_default();
    let current = match setting.as_str() {
        "debug" => 2,
        "info" => 1,
        _ => 0,
    };
    level <= current
}

macro_rules! qlog {
    ($lvl:expr, $($t:tt)*) => {
        if log_enabled($lvl) {
            eprintln!($($t)*);
        }
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = std::time::Instant::now();
    match run(&cli, start) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

// ---- input files -------------------------------------------------------

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    gap_tol: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    pieces: Option<usize>,
    epsilon: Option<f64>,
    beta: Option<f64>,
    seed: Option<u64>,
}

impl ConfigFile {
    fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("gap_tol", self.gap_tol),
            ("tol", self.tol),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(CliError::Schema(format!(
                        "config.{name} must be positive, got {v}"
                    )));
                }
            }
        }
        for (name, v) in [("max_iter", self.max_iter), ("pieces", self.pieces)] {
            if let Some(v) = v {
                if v < 1 {
                    return Err(CliError::Schema(format!("config.{name} must be >= 1")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default = "schema_one")]
    schema: u32,
    mu: DiscreteMeasure,
    #[serde(default)]
    nu: Option<DiscreteMeasure>,
    q: DiscreteMeasure,
    #[serde(default)]
    potential: Option<ConvexFunction>,
    #[serde(default)]
    config: Option<ConfigFile>,
}

fn schema_one() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairFile {
    #[serde(default = "schema_one")]
    schema: u32,
    v_hat: ConvexFunction,
    alpha_hat: DiscreteMeasure,
    diagnostics: BassDiagnostics,
}

struct Loaded<T> {
    value: T,
    /// Parsed JSON for digesting, canonical under key reordering.
    raw: Value,
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Schema(format!("{} is not valid JSON: {e}", path.display())))
}

/// Unwrap a run-result envelope so emitted files feed back into the CLI.
fn unwrap_envelope(v: Value) -> Value {
    match v {
        Value::Object(ref map) if map.contains_key("command") && map.contains_key("result") => {
            map.get("result").cloned().unwrap_or(Value::Null)
        }
        other => other,
    }
}

fn read_measure(path: &Path) -> Result<Loaded<DiscreteMeasure>, CliError> {
    let raw = unwrap_envelope(read_json(path)?);
    let value = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    Ok(Loaded { value, raw })
}

fn read_instance(path: &Path) -> Result<Loaded<InstanceFile>, CliError> {
    let raw = unwrap_envelope(read_json(path)?);
    let value: InstanceFile = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if value.schema != 1 {
        return Err(CliError::Schema(format!(
            "{}: unsupported schema version {}",
            path.display(),
            value.schema
        )));
    }
    if let Some(cfg) = &value.config {
        cfg.validate()?;
    }
    let d = value.mu.dim();
    if value.q.dim() != d
        || value.nu.as_ref().is_some_and(|nu| nu.dim() != d)
        || value.potential.as_ref().is_some_and(|p| p.dim() != d)
    {
        return Err(CliError::Schema(format!(
            "{}: dimensions disagree across measures/potential",
            path.display()
        )));
    }
    Ok(Loaded { value, raw })
}

fn read_pair(path: &Path) -> Result<Loaded<BassPair>, CliError> {
    let mut raw = unwrap_envelope(read_json(path)?);
    // build-bass and fixpoint wrap the pair one level deeper.
    if let Value::Object(ref map) = raw {
        if let Some(p) = map.get("pair") {
            raw = p.clone();
        }
    }
    let file: PairFile = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if file.schema != 1 {
        return Err(CliError::Schema(format!(
            "{}: unsupported schema version {}",
            path.display(),
            file.schema
        )));
    }
    Ok(Loaded {
        value: BassPair {
            v_hat: file.v_hat,
            alpha_hat: file.alpha_hat,
            diagnostics: file.diagnostics,
        },
        raw,
    })
}

// ---- output --------------------------------------------------------------

fn pair_to_value(p: &BassPair) -> Value {
    json!({
        "schema": 1,
        "v_hat": p.v_hat,
        "alpha_hat": p.alpha_hat,
        "diagnostics": p.diagnostics,
    })
}

fn kernel_to_value(k: &qbass::MartingaleKernel) -> Value {
    json!({
        "target_support": k.target_support(),
        "rows": k.rows(),
    })
}

fn kernel_triples(rows: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut triples = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            if m > 0.0 {
                triples.push((i, j, m));
            }
        }
    }
    triples
}

fn triples_csv(header: &str, triples: &[(usize, usize, f64)]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for &(i, j, m) in triples {
        out.push_str(&format!("{i},{j},{}\n", csv_float(m)));
    }
    out
}

fn write_output(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            // CSV payloads already end with a newline.
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}

fn write_plot(
    cli: &Cli,
    build: impl FnOnce(&mut plot::Plot) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let Some(path) = &cli.plot else {
        return Ok(());
    };
    let mut p = plot::Plot::new();
    build(&mut p)?;
    if p.is_empty() {
        return Err(CliError::Domain(
            "--plot needs one-dimensional data to draw".into(),
        ));
    }
    std::fs::write(path, p.render())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn require_1d(m: &DiscreteMeasure) -> Result<(), CliError> {
    if m.dim() != 1 {
        return Err(CliError::Domain(
            "--plot supports one-dimensional measures only".into(),
        ));
    }
    Ok(())
}

/// Sample a convex function on an interval for plotting.
fn curve_of(f: &ConvexFunction, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let n = 160;
    (0..=n)
        .filter_map(|i| {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            match f.evaluate(&[x]) {
                Ok(v) if v.is_finite() => Some((x, v)),
                _ => None,
            }
        })
        .collect()
}

// ---- command dispatch ------------------------------------------------------

fn run(cli: &Cli, start: std::time::Instant) -> Result<ExitCode, CliError> {
    let (name, digest, result, csv, exit): (&str, String, Value, Option<String>, ExitCode) =
        match &cli.command {
            Command::CheckOrder { mu, nu } => {
                let mu = read_measure(mu)?;
                let nu = read_measure(nu)?;
                let r = measures::check_convex_order(&mu.value, &nu.value)?;
                qlog!(1, "check-order: |mu|={} |nu|={}", mu.value.len(), nu.value.len());
                let witness = r.witness.as_ref().map(kernel_to_value);
                let csv = r
                    .witness
                    .as_ref()
                    .map(|k| triples_csv("i,j,mass", &kernel_triples(k.rows())));
                write_plot(cli, |p| {
                    require_1d(&mu.value)?;
                    p.measure("mu", &mu.value).measure("nu", &nu.value);
                    Ok(())
                })?;
                let exit = if r.ordered {
                    ExitCode::SUCCESS
                } else {
                    eprintln!("error: not in convex order");
                    ExitCode::from(1)
                };
                (
                    "check-order",
                    digest_of(&[&mu.raw, &nu.raw]),
                    json!({"ordered": r.ordered, "witness": witness}),
                    csv,
                    exit,
                )
            }
            Command::Irreducible { mu, nu } => {
                let mu = read_measure(mu)?;
                let nu = read_measure(nu)?;
                let r = measures::check_irreducible(&mu.value, &nu.value)?;
                write_plot(cli, |p| {
                    require_1d(&mu.value)?;
                    p.measure("mu", &mu.value).measure("nu", &nu.value);
                    Ok(())
                })?;
                (
                    "irreducible",
                    digest_of(&[&mu.raw, &nu.raw]),
                    json!({"irreducible": r.irreducible, "blocking_pair": r.blocking_pair}),
                    None,
                    ExitCode::SUCCESS,
                )
            }
            Command::Mcov { a, b } => {
                let a = read_measure(a)?;
                let b = read_measure(b)?;
                let r = ot::mcov(&a.value, &b.value)?;
                let csv = triples_csv("i,j,mass", &r.coupling.triples());
                write_plot(cli, |p| {
                    require_1d(&a.value)?;
                    p.measure("p", &a.value).measure("q", &b.value);
                    Ok(())
                })?;
                (
                    "mcov",
                    digest_of(&[&a.raw, &b.raw]),
                    json!({"value": r.value, "coupling": r.coupling.mass().to_rows()}),
                    Some(csv),
                    ExitCode::SUCCESS,
                )
            }
            Command::SolvePrimal { instance } => {
                let inst = read_instance(instance)?;
                let nu = inst.value.nu.as_ref().ok_or_else(|| {
                    CliError::Schema("solve-primal needs nu in the instance".into())
                })?;
                let sol = solver::solve_primal_lp(&inst.value.mu, nu, &inst.value.q)?;
                qlog!(
                    1,
                    "solve-primal: value {} with {} kernel rows",
                    sol.value,
                    sol.kernel.rows().len()
                );
                write_plot(cli, |p| {
                    require_1d(&inst.value.mu)?;
                    p.measure("mu", &inst.value.mu)
                        .measure("nu", nu)
                        .measure("q", &inst.value.q);
                    Ok(())
                })?;
                (
                    "solve-primal",
                    digest_of(&[&inst.raw]),
                    json!({"value": sol.value, "kernel": kernel_to_value(&sol.kernel)}),
                    Some(triples_csv(
                        "i,j,mass",
                        &kernel_triples(sol.kernel.rows()),
                    )),
                    ExitCode::SUCCESS,
                )
            }
            Command::SolveDual {
                instance,
                tol,
                max_iter,
            } => {
                let inst = read_instance(instance)?;
                let nu = inst.value.nu.as_ref().ok_or_else(|| {
                    CliError::Schema("solve-dual needs nu in the instance".into())
                })?;
                let cfg = inst.value.config.clone().unwrap_or_default();
                let mut dc = DualConfig::default();
                if let Some(t) = tol.or(cfg.gap_tol).or(cfg.tol) {
                    dc.gap_tol = t;
                }
                if let Some(m) = max_iter.or(cfg.max_iter) {
                    dc.max_iter = m;
                }
                let sol = solver::solve_dual(&inst.value.mu, nu, &inst.value.q, &dc)?;
                qlog!(
                    1,
                    "solve-dual: value {} gap {} after {} iterations",
                    sol.value,
                    sol.gap,
                    sol.iterations
                );
                let mut csv = String::from("y,psi\n");
                for (y, v) in sol.psi.support().iter().zip(sol.psi.values()) {
                    csv.push_str(&format!("{},{}\n", csv_float(y[0]), csv_float(*v)));
                }
                write_plot(cli, |p| {
                    require_1d(&inst.value.mu)?;
                    let pts: Vec<(f64, f64)> = sol
                        .psi
                        .support()
                        .iter()
                        .zip(sol.psi.values())
                        .map(|(y, &v)| (y[0], v))
                        .collect();
                    p.measure("mu", &inst.value.mu)
                        .measure("nu", nu)
                        .measure("q", &inst.value.q)
                        .curve("psi", pts);
                    Ok(())
                })?;
                (
                    "solve-dual",
                    digest_of(&[&inst.raw]),
                    json!({
                        "value": sol.value,
                        "gap": sol.gap,
                        "iterations": sol.iterations,
                        "psi": sol.psi.as_function(),
                    }),
                    Some(csv),
                    ExitCode::SUCCESS,
                )
            }
            Command::BuildBass { instance } => {
                let inst = read_instance(instance)?;
                let v = inst.value.potential.as_ref().ok_or_else(|| {
                    CliError::Schema("build-bass needs a potential (v_hat) in the instance".into())
                })?;
                let g = bass::generate_from_v(v, &inst.value.mu, &inst.value.q)?;
                qlog!(
                    1,
                    "build-bass: |alpha|={} |nu|={} w2_mu={:.3e}",
                    g.pair.alpha_hat.len(),
                    g.nu.len(),
                    g.pair.diagnostics.w2_mu
                );
                write_plot(cli, |p| {
                    require_1d(&inst.value.mu)?;
                    let lo = g.nu.atom(0)[0];
                    let hi = g.nu.atom(g.nu.len() - 1)[0];
                    p.measure("mu", &inst.value.mu)
                        .measure("nu", &g.nu)
                        .measure("q", &inst.value.q)
                        .curve("v_hat", curve_of(v, lo, hi));
                    Ok(())
                })?;
                (
                    "build-bass",
                    digest_of(&[&inst.raw]),
                    json!({
                        "pair": pair_to_value(&g.pair),
                        "nu": g.nu,
                        "kernel": kernel_to_value(&g.kernel),
                    }),
                    Some(triples_csv("i,j,mass", &kernel_triples(g.kernel.rows()))),
                    ExitCode::SUCCESS,
                )
            }
            Command::VerifyBass {
                pair,
                instance,
                tol,
            } => {
                let pair = read_pair(pair)?;
                let inst = read_instance(instance)?;
                let nu = inst.value.nu.as_ref().ok_or_else(|| {
                    CliError::Schema("verify-bass needs nu in the instance".into())
                })?;
                let cfg = inst.value.config.clone().unwrap_or_default();
                let tol = tol.or(cfg.tol).unwrap_or(1e-7);
                let report =
                    bass::verify_bass(&pair.value, &inst.value.mu, nu, &inst.value.q, tol)?;
                (
                    "verify-bass",
                    digest_of(&[&pair.raw, &inst.raw]),
                    serde_json::to_value(&report).expect("report serializes"),
                    None,
                    ExitCode::SUCCESS,
                )
            }
            Command::Simulate {
                pair,
                instance,
                paths,
                seed,
            } => {
                let pair = read_pair(pair)?;
                let inst = read_instance(instance)?;
                let rows = bass::simulate(&pair.value, &inst.value.q, *paths, *seed)?;
                let d = inst.value.q.dim();
                let coords = |prefix: &str| -> String {
                    if d == 1 {
                        prefix.to_string()
                    } else {
                        (0..d)
                            .map(|t| format!("{prefix}_{t}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    }
                };
                let mut csv = format!(
                    "{},{},{},{}\n",
                    coords("a"),
                    coords("z"),
                    coords("x0"),
                    coords("x1")
                );
                for r in &rows {
                    let cells: Vec<String> = r
                        .a
                        .iter()
                        .chain(&r.z)
                        .chain(&r.x0)
                        .chain(&r.x1)
                        .map(|&v| csv_float(v))
                        .collect();
                    csv.push_str(&cells.join(","));
                    csv.push('\n');
                }
                // Conditional means per distinct start point as compact
                // JSON diagnostics; the full table lives in the CSV.
                let mut groups: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
                for r in &rows {
                    match groups.iter_mut().find(|(x0, _)| x0 == &r.x0) {
                        Some((_, xs)) => xs.push(r.x1.clone()),
                        None => groups.push((r.x0.clone(), vec![r.x1.clone()])),
                    }
                }
                let cond: Vec<Value> = groups
                    .iter()
                    .map(|(x0, xs)| {
                        let n = xs.len();
                        let mean: Vec<f64> = (0..d)
                            .map(|t| xs.iter().map(|x| x[t]).sum::<f64>() / n as f64)
                            .collect();
                        json!({"x0": x0, "mean_x1": mean, "count": n})
                    })
                    .collect();
                (
                    "simulate",
                    digest_of(&[&pair.raw, &inst.raw]),
                    json!({
                        "n_paths": paths,
                        "seed": seed,
                        "conditional_means": cond,
                    }),
                    Some(csv),
                    ExitCode::SUCCESS,
                )
            }
            Command::Fixpoint {
                instance,
                tol,
                max_iter,
                pieces,
                epsilon,
                beta,
                seed,
            } => {
                let inst = read_instance(instance)?;
                let nu = inst.value.nu.as_ref().ok_or_else(|| {
                    CliError::Schema("fixpoint needs nu in the instance".into())
                })?;
                let cfg = inst.value.config.clone().unwrap_or_default();
                let mut fp = FixedPointConfig::default();
                if let Some(v) = tol.or(cfg.tol) {
                    fp.tol = v;
                }
                if let Some(v) = max_iter.or(cfg.max_iter) {
                    fp.max_iter = v;
                }
                if let Some(v) = pieces.or(cfg.pieces) {
                    fp.pieces = v;
                }
                if let Some(v) = epsilon.or(cfg.epsilon) {
                    fp.epsilon = v;
                }
                if let Some(v) = beta.or(cfg.beta) {
                    fp.beta = v;
                }
                if let Some(v) = seed.or(cfg.seed) {
                    fp.seed = v;
                }
                let r = bass::fixed_point_solve(&inst.value.mu, nu, &inst.value.q, &fp)?;
                qlog!(
                    1,
                    "fixpoint: converged={} after {} iterations (last residual {:?})",
                    r.converged,
                    r.iterations,
                    r.residuals.last()
                );
                let mut csv = String::from("iteration,residual\n");
                for (i, res) in r.residuals.iter().enumerate() {
                    csv.push_str(&format!("{i},{}\n", csv_float(*res)));
                }
                write_plot(cli, |p| {
                    let pts: Vec<(f64, f64)> = r
                        .residuals
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (i as f64, v))
                        .collect();
                    p.curve("residual", pts);
                    Ok(())
                })?;
                (
                    "fixpoint",
                    digest_of(&[&inst.raw]),
                    json!({
                        "converged": r.converged,
                        "iterations": r.iterations,
                        "residuals": r.residuals,
                        "pair": pair_to_value(&r.pair),
                    }),
                    Some(csv),
                    ExitCode::SUCCESS,
                )
            }
            Command::QuantizeGaussian { m, sigma } => {
                let q = quantize::quantize_gaussian(*m, *sigma)?;
                let args = json!({"m": m, "sigma": sigma});
                let mut csv = String::from("atom,weight\n");
                for (a, &w) in q.atoms().iter().zip(q.weights()) {
                    csv.push_str(&format!("{},{}\n", csv_float(a[0]), csv_float(w)));
                }
                write_plot(cli, |p| {
                    p.measure("q", &q);
                    Ok(())
                })?;
                (
                    "quantize-gaussian",
                    digest_of(&[&args]),
                    serde_json::to_value(&q).expect("measure serializes"),
                    Some(csv),
                    ExitCode::SUCCESS,
                )
            }
        };

    let text = match cli.format {
        Format::Json => {
            let mut envelope = RunResult::new(name, digest, result);
            if cli.timing {
                envelope.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            to_canonical_json(&envelope)
        }
        Format::Csv => {
            csv.ok_or_else(|| CliError::Schema(format!("{name} has no csv representation")))?
        }
    };
    write_output(cli, &text)?;
    Ok(exit)
}
