//! Command-line front end.
//!
//! Every command reads a network file (see [`NetworkSpec`]) and writes either
//! a human-readable table or CSV with a header row. Floats in CSV carry 9
//! significant digits. Stochastic commands require `--seed`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::chain::{self, ChainState, Dynamics};
use crate::error::Error;
use crate::exact::{self, ExactConfig, DEFAULT_MAX_STATES};
use crate::experiments::{self, fmt_float};
use crate::network::{self, NetworkSpec, TargetSpec, ValidatedNetwork};
use crate::reversed;
use crate::splitting;

/// Environment variable overriding the exact-solver state limit.
pub const MAX_STATES_ENV: &str = "OVERFLOWLAB_MAX_STATES";

#[derive(Debug, Parser)]
#[command(name = "overflowlab", version, about = "Overflow probabilities in open Jackson networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print throughputs, traffic intensities and bottlenecks
    Validate(Common),
    /// Exact overflow probability from the first-passage linear system
    Exact(ExactArgs),
    /// Multilevel splitting estimate
    Split(SimArgs),
    /// Crude Monte Carlo estimate
    Mc(SimArgs),
    /// Splitting over a list of overflow levels with fitted complexity exponents
    Scaling(ScalingArgs),
    /// Subsolution residuals, reversed-kernel checks and the regeneration identity
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Network JSON file
    #[arg(long)]
    network: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write output here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TargetArgs {
    /// Comma-separated binary target vector (default: all ones)
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated start state (default: origin)
    #[arg(long)]
    x: Option<String>,
}

#[derive(Debug, Args)]
struct ExactArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long)]
    n: u32,
    /// Relative residual tolerance of the solver
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long)]
    n: u32,
    /// Splitting factor (ignored by `mc`)
    #[arg(long, default_value_t = 2)]
    r: u32,
    /// Replications
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: TargetArgs,
    /// Comma-separated increasing overflow levels
    #[arg(long, default_value = "10,15,20,25,30")]
    n_list: String,
    #[arg(long, default_value_t = 2)]
    r: u32,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Relative residual tolerance of the exact solver
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: TargetArgs,
    /// Overflow level for the regeneration identity
    #[arg(long, default_value_t = 5)]
    n: u32,
    /// Side of the state box scanned by the kernel checks
    #[arg(long = "box", default_value_t = 6)]
    box_side: u32,
}

/// Fully validated inputs shared by the commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network_path: PathBuf,
    pub network_name: String,
    pub network: ValidatedNetwork,
    pub target: TargetSpec,
    pub x0: ChainState,
    pub csv: bool,
    pub output: Option<PathBuf>,
    pub exact: ExactConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{path}: {source}")]
    Network { path: PathBuf, source: Error },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| CliError::Usage(format!("invalid {what} entry '{s}' in '{text}'"))))
        .collect()
}

fn max_states_from_env() -> Result<usize, CliError> {
    match std::env::var(MAX_STATES_ENV) {
        Ok(value) => value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{MAX_STATES_ENV}='{value}' is not a positive integer"))),
        Err(_) => Ok(DEFAULT_MAX_STATES),
    }
}

fn load(common: &Common, target: Option<&TargetArgs>, tol: f64) -> Result<RunConfig, CliError> {
    let spec = NetworkSpec::from_json_file(&common.network)?;
    let network_name = spec.name.clone().unwrap_or_else(|| {
        common.network.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let vn = network::validate(&spec)
        .map_err(|source| CliError::Network { path: common.network.clone(), source })?;
    let d = vn.dim();
    let v = match target.and_then(|t| t.target.as_deref()) {
        Some(text) => parse_list::<u8>(text, "target")?,
        None => vec![1; d],
    };
    let target_spec = vn.target_params(&v)?;
    let x0 = match target.and_then(|t| t.x.as_deref()) {
        Some(text) => ChainState(parse_list::<u32>(text, "state")?),
        None => ChainState::zeros(d),
    };
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() }.into());
    }
    if !(tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
    }
    Ok(RunConfig {
        network_path: common.network.clone(),
        network_name,
        network: vn,
        target: target_spec,
        x0,
        csv: common.format == Format::Csv,
        output: common.output.clone(),
        exact: ExactConfig { tol, max_states: max_states_from_env()?, ..ExactConfig::default() },
    })
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_validate(cfg: &RunConfig) -> String {
    let vn = &cfg.network;
    let mut out = String::new();
    if cfg.csv {
        out.push_str("station,lambda,mu,phi,rho,bottleneck\n");
        for i in 0..vn.dim() {
            let bottleneck = (vn.rho()[i] - vn.rho_star()).abs() <= network::BOTTLENECK_TIE_TOL * vn.rho_star();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                fmt_float(vn.lambda()[i]),
                fmt_float(vn.mu()[i]),
                fmt_float(vn.phi()[i]),
                fmt_float(vn.rho()[i]),
                bottleneck
            );
        }
        out.push_str("rho_star,beta\n");
        let _ = writeln!(out, "{},{}", fmt_float(vn.rho_star()), vn.beta());
    } else {
        let _ = writeln!(out, "network {} ({} stations, rates normalized)", cfg.network_name, vn.dim());
        let _ = writeln!(out, "{:>8} {:>10} {:>10} {:>10} {:>10}", "station", "lambda", "mu", "phi", "rho");
        for i in 0..vn.dim() {
            let _ = writeln!(
                out,
                "{:>8} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                i + 1,
                vn.lambda()[i],
                vn.mu()[i],
                vn.phi()[i],
                vn.rho()[i]
            );
        }
        let _ = writeln!(out, "rho* = {:.6}, beta = {}", vn.rho_star(), vn.beta());
    }
    out
}

fn cmd_exact(cfg: &RunConfig, n: u32) -> Result<String, CliError> {
    let sol = exact::overflow_probability_detailed(&cfg.network, n, cfg.target.v(), &cfg.x0, &cfg.exact)?;
    let mut out = String::new();
    if cfg.csv {
        out.push_str("n,target,x,probability,states\n");
        let _ = writeln!(
            out,
            "{},\"{}\",\"{}\",{},{}",
            n,
            join(cfg.target.v()),
            join(&cfg.x0),
            fmt_float(sol.probability),
            sol.states
        );
    } else {
        if sol.probability >= 1e-4 {
            let _ = writeln!(out, "{:.9}", sol.probability);
        } else {
            let _ = writeln!(out, "{:.8e}", sol.probability);
        }
    }
    Ok(out)
}

fn cmd_split(cfg: &RunConfig, args: &SimArgs) -> Result<String, CliError> {
    let vn = &cfg.network;
    let scheme = splitting::build_levels(vn, &cfg.target, args.n, args.r, &cfg.x0)?;
    let outcomes = experiments::with_threads(args.threads, || {
        splitting::run_replications(vn, &scheme, &cfg.x0, args.m, args.seed)
    })?;
    let values: Vec<f64> = outcomes.iter().map(|o| o.estimate).collect();
    let works: Vec<u64> = outcomes.iter().map(|o| o.work).collect();
    let stats = experiments::ReplicationStats::from_samples(&values, &works)?;
    let mean_nn = outcomes.iter().map(|o| o.terminal_count as f64).sum::<f64>() / args.m as f64;
    let mut out = String::new();
    if cfg.csv {
        out.push_str("n,r,levels,m,mean,variance,cv2,std_error,mean_Nn,mean_work,work_normalized_cv2\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            args.n,
            args.r,
            scheme.total_levels(),
            stats.m,
            fmt_float(stats.mean),
            fmt_float(stats.variance),
            fmt_float(stats.cv2),
            fmt_float(stats.std_error),
            fmt_float(mean_nn),
            fmt_float(stats.mean_work),
            fmt_float(stats.work_normalized_cv2)
        );
    } else {
        let _ = writeln!(out, "splitting n={} r={} levels={} m={}", args.n, args.r, scheme.total_levels(), stats.m);
        let _ = writeln!(out, "estimate   {:.9e} +- {:.3e} (1 s.e.)", stats.mean, stats.std_error);
        let _ = writeln!(out, "cv2        {:.6}", stats.cv2);
        let _ = writeln!(out, "mean N_n   {mean_nn:.6}");
        let _ = writeln!(out, "mean work  {:.3}", stats.mean_work);
        let _ = writeln!(out, "work*cv2   {:.6e}", stats.work_normalized_cv2);
    }
    Ok(out)
}

fn cmd_mc(cfg: &RunConfig, args: &SimArgs) -> Result<String, CliError> {
    let stats = experiments::with_threads(args.threads, || {
        experiments::naive_mc(&cfg.network, args.n, cfg.target.v(), &cfg.x0, args.m, args.seed)
    })?;
    let mut out = String::new();
    if cfg.csv {
        out.push_str("n,m,mean,variance,cv2,std_error,mean_work\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            args.n,
            stats.m,
            fmt_float(stats.mean),
            fmt_float(stats.variance),
            fmt_float(stats.cv2),
            fmt_float(stats.std_error),
            fmt_float(stats.mean_work)
        );
    } else {
        let _ = writeln!(out, "crude Monte Carlo n={} m={}", args.n, stats.m);
        let _ = writeln!(out, "estimate   {:.9e} +- {:.3e} (1 s.e.)", stats.mean, stats.std_error);
        let _ = writeln!(out, "cv2        {:.6}", stats.cv2);
        let _ = writeln!(out, "mean work  {:.3}", stats.mean_work);
    }
    Ok(out)
}

fn cmd_scaling(cfg: &RunConfig, args: &ScalingArgs) -> Result<String, CliError> {
    let n_list = parse_list::<u32>(&args.n_list, "n")?;
    let report = experiments::with_threads(args.threads, || {
        experiments::scaling_study(&cfg.network, &cfg.target, &cfg.x0, &n_list, args.r, args.m, args.seed, &cfg.exact)
    })?;
    Ok(if cfg.csv { report.to_csv() } else { report.to_table() })
}

/// Tolerances of the `check` command.
const RESIDUAL_TOL: f64 = 1e-12;
const KERNEL_TOL: f64 = 1e-12;
const REGENERATION_TOL: f64 = 1e-8;

fn box_states(d: usize, lo: u32, hi: u32) -> impl Iterator<Item = Vec<u32>> {
    let side = (hi - lo) as usize;
    let count = side.pow(d as u32);
    (0..count).map(move |mut idx| {
        let mut x = vec![0u32; d];
        for xi in x.iter_mut().rev() {
            *xi = lo + (idx % side) as u32;
            idx /= side;
        }
        x
    })
}

fn cmd_check(cfg: &RunConfig, args: &CheckArgs) -> Result<(String, bool), CliError> {
    let vn = &cfg.network;
    let d = vn.dim();
    if args.box_side < 2 {
        return Err(CliError::Usage("--box must be at least 2".into()));
    }
    let dynamics = Dynamics::new(vn);

    let mut residual_max = 0.0f64;
    for x in box_states(d, 1, args.box_side + 1) {
        let r = chain::subsolution_residual(vn, &cfg.target, &ChainState(x))?;
        residual_max = residual_max.max(r.abs());
    }

    let rev = network::validate(&reversed::reversed_network(vn))?;
    let rev_dynamics = Dynamics::new(&rev);
    let mut row_sum_err = 0.0f64;
    let mut closed_form_err = 0.0f64;
    for y in box_states(d, 0, args.box_side) {
        let row = reversed::reversed_kernel_row_with(vn, &dynamics, &ChainState(y.clone()));
        row_sum_err = row_sum_err.max((row.total() - 1.0).abs());
        for (x, p) in rev_dynamics.kernel_row(&y) {
            closed_form_err = closed_form_err.max((row.probability_to(&x) - p).abs());
        }
        for (x, p) in &row.entries {
            closed_form_err = closed_form_err.max((rev_dynamics.transition_probability(&y, x) - p).abs());
        }
    }

    let regen_x = match &cfg.x0 {
        x if !x.is_origin() => x.clone(),
        _ => {
            let first = cfg.target.v().iter().position(|&b| b == 1).expect("non-empty target");
            let mut x = ChainState::zeros(d);
            x.0[first] = 1;
            x
        }
    };
    let (lhs, rhs) = exact::regeneration_check(vn, args.n, cfg.target.v(), &regen_x, &cfg.exact)?;

    let rows = [
        ("subsolution_residual_max", residual_max, RESIDUAL_TOL),
        ("reversed_row_sum_error", row_sum_err, KERNEL_TOL),
        ("reversed_closed_form_error", closed_form_err, KERNEL_TOL),
        ("regeneration_gap", (lhs - rhs).abs(), REGENERATION_TOL),
    ];
    let all_pass = rows.iter().all(|&(_, value, tol)| value <= tol);
    let mut out = String::new();
    if cfg.csv {
        out.push_str("check,value,tolerance,pass\n");
        for (name, value, tol) in rows {
            let _ = writeln!(out, "{name},{},{},{}", fmt_float(value), fmt_float(tol), value <= tol);
        }
    } else {
        for (name, value, tol) in rows {
            let verdict = if value <= tol { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{name:<28} {value:>12.3e}  (tol {tol:.0e})  {verdict}");
        }
        let _ = writeln!(out, "regeneration at x={regen_x}, n={}: lhs {lhs:.12e}, rhs {rhs:.12e}", args.n);
    }
    Ok((out, all_pass))
}

/// Output text and exit status of a successfully parsed command.
pub struct Execution {
    pub output: String,
    pub output_path: Option<PathBuf>,
    pub success: bool,
}

/// Parses `args` and runs the command without touching stdout.
pub fn execute<I, T>(args: I) -> Result<Execution, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    let (output, success, output_path) = match cli.command {
        Command::Validate(common) => {
            let cfg = load(&common, None, 1e-12)?;
            (cmd_validate(&cfg), true, cfg.output)
        }
        Command::Exact(a) => {
            let cfg = load(&a.common, Some(&a.target), a.tol)?;
            (cmd_exact(&cfg, a.n)?, true, cfg.output)
        }
        Command::Split(a) => {
            let cfg = load(&a.common, Some(&a.target), 1e-12)?;
            (cmd_split(&cfg, &a)?, true, cfg.output)
        }
        Command::Mc(a) => {
            let cfg = load(&a.common, Some(&a.target), 1e-12)?;
            (cmd_mc(&cfg, &a)?, true, cfg.output)
        }
        Command::Scaling(a) => {
            let cfg = load(&a.common, Some(&a.target), a.tol)?;
            (cmd_scaling(&cfg, &a)?, true, cfg.output)
        }
        Command::Check(a) => {
            let cfg = load(&a.common, Some(&a.target), 1e-12)?;
            let (text, pass) = cmd_check(&cfg, &a)?;
            (text, pass, cfg.output)
        }
    };
    Ok(Execution { output, output_path, success })
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match execute(args.clone()) {
        Ok(exec) => {
            if let Some(path) = &exec.output_path {
                if let Err(e) = write_output(path, &exec.output) {
                    eprintln!("error: {e}");
                    return 1;
                }
            } else {
                print!("{}", exec.output);
            }
            if exec.success {
                0
            } else {
                1
            }
        }
        Err(CliError::Usage(msg)) => {
            // clap renders --help / --version through the error path.
            match Cli::try_parse_from(&args) {
                Err(e) if !e.use_stderr() => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprintln!("{msg}");
                    2
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
