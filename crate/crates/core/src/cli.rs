//! Command-line front end.
//!
//! Exit codes: `0` success, `1` scored architecture is infeasible, `2` input
//! parse or schema failure, `3` infeasible or out-of-space initial structure,
//! `4` too few stages for a fit comparison, `5` output or I/O failure
//! (including refusing to overwrite without `--force`).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::arch::{estimate_resources, DenseNetConfig};
use crate::entropy::network_entropies;
use crate::error::Error;
use crate::optimizer::{feasible, objective, search, ObjectiveSpec};
use crate::powerlaw::{fit_compare, stage_indices};
use crate::report::{
    entropy_csv, entropy_rows, fit_csv, fit_profile, parse_entropy_csv, trajectory_csv, RunConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE_INITIAL: i32 = 3;
pub const EXIT_TOO_FEW_ROWS: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub const BEST_ARCH_FILE: &str = "best_architecture.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ENTROPY_FILE: &str = "entropy_report.csv";
pub const FIT_FILE: &str = "fit_report.csv";

/// Budgets used by `score` when no objective file is given.
pub const DEFAULT_FLOPS_BUDGET: u64 = 10_000_000_000;
pub const DEFAULT_PARAMS_BUDGET: u64 = 40_000_000;

#[derive(Debug, Parser)]
#[command(name = "densopt", version, about = "Entropy-guided structural search for DenseNet-like networks")]
pub struct Cli {
    /// Increase output detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a structural search from a run config.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the run config.
        #[arg(long)]
        seed: Option<u64>,
        /// Scoring threads (default: available processors).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        force: bool,
        /// Log every N iterations to the trajectory.
        #[arg(long, default_value_t = 100)]
        log_stride: u64,
    },
    /// Score one architecture against an objective.
    Score {
        #[arg(long)]
        arch: PathBuf,
        /// Objective JSON; unit weights, beta 0.1, rho 20, 10 GFLOPs and 40M params when omitted.
        #[arg(long)]
        objective: Option<PathBuf>,
    },
    /// Write the entropy and fit reports of one architecture.
    FitReport {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Rank power, linear, quadratic and exponential fits of an entropy report.
    CompareFits {
        #[arg(long)]
        entropy: PathBuf,
        /// Directory for fit_report.csv; the ranking is only printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write a canonical architecture descriptor.
    Export {
        /// Architecture JSON to canonicalize.
        #[arg(long, conflicts_with = "preset")]
        arch: Option<PathBuf>,
        /// Built-in architecture: `densenet121` or `minimal`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 100)]
        num_classes: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = std::result::Result<i32, Failure>;

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn parse_failure(path: &Path, e: Error) -> Failure {
    Failure::new(EXIT_PARSE, format!("{}: {e}", path.display()))
}

fn load_arch(path: &Path) -> std::result::Result<DenseNetConfig, Failure> {
    DenseNetConfig::from_json(&read(path)?).map_err(|e| parse_failure(path, e))
}

/// Refuses to clobber existing files unless forced.
fn check_targets(paths: &[PathBuf], force: bool) -> std::result::Result<(), Failure> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Failure::new(
            EXIT_IO,
            format!("{} exists; pass --force to overwrite", p.display()),
        )),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn io_failure(e: Error) -> Failure {
    Failure::new(EXIT_IO, e.to_string())
}

fn cmd_search(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    force: bool,
    log_stride: u64,
) -> Outcome {
    let mut run = RunConfig::from_json(&read(config)?).map_err(|e| parse_failure(config, e))?;
    if let Some(seed) = seed {
        run.search.seed = seed;
    }
    if log_stride == 0 {
        return Err(Failure::new(EXIT_PARSE, "--log-stride must be >= 1"));
    }
    run.search.log_stride = log_stride;
    run.search.workers = workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);

    let targets: Vec<PathBuf> = [BEST_ARCH_FILE, TRAJECTORY_FILE, ENTROPY_FILE, FIT_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    check_targets(&targets, force)?;

    let initial = run.initial();
    let trajectory = match search(&run.space, &run.objective, &run.search, &initial) {
        Ok(t) => t,
        Err(e @ (Error::InfeasibleInitial(_) | Error::InvalidInitial(_))) => {
            return Err(Failure::new(EXIT_INFEASIBLE_INITIAL, e.to_string()))
        }
        Err(e @ Error::Config(_)) => return Err(Failure::new(EXIT_PARSE, e.to_string())),
        Err(e) => return Err(io_failure(e)),
    };
    let best = &trajectory.final_best;

    fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", out.display())))?;
    write(&targets[0], &best.config.to_json())?;
    write(&targets[1], &trajectory_csv(&trajectory.rows).map_err(io_failure)?)?;
    let rows = entropy_rows(&best.config, &best.entropy_report);
    write(&targets[2], &entropy_csv(&rows).map_err(io_failure)?)?;
    write(&targets[3], &fit_csv(&fit_profile(&best.stage_values())).map_err(io_failure)?)?;

    let resources = best.resources.unwrap_or_default();
    println!("final objective: {}", best.objective_value);
    println!("params: {}", resources.params);
    println!("flops: {}", resources.flops);
    println!(
        "evaluations: {} ({} accepted, {} prunes) in {:.2}s",
        trajectory.evaluations,
        trajectory.accepted.len(),
        trajectory.prunes_applied,
        trajectory.wall_time
    );
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_score(arch: &Path, objective_path: Option<&Path>) -> Outcome {
    let config = load_arch(arch)?;
    let stages = config.stages.len();
    let spec = match objective_path {
        Some(path) => {
            let spec: ObjectiveSpec =
                serde_json::from_str(&read(path)?).map_err(|e| parse_failure(path, e.into()))?;
            spec.resolved(stages)
        }
        None => ObjectiveSpec::with_budgets(stages, DEFAULT_FLOPS_BUDGET, DEFAULT_PARAMS_BUDGET),
    };
    let obj = objective(&config, &spec).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    let verdict = feasible(&config, &spec);

    println!("objective: {}", obj.value);
    for (i, h) in obj.stage_entropies.iter().enumerate() {
        println!("H_{}: {}", i + 1, h.value);
    }
    match obj.fit {
        Some(fit) => println!("power fit: a = {}, b = {}, S = {}", fit.a, fit.b, fit.s_score),
        None => println!("power fit: unavailable"),
    }
    if let Some(r) = verdict.resources {
        println!("params: {}", r.params);
        println!("flops: {}", r.flops);
    }
    if verdict.ok {
        println!("feasible: yes");
        Ok(EXIT_OK)
    } else {
        println!("feasible: no");
        for v in &verdict.violations {
            println!("  {v}");
        }
        Ok(EXIT_INFEASIBLE)
    }
}

fn cmd_fit_report(arch: &Path, out: &Path, force: bool) -> Outcome {
    let config = load_arch(arch)?;
    let entropies = network_entropies(&config).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    let targets = [out.join(ENTROPY_FILE), out.join(FIT_FILE)];
    check_targets(&targets, force)?;
    let values: Vec<f64> = entropies.iter().map(|h| h.value).collect();
    write(&targets[0], &entropy_csv(&entropy_rows(&config, &entropies)).map_err(io_failure)?)?;
    let fits = fit_profile(&values);
    write(&targets[1], &fit_csv(&fits).map_err(io_failure)?)?;
    for (i, v) in values.iter().enumerate() {
        println!("H_{}: {}", i + 1, v);
    }
    if let Some(power) = fits.iter().find(|f| f.family == crate::powerlaw::FitFamily::Power) {
        println!("power fit: a = {}, b = {}", power.coefficients[0], power.coefficients[1]);
    }
    Ok(EXIT_OK)
}

fn cmd_compare_fits(entropy: &Path, out: Option<&Path>, force: bool) -> Outcome {
    let rows = parse_entropy_csv(&read(entropy)?).map_err(|e| parse_failure(entropy, e))?;
    if rows.len() < 4 {
        return Err(Failure::new(
            EXIT_TOO_FEW_ROWS,
            format!("{}: {} stage rows, at least 4 are needed", entropy.display(), rows.len()),
        ));
    }
    let values: Vec<f64> = rows.iter().map(|r| r.entropy_nats).collect();
    let fits = fit_compare(&values, &stage_indices(values.len()))
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", entropy.display())))?;
    if let Some(dir) = out {
        let target = dir.join(FIT_FILE);
        check_targets(std::slice::from_ref(&target), force)?;
        write(&target, &fit_csv(&fits).map_err(io_failure)?)?;
    }
    for (rank, f) in fits.iter().enumerate() {
        println!(
            "{}. {} rmse={} sse={} r2={} adj_r2={}",
            rank + 1,
            f.family,
            f.diagnostics.rmse,
            f.diagnostics.sse,
            f.diagnostics.r_square,
            f.diagnostics.adjusted_r_square
        );
    }
    Ok(EXIT_OK)
}

fn cmd_export(arch: Option<&Path>, preset: Option<&str>, num_classes: u32, out: &Path, force: bool) -> Outcome {
    let config = match (arch, preset) {
        (Some(path), _) => load_arch(path)?,
        (None, Some("densenet121")) => DenseNetConfig::densenet121(num_classes),
        (None, Some("minimal")) => DenseNetConfig::minimal(),
        (None, Some(other)) => return Err(Failure::new(EXIT_PARSE, format!("unknown preset `{other}`"))),
        (None, None) => return Err(Failure::new(EXIT_PARSE, "one of --arch or --preset is required")),
    };
    check_targets(&[out.to_path_buf()], force)?;
    let resources = estimate_resources(&config).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    write(out, &config.to_json())?;
    println!("params: {}", resources.params);
    println!("flops: {}", resources.flops);
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Search {
            config,
            out,
            seed,
            workers,
            force,
            log_stride,
        } => cmd_search(config, out, *seed, *workers, *force, *log_stride),
        Command::Score { arch, objective } => cmd_score(arch, objective.as_deref()),
        Command::FitReport { arch, out, force } => cmd_fit_report(arch, out, *force),
        Command::CompareFits { entropy, out, force } => cmd_compare_fits(entropy, out.as_deref(), *force),
        Command::Export {
            arch,
            preset,
            num_classes,
            out,
            force,
        } => cmd_export(arch.as_deref(), preset.as_deref(), *num_classes, out, *force),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Entry point of the `densopt` binary.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_PARSE
            } else {
                EXIT_OK
            }
        }
    }
}

