//! `ieoe`: run IEOE experiments from a TOML config and re-score saved results.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 estimator failure under `--fail-fast`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ieoe_core::evaluator::{ResultSet, ScoreTable};
use ieoe_core::io::{self, ExperimentConfig, Mode};
use ieoe_core::Error;

/// Output directory used when neither `--out` nor the config sets one.
const OUT_DIR_ENV: &str = "IEOE_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "ieoe-out";
const PLOT_FILE: &str = "cdf.svg";

#[derive(Parser)]
#[command(name = "ieoe", version, about = "Interpretable evaluation of off-policy estimators")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic bandit environment with known policy values.
    Synth(RunArgs),
    /// Classification data converted to bandit feedback.
    Classification(RunArgs),
    /// Logs from several policies, each held out in turn as ground truth.
    Realworld(RunArgs),
    /// Re-score an existing squared_errors.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Stop at the first estimator failure instead of flagging it.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A squared_errors.csv written by a previous run.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// AU-CDF cutoff; the 99th percentile of finite errors when omitted.
    #[arg(long)]
    z_max: Option<f64>,
    #[arg(long, default_value_t = io::config::DEFAULT_CVAR_ALPHA)]
    alpha: f64,
    /// Leave flagged runs out of the AU-CDF and the plot.
    #[arg(long)]
    exclude_flagged: bool,
    /// Defaults to the directory holding the input.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    no_plot: bool,
}

fn exit_code(e: &Error) -> u8 {
    if matches!(e, Error::EstimatorFailed { .. }) {
        4
    } else if e.is_config_error() {
        2
    } else if e.is_data_error() {
        3
    } else {
        1
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.cloned())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn print_scores(scores: &ScoreTable) {
    println!(
        "{:<12} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "estimator",
        "mean",
        "au_cdf",
        format!("cvar_{}", scores.alpha),
        "std",
        "flagged"
    );
    for r in &scores.rows {
        println!(
            "{:<12} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}",
            r.estimator, r.scores.mean, r.scores.au_cdf, r.scores.cvar, r.scores.std, r.n_flagged
        );
    }
    println!("z_max = {:e}", scores.z_max);
}

fn emit(results: &ResultSet, scores: &ScoreTable, dir: &Path, plot: bool, exclude_flagged: bool) -> Result<(), Error> {
    io::export_results(results, scores, dir)?;
    if plot {
        io::render_cdf_plot(results, scores.z_max, &dir.join(PLOT_FILE), exclude_flagged)?;
    }
    log::info!("results written to {}", dir.display());
    Ok(())
}

fn run(mode: Mode, args: RunArgs) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = io::load_config(&args.config)?;
    if cfg.mode() != mode {
        return Err(Error::Validation {
            field: "mode".into(),
            reason: format!("config describes a {} experiment, not {mode}", cfg.mode()),
        });
    }
    if args.workers == Some(0) {
        return Err(Error::Validation {
            field: "--workers".into(),
            reason: "must be >= 1".into(),
        });
    }
    if args.workers.is_some() {
        cfg.ieoe.workers = args.workers;
    }
    cfg.ieoe.fail_fast |= args.fail_fast;
    let results = io::run_experiment(&cfg)?;
    let out = &cfg.output;
    let scores = results.scores(out.z_max, out.cvar_alpha, out.exclude_flagged)?;
    let dir = out_dir(args.out, out.dir.as_ref());
    emit(&results, &scores, &dir, out.plot, out.exclude_flagged)?;
    print_scores(&scores);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    if let Some(z) = args.z_max {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Validation {
                field: "--z-max".into(),
                reason: format!("must be positive and finite, got {z}"),
            });
        }
    }
    if !(0.0..1.0).contains(&args.alpha) {
        return Err(Error::Validation {
            field: "--alpha".into(),
            reason: format!("must be in [0, 1), got {}", args.alpha),
        });
    }
    let results = io::read_squared_errors(&args.input)?;
    let scores = results.scores(args.z_max, args.alpha, args.exclude_flagged)?;
    let dir = args
        .out
        .unwrap_or_else(|| args.input.parent().map(Path::to_path_buf).unwrap_or_default());
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    emit(&results, &scores, &dir, !args.no_plot, args.exclude_flagged)?;
    print_scores(&scores);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Synth(a) => run(Mode::Synthetic, a),
        Command::Classification(a) => run(Mode::Classification, a),
        Command::Realworld(a) => run(Mode::Realworld, a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
