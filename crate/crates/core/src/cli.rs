use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::combiner::Method;
use crate::data::{apply_reduction, load_csv, split_train_validation, CsvSchema, EvaluationGrid, ReductionSpec};
use crate::error::{Error, Result};
use crate::kernel::{Bandwidth, KernelConfig};
use crate::nuisance::Link;
use crate::pipeline::{estimate, PipelineConfig};
use crate::simulation::{run_simulation, Scenario, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "catefuse", version, about = "Adaptive trial/observational CATE estimation")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "CATEFUSE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate trial, OS and adaptive CATEs from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LinkArg {
    Identity,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Lasso,
    Ridge,
    Unpenalized,
}

#[derive(Debug, Clone, Args)]
struct EstimationFlags {
    /// Target population: 0 = trial, 1 = observational study.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1), env = "CATEFUSE_TARGET_Z")]
    target_z: u8,

    /// `col:<i>`, `pct:<i>` (1-based covariate index) or `pct-score`.
    #[arg(long, default_value = "pct:1", env = "CATEFUSE_REDUCTION")]
    reduction: String,

    #[arg(long, value_enum, default_value_t = LinkArg::Identity, env = "CATEFUSE_OUTCOME_LINK")]
    outcome_link: LinkArg,

    #[arg(long, value_enum, default_value_t = MethodArg::Lasso, env = "CATEFUSE_METHOD")]
    method: MethodArg,

    /// Number of log-spaced λ values below λ_max.
    #[arg(long, default_value_t = 25, env = "CATEFUSE_GRID")]
    grid: usize,

    /// Lower end of the λ grid as a fraction of λ_max.
    #[arg(long, default_value_t = 1e-3, env = "CATEFUSE_EPSILON")]
    epsilon: f64,

    /// Fixed bandwidth or `auto` for the rule of thumb.
    #[arg(long, default_value = "auto", env = "CATEFUSE_BANDWIDTH")]
    bandwidth: String,

    #[arg(long, default_value_t = 1, env = "CATEFUSE_SEED")]
    seed: u64,

    #[arg(long, env = "CATEFUSE_OUT")]
    out: PathBuf,

    /// Count `k` for an even grid, or a comma-separated list of points.
    #[arg(long, env = "CATEFUSE_EVAL_POINTS")]
    eval_points: Option<String>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, env = "CATEFUSE_DATA")]
    data: PathBuf,

    /// Fraction of each study used for training.
    #[arg(long, default_value_t = 0.2, env = "CATEFUSE_TRAIN_FRAC")]
    train_frac: f64,

    #[arg(long, default_value = "z", env = "CATEFUSE_Z_COL")]
    z_col: String,

    #[arg(long, default_value = "t", env = "CATEFUSE_T_COL")]
    t_col: String,

    #[arg(long, default_value = "y", env = "CATEFUSE_Y_COL")]
    y_col: String,

    /// Comma-separated covariate columns (default: every `x<k>` column).
    #[arg(long, env = "CATEFUSE_X_COLS")]
    x_cols: Option<String>,

    #[command(flatten)]
    flags: EstimationFlags,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, env = "CATEFUSE_N")]
    n: usize,

    #[arg(long, default_value_t = 20_000, env = "CATEFUSE_N_VALID")]
    n_valid: usize,

    #[arg(long, value_enum, default_value_t = Scenario::Correct, env = "CATEFUSE_SCENARIO")]
    scenario: Scenario,

    #[arg(long, default_value_t = 200, env = "CATEFUSE_REPS")]
    reps: usize,

    #[command(flatten)]
    flags: EstimationFlags,
}

/// Entry point of the `catefuse` binary.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            if code == EXIT_USAGE {
                println!("{}", error_line("usage", &first_line(&e.to_string())));
            }
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    if let Some(k) = cli.threads {
        if k == 0 {
            println!("{}", error_line("usage", "--threads must be at least 1"));
            return EXIT_USAGE;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let usage = matches!(e, Error::InvalidArgument(_));
            println!("{}", error_line(e.kind(), &e.to_string()));
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if usage {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string()
}

/// `{"error":"<kind>","message":"..."}` on one line.
fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message.replace('\n', " ") }).to_string()
}

fn parse_reduction(s: &str) -> Result<Option<ReductionSpec>> {
    let bad = || Error::InvalidArgument(format!("reduction '{s}' is not col:<i>, pct:<i> or pct-score"));
    if s == "pct-score" {
        return Ok(None);
    }
    let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
    let i: usize = idx.trim().parse().map_err(|_| bad())?;
    if i == 0 {
        return Err(Error::InvalidArgument("covariate indices are 1-based".into()));
    }
    match kind {
        "col" => Ok(Some(ReductionSpec::Column { index: i - 1 })),
        "pct" => Ok(Some(ReductionSpec::PercentileOfColumn { index: i - 1 })),
        _ => Err(bad()),
    }
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    if s == "auto" {
        return Ok(Bandwidth::RuleOfThumb);
    }
    let h: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bandwidth '{s}' is neither a number nor 'auto'")))?;
    if h.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidArgument(format!("bandwidth '{s}' must be positive")));
    }
    Ok(Bandwidth::Fixed(h))
}

enum EvalPoints {
    Count(usize),
    List(Vec<f64>),
}

fn parse_eval_points(s: &str) -> Result<EvalPoints> {
    let bad = || Error::InvalidArgument(format!("eval points '{s}' is neither a count nor a list"));
    if !s.contains(',') {
        if let Ok(k) = s.trim().parse::<usize>() {
            if k == 0 {
                return Err(bad());
            }
            return Ok(EvalPoints::Count(k));
        }
    }
    let values = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(EvalPoints::List(values))
}

fn pipeline_config(flags: &EstimationFlags, reduction: ReductionSpec) -> Result<PipelineConfig> {
    let mut config = PipelineConfig {
        target_z: flags.target_z,
        reduction,
        kernel: KernelConfig {
            bandwidth: parse_bandwidth(&flags.bandwidth)?,
            ..KernelConfig::default()
        },
        epsilon: flags.epsilon,
        grid_size: flags.grid,
        ..PipelineConfig::default()
    };
    config.nuisance.outcome_link = match flags.outcome_link {
        LinkArg::Identity => Link::Identity,
        LinkArg::Logit => Link::Logit,
    };
    config.combiner.method = match flags.method {
        MethodArg::Lasso => Method::Lasso,
        MethodArg::Ridge => Method::Ridge,
        MethodArg::Unpenalized => Method::Unpenalized,
    };
    config.validate()?;
    Ok(config)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::Io {
        path,
        message: e.to_string(),
    })
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let w = create(dir, name)?;
    serde_json::to_writer_pretty(w, value).map_err(|e| Error::Io {
        path: dir.join(name),
        message: e.to_string(),
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

/// Evenly spaced sample quantiles of the validation `V` for raw-column
/// reductions, `i/(k+1)` otherwise.
fn count_grid(k: usize, config: &PipelineConfig, valid: &crate::data::StudyDataset) -> Result<EvaluationGrid> {
    match config.reduction {
        ReductionSpec::Column { .. } => {
            let mut v = apply_reduction(&config.reduction, valid, valid)?;
            v.sort_by(f64::total_cmp);
            let m = v.len();
            let points = (1..=k)
                .map(|i| {
                    let pos = i as f64 / (k + 1) as f64 * (m - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(m - 1);
                    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
                })
                .collect();
            EvaluationGrid::from_values(points)
        }
        _ => EvaluationGrid::even(k),
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("--train-frac {} not in (0, 1)", args.train_frac)));
    }
    let reduction = parse_reduction(&args.flags.reduction)?;
    let eval = args.flags.eval_points.as_deref().map(parse_eval_points).transpose()?;
    let schema = CsvSchema {
        z: args.z_col.clone(),
        t: args.t_col.clone(),
        y: args.y_col.clone(),
        x: args
            .x_cols
            .as_ref()
            .map(|s| s.split(',').map(|c| c.trim().to_string()).collect()),
    };
    let data = load_csv(&args.data, &schema)?;
    data.require_both_studies()?;
    let (train, valid) = split_train_validation(&data, args.train_frac, args.flags.seed)?;

    let link = match args.flags.outcome_link {
        LinkArg::Identity => Link::Identity,
        LinkArg::Logit => Link::Logit,
    };
    let reduction = match reduction {
        Some(r) => r,
        None => ReductionSpec::fit_score(&train, link)?,
    };
    let config = pipeline_config(&args.flags, reduction)?;
    let grid = match eval {
        Some(EvalPoints::List(values)) => EvaluationGrid::new(config.reduction.dim(), values)?,
        Some(EvalPoints::Count(k)) => count_grid(k, &config, &valid)?,
        None => count_grid(99, &config, &valid)?,
    };

    let report = estimate(&train, &valid, &grid, &config)?;
    if report.separation_warning {
        log::warn!("quasi-separation detected in a logistic working model");
    }

    prepare_out(&args.flags.out)?;
    report.write_estimates(create(&args.flags.out, "estimates.csv")?)?;
    report.write_weights(create(&args.flags.out, "weights.csv")?)?;
    report.write_risk_curve(create(&args.flags.out, "risk_curve.csv")?)?;
    let mut json = report.to_json();
    json["command"] = serde_json::json!({
        "name": "estimate",
        "data": args.data,
        "schema": schema,
        "train_frac": args.train_frac,
        "seed": args.flags.seed,
        "reduction_flag": args.flags.reduction,
        "eval_points": (0..grid.len()).map(|i| grid.point(i).to_vec()).collect::<Vec<_>>(),
    });
    write_json(&args.flags.out, "run.json", &json)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let reduction = match parse_reduction(&args.flags.reduction)? {
        Some(r) => r,
        None => {
            return Err(Error::InvalidArgument(
                "pct-score is not supported by simulate; use col:<i> or pct:<i>".into(),
            ))
        }
    };
    let mut config = ScenarioConfig::new(args.scenario, args.n, args.reps, args.flags.seed);
    config.n_valid = args.n_valid;
    config.pipeline = pipeline_config(&args.flags, reduction)?;
    match args.flags.eval_points.as_deref().map(parse_eval_points).transpose()? {
        Some(EvalPoints::List(values)) => config.eval_percentiles = values,
        Some(EvalPoints::Count(k)) => config.integrated_points = k,
        None => {}
    }
    config.validate()?;

    let output = run_simulation(&config)?;
    let out = &args.flags.out;
    prepare_out(out)?;
    output.metrics.write_csv(create(out, "metrics.csv")?)?;
    output.metrics.write_failures(create(out, "failures.txt")?)?;
    output.write_per_rep(create(out, "per_rep.csv")?)?;
    output.write_risk_curves(create(out, "risk_curve.csv")?)?;
    write_json(
        out,
        "run.json",
        &serde_json::json!({
            "command": "simulate",
            "config": config,
            "failures": output.metrics.failures.len(),
            "share_lambda_smallest": output.metrics.share_lambda_smallest,
            "share_eta_all_zero": output.metrics.share_eta_all_zero,
        }),
    )
}
