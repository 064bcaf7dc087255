use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odflow::exec::Execution;
use odflow::forecast::ModelSpec;
use odflow::harness::{
    generate_synthetic_city, read_report, render_markdown, run_experiment_with, write_report, write_synthetic_city,
    ExperimentConfig, HarnessError, ReportPaths, SeasonalPattern, SyntheticSpec,
};
use odflow::tessellation::{build_square_grid, load_polygon_tessellation, BBox, Tessellation};
use serde_json::json;

#[derive(Parser)]
#[command(name = "odflow", version, about = "Origin-destination flow forecasting benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run(RunArgs),
    /// Generate a synthetic city: trips.csv, truth.csv and config.json.
    Synth(SynthArgs),
    /// Check a tessellation for invalid tiles, overlaps and coverage gaps.
    ValidateTess(ValidateArgs),
    /// Re-render a saved JSON report as CSV and markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (ODFLOW_WORKERS still takes precedence).
    #[arg(long)]
    workers: Option<usize>,
    /// Forecast origins one after another on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    tiles: usize,
    #[arg(long, default_value_t = 14)]
    days: usize,
    #[arg(long, default_value_t = 3600)]
    interval: u32,
    #[arg(long, default_value_t = SeasonalPattern::default().base_max)]
    base_max: u32,
    #[arg(long, default_value_t = SeasonalPattern::default().scale_max)]
    scale_max: u32,
    #[arg(long, default_value_t = SeasonalPattern::default().noise)]
    noise: u32,
    /// Trailing days held out for testing in the generated config.
    #[arg(long, default_value_t = 3)]
    test_days: usize,
    /// Models for the generated config, as JSON model specs; defaults to MA(3) and VAR.
    #[arg(long = "model")]
    models: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// GeoJSON FeatureCollection of polygon tiles.
    #[arg(long, conflicts_with_all = ["bbox", "cell"])]
    geojson: Option<PathBuf>,
    /// Grid region as `min_lon,min_lat,max_lon,max_lat`.
    #[arg(long, requires = "cell", value_delimiter = ',', allow_hyphen_values = true)]
    bbox: Option<Vec<f64>>,
    /// Grid cell size in degrees.
    #[arg(long, requires = "bbox")]
    cell: Option<f64>,
    /// Area below which overlaps and gaps are ignored.
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Directory for the re-rendered files; defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure reported as one JSON line on stderr.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { kind: e.kind(), message: e.to_string() }
    }
}

fn fail(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into() }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::from_env(args.workers.or(cfg.workers)) };
    let report = run_experiment_with(&cfg, exec)?;
    let (dir, stem) = match (&args.out, &cfg.output) {
        (Some(d), o) => (d.clone(), o.as_ref().map_or_else(|| "report".to_string(), |o| o.stem.clone())),
        (None, Some(o)) => (cfg.resolve(&o.dir), o.stem.clone()),
        (None, None) => (cfg.base_dir.join("report"), "report".to_string()),
    };
    let paths = ReportPaths::in_dir(&dir, &stem);
    write_report(&report, &paths)?;
    print!("{}", render_markdown(&report));
    eprintln!("report written to {}", dir.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        seed: args.seed,
        n_tiles: args.tiles,
        days: args.days,
        interval_seconds: args.interval,
        pattern: SeasonalPattern { base_max: args.base_max, scale_max: args.scale_max, noise: args.noise },
    };
    let models = if args.models.is_empty() {
        vec![ModelSpec::Ma { window: 3 }, ModelSpec::Var { max_lag: 3, select_order: true, allow_ridge: false }]
    } else {
        args.models
            .iter()
            .map(|m| serde_json::from_str::<ModelSpec>(m).map_err(|e| fail("config", format!("--model {m}: {e}"))))
            .collect::<Result<_, _>>()?
    };
    let city = generate_synthetic_city(spec)?;
    let files = write_synthetic_city(&city, &args.out, args.test_days, models)?;
    let summary = json!({
        "trips": files.trips,
        "truth": files.truth,
        "config": files.config,
        "trip_count": city.trips.len(),
        "tiles": city.tessellation.len(),
        "intervals": city.truth.intervals(),
    });
    println!("{summary}");
    Ok(())
}

fn load_tessellation(args: &ValidateArgs) -> Result<Tessellation, Failure> {
    let tess = match (&args.geojson, &args.bbox, args.cell) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))?;
            load_polygon_tessellation(&text)
        }
        (None, Some(b), Some(_)) if b.len() != 4 => {
            return Err(fail("usage", format!("--bbox takes 4 comma-separated numbers, got {}", b.len())))
        }
        (None, Some(b), Some(cell)) => BBox::new(b[0], b[1], b[2], b[3]).and_then(|r| build_square_grid(r, cell)),
        _ => return Err(fail("usage", "pass --geojson PATH or --bbox and --cell")),
    };
    tess.map_err(|e| fail("tessellation", e.to_string()))
}

fn validate_tess(args: ValidateArgs) -> Result<(), Failure> {
    let tess = load_tessellation(&args)?;
    let report = tess.validate_with(args.epsilon);
    println!("{}", json!({ "tiles": tess.len(), "clean": report.is_clean(), "report": report }));
    if report.is_clean() {
        Ok(())
    } else {
        Err(fail("validation", format!("{} violation(s) found", report.violation_count())))
    }
}

fn rerender(args: ReportArgs) -> Result<(), Failure> {
    let report = read_report(&args.report)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| args.report.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = args.report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    write_report(&report, &ReportPaths::in_dir(&dir, stem))?;
    print!("{}", render_markdown(&report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::ValidateTess(a) => validate_tess(a),
        Command::Report(a) => rerender(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": { "kind": f.kind, "message": f.message } }));
            ExitCode::FAILURE
        }
    }
}
