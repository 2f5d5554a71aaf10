//! Command-line pipeline around the localization lab: scenario checks,
//! dataset generation, geometric labeling, network training and tuning,
//! prediction, evaluation, and scripted experiments.
//!
//! Conventions: angles are degrees on the command line and radians inside
//! every file; all file outputs are written atomically; any run is fully
//! determined by its arguments, inputs, and seed. Exit codes: 0 success,
//! 1 validation or data error (one `error: <code>: <message>` line on
//! stderr), 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adoa_core::eval::{
    error_cdf, run_experiment_file, summarize, write_cdf_csv, write_summary_csv, SummaryRow,
};
use adoa_core::features::{build_dataset, Dataset, LabelSource};
use adoa_core::geoloc::{label_dataset, localize, GeoOptions};
use adoa_core::geometry::{build_anchor_roster, Scenario};
use adoa_core::nn::{best_val_mse, train, tune, Model, TrainConfig, TuneGrid};
use adoa_core::util::{fmt_f64, write_atomic};
use adoa_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "adoa",
    version,
    about = "Angle-difference-of-arrival localization pipeline",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel stages; results are identical for any
    /// value (defaults to the number of cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scenario file and print its anchor roster size
    ScenarioValidate {
        /// Scenario JSON file
        scenario: PathBuf,
    },
    /// Generate a trajectory dataset and write it as CSV
    DatasetGen(DatasetGenArgs),
    /// Replace dataset labels with geometric least-squares estimates
    Label(LabelArgs),
    /// Train the regression network on a dataset CSV
    Train(TrainArgs),
    /// Grid-search hyperparameters and save the best configuration and model
    Tune(TuneArgs),
    /// Run a trained model over a dataset and write per-sample estimates
    Predict(PredictArgs),
    /// Evaluate a model or the geometric baseline on a test dataset
    Eval(EvalArgs),
    /// Run a declarative multi-configuration experiment
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct DatasetGenArgs {
    /// Scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// Number of random-waypoint trajectories
    #[arg(long)]
    trajectories: usize,
    /// Points sampled along each trajectory
    #[arg(long)]
    points: usize,
    /// AoA noise standard deviation, degrees
    #[arg(long, value_name = "DEG")]
    sigma_deg: f64,
    /// Label source: ground truth or the geometric localizer
    #[arg(long, default_value = "truth", value_parser = parse_labeling)]
    labeling: LabelSource,
    #[arg(long)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Scenario JSON file (supplies the anchor roster and room)
    #[arg(long)]
    scenario: PathBuf,
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path; includes labeling audit columns
    #[arg(long)]
    out: PathBuf,
    /// Average each label with its trajectory neighbors in a window of this
    /// many steps
    #[arg(long, value_name = "STEPS")]
    smoothing_window: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output model JSON path
    #[arg(long)]
    out: PathBuf,
    /// Training configuration JSON (as saved by `tune`); replaces the
    /// individual hyperparameter flags
    #[arg(long, conflicts_with_all = ["node_factor", "dropout", "learning_rate", "seed"])]
    config: Option<PathBuf>,
    /// First hidden layer width as a fraction of the input width
    #[arg(long, default_value_t = 0.7)]
    node_factor: f64,
    /// Dropout rate on hidden activations
    #[arg(long, default_value_t = 0.05)]
    dropout: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.002)]
    learning_rate: f64,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
}

#[derive(Args)]
struct TuneArgs {
    /// Training dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output directory: leaderboard.csv, best.json, model.json
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Node factors to search (default 0.6,0.7,0.8)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    node_factors: Option<Vec<f64>>,
    /// Dropout rates to search (default 0,0.05,0.1)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    dropouts: Option<Vec<f64>>,
    /// Learning rates to search (default: 1e-4 to 1e-2, ten per decade)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    learning_rates: Option<Vec<f64>>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON file
    #[arg(long)]
    model: PathBuf,
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path (per-sample estimates and errors)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Test dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output directory: summary.csv and cdf.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// What to evaluate: "nn" (needs --model) or "geo" (needs --scenario)
    #[arg(long, default_value = "nn")]
    algo: String,
    /// Model JSON file (nn only)
    #[arg(long, required_if_eq("algo", "nn"))]
    model: Option<PathBuf>,
    /// Scenario JSON file (geo only; optional name stamp otherwise)
    #[arg(long, required_if_eq("algo", "geo"))]
    scenario: Option<PathBuf>,
    /// Scenario name stamped into summary.csv (default: scenario file stem)
    #[arg(long)]
    scenario_name: Option<String>,
    /// Noise level stamped into summary.csv, degrees
    #[arg(long, value_name = "DEG")]
    sigma_deg: Option<f64>,
    /// Training-set size stamped into summary.csv
    #[arg(long)]
    n_train: Option<usize>,
    /// Seed value stamped into summary.csv
    #[arg(long)]
    seed_label: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment JSON file
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for the report bundle
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_labeling(s: &str) -> std::result::Result<LabelSource, String> {
    LabelSource::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: scenario: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        // any failure here means a pool already exists, which cannot happen
        // this early in main
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("rayon pool initialized once");
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::ScenarioValidate { scenario } => {
            let sc = Scenario::load(&scenario)?;
            let roster = build_anchor_roster(&sc)?;
            println!("anchors={}", roster.len());
            Ok(())
        }
        Command::DatasetGen(args) => dataset_gen(args),
        Command::Label(args) => label(args),
        Command::Train(args) => run_train(args),
        Command::Tune(args) => run_tune(args),
        Command::Predict(args) => predict(args),
        Command::Eval(args) => eval(args),
        Command::Experiment(args) => {
            let report = run_experiment_file(&args.spec, &args.out_dir)?;
            println!("rows={}", report.rows.len());
            Ok(())
        }
    }
}

fn dataset_gen(args: DatasetGenArgs) -> Result<()> {
    let sc = Scenario::load(&args.scenario)?;
    let ds = build_dataset(
        &sc,
        args.trajectories,
        args.points,
        args.sigma_deg.to_radians(),
        args.labeling,
        args.seed,
    )?;
    ds.write_csv(&args.out)?;
    println!("rows={} dropped={}", ds.len(), ds.dropped);
    Ok(())
}

fn label(args: LabelArgs) -> Result<()> {
    let sc = Scenario::load(&args.scenario)?;
    let roster = build_anchor_roster(&sc)?;
    let ds = Dataset::read_csv(&args.data)?;
    let options = GeoOptions {
        smoothing_window: args.smoothing_window,
        ..GeoOptions::default()
    };
    let (labeled, audits) = label_dataset(&ds, &roster, &sc.room, &options)?;
    let text = labeled.to_csv_string_with_audit(Some(&audits))?;
    write_atomic(&args.out, text.as_bytes())?;
    println!("rows={} dropped={}", labeled.len(), labeled.dropped);
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let ds = Dataset::read_csv(&args.data)?;
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Parse(format!("training config: {e}")))?
        }
        None => TrainConfig::new(
            args.node_factor,
            args.dropout,
            args.learning_rate,
            args.seed.expect("clap enforces seed without --config"),
        ),
    };
    let (model, history) = train(&ds, &config)?;
    model.save(&args.out)?;
    let (val, epoch) = best_val_mse(&history).expect("training ran at least one epoch");
    println!("val_mse={} epoch={epoch} epochs_run={}", fmt_f64(val), history.len());
    Ok(())
}

fn run_tune(args: TuneArgs) -> Result<()> {
    let ds = Dataset::read_csv(&args.data)?;
    let default = TuneGrid::default();
    let grid = TuneGrid {
        node_factors: args.node_factors.unwrap_or(default.node_factors),
        dropouts: args.dropouts.unwrap_or(default.dropouts),
        learning_rates: args.learning_rates.unwrap_or(default.learning_rates),
    };
    let (best, model, board) = tune(&ds, &grid, args.seed)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "node_factor",
        "dropout",
        "learning_rate",
        "n_input",
        "n_hidden1",
        "n_hidden2",
        "n_params",
        "val_mse",
        "best_epoch",
        "error",
    ])
    .map_err(|e| Error::Parse(e.to_string()))?;
    for e in &board {
        w.write_record([
            fmt_f64(e.node_factor),
            fmt_f64(e.dropout),
            fmt_f64(e.learning_rate),
            e.dims.n_input.to_string(),
            e.dims.n_hidden1.to_string(),
            e.dims.n_hidden2.to_string(),
            e.n_params.to_string(),
            e.val_mse.map_or(String::new(), fmt_f64),
            e.best_epoch.map_or(String::new(), |v| v.to_string()),
            e.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&args.out_dir.join("leaderboard.csv"), &bytes)?;

    let config_json = serde_json::to_string_pretty(&best)
        .map_err(|e| Error::Parse(format!("training config: {e}")))?;
    write_atomic(&args.out_dir.join("best.json"), config_json.as_bytes())?;
    model.save(&args.out_dir.join("model.json"))?;

    println!(
        "best node_factor={} dropout={} learning_rate={} cells={}",
        fmt_f64(best.node_factor),
        fmt_f64(best.dropout),
        fmt_f64(best.learning_rate),
        board.len()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let ds = Dataset::read_csv(&args.data)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["traj", "step", "truth_x", "truth_y", "pred_x", "pred_y", "error_m"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for s in &ds.samples {
        let p = model.predict(&s.features)?;
        w.write_record([
            s.traj.to_string(),
            s.step.to_string(),
            fmt_f64(s.truth.x),
            fmt_f64(s.truth.y),
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.dist(s.truth)),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&args.out, &bytes)?;
    println!("rows={}", ds.len());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    if !matches!(args.algo.as_str(), "nn" | "geo") {
        return Err(Error::Scenario(format!(
            "unknown algo {:?}; expected \"nn\" or \"geo\"",
            args.algo
        )));
    }
    let ds = Dataset::read_csv(&args.data)?;
    if ds.is_empty() {
        return Err(Error::Empty("test dataset has no samples".into()));
    }
    let (algo, label_source, errors) = match args.algo.as_str() {
        "nn" => {
            let model = Model::load(args.model.as_ref().expect("clap enforces --model"))?;
            let mut errors = Vec::with_capacity(ds.len());
            for s in &ds.samples {
                errors.push(model.predict(&s.features)?.dist(s.truth));
            }
            let label = model.meta.label_source.clone().unwrap_or_default();
            ("nn", label, errors)
        }
        "geo" => {
            let sc = Scenario::load(args.scenario.as_ref().expect("clap enforces --scenario"))?;
            let roster = build_anchor_roster(&sc)?;
            let options = GeoOptions::default();
            let mut errors = Vec::new();
            for s in &ds.samples {
                match localize(&s.features, &roster, &sc.room, &options) {
                    Ok(est) => errors.push(est.position.dist(s.truth)),
                    Err(Error::Unlocalizable(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            if errors.is_empty() {
                return Err(Error::Empty("no localizable test samples".into()));
            }
            ("geo", String::new(), errors)
        }
        _ => unreachable!("algo validated above"),
    };

    let stats = summarize(&errors)?;
    let scenario_name = args.scenario_name.unwrap_or_else(|| {
        args.scenario
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let row = SummaryRow {
        scenario: scenario_name,
        sigma_rad: args.sigma_deg.map_or(0.0, f64::to_radians),
        algo: algo.to_string(),
        label_source,
        n_train: args.n_train,
        seed: args.seed_label,
        status: "ok".to_string(),
        stats: Some(stats.clone()),
    };
    write_summary_csv(&args.out_dir.join("summary.csv"), &[row])?;
    write_cdf_csv(&args.out_dir.join("cdf.csv"), &error_cdf(&stats.errors)?)?;
    println!(
        "n={} median={} submeter={}",
        stats.n,
        fmt_f64(stats.median),
        fmt_f64(stats.submeter)
    );
    Ok(())
}
