//! Error metrics, statistical summaries, and scripted experiments emitting
//! plot-ready CSV bundles.
//!
//! An experiment is a product grid: noise levels x training sizes x label
//! sources x algorithms x seeds. Each cell builds its datasets from seeds
//! derived off the cell's own seed, so cells are independent, order-free,
//! and reproducible no matter how they are scheduled.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{build_dataset, LabelSource};
use crate::geoloc::{localize, GeoOptions};
use crate::geometry::{build_anchor_roster, Point, Scenario};
use crate::nn::{train, tune, TrainConfig, TuneGrid};
use crate::seeding::child_seed;
use crate::util::{fmt_f64, write_atomic};
use crate::{Error, Result};

/// Straight-line distance between an estimate and the ground truth, meters.
pub fn euclidean_error(estimate: Point, truth: Point) -> f64 {
    estimate.dist(truth)
}

/// Percentile by linear interpolation between order statistics; `q` in
/// [0, 1], input must be sorted.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Box-plot statistics over per-sample localization errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    /// The per-sample errors, sorted ascending; every statistic below is
    /// recomputable from this vector.
    pub errors: Vec<f64>,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
    pub mean: f64,
    /// Fraction of errors strictly below one meter.
    pub submeter: f64,
    pub n: usize,
}

/// Summarizes a non-empty error sample.
pub fn summarize(errors: &[f64]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::Empty("cannot summarize zero errors".into()));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::NonFinite(
            "errors must be finite and non-negative".into(),
        ));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = |q: f64| percentile(&sorted, q);
    Ok(ErrorSummary {
        p10: iqr(0.10),
        q1: iqr(0.25),
        median: iqr(0.50),
        q3: iqr(0.75),
        p90: iqr(0.90),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        submeter: sorted.iter().filter(|e| **e < 1.0).count() as f64 / sorted.len() as f64,
        n: sorted.len(),
        errors: sorted,
    })
}

impl ErrorSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Right-continuous empirical CDF as sorted (error, fraction) pairs, one
/// pair per distinct error value; the last fraction is 1.
pub fn error_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Empty("cannot build a CDF from zero errors".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match curve.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => curve.push((e, frac)),
        }
    }
    Ok(curve)
}

/// Which estimator a configuration evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Nn,
    Geo,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Nn => "nn",
            Algo::Geo => "geo",
        }
    }

    pub fn parse(s: &str) -> Result<Algo> {
        match s {
            "nn" => Ok(Algo::Nn),
            "geo" => Ok(Algo::Geo),
            other => Err(Error::Parse(format!(
                "unknown algorithm {other:?}; expected \"nn\" or \"geo\""
            ))),
        }
    }
}

/// Dataset size as trajectories x points per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub trajectories: usize,
    pub points: usize,
}

impl SizeSpec {
    pub fn n_samples(&self) -> usize {
        self.trajectories * self.points
    }
}

/// Fixed hyperparameters used when no tuning grid is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub node_factor: f64,
    pub dropout: f64,
    pub learning_rate: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            node_factor: 0.7,
            dropout: 0.05,
            learning_rate: 0.002,
        }
    }
}

/// Declarative experiment: the full product grid plus shared settings.
/// Angles are radians (files always store radians); the `scenario` path is
/// resolved against the spec file's directory when loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: String,
    pub sigmas_rad: Vec<f64>,
    /// Subset of {"nn", "geo"}; empty means an empty (but successful) run.
    pub algos: Vec<String>,
    /// Label sources for NN training: subset of {"truth", "geo"}.
    pub label_sources: Vec<String>,
    pub train_sizes: Vec<SizeSpec>,
    pub test_size: SizeSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainSpec,
    /// When present, each NN cell runs a grid search instead of `train`.
    #[serde(default)]
    pub grid: Option<TuneGrid>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        for a in &self.algos {
            Algo::parse(a)?;
        }
        let needs_nn = self.algos.iter().any(|a| a == "nn");
        if self.scenario.is_empty() {
            return Err(Error::Scenario("experiment needs a scenario path".into()));
        }
        if self.sigmas_rad.is_empty() && !self.algos.is_empty() {
            return Err(Error::Scenario("experiment needs at least one sigma".into()));
        }
        if self.sigmas_rad.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::NonFinite("sigmas must be finite and >= 0".into()));
        }
        if self.seeds.is_empty() && !self.algos.is_empty() {
            return Err(Error::Scenario("experiment needs at least one seed".into()));
        }
        if needs_nn {
            if self.label_sources.is_empty() {
                return Err(Error::Scenario(
                    "nn configurations need at least one label source".into(),
                ));
            }
            for l in &self.label_sources {
                LabelSource::parse(l)?;
            }
            if self.train_sizes.is_empty() {
                return Err(Error::Scenario(
                    "nn configurations need at least one training size".into(),
                ));
            }
        }
        let sizes_ok = self
            .train_sizes
            .iter()
            .chain(std::iter::once(&self.test_size))
            .all(|s| s.trajectories > 0 && s.points >= 2);
        if !sizes_ok {
            return Err(Error::Scenario(
                "sizes need >= 1 trajectory and >= 2 points per trajectory".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_json(&text)
    }
}

/// One cell of the product grid (before seeds are applied).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigKey {
    pub algo: Algo,
    /// NN only; the geometric baseline has no training stage.
    pub label: Option<LabelSource>,
    pub sigma: f64,
    pub train_size: Option<SizeSpec>,
}

impl ConfigKey {
    /// Filesystem-safe identifier; sigma rendered in degrees, rounded to
    /// 1e-6 deg so radian/degree round-trips cannot perturb file names.
    pub fn file_key(&self) -> String {
        let sigma_deg = fmt_f64((self.sigma.to_degrees() * 1e6).round() / 1e6);
        match (self.algo, self.label, self.train_size) {
            (Algo::Geo, _, _) => format!("geo_sig{sigma_deg}"),
            (Algo::Nn, label, size) => format!(
                "nn_{}_sig{sigma_deg}_n{}",
                label.map_or("-", |l| l.as_str()),
                size.map_or(0, |s| s.n_samples())
            ),
        }
    }
}

/// Per-sample estimate with its provenance, for overlays and error curves.
#[derive(Debug, Clone, PartialEq)]
pub struct EstRecord {
    pub traj: usize,
    pub step: usize,
    pub truth: Point,
    pub estimate: Point,
}

/// Evaluates one (configuration, seed) cell: builds the test set (and, for
/// the NN, the training set), runs the estimator, and returns the error
/// summary plus per-sample records.
pub fn evaluate_cell(
    scenario: &Scenario,
    key: &ConfigKey,
    test_size: SizeSpec,
    train_spec: TrainSpec,
    grid: Option<&TuneGrid>,
    seed: u64,
) -> Result<(ErrorSummary, Vec<EstRecord>)> {
    let test = build_dataset(
        scenario,
        test_size.trajectories,
        test_size.points,
        key.sigma,
        LabelSource::Truth,
        child_seed(seed, "test-data", &[]),
    )?;
    if test.is_empty() {
        return Err(Error::Empty("test set came up empty".into()));
    }
    let records: Vec<EstRecord> = match key.algo {
        Algo::Geo => {
            let roster = build_anchor_roster(scenario)?;
            let opts = GeoOptions::default();
            test.samples
                .par_iter()
                .map(|s| match localize(&s.features, &roster, &scenario.room, &opts) {
                    Ok(est) => Ok(Some(EstRecord {
                        traj: s.traj,
                        step: s.step,
                        truth: s.truth,
                        estimate: est.position,
                    })),
                    Err(Error::Unlocalizable(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect()
        }
        Algo::Nn => {
            let label = key.label.ok_or_else(|| {
                Error::Scenario("nn configuration without a label source".into())
            })?;
            let size = key.train_size.ok_or_else(|| {
                Error::Scenario("nn configuration without a training size".into())
            })?;
            let train_ds = build_dataset(
                scenario,
                size.trajectories,
                size.points,
                key.sigma,
                label,
                child_seed(seed, "train-data", &[]),
            )?;
            let model = match grid {
                Some(g) => tune(&train_ds, g, child_seed(seed, "tune", &[]))?.1,
                None => {
                    let config = TrainConfig::new(
                        train_spec.node_factor,
                        train_spec.dropout,
                        train_spec.learning_rate,
                        child_seed(seed, "train", &[]),
                    );
                    train(&train_ds, &config)?.0
                }
            };
            test.samples
                .iter()
                .map(|s| {
                    Ok(EstRecord {
                        traj: s.traj,
                        step: s.step,
                        truth: s.truth,
                        estimate: model.predict(&s.features)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if records.is_empty() {
        return Err(Error::Empty("no evaluable test samples".into()));
    }
    let errors: Vec<f64> = records
        .iter()
        .map(|r| euclidean_error(r.estimate, r.truth))
        .collect();
    Ok((summarize(&errors)?, records))
}

/// One summary.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub sigma_rad: f64,
    pub algo: String,
    pub label_source: String,
    pub n_train: Option<usize>,
    /// Per-seed rows carry the seed; the aggregate row carries "median".
    pub seed: Option<u64>,
    /// "ok" or the error code of the failed stage.
    pub status: String,
    pub stats: Option<ErrorSummary>,
}

fn summary_header() -> Vec<&'static str> {
    vec![
        "scenario",
        "sigma_rad",
        "algo",
        "label_source",
        "n_train",
        "seed",
        "status",
        "n",
        "p10",
        "q1",
        "median",
        "q3",
        "p90",
        "mean",
        "submeter",
        "seed_median",
    ]
}

fn summary_record(row: &SummaryRow, seed_median: bool) -> Vec<String> {
    let mut rec = vec![
        row.scenario.clone(),
        fmt_f64(row.sigma_rad),
        row.algo.clone(),
        row.label_source.clone(),
        row.n_train.map_or(String::new(), |n| n.to_string()),
        row.seed.map_or("median".to_string(), |s| s.to_string()),
        row.status.clone(),
    ];
    match &row.stats {
        Some(s) => {
            rec.push(fmt_f64(s.n as f64));
            for v in [s.p10, s.q1, s.median, s.q3, s.p90, s.mean, s.submeter] {
                rec.push(fmt_f64(v));
            }
        }
        None => rec.extend(std::iter::repeat(String::new()).take(8)),
    }
    rec.push(if seed_median { "1" } else { "0" }.to_string());
    rec
}

/// Writes rows in the bundle's summary.csv schema. The `seed_median` flag
/// column is 1 exactly on aggregate (seedless) rows.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(summary_header())
        .map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.write_record(summary_record(row, row.seed.is_none()))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Writes a CDF curve as `error_m,fraction` rows.
pub fn write_cdf_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["error_m", "fraction"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for (e, f) in curve {
        w.write_record([fmt_f64(*e), fmt_f64(*f)])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Median over seeds, field by field, of the successful summaries.
fn median_summary(summaries: &[&ErrorSummary]) -> ErrorSummary {
    let med = |f: fn(&ErrorSummary) -> f64| {
        let mut v: Vec<f64> = summaries.iter().map(|s| f(s)).collect();
        v.sort_by(f64::total_cmp);
        percentile(&v, 0.5)
    };
    ErrorSummary {
        errors: Vec::new(),
        p10: med(|s| s.p10),
        q1: med(|s| s.q1),
        median: med(|s| s.median),
        q3: med(|s| s.q3),
        p90: med(|s| s.p90),
        mean: med(|s| s.mean),
        submeter: med(|s| s.submeter),
        n: summaries.iter().map(|s| s.n).min().unwrap_or(0),
    }
}

/// Full experiment result: all summary rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
}

impl ExperimentReport {
    /// Seed-median statistics for one configuration, if it produced any.
    pub fn median_row(
        &self,
        algo: &str,
        label: Option<&str>,
        sigma: f64,
        n_train: Option<usize>,
    ) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.seed.is_none()
                && r.algo == algo
                && label.map_or(true, |l| r.label_source == l)
                && (r.sigma_rad - sigma).abs() < 1e-12
                && r.n_train == n_train
        })
    }
}

/// Enumerates the product grid in a fixed order: algorithms as listed, then
/// sigma, then (for the NN) training size and label source.
fn enumerate_configs(spec: &ExperimentSpec) -> Result<Vec<ConfigKey>> {
    let mut keys = Vec::new();
    for algo_name in &spec.algos {
        let algo = Algo::parse(algo_name)?;
        for &sigma in &spec.sigmas_rad {
            match algo {
                Algo::Geo => keys.push(ConfigKey {
                    algo,
                    label: None,
                    sigma,
                    train_size: None,
                }),
                Algo::Nn => {
                    for &size in &spec.train_sizes {
                        for label_name in &spec.label_sources {
                            keys.push(ConfigKey {
                                algo,
                                label: Some(LabelSource::parse(label_name)?),
                                sigma,
                                train_size: Some(size),
                            });
                        }
                    }
                }
            }
        }
    }
    // drop duplicates while keeping first occurrence
    let mut seen = Vec::new();
    keys.retain(|k| {
        let dup = seen.iter().any(|s| s == k);
        if !dup {
            seen.push(k.clone());
        }
        !dup
    });
    Ok(keys)
}

/// Runs every configuration x seed cell, writes the report bundle
/// (`summary.csv`, `cdf_<config>.csv`, `trajectory_<config>.csv`) into
/// `out_dir`, and returns the rows. Cell failures become rows with an error
/// status; they do not abort the experiment.
pub fn run_experiment(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    scenario_name: &str,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let keys = enumerate_configs(spec)?;
    let cells: Vec<(usize, u64)> = keys
        .iter()
        .enumerate()
        .flat_map(|(i, _)| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<std::result::Result<(ErrorSummary, Vec<EstRecord>), Error>> = cells
        .par_iter()
        .map(|&(i, seed)| {
            evaluate_cell(scenario, &keys[i], spec.test_size, spec.train, spec.grid.as_ref(), seed)
        })
        .collect();

    let mut rows = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        let mut ok: Vec<(u64, &ErrorSummary, &Vec<EstRecord>)> = Vec::new();
        for (&(ci, seed), outcome) in cells.iter().zip(&outcomes) {
            if ci != i {
                continue;
            }
            let (status, stats) = match outcome {
                Ok((summary, records)) => {
                    ok.push((seed, summary, records));
                    ("ok".to_string(), Some(summary.clone()))
                }
                Err(e) => (e.code().to_string(), None),
            };
            rows.push(SummaryRow {
                scenario: scenario_name.to_string(),
                sigma_rad: key.sigma,
                algo: key.algo.as_str().to_string(),
                label_source: key.label.map_or(String::new(), |l| l.as_str().to_string()),
                n_train: key.train_size.map(|s| s.n_samples()),
                seed: Some(seed),
                status,
                stats,
            });
        }
        if !ok.is_empty() {
            let summaries: Vec<&ErrorSummary> = ok.iter().map(|(_, s, _)| *s).collect();
            rows.push(SummaryRow {
                scenario: scenario_name.to_string(),
                sigma_rad: key.sigma,
                algo: key.algo.as_str().to_string(),
                label_source: key.label.map_or(String::new(), |l| l.as_str().to_string()),
                n_train: key.train_size.map(|s| s.n_samples()),
                seed: None,
                status: "ok".to_string(),
                stats: Some(median_summary(&summaries)),
            });

            // representative seed: the one whose median error is the middle
            // of the per-seed medians (ties to the smaller seed)
            let mut by_median: Vec<(f64, u64)> =
                ok.iter().map(|(seed, s, _)| (s.median, *seed)).collect();
            by_median.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let rep_seed = by_median[(by_median.len() - 1) / 2].1;
            let (_, rep_summary, rep_records) =
                ok.iter().find(|(s, _, _)| *s == rep_seed).expect("present");

            let cdf = error_cdf(&rep_summary.errors)?;
            write_cdf_csv(&out_dir.join(format!("cdf_{}.csv", key.file_key())), &cdf)?;

            let overlay_traj = rep_records.iter().map(|r| r.traj).min().expect("non-empty");
            let mut overlay: Vec<&EstRecord> = rep_records
                .iter()
                .filter(|r| r.traj == overlay_traj)
                .collect();
            overlay.sort_by_key(|r| r.step);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["step", "truth_x", "truth_y", "est_x", "est_y"])
                .map_err(|e| Error::Parse(e.to_string()))?;
            for r in overlay {
                w.write_record([
                    r.step.to_string(),
                    fmt_f64(r.truth.x),
                    fmt_f64(r.truth.y),
                    fmt_f64(r.estimate.x),
                    fmt_f64(r.estimate.y),
                ])
                .map_err(|e| Error::Parse(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            write_atomic(
                &out_dir.join(format!("trajectory_{}.csv", key.file_key())),
                &bytes,
            )?;
        }
    }

    write_summary_csv(&out_dir.join("summary.csv"), &rows)?;

    Ok(ExperimentReport { rows })
}

/// Loads the spec from disk (resolving the scenario path relative to the
/// spec file), runs it, and writes the bundle.
pub fn run_experiment_file(spec_path: &Path, out_dir: &Path) -> Result<ExperimentReport> {
    let spec = ExperimentSpec::load(spec_path)?;
    let scenario_path = {
        let p = Path::new(&spec.scenario);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            spec_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let scenario = Scenario::load(&scenario_path)?;
    let name = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    run_experiment(&spec, &scenario, &name, out_dir)
}
