//! Noisy client measurements, ADoA feature vectors, trajectories, datasets.
//!
//! A measurement holds one client-local angle reading per roster anchor (or a
//! validity flag when the anchor is unobservable). Features are the wrapped
//! differences against the first valid reading: the client's unknown heading
//! enters every reading identically, so it cancels in the differences. With
//! an error-free wrap, the cancellation is bit-exact whenever a common shift
//! of the readings is itself exactly representable.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geometry::{
    build_anchor_roster, exact_aoa, interior_grid, segment_blocked, wrap_angle, AnchorRoster,
    Point, Room, Scenario, TOL,
};
use crate::seeding::child_rng;
use crate::util::{fmt_f64, write_atomic};
use crate::{Error, Result};

/// Placeholder feature value for anchors without a valid reading. Lies well
/// outside the wrapped-angle range so the regressor can tell it from data;
/// the parallel mask is authoritative.
pub const SENTINEL: f64 = -10.0;

/// Optional trailing CSV columns carrying labeling diagnostics.
pub const AUDIT_COLUMNS: [&str; 3] = ["residual_norm", "converged", "iterations"];

/// One client observation: local-frame AoA per roster anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub client_truth: Point,
    /// Client heading in radians; readings are relative to it.
    pub orientation: f64,
    /// One slot per roster anchor, in roster order; `None` marks an
    /// unobservable anchor.
    pub readings: Vec<Option<f64>>,
}

/// ADoA feature vector: wrapped differences against the reference reading,
/// one slot per non-reference anchor in roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Length `n_anchors - 1`; masked slots hold [`SENTINEL`].
    pub values: Vec<f64>,
    /// True where the slot carries a real angle difference.
    pub mask: Vec<bool>,
    /// Roster id of the reference anchor (first valid in roster order).
    pub ref_anchor: usize,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_anchors(&self) -> usize {
        self.values.len() + 1
    }

    /// Roster id of the anchor behind feature slot `slot`; slots skip the
    /// reference anchor.
    pub fn slot_anchor(&self, slot: usize) -> usize {
        if slot < self.ref_anchor {
            slot
        } else {
            slot + 1
        }
    }
}

/// Synthesizes one measurement: exact AoA per anchor, converted to the
/// client-local frame, plus independent Gaussian noise, wrapped. Unobservable
/// anchors come back invalid.
pub fn synth_measurement(
    client: Point,
    orientation: f64,
    roster: &AnchorRoster,
    room: &Room,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Measurement> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::NonFinite(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if !orientation.is_finite() {
        return Err(Error::NonFinite(format!(
            "orientation must be finite, got {orientation}"
        )));
    }
    let noise = Normal::new(0.0, sigma)
        .map_err(|e| Error::NonFinite(format!("noise distribution: {e}")))?;
    let mut readings = Vec::with_capacity(roster.len());
    for anchor in roster.iter() {
        let reading = match exact_aoa(client, anchor, room)? {
            Some(theta) => Some(wrap_angle(theta - orientation + noise.sample(rng))),
            None => None,
        };
        readings.push(reading);
    }
    Ok(Measurement {
        client_truth: client,
        orientation,
        readings,
    })
}

/// Computes the ADoA feature vector of a measurement. The reference is the
/// first valid reading in roster order; every other slot gets the wrapped
/// difference against it, or the sentinel when invalid. Never reads
/// `m.orientation`: heading already cancelled in the differences.
pub fn compute_features(m: &Measurement, roster: &AnchorRoster) -> Result<FeatureVector> {
    if m.readings.len() != roster.len() {
        return Err(Error::Shape(format!(
            "measurement has {} reading slots but the roster has {} anchors",
            m.readings.len(),
            roster.len()
        )));
    }
    let n_valid = m.readings.iter().filter(|r| r.is_some()).count();
    if n_valid < 2 {
        return Err(Error::Unlocalizable(format!(
            "unlocalizable sample: {n_valid} valid reading(s), need at least 2"
        )));
    }
    let ref_anchor = m
        .readings
        .iter()
        .position(|r| r.is_some())
        .expect("n_valid >= 2");
    let aoa_ref = m.readings[ref_anchor].expect("reference is valid");
    let mut values = Vec::with_capacity(m.readings.len() - 1);
    let mut mask = Vec::with_capacity(m.readings.len() - 1);
    for (i, reading) in m.readings.iter().enumerate() {
        if i == ref_anchor {
            continue;
        }
        match reading {
            Some(aoa) => {
                values.push(wrap_angle(aoa - aoa_ref));
                mask.push(true);
            }
            None => {
                values.push(SENTINEL);
                mask.push(false);
            }
        }
    }
    Ok(FeatureVector {
        values,
        mask,
        ref_anchor,
    })
}

fn interior_fallback_point(room: &Room) -> Result<Point> {
    let centroid = room.centroid();
    if room.strictly_inside(centroid) {
        return Ok(centroid);
    }
    let (min, max) = room.bbox();
    let mut pitch = (max.x - min.x).max(max.y - min.y) / 4.0;
    for _ in 0..12 {
        if let Some(&p) = interior_grid(room, pitch).first() {
            return Ok(p);
        }
        pitch /= 2.0;
    }
    Err(Error::Scenario(
        "room interior too thin to place trajectory waypoints".into(),
    ))
}

fn sample_waypoint(room: &Room, prev: Option<Point>, rng: &mut impl Rng) -> Result<Point> {
    let (min, max) = room.bbox();
    for _ in 0..1000 {
        let c = Point::new(
            rng.random_range(min.x..=max.x),
            rng.random_range(min.y..=max.y),
        );
        if room.strictly_inside(c) && prev.map_or(true, |p| !segment_blocked(p, c, room)) {
            return Ok(c);
        }
    }
    // bounded fallback: a short leg toward the centroid, or standing still
    match prev {
        Some(p) => {
            let mid = p + (room.centroid() - p) * 0.5;
            if room.strictly_inside(mid) && !segment_blocked(p, mid, room) {
                Ok(mid)
            } else {
                Ok(p)
            }
        }
        None => interior_fallback_point(room),
    }
}

/// Random-waypoint trajectory: waypoints drawn uniformly in the interior,
/// legs resampled until they stay inside the polygon, then `n_points`
/// positions at equal arc-length spacing along the polyline.
pub fn generate_trajectory(
    room: &Room,
    n_points: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Point>> {
    if n_points < 2 {
        return Err(Error::Empty(format!(
            "a trajectory needs at least 2 points, got {n_points}"
        )));
    }
    let n_waypoints = (n_points / 10 + 1).max(2);
    let mut waypoints: Vec<Point> = Vec::with_capacity(n_waypoints);
    for _ in 0..n_waypoints {
        let prev = waypoints.last().copied();
        waypoints.push(sample_waypoint(room, prev, rng)?);
    }
    let mut cum = Vec::with_capacity(n_waypoints);
    cum.push(0.0);
    for i in 1..waypoints.len() {
        cum.push(cum[i - 1] + waypoints[i - 1].dist(waypoints[i]));
    }
    let total = *cum.last().expect("non-empty");
    if total <= TOL {
        return Ok(vec![waypoints[0]; n_points]);
    }
    let mut points = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let s = total * k as f64 / (n_points - 1) as f64;
        let next = cum.partition_point(|&c| c <= s).min(waypoints.len() - 1);
        let i = next - 1;
        let leg = cum[next] - cum[i];
        let t = if leg > 0.0 {
            ((s - cum[i]) / leg).clamp(0.0, 1.0)
        } else {
            0.0
        };
        points.push(waypoints[i] + (waypoints[next] - waypoints[i]) * t);
    }
    Ok(points)
}

/// Where a sample's position label comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// Ground-truth simulator position.
    Truth,
    /// Geometric least-squares estimate (imperfect labels).
    Geometric,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Truth => "truth",
            LabelSource::Geometric => "geo",
        }
    }

    pub fn parse(s: &str) -> Result<LabelSource> {
        match s {
            "truth" => Ok(LabelSource::Truth),
            "geo" => Ok(LabelSource::Geometric),
            other => Err(Error::Parse(format!(
                "unknown label source {other:?}; expected \"truth\" or \"geo\""
            ))),
        }
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub traj: usize,
    pub step: usize,
    pub truth: Point,
    pub label: Point,
    pub label_source: LabelSource,
    pub features: FeatureVector,
}

/// A set of samples over a fixed anchor roster.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Roster size the features were computed against (feature width + 1).
    pub n_anchors: usize,
    /// Roster digest; `None` for datasets read back from CSV.
    pub roster_fingerprint: Option<String>,
    /// Noise level the measurements were synthesized with, when known.
    pub sigma: Option<f64>,
    /// Base seed the dataset was synthesized with, when known.
    pub seed: Option<u64>,
    /// Samples dropped during synthesis or labeling.
    pub dropped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct trajectory ids, ascending.
    pub fn trajectory_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.traj).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Builds a dataset: `n_trajectories` random-waypoint paths with
/// `points_per_trajectory` positions each, one measurement per position with
/// a fresh uniform heading, labeled by ground truth or by the geometric
/// localizer. Samples that cannot produce features (or geometric labels) are
/// dropped; more than 50% drops is an error.
pub fn build_dataset(
    scenario: &Scenario,
    n_trajectories: usize,
    points_per_trajectory: usize,
    sigma: f64,
    labeling: LabelSource,
    seed: u64,
) -> Result<Dataset> {
    let roster = build_anchor_roster(scenario)?;
    let per_traj: Vec<(Vec<Sample>, usize)> = (0..n_trajectories)
        .into_par_iter()
        .map(|t| -> Result<(Vec<Sample>, usize)> {
            let mut rng = child_rng(seed, "traj", &[t as u64]);
            let points = generate_trajectory(&scenario.room, points_per_trajectory, &mut rng)?;
            let mut samples = Vec::with_capacity(points.len());
            let mut dropped = 0usize;
            for (step, &p) in points.iter().enumerate() {
                let orientation = rng.random_range(0.0..TAU);
                let m = synth_measurement(p, orientation, &roster, &scenario.room, sigma, &mut rng)?;
                match compute_features(&m, &roster) {
                    Ok(features) => samples.push(Sample {
                        traj: t,
                        step,
                        truth: p,
                        label: p,
                        label_source: LabelSource::Truth,
                        features,
                    }),
                    Err(Error::Unlocalizable(_)) => dropped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((samples, dropped))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for (s, d) in per_traj {
        samples.extend(s);
        dropped += d;
    }
    let dataset = Dataset {
        samples,
        n_anchors: roster.len(),
        roster_fingerprint: Some(roster.fingerprint()),
        sigma: Some(sigma),
        seed: Some(seed),
        dropped,
    };
    let planned = n_trajectories * points_per_trajectory;
    let dataset = match labeling {
        LabelSource::Truth => dataset,
        LabelSource::Geometric => {
            crate::geoloc::label_dataset(
                &dataset,
                &roster,
                &scenario.room,
                &crate::geoloc::GeoOptions::default(),
            )?
            .0
        }
    };
    if planned > 0 && dataset.dropped * 2 > planned {
        return Err(Error::Dataset(format!(
            "dropped {} of {planned} samples; the scenario/noise combination is unusable",
            dataset.dropped
        )));
    }
    Ok(dataset)
}

impl Dataset {
    /// CSV serialization with a fixed schema:
    /// `traj,step,truth_x,truth_y,label_x,label_y,label_source,ref_anchor,`
    /// `adoa_0..adoa_{n-2},mask_0..mask_{n-2}`. Floats use the shortest
    /// round-trip form, so identical datasets serialize byte-identically.
    pub fn to_csv_string(&self) -> Result<String> {
        self.to_csv_string_with_audit(None)
    }

    /// Like [`Dataset::to_csv_string`], optionally appending the labeling
    /// audit columns `residual_norm,converged,iterations` (one audit entry
    /// per sample, in order).
    pub fn to_csv_string_with_audit(
        &self,
        audit: Option<&[crate::geoloc::LabelAudit]>,
    ) -> Result<String> {
        let width = self.n_anchors.checked_sub(1).ok_or_else(|| {
            Error::Dataset("dataset needs at least one anchor".into())
        })?;
        if let Some(a) = audit {
            if a.len() != self.samples.len() {
                return Err(Error::Shape(format!(
                    "{} audit entries for {} samples",
                    a.len(),
                    self.samples.len()
                )));
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "traj",
            "step",
            "truth_x",
            "truth_y",
            "label_x",
            "label_y",
            "label_source",
            "ref_anchor",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..width).map(|i| format!("adoa_{i}")));
        header.extend((0..width).map(|i| format!("mask_{i}")));
        if audit.is_some() {
            header.extend(AUDIT_COLUMNS.iter().map(|s| s.to_string()));
        }
        w.write_record(&header).map_err(csv_err)?;
        for (row, s) in self.samples.iter().enumerate() {
            if s.features.values.len() != width || s.features.mask.len() != width {
                return Err(Error::Shape(format!(
                    "sample {row} has {} feature slots, dataset expects {width}",
                    s.features.values.len()
                )));
            }
            let mut rec: Vec<String> = vec![
                s.traj.to_string(),
                s.step.to_string(),
                fmt_f64(s.truth.x),
                fmt_f64(s.truth.y),
                fmt_f64(s.label.x),
                fmt_f64(s.label.y),
                s.label_source.as_str().to_string(),
                s.features.ref_anchor.to_string(),
            ];
            rec.extend(s.features.values.iter().map(|v| fmt_f64(*v)));
            rec.extend(
                s.features
                    .mask
                    .iter()
                    .map(|m| if *m { "1".to_string() } else { "0".to_string() }),
            );
            if let Some(a) = audit {
                rec.push(fmt_f64(a[row].residual_norm));
                rec.push(if a[row].converged { "1" } else { "0" }.to_string());
                rec.push(a[row].iterations.to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string()?.as_bytes())
    }

    pub fn from_csv_string(text: &str) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = r.headers().map_err(csv_err)?.clone();
        let fixed = [
            "traj",
            "step",
            "truth_x",
            "truth_y",
            "label_x",
            "label_y",
            "label_source",
            "ref_anchor",
        ];
        if headers.len() < fixed.len() + 2 {
            return Err(Error::Parse("dataset CSV header too short".into()));
        }
        for (i, name) in fixed.iter().enumerate() {
            if &headers[i] != *name {
                return Err(Error::Parse(format!(
                    "dataset CSV column {i} is {:?}, expected {name:?}",
                    &headers[i]
                )));
            }
        }
        // labeled files may end with audit columns; they are not features
        let has_audit = headers.len() >= fixed.len() + AUDIT_COLUMNS.len()
            && AUDIT_COLUMNS
                .iter()
                .rev()
                .zip((0..headers.len()).rev())
                .all(|(name, i)| &headers[i] == *name);
        let feature_cols = headers.len() - fixed.len() - if has_audit { 3 } else { 0 };
        let width = feature_cols / 2;
        if feature_cols != 2 * width {
            return Err(Error::Parse(
                "dataset CSV must carry matching adoa_*/mask_* columns".into(),
            ));
        }
        for i in 0..width {
            if headers[fixed.len() + i] != format!("adoa_{i}")
                || headers[fixed.len() + width + i] != format!("mask_{i}")
            {
                return Err(Error::Parse(format!(
                    "dataset CSV feature columns malformed around slot {i}"
                )));
            }
        }
        let mut samples = Vec::new();
        for (row_idx, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != headers.len() {
                return Err(Error::Parse(format!(
                    "dataset CSV row {row_idx} has {} fields ({} expected)",
                    rec.len(),
                    headers.len()
                )));
            }
            let field = |i: usize| -> &str { rec.get(i).unwrap_or("") };
            let parse_f = |i: usize| -> Result<f64> {
                field(i)
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {row_idx} col {i}: {e}")))
            };
            let parse_u = |i: usize| -> Result<usize> {
                field(i)
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {row_idx} col {i}: {e}")))
            };
            let mut values = Vec::with_capacity(width);
            let mut mask = Vec::with_capacity(width);
            for i in 0..width {
                values.push(parse_f(fixed.len() + i)?);
                let m = match field(fixed.len() + width + i) {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Parse(format!(
                            "row {row_idx} mask_{i}: {other:?} is not 0/1"
                        )))
                    }
                };
                mask.push(m);
            }
            for i in 0..width {
                if !mask[i] && values[i] != SENTINEL {
                    return Err(Error::Parse(format!(
                        "row {row_idx} adoa_{i}: masked slot must hold the sentinel {SENTINEL}"
                    )));
                }
                if mask[i] && !values[i].is_finite() {
                    return Err(Error::Parse(format!(
                        "row {row_idx} adoa_{i}: non-finite feature"
                    )));
                }
            }
            let ref_anchor = parse_u(7)?;
            if ref_anchor > width {
                return Err(Error::Parse(format!(
                    "row {row_idx}: ref_anchor {ref_anchor} out of range for {} anchors",
                    width + 1
                )));
            }
            samples.push(Sample {
                traj: parse_u(0)?,
                step: parse_u(1)?,
                truth: Point::new(parse_f(2)?, parse_f(3)?),
                label: Point::new(parse_f(4)?, parse_f(5)?),
                label_source: LabelSource::parse(field(6))?,
                features: FeatureVector {
                    values,
                    mask,
                    ref_anchor,
                },
            });
        }
        Ok(Dataset {
            samples,
            n_anchors: width + 1,
            roster_fingerprint: None,
            sigma: None,
            seed: None,
            dropped: 0,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv_string(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}
