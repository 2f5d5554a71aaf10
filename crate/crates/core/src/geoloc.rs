//! Geometric ADoA localization: grid-initialized damped Gauss-Newton on
//! wrapped bearing differences.
//!
//! Serves two roles: the classical baseline the regressor is compared
//! against, and the imperfect labeler that replaces ground truth when
//! training from estimated positions. Anchor positions are taken as known
//! from the roster; only the client position is inferred, one snapshot at a
//! time.

use rayon::prelude::*;

use crate::features::{Dataset, FeatureVector, LabelSource, Sample};
use crate::geometry::{interior_grid, wrap_angle, AnchorRoster, Point, Room, TOL};
use crate::{Error, Result};

/// Solver knobs. Defaults keep the residual landscape's wrapped local minima
/// out of play (coarse grid) and stop refinement at sub-millimeter steps.
#[derive(Debug, Clone)]
pub struct GeoOptions {
    /// Pitch of the interior grid used to initialize refinement, meters.
    pub grid_pitch: f64,
    /// Initial Levenberg damping; x10 on a rejected step, /10 on accepted.
    pub lambda_init: f64,
    /// Iteration cap for the refinement loop.
    pub max_iters: usize,
    /// Accepted-step length below which the solver declares convergence.
    pub step_tol: f64,
    /// When set, label smoothing averages each sample's estimate with its
    /// trajectory neighbors within this window (in steps, centered).
    pub smoothing_window: Option<usize>,
}

impl Default for GeoOptions {
    fn default() -> Self {
        GeoOptions {
            grid_pitch: 0.25,
            lambda_init: 1e-3,
            max_iters: 50,
            step_tol: 1e-6,
            smoothing_window: None,
        }
    }
}

/// Output of [`localize`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEstimate {
    /// Estimated client position, always inside the room polygon.
    pub position: Point,
    /// Euclidean norm of the wrapped residual vector at `position`, radians.
    pub residual_norm: f64,
    /// Refinement iterations spent (accepted or rejected).
    pub iterations: usize,
    /// True when the last accepted step was shorter than `step_tol`.
    pub converged: bool,
    /// Roster ids that contributed residuals (reference first).
    pub used_anchors: Vec<usize>,
}

/// Per-sample labeling diagnostics, aligned with the labeled dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAudit {
    pub traj: usize,
    pub step: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// World-frame bearing from `x` to `anchor`, wrapped to (-pi, pi].
pub fn bearing(x: Point, anchor: Point) -> Result<f64> {
    let d = anchor - x;
    if d.norm() <= TOL {
        return Err(Error::Unlocalizable(format!(
            "bearing undefined: point ({}, {}) coincides with the anchor",
            x.x, x.y
        )));
    }
    Ok(wrap_angle(d.y.atan2(d.x)))
}

/// Gradient of the bearing with respect to the observer position `x`.
/// For d = anchor - x: d(theta)/dx = dy/|d|^2, d(theta)/dy = -dx/|d|^2.
fn bearing_gradient(x: Point, anchor: Point) -> Option<(f64, f64)> {
    let d = anchor - x;
    let d2 = d.dot(d);
    if d2 <= TOL * TOL {
        return None;
    }
    Some((d.y / d2, -d.x / d2))
}

fn anchor_pos(roster: &AnchorRoster, id: usize) -> Result<Point> {
    roster
        .get(id)
        .map(|a| a.position)
        .ok_or_else(|| Error::Shape(format!("anchor id {id} outside the roster")))
}

/// Anchors a feature vector constrains: the reference first, then each
/// valid slot's anchor in roster order.
fn usable_anchors(fv: &FeatureVector) -> Vec<usize> {
    let mut ids = vec![fv.ref_anchor];
    for (slot, &m) in fv.mask.iter().enumerate() {
        if m {
            ids.push(fv.slot_anchor(slot));
        }
    }
    ids
}

/// Wrapped residuals `measured - predicted` at candidate position `x`, one
/// per valid feature slot, in slot order. Sentinel slots are skipped.
pub fn adoa_residuals(x: Point, fv: &FeatureVector, roster: &AnchorRoster) -> Result<Vec<f64>> {
    if fv.n_anchors() != roster.len() {
        return Err(Error::Shape(format!(
            "feature vector spans {} anchors, roster has {}",
            fv.n_anchors(),
            roster.len()
        )));
    }
    if usable_anchors(fv).len() < 2 {
        return Err(Error::Unlocalizable(
            "need at least 2 usable anchors for ADoA residuals".into(),
        ));
    }
    let theta_ref = bearing(x, anchor_pos(roster, fv.ref_anchor)?)?;
    let mut residuals = Vec::new();
    for (slot, (&v, &m)) in fv.values.iter().zip(&fv.mask).enumerate() {
        if !m {
            continue;
        }
        let theta = bearing(x, anchor_pos(roster, fv.slot_anchor(slot))?)?;
        residuals.push(wrap_angle(v - wrap_angle(theta - theta_ref)));
    }
    Ok(residuals)
}

fn cost_at(x: Point, fv: &FeatureVector, roster: &AnchorRoster) -> Option<f64> {
    match adoa_residuals(x, fv, roster) {
        Ok(r) => Some(r.iter().map(|v| v * v).sum()),
        Err(_) => None,
    }
}

/// Residual Jacobian rows d r_j / d x. Residual is measured - predicted, so
/// each row is grad(theta_ref) - grad(theta_j). None when `x` sits on an
/// anchor.
fn residual_jacobian(
    x: Point,
    fv: &FeatureVector,
    roster: &AnchorRoster,
) -> Option<Vec<(f64, f64)>> {
    let g_ref = bearing_gradient(x, roster.get(fv.ref_anchor)?.position)?;
    let mut rows = Vec::new();
    for (slot, &m) in fv.mask.iter().enumerate() {
        if !m {
            continue;
        }
        let g = bearing_gradient(x, roster.get(fv.slot_anchor(slot))?.position)?;
        rows.push((g_ref.0 - g.0, g_ref.1 - g.1));
    }
    Some(rows)
}

fn clamp_into_room(p: Point, room: &Room) -> Point {
    if room.contains(p) {
        p
    } else {
        room.nearest_boundary_point(p)
    }
}

/// Estimates the client position from one ADoA feature vector.
///
/// Coarse grid search over the room interior picks the start; Levenberg-
/// damped Gauss-Newton refines it. Iterates leaving the polygon are clamped
/// to the nearest in-room point before evaluation, so the result is always a
/// legal label. Non-convergence is reported, not an error.
pub fn localize(
    fv: &FeatureVector,
    roster: &AnchorRoster,
    room: &Room,
    options: &GeoOptions,
) -> Result<GeoEstimate> {
    Ok(localize_traced(fv, roster, room, options)?.0)
}

/// [`localize`] plus the accepted-cost trace (sum of squared residuals at
/// the start point and after each accepted step), for convergence audits.
pub fn localize_traced(
    fv: &FeatureVector,
    roster: &AnchorRoster,
    room: &Room,
    options: &GeoOptions,
) -> Result<(GeoEstimate, Vec<f64>)> {
    let used = usable_anchors(fv);
    if used.len() < 3 {
        return Err(Error::Unlocalizable(format!(
            "need at least 3 usable anchors for a 2D fix, got {}",
            used.len()
        )));
    }
    if !(options.grid_pitch > TOL && options.lambda_init > 0.0 && options.step_tol > 0.0) {
        return Err(Error::Scenario(
            "localizer options must have positive grid pitch, damping, and step tolerance".into(),
        ));
    }

    let mut best: Option<(Point, f64)> = None;
    for &c in &interior_grid(room, options.grid_pitch) {
        if let Some(cost) = cost_at(c, fv, roster) {
            if best.map_or(true, |(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
    }
    let (mut x, mut cost) = best.ok_or_else(|| {
        Error::Unlocalizable("no usable grid start point inside the room".into())
    })?;

    let mut trace = vec![cost];
    let mut lambda = options.lambda_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iters {
        iterations += 1;
        let (r, j) = match (
            adoa_residuals(x, fv, roster),
            residual_jacobian(x, fv, roster),
        ) {
            (Ok(r), Some(j)) => (r, j),
            _ => break,
        };
        // normal equations (J^T J + lambda I) delta = -J^T r, solved 2x2
        let (mut a, mut b, mut c, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ri, (jx, jy)) in r.iter().zip(&j) {
            a += jx * jx;
            b += jx * jy;
            c += jy * jy;
            g0 += jx * ri;
            g1 += jy * ri;
        }
        let (aa, cc) = (a + lambda, c + lambda);
        let det = aa * cc - b * b;
        if det.abs() < 1e-300 || !det.is_finite() {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        }
        let dx = (-g0 * cc + g1 * b) / det;
        let dy = (g0 * b - g1 * aa) / det;
        let trial = clamp_into_room(Point::new(x.x + dx, x.y + dy), room);
        match cost_at(trial, fv, roster) {
            Some(trial_cost) if trial_cost < cost => {
                let step = trial.dist(x);
                x = trial;
                cost = trial_cost;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if step < options.step_tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
    }

    let estimate = GeoEstimate {
        position: x,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        used_anchors: used,
    };
    Ok((estimate, trace))
}

/// Relabels a dataset with geometric estimates: every label becomes the
/// [`localize`] output for that sample's features, `label_source` flips to
/// geometric, and samples the solver cannot handle are dropped. Returns the
/// per-sample diagnostics alongside, aligned with the surviving rows.
pub fn label_dataset(
    dataset: &Dataset,
    roster: &AnchorRoster,
    room: &Room,
    options: &GeoOptions,
) -> Result<(Dataset, Vec<LabelAudit>)> {
    if dataset.n_anchors != roster.len() {
        return Err(Error::Shape(format!(
            "dataset spans {} anchors, roster has {}",
            dataset.n_anchors,
            roster.len()
        )));
    }
    let results: Vec<Option<(Sample, GeoEstimate)>> = dataset
        .samples
        .par_iter()
        .map(|s| -> Result<Option<(Sample, GeoEstimate)>> {
            match localize(&s.features, roster, room, options) {
                Ok(est) => {
                    let mut labeled = s.clone();
                    labeled.label = est.position;
                    labeled.label_source = LabelSource::Geometric;
                    Ok(Some((labeled, est)))
                }
                Err(Error::Unlocalizable(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::with_capacity(results.len());
    let mut estimates = Vec::with_capacity(results.len());
    let mut dropped = dataset.dropped;
    for r in results {
        match r {
            Some((s, e)) => {
                samples.push(s);
                estimates.push(e);
            }
            None => dropped += 1,
        }
    }

    if let Some(window) = options.smoothing_window {
        smooth_labels(&mut samples, window, room);
    }

    let audits = samples
        .iter()
        .zip(&estimates)
        .map(|(s, e)| LabelAudit {
            traj: s.traj,
            step: s.step,
            residual_norm: e.residual_norm,
            converged: e.converged,
            iterations: e.iterations,
        })
        .collect();
    Ok((
        Dataset {
            samples,
            n_anchors: dataset.n_anchors,
            roster_fingerprint: dataset.roster_fingerprint.clone(),
            sigma: dataset.sigma,
            seed: dataset.seed,
            dropped,
        },
        audits,
    ))
}

/// Averages each label with its trajectory neighbors within `window` steps
/// (centered). A coarse stand-in for batch refinement: label noise shrinks
/// as more measurements enter the window. Averages that leave a non-convex
/// room are clamped back in.
fn smooth_labels(samples: &mut [Sample], window: usize, room: &Room) {
    if window < 2 {
        return;
    }
    let half = window / 2;
    let raw: Vec<(usize, usize, Point)> =
        samples.iter().map(|s| (s.traj, s.step, s.label)).collect();
    for s in samples.iter_mut() {
        let mut sum = Point::new(0.0, 0.0);
        let mut n = 0usize;
        for &(traj, step, label) in &raw {
            if traj == s.traj && step.abs_diff(s.step) <= half {
                sum = sum + label;
                n += 1;
            }
        }
        if n > 0 {
            s.label = clamp_into_room(sum * (1.0 / n as f64), room);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_dataset, compute_features, Measurement};
    use crate::geometry::{build_anchor_roster, Anchor, AnchorKind, Scenario};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn features_at(client: Point, sc: &Scenario) -> (FeatureVector, AnchorRoster) {
        let roster = build_anchor_roster(sc).unwrap();
        let readings: Vec<Option<f64>> = roster
            .iter()
            .map(|a| crate::geometry::exact_aoa(client, a, &sc.room).unwrap())
            .collect();
        let m = Measurement {
            client_truth: client,
            orientation: 0.0,
            readings,
        };
        let fv = compute_features(&m, &roster).unwrap();
        (fv, roster)
    }

    #[test]
    fn bearing_matches_axis_cases() {
        assert_abs_diff_eq!(
            bearing(Point::new(0.0, 0.0), Point::new(1.0, 0.0)).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            bearing(Point::new(0.0, 0.0), Point::new(0.0, 5.0)).unwrap(),
            FRAC_PI_2
        );
        assert_abs_diff_eq!(
            bearing(Point::new(4.0, 3.0), Point::new(-4.0, 3.0)).unwrap(),
            PI
        );
        assert!(bearing(Point::new(1.0, 1.0), Point::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn residuals_vanish_at_the_true_client() {
        let sc = Scenario::rect3();
        let client = Point::new(4.0, 6.0);
        let (fv, roster) = features_at(client, &sc);
        let r = adoa_residuals(client, &fv, &roster).unwrap();
        assert!(!r.is_empty());
        for v in &r {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        let shifted = adoa_residuals(Point::new(5.0, 6.0), &fv, &roster).unwrap();
        let norm: f64 = shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-3, "1 m offset must be visible in the residuals");
    }

    #[test]
    fn masked_slots_do_not_change_other_residuals() {
        let sc = Scenario::rect3();
        let client = Point::new(9.5, 3.5);
        let (mut fv, roster) = features_at(client, &sc);
        let full = adoa_residuals(Point::new(8.0, 4.0), &fv, &roster).unwrap();
        // knock out the second valid slot
        let victim = fv.mask.iter().position(|&m| m).unwrap();
        fv.mask[victim] = false;
        fv.values[victim] = crate::features::SENTINEL;
        let reduced = adoa_residuals(Point::new(8.0, 4.0), &fv, &roster).unwrap();
        assert_eq!(reduced.len(), full.len() - 1);
        let mut expect = full.clone();
        expect.remove(victim);
        assert_eq!(reduced, expect);
    }

    #[test]
    fn bearing_gradient_matches_finite_differences() {
        let mut rng = crate::seeding::child_rng(10, "fd", &[]);
        use rand::Rng;
        for _ in 0..100 {
            let x = Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let a = Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            if x.dist(a) < 0.1 {
                continue;
            }
            let (gx, gy) = bearing_gradient(x, a).unwrap();
            let h = 1e-6;
            let fd = |p1: Point, p2: Point| {
                wrap_angle(bearing(p1, a).unwrap() - bearing(p2, a).unwrap()) / (2.0 * h)
            };
            let fx = fd(Point::new(x.x + h, x.y), Point::new(x.x - h, x.y));
            let fy = fd(Point::new(x.x, x.y + h), Point::new(x.x, x.y - h));
            let scale = gx.abs().max(gy.abs()).max(1e-3);
            assert!(
                ((gx - fx) / scale).abs() <= 1e-6 && ((gy - fy) / scale).abs() <= 1e-6,
                "analytic ({gx}, {gy}) vs FD ({fx}, {fy})"
            );
        }
    }

    #[test]
    fn noiseless_recovery_on_a_half_meter_grid() {
        for sc in [Scenario::rect3(), Scenario::rect4(), Scenario::lroom3()] {
            let roster = build_anchor_roster(&sc).unwrap();
            let opts = GeoOptions::default();
            let clients = interior_grid(&sc.room, 0.5);
            assert!(clients.len() > 100);
            let worst = clients
                .par_iter()
                .map(|&client| {
                    let readings: Vec<Option<f64>> = roster
                        .iter()
                        .map(|a| crate::geometry::exact_aoa(client, a, &sc.room).unwrap())
                        .collect();
                    let m = Measurement {
                        client_truth: client,
                        orientation: 0.0,
                        readings,
                    };
                    let fv = compute_features(&m, &roster).unwrap();
                    let est = localize(&fv, &roster, &sc.room, &opts).unwrap();
                    est.position.dist(client)
                })
                .reduce(|| 0.0, f64::max);
            assert!(worst < 1e-3, "worst noiseless error {worst} m");
        }
    }

    #[test]
    fn accepted_costs_never_increase() {
        let sc = Scenario::lroom3();
        let roster = build_anchor_roster(&sc).unwrap();
        let ds = build_dataset(&sc, 5, 10, 5f64.to_radians(), LabelSource::Truth, 11).unwrap();
        for s in ds.samples.iter().take(30) {
            let (est, trace) =
                localize_traced(&s.features, &roster, &sc.room, &GeoOptions::default()).unwrap();
            assert!(est.residual_norm.is_finite());
            assert!(sc.room.contains(est.position));
            for w in trace.windows(2) {
                assert!(w[1] <= w[0], "accepted cost increased: {w:?}");
            }
        }
    }

    #[test]
    fn rotating_the_world_rotates_the_estimate() {
        let sc = Scenario::rect3();
        let client = Point::new(3.7, 8.1);
        let (fv, roster) = features_at(client, &sc);
        let est = localize(&fv, &roster, &sc.room, &GeoOptions::default()).unwrap();

        let alpha = 0.7f64;
        let rot = |p: Point| {
            Point::new(
                p.x * alpha.cos() - p.y * alpha.sin(),
                p.x * alpha.sin() + p.y * alpha.cos(),
            )
        };
        let room = Room::new(sc.room.vertices().iter().map(|&v| rot(v)).collect()).unwrap();
        let anchors = roster
            .iter()
            .map(|a| Anchor {
                position: rot(a.position),
                ..a.clone()
            })
            .collect();
        let roster_r = AnchorRoster::from_anchors(anchors).unwrap();
        // ADoA features are orientation-free, so the same vector applies
        let est_r = localize(&fv, &roster_r, &room, &GeoOptions::default()).unwrap();
        assert!(est_r.position.dist(rot(est.position)) < 1e-6);
        assert!(est_r.position.dist(rot(client)) < 1e-6);
    }

    #[test]
    fn too_few_usable_anchors_is_an_error() {
        let sc = Scenario::rect3();
        let (mut fv, roster) = features_at(Point::new(7.0, 5.0), &sc);
        for i in 0..fv.mask.len() {
            if i > 0 {
                fv.mask[i] = false;
                fv.values[i] = crate::features::SENTINEL;
            }
        }
        // reference + one slot = 2 usable anchors: residuals fine, fix not
        assert!(adoa_residuals(Point::new(7.0, 5.0), &fv, &roster).is_ok());
        assert!(matches!(
            localize(&fv, &roster, &sc.room, &GeoOptions::default()),
            Err(Error::Unlocalizable(_))
        ));
    }

    #[test]
    fn collinear_anchor_geometry_never_panics() {
        let room = Room::new(vec![
            Point::new(0.0, 0.0),
            Point::new(14.0, 0.0),
            Point::new(14.0, 10.0),
            Point::new(0.0, 10.0),
        ])
        .unwrap();
        let anchors: Vec<Anchor> = [2.0, 7.0, 12.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| Anchor {
                id: i,
                kind: AnchorKind::Physical,
                position: Point::new(x, 5.0),
                source_ap: i,
                generating_wall: None,
            })
            .collect();
        let roster = AnchorRoster::from_anchors(anchors).unwrap();
        // client on the same line: every bearing is 0 or pi
        let client = Point::new(4.0, 5.0);
        let readings: Vec<Option<f64>> = roster
            .iter()
            .map(|a| Some(bearing(client, a.position).unwrap()))
            .collect();
        let fv = compute_features(
            &Measurement {
                client_truth: client,
                orientation: 0.0,
                readings,
            },
            &roster,
        )
        .unwrap();
        let est = localize(&fv, &roster, &room, &GeoOptions::default()).unwrap();
        assert!(room.contains(est.position));
        assert!(est.residual_norm.is_finite());
    }

    #[test]
    fn noiseless_labels_reproduce_truth() {
        let sc = Scenario::rect3();
        let ds = build_dataset(&sc, 5, 10, 0.0, LabelSource::Truth, 3).unwrap();
        let roster = build_anchor_roster(&sc).unwrap();
        let (labeled, audits) =
            label_dataset(&ds, &roster, &sc.room, &GeoOptions::default()).unwrap();
        assert_eq!(labeled.len(), ds.len());
        assert_eq!(audits.len(), labeled.len());
        for (s, a) in labeled.samples.iter().zip(&audits) {
            assert_eq!(s.label_source, LabelSource::Geometric);
            assert!(s.label.dist(s.truth) < 1e-3);
            assert!(a.residual_norm < 1e-6);
            assert_eq!((a.traj, a.step), (s.traj, s.step));
        }
    }

    #[test]
    fn relabeling_is_idempotent() {
        let sc = Scenario::rect3();
        let ds = build_dataset(&sc, 3, 10, 5f64.to_radians(), LabelSource::Truth, 7).unwrap();
        let roster = build_anchor_roster(&sc).unwrap();
        let opts = GeoOptions::default();
        let (a, _) = label_dataset(&ds, &roster, &sc.room, &opts).unwrap();
        let (b, _) = label_dataset(&a, &roster, &sc.room, &opts).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn lroom_label_noise_sits_in_the_expected_band() {
        let sc = Scenario::lroom3();
        let ds = build_dataset(&sc, 30, 30, 5f64.to_radians(), LabelSource::Geometric, 21)
            .unwrap();
        assert!(ds.len() >= 450, "unexpected drop rate: {}", ds.dropped);
        let mut errors: Vec<f64> = ds
            .samples
            .iter()
            .map(|s| s.label.dist(s.truth))
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        assert!(
            (0.3..=1.0).contains(&median),
            "median label error {median} m outside [0.3, 1.0]"
        );
    }

    #[test]
    fn smoothing_window_tightens_labels() {
        let sc = Scenario::rect3();
        let ds = build_dataset(&sc, 10, 30, 7f64.to_radians(), LabelSource::Truth, 13).unwrap();
        let roster = build_anchor_roster(&sc).unwrap();
        let raw = label_dataset(&ds, &roster, &sc.room, &GeoOptions::default())
            .unwrap()
            .0;
        let smoothed = label_dataset(
            &ds,
            &roster,
            &sc.room,
            &GeoOptions {
                smoothing_window: Some(5),
                ..GeoOptions::default()
            },
        )
        .unwrap()
        .0;
        let mean_err = |d: &Dataset| {
            d.samples.iter().map(|s| s.label.dist(s.truth)).sum::<f64>() / d.len() as f64
        };
        for s in &smoothed.samples {
            assert!(sc.room.contains(s.label));
        }
        // averaging correlated per-step estimates must not blow errors up
        assert!(mean_err(&smoothed) < mean_err(&raw) * 1.5);
    }
}
