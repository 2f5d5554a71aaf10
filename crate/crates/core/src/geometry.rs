//! Rooms, anchors, and exact angle-of-arrival.
//!
//! A room is a simple polygon with counter-clockwise vertices; wall `i` runs
//! from vertex `i` to vertex `i+1`. Each access point spawns one virtual
//! anchor per wall by mirror reflection across the wall's infinite line; a
//! virtual anchor is kept in the roster only if its first-order reflection
//! path is valid on a sufficient fraction of a probe grid over the interior.
//!
//! Invariants held throughout:
//! * all geometric predicates share the absolute tolerance [`TOL`] (meters);
//! * angles are radians in `(-pi, pi]`, wrapped by [`wrap_angle`];
//! * anchor ids equal roster positions, ordered by source AP with the
//!   physical anchor first and virtual anchors in wall order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::util::hex_bytes;
use crate::{Error, Result};

/// Absolute tolerance, in meters, for every geometric predicate in the crate
/// (containment, crossing, extent, coincidence). Room coordinates are a few
/// tens of meters, so 1e-9 m sits far below modeling error yet far above f64
/// noise at this scale.
pub const TOL: f64 = 1e-9;

/// Default fraction of probe points on which a virtual anchor's reflection
/// path must be valid for the anchor to enter the roster. Any geometrically
/// feasible reflection covers well over 1% of the rooms of interest, while an
/// infeasible one covers exactly 0%, so 1% separates the two robustly.
pub const DEFAULT_VA_COVERAGE_THRESHOLD: f64 = 0.01;

/// Default probe grid pitch in meters.
pub const DEFAULT_PROBE_GRID_M: f64 = 0.25;

/// Wraps an angle to `(-pi, pi]`.
///
/// Error-free: `%` returns the exact remainder, and the branch adjustments
/// satisfy Sterbenz's condition (`pi <= |r| < tau`), so the result is exactly
/// `theta - k*tau` for an integer `k`. Exactness is what lets ADoA features
/// cancel common angle shifts bit-for-bit instead of merely approximately.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta % TAU;
    if r > PI {
        r - TAU
    } else if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// 2D point, doubling as a 2D vector. Serializes as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` is
    /// counter-clockwise from `self`.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Point {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> [f64; 2] {
        [p.x, p.y]
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Directed segment; walls run from vertex `i` to vertex `i+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Segment {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    fn direction_unit(&self) -> Point {
        let d = self.b - self.a;
        d * (1.0 / d.norm())
    }

    /// Signed distance from `p` to the segment's infinite line; positive on
    /// the left of the a->b direction.
    pub fn signed_distance(&self, p: Point) -> f64 {
        (self.b - self.a).cross(p - self.a) / self.length()
    }

    /// Closest point on the (closed) segment to `p`.
    pub fn closest_point(&self, p: Point) -> Point {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        if len2 <= TOL * TOL {
            return self.a;
        }
        let t = ((p - self.a).dot(d) / len2).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        p.dist(self.closest_point(p))
    }
}

/// Mirror image of `p` across the infinite line through `wall`. The
/// reflection is an involution: mirroring twice returns `p`.
pub fn mirror_point(p: Point, wall: &Segment) -> Result<Point> {
    let d = wall.b - wall.a;
    let len2 = d.dot(d);
    if !(len2 > TOL * TOL) || !p.is_finite() || !wall.a.is_finite() || !wall.b.is_finite() {
        return Err(Error::Scenario(format!(
            "cannot mirror across degenerate wall ({:?} -> {:?})",
            wall.a, wall.b
        )));
    }
    let t = (p - wall.a).dot(d) / len2;
    let foot = wall.a + d * t;
    Ok(p + (foot - p) * 2.0)
}

/// Simple polygon with counter-clockwise vertices. Construction validates
/// the invariants every other operation relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    vertices: Vec<Point>,
}

impl Room {
    /// Validates and builds a room: at least 3 finite vertices, no degenerate
    /// or back-tracking walls, positive (counter-clockwise) signed area, and
    /// no contact between non-adjacent walls.
    pub fn new(vertices: Vec<Point>) -> Result<Room> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::Scenario(format!(
                "room needs at least 3 vertices, got {n}"
            )));
        }
        for v in &vertices {
            if !v.is_finite() {
                return Err(Error::Scenario("room vertex is not finite".into()));
            }
        }
        let room = Room { vertices };
        for i in 0..n {
            let w = room.wall(i);
            if w.length() <= TOL {
                return Err(Error::Scenario(format!("wall {i} is degenerate")));
            }
        }
        for i in 0..n {
            let into = room.wall((i + n - 1) % n);
            let out = room.wall(i);
            let d1 = into.b - into.a;
            let d2 = out.b - out.a;
            if d1.cross(d2).abs() <= TOL * (d1.norm() * d2.norm()) && d1.dot(d2) < 0.0 {
                return Err(Error::Scenario(format!(
                    "walls around vertex {i} fold back on themselves"
                )));
            }
        }
        if room.signed_area() <= TOL {
            return Err(Error::Scenario(
                "room vertices must wind counter-clockwise with positive area".into(),
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if seg_seg_distance(&room.wall(i), &room.wall(j)) <= TOL {
                    return Err(Error::Scenario(format!(
                        "room is not a simple polygon: walls {i} and {j} touch"
                    )));
                }
            }
        }
        Ok(room)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn n_walls(&self) -> usize {
        self.vertices.len()
    }

    pub fn wall(&self, i: usize) -> Segment {
        let n = self.vertices.len();
        Segment::new(self.vertices[i % n], self.vertices[(i + 1) % n])
    }

    pub fn walls(&self) -> impl Iterator<Item = Segment> + '_ {
        (0..self.n_walls()).map(|i| self.wall(i))
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            s += a.cross(b);
        }
        s / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let w = a.cross(b);
            cx += (a.x + b.x) * w;
            cy += (a.y + b.y) * w;
        }
        let scale = 1.0 / (6.0 * self.signed_area());
        Point::new(cx * scale, cy * scale)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bbox(&self) -> (Point, Point) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }

    /// Even-odd crossing test; only trustworthy for points farther than TOL
    /// from the boundary, which `contains`/`strictly_inside` guarantee.
    fn contains_open(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let vi = self.vertices[i];
            let vj = self.vertices[j];
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = (vj.x - vi.x) * (p.y - vi.y) / (vj.y - vi.y) + vi.x;
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Closed containment: the boundary (within TOL) counts as inside.
    pub fn contains(&self, p: Point) -> bool {
        p.is_finite() && (self.distance_to_boundary(p) <= TOL || self.contains_open(p))
    }

    /// Interior containment: farther than TOL from every wall and inside.
    pub fn strictly_inside(&self, p: Point) -> bool {
        p.is_finite() && self.distance_to_boundary(p) > TOL && self.contains_open(p)
    }

    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        self.walls()
            .map(|w| w.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Closest boundary point to `p`; used to pull escaped solver iterates
    /// back into the room.
    pub fn nearest_boundary_point(&self, p: Point) -> Point {
        let mut best = self.wall(0).closest_point(p);
        let mut best_d = p.dist(best);
        for w in self.walls().skip(1) {
            let c = w.closest_point(p);
            let d = p.dist(c);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Minimum distance between two closed segments (0 when they intersect).
fn seg_seg_distance(s: &Segment, t: &Segment) -> f64 {
    let d1 = orient(s.a, s.b, t.a);
    let d2 = orient(s.a, s.b, t.b);
    let d3 = orient(t.a, t.b, s.a);
    let d4 = orient(t.a, t.b, s.b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return 0.0;
    }
    [
        s.distance_to(t.a),
        s.distance_to(t.b),
        t.distance_to(s.a),
        t.distance_to(s.b),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// True when `wall` blocks the open segment p->q: either a strict crossing
/// (endpoints strictly on opposite sides, crossing point within the wall's
/// closed extent) or a collinear overlap of positive length. Touching a wall
/// with an endpoint never blocks.
fn wall_blocks(p: Point, q: Point, wall: &Segment) -> bool {
    let dp = wall.signed_distance(p);
    let dq = wall.signed_distance(q);
    if dp.abs() <= TOL && dq.abs() <= TOL {
        let dir = wall.direction_unit();
        let sp = (p - wall.a).dot(dir);
        let sq = (q - wall.a).dot(dir);
        let (lo, hi) = if sp <= sq { (sp, sq) } else { (sq, sp) };
        return hi.min(wall.length()) - lo.max(0.0) > TOL;
    }
    if !((dp > TOL && dq < -TOL) || (dp < -TOL && dq > TOL)) {
        return false;
    }
    let t = dp / (dp - dq);
    let c = p + (q - p) * t;
    let u = (c - wall.a).dot(wall.direction_unit());
    (-TOL..=wall.length() + TOL).contains(&u)
}

fn blocked_except(p: Point, q: Point, room: &Room, skip_wall: Option<usize>) -> bool {
    if p.dist(q) <= TOL {
        return false;
    }
    (0..room.n_walls())
        .filter(|&i| Some(i) != skip_wall)
        .any(|i| wall_blocks(p, q, &room.wall(i)))
}

/// True iff the open segment p->q strictly crosses any wall of the room.
/// Endpoint touches do not block; a degenerate segment (p == q) is free.
pub fn segment_blocked(p: Point, q: Point, room: &Room) -> bool {
    blocked_except(p, q, room, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    Physical,
    Virtual,
}

/// One roster entry: a physical AP or the mirror image of one across a wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    /// Equals the anchor's position in the roster.
    pub id: usize,
    pub kind: AnchorKind,
    pub position: Point,
    /// Index of the AP this anchor belongs to (itself, for physical ones).
    pub source_ap: usize,
    /// Wall the source AP was mirrored across; `None` for physical anchors.
    pub generating_wall: Option<usize>,
}

/// Ordered anchor list for a scenario; ids equal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRoster {
    anchors: Vec<Anchor>,
}

impl AnchorRoster {
    pub fn from_anchors(anchors: Vec<Anchor>) -> Result<AnchorRoster> {
        for (i, a) in anchors.iter().enumerate() {
            if a.id != i {
                return Err(Error::Scenario(format!(
                    "anchor id {} does not match roster position {i}",
                    a.id
                )));
            }
            if !a.position.is_finite() {
                return Err(Error::Scenario(format!("anchor {i} position is not finite")));
            }
            match a.kind {
                AnchorKind::Physical if a.generating_wall.is_some() => {
                    return Err(Error::Scenario(format!(
                        "physical anchor {i} must not name a generating wall"
                    )));
                }
                AnchorKind::Virtual if a.generating_wall.is_none() => {
                    return Err(Error::Scenario(format!(
                        "virtual anchor {i} needs a generating wall"
                    )));
                }
                _ => {}
            }
        }
        Ok(AnchorRoster { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Anchor> {
        self.anchors.get(id)
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Anchor> {
        self.anchors.iter()
    }

    /// Stable 16-hex-digit digest of the roster contents. Models record it so
    /// that a model trained for one roster refuses data from another.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"roster/v1");
        h.update((self.anchors.len() as u64).to_le_bytes());
        for a in &self.anchors {
            h.update([match a.kind {
                AnchorKind::Physical => 0u8,
                AnchorKind::Virtual => 1u8,
            }]);
            h.update(a.position.x.to_le_bytes());
            h.update(a.position.y.to_le_bytes());
            h.update((a.source_ap as u64).to_le_bytes());
            h.update(
                a.generating_wall
                    .map(|w| w as u64 + 1)
                    .unwrap_or(0)
                    .to_le_bytes(),
            );
        }
        hex_bytes(&h.finalize()[..8])
    }
}

/// First-order reflection path from `client` to the source AP of a virtual
/// anchor at `va` mirrored across wall `wall_idx`. Returns the reflection
/// point on the wall when the path is valid: client and AP strictly on the
/// same side of the wall line, reflection point within the wall's extent,
/// and both legs unobstructed (the generating wall itself is ignored).
fn va_path(client: Point, va: Point, wall_idx: usize, room: &Room) -> Result<Option<Point>> {
    let wall = room.wall(wall_idx);
    let ap = mirror_point(va, &wall)?;
    let dc = wall.signed_distance(client);
    let da = wall.signed_distance(ap);
    if dc.abs() <= TOL || da.abs() <= TOL || (dc > 0.0) != (da > 0.0) {
        return Ok(None);
    }
    let t = dc / (dc + da);
    let r = client + (va - client) * t;
    let u = (r - wall.a).dot(wall.direction_unit());
    if !(-TOL..=wall.length() + TOL).contains(&u) {
        return Ok(None);
    }
    if blocked_except(client, r, room, Some(wall_idx))
        || blocked_except(r, ap, room, Some(wall_idx))
    {
        return Ok(None);
    }
    Ok(Some(r))
}

/// Exact angle of arrival at `client` from `anchor`, or `None` when the
/// anchor is not observable there: blocked line of sight for a physical
/// anchor, invalid reflection path for a virtual one, or a client sitting
/// exactly on the anchor. Errors if the client is outside the room.
pub fn exact_aoa(client: Point, anchor: &Anchor, room: &Room) -> Result<Option<f64>> {
    if !room.contains(client) {
        return Err(Error::OutsideRoom(client.x, client.y));
    }
    if client.dist(anchor.position) <= TOL {
        return Ok(None);
    }
    let observable = match anchor.kind {
        AnchorKind::Physical => !segment_blocked(client, anchor.position, room),
        AnchorKind::Virtual => {
            let wall_idx = anchor.generating_wall.ok_or_else(|| {
                Error::Scenario(format!("virtual anchor {} lacks a generating wall", anchor.id))
            })?;
            va_path(client, anchor.position, wall_idx, room)?.is_some()
        }
    };
    if !observable {
        return Ok(None);
    }
    let d = anchor.position - client;
    Ok(Some(wrap_angle(d.y.atan2(d.x))))
}

/// Reflection point on the generating wall for a virtual anchor's path, or
/// `None` when the path is invalid or the anchor is physical. Same client
/// gates as [`exact_aoa`].
pub fn reflection_point(client: Point, anchor: &Anchor, room: &Room) -> Result<Option<Point>> {
    if !room.contains(client) {
        return Err(Error::OutsideRoom(client.x, client.y));
    }
    if client.dist(anchor.position) <= TOL {
        return Ok(None);
    }
    match (anchor.kind, anchor.generating_wall) {
        (AnchorKind::Virtual, Some(wall_idx)) => va_path(client, anchor.position, wall_idx, room),
        _ => Ok(None),
    }
}

/// Grid of interior points with the given pitch, aligned to the bounding box
/// minimum. Points on or within TOL of the boundary are excluded. Used both
/// for virtual-anchor pruning probes and for solver initialization.
pub fn interior_grid(room: &Room, pitch: f64) -> Vec<Point> {
    let (min, max) = room.bbox();
    let mut pts = Vec::new();
    let nx = ((max.x - min.x) / pitch).ceil() as usize + 1;
    let ny = ((max.y - min.y) / pitch).ceil() as usize + 1;
    for iy in 0..=ny {
        let y = min.y + iy as f64 * pitch;
        if y > max.y + TOL {
            break;
        }
        for ix in 0..=nx {
            let x = min.x + ix as f64 * pitch;
            if x > max.x + TOL {
                break;
            }
            let p = Point::new(x, y);
            if room.strictly_inside(p) {
                pts.push(p);
            }
        }
    }
    pts
}

/// Room, AP placement, and virtual-anchor pruning parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub room: Room,
    pub aps: Vec<Point>,
    /// Minimum probe-grid coverage for a virtual anchor to stay in the
    /// roster, in `(0, 1]`.
    pub va_coverage_threshold: f64,
    /// Probe grid pitch in meters.
    pub probe_grid_m: f64,
}

#[derive(Serialize, Deserialize)]
struct RoomRaw {
    vertices: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioRaw {
    room: RoomRaw,
    aps: Vec<Point>,
    #[serde(default = "default_threshold")]
    va_coverage_threshold: f64,
    #[serde(default = "default_pitch")]
    probe_grid_m: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_VA_COVERAGE_THRESHOLD
}

fn default_pitch() -> f64 {
    DEFAULT_PROBE_GRID_M
}

impl Scenario {
    pub fn new(
        room: Room,
        aps: Vec<Point>,
        va_coverage_threshold: f64,
        probe_grid_m: f64,
    ) -> Result<Scenario> {
        if aps.is_empty() {
            return Err(Error::Scenario("scenario needs at least one AP".into()));
        }
        for (i, ap) in aps.iter().enumerate() {
            if !room.strictly_inside(*ap) {
                return Err(Error::Scenario(format!(
                    "AP {i} at ({}, {}) is not strictly inside the room",
                    ap.x, ap.y
                )));
            }
            for (j, other) in aps.iter().enumerate().take(i) {
                if ap.dist(*other) <= TOL {
                    return Err(Error::Scenario(format!("APs {j} and {i} coincide")));
                }
            }
        }
        if !(va_coverage_threshold > 0.0 && va_coverage_threshold <= 1.0) {
            return Err(Error::Scenario(format!(
                "va_coverage_threshold must be in (0, 1], got {va_coverage_threshold}"
            )));
        }
        if !(probe_grid_m > TOL && probe_grid_m.is_finite()) {
            return Err(Error::Scenario(format!(
                "probe_grid_m must be positive, got {probe_grid_m}"
            )));
        }
        Ok(Scenario {
            room,
            aps,
            va_coverage_threshold,
            probe_grid_m,
        })
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        let raw: ScenarioRaw =
            serde_json::from_str(s).map_err(|e| Error::Parse(format!("scenario JSON: {e}")))?;
        let room = Room::new(raw.room.vertices)?;
        Scenario::new(room, raw.aps, raw.va_coverage_threshold, raw.probe_grid_m)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&s).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = ScenarioRaw {
            room: RoomRaw {
                vertices: self.room.vertices().to_vec(),
            },
            aps: self.aps.clone(),
            va_coverage_threshold: self.va_coverage_threshold,
            probe_grid_m: self.probe_grid_m,
        };
        serde_json::to_string_pretty(&raw).expect("scenario serializes")
    }

    /// 15 m x 10 m rectangle with three APs.
    pub fn rect3() -> Scenario {
        Scenario::new(
            Room::new(vec![
                Point::new(0.0, 0.0),
                Point::new(15.0, 0.0),
                Point::new(15.0, 10.0),
                Point::new(0.0, 10.0),
            ])
            .expect("stock room"),
            vec![
                Point::new(4.0, 3.0),
                Point::new(7.5, 6.0),
                Point::new(11.0, 3.0),
            ],
            DEFAULT_VA_COVERAGE_THRESHOLD,
            DEFAULT_PROBE_GRID_M,
        )
        .expect("stock scenario")
    }

    /// Same rectangle with four APs.
    pub fn rect4() -> Scenario {
        Scenario::new(
            Room::new(vec![
                Point::new(0.0, 0.0),
                Point::new(15.0, 0.0),
                Point::new(15.0, 10.0),
                Point::new(0.0, 10.0),
            ])
            .expect("stock room"),
            vec![
                Point::new(2.0, 1.0),
                Point::new(4.0, 7.0),
                Point::new(10.0, 4.0),
                Point::new(14.0, 9.0),
            ],
            DEFAULT_VA_COVERAGE_THRESHOLD,
            DEFAULT_PROBE_GRID_M,
        )
        .expect("stock scenario")
    }

    /// Non-convex L-shaped room: a 6 m x 10 m block joined to an 8 m x 18 m
    /// block, three APs.
    pub fn lroom3() -> Scenario {
        Scenario::new(
            Room::new(vec![
                Point::new(0.0, 0.0),
                Point::new(14.0, 0.0),
                Point::new(14.0, 18.0),
                Point::new(6.0, 18.0),
                Point::new(6.0, 10.0),
                Point::new(0.0, 10.0),
            ])
            .expect("stock room"),
            vec![
                Point::new(4.0, 7.0),
                Point::new(10.0, 6.0),
                Point::new(13.0, 16.0),
            ],
            DEFAULT_VA_COVERAGE_THRESHOLD,
            DEFAULT_PROBE_GRID_M,
        )
        .expect("stock scenario")
    }
}

/// Probe-grid coverage of one candidate virtual anchor.
#[derive(Debug, Clone)]
pub struct VaCoverage {
    pub source_ap: usize,
    pub wall: usize,
    pub position: Point,
    /// Fraction of interior probe points with a valid reflection path.
    pub coverage: f64,
}

/// Coverage of every candidate virtual anchor (one per AP and wall), in
/// roster candidate order.
pub fn va_coverage_table(scenario: &Scenario) -> Result<Vec<VaCoverage>> {
    let probes = interior_grid(&scenario.room, scenario.probe_grid_m);
    if probes.is_empty() {
        return Err(Error::Scenario(
            "probe grid has no interior points; reduce probe_grid_m".into(),
        ));
    }
    let mut table = Vec::new();
    for (ap_idx, &ap) in scenario.aps.iter().enumerate() {
        for wall_idx in 0..scenario.room.n_walls() {
            let wall = scenario.room.wall(wall_idx);
            let va = mirror_point(ap, &wall)?;
            let mut hits = 0usize;
            for &p in &probes {
                if va_path(p, va, wall_idx, &scenario.room)?.is_some() {
                    hits += 1;
                }
            }
            table.push(VaCoverage {
                source_ap: ap_idx,
                wall: wall_idx,
                position: va,
                coverage: hits as f64 / probes.len() as f64,
            });
        }
    }
    Ok(table)
}

/// Builds the anchor roster for a scenario: each AP contributes its physical
/// anchor followed by one virtual anchor per wall in wall order, keeping only
/// virtual anchors whose probe-grid coverage reaches the scenario threshold.
pub fn build_anchor_roster(scenario: &Scenario) -> Result<AnchorRoster> {
    let coverage = va_coverage_table(scenario)?;
    let mut anchors = Vec::new();
    for (ap_idx, &ap) in scenario.aps.iter().enumerate() {
        anchors.push(Anchor {
            id: anchors.len(),
            kind: AnchorKind::Physical,
            position: ap,
            source_ap: ap_idx,
            generating_wall: None,
        });
        for entry in coverage.iter().filter(|c| c.source_ap == ap_idx) {
            if entry.coverage + 1e-12 >= scenario.va_coverage_threshold {
                anchors.push(Anchor {
                    id: anchors.len(),
                    kind: AnchorKind::Virtual,
                    position: entry.position,
                    source_ap: ap_idx,
                    generating_wall: Some(entry.wall),
                });
            }
        }
    }
    AnchorRoster::from_anchors(anchors)
}
