//! Closed track geometry, 2D LiDAR raycasting, and the scan-based collision
//! indicator.
//!
//! The LiDAR is mounted `mount_offset` ahead of the rear axle and the vehicle
//! footprint is a rectangle centered on the sensor. Beam `i` of an `n`-beam scan
//! points at body angle `−fov/2 + (i + ½)·fov/n`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, point_in_polygon, Pose, Segment, Vec2};

/// Beams of the full-circle reference scan: one per degree, centered on
/// half-degree offsets starting at −180°.
pub const DENSE_BEAMS: usize = 360;

/// Ranges never drop below this, so a sensor touching a wall still reports a
/// positive distance.
pub const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    outer: Vec<Vec2>,
    inner: Vec<Vec2>,
    spawn: Pose,
    #[serde(skip)]
    segments: Vec<Segment>,
}

impl TrackGeometry {
    /// Validates and builds a track. Both boundaries are closed implicitly (the
    /// last vertex connects back to the first).
    pub fn new(outer: Vec<Vec2>, inner: Vec<Vec2>, spawn: Pose) -> Result<Self> {
        let outer = strip_closing_vertex(outer);
        let inner = strip_closing_vertex(inner);
        for (name, poly) in [("outer", &outer), ("inner", &inner)] {
            if poly.len() < 3 {
                return Err(Error::Track(format!(
                    "{name} boundary needs at least 3 vertices, got {}",
                    poly.len()
                )));
            }
            if poly.iter().any(|p| !p.is_finite()) {
                return Err(Error::Track(format!(
                    "{name} boundary has non-finite coordinates"
                )));
            }
            if !is_simple(poly) {
                return Err(Error::Track(format!("{name} boundary self-intersects")));
            }
        }
        if !inner.iter().all(|&p| point_in_polygon(p, &outer)) {
            return Err(Error::Track(
                "inner boundary is not inside the outer boundary".into(),
            ));
        }
        let outer_edges = edges(&outer);
        let inner_edges = edges(&inner);
        if outer_edges
            .iter()
            .any(|a| inner_edges.iter().any(|b| a.intersects(b)))
        {
            return Err(Error::Track("boundaries intersect".into()));
        }
        let mut track = Self {
            outer,
            inner,
            spawn,
            segments: Vec::new(),
        };
        if !track.contains(spawn.position()) {
            return Err(Error::Track(format!(
                "spawn pose {spawn:?} is not in the drivable area"
            )));
        }
        track.segments = outer_edges.into_iter().chain(inner_edges).collect();
        Ok(track)
    }

    /// Circular annulus with regular `n_vertices`-gons as boundaries. The spawn
    /// pose sits on the centerline at angle 0, heading counter-clockwise.
    pub fn annulus(r_in: f64, r_out: f64, n_vertices: usize) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in) {
            return Err(Error::Track(format!(
                "annulus needs 0 < r_in < r_out, got {r_in}, {r_out}"
            )));
        }
        let ring = |r: f64| -> Vec<Vec2> {
            (0..n_vertices)
                .map(|k| Vec2::from_angle(2.0 * PI * k as f64 / n_vertices as f64) * r)
                .collect()
        };
        let r_mid = 0.5 * (r_in + r_out);
        Self::new(ring(r_out), ring(r_in), Pose::new(r_mid, 0.0, PI / 2.0))
    }

    /// Parses the plain-text polyline format: one `x y` pair per line, a blank
    /// line between the outer and inner boundary. An optional third block holds
    /// a single `x y yaw` spawn pose; without it the vehicle spawns midway
    /// between the first outer vertex and the nearest inner vertex, heading
    /// along the outer boundary.
    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !blocks.last().is_some_and(Vec::is_empty) {
                    blocks.push(Vec::new());
                }
                continue;
            }
            let nums = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("track line {}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            blocks.last_mut().expect("non-empty").push(nums);
        }
        blocks.retain(|b| !b.is_empty());
        let points = |block: &[Vec<f64>]| -> Result<Vec<Vec2>> {
            block
                .iter()
                .map(|n| match n.as_slice() {
                    [x, y] => Ok(Vec2::new(*x, *y)),
                    _ => Err(Error::Parse(format!("expected `x y`, got {n:?}"))),
                })
                .collect()
        };
        match blocks.as_slice() {
            [outer, inner] => {
                let outer = points(outer)?;
                let inner = points(inner)?;
                let spawn = default_spawn(&outer, &inner)?;
                Self::new(outer, inner, spawn)
            }
            [outer, inner, spawn] => {
                let spawn = match spawn.as_slice() {
                    [row] if row.len() == 3 => Pose::new(row[0], row[1], row[2]),
                    _ => {
                        return Err(Error::Parse(
                            "spawn block must be a single `x y yaw` line".into(),
                        ))
                    }
                };
                Self::new(points(outer)?, points(inner)?, spawn)
            }
            _ => Err(Error::Track(format!(
                "expected 2 boundary blocks (plus optional spawn), found {}",
                blocks.len()
            ))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.outer {
            let _ = writeln!(out, "{} {}", p.x, p.y);
        }
        out.push('\n');
        for p in &self.inner {
            let _ = writeln!(out, "{} {}", p.x, p.y);
        }
        out.push('\n');
        let _ = writeln!(out, "{} {} {}", self.spawn.x, self.spawn.y, self.spawn.yaw);
        out
    }

    pub fn outer(&self) -> &[Vec2] {
        &self.outer
    }

    pub fn inner(&self) -> &[Vec2] {
        &self.inner
    }

    pub fn spawn(&self) -> Pose {
        self.spawn
    }

    /// All boundary segments, outer first.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// True if `p` lies in the drivable area between the boundaries.
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.outer) && !point_in_polygon(p, &self.inner)
    }

    /// Segments within `radius` of `p`.
    pub fn segments_near(&self, p: Vec2, radius: f64) -> Vec<Segment> {
        self.segments
            .iter()
            .filter(|s| s.distance_to(p) <= radius)
            .copied()
            .collect()
    }

    /// Rigid transform of the whole track (used by frame-invariance checks).
    pub fn transformed(&self, by: Pose) -> Result<Self> {
        let map = |poly: &[Vec2]| poly.iter().map(|&p| by.transform(p)).collect();
        let sp = by.transform(self.spawn.position());
        Self::new(
            map(&self.outer),
            map(&self.inner),
            Pose::new(sp.x, sp.y, normalize_angle(self.spawn.yaw + by.yaw)),
        )
    }

    /// True if the closed polygon `corners` touches or crosses a boundary, or
    /// if a boundary vertex lies inside it.
    pub fn polygon_hits_boundary(&self, corners: &[Vec2]) -> bool {
        let poly_edges = edges(corners);
        self.segments
            .iter()
            .any(|s| poly_edges.iter().any(|e| e.intersects(s)) || point_in_polygon(s.a, corners))
            || !self.contains(corners[0])
    }
}

fn strip_closing_vertex(mut poly: Vec<Vec2>) -> Vec<Vec2> {
    if poly.len() > 1 && poly.first() == poly.last() {
        poly.pop();
    }
    poly
}

fn edges(poly: &[Vec2]) -> Vec<Segment> {
    (0..poly.len())
        .map(|i| Segment::new(poly[i], poly[(i + 1) % poly.len()]))
        .collect()
}

fn is_simple(poly: &[Vec2]) -> bool {
    let e = edges(poly);
    let n = e.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && e[i].intersects(&e[j]) {
                return false;
            }
        }
    }
    true
}

fn default_spawn(outer: &[Vec2], inner: &[Vec2]) -> Result<Pose> {
    let (o0, o1) = match outer {
        [a, b, ..] => (*a, *b),
        _ => {
            return Err(Error::Track(
                "outer boundary needs at least 3 vertices".into(),
            ))
        }
    };
    let nearest = inner
        .iter()
        .copied()
        .min_by(|a, b| (*a - o0).norm().total_cmp(&(*b - o0).norm()))
        .ok_or_else(|| Error::Track("inner boundary is empty".into()))?;
    let mid = (o0 + nearest) * 0.5;
    let dir = o1 - o0;
    Ok(Pose::new(mid.x, mid.y, dir.y.atan2(dir.x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub num_beams: usize,
    pub fov_deg: f64,
    pub max_range: f64,
    /// Distance of the sensor ahead of the rear axle.
    pub mount_offset: f64,
    /// Half-width of optional additive uniform range noise; 0 disables it.
    pub noise: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            num_beams: 18,
            fov_deg: 270.0,
            max_range: 10.0,
            mount_offset: 0.165,
            noise: 0.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_beams == 0 {
            return Err(Error::Config("lidar.num_beams must be ≥ 1".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(Error::Config(format!(
                "lidar.fov_deg must lie in (0, 360], got {}",
                self.fov_deg
            )));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::Config("lidar.max_range must be > 0".into()));
        }
        if !(self.noise >= 0.0 && self.mount_offset.is_finite()) {
            return Err(Error::Config(
                "lidar.noise must be ≥ 0 and mount_offset finite".into(),
            ));
        }
        Ok(())
    }

    pub fn beam_angles(&self) -> Vec<f64> {
        let fov = self.fov_deg.to_radians();
        let n = self.num_beams as f64;
        (0..self.num_beams)
            .map(|i| -0.5 * fov + (i as f64 + 0.5) * fov / n)
            .collect()
    }

    /// Pose of the sensor for a vehicle state.
    pub fn sensor_pose(&self, state: &VehicleState) -> Pose {
        let (s, c) = state.yaw.sin_cos();
        Pose::new(
            state.x + self.mount_offset * c,
            state.y + self.mount_offset * s,
            state.yaw,
        )
    }

    /// Indices of the dense-scan beams that coincide with this configuration's
    /// beams. For the default 18 beams over 270° these are `52 + 15·i`.
    pub fn dense_indices(&self) -> Result<Vec<usize>> {
        let step = 2.0 * PI / DENSE_BEAMS as f64;
        self.beam_angles()
            .into_iter()
            .map(|a| {
                let j = (a + PI) / step - 0.5;
                let r = j.round();
                if (j - r).abs() > 1e-9 || r < 0.0 || r >= DENSE_BEAMS as f64 {
                    Err(Error::Config(format!(
                        "beam angle {a} is not on the dense grid"
                    )))
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }
}

pub fn dense_beam_angles() -> Vec<f64> {
    let step = 2.0 * PI / DENSE_BEAMS as f64;
    (0..DENSE_BEAMS)
        .map(|j| -PI + (j as f64 + 0.5) * step)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub beam_angles: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn open(config: &LidarConfig) -> Self {
        Self {
            ranges: vec![config.max_range; config.num_beams],
            beam_angles: config.beam_angles(),
            max_range: config.max_range,
        }
    }

    /// Keeps the given beam indices (downsampling).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ranges: indices.iter().map(|&i| self.ranges[i]).collect(),
            beam_angles: indices.iter().map(|&i| self.beam_angles[i]).collect(),
            max_range: self.max_range,
        }
    }
}

/// Distance along a single ray to the nearest segment, capped at `max_range`.
#[inline]
pub fn cast_ray(segments: &[Segment], origin: Vec2, dir: Vec2, max_range: f64) -> f64 {
    let mut best = max_range;
    for s in segments {
        if let Some(t) = s.ray_hit(origin, dir) {
            if t < best {
                best = t;
            }
        }
    }
    best.max(MIN_RANGE)
}

fn scan_with_angles(
    sensor: Pose,
    track: &TrackGeometry,
    angles: Vec<f64>,
    max_range: f64,
) -> LidarScan {
    let origin = sensor.position();
    let ranges = angles
        .iter()
        .map(|&a| {
            cast_ray(
                track.segments(),
                origin,
                Vec2::from_angle(sensor.yaw + a),
                max_range,
            )
        })
        .collect();
    LidarScan {
        ranges,
        beam_angles: angles,
        max_range,
    }
}

/// Exact ray–segment scan from the sensor pose.
pub fn raycast(sensor: Pose, track: &TrackGeometry, config: &LidarConfig) -> LidarScan {
    scan_with_angles(sensor, track, config.beam_angles(), config.max_range)
}

/// Full-circle 1° scan, used as the geometric reference for downsampling and
/// collision consistency checks.
pub fn raycast_dense(sensor: Pose, track: &TrackGeometry, max_range: f64) -> LidarScan {
    scan_with_angles(sensor, track, dense_beam_angles(), max_range)
}

/// Adds uniform noise of half-width `config.noise` to every range.
pub fn add_range_noise<R: Rng>(scan: &mut LidarScan, config: &LidarConfig, rng: &mut R) {
    if config.noise <= 0.0 {
        return;
    }
    for r in &mut scan.ranges {
        *r = (*r + rng.random_range(-config.noise..=config.noise))
            .clamp(MIN_RANGE, config.max_range);
    }
}

/// Rectangular vehicle footprint centered on the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
    /// A beam whose footprint-corrected range is at most this counts as contact.
    pub collision_margin: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 0.5,
            width: 0.3,
            collision_margin: 0.02,
        }
    }
}

impl Footprint {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.collision_margin >= 0.0) {
            return Err(Error::Config(format!("invalid footprint {self:?}")));
        }
        Ok(())
    }

    /// Distance from the sensor to the footprint boundary along body angle `angle`.
    pub fn extent_along(&self, angle: f64) -> f64 {
        let (s, c) = angle.sin_cos();
        let along = if c.abs() > 0.0 {
            0.5 * self.length / c.abs()
        } else {
            f64::INFINITY
        };
        let across = if s.abs() > 0.0 {
            0.5 * self.width / s.abs()
        } else {
            f64::INFINITY
        };
        along.min(across)
    }

    pub fn circumradius(&self) -> f64 {
        (0.5 * self.length).hypot(0.5 * self.width)
    }

    pub fn corners(&self, sensor: Pose) -> [Vec2; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [
            sensor.transform(Vec2::new(hl, hw)),
            sensor.transform(Vec2::new(-hl, hw)),
            sensor.transform(Vec2::new(-hl, -hw)),
            sensor.transform(Vec2::new(hl, -hw)),
        ]
    }
}

/// Smallest footprint-corrected range of the scan (free space between the
/// vehicle body and the nearest return).
pub fn clearance(scan: &LidarScan, footprint: &Footprint) -> f64 {
    scan.ranges
        .iter()
        .zip(&scan.beam_angles)
        .map(|(&r, &a)| r - footprint.extent_along(a))
        .fold(f64::INFINITY, f64::min)
}

/// Collision indicator: 1 iff some beam's footprint-corrected range is at most
/// the collision margin (equality counts as contact).
pub fn collision_indicator(scan: &LidarScan, footprint: &Footprint) -> bool {
    clearance(scan, footprint) <= footprint.collision_margin
}

const PROBE_SLACK: f64 = 1e-3;

/// Precomputed per-beam geometry for evaluating many poses quickly (planner
/// rollouts). Results are identical to [`raycast`] + [`collision_indicator`].
#[derive(Debug, Clone)]
pub struct SensorRig {
    pub lidar: LidarConfig,
    pub footprint: Footprint,
    beams: Vec<(f64, f64, f64)>,
    max_extent: f64,
}

/// Contact and clearance of one pose, as seen by the rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub collided: bool,
    /// Footprint-corrected clearance, capped at the probe's cap.
    pub clearance: f64,
}

impl SensorRig {
    pub fn new(lidar: LidarConfig, footprint: Footprint) -> Self {
        let beams: Vec<_> = lidar
            .beam_angles()
            .into_iter()
            .map(|a| (a.cos(), a.sin(), footprint.extent_along(a)))
            .collect();
        let max_extent = beams.iter().map(|b| b.2).fold(0.0, f64::max);
        Self {
            lidar,
            footprint,
            beams,
            max_extent,
        }
    }

    pub fn max_extent(&self) -> f64 {
        self.max_extent
    }

    /// Evaluates contact and clearance capped at `cap` (≥ collision margin)
    /// against `segments`, which must contain every segment within
    /// `max_extent + cap` of the sensor.
    #[inline]
    pub fn probe(&self, segments: &[Segment], state: &VehicleState, cap: f64) -> Probe {
        let sensor = self.lidar.sensor_pose(state);
        let origin = sensor.position();
        // Look slightly past the cap so a beam with no return inside it can
        // never read as contact.
        let look = cap.max(self.footprint.collision_margin) + PROBE_SLACK;
        let near = segments
            .iter()
            .map(|s| s.distance_to(origin))
            .fold(f64::INFINITY, f64::min);
        if near > self.max_extent + look {
            return Probe {
                collided: false,
                clearance: cap,
            };
        }
        let (sy, cy) = sensor.yaw.sin_cos();
        let mut min_clear = f64::INFINITY;
        for &(c, s, ext) in &self.beams {
            let dir = Vec2::new(cy * c - sy * s, sy * c + cy * s);
            let limit = (ext + look).min(self.lidar.max_range);
            let range = cast_ray(segments, origin, dir, limit);
            min_clear = min_clear.min(range - ext);
        }
        Probe {
            collided: min_clear <= self.footprint.collision_margin,
            clearance: min_clear.min(cap),
        }
    }
}
