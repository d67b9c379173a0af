//! Planar primitives shared by the vehicle models and the track world.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Maps a body-frame point into the world frame.
    pub fn transform(&self, p: Vec2) -> Vec2 {
        self.position() + p.rotate(self.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

const PARALLEL_EPS: f64 = 1e-12;

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    /// Distance along the ray `origin + t·dir` (unit `dir`) to this segment, if
    /// the ray hits it at `t ≥ 0`. Rays parallel to the segment never hit.
    #[inline]
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() < PARALLEL_EPS {
            return None;
        }
        let w = self.a - origin;
        let t = w.cross(e) / denom;
        let s = w.cross(dir) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
    }

    #[inline]
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let e = self.b - self.a;
        let len2 = e.dot(e);
        let s = if len2 > 0.0 {
            ((p - self.a).dot(e) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + e * s - p).norm()
    }

    /// True if the two closed segments share at least one point.
    pub fn intersects(&self, o: &Segment) -> bool {
        let d1 = orient(o.a, o.b, self.a);
        let d2 = orient(o.a, o.b, self.b);
        let d3 = orient(self.a, self.b, o.a);
        let d4 = orient(self.a, self.b, o.b);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
            && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        {
            return true;
        }
        (d1 == 0.0 && on_segment(o.a, o.b, self.a))
            || (d2 == 0.0 && on_segment(o.a, o.b, self.b))
            || (d3 == 0.0 && on_segment(self.a, self.b, o.a))
            || (d4 == 0.0 && on_segment(self.a, self.b, o.b))
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Even-odd point-in-polygon test for a closed polyline.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.5), 0.5);
    }

    #[test]
    fn ray_hits_segment_in_front_only() {
        let seg = Segment::new(Vec2::new(1.0, -1.0), Vec2::new(1.0, 1.0));
        assert_eq!(seg.ray_hit(Vec2::default(), Vec2::new(1.0, 0.0)), Some(1.0));
        assert_eq!(seg.ray_hit(Vec2::default(), Vec2::new(-1.0, 0.0)), None);
        assert_eq!(seg.ray_hit(Vec2::default(), Vec2::new(0.0, 1.0)), None);
    }

    #[test]
    fn segment_intersection_cases() {
        let s = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
        assert!(s.intersects(&Segment::new(Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0))));
        assert!(!s.intersects(&Segment::new(Vec2::new(2.0, 0.0), Vec2::new(3.0, 0.0))));
        // touching endpoint
        assert!(s.intersects(&Segment::new(Vec2::new(1.0, 1.0), Vec2::new(2.0, 0.0))));
    }

    #[test]
    fn point_segment_distance() {
        let s = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0));
        assert!((s.distance_to(Vec2::new(1.0, 0.5)) - 0.5).abs() < 1e-15);
        assert!((s.distance_to(Vec2::new(3.0, 0.0)) - 1.0).abs() < 1e-15);
    }
}
