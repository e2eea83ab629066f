//! Small planar geometry helpers shared by every stage.
//!
//! Angles are undirected line orientations in degrees, folded into `[0, 180)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

/// Folds any angle in degrees into `[0, 180)`.
pub fn fold_degrees(angle: f64) -> f64 {
    let a = angle.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

/// Undirected direction angle of the vector `(dx, dy)` in `[0, 180)`.
pub fn direction_degrees(dx: f64, dy: f64) -> f64 {
    fold_degrees(dy.atan2(dx).to_degrees())
}

/// Signed smallest rotation (period 180) taking `from` onto `to`, in `(-90, 90]`.
pub fn signed_angle_diff(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(180.0);
    if d > 90.0 {
        d - 180.0
    } else {
        d
    }
}

/// Circular distance between two orientations: `min(|d|, 180 - |d|)`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    signed_angle_diff(a, b).abs()
}

/// Circular mean with period 180 degrees; `None` when the doubled-angle
/// vectors cancel out.
pub fn circular_mean_degrees<I>(angles: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut s, mut c) = (0.0, 0.0);
    for (angle, weight) in angles {
        let doubled = (2.0 * angle).to_radians();
        s += weight * doubled.sin();
        c += weight * doubled.cos();
    }
    if s.hypot(c) < 1e-12 {
        return None;
    }
    Some(fold_degrees(s.atan2(c).to_degrees() / 2.0))
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Distance from `p` to a polyline; infinite for an empty polyline.
pub fn point_polyline_distance(p: Point, polyline: &[Point]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [single] => p.distance(*single),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn polyline_length(polyline: &[Point]) -> f64 {
    polyline.windows(2).map(|w| w[0].distance(w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding() {
        assert_eq!(fold_degrees(-45.0), 135.0);
        assert_eq!(fold_degrees(180.0), 0.0);
        assert_eq!(fold_degrees(225.0), 45.0);
        assert_eq!(direction_degrees(-1.0, -1.0), 45.0);
    }

    #[test]
    fn circular_distance_wraps() {
        assert!((angle_distance(175.0, 3.0) - 8.0).abs() < 1e-12);
        assert!((angle_distance(3.0, 175.0) - 8.0).abs() < 1e-12);
        assert!((angle_distance(10.0, 80.0) - 70.0).abs() < 1e-12);
        assert!((angle_distance(0.0, 90.0) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn circular_mean_across_wrap() {
        let m = circular_mean_degrees([(175.0, 1.0), (5.0, 1.0)]).unwrap();
        assert!(angle_distance(m, 0.0) < 1e-9);
        assert!(circular_mean_degrees([(0.0, 1.0), (90.0, 1.0)]).is_none());
    }
}
