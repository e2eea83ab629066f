//! Curve stitching core: intensity-weighted centroids of short segments and
//! tangent samples from centroid pairs via the mean value theorem.
//!
//! Two nearby chords `A` and `B` on a smooth curve have centroids `a` and `b`.
//! The secant through `a` and `b` is parallel to the curve's tangent at some
//! point between them; the sample is placed at the midpoint. As the pair
//! separation shrinks the secant converges to the tangent itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_distance, circular_mean_degrees, direction_degrees, point_segment_distance, Point};
use crate::hough::{segment_angle, LineSegment};
use crate::imaging::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("all pixels under the segment have zero intensity")]
    ZeroMass,
    #[error("centroids coincide; no secant direction")]
    DegeneratePair,
    #[error("segment has zero length")]
    DegenerateSegment,
    #[error("weight image must have one channel")]
    NotGray,
    #[error("invalid tangent configuration: {0}")]
    InvalidConfig(&'static str),
}

/// A sub-pixel position carrying the summed intensity that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
}

impl WeightedPoint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A contact point with the undirected tangent angle there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentSample {
    pub x: f64,
    pub y: f64,
    /// Degrees in `[0, 180)`.
    pub angle: f64,
    /// Combined mass of the centroid pair.
    pub support: f64,
}

impl TangentSample {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvtConfig {
    /// Largest centroid separation accepted for a pair (the discrete step).
    pub max_pair_gap: f64,
    /// Smallest separation; closer centroids come from duplicate chords and
    /// their secant is dominated by pixel noise.
    pub min_pair_gap: f64,
    /// Largest disagreement between the two segment angles, and between each
    /// segment and the secant joining the centroids.
    pub max_angle_spread: f64,
    /// Largest distance of either centroid from the line through the other
    /// segment. Keeps pairs on one edge of a stroke.
    pub max_offset: f64,
}

impl Default for MvtConfig {
    fn default() -> Self {
        Self {
            max_pair_gap: 16.0,
            min_pair_gap: 3.0,
            max_angle_spread: 15.0,
            max_offset: 1.0,
        }
    }
}

impl MvtConfig {
    pub fn validate(&self) -> Result<(), CurveError> {
        if !(self.max_pair_gap > 0.0) {
            return Err(CurveError::InvalidConfig("max_pair_gap must be positive"));
        }
        if !(self.min_pair_gap >= 0.0 && self.min_pair_gap < self.max_pair_gap) {
            return Err(CurveError::InvalidConfig("min_pair_gap must be in [0, max_pair_gap)"));
        }
        if !(self.max_angle_spread > 0.0) {
            return Err(CurveError::InvalidConfig("max_angle_spread must be positive"));
        }
        if !(self.max_offset > 0.0) {
            return Err(CurveError::InvalidConfig("max_offset must be positive"));
        }
        Ok(())
    }
}

/// `Σ f(n)·x(n) / Σ f(n)` over the pixels within `band + 0.5` px of the segment.
///
/// With `band = 0` this covers the segment's own raster; uniform weights give
/// the arithmetic mean of the covered pixel positions.
pub fn weighted_centroid(img: &Image, s: &LineSegment, band: f64) -> Result<WeightedPoint, CurveError> {
    if img.channels() != 1 {
        return Err(CurveError::NotGray);
    }
    let reach = band.max(0.0) + 0.5;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x_lo = ((s.x0.min(s.x1) - reach).floor() as i64).max(0);
    let x_hi = ((s.x0.max(s.x1) + reach).ceil() as i64).min(w - 1);
    let y_lo = ((s.y0.min(s.y1) - reach).floor() as i64).max(0);
    let y_hi = ((s.y0.max(s.y1) + reach).ceil() as i64).min(h - 1);
    let (a, b) = (s.start(), s.end());
    let (mut sx, mut sy, mut mass) = (0.0f64, 0.0f64, 0.0f64);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let p = Point::new(x as f64, y as f64);
            if point_segment_distance(p, a, b) > reach + 1e-12 {
                continue;
            }
            let f = img.get(x as usize, y as usize, 0) as f64;
            sx += f * p.x;
            sy += f * p.y;
            mass += f;
        }
    }
    if mass <= 0.0 {
        return Err(CurveError::ZeroMass);
    }
    Ok(WeightedPoint {
        x: sx / mass,
        y: sy / mass,
        mass,
    })
}

/// Secant direction between two centroids, placed at their midpoint.
pub fn mvt_tangent(a: &WeightedPoint, b: &WeightedPoint) -> Result<TangentSample, CurveError> {
    // orient the secant from the lexicographically smaller point so the
    // result is bit-identical whichever way round the pair is given
    let (p, q) = if (b.x, b.y) < (a.x, a.y) { (b, a) } else { (a, b) };
    let (dx, dy) = (q.x - p.x, q.y - p.y);
    if dx.hypot(dy) <= 1e-6 {
        return Err(CurveError::DegeneratePair);
    }
    Ok(TangentSample {
        x: 0.5 * (a.x + b.x),
        y: 0.5 * (a.y + b.y),
        angle: direction_degrees(dx, dy),
        support: a.mass + b.mass,
    })
}

/// A segment together with its weighted centroid and direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub segment: LineSegment,
    pub centroid: WeightedPoint,
    pub angle: f64,
}

/// Weighted centroids for every segment that has mass under it.
///
/// With `refine > 0` the weighting window is slid across the segment, up to
/// `refine` times, until its center line passes through the centroid it
/// produces. This makes the centroid independent of where the segment landed
/// on the edge profile.
pub fn anchors(img: &Image, segments: &[LineSegment], band: f64, refine: usize) -> Result<Vec<Anchor>, CurveError> {
    let mut out = Vec::with_capacity(segments.len());
    for s in segments {
        let angle = match segment_angle(s) {
            Ok(a) => a,
            Err(_) => continue,
        };
        match refined_centroid(img, s, band, refine) {
            Ok(centroid) => out.push(Anchor {
                segment: *s,
                centroid,
                angle,
            }),
            Err(CurveError::ZeroMass) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn refined_centroid(img: &Image, s: &LineSegment, band: f64, refine: usize) -> Result<WeightedPoint, CurveError> {
    let mut c = weighted_centroid(img, s, band)?;
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return Ok(c);
    }
    let (nx, ny) = (-dy / len, dx / len);
    let mut window = *s;
    for _ in 0..refine {
        let off = (c.x - window.x0) * nx + (c.y - window.y0) * ny;
        if off.abs() < 0.01 {
            break;
        }
        window = LineSegment::new(
            window.x0 + off * nx,
            window.y0 + off * ny,
            window.x1 + off * nx,
            window.y1 + off * ny,
        );
        match weighted_centroid(img, &window, band) {
            Ok(next) => c = next,
            Err(CurveError::ZeroMass) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(c)
}

/// Tangent samples along the curves traced by `segments`.
///
/// Centroids are ordered by `(x, y)`. Candidate pairs must be separated by
/// `min_pair_gap..=max_pair_gap`, have segment angles within `max_angle_spread` of each
/// other, have a secant within the same spread of both segments, and each
/// centroid must lie within `max_offset` of the other segment's line (which
/// rules out pairs taken across a stroke). Pairs are accepted shortest first
/// while each centroid has fewer than two partners, so every centroid links
/// to at most its two nearest admissible neighbors along the curve.
pub fn tangent_field(
    img: &Image,
    segments: &[LineSegment],
    band: f64,
    cfg: &MvtConfig,
) -> Result<Vec<TangentSample>, CurveError> {
    cfg.validate()?;
    let anchors = anchors(img, segments, band, 0)?;
    tangent_field_from_anchors(&anchors, cfg)
}

pub fn tangent_field_from_anchors(anchors: &[Anchor], cfg: &MvtConfig) -> Result<Vec<TangentSample>, CurveError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&anchors[i].centroid, &anchors[j].centroid);
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(anchors[i].angle.total_cmp(&anchors[j].angle))
    });
    let sorted: Vec<&Anchor> = order.iter().map(|&i| &anchors[i]).collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..sorted.len() {
        let a = sorted[i];
        for (j, b) in sorted.iter().enumerate().skip(i + 1) {
            // sorted by x, so the gap can only grow from here
            if b.centroid.x - a.centroid.x > cfg.max_pair_gap {
                break;
            }
            let d = a.centroid.point().distance(b.centroid.point());
            if d > cfg.max_pair_gap || d < cfg.min_pair_gap || d <= 1e-6 {
                continue;
            }
            if angle_distance(a.angle, b.angle) > cfg.max_angle_spread {
                continue;
            }
            let secant = direction_degrees(b.centroid.x - a.centroid.x, b.centroid.y - a.centroid.y);
            if angle_distance(secant, a.angle) > cfg.max_angle_spread
                || angle_distance(secant, b.angle) > cfg.max_angle_spread
            {
                continue;
            }
            if line_offset(&a.segment, b.centroid.point()) > cfg.max_offset
                || line_offset(&b.segment, a.centroid.point()) > cfg.max_offset
            {
                continue;
            }
            candidates.push((d, i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut degree = vec![0u8; sorted.len()];
    let mut samples = Vec::new();
    for (_, i, j) in candidates {
        if degree[i] >= 2 || degree[j] >= 2 {
            continue;
        }
        degree[i] += 1;
        degree[j] += 1;
        samples.push(mvt_tangent(&sorted[i].centroid, &sorted[j].centroid)?);
    }
    samples.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.angle.total_cmp(&b.angle))
    });
    Ok(samples)
}

fn line_offset(s: &LineSegment, p: Point) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    ((p.x - s.x0) * dy - (p.y - s.y0) * dx).abs() / dx.hypot(dy)
}

/// Circular mean of the sample angles.
pub fn mean_direction(samples: &[TangentSample]) -> Option<f64> {
    circular_mean_degrees(samples.iter().map(|s| (s.angle, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64, y: f64) -> WeightedPoint {
        WeightedPoint { x, y, mass: 1.0 }
    }

    #[test]
    fn uniform_weights_give_plain_centroid() {
        let img = Image::new_gray(8, 4, 1.0);
        let c = weighted_centroid(&img, &LineSegment::new(0.0, 0.0, 2.0, 0.0), 0.0).unwrap();
        assert!((c.x - 1.0).abs() < 1e-12 && c.y.abs() < 1e-12);
        assert_eq!(c.mass, 3.0);
    }

    #[test]
    fn two_weighted_pixels() {
        let mut img = Image::new_gray(12, 3, 0.0);
        img.set(0, 0, 0, 1.0 / 3.0);
        img.set(10, 0, 0, 1.0);
        let c = weighted_centroid(&img, &LineSegment::new(0.0, 0.0, 10.0, 0.0), 0.0).unwrap();
        // intensities 1/3 and 1 carry the same 1:3 ratio as 1 and 3
        assert!((c.x - 7.5).abs() < 1e-6, "{}", c.x);
    }

    #[test]
    fn zero_mass_is_an_error() {
        let img = Image::new_gray(8, 8, 0.0);
        assert_eq!(
            weighted_centroid(&img, &LineSegment::new(1.0, 1.0, 5.0, 5.0), 1.0),
            Err(CurveError::ZeroMass)
        );
    }

    #[test]
    fn secant_on_parabola_matches_midpoint_tangent() {
        // y = x² through x = 0 and x = 2; tangent slope at x = 1 is 2
        let t = mvt_tangent(&wp(0.0, 0.0), &wp(2.0, 4.0)).unwrap();
        assert!((t.angle - 2.0f64.atan().to_degrees()).abs() < 1e-9);
        assert!((t.angle - 63.434_948_822_922).abs() < 1e-6);
        assert_eq!((t.x, t.y), (1.0, 2.0));
        assert_eq!(t.support, 2.0);
    }

    #[test]
    fn secant_on_line_is_the_line() {
        let t = mvt_tangent(&wp(3.0, 3.0), &wp(7.0, 7.0)).unwrap();
        assert!((t.angle - 45.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_pair_is_degenerate() {
        assert_eq!(
            mvt_tangent(&wp(1.0, 1.0), &wp(1.0, 1.0)),
            Err(CurveError::DegeneratePair)
        );
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = WeightedPoint {
            x: 1.0,
            y: 8.0,
            mass: 2.0,
        };
        let b = WeightedPoint {
            x: 4.5,
            y: -3.0,
            mass: 0.5,
        };
        assert_eq!(mvt_tangent(&a, &b).unwrap().angle, mvt_tangent(&b, &a).unwrap().angle);
    }

    fn draw_line(img: &mut Image, a: Point, b: Point) {
        for (x, y) in LineSegment::from_points(a, b).rasterize() {
            img.set(x as usize, y as usize, 0, 1.0);
        }
    }

    #[test]
    fn collinear_segments_share_the_line_angle() {
        let mut img = Image::new_gray(64, 64, 0.0);
        draw_line(&mut img, Point::new(5.0, 5.0), Point::new(55.0, 55.0));
        let segs = [
            LineSegment::new(10.0, 10.0, 16.0, 16.0),
            LineSegment::new(20.0, 20.0, 26.0, 26.0),
        ];
        let field = tangent_field(&img, &segs, 0.0, &MvtConfig::default()).unwrap();
        assert_eq!(field.len(), 1);
        assert!((field[0].angle - 45.0).abs() < 1e-6);
    }

    #[test]
    fn distant_segments_give_nothing() {
        let img = Image::new_gray(100, 100, 1.0);
        let segs = [
            LineSegment::new(0.0, 0.0, 5.0, 0.0),
            LineSegment::new(50.0, 0.0, 55.0, 0.0),
            LineSegment::new(0.0, 90.0, 5.0, 90.0),
        ];
        assert!(tangent_field(&img, &segs, 1.0, &MvtConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn parabola_chords_track_the_derivative() {
        // 40 short chords along y = x²/100 for x in [0, 200]
        let f = |x: f64| x * x / 100.0;
        let (w, h) = (220, 420);
        let mut img = Image::new_gray(w, h, 0.0);
        let mut x: f64 = 0.0;
        while x <= 200.0 {
            img.set(x.round() as usize, f(x).round() as usize, 0, 1.0);
            x += 0.05;
        }
        let segs: Vec<LineSegment> = (0..40)
            .map(|i| {
                let x0 = i as f64 * 5.0;
                let dx = 0.5 / (1.0 + (x0 / 50.0).powi(2)).sqrt();
                LineSegment::new(x0 - dx, f(x0 - dx), x0 + dx, f(x0 + dx))
            })
            .collect();
        let cfg = MvtConfig {
            max_pair_gap: 60.0,
            min_pair_gap: 0.0,
            max_angle_spread: 20.0,
            max_offset: 5.0,
        };
        let field = tangent_field(&img, &segs, 1.0, &cfg).unwrap();
        assert!(field.len() >= 30, "{}", field.len());
        let good = field
            .iter()
            .filter(|t| angle_distance(t.angle, (t.x / 50.0).atan().to_degrees()) <= 3.0)
            .count();
        assert!(good as f64 >= 0.9 * field.len() as f64, "{good}/{}", field.len());
    }

    #[test]
    fn each_centroid_pairs_at_most_twice() {
        let img = Image::new_gray(64, 64, 1.0);
        // a dense straight run: every centroid has many admissible neighbors
        let segs: Vec<LineSegment> = (0..12)
            .map(|i| LineSegment::new(2.0 + i as f64 * 4.0, 30.0, 3.0 + i as f64 * 4.0, 30.0))
            .collect();
        let anchors = anchors(&img, &segs, 0.0, 0).unwrap();
        let field = tangent_field_from_anchors(&anchors, &MvtConfig::default()).unwrap();
        // a chain of n centroids has n-1 links
        assert_eq!(field.len(), anchors.len() - 1);
        assert!(field.iter().all(|t| t.angle.abs() < 1e-9));
    }
}
