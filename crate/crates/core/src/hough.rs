//! Standard Hough accumulator, probabilistic segment extraction, and the
//! conversions between endpoint, polar and slope-intercept line forms.
//!
//! Polar lines use `r = x·cosθ + y·sinθ` with `θ ∈ [0, π)`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{direction_degrees, Point};
use crate::imaging::EdgeMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoughError {
    #[error("edge map has no edge pixels")]
    EmptyEdgeMap,
    #[error("segment has zero length")]
    DegenerateSegment,
    #[error("line is vertical; slope-intercept form does not exist")]
    VerticalLine,
    #[error("invalid hough parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarLine {
    pub theta: f64,
    pub r: f64,
}

impl PolarLine {
    /// Canonicalizes `(θ, r)` so that `θ ∈ [0, π)`, flipping the sign of `r`
    /// whenever `θ` is shifted by π.
    pub fn new(theta: f64, r: f64) -> Self {
        let turns = (theta / PI).floor();
        let mut theta = theta - turns * PI;
        let mut r = if (turns as i64).rem_euclid(2) == 1 { -r } else { r };
        if theta >= PI {
            theta -= PI;
            r = -r;
        }
        if theta < 0.0 {
            theta = 0.0;
        }
        Self { theta, r }
    }

    /// Signed distance of `p` from the line.
    pub fn residual(&self, p: Point) -> f64 {
        p.x * self.theta.cos() + p.y * self.theta.sin() - self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl LineSegment {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_points(a: Point, b: Point) -> Self {
        Self::new(a.x, a.y, b.x, b.y)
    }

    pub fn start(&self) -> Point {
        Point::new(self.x0, self.y0)
    }

    pub fn end(&self) -> Point {
        Point::new(self.x1, self.y1)
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    pub fn midpoint(&self) -> Point {
        self.start().midpoint(self.end())
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.x1, self.y1, self.x0, self.y0)
    }

    /// Integer pixels visited by a DDA walk from start to end.
    pub fn rasterize(&self) -> Vec<(i64, i64)> {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let p = ((self.x0 + dx * t).round() as i64, (self.y0 + dy * t).round() as i64);
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoughParams {
    pub theta_bins: usize,
    pub r_resolution: f64,
    pub votes_min: u32,
    pub min_length: f64,
    pub max_gap: usize,
    /// Upper bound on emitted segment length. Short caps dissect curves into
    /// many small chords; `None` lets segments run as long as the edge does.
    #[serde(default)]
    pub max_length: Option<f64>,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            theta_bins: 180,
            r_resolution: 1.0,
            votes_min: 6,
            min_length: 5.0,
            max_gap: 3,
            max_length: Some(8.0),
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<(), HoughError> {
        if self.theta_bins == 0 {
            return Err(HoughError::InvalidParams("theta_bins must be positive"));
        }
        if !(self.r_resolution > 0.0) {
            return Err(HoughError::InvalidParams("r_resolution must be positive"));
        }
        if self.votes_min == 0 {
            return Err(HoughError::InvalidParams("votes_min must be positive"));
        }
        if !(self.min_length > 0.0) {
            return Err(HoughError::InvalidParams("min_length must be positive"));
        }
        if self.max_gap == 0 {
            return Err(HoughError::InvalidParams("max_gap must be positive"));
        }
        if let Some(max) = self.max_length {
            if !(max >= self.min_length) {
                return Err(HoughError::InvalidParams("max_length must be at least min_length"));
            }
        }
        Ok(())
    }
}

/// Precomputed `(cos θ, sin θ)` for every accumulator row.
fn trig_table(theta_bins: usize) -> Vec<(f64, f64)> {
    (0..theta_bins)
        .map(|t| {
            let theta = t as f64 * PI / theta_bins as f64;
            (theta.cos(), theta.sin())
        })
        .collect()
}

/// Dense `theta_bins x r_bins` vote grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughAccumulator {
    theta_bins: usize,
    r_bins: usize,
    r_resolution: f64,
    r_max: f64,
    votes: Vec<u32>,
}

impl HoughAccumulator {
    fn empty(width: usize, height: usize, theta_bins: usize, r_resolution: f64) -> Self {
        let r_max = (width as f64).hypot(height as f64);
        let r_bins = (2.0 * r_max / r_resolution).ceil() as usize + 1;
        Self {
            theta_bins,
            r_bins,
            r_resolution,
            r_max,
            votes: vec![0; theta_bins * r_bins],
        }
    }

    pub fn theta_bins(&self) -> usize {
        self.theta_bins
    }

    pub fn r_bins(&self) -> usize {
        self.r_bins
    }

    pub fn get(&self, theta_bin: usize, r_bin: usize) -> u32 {
        self.votes[theta_bin * self.r_bins + r_bin]
    }

    pub fn row(&self, theta_bin: usize) -> &[u32] {
        &self.votes[theta_bin * self.r_bins..(theta_bin + 1) * self.r_bins]
    }

    #[inline]
    fn r_bin(&self, r: f64) -> usize {
        ((r + self.r_max) / self.r_resolution).round() as usize
    }

    /// Bin center of `(theta_bin, r_bin)` as a polar line.
    pub fn line_of(&self, theta_bin: usize, r_bin: usize) -> PolarLine {
        PolarLine {
            theta: theta_bin as f64 * PI / self.theta_bins as f64,
            r: r_bin as f64 * self.r_resolution - self.r_max,
        }
    }

    /// The bin a polar line falls into, wrapping `θ ≈ π` back to row 0.
    pub fn bin_of(&self, line: PolarLine) -> (usize, usize) {
        let step = PI / self.theta_bins as f64;
        let t = (line.theta / step).round() as usize;
        if t >= self.theta_bins {
            (0, self.r_bin(-line.r))
        } else {
            (t, self.r_bin(line.r))
        }
    }

    /// Up to `count` local maxima, strongest first. A bin is a peak when no
    /// bin within `radius` rows/columns has more votes (ties go to the
    /// earlier bin in row-major order).
    pub fn peaks(&self, count: usize, radius: usize) -> Vec<(PolarLine, u32)> {
        let mut found: Vec<(usize, usize, u32)> = Vec::new();
        let rad = radius as isize;
        for t in 0..self.theta_bins {
            for r in 0..self.r_bins {
                let v = self.get(t, r);
                if v == 0 {
                    continue;
                }
                let mut is_peak = true;
                'scan: for dt in -rad..=rad {
                    for dr in -rad..=rad {
                        if dt == 0 && dr == 0 {
                            continue;
                        }
                        let nt = t as isize + dt;
                        let nr = r as isize + dr;
                        if nt < 0 || nr < 0 || nt >= self.theta_bins as isize || nr >= self.r_bins as isize {
                            continue;
                        }
                        let nv = self.get(nt as usize, nr as usize);
                        let earlier = (nt, nr) < (t as isize, r as isize);
                        if nv > v || (nv == v && earlier) {
                            is_peak = false;
                            break 'scan;
                        }
                    }
                }
                if is_peak {
                    found.push((t, r, v));
                }
            }
        }
        found.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        found
            .into_iter()
            .take(count)
            .map(|(t, r, v)| (self.line_of(t, r), v))
            .collect()
    }
}

/// Standard Hough transform: every edge pixel votes once per θ row.
pub fn accumulate(edges: &EdgeMap, theta_bins: usize, r_resolution: f64) -> Result<HoughAccumulator, HoughError> {
    if theta_bins == 0 || !(r_resolution > 0.0) {
        return Err(HoughError::InvalidParams(
            "theta_bins and r_resolution must be positive",
        ));
    }
    let pixels = edges.edge_pixels();
    if pixels.is_empty() {
        return Err(HoughError::EmptyEdgeMap);
    }
    let mut acc = HoughAccumulator::empty(edges.width(), edges.height(), theta_bins, r_resolution);
    let trig = trig_table(theta_bins);
    for (x, y) in pixels {
        for (t, &(c, s)) in trig.iter().enumerate() {
            let r = acc.r_bin(x as f64 * c + y as f64 * s);
            acc.votes[t * acc.r_bins + r] += 1;
        }
    }
    Ok(acc)
}

/// Progressive probabilistic Hough transform.
///
/// Edge pixels are visited in a seeded random order. Each visited pixel
/// votes; once its strongest bin reaches `votes_min`, the line of that bin is
/// walked through the edge map in both directions, tolerating up to
/// `max_gap` missing pixels and stopping at `max_length`. Walked pixels are
/// retired; if the run is at least `min_length` long it is emitted and the
/// votes of its pixels are withdrawn.
pub fn probabilistic_lines(edges: &EdgeMap, params: &HoughParams, seed: u64) -> Result<Vec<LineSegment>, HoughError> {
    params.validate()?;
    let mut pixels = edges.edge_pixels();
    if pixels.is_empty() {
        return Err(HoughError::EmptyEdgeMap);
    }
    let (w, h) = (edges.width(), edges.height());
    let mut acc = HoughAccumulator::empty(w, h, params.theta_bins, params.r_resolution);
    let trig = trig_table(params.theta_bins);
    let mut mask: Vec<bool> = edges.binary().to_vec();
    let mut voted = vec![false; w * h];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pixels.shuffle(&mut rng);

    let max_length = params.max_length.unwrap_or(f64::INFINITY);
    let mut segments = Vec::new();

    for &(x, y) in &pixels {
        if !mask[y * w + x] {
            continue;
        }
        voted[y * w + x] = true;
        let mut best = (0u32, 0usize);
        for (t, &(c, s)) in trig.iter().enumerate() {
            let r = acc.r_bin(x as f64 * c + y as f64 * s);
            let slot = &mut acc.votes[t * acc.r_bins + r];
            *slot += 1;
            if *slot > best.0 {
                best = (*slot, t);
            }
        }
        if best.0 < params.votes_min {
            continue;
        }

        // Step one pixel along the major axis of the line direction.
        let (c, s) = trig[best.1];
        let (a, b) = (-s, c);
        let (dx0, dy0) = if a.abs() > b.abs() {
            (a.signum(), b / a.abs())
        } else {
            (a / b.abs(), b.signum())
        };

        // The second direction's length budget is measured from the far end
        // of the first one.
        let ends = walk_capped(&mask, w, h, (x, y), (dx0, dy0), params.max_gap, max_length);

        let length = ((ends[1].0 - ends[0].0) as f64).hypot((ends[1].1 - ends[0].1) as f64);
        let good = length >= params.min_length;

        for (k, &end) in ends.iter().enumerate() {
            let (dx, dy) = if k == 0 { (dx0, dy0) } else { (-dx0, -dy0) };
            let (mut px, mut py) = (x as f64, y as f64);
            loop {
                let (i, j) = (px.round() as i64, py.round() as i64);
                if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
                    break;
                }
                let idx = j as usize * w + i as usize;
                if mask[idx] {
                    if good && voted[idx] {
                        for (t, &(c, s)) in trig.iter().enumerate() {
                            let r = acc.r_bin(i as f64 * c + j as f64 * s);
                            acc.votes[t * acc.r_bins + r] -= 1;
                        }
                        voted[idx] = false;
                    }
                    mask[idx] = false;
                }
                if (i, j) == end {
                    break;
                }
                px += dx;
                py += dy;
            }
        }

        if good {
            segments.push(LineSegment::new(
                ends[0].0 as f64,
                ends[0].1 as f64,
                ends[1].0 as f64,
                ends[1].1 as f64,
            ));
        }
    }
    Ok(segments)
}

fn walk_capped(
    mask: &[bool],
    w: usize,
    h: usize,
    (x, y): (usize, usize),
    (dx0, dy0): (f64, f64),
    max_gap: usize,
    max_length: f64,
) -> [(i64, i64); 2] {
    let seed = (x as i64, y as i64);
    let mut ends = [seed; 2];
    for k in 0..2 {
        let (dx, dy) = if k == 0 { (dx0, dy0) } else { (-dx0, -dy0) };
        let anchor = if k == 0 { seed } else { ends[0] };
        let (mut px, mut py) = (x as f64, y as f64);
        let mut gap = 0usize;
        loop {
            px += dx;
            py += dy;
            let (i, j) = (px.round() as i64, py.round() as i64);
            if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
                break;
            }
            if ((i - anchor.0) as f64).hypot((j - anchor.1) as f64) > max_length {
                break;
            }
            if mask[j as usize * w + i as usize] {
                gap = 0;
                ends[k] = (i, j);
            } else {
                gap += 1;
                if gap > max_gap {
                    break;
                }
            }
        }
    }
    ends
}

/// Polar form of the infinite line through a segment.
pub fn segment_to_polar(s: &LineSegment) -> Result<PolarLine, HoughError> {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len = dx.hypot(dy);
    if len == 0.0 || !len.is_finite() {
        return Err(HoughError::DegenerateSegment);
    }
    // unit normal (cos θ, sin θ) = (-dy, dx) / len
    let theta = (dx / len).atan2(-dy / len);
    let r = s.x0 * (-dy / len) + s.y0 * (dx / len);
    Ok(PolarLine::new(theta, r))
}

/// `y = slope·x + intercept` for a non-vertical polar line.
pub fn polar_to_slope_intercept(l: &PolarLine) -> Result<(f64, f64), HoughError> {
    let (s, c) = l.theta.sin_cos();
    if s.abs() < 1e-9 {
        return Err(HoughError::VerticalLine);
    }
    Ok((-c / s, l.r / s))
}

/// Direction angle of a segment in degrees, folded into `[0, 180)`.
pub fn segment_angle(s: &LineSegment) -> Result<f64, HoughError> {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    if dx == 0.0 && dy == 0.0 {
        return Err(HoughError::DegenerateSegment);
    }
    Ok(direction_degrees(dx, dy))
}
