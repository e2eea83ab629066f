//! Frame feedback: texture statistics to detect scene changes, and the
//! previous frame's lane model to bridge short gaps and steady the output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvemath::TangentSample;
use crate::geom::{polyline_length, Point};
use crate::imaging::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("texture tile must be at least 4 px, got {0}")]
    TileTooSmall(usize),
    #[error("texture tile {tile} exceeds image size {width}x{height}")]
    TileTooLarge { tile: usize, width: usize, height: usize },
    #[error("texture needs a single-channel image, got {0} channels")]
    NotGray(usize),
    #[error("descriptor grids differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("previous frame {previous} does not precede current frame {current}")]
    FrameOrderViolation { previous: u64, current: u64 },
    #[error("invalid tracker parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub max_gap_fraction: f64,
    pub persistence_limit: u32,
    pub texture_tile: usize,
    pub texture_gate: f64,
    pub smooth_alpha: f64,
    /// Largest mean-x offset at which two lanes in consecutive frames are
    /// considered the same lane.
    pub match_radius: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            max_gap_fraction: 0.15,
            persistence_limit: 5,
            texture_tile: 32,
            texture_gate: 0.2,
            smooth_alpha: 0.7,
            match_radius: 40.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(0.0..=1.0).contains(&self.max_gap_fraction) {
            return Err(TrackerError::InvalidParams("max_gap_fraction must lie in [0, 1]"));
        }
        if self.texture_tile < 4 {
            return Err(TrackerError::TileTooSmall(self.texture_tile));
        }
        if !(self.texture_gate > 0.0) {
            return Err(TrackerError::InvalidParams("texture_gate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.smooth_alpha) {
            return Err(TrackerError::InvalidParams("smooth_alpha must lie in [0, 1]"));
        }
        if !(self.match_radius > 0.0) {
            return Err(TrackerError::InvalidParams("match_radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    /// Ordered along the dominant axis, bird's-eye pixels.
    pub polyline: Vec<Point>,
    pub band_label: Option<String>,
    pub tangent_field: Vec<TangentSample>,
    /// Consecutive frames this lane has been carried without being seen.
    pub missed_frames: u32,
}

impl Lane {
    pub fn new(polyline: Vec<Point>, band_label: Option<String>) -> Self {
        Self {
            polyline,
            band_label,
            tangent_field: Vec::new(),
            missed_frames: 0,
        }
    }

    pub fn dominant_axis(&self) -> Axis {
        Axis::of(&self.polyline)
    }

    pub fn mean_x(&self) -> f64 {
        if self.polyline.is_empty() {
            return 0.0;
        }
        self.polyline.iter().map(|p| p.x).sum::<f64>() / self.polyline.len() as f64
    }

    pub fn arc_length(&self) -> f64 {
        polyline_length(&self.polyline)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneModel {
    pub lanes: Vec<Lane>,
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    /// The axis along which the points extend furthest.
    pub fn of(points: &[Point]) -> Axis {
        let extent = |f: fn(&Point) -> f64| {
            let (lo, hi) = points
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        };
        if extent(|p| p.x) >= extent(|p| p.y) {
            Axis::X
        } else {
            Axis::Y
        }
    }

    pub fn along(self, p: Point) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }

    pub fn across(self, p: Point) -> f64 {
        match self {
            Axis::X => p.y,
            Axis::Y => p.x,
        }
    }

    pub fn point(self, along: f64, across: f64) -> Point {
        match self {
            Axis::X => Point::new(along, across),
            Axis::Y => Point::new(across, along),
        }
    }
}

/// Whether the polyline has at least two points and strictly increases or
/// strictly decreases along `axis`.
pub fn is_monotonic(polyline: &[Point], axis: Axis) -> bool {
    if polyline.len() < 2 {
        return false;
    }
    let inc = polyline.windows(2).all(|w| axis.along(w[1]) > axis.along(w[0]));
    let dec = polyline.windows(2).all(|w| axis.along(w[1]) < axis.along(w[0]));
    inc || dec
}

/// Cross-axis coordinate of a monotonic polyline at `along`, by linear
/// interpolation; `None` outside its range.
fn across_at(polyline: &[Point], axis: Axis, along: f64) -> Option<f64> {
    let increasing = polyline.len() >= 2 && axis.along(polyline[polyline.len() - 1]) > axis.along(polyline[0]);
    let key = |p: &Point| if increasing { axis.along(*p) } else { -axis.along(*p) };
    let target = if increasing { along } else { -along };
    let idx = polyline.partition_point(|p| key(p) < target);
    if idx == polyline.len() {
        return None;
    }
    let b = polyline[idx];
    if key(&b) == target {
        return Some(axis.across(b));
    }
    let a = *polyline.get(idx.checked_sub(1)?)?;
    let t = (target - key(&a)) / (key(&b) - key(&a));
    Some(axis.across(a) + t * (axis.across(b) - axis.across(a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureDescriptor {
    pub tile: usize,
    pub cols: usize,
    pub rows: usize,
    /// Row-major `(mean, variance)` per tile.
    pub tile_stats: Vec<(f64, f64)>,
}

/// Per-tile intensity mean and variance. Edge tiles cover whatever remains
/// of the image, so the grid is `ceil(w / tile) x ceil(h / tile)`.
pub fn texture_descriptor(img: &Image, tile: usize) -> Result<TextureDescriptor, TrackerError> {
    if img.channels() != 1 {
        return Err(TrackerError::NotGray(img.channels()));
    }
    if tile < 4 {
        return Err(TrackerError::TileTooSmall(tile));
    }
    let (w, h) = (img.width(), img.height());
    if tile > w.min(h) {
        return Err(TrackerError::TileTooLarge {
            tile,
            width: w,
            height: h,
        });
    }
    let cols = w.div_ceil(tile);
    let rows = h.div_ceil(tile);
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); cols * rows];
    for y in 0..h {
        let row = &img.data()[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            let cell = &mut sums[(y / tile) * cols + x / tile];
            let v = v as f64;
            cell.0 += v;
            cell.1 += v * v;
            cell.2 += 1;
        }
    }
    let tile_stats = sums
        .into_iter()
        .map(|(s, s2, n)| {
            let n = n as f64;
            let mean = s / n;
            (mean, (s2 / n - mean * mean).max(0.0))
        })
        .collect();
    Ok(TextureDescriptor {
        tile,
        cols,
        rows,
        tile_stats,
    })
}

const TEXTURE_EPS: f64 = 1e-6;

/// Mean over tiles of `|Δmean| / (mean_a + mean_b + ε) + |Δvar| / (var_a + var_b + ε)`.
///
/// Each term is a metric on non-negative reals, so the sum is a metric on
/// descriptors of one grid shape.
pub fn texture_distance(a: &TextureDescriptor, b: &TextureDescriptor) -> Result<f64, TrackerError> {
    let shape = |d: &TextureDescriptor| (d.tile, d.cols, d.rows);
    if shape(a) != shape(b) {
        return Err(TrackerError::ShapeMismatch(shape(a), shape(b)));
    }
    let term = |p: f64, q: f64| (p - q).abs() / (p.abs() + q.abs() + TEXTURE_EPS);
    let total: f64 = a
        .tile_stats
        .iter()
        .zip(&b.tile_stats)
        .map(|(&(ma, va), &(mb, vb))| term(ma, mb) + term(va, vb))
        .sum();
    Ok(total / a.tile_stats.len().max(1) as f64)
}

/// How far apart two lanes run: the mean cross-axis offset where they
/// overlap, or the difference of mean x when they do not.
fn lane_distance(current: &Lane, previous: &Lane) -> f64 {
    if previous.polyline.len() >= 2 {
        let axis = Axis::of(&previous.polyline);
        if is_monotonic(&previous.polyline, axis) {
            if let Some(off) = offset_from(current, previous, axis) {
                return off.abs();
            }
        }
    }
    (current.mean_x() - previous.mean_x()).abs()
}

/// Pairs each current lane with a distinct previous lane: same band label,
/// then nearest by `lane_distance` within `radius`. Closest pairs are taken
/// first.
fn correspond(current: &[Lane], previous: &[Lane], radius: f64) -> Vec<Option<usize>> {
    let mut candidates = Vec::new();
    for (i, c) in current.iter().enumerate() {
        for (j, p) in previous.iter().enumerate() {
            if c.band_label != p.band_label {
                continue;
            }
            let d = lane_distance(c, p);
            if d <= radius {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; current.len()];
    let mut taken = vec![false; previous.len()];
    for (_, i, j) in candidates {
        if out[i].is_none() && !taken[j] {
            out[i] = Some(j);
            taken[j] = true;
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Bridges short gaps in the current lanes with the matching span of the
/// previous frame's lanes.
///
/// A gap is a step longer than 3x the median point spacing. Its length is
/// taken as the step minus two median spacings, since the samples on either
/// side can each sit up to one spacing away from the true gap edge, and it is
/// filled when that is at most `max_gap_fraction` of the lane's arc length
/// (the longer of the current and previous polylines). Filling inserts the
/// previous lane's points that fall strictly inside the gap along the
/// dominant axis, shifted across the axis by an offset blended linearly
/// between the two gap ends. Existing points never move.
///
/// A gap can split one lane into several current lanes. Fragments that carry
/// the same band label and run along the same previous lane are joined into
/// one polyline first, but only when every junction is short enough to be
/// filled; otherwise they stay separate lanes.
///
/// Previous lanes with no counterpart are carried over unchanged for up to
/// `persistence_limit` consecutive frames. Returns the model and the number
/// of gaps filled.
pub fn fill_discontinuities(
    current: &LaneModel,
    previous: &LaneModel,
    params: &TrackerParams,
) -> Result<(LaneModel, usize), TrackerError> {
    if previous.frame_index + 1 != current.frame_index {
        return Err(TrackerError::FrameOrderViolation {
            previous: previous.frame_index,
            current: current.frame_index,
        });
    }
    let joined = join_fragments(&current.lanes, &previous.lanes, params);
    let matches = correspond(&joined, &previous.lanes, params.match_radius);
    let mut filled = 0;
    let mut lanes = Vec::with_capacity(joined.len());
    for (lane, m) in joined.iter().zip(&matches) {
        let mut lane = lane.clone();
        lane.missed_frames = 0;
        if let Some(j) = *m {
            filled += fill_lane(&mut lane, &previous.lanes[j], params.max_gap_fraction);
        }
        lanes.push(lane);
    }
    for (j, prev) in previous.lanes.iter().enumerate() {
        // a lane seen only as unjoined fragments is still present
        let seen = joined
            .iter()
            .any(|c| c.band_label == prev.band_label && lane_distance(c, prev) <= params.match_radius);
        if matches.contains(&Some(j)) || seen {
            continue;
        }
        if prev.missed_frames < params.persistence_limit {
            let mut carried = prev.clone();
            carried.missed_frames += 1;
            lanes.push(carried);
        }
    }
    Ok((
        LaneModel {
            lanes,
            frame_index: current.frame_index,
        },
        filled,
    ))
}

/// Mean cross-axis offset of `lane` from `prev` over their common range.
fn offset_from(lane: &Lane, prev: &Lane, axis: Axis) -> Option<f64> {
    let offsets: Vec<f64> = lane
        .polyline
        .iter()
        .filter_map(|&p| across_at(&prev.polyline, axis, axis.along(p)).map(|q| axis.across(p) - q))
        .collect();
    (!offsets.is_empty()).then(|| offsets.iter().sum::<f64>() / offsets.len() as f64)
}

fn join_fragments(current: &[Lane], previous: &[Lane], params: &TrackerParams) -> Vec<Lane> {
    // each fragment goes to the previous lane it runs closest to
    let mut owner: Vec<Option<(usize, f64)>> = vec![None; current.len()];
    for (i, lane) in current.iter().enumerate() {
        if lane.polyline.len() < 2 {
            continue;
        }
        for (j, prev) in previous.iter().enumerate() {
            if prev.band_label != lane.band_label || prev.polyline.len() < 2 {
                continue;
            }
            let axis = Axis::of(&prev.polyline);
            if !is_monotonic(&prev.polyline, axis) {
                continue;
            }
            let Some(off) = offset_from(lane, prev, axis).map(f64::abs) else {
                continue;
            };
            if off <= params.match_radius && owner[i].is_none_or(|(_, best)| off < best) {
                owner[i] = Some((j, off));
            }
        }
    }

    let mut consumed = vec![false; current.len()];
    let mut replacement: Vec<Option<Lane>> = vec![None; current.len()];
    for (j, prev) in previous.iter().enumerate() {
        let members: Vec<usize> = (0..current.len())
            .filter(|&i| owner[i].is_some_and(|(o, _)| o == j))
            .collect();
        if members.len() < 2 {
            continue;
        }
        let axis = Axis::of(&prev.polyline);
        let range = |l: &Lane| {
            let v: Vec<f64> = l.polyline.iter().map(|&p| axis.along(p)).collect();
            (
                v.iter().copied().fold(f64::INFINITY, f64::min),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let mut order = members.clone();
        order.sort_by(|&a, &b| range(&current[a]).0.total_cmp(&range(&current[b]).0));
        if order
            .windows(2)
            .any(|w| range(&current[w[0]]).1 >= range(&current[w[1]]).0)
        {
            continue;
        }
        let mut points: Vec<Point> = order
            .iter()
            .flat_map(|&i| current[i].polyline.iter().copied())
            .collect();
        points.sort_by(|p, q| axis.along(*p).total_cmp(&axis.along(*q)));
        let inner: Vec<f64> = order
            .iter()
            .flat_map(|&i| current[i].polyline.windows(2).map(|w| w[0].distance(w[1])))
            .collect();
        let spacing = median(&mut inner.clone());
        let arc = polyline_length(&points).max(prev.arc_length());
        let junctions_fillable = order.windows(2).all(|w| {
            let (a, b) = (&current[w[0]].polyline, &current[w[1]].polyline);
            let end = *a
                .iter()
                .max_by(|p, q| axis.along(**p).total_cmp(&axis.along(**q)))
                .expect("nonempty");
            let start = *b
                .iter()
                .min_by(|p, q| axis.along(**p).total_cmp(&axis.along(**q)))
                .expect("nonempty");
            end.distance(start) - 2.0 * spacing <= params.max_gap_fraction * arc
        });
        if !junctions_fillable {
            continue;
        }
        let first = &current[order[0]];
        let mut lane = Lane {
            polyline: points,
            band_label: first.band_label.clone(),
            tangent_field: order
                .iter()
                .flat_map(|&i| current[i].tangent_field.iter().copied())
                .collect(),
            missed_frames: 0,
        };
        lane.tangent_field
            .sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        for &i in &order {
            consumed[i] = true;
        }
        replacement[*members.iter().min().expect("two members")] = Some(lane);
    }

    let mut out = Vec::with_capacity(current.len());
    for (i, lane) in current.iter().enumerate() {
        if let Some(joined) = replacement[i].take() {
            out.push(joined);
        } else if !consumed[i] {
            out.push(lane.clone());
        }
    }
    out
}

fn fill_lane(lane: &mut Lane, prev: &Lane, max_gap_fraction: f64) -> usize {
    let pts = &lane.polyline;
    if pts.len() < 3 {
        return 0;
    }
    let axis = Axis::of(pts);
    if !is_monotonic(pts, axis) || !is_monotonic(&prev.polyline, axis) {
        return 0;
    }
    let steps: Vec<f64> = pts.windows(2).map(|w| w[0].distance(w[1])).collect();
    let spacing = median(&mut steps.clone());
    let arc = lane.arc_length().max(prev.arc_length());
    let increasing = axis.along(pts[pts.len() - 1]) > axis.along(pts[0]);

    let mut out = Vec::with_capacity(pts.len());
    let mut count = 0;
    for (i, &step) in steps.iter().enumerate() {
        out.push(pts[i]);
        if !(step > 3.0 * spacing) || step - 2.0 * spacing > max_gap_fraction * arc {
            continue;
        }
        let (a, b) = (pts[i], pts[i + 1]);
        let (da, db) = (axis.along(a), axis.along(b));
        let (Some(pa), Some(pb)) = (across_at(&prev.polyline, axis, da), across_at(&prev.polyline, axis, db)) else {
            continue;
        };
        let (oa, ob) = (axis.across(a) - pa, axis.across(b) - pb);
        let mut inside: Vec<Point> = prev
            .polyline
            .iter()
            .copied()
            .filter(|&p| {
                let d = axis.along(p);
                d > da.min(db) && d < da.max(db)
            })
            .map(|p| {
                let d = axis.along(p);
                let t = (d - da) / (db - da);
                axis.point(d, axis.across(p) + oa + t * (ob - oa))
            })
            .collect();
        if inside.is_empty() {
            continue;
        }
        inside.sort_by(|p, q| {
            let o = axis.along(*p).total_cmp(&axis.along(*q));
            if increasing {
                o
            } else {
                o.reverse()
            }
        });
        out.extend(inside);
        count += 1;
    }
    out.push(pts[pts.len() - 1]);
    lane.polyline = out;
    count
}

/// Exponential blend of each lane with its previous-frame counterpart:
/// every point's cross-axis coordinate becomes `alpha·current +
/// (1-alpha)·previous`, where the previous lane is sampled at the same
/// dominant-axis position. Points outside the previous lane's range and
/// lanes without a counterpart pass through.
pub fn smooth_model(current: &LaneModel, previous: &LaneModel, alpha: f64, match_radius: f64) -> LaneModel {
    let matches = correspond(&current.lanes, &previous.lanes, match_radius);
    let lanes = current
        .lanes
        .iter()
        .zip(&matches)
        .map(|(lane, m)| {
            let mut lane = lane.clone();
            let Some(prev) = m.map(|j| &previous.lanes[j]) else {
                return lane;
            };
            if lane.missed_frames > 0 || lane.polyline.len() < 2 {
                return lane;
            }
            let axis = Axis::of(&lane.polyline);
            if !is_monotonic(&prev.polyline, axis) {
                return lane;
            }
            for p in lane.polyline.iter_mut() {
                if let Some(q) = across_at(&prev.polyline, axis, axis.along(*p)) {
                    let c = axis.across(*p);
                    *p = axis.point(axis.along(*p), alpha * c + (1.0 - alpha) * q);
                }
            }
            lane
        })
        .collect();
    LaneModel {
        lanes,
        frame_index: current.frame_index,
    }
}
