//! Noise suppression by grouping segments whose weighted centroids are close
//! and whose angles agree, followed by vote thresholding.
//!
//! Linkage is single-linkage over connected components, so the outcome does
//! not depend on input order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvemath::WeightedPoint;
use crate::geom::{angle_distance, circular_mean_degrees, Point};
use crate::hough::{segment_angle, LineSegment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no items to cluster")]
    EmptyInput,
    #[error("invalid cluster parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub centroid_radius: f64,
    pub angle_tolerance: f64,
    /// Largest distance of either centroid from the other segment's line.
    /// Neighbours along one curve sit nearly on each other's lines; a
    /// parallel stroke a few pixels over does not.
    pub lateral_tolerance: f64,
    pub votes_min: u32,
    /// Segments whose nearest endpoints are within this distance also link
    /// when their angles differ by up to `joint_angle`. Zero disables.
    pub joint_gap: f64,
    pub joint_angle: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            centroid_radius: 16.0,
            angle_tolerance: 20.0,
            lateral_tolerance: 5.0,
            votes_min: 6,
            joint_gap: 4.0,
            joint_angle: 60.0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.centroid_radius > 0.0) {
            return Err(ClusterError::InvalidParams("centroid_radius must be positive"));
        }
        if !(self.angle_tolerance > 0.0) {
            return Err(ClusterError::InvalidParams("angle_tolerance must be positive"));
        }
        if !(self.lateral_tolerance > 0.0) {
            return Err(ClusterError::InvalidParams("lateral_tolerance must be positive"));
        }
        if !(self.joint_gap >= 0.0) || !(self.joint_angle >= 0.0) {
            return Err(ClusterError::InvalidParams(
                "joint_gap and joint_angle must be non-negative",
            ));
        }
        if self.votes_min == 0 {
            return Err(ClusterError::InvalidParams("votes_min must be positive"));
        }
        Ok(())
    }
}

/// The replacement line for a cluster: where it sits and which way it points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub centroid: WeightedPoint,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveCluster {
    pub members: Vec<(LineSegment, WeightedPoint)>,
    pub vote: u32,
    pub representative: Representative,
    pub mass: f64,
}

impl CurveCluster {
    fn from_members(mut members: Vec<(LineSegment, WeightedPoint)>) -> Self {
        members.sort_by(item_order);
        let mass: f64 = members.iter().map(|(_, c)| c.mass).sum();
        let (sx, sy) = members
            .iter()
            .fold((0.0, 0.0), |(sx, sy), (_, c)| (sx + c.mass * c.x, sy + c.mass * c.y));
        let (x, y) = if mass > 0.0 {
            (sx / mass, sy / mass)
        } else {
            let n = members.len() as f64;
            (
                members.iter().map(|(_, c)| c.x).sum::<f64>() / n,
                members.iter().map(|(_, c)| c.y).sum::<f64>() / n,
            )
        };
        let angles: Vec<f64> = members.iter().map(|(s, _)| item_angle(s)).collect();
        let angle = circular_mean_degrees(angles.iter().map(|&a| (a, 1.0))).unwrap_or(angles[0]);
        Self {
            vote: members.len() as u32,
            representative: Representative {
                centroid: WeightedPoint { x, y, mass },
                angle,
            },
            mass,
            members,
        }
    }

    /// A short segment through the representative centroid along its angle.
    pub fn representative_segment(&self, half_length: f64) -> LineSegment {
        let r = &self.representative;
        let (s, c) = r.angle.to_radians().sin_cos();
        LineSegment::new(
            r.centroid.x - c * half_length,
            r.centroid.y - s * half_length,
            r.centroid.x + c * half_length,
            r.centroid.y + s * half_length,
        )
    }

    pub fn member_centroids(&self) -> impl Iterator<Item = Point> + '_ {
        self.members.iter().map(|(_, c)| c.point())
    }
}

fn item_angle(s: &LineSegment) -> f64 {
    segment_angle(s).unwrap_or(0.0)
}

fn item_order(a: &(LineSegment, WeightedPoint), b: &(LineSegment, WeightedPoint)) -> Ordering {
    let key = |(s, c): &(LineSegment, WeightedPoint)| [c.x, c.y, c.mass, s.x0, s.y0, s.x1, s.y1];
    key(a)
        .iter()
        .zip(key(b).iter())
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Canonical cluster order: vote descending, then mass descending, then
/// representative x ascending.
fn cluster_order(a: &CurveCluster, b: &CurveCluster) -> Ordering {
    b.vote
        .cmp(&a.vote)
        .then(b.mass.total_cmp(&a.mass))
        .then(a.representative.centroid.x.total_cmp(&b.representative.centroid.x))
        .then(a.representative.centroid.y.total_cmp(&b.representative.centroid.y))
        .then_with(|| match (a.members.first(), b.members.first()) {
            (Some(p), Some(q)) => item_order(p, q),
            _ => Ordering::Equal,
        })
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage grouping: two items link when their centroids are within
/// `centroid_radius`, their angles within `angle_tolerance` (circularly) and
/// each centroid within `lateral_tolerance` of the other segment's line, or
/// when their endpoints meet within `joint_gap` at a turn of at most
/// `joint_angle`.
pub fn cluster_lines(
    items: &[(LineSegment, WeightedPoint)],
    params: &ClusterParams,
) -> Result<Vec<CurveCluster>, ClusterError> {
    params.validate()?;
    if items.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let angles: Vec<f64> = items.iter().map(|(s, _)| item_angle(s)).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| items[i].1.x.total_cmp(&items[j].1.x));

    let mut sets = DisjointSet::new(items.len());
    // a segment's centroid is within half its length of either endpoint
    let longest = items.iter().map(|(s, _)| s.length()).fold(0.0, f64::max);
    let reach = params.centroid_radius.max(longest + params.joint_gap);
    for (k, &i) in order.iter().enumerate() {
        let ci = items[i].1;
        for &j in &order[k + 1..] {
            let cj = items[j].1;
            if cj.x - ci.x > reach {
                break;
            }
            let turn = angle_distance(angles[i], angles[j]);
            let near = ci.point().distance(cj.point()) <= params.centroid_radius
                && turn <= params.angle_tolerance
                && lateral(&items[i].0, cj.point()).max(lateral(&items[j].0, ci.point())) <= params.lateral_tolerance;
            let joined = params.joint_gap > 0.0
                && turn <= params.joint_angle
                && endpoint_gap(&items[i].0, &items[j].0) <= params.joint_gap;
            if near || joined {
                sets.union(i, j);
            }
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<(LineSegment, WeightedPoint)>> =
        std::collections::BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        groups.entry(sets.find(i)).or_default().push(*item);
    }
    let mut clusters: Vec<CurveCluster> = groups.into_values().map(CurveCluster::from_members).collect();
    clusters.sort_by(cluster_order);
    Ok(clusters)
}

/// Distance from `p` to the infinite line through `s`.
fn lateral(s: &LineSegment, p: Point) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return p.distance(Point::new(s.x0, s.y0));
    }
    ((p.x - s.x0) * dy - (p.y - s.y0) * dx).abs() / len
}

fn endpoint_gap(a: &LineSegment, b: &LineSegment) -> f64 {
    let ends = |s: &LineSegment| [Point::new(s.x0, s.y0), Point::new(s.x1, s.y1)];
    ends(a)
        .iter()
        .flat_map(|p| ends(b).map(|q| p.distance(q)))
        .fold(f64::INFINITY, f64::min)
}

/// Keeps clusters whose vote reaches `votes_min`, preserving order.
pub fn threshold_votes(clusters: Vec<CurveCluster>, votes_min: u32) -> Vec<CurveCluster> {
    clusters.into_iter().filter(|c| c.vote >= votes_min).collect()
}

/// The cluster with the greatest accumulated mass, used as the measure of
/// boundary thickness. Ties: higher vote, then smaller representative x.
pub fn select_heaviest(clusters: &[CurveCluster]) -> Result<&CurveCluster, ClusterError> {
    clusters
        .iter()
        .min_by(|a, b| {
            b.mass
                .total_cmp(&a.mass)
                .then(b.vote.cmp(&a.vote))
                .then(a.representative.centroid.x.total_cmp(&b.representative.centroid.x))
        })
        .ok_or(ClusterError::EmptyInput)
}
