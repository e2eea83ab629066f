//! Slope signatures: a curve described by its tangent angles read from left
//! to right, plus matching, template classification and angle bands.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvemath::TangentSample;
use crate::geom::{
    angle_distance, circular_mean_degrees, direction_degrees, fold_degrees, polyline_length, signed_angle_diff, Point,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("need at least 4 tangent samples, got {0}")]
    InsufficientSamples(usize),
    #[error("all samples share one x position")]
    DegenerateSpan,
    #[error("signature lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("signature length must be at least 2")]
    InvalidLength,
    #[error("invalid angle band {label:?}: [{low}, {high})")]
    InvalidBand { label: String, low: f64, high: f64 },
    #[error("angle bands {0:?} and {1:?} overlap")]
    OverlappingBands(String, String),
    #[error("malformed signature record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSignature {
    pub angles: Vec<f64>,
    pub arc_span: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveClass {
    Line,
    Parabola,
    Circle,
    Ellipse,
    Hyperbola,
    Unknown,
}

impl CurveClass {
    pub const STANDARD: [CurveClass; 5] = [
        CurveClass::Line,
        CurveClass::Parabola,
        CurveClass::Circle,
        CurveClass::Ellipse,
        CurveClass::Hyperbola,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CurveClass::Line => "line",
            CurveClass::Parabola => "parabola",
            CurveClass::Circle => "circle",
            CurveClass::Ellipse => "ellipse",
            CurveClass::Hyperbola => "hyperbola",
            CurveClass::Unknown => "unknown",
        }
    }
}

impl fmt::Display for CurveClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveClass {
    type Err = SignatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "line" => CurveClass::Line,
            "parabola" => CurveClass::Parabola,
            "circle" => CurveClass::Circle,
            "ellipse" => CurveClass::Ellipse,
            "hyperbola" => CurveClass::Hyperbola,
            "unknown" => CurveClass::Unknown,
            other => return Err(SignatureError::BadRecord(format!("unknown class {other:?}"))),
        })
    }
}

/// Sorts samples by contact x and resamples their angles at `length`
/// evenly spaced x positions.
///
/// Each position takes the circular mean of the samples within half a step
/// of it. A closed or folded curve puts two branches over the same x, and
/// averaging them would blend mirrored tangents into a meaningless axis, so
/// for such curves only the upper branch counts. A curve is taken as folded
/// when at least a quarter of the positions see a y gap wider than three
/// typical sample spacings within a step and a half. The branches are then
/// split at a midline: the centre of each position's y range, median
/// smoothed over neighbouring positions so that a locally missing branch
/// does not drag it. Positions left empty are filled by wrap-aware linear
/// interpolation between their nearest filled neighbours.
pub fn build_signature(samples: &[TangentSample], length: usize) -> Result<SlopeSignature, SignatureError> {
    if length < 2 {
        return Err(SignatureError::InvalidLength);
    }
    if samples.len() < 4 {
        return Err(SignatureError::InsufficientSamples(samples.len()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.angle.total_cmp(&b.angle))
    });
    let x0 = sorted[0].x;
    let x1 = sorted[sorted.len() - 1].x;
    let span = x1 - x0;
    if !(span > 1e-9) {
        return Err(SignatureError::DegenerateSpan);
    }
    let step = span / (length - 1) as f64;
    let branch_gap = 3.0 * typical_spacing(&sorted);

    let window = |center: f64, half: f64| {
        let lo = sorted.partition_point(|s| s.x < center - half);
        sorted[lo..].iter().take_while(move |s| s.x <= center + half)
    };
    let mut mids: Vec<Option<f64>> = Vec::with_capacity(length);
    let mut gapped = 0;
    for i in 0..length {
        let mut ys: Vec<f64> = window(x0 + i as f64 * step, 1.5 * step).map(|s| s.y).collect();
        ys.sort_by(f64::total_cmp);
        if ys.windows(2).any(|w| w[1] - w[0] > branch_gap) {
            gapped += 1;
        }
        mids.push((!ys.is_empty()).then(|| 0.5 * (ys[0] + ys[ys.len() - 1])));
    }
    let folded = 4 * gapped >= length;

    let mut bins: Vec<Option<f64>> = vec![None; length];
    for (i, bin) in bins.iter_mut().enumerate() {
        let center = x0 + i as f64 * step;
        let cut = if folded {
            let mut near: Vec<f64> = mids[i.saturating_sub(3)..(i + 4).min(length)]
                .iter()
                .flatten()
                .copied()
                .collect();
            if near.is_empty() {
                continue;
            }
            median(&mut near)
        } else {
            f64::INFINITY
        };
        *bin = circular_mean_degrees(
            window(center, 0.5 * step)
                .filter(|s| s.y <= cut)
                .map(|s| (s.angle, 1.0)),
        );
    }

    drop_strays(&mut bins);
    let filled: Vec<usize> = (0..length).filter(|&i| bins[i].is_some()).collect();
    if filled.is_empty() {
        // every bin cancelled out; fall back to the overall mean orientation
        let a = circular_mean_degrees(sorted.iter().map(|s| (s.angle, 1.0))).unwrap_or(sorted[0].angle);
        return Ok(SlopeSignature {
            angles: vec![a; length],
            arc_span: arc_span(&sorted),
        });
    }
    let mut angles = vec![0.0; length];
    for (i, angle) in angles.iter_mut().enumerate() {
        *angle = match bins[i] {
            Some(a) => a,
            None => {
                let right = filled.partition_point(|&j| j < i);
                match (right.checked_sub(1).map(|k| filled[k]), filled.get(right)) {
                    (Some(l), Some(&r)) => {
                        let al = bins[l].unwrap();
                        let t = (i - l) as f64 / (r - l) as f64;
                        let before = right.checked_sub(2).map(|k| filled[k]);
                        let after = filled.get(right + 1).copied();
                        fold_degrees(al + t * bridge_turn(&bins, before, l, r, after))
                    }
                    (Some(l), None) => bins[l].unwrap(),
                    (None, Some(&r)) => bins[r].unwrap(),
                    (None, None) => unreachable!(),
                }
            }
        };
    }
    Ok(SlopeSignature {
        angles,
        arc_span: arc_span(&sorted),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Clears a filled position that stands alone inside a run of empty ones
/// and disagrees badly with the straight blend of its filled neighbours:
/// typically a single stray sample near an unsampled tip.
fn drop_strays(bins: &mut [Option<f64>]) {
    const STRAY: f64 = 30.0;
    let filled: Vec<usize> = (0..bins.len()).filter(|&i| bins[i].is_some()).collect();
    for w in filled.windows(3) {
        let (l, i, r) = (w[0], w[1], w[2]);
        if i - l < 2 || r - i < 2 {
            continue;
        }
        let (Some(al), Some(a), Some(ar)) = (bins[l], bins[i], bins[r]) else {
            continue;
        };
        let t = (i - l) as f64 / (r - l) as f64;
        let blend = fold_degrees(al + t * signed_angle_diff(al, ar));
        if angle_distance(a, blend) > STRAY {
            bins[i] = None;
        }
    }
}

/// Rotation from position `l` to `r` across empty positions. Normally the
/// short way round, but when the filled positions on both sides keep turning
/// the same way and the short way would reverse that, the curve has swept
/// through an unsampled tip and the long way is taken.
fn bridge_turn(bins: &[Option<f64>], before: Option<usize>, l: usize, r: usize, after: Option<usize>) -> f64 {
    let at = |k: usize| bins[k].expect("filled position");
    let short = signed_angle_diff(at(l), at(r));
    let (Some(b), Some(a)) = (before, after) else {
        return short;
    };
    let rate_in = signed_angle_diff(at(b), at(l)) / (l - b) as f64;
    let rate_out = signed_angle_diff(at(r), at(a)) / (a - r) as f64;
    const MIN_RATE: f64 = 1.0;
    let steady = rate_in.abs() >= MIN_RATE && rate_out.abs() >= MIN_RATE && rate_in.signum() == rate_out.signum();
    if steady && short != 0.0 && short.signum() != rate_in.signum() {
        short + 180.0 * rate_in.signum()
    } else {
        short
    }
}

/// Median nearest-neighbour distance; `sorted` is ordered by x.
fn typical_spacing(sorted: &[TangentSample]) -> f64 {
    let mut nearest: Vec<f64> = (0..sorted.len())
        .map(|i| {
            let p = sorted[i].point();
            let mut best = f64::INFINITY;
            for q in &sorted[i + 1..] {
                if q.x - p.x >= best {
                    break;
                }
                best = best.min(p.distance(q.point()));
            }
            for q in sorted[..i].iter().rev() {
                if p.x - q.x >= best {
                    break;
                }
                best = best.min(p.distance(q.point()));
            }
            best
        })
        .collect();
    median(&mut nearest)
}

fn arc_span(sorted: &[TangentSample]) -> f64 {
    let points: Vec<Point> = sorted.iter().map(TangentSample::point).collect();
    polyline_length(&points)
}

/// Fraction of positions whose circular angle difference is within
/// `angle_tol`, and whether that fraction reaches `threshold`.
pub fn match_signature(
    candidate: &SlopeSignature,
    reference: &SlopeSignature,
    angle_tol: f64,
    threshold: f64,
) -> Result<(f64, bool), SignatureError> {
    let (score, _) = score_pair(candidate, reference, angle_tol)?;
    Ok((score, score >= threshold))
}

fn score_pair(a: &SlopeSignature, b: &SlopeSignature, angle_tol: f64) -> Result<(f64, f64), SignatureError> {
    if a.angles.len() != b.angles.len() {
        return Err(SignatureError::LengthMismatch(a.angles.len(), b.angles.len()));
    }
    if a.angles.is_empty() {
        return Ok((1.0, 0.0));
    }
    let n = a.angles.len();
    let mut hits = 0usize;
    let mut total_err = 0.0;
    for (&p, &q) in a.angles.iter().zip(&b.angles) {
        let d = angle_distance(p, q);
        total_err += d;
        if d <= angle_tol {
            hits += 1;
        }
    }
    Ok((hits as f64 / n as f64, total_err / n as f64))
}

/// Template signatures grouped by curve class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignatureLibrary {
    templates: BTreeMap<CurveClass, Vec<SlopeSignature>>,
}

impl SignatureLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: CurveClass, sig: SlopeSignature) {
        self.templates.entry(class).or_default().push(sig);
    }

    pub fn is_empty(&self) -> bool {
        self.templates.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.templates.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CurveClass, &SlopeSignature)> {
        self.templates
            .iter()
            .flat_map(|(&class, sigs)| sigs.iter().map(move |s| (class, s)))
    }

    /// Analytically generated templates over fixed parameter grids. Curves
    /// are sampled in a normalized frame `x ∈ [-1, 1]`; a signature only
    /// depends on shape, not on scale or position.
    pub fn standard(length: usize) -> Result<Self, SignatureError> {
        let mut lib = Self::new();
        for k in 0..36 {
            let a = k as f64 * 5.0;
            lib.insert(
                CurveClass::Line,
                SlopeSignature {
                    angles: vec![a; length],
                    arc_span: 2.0,
                },
            );
        }
        // open curves also come with their vertex shifted off centre
        const SHIFTS: [f64; 5] = [-0.16, -0.08, 0.0, 0.08, 0.16];
        for &end_slope in &[0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.25, 4.0, 5.0, 6.5, 9.0] {
            for sign in [1.0, -1.0] {
                let a = sign * end_slope / 2.0;
                for shift in SHIFTS {
                    lib.insert(
                        CurveClass::Parabola,
                        template(length, |t| {
                            let x = 2.0 * t - 1.0 + shift;
                            (Point::new(x, a * x * x), (1.0, 2.0 * a * x))
                        })?,
                    );
                    // opening sideways
                    lib.insert(
                        CurveClass::Parabola,
                        template(length, |t| {
                            let y = 2.0 * t - 1.0 + shift;
                            (Point::new(a * y * y, y), (2.0 * a * y, 1.0))
                        })?,
                    );
                }
            }
        }
        for &r in &[0.5, 1.0, 1.5, 2.0, 3.0] {
            lib.insert(CurveClass::Circle, conic_template(length, r, r)?);
        }
        for &aspect in &[1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 5.0] {
            lib.insert(CurveClass::Ellipse, conic_template(length, aspect, 1.0)?);
            lib.insert(CurveClass::Ellipse, conic_template(length, 1.0, aspect)?);
        }
        // y = s·m·sqrt(c² + x²): eccentricity sqrt(1 + m²), vertex sharpness c
        for &m in &[0.5, 0.6, 0.75, 0.9, 1.1, 1.3, 1.5, 1.8, 2.2, 2.7, 3.2] {
            for &c in &[0.1, 0.15, 0.2, 0.3, 0.4] {
                for sign in [1.0, -1.0] {
                    for shift in SHIFTS {
                        lib.insert(
                            CurveClass::Hyperbola,
                            template(length, |t| {
                                let x = 2.0 * t - 1.0 + shift;
                                let root = (c * c + x * x).sqrt();
                                (Point::new(x, sign * m * root), (1.0, sign * m * x / root))
                            })?,
                        );
                    }
                }
            }
        }
        Ok(lib)
    }
}

const TEMPLATE_SAMPLES: usize = 1024;

fn template(length: usize, curve: impl Fn(f64) -> (Point, (f64, f64))) -> Result<SlopeSignature, SignatureError> {
    let samples: Vec<TangentSample> = (0..TEMPLATE_SAMPLES)
        .map(|i| {
            let (p, (dx, dy)) = curve(i as f64 / (TEMPLATE_SAMPLES - 1) as f64);
            TangentSample {
                x: p.x,
                y: p.y,
                angle: direction_degrees(dx, dy),
                support: 1.0,
            }
        })
        .collect();
    build_signature(&samples, length)
}

fn conic_template(length: usize, a: f64, b: f64) -> Result<SlopeSignature, SignatureError> {
    template(length, |t| {
        let phi = t * std::f64::consts::TAU;
        let (s, c) = phi.sin_cos();
        (Point::new(a * c, b * s), (-a * s, b * c))
    })
}

/// Best template by score, ties by smaller mean angular error. The class is
/// `Unknown` when even the best template misses the threshold.
pub fn classify_curve(
    sig: &SlopeSignature,
    library: &SignatureLibrary,
    angle_tol: f64,
    threshold: f64,
) -> Result<(CurveClass, f64), SignatureError> {
    if library.is_empty() {
        return Err(SignatureError::EmptyLibrary);
    }
    let mut best: Option<(CurveClass, f64, f64)> = None;
    for (class, template) in library.iter() {
        let (score, err) = score_pair(sig, template, angle_tol)?;
        let better = match best {
            None => true,
            Some((_, bs, be)) => score > bs || (score == bs && err < be),
        };
        if better {
            best = Some((class, score, err));
        }
    }
    let (class, score, _) = best.expect("library is nonempty");
    if score >= threshold {
        Ok((class, score))
    } else {
        Ok((CurveClass::Unknown, score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleBand {
    pub label: String,
    pub low: f64,
    pub high: f64,
}

impl AngleBand {
    pub fn new(label: impl Into<String>, low: f64, high: f64) -> Self {
        Self {
            label: label.into(),
            low,
            high,
        }
    }

    pub fn contains(&self, angle: f64) -> bool {
        self.low <= angle && angle < self.high
    }
}

/// The two lane bands: blue for `[90, 120)`, green for `[60, 90)`.
pub fn default_bands() -> Vec<AngleBand> {
    vec![AngleBand::new("blue", 90.0, 120.0), AngleBand::new("green", 60.0, 90.0)]
}

pub fn validate_bands(bands: &[AngleBand]) -> Result<(), SignatureError> {
    for b in bands {
        if !(0.0 <= b.low && b.low < b.high && b.high <= 180.0) {
            return Err(SignatureError::InvalidBand {
                label: b.label.clone(),
                low: b.low,
                high: b.high,
            });
        }
    }
    for (i, a) in bands.iter().enumerate() {
        for b in &bands[i + 1..] {
            if a.low < b.high && b.low < a.high {
                return Err(SignatureError::OverlappingBands(a.label.clone(), b.label.clone()));
            }
        }
    }
    Ok(())
}

/// Label of the band containing `angle` (folded into `[0, 180)`). Intervals
/// are half-open, so a shared endpoint belongs to the upper band.
pub fn assign_band(angle: f64, bands: &[AngleBand]) -> Option<&str> {
    let a = fold_degrees(angle);
    bands.iter().find(|b| b.contains(a)).map(|b| b.label.as_str())
}

/// One text record: `label,arc_span,a1,...,aN` with 3 decimals.
pub fn format_record(label: &str, sig: &SlopeSignature) -> String {
    let mut out = format!("{label},{:.3}", sig.arc_span);
    for a in &sig.angles {
        out.push_str(&format!(",{a:.3}"));
    }
    out
}

pub fn parse_record(line: &str) -> Result<(String, SlopeSignature), SignatureError> {
    let mut fields = line.trim().split(',');
    let label = fields
        .next()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| SignatureError::BadRecord("missing label".into()))?
        .to_string();
    let mut numbers = fields.map(|f| {
        f.trim()
            .parse::<f64>()
            .map_err(|_| SignatureError::BadRecord(format!("not a number: {f:?}")))
    });
    let arc_span = numbers
        .next()
        .ok_or_else(|| SignatureError::BadRecord("missing arc span".into()))??;
    let angles = numbers.collect::<Result<Vec<_>, _>>()?;
    if angles.len() < 2 {
        return Err(SignatureError::BadRecord("fewer than 2 angles".into()));
    }
    Ok((label, SlopeSignature { angles, arc_span }))
}

/// Parses every non-blank, non-`#` line of a record file.
pub fn parse_records(text: &str) -> Result<Vec<(String, SlopeSignature)>, SignatureError> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(parse_record)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(x: f64, y: f64, angle: f64) -> TangentSample {
        TangentSample {
            x,
            y,
            angle,
            support: 1.0,
        }
    }

    fn sig(angles: Vec<f64>) -> SlopeSignature {
        SlopeSignature { angles, arc_span: 1.0 }
    }

    #[test]
    fn straight_line_is_constant() {
        let samples: Vec<_> = (0..20).map(|i| sample(i as f64, i as f64, 45.0)).collect();
        let s = build_signature(&samples, 32).unwrap();
        assert_eq!(s.angles.len(), 32);
        assert!(s.angles.iter().all(|&a| (a - 45.0).abs() < 1e-9));
        assert!((s.arc_span - 19.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn parabola_follows_derivative() {
        let samples: Vec<_> = (-100..=100)
            .map(|x| {
                let x = x as f64;
                sample(x, x * x / 100.0, direction_degrees(1.0, x / 50.0))
            })
            .collect();
        let s = build_signature(&samples, 32).unwrap();
        let step = 200.0 / 31.0;
        for (i, &a) in s.angles.iter().enumerate() {
            let x = -100.0 + i as f64 * step;
            assert!(
                angle_distance(a, direction_degrees(1.0, x / 50.0)) < 3.0,
                "entry {i}: {a}"
            );
        }
        // rotating through the vertex: descending side folds above 90, rising side below
        let unwrapped: Vec<f64> = s.angles.iter().map(|&a| if a < 90.0 { a + 180.0 } else { a }).collect();
        assert!(unwrapped.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn too_few_or_degenerate() {
        let three: Vec<_> = (0..3).map(|i| sample(i as f64, 0.0, 0.0)).collect();
        assert_eq!(build_signature(&three, 32), Err(SignatureError::InsufficientSamples(3)));
        let column: Vec<_> = (0..6).map(|i| sample(5.0, i as f64, 90.0)).collect();
        assert_eq!(build_signature(&column, 32), Err(SignatureError::DegenerateSpan));
    }

    #[test]
    fn ninety_percent_boundary() {
        let reference = sig(vec![10.0; 32]);
        let mut cand = reference.clone();
        for a in cand.angles.iter_mut().take(3) {
            *a = 60.0;
        }
        assert_eq!(match_signature(&cand, &reference, 10.0, 0.9).unwrap(), (0.90625, true));
        cand.angles[3] = 60.0;
        assert_eq!(match_signature(&cand, &reference, 10.0, 0.9).unwrap(), (0.875, false));
    }

    #[test]
    fn orthogonal_scores_zero() {
        let reference = sig((0..32).map(|i| i as f64 * 5.0).collect());
        let cand = sig(reference.angles.iter().map(|a| fold_degrees(a + 90.0)).collect());
        assert_eq!(match_signature(&cand, &reference, 5.0, 0.9).unwrap(), (0.0, false));
        assert_eq!(
            match_signature(&sig(vec![0.0; 3]), &reference, 5.0, 0.9),
            Err(SignatureError::LengthMismatch(3, 32))
        );
    }

    #[test]
    fn bands() {
        let bands = default_bands();
        validate_bands(&bands).unwrap();
        assert_eq!(assign_band(100.0, &bands), Some("blue"));
        assert_eq!(assign_band(75.0, &bands), Some("green"));
        assert_eq!(assign_band(90.0, &bands), Some("blue"));
        assert_eq!(assign_band(60.0, &bands), Some("green"));
        assert_eq!(assign_band(120.0, &bands), None);
        assert_eq!(assign_band(30.0, &bands), None);
        let overlapping = vec![AngleBand::new("a", 0.0, 50.0), AngleBand::new("b", 40.0, 60.0)];
        assert!(matches!(
            validate_bands(&overlapping),
            Err(SignatureError::OverlappingBands(..))
        ));
        assert!(validate_bands(&[AngleBand::new("x", 50.0, 50.0)]).is_err());
    }

    #[test]
    fn library_classifies_its_own_templates() {
        let lib = SignatureLibrary::standard(32).unwrap();
        for (class, template) in lib.iter() {
            let (got, score) = classify_curve(template, &lib, 10.0, 0.9).unwrap();
            assert_eq!(score, 1.0);
            assert_eq!(got, class, "{template:?}");
        }
        assert_eq!(
            classify_curve(&sig(vec![0.0; 32]), &SignatureLibrary::new(), 10.0, 0.9),
            Err(SignatureError::EmptyLibrary)
        );
    }

    #[test]
    fn circle_and_line_samples_classify() {
        let lib = SignatureLibrary::standard(32).unwrap();
        let circle: Vec<_> = (0..720)
            .map(|i| {
                let phi = (i as f64).to_radians() / 2.0;
                sample(
                    320.0 + 90.0 * phi.cos(),
                    240.0 + 90.0 * phi.sin(),
                    direction_degrees(-phi.sin(), phi.cos()),
                )
            })
            .collect();
        let s = build_signature(&circle, 32).unwrap();
        assert_eq!(classify_curve(&s, &lib, 10.0, 0.9).unwrap().0, CurveClass::Circle);
        let line: Vec<_> = (0..50)
            .map(|i| sample(i as f64 * 3.0, i as f64, direction_degrees(3.0, 1.0)))
            .collect();
        let s = build_signature(&line, 32).unwrap();
        assert_eq!(classify_curve(&s, &lib, 10.0, 0.9).unwrap().0, CurveClass::Line);
    }

    #[test]
    fn closed_curve_follows_upper_branch() {
        let (cx, cy, r) = (300.0, 200.0, 120.0);
        let ring: Vec<_> = (0..900)
            .map(|i| {
                let phi = i as f64 * std::f64::consts::TAU / 900.0;
                let (s, c) = phi.sin_cos();
                sample(cx + r * c, cy + r * s, direction_degrees(-s, c))
            })
            .collect();
        let sig = build_signature(&ring, 32).unwrap();
        let step = 2.0 * r / 31.0;
        // interior positions against the analytic upper half, y = cy - sqrt(r² - dx²)
        for (i, &a) in sig.angles.iter().enumerate().take(30).skip(2) {
            let dx = -r + i as f64 * step;
            let slope = dx / (r * r - dx * dx).sqrt();
            let want = fold_degrees(slope.atan().to_degrees());
            assert!(angle_distance(a, want) <= 3.0, "position {i}: {a} vs {want}");
        }
    }

    #[test]
    fn unsampled_tip_is_crossed_the_long_way() {
        let bins = |v: &[Option<f64>]| v.to_vec();
        // turning +20 per position; five positions missing sweep 120 degrees
        let b = bins(&[
            Some(100.0),
            Some(120.0),
            Some(140.0),
            None,
            None,
            None,
            None,
            None,
            Some(80.0),
            Some(100.0),
        ]);
        assert!((bridge_turn(&b, Some(1), 2, 8, Some(9)) - 120.0).abs() < 1e-9);
        // without a trend on both sides the short way stands
        assert!((bridge_turn(&b, None, 2, 8, Some(9)) + 60.0).abs() < 1e-9);
        let flat = bins(&[
            Some(140.0),
            Some(140.0),
            Some(140.0),
            None,
            None,
            None,
            None,
            None,
            Some(80.0),
            Some(100.0),
        ]);
        assert!((bridge_turn(&flat, Some(1), 2, 8, Some(9)) + 60.0).abs() < 1e-9);
    }

    #[test]
    fn stray_positions_are_dropped() {
        let mut b = vec![
            Some(10.0),
            Some(11.0),
            None,
            None,
            Some(90.0),
            None,
            None,
            Some(16.0),
            Some(17.0),
        ];
        drop_strays(&mut b);
        assert_eq!(b[4], None);
        let mut agree = vec![
            Some(10.0),
            Some(11.0),
            None,
            None,
            Some(14.0),
            None,
            None,
            Some(16.0),
            Some(17.0),
        ];
        drop_strays(&mut agree);
        assert_eq!(agree[4], Some(14.0));
    }

    #[test]
    fn records_round_trip() {
        let s = SlopeSignature {
            angles: vec![1.25, 179.5, 90.0],
            arc_span: 12.5,
        };
        let line = format_record("ref", &s);
        assert_eq!(line, "ref,12.500,1.250,179.500,90.000");
        assert_eq!(parse_record(&line).unwrap(), ("ref".to_string(), s));
        assert!(parse_record("ref,abc,1,2").is_err());
        assert_eq!(parse_records("# header\n\nref,1,2,3\n").unwrap().len(), 1);
    }

    fn angles(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..180.0, n)
    }

    proptest! {
        #[test]
        fn symmetric_and_reflexive(a in angles(32), b in angles(32), tol in 0.5f64..30.0) {
            let (a, b) = (sig(a), sig(b));
            prop_assert_eq!(match_signature(&a, &a, tol, 0.9).unwrap(), (1.0, true));
            prop_assert_eq!(match_signature(&a, &b, tol, 0.9).unwrap(), match_signature(&b, &a, tol, 0.9).unwrap());
        }

        #[test]
        fn rotation_invariant(a in angles(32), b in angles(32), rot in 0.0f64..180.0) {
            // tolerance well away from any pairwise distance so rounding can't flip a hit
            let tol = 10.0;
            let near_edge = a.iter().zip(&b).any(|(p, q)| (angle_distance(*p, *q) - tol).abs() < 1e-6);
            prop_assume!(!near_edge);
            let ra = sig(a.iter().map(|x| fold_degrees(x + rot)).collect());
            let rb = sig(b.iter().map(|x| fold_degrees(x + rot)).collect());
            prop_assert_eq!(
                match_signature(&sig(a), &sig(b), tol, 0.9).unwrap(),
                match_signature(&ra, &rb, tol, 0.9).unwrap()
            );
        }

        #[test]
        fn sample_order_is_irrelevant(
            pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.0f64..180.0), 4..60),
            seed in any::<u64>(),
        ) {
            let samples: Vec<_> = pts.iter().map(|&(x, y, a)| sample(x, y, a)).collect();
            let mut shuffled = samples.clone();
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(build_signature(&samples, 32), build_signature(&shuffled, 32));
        }

        #[test]
        fn band_assignment_total_over_union(angle in 0.0f64..180.0) {
            let bands = default_bands();
            let covered = (60.0..120.0).contains(&angle);
            prop_assert_eq!(assign_band(angle, &bands).is_some(), covered);
        }
    }
}
