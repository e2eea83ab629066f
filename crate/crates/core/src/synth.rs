//! Synthetic scenes with analytic ground truth.
//!
//! Curves are rendered as anti-aliased strokes on a flat background. The
//! ground truth is a dense arc-length sampling (about 4 points per pixel) of
//! each analytic curve with its exact tangent angle, so every stage can be
//! checked against known geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{direction_degrees, point_polyline_distance, point_segment_distance, Point};
use crate::hough::LineSegment;
use crate::imaging::Image;
use crate::signature::CurveClass;
use crate::tracker::{Axis, LaneModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    SpecInvalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SynthError> {
    Err(SynthError::SpecInvalid(msg.into()))
}

pub const BACKGROUND: f32 = 0.25;
pub const STROKE: f32 = 0.85;

/// Which image axis the free parameter of a function-type curve runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ParamAxis {
    /// `y = f(x)`
    #[default]
    X,
    /// `x = f(y)`
    Y,
}

impl From<ParamAxis> for Axis {
    fn from(a: ParamAxis) -> Axis {
        match a {
            ParamAxis::X => Axis::X,
            ParamAxis::Y => Axis::Y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CurveShape {
    Line {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    /// `across = k + a (t - h)^2` for `t` in `[from, to]`.
    Parabola {
        h: f64,
        k: f64,
        a: f64,
        from: f64,
        to: f64,
        #[serde(default)]
        axis: ParamAxis,
    },
    /// Arc of a circle, angles in degrees measured from +x toward +y.
    Circle {
        cx: f64,
        cy: f64,
        r: f64,
        #[serde(default)]
        start_deg: f64,
        #[serde(default = "full_turn")]
        sweep_deg: f64,
    },
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        #[serde(default)]
        rotation_deg: f64,
        #[serde(default)]
        start_deg: f64,
        #[serde(default = "full_turn")]
        sweep_deg: f64,
    },
    /// `across = k + m sqrt(c^2 + (t - h)^2)`; the sign of `m` picks the branch.
    Hyperbola {
        h: f64,
        k: f64,
        m: f64,
        c: f64,
        from: f64,
        to: f64,
        #[serde(default)]
        axis: ParamAxis,
    },
    /// `across = base + slope (t - from) + amplitude sin(2π t / wavelength + phase)`.
    Sine {
        base: f64,
        #[serde(default)]
        slope: f64,
        amplitude: f64,
        wavelength: f64,
        #[serde(default)]
        phase: f64,
        from: f64,
        to: f64,
        #[serde(default)]
        axis: ParamAxis,
    },
}

fn full_turn() -> f64 {
    360.0
}

fn default_stroke() -> f64 {
    2.0
}

impl CurveShape {
    pub fn class(&self) -> CurveClass {
        match self {
            CurveShape::Line { .. } => CurveClass::Line,
            CurveShape::Parabola { .. } => CurveClass::Parabola,
            CurveShape::Circle { .. } => CurveClass::Circle,
            CurveShape::Ellipse { .. } => CurveClass::Ellipse,
            CurveShape::Hyperbola { .. } => CurveClass::Hyperbola,
            CurveShape::Sine { .. } => CurveClass::Unknown,
        }
    }

    fn param_range(&self) -> (f64, f64) {
        match *self {
            CurveShape::Line { .. } => (0.0, 1.0),
            CurveShape::Parabola { from, to, .. }
            | CurveShape::Hyperbola { from, to, .. }
            | CurveShape::Sine { from, to, .. } => (from, to),
            CurveShape::Circle {
                start_deg, sweep_deg, ..
            }
            | CurveShape::Ellipse {
                start_deg, sweep_deg, ..
            } => (start_deg.to_radians(), (start_deg + sweep_deg).to_radians()),
        }
    }

    /// Position and derivative with respect to the parameter.
    pub fn eval(&self, t: f64) -> (Point, (f64, f64)) {
        let function = |axis: ParamAxis, across: f64, slope: f64| {
            let axis = Axis::from(axis);
            let p = axis.point(t, across);
            let d = axis.point(1.0, slope);
            (p, (d.x, d.y))
        };
        match *self {
            CurveShape::Line { x0, y0, x1, y1 } => {
                (Point::new(x0 + t * (x1 - x0), y0 + t * (y1 - y0)), (x1 - x0, y1 - y0))
            }
            CurveShape::Parabola { h, k, a, axis, .. } => function(axis, k + a * (t - h) * (t - h), 2.0 * a * (t - h)),
            CurveShape::Circle { cx, cy, r, .. } => {
                let (s, c) = t.sin_cos();
                (Point::new(cx + r * c, cy + r * s), (-r * s, r * c))
            }
            CurveShape::Ellipse {
                cx,
                cy,
                a,
                b,
                rotation_deg,
                ..
            } => {
                let (s, c) = t.sin_cos();
                let (rs, rc) = rotation_deg.to_radians().sin_cos();
                let (ex, ey) = (a * c, b * s);
                let (dx, dy) = (-a * s, b * c);
                (
                    Point::new(cx + rc * ex - rs * ey, cy + rs * ex + rc * ey),
                    (rc * dx - rs * dy, rs * dx + rc * dy),
                )
            }
            CurveShape::Hyperbola { h, k, m, c, axis, .. } => {
                let u = t - h;
                let root = (c * c + u * u).sqrt();
                function(axis, k + m * root, m * u / root)
            }
            CurveShape::Sine {
                base,
                slope,
                amplitude,
                wavelength,
                phase,
                from,
                axis,
                ..
            } => {
                let w = std::f64::consts::TAU / wavelength;
                let arg = w * t + phase;
                function(
                    axis,
                    base + slope * (t - from) + amplitude * arg.sin(),
                    slope + amplitude * w * arg.cos(),
                )
            }
        }
    }

    /// Undirected analytic tangent angle at parameter `t`.
    pub fn tangent_angle(&self, t: f64) -> f64 {
        let (_, (dx, dy)) = self.eval(t);
        direction_degrees(dx, dy)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            CurveShape::Line { x0, y0, x1, y1 } => {
                if !finite(&[x0, y0, x1, y1]) || (x0 == x1 && y0 == y1) {
                    return invalid("line endpoints must be finite and distinct");
                }
            }
            CurveShape::Parabola { h, k, a, from, to, .. } => {
                if !finite(&[h, k, a, from, to]) || !(from < to) {
                    return invalid("parabola needs finite parameters and from < to");
                }
            }
            CurveShape::Circle {
                cx,
                cy,
                r,
                start_deg,
                sweep_deg,
            } => {
                if !finite(&[cx, cy, r, start_deg, sweep_deg]) || !(r > 0.0) || sweep_deg == 0.0 {
                    return invalid("circle needs r > 0 and a nonzero sweep");
                }
            }
            CurveShape::Ellipse {
                cx,
                cy,
                a,
                b,
                rotation_deg,
                start_deg,
                sweep_deg,
            } => {
                if !finite(&[cx, cy, a, b, rotation_deg, start_deg, sweep_deg])
                    || !(a > 0.0 && b > 0.0)
                    || sweep_deg == 0.0
                {
                    return invalid("ellipse needs positive semi-axes and a nonzero sweep");
                }
            }
            CurveShape::Hyperbola {
                h, k, m, c, from, to, ..
            } => {
                if !finite(&[h, k, m, c, from, to]) || !(c > 0.0) || m == 0.0 || !(from < to) {
                    return invalid("hyperbola needs c > 0, m != 0 and from < to");
                }
            }
            CurveShape::Sine {
                base,
                slope,
                amplitude,
                wavelength,
                phase,
                from,
                to,
                ..
            } => {
                if !finite(&[base, slope, amplitude, wavelength, phase, from, to])
                    || !(wavelength > 0.0)
                    || !(from < to)
                {
                    return invalid("sine needs wavelength > 0 and from < to");
                }
            }
        }
        Ok(())
    }

    /// The same curve moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> CurveShape {
        let mut s = self.clone();
        let shift_fn = |axis: ParamAxis| match axis {
            ParamAxis::X => (dx, dy),
            ParamAxis::Y => (dy, dx),
        };
        match &mut s {
            CurveShape::Line { x0, y0, x1, y1 } => {
                *x0 += dx;
                *x1 += dx;
                *y0 += dy;
                *y1 += dy;
            }
            CurveShape::Circle { cx, cy, .. } | CurveShape::Ellipse { cx, cy, .. } => {
                *cx += dx;
                *cy += dy;
            }
            CurveShape::Parabola {
                h, k, from, to, axis, ..
            }
            | CurveShape::Hyperbola {
                h, k, from, to, axis, ..
            } => {
                let (along, across) = shift_fn(*axis);
                *h += along;
                *from += along;
                *to += along;
                *k += across;
            }
            CurveShape::Sine {
                base,
                wavelength,
                phase,
                from,
                to,
                axis,
                ..
            } => {
                let (along, across) = shift_fn(*axis);
                *phase -= std::f64::consts::TAU * along / *wavelength;
                *from += along;
                *to += along;
                *base += across;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub shape: CurveShape,
    #[serde(default = "default_stroke")]
    pub stroke_width: f64,
    /// Erased arc-length fractions `[start, end)`.
    #[serde(default)]
    pub gaps: Vec<[f64; 2]>,
}

impl CurveSpec {
    pub fn new(shape: CurveShape) -> Self {
        Self {
            shape,
            stroke_width: default_stroke(),
            gaps: Vec::new(),
        }
    }

    pub fn with_stroke(mut self, width: f64) -> Self {
        self.stroke_width = width;
        self
    }

    pub fn with_gap(mut self, start: f64, end: f64) -> Self {
        self.gaps.push([start, end]);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub count: usize,
    pub min_length: f64,
    pub max_length: f64,
    pub width: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            count: 0,
            min_length: 3.0,
            max_length: 3.0,
            width: 1.0,
        }
    }
}

/// Multiplies intensity by `1 - strength` beyond `start + ramp` (fractions of
/// the image extent along `direction_deg`), with a linear transition from
/// `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowSpec {
    pub direction_deg: f64,
    pub strength: f64,
    #[serde(default = "default_shadow_start")]
    pub start: f64,
    #[serde(default = "default_shadow_ramp")]
    pub ramp: f64,
}

fn default_shadow_start() -> f64 {
    0.4
}

fn default_shadow_ramp() -> f64 {
    0.2
}

impl ShadowSpec {
    /// Halves intensity over the half of the image that `direction_deg` points into.
    pub fn halving(direction_deg: f64) -> Self {
        Self {
            direction_deg,
            strength: 0.5,
            start: default_shadow_start(),
            ramp: default_shadow_ramp(),
        }
    }

    pub fn factor(&self, x: f64, y: f64, width: usize, height: usize) -> f64 {
        let (s, c) = self.direction_deg.to_radians().sin_cos();
        let corners = [
            (0.0, 0.0),
            (width as f64, 0.0),
            (0.0, height as f64),
            (width as f64, height as f64),
        ];
        let proj = |(px, py): (f64, f64)| px * c + py * s;
        let lo = corners.iter().map(|&p| proj(p)).fold(f64::INFINITY, f64::min);
        let hi = corners.iter().map(|&p| proj(p)).fold(f64::NEG_INFINITY, f64::max);
        let u = (proj((x, y)) - lo) / (hi - lo);
        let ramp = if self.ramp > 0.0 {
            ((u - self.start) / self.ramp).clamp(0.0, 1.0)
        } else if u >= self.start {
            1.0
        } else {
            0.0
        };
        1.0 - self.strength * ramp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub curves: Vec<CurveSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub shadow: Option<ShadowSpec>,
    /// Amplitude of uniform per-pixel intensity noise.
    #[serde(default)]
    pub pixel_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            curves: Vec::new(),
            noise: NoiseSpec::default(),
            shadow: None,
            pixel_noise: 0.0,
            seed: 0,
        }
    }

    pub fn with_curve(mut self, curve: CurveSpec) -> Self {
        self.curves.push(curve);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return invalid("image size must be positive");
        }
        for (i, c) in self.curves.iter().enumerate() {
            c.shape.validate()?;
            if !(c.stroke_width >= 1.0) {
                return invalid(format!("curve {i}: stroke width below 1 px"));
            }
            let mut gaps = c.gaps.clone();
            gaps.sort_by(|a, b| a[0].total_cmp(&b[0]));
            for g in &gaps {
                if !(0.0 <= g[0] && g[0] < g[1] && g[1] <= 1.0) {
                    return invalid(format!("curve {i}: gap {g:?} outside [0, 1)"));
                }
            }
            if gaps.windows(2).any(|w| w[1][0] < w[0][1]) {
                return invalid(format!("curve {i}: gaps overlap"));
            }
        }
        let n = &self.noise;
        if n.count > 0 && !(n.min_length > 0.0 && n.min_length <= n.max_length && n.width >= 1.0) {
            return invalid("noise needs 0 < min_length <= max_length and width >= 1");
        }
        if let Some(s) = &self.shadow {
            if !(0.0..=1.0).contains(&s.strength) || !s.direction_deg.is_finite() || s.ramp < 0.0 {
                return invalid("shadow strength must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.pixel_noise) {
            return invalid("pixel_noise must lie in [0, 1]");
        }
        Ok(())
    }

    /// Every curve moved by `(dx, dy)`; noise and shadow are kept.
    pub fn translated(&self, dx: f64, dy: f64) -> SceneSpec {
        let mut s = self.clone();
        for c in &mut s.curves {
            c.shape = c.shape.translated(dx, dy);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTruth {
    pub class: CurveClass,
    pub points: Vec<Point>,
    /// Analytic tangent angle at each point, degrees in `[0, 180)`.
    pub angles: Vec<f64>,
    /// False where the point lies in an erased gap.
    pub visible: Vec<bool>,
    pub arc_length: f64,
}

impl CurveTruth {
    pub fn visible_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.points
            .iter()
            .zip(&self.visible)
            .filter(|(_, v)| **v)
            .map(|(p, _)| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub curves: Vec<CurveTruth>,
    pub distractors: Vec<LineSegment>,
}

impl GroundTruth {
    /// Distance from `p` to the nearest curve point (gaps included).
    pub fn distance_to(&self, p: Point) -> f64 {
        self.curves
            .iter()
            .flat_map(|c| c.points.iter())
            .map(|q| q.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Brute-force distance from every pixel center to the nearest curve point.
    pub fn distance_field(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.distance_to(Point::new(x as f64, y as f64)));
            }
        }
        out
    }

    /// Analytic tangent angle at the curve point nearest to `p`, with that distance.
    pub fn nearest_angle(&self, p: Point) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for c in &self.curves {
            for (q, &a) in c.points.iter().zip(&c.angles) {
                let d = q.distance(p);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, a));
                }
            }
        }
        best.map(|(d, a)| (a, d))
    }
}

const TRUTH_SPACING: f64 = 0.25;
const ARC_TABLE: usize = 4096;

/// Samples the curve at uniform arc-length steps of about a quarter pixel.
fn dense_samples(spec: &CurveSpec) -> CurveTruth {
    let shape = &spec.shape;
    let (t0, t1) = shape.param_range();
    let mut table = Vec::with_capacity(ARC_TABLE + 1);
    let mut cum = 0.0;
    let mut prev = shape.eval(t0).0;
    for i in 0..=ARC_TABLE {
        let t = t0 + (t1 - t0) * i as f64 / ARC_TABLE as f64;
        let p = shape.eval(t).0;
        cum += p.distance(prev);
        prev = p;
        table.push((t, cum));
    }
    let total = cum;
    let n = ((total / TRUTH_SPACING).ceil() as usize).max(1);
    let mut truth = CurveTruth {
        class: shape.class(),
        points: Vec::with_capacity(n + 1),
        angles: Vec::with_capacity(n + 1),
        visible: Vec::with_capacity(n + 1),
        arc_length: total,
    };
    let mut k = 0;
    for i in 0..=n {
        let s = total * i as f64 / n as f64;
        while k + 1 < table.len() && table[k + 1].1 < s {
            k += 1;
        }
        let t = match table.get(k + 1) {
            Some(&(tb, sb)) if sb > table[k].1 => {
                let (ta, sa) = table[k];
                ta + (tb - ta) * ((s - sa) / (sb - sa)).clamp(0.0, 1.0)
            }
            _ => table[k].0,
        };
        let (p, _) = shape.eval(t);
        let frac = if total > 0.0 { s / total } else { 0.0 };
        truth.points.push(p);
        truth.angles.push(shape.tangent_angle(t));
        truth
            .visible
            .push(!spec.gaps.iter().any(|g| frac >= g[0] && frac < g[1]));
    }
    truth
}

/// Minimum distance from each pixel center to any stamped point, limited
/// to a `reach` neighbourhood.
struct DistanceCanvas {
    width: usize,
    height: usize,
    dist: Vec<f32>,
}

impl DistanceCanvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dist: vec![f32::INFINITY; width * height],
        }
    }

    fn stamp(&mut self, p: Point, reach: f64) {
        let x0 = (p.x - reach).floor().max(0.0) as i64;
        let x1 = (p.x + reach).ceil().min(self.width as f64 - 1.0) as i64;
        let y0 = (p.y - reach).floor().max(0.0) as i64;
        let y1 = (p.y + reach).ceil().min(self.height as f64 - 1.0) as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - p.x).hypot(y as f64 - p.y) as f32;
                let cell = &mut self.dist[y as usize * self.width + x as usize];
                if d < *cell {
                    *cell = d;
                }
            }
        }
    }

    fn stamp_segment(&mut self, s: &LineSegment, reach: f64) {
        let (a, b) = (s.start(), s.end());
        let x0 = (a.x.min(b.x) - reach).floor().max(0.0) as i64;
        let x1 = (a.x.max(b.x) + reach).ceil().min(self.width as f64 - 1.0) as i64;
        let y0 = (a.y.min(b.y) - reach).floor().max(0.0) as i64;
        let y1 = (a.y.max(b.y) + reach).ceil().min(self.height as f64 - 1.0) as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = point_segment_distance(Point::new(x as f64, y as f64), a, b) as f32;
                let cell = &mut self.dist[y as usize * self.width + x as usize];
                if d < *cell {
                    *cell = d;
                }
            }
        }
    }

    /// Paints coverage `clamp(w/2 + 0.5 - d)` of the stroke color over `img`.
    fn paint(&self, img: &mut [f32], stroke_width: f64) {
        let half = (stroke_width / 2.0 + 0.5) as f32;
        for (px, &d) in img.iter_mut().zip(&self.dist) {
            let cov = (half - d).clamp(0.0, 1.0);
            if cov > 0.0 {
                let v = BACKGROUND + (STROKE - BACKGROUND) * cov;
                if v > *px {
                    *px = v;
                }
            }
        }
    }
}

/// Renders a gray scene and its ground truth. Deterministic per spec.
pub fn render(spec: &SceneSpec) -> Result<(Image, GroundTruth), SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pixels = vec![BACKGROUND; w * h];

    let mut curves = Vec::with_capacity(spec.curves.len());
    for c in &spec.curves {
        let truth = dense_samples(c);
        let mut canvas = DistanceCanvas::new(w, h);
        let reach = c.stroke_width / 2.0 + 1.5;
        for p in truth.visible_points() {
            canvas.stamp(p, reach);
        }
        canvas.paint(&mut pixels, c.stroke_width);
        curves.push(truth);
    }

    let mut distractors = Vec::with_capacity(spec.noise.count);
    if spec.noise.count > 0 {
        let mut canvas = DistanceCanvas::new(w, h);
        let reach = spec.noise.width / 2.0 + 1.5;
        for _ in 0..spec.noise.count {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let len = if spec.noise.max_length > spec.noise.min_length {
                rng.gen_range(spec.noise.min_length..spec.noise.max_length)
            } else {
                spec.noise.min_length
            };
            let (s, co) = angle.sin_cos();
            let seg = LineSegment::new(
                cx - 0.5 * len * co,
                cy - 0.5 * len * s,
                cx + 0.5 * len * co,
                cy + 0.5 * len * s,
            );
            canvas.stamp_segment(&seg, reach);
            distractors.push(seg);
        }
        canvas.paint(&mut pixels, spec.noise.width);
    }

    if let Some(shadow) = &spec.shadow {
        for y in 0..h {
            for x in 0..w {
                pixels[y * w + x] *= shadow.factor(x as f64, y as f64, w, h) as f32;
            }
        }
    }
    if spec.pixel_noise > 0.0 {
        let a = spec.pixel_noise as f32;
        for px in &mut pixels {
            *px += rng.gen_range(-a..=a);
        }
    }

    let img = Image::from_vec(w, h, 1, pixels).expect("buffer matches dimensions");
    Ok((
        img,
        GroundTruth {
            width: w,
            height: h,
            curves,
            distractors,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveScore {
    /// Fraction of the truth arc within `dist_tol` of a detected polyline.
    pub coverage: f64,
    /// Mean tangent-angle error over covered truth points, degrees.
    pub mean_angle_error: f64,
    /// Fraction of covered truth points whose angle error is within `angle_tol`.
    pub angle_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub curves: Vec<CurveScore>,
    /// Detected polyline length farther than `dist_tol` from every curve.
    pub false_positive_length: f64,
}

impl DetectionScore {
    pub fn mean_coverage(&self) -> f64 {
        if self.curves.is_empty() {
            return 0.0;
        }
        self.curves.iter().map(|c| c.coverage).sum::<f64>() / self.curves.len() as f64
    }

    pub fn min_coverage(&self) -> f64 {
        self.curves.iter().map(|c| c.coverage).fold(f64::INFINITY, f64::min)
    }
}

/// Compares detected lane polylines with the truth curves.
pub fn score_detection(detected: &LaneModel, truth: &GroundTruth, dist_tol: f64, angle_tol: f64) -> DetectionScore {
    let polylines: Vec<&[Point]> = detected
        .lanes
        .iter()
        .map(|l| l.polyline.as_slice())
        .filter(|p| p.len() >= 2)
        .collect();

    let mut curves = Vec::with_capacity(truth.curves.len());
    for c in &truth.curves {
        let mut covered = 0usize;
        let mut err_sum = 0.0;
        let mut agree = 0usize;
        for (p, &angle) in c.points.iter().zip(&c.angles) {
            let mut best: Option<(f64, f64)> = None;
            for poly in &polylines {
                for w in poly.windows(2) {
                    let d = point_segment_distance(*p, w[0], w[1]);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, direction_degrees(w[1].x - w[0].x, w[1].y - w[0].y)));
                    }
                }
            }
            if let Some((d, a)) = best {
                if d <= dist_tol {
                    covered += 1;
                    let e = crate::geom::angle_distance(a, angle);
                    err_sum += e;
                    if e <= angle_tol {
                        agree += 1;
                    }
                }
            }
        }
        let n = c.points.len().max(1);
        curves.push(CurveScore {
            coverage: covered as f64 / n as f64,
            mean_angle_error: if covered > 0 { err_sum / covered as f64 } else { 0.0 },
            angle_agreement: if covered > 0 {
                agree as f64 / covered as f64
            } else {
                0.0
            },
        });
    }

    let mut fp = 0.0;
    for poly in &polylines {
        for w in poly.windows(2) {
            let mid = w[0].midpoint(w[1]);
            let near = truth
                .curves
                .iter()
                .any(|c| point_polyline_distance(mid, &c.points) <= dist_tol);
            if !near {
                fp += w[0].distance(w[1]);
            }
        }
    }
    DetectionScore {
        curves,
        false_positive_length: fp,
    }
}

/// Two gently curving lanes converging toward the top, like a road seen
/// from above with residual perspective: the left lane leans one way
/// (tangents above 90°) and the right lane the other (below 90°).
pub fn two_lane_scene(width: usize, height: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let lean = rng.gen_range(0.22..0.32);
    let amplitude = rng.gen_range(6.0..14.0);
    let wavelength = rng.gen_range(1.2..1.8) * h;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let lane = |base: f64, slope: f64| {
        CurveSpec::new(CurveShape::Sine {
            base,
            slope,
            amplitude,
            wavelength,
            phase,
            from: 0.04 * h,
            to: 0.96 * h,
            axis: ParamAxis::Y,
        })
    };
    // x decreases toward the top on the left lane, increases on the right
    let mut spec = SceneSpec::new(width, height)
        .with_curve(lane(0.18 * w, lean))
        .with_curve(lane(0.82 * w, -lean));
    spec.seed = seed;
    spec
}
