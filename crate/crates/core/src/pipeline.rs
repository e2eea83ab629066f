//! Frame-level orchestration, result records and overlays.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::birdseye::warp;
use crate::cluster::{cluster_lines, select_heaviest, threshold_votes, ClusterError, CurveCluster};
use crate::config::{PipelineConfig, WeightSource};
use crate::curvemath::{anchors, tangent_field_from_anchors, Anchor, TangentSample};
use crate::geom::{point_segment_distance, Point};
use crate::hough::{probabilistic_lines, segment_angle, HoughError, LineSegment};
use crate::imaging::{correct_illumination, edge_detect, gaussian_blur, to_hsv, EdgeMap, Image};
use crate::signature::{
    assign_band, build_signature, classify_curve, AngleBand, CurveClass, SignatureLibrary, SlopeSignature,
};
use crate::tracker::{
    fill_discontinuities, smooth_model, texture_descriptor, texture_distance, Axis, Lane, LaneModel, TextureDescriptor,
};

/// A failure inside one stage of [`detect_frame`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn at_stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneResult {
    pub polyline_px: Vec<Point>,
    /// `polyline_px` divided by pixels per cm.
    pub polyline_cm: Vec<Point>,
    pub band: Option<String>,
    /// Representative cluster angle, degrees.
    pub angle: f64,
    pub signature_score: f64,
    pub curve_class: CurveClass,
    pub vote: u32,
    pub mass: f64,
    /// Frames this lane has been carried over without being detected.
    pub missed_frames: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameFlags {
    pub tracker_reset: bool,
    pub gaps_filled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub frame_index: u64,
    pub lanes: Vec<LaneResult>,
    pub flags: FrameFlags,
    pub timing: Vec<StageTiming>,
    pub total_ms: f64,
    pub error: Option<String>,
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (v * scale).round() / scale;
    // normalize -0.0 so identical geometry prints identically
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Coordinates to 2 decimals.
pub fn round_coord(v: f64) -> f64 {
    round_to(v, 2)
}

/// Angles to 3 decimals.
pub fn round_angle(v: f64) -> f64 {
    round_to(v, 3)
}

fn points_json(points: &[Point]) -> Value {
    Value::Array(
        points
            .iter()
            .map(|p| json!([round_coord(p.x), round_coord(p.y)]))
            .collect(),
    )
}

impl DetectionResult {
    fn failed(frame_index: u64, err: &PipelineError, total_ms: f64) -> Self {
        Self {
            frame_index,
            lanes: Vec::new(),
            flags: FrameFlags::default(),
            timing: Vec::new(),
            total_ms,
            error: Some(err.to_string()),
        }
    }

    /// The output record. Timing fields are left out when `include_timing`
    /// is false, which makes the record a pure function of the inputs.
    pub fn to_json(&self, include_timing: bool) -> Value {
        let lanes: Vec<Value> = self
            .lanes
            .iter()
            .map(|l| {
                json!({
                    "polyline_px": points_json(&l.polyline_px),
                    "polyline_cm": points_json(&l.polyline_cm),
                    "band": l.band,
                    "angle": round_angle(l.angle),
                    "signature_score": round_to(l.signature_score, 5),
                    "curve_class": l.curve_class,
                    "vote": l.vote,
                    "mass": round_to(l.mass, 3),
                    "missed_frames": l.missed_frames,
                })
            })
            .collect();
        let mut out = json!({
            "frame_index": self.frame_index,
            "lanes": lanes,
            "flags": {
                "tracker_reset": self.flags.tracker_reset,
                "gaps_filled": self.flags.gaps_filled,
            },
        });
        if include_timing {
            let stages: serde_json::Map<String, Value> = self
                .timing
                .iter()
                .map(|t| (t.stage.clone(), json!(round_to(t.ms, 3))))
                .collect();
            out["timing"] = json!({ "stages_ms": stages, "total_ms": round_to(self.total_ms, 3) });
        }
        if let Some(e) = &self.error {
            out["error"] = json!(e);
        }
        out
    }

    /// One JSON line.
    pub fn to_json_line(&self, include_timing: bool) -> String {
        serde_json::to_string(&self.to_json(include_timing)).expect("json values always serialize")
    }

    pub fn stage_ms(&self, stage: &str) -> Option<f64> {
        self.timing.iter().find(|t| t.stage == stage).map(|t| t.ms)
    }
}

/// What the tracker carries from one frame to the next.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerState {
    pub model: Option<LaneModel>,
    pub texture: Option<TextureDescriptor>,
    /// Index the next frame will get.
    pub frame_index: u64,
}

impl TrackerState {
    pub fn fresh() -> Self {
        Self::default()
    }
}

/// A surviving cluster with everything derived from it.
#[derive(Debug, Clone)]
pub struct ClusterDetection {
    pub cluster: CurveCluster,
    pub tangents: Vec<TangentSample>,
    pub signature: Option<SlopeSignature>,
    pub curve_class: CurveClass,
    pub score: f64,
    pub band: Option<String>,
}

/// Intermediate products of one frame, before frame feedback.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    /// Smoothed V plane in bird's-eye coordinates.
    pub value: Image,
    pub edges: EdgeMap,
    pub segments: Vec<LineSegment>,
    pub clusters: Vec<ClusterDetection>,
    /// Index into `clusters` and polyline for each accepted lane, by mean x.
    pub lanes: Vec<(usize, Vec<Point>)>,
}

struct Stopwatch {
    timing: Vec<StageTiming>,
    last: Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            timing: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timing.push(StageTiming {
            stage: stage.to_string(),
            ms: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

/// Templates for a signature length, built once per process.
pub fn standard_library(length: usize) -> Arc<SignatureLibrary> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SignatureLibrary>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(length)
        .or_insert_with(|| Arc::new(SignatureLibrary::standard(length).expect("length validated by config")))
        .clone()
}

/// Stage 1: smoothed, optionally illumination-corrected V plane.
pub fn prepare_value(
    img: &Image,
    cfg: &PipelineConfig,
    watch: Option<&mut Vec<StageTiming>>,
) -> Result<Image, PipelineError> {
    let mut sw = Stopwatch::start();
    let rgb = if img.channels() == 1 { img.to_rgb() } else { img.clone() };
    let hsv = to_hsv(&rgb).map_err(at_stage("hsv"))?;
    sw.lap("hsv");
    let hsv = if cfg.illumination.enabled {
        correct_illumination(&hsv, cfg.illumination.params()).map_err(at_stage("illumination"))?
    } else {
        hsv
    };
    sw.lap("illumination");
    let v = hsv.channel(2).map_err(at_stage("blur"))?;
    let v = gaussian_blur(&v, cfg.blur.sigma).map_err(at_stage("blur"))?;
    sw.lap("blur");
    if let Some(t) = watch {
        t.extend(sw.timing);
    }
    Ok(v)
}

/// Everything up to signatures and bands for one frame.
pub fn analyze_frame(img: &Image, cfg: &PipelineConfig, frame_index: u64) -> Result<FrameAnalysis, PipelineError> {
    analyze_timed(img, cfg, frame_index, &mut Vec::new())
}

fn analyze_timed(
    img: &Image,
    cfg: &PipelineConfig,
    frame_index: u64,
    timing: &mut Vec<StageTiming>,
) -> Result<FrameAnalysis, PipelineError> {
    let v = prepare_value(img, cfg, Some(timing))?;
    let mut sw = Stopwatch::start();

    let h = cfg.birdseye.homography().map_err(at_stage("birdseye"))?;
    let out_w = cfg.birdseye.width.unwrap_or(v.width());
    let out_h = cfg.birdseye.height.unwrap_or(v.height());
    let v = if h.is_identity() && out_w == v.width() && out_h == v.height() {
        v
    } else {
        warp(&v, &h, out_w, out_h)
    };
    sw.lap("birdseye");

    let edges = edge_detect(&v, cfg.edges.low, cfg.edges.high).map_err(at_stage("edges"))?;
    sw.lap("edges");

    let segments = match probabilistic_lines(&edges, &cfg.hough, cfg.seed.wrapping_add(frame_index)) {
        Ok(s) => s,
        Err(HoughError::EmptyEdgeMap) => Vec::new(),
        Err(e) => return Err(at_stage("hough")(e)),
    };
    sw.lap("hough");

    let weights = match cfg.centroid.source {
        WeightSource::EdgeMagnitude => edges.magnitude_image(),
        WeightSource::Value => v.clone(),
    };
    let anchored =
        anchors(&weights, &segments, cfg.centroid.band, cfg.centroid.refine).map_err(at_stage("centroids"))?;
    sw.lap("centroids");

    let items: Vec<_> = anchored.iter().map(|a| (a.segment, a.centroid)).collect();
    let clusters = match cluster_lines(&items, &cfg.cluster) {
        Ok(c) => threshold_votes(c, cfg.cluster.votes_min),
        Err(ClusterError::EmptyInput) => Vec::new(),
        Err(e) => return Err(at_stage("cluster")(e)),
    };
    sw.lap("cluster");

    let mut tangents = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let members: Vec<Anchor> = c
            .members
            .iter()
            .filter_map(|&(segment, centroid)| {
                segment_angle(&segment).ok().map(|angle| Anchor {
                    segment,
                    centroid,
                    angle,
                })
            })
            .collect();
        tangents.push(tangent_field_from_anchors(&members, &cfg.mvt).map_err(at_stage("tangents"))?);
    }
    sw.lap("tangents");

    let library = standard_library(cfg.signature.length);
    let mut detections = Vec::with_capacity(clusters.len());
    for (cluster, tangents) in clusters.into_iter().zip(tangents) {
        let signature = build_signature(&tangents, cfg.signature.length).ok();
        let (curve_class, score) = match &signature {
            Some(sig) => classify_curve(sig, &library, cfg.signature.angle_tol, cfg.signature.threshold)
                .map_err(at_stage("signature"))?,
            None => (CurveClass::Unknown, 0.0),
        };
        let band = assign_band(cluster.representative.angle, &cfg.bands).map(str::to_string);
        detections.push(ClusterDetection {
            cluster,
            tangents,
            signature,
            curve_class,
            score,
            band,
        });
    }

    let mut lanes: Vec<(usize, Vec<Point>)> = detections
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let points: Vec<Point> = if d.tangents.len() >= 2 {
                d.tangents.iter().map(TangentSample::point).collect()
            } else {
                d.cluster.member_centroids().collect()
            };
            let poly = lane_polyline(&points, cfg.lanes.bin)?;
            let axis = Axis::of(&poly);
            let extent = axis.along(poly[poly.len() - 1]) - axis.along(poly[0]);
            (extent >= cfg.lanes.min_extent).then_some((i, poly))
        })
        .collect();
    lanes.sort_by(|a, b| mean_x(&a.1).total_cmp(&mean_x(&b.1)).then(a.0.cmp(&b.0)));
    sw.lap("signature");

    timing.extend(sw.timing);
    Ok(FrameAnalysis {
        value: v,
        edges,
        segments,
        clusters: detections,
        lanes,
    })
}

/// Classification-only mode: the heaviest surviving cluster of a frame with
/// its class, or `None` when every cluster was voted out.
pub fn classify_frame(img: &Image, cfg: &PipelineConfig) -> Result<Option<ClusterDetection>, PipelineError> {
    let analysis = analyze_frame(img, cfg, 0)?;
    let clusters: Vec<CurveCluster> = analysis.clusters.iter().map(|d| d.cluster.clone()).collect();
    let Ok(heaviest) = select_heaviest(&clusters) else {
        return Ok(None);
    };
    let index = clusters.iter().position(|c| std::ptr::eq(c, heaviest)).unwrap_or(0);
    Ok(analysis.clusters.into_iter().nth(index))
}

fn mean_x(points: &[Point]) -> f64 {
    points.iter().map(|p| p.x).sum::<f64>() / points.len().max(1) as f64
}

/// Averages points in bins of width `bin` along their dominant axis, giving
/// a polyline strictly increasing along that axis. `None` below two bins.
pub fn lane_polyline(points: &[Point], bin: f64) -> Option<Vec<Point>> {
    if points.len() < 2 {
        return None;
    }
    let axis = Axis::of(points);
    let lo = points.iter().map(|&p| axis.along(p)).fold(f64::INFINITY, f64::min);
    let mut bins: std::collections::BTreeMap<i64, (f64, f64, usize)> = std::collections::BTreeMap::new();
    for &p in points {
        let k = ((axis.along(p) - lo) / bin).floor() as i64;
        let e = bins.entry(k).or_insert((0.0, 0.0, 0));
        e.0 += axis.along(p);
        e.1 += axis.across(p);
        e.2 += 1;
    }
    let poly: Vec<Point> = bins
        .values()
        .map(|&(a, c, n)| axis.point(a / n as f64, c / n as f64))
        .collect();
    (poly.len() >= 2).then_some(poly)
}

/// Full detection for one frame, threading tracker state.
pub fn detect_frame(
    img: &Image,
    cfg: &PipelineConfig,
    state: &TrackerState,
) -> Result<(DetectionResult, TrackerState), PipelineError> {
    let started = Instant::now();
    let frame_index = state.frame_index;
    let mut timing = Vec::new();
    let analysis = analyze_timed(img, cfg, frame_index, &mut timing)?;
    let mut sw = Stopwatch::start();

    let current = LaneModel {
        lanes: analysis
            .lanes
            .iter()
            .map(|(i, poly)| {
                let d = &analysis.clusters[*i];
                Lane {
                    polyline: poly.clone(),
                    band_label: d.band.clone(),
                    tangent_field: d.tangents.clone(),
                    missed_frames: 0,
                }
            })
            .collect(),
        frame_index,
    };

    let texture = texture_descriptor(&analysis.value, cfg.tracker.texture_tile).ok();
    let mut reset = false;
    if let (Some(prev), Some(cur)) = (&state.texture, &texture) {
        if let Ok(d) = texture_distance(prev, cur) {
            reset = d > cfg.tracker.texture_gate;
        }
    }
    sw.lap("texture");

    let previous = if reset || cfg.mode.stateless {
        None
    } else {
        state.model.as_ref().filter(|m| m.frame_index + 1 == frame_index)
    };
    let (model, gaps_filled) = match previous {
        Some(prev) => fill_discontinuities(&current, prev, &cfg.tracker).map_err(at_stage("fill"))?,
        None => (current.clone(), 0),
    };
    sw.lap("fill");
    let model = match previous {
        Some(prev) => smooth_model(&model, prev, cfg.tracker.smooth_alpha, cfg.tracker.match_radius),
        None => model,
    };
    sw.lap("smooth");

    let scale = cfg.birdseye.pixels_per_cm;
    let lanes = model
        .lanes
        .iter()
        .enumerate()
        .map(|(k, lane)| {
            let info = analysis.lanes.get(k).map(|(i, _)| &analysis.clusters[*i]);
            LaneResult {
                polyline_cm: lane
                    .polyline
                    .iter()
                    .map(|p| Point::new(p.x / scale, p.y / scale))
                    .collect(),
                polyline_px: lane.polyline.clone(),
                band: lane.band_label.clone(),
                angle: info.map_or(f64::NAN, |d| d.cluster.representative.angle),
                signature_score: info.map_or(0.0, |d| d.score),
                curve_class: info.map_or(CurveClass::Unknown, |d| d.curve_class),
                vote: info.map_or(0, |d| d.cluster.vote),
                mass: info.map_or(0.0, |d| d.cluster.mass),
                missed_frames: lane.missed_frames,
            }
        })
        .map(|mut l| {
            if l.angle.is_nan() {
                l.angle = carried_angle(&l.polyline_px);
            }
            l
        })
        .collect();

    timing.extend(sw.timing);
    let result = DetectionResult {
        frame_index,
        lanes,
        flags: FrameFlags {
            tracker_reset: reset,
            gaps_filled,
        },
        timing,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        error: None,
    };
    let next = TrackerState {
        model: Some(model),
        texture,
        frame_index: frame_index + 1,
    };
    Ok((result, next))
}

fn carried_angle(polyline: &[Point]) -> f64 {
    match polyline {
        [a, .., b] => crate::geom::direction_degrees(b.x - a.x, b.y - a.y),
        _ => 0.0,
    }
}

/// Stateful driver over an ordered sequence. A failing frame is recorded in
/// its own result and the tracker starts over on the next one.
#[derive(Debug, Clone)]
pub struct SequenceRunner {
    cfg: PipelineConfig,
    state: TrackerState,
}

impl SequenceRunner {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self {
            cfg,
            state: TrackerState::fresh(),
        }
    }

    pub fn process(&mut self, img: &Image) -> DetectionResult {
        let started = Instant::now();
        match detect_frame(img, &self.cfg, &self.state) {
            Ok((result, next)) => {
                self.state = next;
                result
            }
            Err(e) => self.fail(e, started),
        }
    }

    /// Records a frame that could not even be loaded.
    pub fn record_error(&mut self, stage: &'static str, message: impl Into<String>) -> DetectionResult {
        let e = PipelineError {
            stage,
            message: message.into(),
        };
        self.fail(e, Instant::now())
    }

    fn fail(&mut self, e: PipelineError, started: Instant) -> DetectionResult {
        let index = self.state.frame_index;
        self.state = TrackerState {
            frame_index: index + 1,
            ..TrackerState::fresh()
        };
        DetectionResult::failed(index, &e, started.elapsed().as_secs_f64() * 1e3)
    }
}

/// One result per frame, in order.
pub fn run_sequence(frames: &[Image], cfg: &PipelineConfig) -> Vec<DetectionResult> {
    let mut runner = SequenceRunner::new(cfg.clone());
    frames.iter().map(|f| runner.process(f)).collect()
}

/// Palette color for a band label.
pub fn band_color(label: Option<&str>) -> [f32; 3] {
    match label {
        Some("blue") => [0.0, 0.0, 1.0],
        Some("green") => [0.0, 1.0, 0.0],
        Some("red") => [1.0, 0.0, 0.0],
        Some(other) => {
            const EXTRA: [[f32; 3]; 4] = [[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 0.5, 0.0]];
            let h = other
                .bytes()
                .fold(0usize, |h, b| h.wrapping_mul(31).wrapping_add(b as usize));
            EXTRA[h % EXTRA.len()]
        }
        None => [1.0, 0.0, 0.0],
    }
}

/// Draws each lane polyline in its band color with a 2 px stroke.
pub fn render_overlay(img: &Image, result: &DetectionResult, bands: &[AngleBand]) -> Image {
    let mut out = img.to_rgb();
    let (w, h) = (out.width() as i64, out.height() as i64);
    for lane in &result.lanes {
        let label = lane.band.as_deref().or_else(|| assign_band(lane.angle, bands));
        let color = band_color(label);
        for seg in lane.polyline_px.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.x.min(b.x) - 1.0).floor().max(0.0) as i64;
            let x1 = ((a.x.max(b.x) + 1.0).ceil() as i64).min(w - 1);
            let y0 = (a.y.min(b.y) - 1.0).floor().max(0.0) as i64;
            let y1 = ((a.y.max(b.y) + 1.0).ceil() as i64).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if point_segment_distance(Point::new(x as f64, y as f64), a, b) <= 1.0 {
                        for (c, &v) in color.iter().enumerate() {
                            out.set(x as usize, y as usize, c, v);
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane_result(points: Vec<Point>, band: &str) -> LaneResult {
        LaneResult {
            polyline_cm: points.iter().map(|p| Point::new(p.x / 10.0, p.y / 10.0)).collect(),
            polyline_px: points,
            band: Some(band.to_string()),
            angle: 100.0,
            signature_score: 1.0,
            curve_class: CurveClass::Line,
            vote: 5,
            mass: 3.0,
            missed_frames: 0,
        }
    }

    fn result(lanes: Vec<LaneResult>) -> DetectionResult {
        DetectionResult {
            frame_index: 0,
            lanes,
            flags: FrameFlags::default(),
            timing: Vec::new(),
            total_ms: 0.0,
            error: None,
        }
    }

    #[test]
    fn blank_frame_has_no_lanes() {
        let img = Image::new_gray(80, 60, 0.3);
        let (r, next) = detect_frame(&img, &PipelineConfig::default(), &TrackerState::fresh()).unwrap();
        assert!(r.lanes.is_empty());
        assert_eq!(r.error, None);
        assert_eq!(next.frame_index, 1);
    }

    #[test]
    fn overlay_colors() {
        let img = Image::new_gray(40, 40, 0.5);
        let empty = render_overlay(&img, &result(vec![]), &[]);
        assert_eq!(empty, img.to_rgb());

        let blue = lane_result(vec![Point::new(10.0, 5.0), Point::new(10.0, 35.0)], "blue");
        let green = lane_result(vec![Point::new(30.0, 5.0), Point::new(30.0, 35.0)], "green");
        let out = render_overlay(&img, &result(vec![blue, green]), &[]);
        let px = |x, y| [out.get(x, y, 0), out.get(x, y, 1), out.get(x, y, 2)];
        assert_eq!(px(10, 20), [0.0, 0.0, 1.0]);
        assert_eq!(px(30, 20), [0.0, 1.0, 0.0]);
        assert_eq!(px(20, 20), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn json_rounding_and_timing_toggle() {
        let mut r = result(vec![lane_result(
            vec![Point::new(1.23456, 2.0), Point::new(3.0, 4.005)],
            "blue",
        )]);
        r.timing.push(StageTiming {
            stage: "edges".into(),
            ms: 1.5,
        });
        let v = r.to_json(false);
        assert!(v.get("timing").is_none());
        assert_eq!(v["lanes"][0]["polyline_px"][0][0], json!(1.23));
        assert!(r.to_json(true)["timing"]["stages_ms"]["edges"].is_number());
    }

    #[test]
    fn polyline_is_monotonic() {
        let pts: Vec<Point> = (0..100)
            .map(|i| Point::new(50.0 + (i as f64 * 0.1).sin(), 300.0 - i as f64 * 3.0))
            .collect();
        let poly = lane_polyline(&pts, 8.0).unwrap();
        assert!(poly.windows(2).all(|w| w[1].y > w[0].y));
        assert!(lane_polyline(&pts[..1], 8.0).is_none());
    }
}
