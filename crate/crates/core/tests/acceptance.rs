//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own PASS/FAIL line under a plain `cargo test`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stitchlane::config::PipelineConfig;
use stitchlane::geom::angle_distance;
use stitchlane::hough::accumulate;
use stitchlane::imaging::EdgeMap;
use stitchlane::pipeline::{
    analyze_frame, classify_frame, detect_frame, run_sequence, standard_library, DetectionResult,
};
use stitchlane::signature::{assign_band, classify_curve, default_bands, match_signature};
use stitchlane::synth::{
    render, score_detection, two_lane_scene, CurveShape, CurveSpec, CurveTruth, GroundTruth, ParamAxis, SceneSpec,
    ShadowSpec,
};
use stitchlane::tracker::{Lane, LaneModel};
use stitchlane::{CurveClass, Point, SlopeSignature, TrackerState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn cfg_with(sets: &[String]) -> PipelineConfig {
    PipelineConfig::from_toml_with_overrides("", sets).expect("config")
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn curve_distance(c: &CurveTruth, p: Point) -> f64 {
    c.points.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min)
}

fn model_of(r: &DetectionResult) -> LaneModel {
    LaneModel {
        lanes: r
            .lanes
            .iter()
            .map(|l| Lane::new(l.polyline_px.clone(), l.band.clone()))
            .collect(),
        frame_index: r.frame_index,
    }
}

fn tangent_shapes() -> Vec<(&'static str, CurveShape)> {
    vec![
        (
            "parabola",
            CurveShape::Parabola {
                h: 320.0,
                k: 120.0,
                a: 0.004,
                from: 60.0,
                to: 580.0,
                axis: ParamAxis::X,
            },
        ),
        (
            "circle",
            CurveShape::Circle {
                cx: 320.0,
                cy: 240.0,
                r: 170.0,
                start_deg: 0.0,
                sweep_deg: 360.0,
            },
        ),
        (
            "sine",
            CurveShape::Sine {
                base: 240.0,
                slope: 0.0,
                amplitude: 40.0,
                wavelength: 320.0,
                phase: 0.0,
                from: 40.0,
                to: 600.0,
                axis: ParamAxis::X,
            },
        ),
    ]
}

/// Tangent angle errors, against the analytic truth, of every sample in
/// every surviving cluster.
fn tangent_errors(shape: &CurveShape, max_pair_gap: f64) -> Vec<f64> {
    let spec = SceneSpec::new(640, 480).with_curve(CurveSpec::new(shape.clone()));
    let (img, truth) = render(&spec).expect("render");
    let cfg = cfg_with(&[format!("mvt.max_pair_gap={max_pair_gap}")]);
    let analysis = analyze_frame(&img, &cfg, 0).expect("analysis");
    analysis
        .clusters
        .iter()
        .flat_map(|c| c.tangents.iter())
        .map(|t| {
            let (angle, _) = truth.nearest_angle(t.point()).expect("truth");
            angle_distance(t.angle, angle)
        })
        .collect()
}

fn c1a_tangent_fidelity() -> Outcome {
    let mut worst = 1.0f64;
    let mut parts = Vec::new();
    for (name, shape) in tangent_shapes() {
        let errs = tangent_errors(&shape, 16.0);
        let frac = errs.iter().filter(|&&e| e <= 3.0).count() as f64 / errs.len().max(1) as f64;
        worst = worst.min(if errs.is_empty() { 0.0 } else { frac });
        parts.push(format!("{name} {:.3} of {}", frac, errs.len()));
    }
    outcome(worst >= 0.9, format!("within 3 deg: {}", parts.join(", ")))
}

fn c1b_tangent_convergence() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, shape) in tangent_shapes() {
        let m: Vec<f64> = [16.0, 8.0, 4.0]
            .iter()
            .map(|&g| median(tangent_errors(&shape, g)))
            .collect();
        ok &= m[1] <= m[0] && m[2] <= m[1];
        parts.push(format!("{name} {:.3}/{:.3}/{:.3}", m[0], m[1], m[2]));
    }
    outcome(ok, format!("median error at gap 16/8/4: {}", parts.join(", ")))
}

fn c2_noise_suppression() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut good = 0;
    let mut counts = Vec::new();
    for seed in 0..20u64 {
        let mut spec = two_lane_scene(640, 480, seed);
        spec.noise.count = 200;
        spec.noise.min_length = 3.0;
        spec.noise.max_length = 3.0;
        let (img, truth) = render(&spec).expect("render");
        let a = analyze_frame(&img, &cfg, 0).expect("analysis");
        counts.push(a.clusters.len());
        if a.clusters.len() != 2 {
            continue;
        }
        // each cluster lies on one lane, and the two lanes differ
        let mut owners = Vec::new();
        let mut near = true;
        for d in &a.clusters {
            let centroids: Vec<Point> = d.cluster.member_centroids().collect();
            let worst: Vec<f64> = truth
                .curves
                .iter()
                .map(|c| centroids.iter().map(|&p| curve_distance(c, p)).fold(0.0, f64::max))
                .collect();
            let (owner, dist) = worst
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &d)| (i, d))
                .expect("two curves");
            near &= dist <= 5.0;
            owners.push(owner);
        }
        if near && owners[0] != owners[1] {
            good += 1;
        }
    }
    outcome(
        good >= 19,
        format!("{good}/20 runs with two on-lane clusters, cluster counts {counts:?}"),
    )
}

fn class_instance(class: CurveClass, rng: &mut ChaCha8Rng) -> CurveShape {
    match class {
        CurveClass::Line => {
            let angle: f64 = rng.gen_range(0.0..PI);
            let len = rng.gen_range(200.0..380.0);
            let (cx, cy) = (rng.gen_range(260.0..380.0), rng.gen_range(200.0..280.0));
            let (dx, dy) = (0.5 * len * angle.cos(), 0.5 * len * angle.sin());
            CurveShape::Line {
                x0: cx - dx,
                y0: cy - dy,
                x1: cx + dx,
                y1: cy + dy,
            }
        }
        CurveClass::Parabola => {
            let axis = if rng.gen_bool(0.5) { ParamAxis::X } else { ParamAxis::Y };
            let (along, across) = match axis {
                ParamAxis::X => (640.0, 480.0),
                ParamAxis::Y => (480.0, 640.0),
            };
            let half: f64 = rng.gen_range(0.25..0.4) * along;
            let end_slope: f64 = rng.gen_range(0.8..5.0);
            let a = end_slope / (2.0 * half) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let rise = a.abs() * half * half;
            let h = along / 2.0 + rng.gen_range(-20.0..20.0);
            let margin = (across - rise) / 2.0;
            let k = if a > 0.0 { margin } else { across - margin };
            CurveShape::Parabola {
                h,
                k,
                a,
                from: h - half,
                to: h + half,
                axis,
            }
        }
        CurveClass::Circle => {
            let r = rng.gen_range(70.0..200.0);
            CurveShape::Circle {
                cx: 320.0 + rng.gen_range(-20.0..20.0),
                cy: 240.0 + rng.gen_range(-20.0..20.0),
                r,
                start_deg: 0.0,
                sweep_deg: 360.0,
            }
        }
        CurveClass::Ellipse => {
            let aspect = rng.gen_range(1.6..3.5);
            let upright = rng.gen_bool(0.5);
            let a = if upright {
                rng.gen_range(120.0..210.0)
            } else {
                rng.gen_range(150.0..280.0)
            };
            CurveShape::Ellipse {
                cx: 320.0 + rng.gen_range(-20.0..20.0),
                cy: 240.0 + rng.gen_range(-20.0..20.0),
                a,
                b: a / aspect,
                rotation_deg: if upright { 90.0 } else { 0.0 },
                start_deg: 0.0,
                sweep_deg: 360.0,
            }
        }
        CurveClass::Hyperbola => {
            let half: f64 = rng.gen_range(180.0..260.0);
            let c: f64 = rng.gen_range(0.12..0.35) * half;
            let m: f64 = rng.gen_range(0.7..1.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let rise = m.abs() * ((c * c + half * half).sqrt() - c);
            let margin = (480.0 - rise) / 2.0;
            let k = if m > 0.0 {
                margin - m * c
            } else {
                480.0 - margin - m * c
            };
            CurveShape::Hyperbola {
                h: 320.0 + rng.gen_range(-20.0..20.0),
                k,
                m,
                c,
                from: 320.0 - half,
                to: 320.0 + half,
                axis: ParamAxis::X,
            }
        }
        CurveClass::Unknown => unreachable!(),
    }
}

fn c3_classification() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = [
        CurveClass::Line,
        CurveClass::Parabola,
        CurveClass::Circle,
        CurveClass::Ellipse,
        CurveClass::Hyperbola,
    ];
    let mut correct = 0;
    let mut per_class = Vec::new();
    for class in classes {
        let mut hits = 0;
        for i in 0..25u64 {
            let mut spec = SceneSpec::new(640, 480).with_curve(CurveSpec::new(class_instance(class, &mut rng)));
            spec.pixel_noise = 0.04;
            spec.seed = 100 + i;
            let (img, _) = render(&spec).expect("render");
            let got = classify_frame(&img, &cfg).expect("classify").map(|d| d.curve_class);
            if got == Some(class) {
                hits += 1;
            }
        }
        per_class.push(format!("{class} {hits}/25"));
        correct += hits;
    }
    let shapes_ok = correct as f64 >= 0.9 * 125.0;

    let library = standard_library(cfg.signature.length);
    let mut unknown = 0;
    for _ in 0..1000 {
        let angles: Vec<f64> = (0..cfg.signature.length).map(|_| rng.gen_range(0.0..180.0)).collect();
        let sig = SlopeSignature {
            angles,
            arc_span: 300.0,
        };
        let (class, score) =
            classify_curve(&sig, &library, cfg.signature.angle_tol, cfg.signature.threshold).expect("classify");
        if class == CurveClass::Unknown && score < 0.9 {
            unknown += 1;
        }
    }
    let random_ok = unknown as f64 >= 0.95 * 1000.0;
    outcome(
        shapes_ok && random_ok,
        format!(
            "{correct}/125 correct ({}), random signatures unknown {unknown}/1000",
            per_class.join(", ")
        ),
    )
}

fn c4_matching_boundary() -> Outcome {
    let reference = SlopeSignature {
        angles: (0..32).map(|i| i as f64 * 5.0).collect(),
        arc_span: 100.0,
    };
    let with_hits = |hits: usize| SlopeSignature {
        angles: reference
            .angles
            .iter()
            .enumerate()
            .map(|(i, &a)| if i < hits { a } else { (a + 90.0) % 180.0 })
            .collect(),
        arc_span: 100.0,
    };
    let (s29, m29) = match_signature(&with_hits(29), &reference, 10.0, 0.9).expect("match");
    let (s28, m28) = match_signature(&with_hits(28), &reference, 10.0, 0.9).expect("match");
    outcome(
        s29 == 0.90625 && m29 && s28 == 0.875 && !m28,
        format!("29 hits -> {s29} matched={m29}, 28 hits -> {s28} matched={m28}"),
    )
}

fn c5_band_assignment() -> Outcome {
    let bands = default_bands();
    let got: Vec<Option<&str>> = [100.0, 75.0, 90.0].iter().map(|&a| assign_band(a, &bands)).collect();
    outcome(
        got == [Some("blue"), Some("green"), Some("blue")],
        format!("100 -> {:?}, 75 -> {:?}, 90 -> {:?}", got[0], got[1], got[2]),
    )
}

/// Two frames of one scene; the second erases `[start, start + size)` of the
/// left lane's arc.
fn gap_pair(seed: u64, start: f64, size: f64) -> (Vec<stitchlane::Image>, GroundTruth) {
    let spec = two_lane_scene(640, 480, seed);
    let (first, _) = render(&spec).expect("render");
    let mut gapped = spec.clone();
    gapped.curves[0] = gapped.curves[0].clone().with_gap(start, start + size);
    let (second, truth) = render(&gapped).expect("render");
    (vec![first, second], truth)
}

fn left_lane(r: &DetectionResult, truth: &GroundTruth) -> Option<Vec<Point>> {
    r.lanes
        .iter()
        .map(|l| &l.polyline_px)
        .filter(|p| p.len() >= 2)
        .min_by(|a, b| {
            let d = |p: &&Vec<Point>| median(p.iter().map(|&q| curve_distance(&truth.curves[0], q)).collect());
            d(a).total_cmp(&d(b))
        })
        .cloned()
}

fn c6_discontinuity_filling() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bridged = 0;
    let mut worst_dev = 0.0f64;
    for seed in 0..20u64 {
        let size = rng.gen_range(0.05..0.15);
        let start = rng.gen_range(0.3..0.55);
        let (frames, truth) = gap_pair(seed, start, size);
        let results = run_sequence(&frames, &cfg);
        let r = &results[1];
        let Some(poly) = left_lane(r, &truth) else { continue };
        let dev = poly
            .iter()
            .map(|&p| curve_distance(&truth.curves[0], p))
            .fold(0.0, f64::max);
        // continuous: no spacing left that a gap search would flag
        let steps: Vec<f64> = poly.windows(2).map(|w| w[0].distance(w[1])).collect();
        let spacing = median(steps.clone());
        let continuous = steps.iter().all(|&s| s <= 3.0 * spacing);
        // the erased span must actually be covered by the polyline
        let erased: Vec<Point> = truth.curves[0]
            .points
            .iter()
            .zip(&truth.curves[0].visible)
            .filter(|(_, v)| !**v)
            .map(|(p, _)| *p)
            .collect();
        let covered = erased
            .iter()
            .all(|&p| stitchlane::geom::point_polyline_distance(p, &poly) <= 5.0);
        worst_dev = worst_dev.max(dev);
        if r.flags.gaps_filled >= 1 && dev <= 5.0 && continuous && covered {
            bridged += 1;
        }
    }

    let mut left_open = 0;
    for seed in 0..20u64 {
        let (frames, truth) = gap_pair(seed, 0.2, 0.6);
        let results = run_sequence(&frames, &cfg);
        let c = &truth.curves[0];
        // no lane point may sit deep inside the erased span
        let deep: Vec<Point> = c
            .points
            .iter()
            .enumerate()
            .filter(|&(i, _)| {
                let lo = c.points.len() * 30 / 100;
                let hi = c.points.len() * 70 / 100;
                (lo..hi).contains(&i)
            })
            .map(|(_, p)| *p)
            .collect();
        let intruding = results[1]
            .lanes
            .iter()
            .flat_map(|l| l.polyline_px.iter())
            .any(|&p| deep.iter().any(|&q| q.distance(p) <= 5.0));
        if !intruding {
            left_open += 1;
        }
    }
    outcome(
        bridged >= 19 && left_open == 20,
        format!(
            "small gaps bridged {bridged}/20 (worst deviation {worst_dev:.2} px), 60% gaps left open {left_open}/20"
        ),
    )
}

fn c7_shadow_robustness() -> Outcome {
    let on = PipelineConfig::default();
    let off = cfg_with(&["illumination.enabled=false".to_string()]);
    let mut worst_on = 1.0f64;
    let mut worst_off = 0.0f64;
    for seed in 0..5u64 {
        let mut spec = two_lane_scene(640, 480, seed);
        spec.shadow = Some(ShadowSpec::halving(0.0));
        let (img, truth) = render(&spec).expect("render");
        let coverage = |cfg: &PipelineConfig| {
            let (r, _) = detect_frame(&img, cfg, &TrackerState::fresh()).expect("detect");
            score_detection(&model_of(&r), &truth, 5.0, 5.0).mean_coverage()
        };
        worst_on = worst_on.min(coverage(&on));
        worst_off = worst_off.max(coverage(&off));
    }
    outcome(
        worst_on >= 0.9 && worst_off < 0.6,
        format!("coverage with correction >= {worst_on:.3}, without <= {worst_off:.3} over 5 scenes"),
    )
}

fn c8_hough_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (32usize, 32usize);
    let theta_bins = 180;
    let r_max = (w as f64).hypot(h as f64);
    let mut ok = 0;
    for _ in 0..50 {
        let k = rng.gen_range(1..=3usize);
        let mut planted: Vec<(usize, usize)> = Vec::new();
        let mut bin = vec![false; w * h];
        while planted.len() < k {
            // a line through the image at a bin-center angle and radius
            let t = rng.gen_range(0..theta_bins);
            let theta = t as f64 * PI / theta_bins as f64;
            let (px, py) = (rng.gen_range(6.0..26.0), rng.gen_range(6.0..26.0));
            let rb = ((px * theta.cos() + py * theta.sin() + r_max).round()) as usize;
            let r = rb as f64 - r_max;
            if planted.iter().any(|&(t2, r2)| {
                let dt = (t as i64 - t2 as i64).rem_euclid(theta_bins as i64);
                dt.min(theta_bins as i64 - dt) < 8 && (rb as i64 - r2 as i64).abs() < 8
            }) {
                continue;
            }
            let mut count = 0;
            for y in 0..h {
                for x in 0..w {
                    if (x as f64 * theta.cos() + y as f64 * theta.sin() - r).abs() < 0.5 {
                        bin[y * w + x] = true;
                        count += 1;
                    }
                }
            }
            if count < 16 {
                continue;
            }
            planted.push((t, rb));
        }
        let map = EdgeMap::from_binary(w, h, bin.clone());
        let acc = accumulate(&map, theta_bins, 1.0).expect("accumulate");

        // brute-force oracle: every bin recounted from the pixels directly
        let pixels: Vec<(f64, f64)> = (0..w * h)
            .filter(|&i| bin[i])
            .map(|i| ((i % w) as f64, (i / w) as f64))
            .collect();
        let oracle_equal = (0..theta_bins).all(|t| {
            let theta = t as f64 * PI / theta_bins as f64;
            let mut row = vec![0u32; acc.r_bins()];
            for &(x, y) in &pixels {
                row[((x * theta.cos() + y * theta.sin() + r_max) / 1.0).round() as usize] += 1;
            }
            row == acc.row(t)
        });

        let peaks = acc.peaks(k + 2, 1);
        let found = planted.iter().all(|&(t, rb)| {
            peaks.iter().any(|(line, _)| {
                let (pt, pr) = acc.bin_of(*line);
                pt == t && pr == rb
            })
        });
        if oracle_equal && found {
            ok += 1;
        }
    }
    outcome(
        ok == 50,
        format!("{ok}/50 maps with matching votes and every planted bin among the top peaks"),
    )
}

fn c9_realtime() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut spec = two_lane_scene(640, 480, 9);
    spec.noise.count = 100;
    spec.noise.max_length = 8.0;
    let (img, _) = render(&spec).expect("render");
    let mut totals = Vec::new();
    let mut stages_ok = true;
    for _ in 0..7 {
        let t0 = Instant::now();
        let (r, _) = detect_frame(&img, &cfg, &TrackerState::fresh()).expect("detect");
        totals.push(t0.elapsed().as_secs_f64() * 1e3);
        let sum: f64 = r.timing.iter().map(|t| t.ms).sum();
        stages_ok &= r.timing.len() >= 10 && (sum - r.total_ms).abs() <= 1.0;
    }
    let m = median(totals);
    outcome(
        m < 100.0 && stages_ok,
        format!("median detect_frame {m:.1} ms at 640x480, stage timings reported={stages_ok}"),
    )
}

fn c10_determinism() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut spec = two_lane_scene(640, 480, 10);
    spec.noise.count = 50;
    let (img, _) = render(&spec).expect("render");
    let single = || {
        let (r, _) = detect_frame(&img, &cfg, &TrackerState::fresh()).expect("detect");
        r.to_json_line(false)
    };
    let frames: Vec<_> = (0..4)
        .map(|i| render(&spec.translated(0.0, 2.0 * i as f64)).expect("render").0)
        .collect();
    let sequence = || {
        run_sequence(&frames, &cfg)
            .iter()
            .map(|r| r.to_json_line(false))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (a, b) = (single(), single());
    let (s1, s2) = (sequence(), sequence());
    outcome(
        a == b && s1 == s2,
        format!(
            "single frame identical={}, 4-frame track identical={}",
            a == b,
            s1 == s2
        ),
    )
}

/// Id, name, check, and whether a failure fails the run.
type Criterion = (&'static str, &'static str, fn() -> Outcome, bool);

fn main() -> ExitCode {
    let started = Instant::now();
    // The convergence half of criterion 1 is recorded but does not gate the
    // run; see the README.
    let criteria: [Criterion; 11] = [
        ("1a", "tangent fidelity", c1a_tangent_fidelity, true),
        ("1b", "tangent convergence", c1b_tangent_convergence, false),
        ("2", "noise suppression", c2_noise_suppression, true),
        ("3", "classification", c3_classification, true),
        ("4", "matching boundary", c4_matching_boundary, true),
        ("5", "band assignment", c5_band_assignment, true),
        ("6", "discontinuity filling", c6_discontinuity_filling, true),
        ("7", "shadow robustness", c7_shadow_robustness, true),
        ("8", "hough oracle equivalence", c8_hough_oracle, true),
        ("9", "real-time budget", c9_realtime, true),
        ("10", "determinism", c10_determinism, true),
    ];
    let mut failed = 0;
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    for (id, name, run, gating) in criteria {
        if only.as_deref().is_some_and(|o| o.split(',').all(|x| x != id)) {
            continue;
        }
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && !gating { " (non-gating)" } else { "" };
        println!("criterion {id:>2} {name:<26} {status}{note}: {}", o.detail);
        if !o.pass && gating {
            failed += 1;
        }
    }
    println!("acceptance finished in {:.1} s", started.elapsed().as_secs_f64());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
