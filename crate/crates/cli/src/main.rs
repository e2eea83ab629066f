use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stitchlane::birdseye::warp;
use stitchlane::config::BirdseyeConfig;
use stitchlane::pipeline::{classify_frame, render_overlay, round_angle, SequenceRunner};
use stitchlane::{pnm, synth, DetectionResult, Image, PipelineConfig, SceneSpec};

#[derive(Parser)]
#[command(
    name = "stitchlane",
    version,
    about = "Curve and lane detection from short Hough segments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the overlay image (PPM).
    #[arg(long, global = true)]
    overlay: Option<PathBuf>,
    /// Also write the JSON output to this file.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Config override, e.g. `--set hough.votes_min=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Detect lanes in a single frame.
    Detect { image: PathBuf },
    /// Process an ordered frame sequence from a directory or glob.
    Track { input: String },
    /// Classify the strongest curve in a frame.
    Classify { image: PathBuf },
    /// Render a scene description to an image plus ground-truth JSON.
    Synth {
        spec: PathBuf,
        /// Image path; defaults to the scene file with a .ppm extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build a bird's-eye config block from 4 source and 4 target points.
    ///
    /// Reads 16 numbers from stdin unless `--points` is given: the four
    /// image points as x y pairs, then the four bird's-eye points.
    Calibrate {
        /// 16 comma-separated numbers.
        #[arg(long, allow_negative_numbers = true, value_delimiter = ',', value_name = "X,Y,...")]
        points: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10.0)]
        pixels_per_cm: f64,
        /// Output size of the warped frame.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let common = cli.common;
    match cli.command {
        Command::Detect { image } => detect(&common, &image),
        Command::Track { input } => track(&common, &input),
        Command::Classify { image } => classify(&common, &image),
        Command::Synth { spec, output } => synthesize(&common, &spec, output),
        Command::Calibrate {
            points,
            pixels_per_cm,
            width,
            height,
        } => calibrate(&common, points, pixels_per_cm, width, height),
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut sets = common.sets.clone();
    if let Some(seed) = common.seed {
        sets.push(format!("seed={seed}"));
    }
    Ok(PipelineConfig::from_toml_with_overrides(&text, &sets)?)
}

fn json_target(common: &Common, cfg: &PipelineConfig) -> Option<PathBuf> {
    common.json.clone().or_else(|| cfg.io.json.as_ref().map(PathBuf::from))
}

fn overlay_target(common: &Common, cfg: &PipelineConfig) -> Option<PathBuf> {
    common
        .overlay
        .clone()
        .or_else(|| cfg.io.overlay.as_ref().map(PathBuf::from))
}

/// Prints each line to stdout and mirrors them to `path` when given.
fn emit(lines: &[String], path: Option<&Path>) -> Result<()> {
    let mut out = io::stdout().lock();
    for line in lines {
        match writeln!(out, "{line}") {
            // a closed reader (e.g. `| head`) is not our failure
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => break,
            r => r?,
        }
    }
    if let Some(path) = path {
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// The frame as the detector sees it, so overlay coordinates line up.
fn birdseye_view(img: &Image, cfg: &PipelineConfig) -> Result<Image> {
    let h = cfg.birdseye.homography()?;
    if h.is_identity() {
        return Ok(img.clone());
    }
    let w = cfg.birdseye.width.unwrap_or(img.width());
    let ht = cfg.birdseye.height.unwrap_or(img.height());
    Ok(warp(img, &h, w, ht))
}

fn write_overlay(path: &Path, img: &Image, result: &DetectionResult, cfg: &PipelineConfig) -> Result<()> {
    let base = birdseye_view(img, cfg)?;
    let drawn = render_overlay(&base, result, &cfg.bands);
    pnm::write(path, &drawn).with_context(|| format!("writing {}", path.display()))
}

fn detect(common: &Common, image: &Path) -> Result<i32> {
    let cfg = load_config(common)?;
    let img = pnm::read(image).with_context(|| format!("reading {}", image.display()))?;
    let mut runner = SequenceRunner::new(cfg.clone());
    let result = runner.process(&img);
    emit(
        &[result.to_json_line(!cfg.mode.omit_timing)],
        json_target(common, &cfg).as_deref(),
    )?;
    if let Some(path) = overlay_target(common, &cfg) {
        write_overlay(&path, &img, &result, &cfg)?;
    }
    Ok(if result.error.is_some() { 1 } else { 0 })
}

fn frame_paths(input: &str) -> Result<Vec<PathBuf>> {
    let dir = Path::new(input);
    let mut paths: Vec<PathBuf> = if dir.is_dir() {
        fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "pnm"))
            })
            .collect()
    } else {
        glob::glob(input)?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect()
    };
    paths.sort();
    if paths.is_empty() {
        bail!("no frames found for {input}");
    }
    Ok(paths)
}

/// `lane.ppm` becomes `lane_0003.ppm` for frame 3.
fn numbered(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("overlay");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{index:04}.{ext}"),
        None => format!("{stem}_{index:04}"),
    };
    path.with_file_name(name)
}

fn track(common: &Common, input: &str) -> Result<i32> {
    let cfg = load_config(common)?;
    let overlay = overlay_target(common, &cfg);
    let mut runner = SequenceRunner::new(cfg.clone());
    let mut lines = Vec::new();
    let mut failed = false;
    for (i, path) in frame_paths(input)?.iter().enumerate() {
        let result = match pnm::read(path) {
            Ok(img) => {
                let result = runner.process(&img);
                if let Some(target) = &overlay {
                    write_overlay(&numbered(target, i), &img, &result, &cfg)?;
                }
                result
            }
            Err(e) => runner.record_error("load", format!("{}: {e}", path.display())),
        };
        failed |= result.error.is_some();
        lines.push(result.to_json_line(!cfg.mode.omit_timing));
    }
    emit(&lines, json_target(common, &cfg).as_deref())?;
    Ok(if failed { 1 } else { 0 })
}

fn classify(common: &Common, image: &Path) -> Result<i32> {
    let cfg = load_config(common)?;
    let img = pnm::read(image).with_context(|| format!("reading {}", image.display()))?;
    let record = match classify_frame(&img, &cfg)? {
        Some(d) => json!({
            "curve_class": d.curve_class,
            "score": (d.score * 1e3).round() / 1e3,
            "band": d.band,
            "angle": round_angle(d.cluster.representative.angle),
            "vote": d.cluster.vote,
            "signature": d.signature.as_ref().map(|s| s.angles.iter().map(|a| round_angle(*a)).collect::<Vec<_>>()),
        }),
        None => json!({ "curve_class": null, "score": 0.0, "band": null }),
    };
    emit(&[record.to_string()], json_target(common, &cfg).as_deref())?;
    Ok(0)
}

fn synthesize(common: &Common, spec_path: &Path, output: Option<PathBuf>) -> Result<i32> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: SceneSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let (img, truth) = synth::render(&spec)?;
    let image_path = output.unwrap_or_else(|| spec_path.with_extension("ppm"));
    pnm::write(&image_path, &img).with_context(|| format!("writing {}", image_path.display()))?;
    let truth_path = common.json.clone().unwrap_or_else(|| image_path.with_extension("json"));
    fs::write(&truth_path, serde_json::to_string(&truth)?)
        .with_context(|| format!("writing {}", truth_path.display()))?;
    println!("{}", json!({ "image": image_path, "truth": truth_path }));
    Ok(0)
}

fn read_points(points: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let values = match points {
        Some(p) => p,
        None => {
            let mut text = String::new();
            io::stdin().read_to_string(&mut text)?;
            text.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| anyhow!("not a number: {t}")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if values.len() != 16 {
        bail!("expected 16 numbers (8 x y pairs), got {}", values.len());
    }
    Ok(values)
}

fn calibrate(
    common: &Common,
    points: Option<Vec<f64>>,
    pixels_per_cm: f64,
    width: Option<usize>,
    height: Option<usize>,
) -> Result<i32> {
    let v = read_points(points)?;
    let quad = |o: usize| std::array::from_fn(|i| [v[o + 2 * i], v[o + 2 * i + 1]]);
    let block = BirdseyeConfig {
        src: Some(quad(0)),
        dst: Some(quad(8)),
        width,
        height,
        pixels_per_cm,
    };
    block.homography()?;
    block.scale()?;
    let mut table = toml::Table::new();
    table.insert("birdseye".into(), toml::Value::try_from(&block)?);
    let text = toml::to_string(&table)?;
    print!("{text}");
    if let Some(path) = &common.json {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}
