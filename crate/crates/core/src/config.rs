//! Pipeline configuration: one TOML document with a table per stage.
//!
//! Keys may be written as tables or flat dotted keys (`hough.votes_min = 10`);
//! unknown keys are rejected. Overrides of the form `key.path=value` are
//! merged into the document before it is decoded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::birdseye::{estimate_homography, Homography, WorldScale};
use crate::cluster::ClusterParams;
use crate::curvemath::MvtConfig;
use crate::geom::Point;
use crate::hough::HoughParams;
use crate::imaging::IlluminationParams;
use crate::signature::{default_bands, validate_bands, AngleBand};
use crate::tracker::TrackerParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("override {key:?} conflicts with a non-table value")]
    OverrideConflict { key: String },
    #[error("invalid {section}: {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str, e: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        section,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlluminationConfig {
    pub enabled: bool,
    pub tile: usize,
    pub target_mean: f32,
}

impl Default for IlluminationConfig {
    fn default() -> Self {
        let p = IlluminationParams::default();
        Self {
            enabled: true,
            tile: p.tile,
            target_mean: p.target_mean,
        }
    }
}

impl IlluminationConfig {
    pub fn params(&self) -> IlluminationParams {
        IlluminationParams {
            tile: self.tile,
            target_mean: self.target_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurConfig {
    pub sigma: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeConfig {
    pub low: f32,
    pub high: f32,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self { low: 0.1, high: 0.2 }
    }
}

/// Four image points and where they land in the bird's-eye plane. Without
/// them the frame is taken to be bird's-eye already.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirdseyeConfig {
    pub src: Option<[[f64; 2]; 4]>,
    pub dst: Option<[[f64; 2]; 4]>,
    /// Output size; defaults to the input size.
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub pixels_per_cm: f64,
}

impl Default for BirdseyeConfig {
    fn default() -> Self {
        Self {
            src: None,
            dst: None,
            width: None,
            height: None,
            pixels_per_cm: 10.0,
        }
    }
}

impl BirdseyeConfig {
    pub fn homography(&self) -> Result<Homography, ConfigError> {
        match (&self.src, &self.dst) {
            (None, None) => Ok(Homography::identity()),
            (Some(src), Some(dst)) => {
                let pts = |q: &[[f64; 2]; 4]| q.map(|[x, y]| Point::new(x, y));
                estimate_homography(&pts(src), &pts(dst)).map_err(|e| invalid("birdseye", e))
            }
            _ => Err(invalid("birdseye", "src and dst must be given together")),
        }
    }

    pub fn scale(&self) -> Result<WorldScale, ConfigError> {
        WorldScale::new(self.pixels_per_cm).map_err(|e| invalid("birdseye", e))
    }
}

/// Which image the weighted centroids are measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    EdgeMagnitude,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidConfig {
    /// Pixels within `band + 0.5` of a segment contribute to its centroid.
    pub band: f64,
    pub source: WeightSource,
    /// Passes that re-center the weighting window on its own centroid.
    pub refine: usize,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        Self {
            band: 1.0,
            source: WeightSource::EdgeMagnitude,
            refine: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    pub length: usize,
    pub angle_tol: f64,
    pub threshold: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self {
            length: 32,
            angle_tol: 10.0,
            threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneConfig {
    /// Spacing of the lane polyline along its dominant axis.
    pub bin: f64,
    /// Lanes shorter than this along their dominant axis are dropped.
    pub min_extent: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            bin: 16.0,
            min_extent: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    /// Omit stage timings from JSON output, making it byte-reproducible.
    pub omit_timing: bool,
    /// Skip tracking: every frame is processed as if it were the first.
    pub stateless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input: Option<String>,
    pub json: Option<String>,
    pub overlay: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub illumination: IlluminationConfig,
    pub blur: BlurConfig,
    pub birdseye: BirdseyeConfig,
    pub edges: EdgeConfig,
    pub hough: HoughParams,
    pub centroid: CentroidConfig,
    pub mvt: MvtConfig,
    pub cluster: ClusterParams,
    pub signature: SignatureConfig,
    pub bands: Vec<AngleBand>,
    pub lanes: LaneConfig,
    pub tracker: TrackerParams,
    pub mode: ModeConfig,
    pub io: IoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            illumination: IlluminationConfig::default(),
            blur: BlurConfig::default(),
            birdseye: BirdseyeConfig::default(),
            edges: EdgeConfig::default(),
            hough: HoughParams::default(),
            centroid: CentroidConfig::default(),
            mvt: MvtConfig::default(),
            cluster: ClusterParams::default(),
            signature: SignatureConfig::default(),
            bands: default_bands(),
            lanes: LaneConfig::default(),
            tracker: TrackerParams::default(),
            mode: ModeConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let il = &self.illumination;
        if il.tile == 0 || !(il.target_mean > 0.0 && il.target_mean <= 1.0) {
            return Err(invalid(
                "illumination",
                "tile must be positive and target_mean in (0, 1]",
            ));
        }
        if !(self.blur.sigma > 0.0) {
            return Err(invalid("blur", "sigma must be positive"));
        }
        let e = &self.edges;
        if !(0.0 <= e.low && e.low <= e.high && e.high <= 1.0) {
            return Err(invalid("edges", "need 0 <= low <= high <= 1"));
        }
        self.birdseye.homography()?;
        self.birdseye.scale()?;
        if self.birdseye.width == Some(0) || self.birdseye.height == Some(0) {
            return Err(invalid("birdseye", "output size must be positive"));
        }
        self.hough.validate().map_err(|e| invalid("hough", e))?;
        if !(self.centroid.band >= 0.0) {
            return Err(invalid("centroid", "band must be non-negative"));
        }
        self.mvt.validate().map_err(|e| invalid("mvt", e))?;
        self.cluster.validate().map_err(|e| invalid("cluster", e))?;
        let s = &self.signature;
        if s.length < 2 || !(s.angle_tol > 0.0) || !(0.0..=1.0).contains(&s.threshold) {
            return Err(invalid(
                "signature",
                "need length >= 2, angle_tol > 0, threshold in [0, 1]",
            ));
        }
        validate_bands(&self.bands).map_err(|e| invalid("bands", e))?;
        if !(self.lanes.bin > 0.0) || !(self.lanes.min_extent >= 0.0) {
            return Err(invalid("lanes", "bin must be positive and min_extent non-negative"));
        }
        self.tracker.validate().map_err(|e| invalid("tracker", e))?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides::<&str>(text, &[])
    }

    /// Decodes `text` after applying `key=value` overrides, then validates.
    pub fn from_toml_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o.as_ref())?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

/// Sets `key.path = value` in `table`. The value is read as a TOML value
/// when it parses as one, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::OverrideConflict { key: key.to_string() })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn dotted_keys_and_tables() {
        let cfg = PipelineConfig::from_toml_str("hough.votes_min = 7\n[cluster]\nvotes_min = 2\n").unwrap();
        assert_eq!(cfg.hough.votes_min, 7);
        assert_eq!(cfg.cluster.votes_min, 2);
        assert_eq!(cfg.hough.theta_bins, HoughParams::default().theta_bins);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::from_toml_str("hough.votes = 3"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("colour = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn invariants_checked_on_load() {
        assert!(matches!(
            PipelineConfig::from_toml_str("cluster.votes_min = 0"),
            Err(ConfigError::Invalid { section: "cluster", .. })
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("edges.low = 0.5\nedges.high = 0.2"),
            Err(ConfigError::Invalid { section: "edges", .. })
        ));
        let overlapping = "[[bands]]\nlabel='a'\nlow=0\nhigh=50\n[[bands]]\nlabel='b'\nlow=40\nhigh=60\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(overlapping),
            Err(ConfigError::Invalid { section: "bands", .. })
        ));
        let collinear = "birdseye.src = [[0,0],[1,1],[2,2],[3,3]]\nbirdseye.dst = [[0,0],[1,0],[1,1],[0,1]]\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(collinear),
            Err(ConfigError::Invalid {
                section: "birdseye",
                ..
            })
        ));
    }

    #[test]
    fn overrides_win() {
        let cfg = PipelineConfig::from_toml_with_overrides(
            "hough.votes_min = 7",
            &["hough.votes_min=12", "illumination.enabled=false", "io.json=out.jsonl"],
        )
        .unwrap();
        assert_eq!(cfg.hough.votes_min, 12);
        assert!(!cfg.illumination.enabled);
        assert_eq!(cfg.io.json.as_deref(), Some("out.jsonl"));
        assert!(matches!(
            PipelineConfig::from_toml_with_overrides("", &["novalue"]),
            Err(ConfigError::BadOverride(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_with_overrides("seed = 3", &["seed.x=1"]),
            Err(ConfigError::OverrideConflict { .. })
        ));
    }

    #[test]
    fn serialized_default_round_trips() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }
}
