//! Curve and lane detection built from short probabilistic-Hough segments.
//!
//! A curve is treated as the envelope of many tiny tangent segments. The
//! crate recovers those segments from an edge map, converts pairs of their
//! intensity-weighted centroids into tangent samples with the mean value
//! theorem, groups segments into voted clusters, and characterizes each
//! curve by an ordered vector of tangent angles. A small tracker carries
//! the lane model from frame to frame and bridges short gaps.
//!
//! Stage order used by [`pipeline::detect_frame`]:
//!
//! 1. RGB to HSV, local illumination correction of V, Gaussian smoothing
//! 2. bird's-eye warp through a plane homography
//! 3. gradient edges with hysteresis
//! 4. probabilistic Hough segments
//! 5. weighted centroids, clustering and vote thresholding
//! 6. per-cluster tangent fields, slope signatures, classification, angle bands
//! 7. frame feedback: gap filling and temporal smoothing

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birdseye;
pub mod cluster;
pub mod config;
pub mod curvemath;
pub mod geom;
pub mod hough;
pub mod imaging;
pub mod pipeline;
pub mod pnm;
pub mod signature;
pub mod synth;
pub mod tracker;

pub use birdseye::{Homography, WorldScale};
pub use cluster::{ClusterParams, CurveCluster};
pub use config::PipelineConfig;
pub use curvemath::{MvtConfig, TangentSample, WeightedPoint};
pub use geom::Point;
pub use hough::{HoughParams, LineSegment, PolarLine};
pub use imaging::{EdgeMap, Image};
pub use pipeline::{DetectionResult, TrackerState};
pub use signature::{AngleBand, CurveClass, SlopeSignature};
pub use synth::{GroundTruth, SceneSpec};
pub use tracker::{Lane, LaneModel, TextureDescriptor};
