//! Fixtures shared by the benchmarks.

use stitchlane::synth::{render, two_lane_scene};
use stitchlane::Image;

/// A rendered two-lane road frame at the benchmark resolution.
pub fn road_frame(width: usize, height: usize, seed: u64) -> Image {
    let mut spec = two_lane_scene(width, height, seed);
    spec.noise.count = 100;
    spec.noise.max_length = 8.0;
    render(&spec).expect("fixture spec is valid").0
}
