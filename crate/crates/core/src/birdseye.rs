//! Plane homography for the bird's-eye rectification and the pixel to world
//! distance scale.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;
use crate::imaging::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BirdseyeError {
    #[error("degenerate point configuration: three of the four points are collinear")]
    DegenerateConfiguration,
    #[error("homography is not invertible")]
    Singular,
    #[error("pixels_per_cm must be positive, got {0}")]
    InvalidScale(f64),
}

/// Projective map of the plane, normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    inv: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
            inv: Matrix3::identity(),
        }
    }

    /// Wraps a raw matrix, rescaling it so the bottom-right entry is 1.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, BirdseyeError> {
        let scale = m[(2, 2)];
        if scale.abs() < 1e-12 || !m.iter().all(|v| v.is_finite()) {
            return Err(BirdseyeError::Singular);
        }
        let m = m / scale;
        if m.determinant().abs() < 1e-12 {
            return Err(BirdseyeError::Singular);
        }
        let inv = m.try_inverse().ok_or(BirdseyeError::Singular)?;
        let inv = inv / inv[(2, 2)];
        Ok(Self { m, inv })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, BirdseyeError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Homography {
        Homography {
            m: self.inv,
            inv: self.m,
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Homography, BirdseyeError> {
        Homography::from_matrix(self.m * first.m)
    }

    pub fn is_identity(&self) -> bool {
        self.m == Matrix3::identity()
    }

    pub fn project(&self, p: Point) -> Point {
        project_with(&self.m, p)
    }

    pub fn project_inverse(&self, p: Point) -> Point {
        project_with(&self.inv, p)
    }
}

fn project_with(m: &Matrix3<f64>, p: Point) -> Point {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

fn any_three_collinear(pts: &[Point; 4]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| a.distance(*b)))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    let triples = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    triples.iter().any(|&(i, j, k)| {
        let (a, b, c) = (pts[i], pts[j], pts[k]);
        let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        cross.abs() <= 1e-9 * scale * scale
    })
}

/// Similarity that centers the points and scales their mean distance to √2.
fn conditioning(pts: &[Point; 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Exact homography through four point correspondences `src[i] -> dst[i]`.
///
/// Both quads are conditioned (centered, scaled) before the 8x8 linear solve
/// and the result is mapped back to pixel coordinates.
pub fn estimate_homography(src: &[Point; 4], dst: &[Point; 4]) -> Result<Homography, BirdseyeError> {
    if any_three_collinear(src) || any_three_collinear(dst) {
        return Err(BirdseyeError::DegenerateConfiguration);
    }
    let ts = conditioning(src);
    let td = conditioning(dst);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let p = project_with(&ts, src[i]);
        let q = project_with(&td, dst[i]);
        let r = 2 * i;
        a[(r, 0)] = p.x;
        a[(r, 1)] = p.y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -q.x * p.x;
        a[(r, 7)] = -q.x * p.y;
        b[r] = q.x;
        a[(r + 1, 3)] = p.x;
        a[(r + 1, 4)] = p.y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -q.y * p.x;
        a[(r + 1, 7)] = -q.y * p.y;
        b[r + 1] = q.y;
    }
    let h = a
        .full_piv_lu()
        .solve(&b)
        .ok_or(BirdseyeError::DegenerateConfiguration)?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td.try_inverse().ok_or(BirdseyeError::Singular)?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// Inverse-maps every output pixel through `h` and samples the source
/// bilinearly. Pixels whose preimage falls outside the source are 0.
pub fn warp(img: &Image, h: &Homography, out_width: usize, out_height: usize) -> Image {
    let ch = img.channels();
    let mut data = vec![0.0f32; out_width * out_height * ch];
    let inv = &h.inv;
    for y in 0..out_height {
        for x in 0..out_width {
            let src = project_with(inv, Point::new(x as f64, y as f64));
            if !(src.x.is_finite() && src.y.is_finite()) {
                continue;
            }
            for c in 0..ch {
                if let Some(v) = img.sample_bilinear(src.x, src.y, c) {
                    data[(y * out_width + x) * ch + c] = v;
                }
            }
        }
    }
    Image::from_vec(out_width, out_height, ch, data).expect("warp output dimensions")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldScale {
    pixels_per_cm: f64,
}

impl WorldScale {
    pub fn new(pixels_per_cm: f64) -> Result<Self, BirdseyeError> {
        if pixels_per_cm > 0.0 && pixels_per_cm.is_finite() {
            Ok(Self { pixels_per_cm })
        } else {
            Err(BirdseyeError::InvalidScale(pixels_per_cm))
        }
    }

    pub fn pixels_per_cm(&self) -> f64 {
        self.pixels_per_cm
    }
}

/// Converts a bird's-eye pixel distance to centimeters.
pub fn to_world(d_px: f64, scale: WorldScale) -> f64 {
    d_px / scale.pixels_per_cm
}
