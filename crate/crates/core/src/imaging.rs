//! Pixel-level primitives: the image container, HSV conversion, separable
//! Gaussian smoothing, local illumination correction and gradient edges.
//!
//! Intensities are `f32` in `[0, 1]`. 8-bit data is converted at the I/O
//! boundary (see [`crate::pnm`]). Every convolution replicates edge pixels.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("expected {expected} channel(s), got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("gaussian sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("edge thresholds must satisfy 0 <= low <= high <= 1, got low={low} high={high}")]
    BadThresholds { low: f32, high: f32 },
    #[error("buffer of {actual} samples does not match {width}x{height}x{channels}")]
    BadDimensions {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
    #[error("illumination tile must be at least 1 pixel")]
    InvalidTile,
}

/// Row-major pixel grid with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, clamping every sample into `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self, ImagingError> {
        if !(channels == 1 || channels == 3) {
            return Err(ImagingError::ChannelMismatch {
                expected: 3,
                actual: channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::BadDimensions {
                width,
                height,
                channels,
                actual: data.len(),
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn new_gray(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn new_rgb(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend(rgb.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<Image, ImagingError> {
        if c >= self.channels {
            return Err(ImagingError::ChannelMismatch {
                expected: c + 1,
                actual: self.channels,
            });
        }
        let data = self.data.chunks_exact(self.channels).map(|px| px[c]).collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        })
    }

    /// Returns a copy with channel `c` replaced by the single-channel `plane`.
    pub fn with_channel(&self, c: usize, plane: &Image) -> Result<Image, ImagingError> {
        if plane.channels != 1 {
            return Err(ImagingError::ChannelMismatch {
                expected: 1,
                actual: plane.channels,
            });
        }
        if c >= self.channels {
            return Err(ImagingError::ChannelMismatch {
                expected: c + 1,
                actual: self.channels,
            });
        }
        let mut out = self.clone();
        for (px, v) in out.data.chunks_exact_mut(self.channels).zip(&plane.data) {
            px[c] = *v;
        }
        Ok(out)
    }

    /// Replicates a gray image into three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Luma (Rec. 601 weights) for RGB, identity for gray.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Horizontal mirror.
    pub fn mirror_x(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.data[(y * self.width + x) * self.channels + c] = self.get(self.width - 1 - x, y, c);
                }
            }
        }
        out
    }

    /// Bilinear sample of channel `c`; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> Option<f32> {
        const EPS: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -EPS && y >= -EPS && x <= max_x + EPS && y <= max_y + EPS) {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = if fx == 0.0 {
            self.get(x0, y0, c)
        } else {
            self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx
        };
        if fy == 0.0 {
            return Some(top);
        }
        let bottom = if fx == 0.0 {
            self.get(x0, y1, c)
        } else {
            self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx
        };
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

fn require_channels(img: &Image, expected: usize) -> Result<(), ImagingError> {
    if img.channels != expected {
        return Err(ImagingError::ChannelMismatch {
            expected,
            actual: img.channels,
        });
    }
    Ok(())
}

/// Hexcone RGB to HSV. H is scaled so that `[0, 1)` spans `[0°, 360°)`.
pub fn to_hsv(img: &Image) -> Result<Image, ImagingError> {
    require_channels(img, 3)?;
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let [h, s, v] = rgb_to_hsv(px[0], px[1], px[2]);
        data.extend([h, s, v]);
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    })
}

pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, v]
}

/// Normalized 1-D Gaussian taps for offsets `0..=radius`, `radius = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f32>, ImagingError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ImagingError::InvalidSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let raw: Vec<f64> = (0..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
    Ok(raw.iter().map(|w| (w / total) as f32).collect())
}

/// Separable Gaussian blur of every channel with edge replication.
///
/// Each output is accumulated as `I[x] + Σ w_k ((I[x-k] - I[x]) + (I[x+k] - I[x]))`.
/// Constants pass through exactly and the result is bit-identical under
/// horizontal or vertical mirroring.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image, ImagingError> {
    let taps = gaussian_kernel(sigma)?;
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut tmp = vec![0.0f32; img.data.len()];
    let mut row = vec![0.0f32; w];
    for y in 0..h {
        for c in 0..ch {
            for (x, slot) in row.iter_mut().enumerate() {
                *slot = img.data[(y * w + x) * ch + c];
            }
            for x in 0..w {
                tmp[(y * w + x) * ch + c] = convolve_at(&row, x, &taps);
            }
        }
    }
    let mut out = vec![0.0f32; img.data.len()];
    let mut col = vec![0.0f32; h];
    for x in 0..w {
        for c in 0..ch {
            for (y, slot) in col.iter_mut().enumerate() {
                *slot = tmp[(y * w + x) * ch + c];
            }
            for y in 0..h {
                out[(y * w + x) * ch + c] = convolve_at(&col, y, &taps).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image {
        width: w,
        height: h,
        channels: ch,
        data: out,
    })
}

#[inline]
fn convolve_at(line: &[f32], i: usize, taps: &[f32]) -> f32 {
    let n = line.len();
    let center = line[i];
    let mut acc = 0.0f32;
    for (k, &wk) in taps.iter().enumerate().skip(1) {
        let lo = line[i.saturating_sub(k)];
        let hi = line[(i + k).min(n - 1)];
        acc += wk * ((lo - center) + (hi - center));
    }
    center + acc
}

/// Parameters for [`correct_illumination`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminationParams {
    /// Side of the square tiles whose mean V is equalized.
    pub tile: usize,
    /// Mean V every tile is pulled toward.
    pub target_mean: f32,
}

impl Default for IlluminationParams {
    fn default() -> Self {
        Self {
            tile: 32,
            target_mean: 0.5,
        }
    }
}

/// Local mean normalization of the V channel of an HSV image.
///
/// Tile means are blended bilinearly between tile centers, and each V value is
/// rescaled by `target_mean / local_mean`. A multiplicative shadow therefore
/// cancels out wherever it is smooth at tile scale. H and S are untouched.
pub fn correct_illumination(img: &Image, params: IlluminationParams) -> Result<Image, ImagingError> {
    require_channels(img, 3)?;
    let v = img.channel(2)?;
    let corrected = normalize_local_mean(&v, params)?;
    img.with_channel(2, &corrected)
}

/// The V-plane half of [`correct_illumination`], usable on any gray image.
pub fn normalize_local_mean(plane: &Image, params: IlluminationParams) -> Result<Image, ImagingError> {
    require_channels(plane, 1)?;
    if params.tile == 0 {
        return Err(ImagingError::InvalidTile);
    }
    let (w, h) = (plane.width, plane.height);
    let tile = params.tile;
    let gx = w.div_ceil(tile);
    let gy = h.div_ceil(tile);
    let mut means = vec![0.0f64; gx * gy];
    for ty in 0..gy {
        for tx in 0..gx {
            let (x0, x1) = (tx * tile, ((tx + 1) * tile).min(w));
            let (y0, y1) = (ty * tile, ((ty + 1) * tile).min(h));
            let mut sum = 0.0f64;
            for y in y0..y1 {
                sum += plane.data[y * w + x0..y * w + x1]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            means[ty * gx + tx] = sum / ((x1 - x0) * (y1 - y0)) as f64;
        }
    }
    // Tile centers, for bilinear blending of the means.
    let center = |t: usize, extent: usize| -> f64 {
        let lo = t * tile;
        let hi = ((t + 1) * tile).min(extent);
        (lo + hi) as f64 / 2.0 - 0.5
    };
    let centers_x: Vec<f64> = (0..gx).map(|t| center(t, w)).collect();
    let centers_y: Vec<f64> = (0..gy).map(|t| center(t, h)).collect();
    let locate = |p: f64, centers: &[f64]| -> (usize, usize, f64) {
        if centers.len() == 1 || p <= centers[0] {
            return (0, 0, 0.0);
        }
        let last = centers.len() - 1;
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let i = centers.partition_point(|&c| c <= p) - 1;
        let t = (p - centers[i]) / (centers[i + 1] - centers[i]);
        (i, i + 1, t)
    };
    let cols: Vec<(usize, usize, f64)> = (0..w).map(|x| locate(x as f64, &centers_x)).collect();
    let target = params.target_mean as f64;
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let (r0, r1, ty) = locate(y as f64, &centers_y);
        for x in 0..w {
            let (c0, c1, tx) = cols[x];
            let m00 = means[r0 * gx + c0];
            let m01 = means[r0 * gx + c1];
            let m10 = means[r1 * gx + c0];
            let m11 = means[r1 * gx + c1];
            let top = m00 + (m01 - m00) * tx;
            let bottom = m10 + (m11 - m10) * tx;
            let mean = top + (bottom - top) * ty;
            let v = plane.data[y * w + x] as f64;
            let gain = target / mean.max(1e-6);
            out[y * w + x] = (v * gain).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Image {
        width: w,
        height: h,
        channels: 1,
        data: out,
    })
}

/// Gradient strength plus the hysteresis-selected edge pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    magnitude: Vec<f32>,
    binary: Vec<bool>,
}

impl EdgeMap {
    /// Builds an edge map directly from a set of edge pixels (unit magnitude).
    pub fn from_binary(width: usize, height: usize, binary: Vec<bool>) -> Self {
        assert_eq!(binary.len(), width * height, "edge buffer size");
        let magnitude = binary.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self {
            width,
            height,
            magnitude,
            binary,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn magnitude(&self) -> &[f32] {
        &self.magnitude
    }

    pub fn binary(&self) -> &[bool] {
        &self.binary
    }

    #[inline]
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.binary[y * self.width + x]
    }

    pub fn edge_count(&self) -> usize {
        self.binary.iter().filter(|&&b| b).count()
    }

    /// Edge pixel coordinates in row-major order.
    pub fn edge_pixels(&self) -> Vec<(usize, usize)> {
        self.binary
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// The gradient magnitude as a gray image.
    pub fn magnitude_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.magnitude.clone(),
        }
    }
}

/// Sobel gradients, non-maximum suppression and hysteresis.
///
/// Magnitude is scaled so that an ideal unit step yields 1 (Sobel responses
/// divided by 4), then clamped to `[0, 1]`. Pixels at least `high` seed edges
/// that grow through 8-connected suppressed-maximum pixels of at least `low`.
pub fn edge_detect(img: &Image, low: f32, high: f32) -> Result<EdgeMap, ImagingError> {
    require_channels(img, 1)?;
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
        return Err(ImagingError::BadThresholds { low, high });
    }
    let (w, h) = (img.width, img.height);
    let at = |x: isize, y: isize| -> f32 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.data[yc * w + xc]
    };
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    let mut magnitude = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) - at(x - 1, y - 1))
                + 2.0 * (at(x + 1, y) - at(x - 1, y))
                + (at(x + 1, y + 1) - at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) - at(x - 1, y - 1))
                + 2.0 * (at(x, y + 1) - at(x, y - 1))
                + (at(x + 1, y + 1) - at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            magnitude[i] = (dx.hypot(dy) / 4.0).min(1.0);
        }
    }

    // Non-maximum suppression along the quantized gradient direction. Ties
    // are kept on the positive side only so a flat ridge stays one pixel wide.
    let mut peak = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = magnitude[i];
            if m <= 0.0 || m < low {
                continue;
            }
            let (ox, oy) = quantize_direction(gx[i], gy[i]);
            let neighbor = |sx: isize, sy: isize| -> f32 {
                let nx = x as isize + sx;
                let ny = y as isize + sy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    0.0
                } else {
                    magnitude[ny as usize * w + nx as usize]
                }
            };
            let before = neighbor(-ox, -oy);
            let after = neighbor(ox, oy);
            peak[i] = m > before && m >= after;
        }
    }

    let mut binary = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if peak[i] && magnitude[i] >= high {
            binary[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for sy in -1..=1isize {
            for sx in -1..=1isize {
                let nx = x + sx;
                let ny = y + sy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !binary[j] && peak[j] && magnitude[j] >= low {
                    binary[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    Ok(EdgeMap {
        width: w,
        height: h,
        magnitude,
        binary,
    })
}

fn quantize_direction(gx: f32, gy: f32) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}
