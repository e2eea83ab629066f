//! Binary PGM (P5) and PPM (P6) with 8-bit samples.
//!
//! Samples map to `[0, 1]` as `v / 255` on read and back with rounding on
//! write, so an 8-bit file survives a read/write cycle byte for byte.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::imaging::Image;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a binary PGM/PPM file (magic {0:?})")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    BadHeader(&'static str),
    #[error("only 8-bit samples are supported (maxval {0})")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

pub fn decode(bytes: &[u8]) -> Result<Image, PnmError> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or(PnmError::BadHeader("missing magic"))?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(PnmError::BadMagic(other.to_string())),
    };
    let mut field = |name: &'static str| -> Result<u32, PnmError> {
        next_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or(PnmError::BadHeader(name))
    };
    let width = field("width")? as usize;
    let height = field("height")? as usize;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader("zero dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let expected = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            actual: raster.len(),
        });
    }
    let data = raster[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Image::from_vec(width, height, channels, data).map_err(|_| PnmError::BadHeader("dimensions"))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok().map(str::to_string)
}

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    out
}

#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read(path: impl AsRef<Path>) -> Result<Image, PnmError> {
    decode(&fs::read(path)?)
}

pub fn write(path: impl AsRef<Path>, img: &Image) -> Result<(), PnmError> {
    fs::write(path, encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 1));
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_ascii_and_truncation() {
        assert!(matches!(decode(b"P2\n1 1\n255\n0"), Err(PnmError::BadMagic(_))));
        assert!(matches!(
            decode(b"P6\n2 2\n255\n\x00\x01"),
            Err(PnmError::Truncated { .. })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PnmError::UnsupportedMaxval(65535))
        ));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), seed in any::<u64>()) {
            let channels = if rgb { 3 } else { 1 };
            let raster: Vec<u8> = (0..w * h * channels)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
                .collect();
            let magic = if rgb { "P6" } else { "P5" };
            let mut file = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            file.extend(&raster);
            let img = decode(&file).unwrap();
            prop_assert_eq!(encode(&img), file);
        }
    }
}
