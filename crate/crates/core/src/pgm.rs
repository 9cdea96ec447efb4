//! Binary greyscale PGM (`P5`) images.
//!
//! Pixel values `v ∈ [0, maxval]` map to `2v/maxval − 1`, so the full range
//! covers `[-1, 1]`. Writing inverts the map, clamps to the range and rounds
//! to the nearest level. 16-bit samples are big-endian as the format requires.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ImageField;

/// Sample depth used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

impl Depth {
    pub fn maxval(self) -> u32 {
        match self {
            Depth::Eight => 255,
            Depth::Sixteen => 65535,
        }
    }
}

/// Splits the header into whitespace-separated tokens, skipping `#` comments.
/// Returns the tokens and the offset of the raster.
fn header_tokens(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        let c = *bytes
            .get(i)
            .ok_or_else(|| Error::Format("truncated PGM header".into()))?;
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                i += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(i) {
        Some(c) if c.is_ascii_whitespace() => Ok((tokens, i + 1)),
        _ => Err(Error::Format("missing separator after PGM header".into())),
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageField> {
    let (tokens, offset) = header_tokens(bytes)?;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!(
            "unsupported magic `{}`, expected P5",
            tokens[0]
        )));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM {what} `{s}`")))
    };
    let width = num(&tokens[1], "width")?;
    let height = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM has zero size".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "PGM maxval {maxval} outside 1..=65535"
        )));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM size overflow".into()))?;
    let raster = &bytes[offset..];
    if raster.len() < n * bytes_per {
        return Err(Error::Format(format!(
            "PGM raster truncated: {} of {} bytes",
            raster.len(),
            n * bytes_per
        )));
    }
    let scale = 2.0 / maxval as f64;
    let values = (0..n)
        .map(|k| {
            let v = if bytes_per == 1 {
                raster[k] as usize
            } else {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as usize
            };
            if v > maxval {
                Err(Error::Format(format!(
                    "PGM sample {v} exceeds maxval {maxval}"
                )))
            } else {
                Ok(v as f64 * scale - 1.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ImageField::new(height, width, values)
}

pub fn encode_pgm(img: &ImageField, depth: Depth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let m = maxval as f64;
    for &x in img.values() {
        let v = ((x.clamp(-1.0, 1.0) + 1.0) * 0.5 * m).round() as u32;
        match depth {
            Depth::Eight => out.push(v as u8),
            Depth::Sixteen => out.extend_from_slice(&(v as u16).to_be_bytes()),
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<ImageField> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &ImageField, depth: Depth) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img, depth))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_mapping() {
        let bytes = b"P5\n3 1\n255\n\x00\x80\xff";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.shape(), (1, 3));
        assert_eq!(img.get(0, 0), -1.0);
        assert!((img.get(0, 1) - (2.0 * 128.0 / 255.0 - 1.0)).abs() < 1e-15);
        assert_eq!(img.get(0, 2), 1.0);
    }

    #[test]
    fn round_trip_both_depths() {
        let img = ImageField::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 / 19.0) * 2.0 - 1.0);
        for (depth, tol) in [(Depth::Eight, 1.0 / 255.0), (Depth::Sixteen, 1.0 / 65535.0)] {
            let back = decode_pgm(&encode_pgm(&img, depth)).unwrap();
            assert!(back.max_abs_diff(&img) <= tol + 1e-12);
            // Quantised values are fixed points.
            assert_eq!(decode_pgm(&encode_pgm(&back, depth)).unwrap(), back);
        }
    }

    #[test]
    fn comments_and_sixteen_bit() {
        let bytes = b"P5 # comment\n2 1\n# another\n1000\n\x00\x00\x03\xe8";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n100\n\xff").is_err());
        assert!(decode_pgm(b"P5\n1 1").is_err());
    }

    #[test]
    fn out_of_range_values_clamp() {
        let img = ImageField::new(1, 2, vec![-3.0, 7.0]).unwrap();
        assert_eq!(&encode_pgm(&img, Depth::Eight)[11..], &[0, 255]);
    }
}
