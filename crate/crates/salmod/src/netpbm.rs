//! Binary netpbm codecs: P6 (RGB) for dataset images, P5 (grayscale) for
//! masks and saliency maps. Maxval is fixed at 255; headers are written in a
//! canonical form so identical pixels produce identical files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit RGB image, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// r, g, b per pixel
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> GrayImage {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> RgbImage {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
        .map_err(|e| Error::format(format!("{}: {}", path.display(), e)))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
        .map_err(|e| Error::format(format!("{}: {}", path.display(), e)))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (width, height, data) = decode_netpbm(bytes, b"P5", 1)?;
    Ok(GrayImage {
        width,
        height,
        pixels: data,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, data) = decode_netpbm(bytes, b"P6", 3)?;
    Ok(RgbImage {
        width,
        height,
        pixels: data,
    })
}

/// Shared header parser: magic, then three whitespace/comment-separated
/// integers (width, height, maxval), one whitespace byte, then raw samples.
fn decode_netpbm(bytes: &[u8], magic: &[u8], samples_per_px: usize) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(format!(
            "expected magic {}, found {:?}",
            String::from_utf8_lossy(magic),
            &bytes.get(..2).unwrap_or(b"")
        )));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = parse_header_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::format(format!("unsupported maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("missing whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(Error::format("zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(samples_per_px))
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::format(format!(
            "truncated raster: need {} bytes, have {}",
            need,
            raster.len()
        )));
    }
    Ok((width, height, raster[..need].to_vec()))
}

fn parse_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and '#' comments running to end of line
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::format("header ended early")),
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            *pos += 1;
        } else {
            break;
        }
    }
    if *pos == start {
        return Err(Error::format("expected integer in header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("bad integer in header"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trips_bytes_exactly() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 128, 255, 7, 99, 200],
        };
        let encoded = encode_pgm(&img);
        let back = decode_pgm(&encoded).unwrap();
        assert_eq!(back, img);
        // canonical writer means encode(decode(x)) == x
        assert_eq!(encode_pgm(&back), encoded);
    }

    #[test]
    fn ppm_round_trips_bytes_exactly() {
        let img = RgbImage {
            width: 2,
            height: 2,
            pixels: (0..12).collect(),
        };
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments_and_whitespace_are_tolerated() {
        let mut bytes = b"P5 # a comment\n# another\n 2\t2 # yes\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn truncated_raster_is_error() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 5]);
        assert!(decode_pgm(&bytes).is_err());
    }

    #[test]
    fn wrong_magic_is_error() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"").is_err());
    }

    #[test]
    fn unsupported_maxval_is_error() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 0]);
        assert!(decode_pgm(&bytes).is_err());
    }
}
