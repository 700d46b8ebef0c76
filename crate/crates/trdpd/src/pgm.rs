//! Binary PGM (P5) read/write. Pixel bytes map to reals in `[0, 255]`;
//! writing clamps to that range and rounds half-up.

use std::fs;
use std::io::Write;
use std::path::Path;

use trdpd_core::Image;

use crate::error::{format_err, Result};

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|msg| format_err(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;

    let next_token = |pos: &mut usize| -> std::result::Result<Vec<u8>, String> {
        // skip whitespace and '#' comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(bytes[start..*pos].to_vec())
    };

    let magic = next_token(&mut pos)?;
    if magic != b"P5" {
        return Err("not a binary PGM (expected P5)".into());
    }
    let parse_usize = |tok: Vec<u8>| -> std::result::Result<usize, String> {
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "invalid header integer".into())
    };
    let width = parse_usize(next_token(&mut pos)?)?;
    let height = parse_usize(next_token(&mut pos)?)?;
    let maxval = parse_usize(next_token(&mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (8-bit only)"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;

    let n = width
        .checked_mul(height)
        .ok_or_else(|| "dimension overflow".to_string())?;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(format!("raster truncated: {} of {} bytes", raster.len(), n));
    }
    let data = raster[..n].iter().map(|&b| b as f64).collect();
    Image::new(width, height, data).map_err(|e| e.to_string())
}

/// Writes 8-bit binary PGM; values are clamped to `[0, 255]` and rounded
/// half-up.
pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(image.len() + 32);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
    out.extend(image.data().iter().map(|&v| quantize(v)));
    fs::write(path, out)?;
    Ok(())
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor() as u8
}
