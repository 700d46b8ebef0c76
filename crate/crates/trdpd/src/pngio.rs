//! Grayscale PNG reading. 8-bit and 16-bit grayscale are accepted; 16-bit
//! samples are scaled onto the `[0, 255]` range.

use std::fs::File;
use std::path::Path;

use trdpd_core::Image;

use crate::error::{format_err, Result};

pub fn read_png_gray(path: &Path) -> Result<Image> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(format!("{}: {e}", path.display())))?;

    if info.color_type != png::ColorType::Grayscale {
        return Err(format_err(format!(
            "{}: only grayscale PNG is supported (found {:?})",
            path.display(),
            info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&b| b as f64).collect(),
        png::BitDepth::Sixteen => buf[..2 * w * h]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * (255.0 / 65535.0))
            .collect(),
        depth => {
            return Err(format_err(format!(
                "{}: unsupported bit depth {depth:?}",
                path.display()
            )))
        }
    };
    Ok(Image::new(w, h, data).map_err(crate::error::Error::Core)?)
}
