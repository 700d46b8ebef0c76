//! Binary model file: magic, format version, hyperparameters, per-stage
//! parameters as little-endian IEEE-754 doubles, and a trailing CRC-32 of
//! everything before it. Loading a file and saving it again reproduces the
//! bytes exactly, because the stored basis coefficients are the in-memory
//! source of truth.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        6 bytes  "TRDPD\0"
//! version      u32      currently 1
//! peak         f64
//! stages       u32      T
//! filter_size  u32      m
//! filter_count u32      N_k
//! rbf_count    u32      M
//! rbf_range    f64      R
//! rbf_gamma    f64
//! T times:
//!   beta               f64
//!   filter coeffs      N_k * (m*m - 1) f64, filter-major
//!   influence weights  N_k * M f64, filter-major
//! crc32        u32      over all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use trdpd_core::influence::RbfGrid;
use trdpd_core::training::{ModelParams, StageCoeffs};

use crate::error::{format_err, Error, Result};

pub const MAGIC: &[u8; 6] = b"TRDPD\0";
pub const VERSION: u32 = 1;

/// Standard CRC-32 (IEEE, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

pub fn model_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate().map_err(Error::Core)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&params.peak.to_le_bytes());
    out.extend_from_slice(&(params.stage_count() as u32).to_le_bytes());
    out.extend_from_slice(&(params.filter_size as u32).to_le_bytes());
    out.extend_from_slice(&(params.filter_count() as u32).to_le_bytes());
    out.extend_from_slice(&(params.rbf.count as u32).to_le_bytes());
    out.extend_from_slice(&params.rbf.range.to_le_bytes());
    out.extend_from_slice(&params.rbf.gamma.to_le_bytes());
    for stage in &params.stages {
        out.extend_from_slice(&stage.beta.to_le_bytes());
        for c in &stage.filter_coeffs {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for w in &stage.influence_weights {
            for v in w {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("file truncated".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    parse(bytes).map_err(format_err)
}

fn parse(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err("file truncated".into());
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(format!("crc mismatch: stored {stored:#010x}, computed {computed:#010x}"));
    }

    let mut cur = Cursor { bytes: payload, pos: 0 };
    if cur.take(6)? != MAGIC {
        return Err("bad magic (not a model file)".into());
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(format!("unrecognized format version {version}"));
    }
    let peak = cur.f64()?;
    let stages = cur.u32()? as usize;
    let filter_size = cur.u32()? as usize;
    let filter_count = cur.u32()? as usize;
    let rbf_count = cur.u32()? as usize;
    let rbf_range = cur.f64()?;
    let rbf_gamma = cur.f64()?;

    if filter_size == 0 || filter_size % 2 == 0 {
        return Err(format!("invalid filter size {filter_size}"));
    }
    let coeffs_per_filter = filter_size * filter_size - 1;
    if filter_count != coeffs_per_filter {
        return Err(format!(
            "filter count {filter_count} does not match size {filter_size} (expected {coeffs_per_filter})"
        ));
    }

    let mut stage_vec = Vec::with_capacity(stages);
    for _ in 0..stages {
        let beta = cur.f64()?;
        let mut filter_coeffs = Vec::with_capacity(filter_count);
        for _ in 0..filter_count {
            let mut c = Vec::with_capacity(coeffs_per_filter);
            for _ in 0..coeffs_per_filter {
                c.push(cur.f64()?);
            }
            filter_coeffs.push(c);
        }
        let mut influence_weights = Vec::with_capacity(filter_count);
        for _ in 0..filter_count {
            let mut w = Vec::with_capacity(rbf_count);
            for _ in 0..rbf_count {
                w.push(cur.f64()?);
            }
            influence_weights.push(w);
        }
        stage_vec.push(StageCoeffs { beta, filter_coeffs, influence_weights });
    }
    if cur.pos != payload.len() {
        return Err(format!("{} trailing bytes after payload", payload.len() - cur.pos));
    }

    let params = ModelParams {
        filter_size,
        peak,
        rbf: RbfGrid { count: rbf_count, range: rbf_range, gamma: rbf_gamma },
        stages: stage_vec,
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, model_to_bytes(params)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
        .map_err(|e| format_err(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_matches_reference_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let params = ModelParams::init(3, 5, 4.0, None).unwrap();
        let bytes = model_to_bytes(&params).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, params);
        let again = model_to_bytes(&back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corruption_is_detected() {
        let params = ModelParams::init(1, 3, 2.0, None).unwrap();
        let mut bytes = model_to_bytes(&params).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = model_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("crc mismatch"), "{err}");
    }

    #[test]
    fn truncation_and_bad_magic_are_detected() {
        let params = ModelParams::init(1, 3, 2.0, None).unwrap();
        let bytes = model_to_bytes(&params).unwrap();
        assert!(model_from_bytes(&bytes[..bytes.len() - 9]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(model_from_bytes(&bad).is_err());
    }
}
