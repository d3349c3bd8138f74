//! GLD1 dataset files.
//!
//! ```text
//! "GLD1"  u32 version  u32 N  u32 D  u8 labeled  [0u8; 3]
//! N*D f32 features, row-major
//! N u16 labels (only when labeled)
//! ```
//! All multi-byte fields little-endian.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Reader;

pub const GLD1_MAGIC: &[u8; 4] = b"GLD1";
pub const GLD1_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_gld1(ds: &Dataset) -> Vec<u8> {
    let n = ds.len();
    let labeled = ds.is_labeled();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * ds.features().len() + 2 * n);
    out.extend_from_slice(GLD1_MAGIC);
    out.extend_from_slice(&GLD1_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&[labeled as u8, 0, 0, 0]);
    for &v in ds.features() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = ds.labels() {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

/// Decodes a GLD1 buffer. The class count is taken as `max label + 1`.
pub fn decode_gld1(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != GLD1_MAGIC {
        return Err(Error::format(0, "bad magic, expected GLD1"));
    }
    let version = r.u32_le("version")?;
    if version != GLD1_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported GLD1 version {version}"),
        ));
    }
    let n = r.u32_le("sample count")? as usize;
    let d = r.u32_le("dimension")? as usize;
    let flags = r.take(4, "label flag")?;
    if flags[0] > 1 || flags[1..] != [0, 0, 0] {
        return Err(Error::format(16, "invalid label flag or padding"));
    }
    let labeled = flags[0] == 1;
    if n == 0 || d == 0 {
        return Err(Error::format(8, "empty dataset"));
    }
    let expected = n * d * 4 + if labeled { 2 * n } else { 0 };
    if r.remaining() != expected {
        return Err(Error::format(
            r.offset(),
            format!("expected {expected} payload bytes, found {}", r.remaining()),
        ));
    }
    let raw = r.take(4 * n * d, "features")?;
    let mut features = Vec::with_capacity(n * d);
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        if !v.is_finite() || v.abs() > 1.0 {
            return Err(Error::format(
                (HEADER_LEN + 4 * i) as u64,
                format!("feature value {v} outside [-1, 1]"),
            ));
        }
        features.push(v);
    }
    let labels = if labeled {
        let raw = r.take(2 * n, "labels")?;
        Some(
            raw.chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let k = labels
        .as_ref()
        .map(|l| l.iter().copied().max().unwrap_or(0) as usize + 1)
        .unwrap_or(0);
    Dataset::new(d, features, labels, k)
}

pub fn write_gld1(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let p = path.as_ref();
    std::fs::write(p, encode_gld1(ds)).map_err(|e| Error::io(p, e))
}

pub fn read_gld1(path: impl AsRef<Path>) -> Result<Dataset> {
    let p = path.as_ref();
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    decode_gld1(&bytes)
}
