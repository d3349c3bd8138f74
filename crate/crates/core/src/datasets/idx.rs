//! IDX files as published with the MNIST digits (big-endian headers).

use std::path::Path;

use super::{Dataset, Normalization};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated {what} header")))
}

/// Parses an image/label IDX pair; pixels map from `[0, 255]` to `[-1, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(images, 4, "image")? as usize;
    let rows = be_u32(images, 8, "image")? as usize;
    let cols = be_u32(images, 12, "image")? as usize;
    let dim = rows * cols;
    if n == 0 || dim == 0 {
        return Err(Error::format(4, "image file declares an empty tensor"));
    }
    let payload = &images[16..];
    if payload.len() < n * dim {
        return Err(Error::format(
            (16 + payload.len()) as u64,
            format!(
                "image payload truncated: need {} bytes after offset 16",
                n * dim
            ),
        ));
    }

    let magic = be_u32(labels, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = be_u32(labels, 4, "label")? as usize;
    if n_labels != n {
        return Err(Error::format(
            4,
            format!("label count {n_labels} does not match image count {n}"),
        ));
    }
    let lab = &labels[8..];
    if lab.len() < n {
        return Err(Error::format(
            (8 + lab.len()) as u64,
            format!("label payload truncated: need {n} bytes after offset 8"),
        ));
    }

    let features = payload[..n * dim]
        .iter()
        .map(|&p| (p as f64 - 127.5) / 127.5)
        .collect();
    let labels: Vec<u16> = lab[..n].iter().map(|&l| u16::from(l)).collect();
    let k = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut ds = Dataset::new(dim, features, Some(labels), k)?;
    ds.normalization = Some(Normalization {
        shift: vec![127.5; dim],
        scale: vec![127.5; dim],
    });
    Ok(ds)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&ib, &lb)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        let mut a = vec![0u8; 784];
        a[0] = 255;
        a[783] = 128;
        let mut b = vec![255u8; 784];
        b[10] = 0;
        img.extend(a);
        img.extend(b);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn parses_hand_built_pair() {
        let (img, lab) = fixture();
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 784));
        assert_eq!(ds.labels().unwrap(), &[7, 3]);
        assert_eq!(ds.num_classes(), 8);
        assert_eq!(ds.row(0)[0], 1.0);
        assert_eq!(ds.row(0)[1], -1.0);
        assert_eq!(ds.row(0)[783], 0.5 / 127.5);
        assert_eq!(ds.row(1)[10], -1.0);
        assert_eq!(ds.row(1)[11], 1.0);
    }

    #[test]
    fn malformed_inputs() {
        let (img, lab) = fixture();
        let mut bad = img.clone();
        bad[3] = 4;
        assert!(matches!(
            parse_idx(&bad, &lab),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            parse_idx(&img[..1000], &lab),
            Err(Error::Format { offset: 1000, .. })
        ));
        let mut lab3 = lab.clone();
        lab3[7] = 3;
        lab3.push(1);
        assert!(matches!(
            parse_idx(&img, &lab3),
            Err(Error::Format { offset: 4, .. })
        ));
        assert!(matches!(
            parse_idx(&img, &lab[..9]),
            Err(Error::Format { offset: 9, .. })
        ));
        assert!(parse_idx(&img[..6], &lab).is_err());
    }
}
