//! IDX (MNIST-style) binary reader.
//!
//! Layout: two zero bytes, a type code (`0x08` = unsigned byte), the number
//! of dimensions, then one big-endian `u32` per dimension followed by the
//! raw payload.

use std::path::Path;

use super::{DataError, DualTaskDataset, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::MalformedIdx { path: path.display().to_string(), reason: reason.into() }
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(malformed(path, "shorter than the 4-byte magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(malformed(
            path,
            format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3]),
        ));
    }
    let ndims = bytes[3] as usize;
    if !(1..=3).contains(&ndims) {
        return Err(malformed(path, format!("unsupported dimension count {ndims}")));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(malformed(path, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(malformed(path, format!("truncated payload: {} of {} bytes", payload.len(), expected)));
    }
    Ok(IdxTensor { dims, data: payload[..expected].to_vec() })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes, path)
}

/// Average-pools a `rows × cols` image to `out × out` using area binning
/// (`floor(i·rows/out)` boundaries), scaling bytes to `[0, 1]`.
fn pool(image: &[u8], rows: usize, cols: usize, out: usize) -> Vec<f64> {
    let mut result = Vec::with_capacity(out * out);
    for bi in 0..out {
        let (r0, r1) = (bi * rows / out, ((bi + 1) * rows / out).max(bi * rows / out + 1));
        for bj in 0..out {
            let (c0, c1) = (bj * cols / out, ((bj + 1) * cols / out).max(bj * cols / out + 1));
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += f64::from(image[r * cols + c]);
                }
            }
            let v = sum / ((r1 - r0) * (c1 - c0)) as f64 / 255.0;
            result.push(v.clamp(0.0, 1.0));
        }
    }
    result
}

/// Loads up to `max_samples` images and labels, pooled to
/// `downscale_to × downscale_to`. Identity labels are copied from the
/// single label file.
pub fn load_idx_subset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    max_samples: usize,
    downscale_to: usize,
) -> Result<DualTaskDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    if images.dims.len() != 3 {
        return Err(malformed(images_path, format!("expected 3 dimensions, found {}", images.dims.len())));
    }
    if labels.dims.len() != 1 {
        return Err(malformed(labels_path, format!("expected 1 dimension, found {}", labels.dims.len())));
    }
    let (count, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != count {
        return Err(malformed(labels_path, format!("{} labels for {} images", labels.dims[0], count)));
    }
    if downscale_to == 0 || downscale_to > rows.min(cols) {
        return Err(DataError::InvalidParameter(format!(
            "downscale target {downscale_to} invalid for {rows}×{cols} images"
        )));
    }
    let n = count.min(max_samples);
    if n == 0 {
        return Err(DataError::InvalidParameter("no samples to load".into()));
    }
    let mut features = Vec::with_capacity(n * downscale_to * downscale_to);
    for i in 0..n {
        let img = &images.data[i * rows * cols..(i + 1) * rows * cols];
        features.extend(pool(img, rows, cols, downscale_to));
    }
    let y: Vec<usize> = labels.data[..n].iter().map(|&b| b as usize).collect();
    let classes = y.iter().max().map_or(2, |m| (m + 1).max(2));
    DualTaskDataset::new(
        images_path.file_name().map_or("idx".into(), |f| f.to_string_lossy().into_owned()),
        downscale_to * downscale_to,
        features,
        y.clone(),
        y,
        classes,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;

    fn idx_bytes(dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 0x08, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_three_dimensional_magic() {
        let bytes = idx_bytes(&[2, 2, 2], &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let t = parse_idx(&bytes, Path::new("x")).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.data.len(), 8);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = idx_bytes(&[1, 2, 2], &[0; 4]);
        bytes[2] = 0x09;
        assert!(matches!(parse_idx(&bytes, Path::new("x")), Err(DataError::MalformedIdx { .. })));
        let short = idx_bytes(&[1, 2, 2], &[0; 3]);
        assert!(parse_idx(&short, Path::new("x")).is_err());
    }

    #[test]
    fn loads_truncates_and_pools_constant_images() {
        let dir = tempfile::tempdir().unwrap();
        let n = 12u32;
        let v = 200u8;
        let imgs = idx_bytes(&[n, 28, 28], &vec![v; (n * 28 * 28) as usize]);
        let labels = idx_bytes(&[n], &(0..n as u8).map(|i| i % 3).collect::<Vec<_>>());
        let ip = dir.path().join("imgs.idx3");
        let lp = dir.path().join("labels.idx1");
        std::fs::write(&ip, imgs).unwrap();
        std::fs::write(&lp, labels).unwrap();
        let ds = load_idx_subset(&ip, &lp, 10, 7).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.num_features(), 49);
        let expected = f64::from(v) / 255.0;
        assert!(ds.features().iter().all(|&x| (x - expected).abs() < 1e-15));
        assert_eq!(ds.labels(Task::Identity), ds.labels(Task::Utility));
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        std::fs::write(&ip, idx_bytes(&[3, 4, 4], &[0; 48])).unwrap();
        std::fs::write(&lp, idx_bytes(&[2], &[0, 1])).unwrap();
        assert!(load_idx_subset(&ip, &lp, 10, 2).is_err());
    }
}
