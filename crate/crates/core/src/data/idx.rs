//! MNIST in the IDX file format.
//!
//! Images: magic `0x00000803`, count, rows, cols (big-endian u32), then one
//! byte per pixel. Labels: magic `0x00000801`, count, then one byte per label.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{DatasetHandle, Split};
use crate::error::{DataError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            expected: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

/// Decodes an IDX image file into `(count, rows, cols, pixels scaled to [0,1])`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>), DataError> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    let pixels = bytes[16..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    let labels: Vec<usize> = bytes[8..expected].iter().map(|&b| b as usize).collect();
    if let Some(index) = labels.iter().position(|&l| l >= MNIST_CLASSES) {
        return Err(DataError::BadLabel {
            path: path.to_path_buf(),
            index,
            label: labels[index],
            classes: MNIST_CLASSES,
        });
    }
    Ok(labels)
}

/// Loads one MNIST split from an image file and a label file.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Split> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (count, rows, cols, pixels) = parse_idx_images(&read_file(ip)?, ip)?;
    let labels = parse_idx_labels(&read_file(lp)?, lp)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    Split::new([1, rows, cols], pixels, labels)
}

fn find(dir: &Path, names: &[&str]) -> PathBuf {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join(names[0]))
}

/// Loads the four standard MNIST files from `dir` and carves validation.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split_seed: u64) -> Result<DatasetHandle> {
    let dir = dir.as_ref();
    let train = load_mnist_idx(
        find(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
        find(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]),
    )?;
    let test = load_mnist_idx(
        find(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
        find(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]),
    )?;
    DatasetHandle::from_pool(
        train,
        test,
        MNIST_CLASSES,
        split_seed,
        format!("mnist:{}", dir.display()),
        "pixel/255",
    )
}

/// Encodes images (values in [0,1]) and labels as IDX byte streams.
pub fn encode_idx(images: &[u8], count: usize, rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(images);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}
