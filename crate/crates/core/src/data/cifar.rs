//! CIFAR-10 binary batches: 10,000 records of one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).

use std::fs;
use std::path::Path;

use crate::data::{DatasetHandle, Split};
use crate::error::{DataError, Result};

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

/// Decodes the records of one batch file.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>), DataError> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(DataError::BadRecordLength {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: RECORD_LEN,
        });
    }
    let n = bytes.len() / RECORD_LEN;
    let mut images = Vec::with_capacity(n * (RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(DataError::BadLabel {
                path: path.to_path_buf(),
                index,
                label,
                classes: CIFAR_CLASSES,
            });
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((images, labels))
}

/// Loads and concatenates batch files in the given order.
pub fn load_cifar10_bin<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Split> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|source| DataError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        let (img, lab) = parse_cifar10(&bytes, p)?;
        images.extend(img);
        labels.extend(lab);
    }
    Split::new([3, 32, 32], images, labels)
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10_dir(dir: impl AsRef<Path>, split_seed: u64) -> Result<DatasetHandle> {
    let dir = dir.as_ref();
    let train_paths: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train = load_cifar10_bin(&train_paths)?;
    let test = load_cifar10_bin(&[dir.join("test_batch.bin")])?;
    DatasetHandle::from_pool(
        train,
        test,
        CIFAR_CLASSES,
        split_seed,
        format!("cifar10:{}", dir.display()),
        "pixel/255",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn single_record_plane_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; RECORD_LEN];
        rec[0] = 7;
        rec[1..1025].fill(255);
        let p = dir.path().join("one.bin");
        fs::write(&p, &rec).unwrap();
        let split = load_cifar10_bin(&[&p]).unwrap();
        assert_eq!(split.len(), 1);
        assert_eq!(split.labels, vec![7]);
        let img = split.sample(0);
        assert!(img[..1024].iter().all(|&v| v == 1.0));
        assert!(img[1024..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, vec![0u8; RECORD_LEN + 5]).unwrap();
        assert!(matches!(
            load_cifar10_bin(&[&p]).unwrap_err(),
            Error::Data(DataError::BadRecordLength { .. })
        ));
    }

    #[test]
    fn five_batches_of_ten_thousand() {
        // synthesized stand-ins with the official record layout
        let dir = tempfile::tempdir().unwrap();
        let mut batch = vec![0u8; 10_000 * RECORD_LEN];
        for (i, rec) in batch.chunks_exact_mut(RECORD_LEN).enumerate() {
            rec[0] = (i % 10) as u8;
        }
        let paths: Vec<_> = (1..=5)
            .map(|i| {
                let p = dir.path().join(format!("data_batch_{i}.bin"));
                fs::write(&p, &batch).unwrap();
                p
            })
            .collect();
        let split = load_cifar10_bin(&paths).unwrap();
        assert_eq!(split.len(), 50_000);
        assert_eq!(split.sample_shape, [3, 32, 32]);
    }
}
