//! CIFAR-10 "binary version": each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32×32).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_IMAGE_BYTES: usize = 3 * 32 * 32;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_IMAGE_BYTES;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone)]
pub struct CifarSplits {
    pub train: Dataset,
    pub test: Dataset,
}

fn decode(bytes: &[u8], origin: &Path) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let expected = (bytes.len() / CIFAR_RECORD_BYTES).max(1) * CIFAR_RECORD_BYTES;
        return Err(Error::Format {
            what: format!("CIFAR-10 batch {}", origin.display()),
            detail: format!(
                "expected a multiple of {CIFAR_RECORD_BYTES} bytes (e.g. {expected}), found {}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * CIFAR_IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::Format {
                what: format!("CIFAR-10 batch {}", origin.display()),
                detail: format!("record {i} has label {}", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Dataset::new(3, 32, 32, pixels, labels)
}

/// Reads one batch file of any whole number of records.
pub fn read_cifar_batch(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?, path)
}

fn read_standard(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let expected = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::Format {
            what: format!("CIFAR-10 batch {}", path.display()),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    decode(&bytes, path)
}

/// Loads the five training batches and the test batch from `dir` (or from
/// its `cifar-10-batches-bin` subdirectory, as unpacked from the archive).
pub fn load_cifar10(dir: &Path) -> Result<CifarSplits> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut pixels = Vec::with_capacity(5 * CIFAR_RECORDS_PER_FILE * CIFAR_IMAGE_BYTES);
    let mut labels = Vec::with_capacity(5 * CIFAR_RECORDS_PER_FILE);
    for name in CIFAR_TRAIN_FILES {
        let part = read_standard(&root.join(name))?;
        pixels.extend_from_slice(part.pixels());
        labels.extend_from_slice(part.labels());
    }
    let train = Dataset::new(3, 32, 32, pixels, labels)?;
    let test = read_standard(&root.join(CIFAR_TEST_FILE))?;
    Ok(CifarSplits { train, test })
}
