//! CIFAR-10 binary format: 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major.

use std::path::Path;

use ndarray::Array3;

use super::{byte_to_unit, unit_to_byte, LabeledImage};
use crate::{Error, Result, Scalar};

pub const CIFAR10_SIDE: usize = 32;
pub const CIFAR10_CLASSES: u32 = 10;
pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * CIFAR10_SIDE * CIFAR10_SIDE;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

fn check_length(len: usize) -> Result<usize> {
    if !len.is_multiple_of(CIFAR10_RECORD_LEN) {
        return Err(Error::MalformedInput(format!(
            "CIFAR-10 blob of {len} bytes is not a multiple of {CIFAR10_RECORD_LEN}"
        )));
    }
    Ok(len / CIFAR10_RECORD_LEN)
}

fn check_label(label: u8) -> Result<u32> {
    let label = u32::from(label);
    if label >= CIFAR10_CLASSES {
        return Err(Error::InvalidLabel {
            label,
            classes: CIFAR10_CLASSES,
        });
    }
    Ok(label)
}

/// Parses records into images scaled to [-1, 1].
pub fn parse_cifar10_binary<T: Scalar>(raw: &[u8]) -> Result<Vec<LabeledImage<T>>> {
    parse_records(raw, "cifar10")
}

fn parse_records<T: Scalar>(raw: &[u8], source: &str) -> Result<Vec<LabeledImage<T>>> {
    let count = check_length(raw.len())?;
    let mut out = Vec::with_capacity(count);
    for (i, record) in raw.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
        let label = check_label(record[0])?;
        let pixels = Array3::from_shape_vec(
            (3, CIFAR10_SIDE, CIFAR10_SIDE),
            record[1..].iter().map(|&b| byte_to_unit(b)).collect(),
        )
        .expect("record length checked");
        out.push(LabeledImage {
            pixels,
            label,
            origin: format!("{source}:{i}"),
        });
    }
    Ok(out)
}

/// Label bytes only, with the same validation as the full parser.
pub fn parse_cifar10_labels(raw: &[u8]) -> Result<Vec<u32>> {
    check_length(raw.len())?;
    raw.chunks_exact(CIFAR10_RECORD_LEN)
        .map(|r| check_label(r[0]))
        .collect()
}

/// Inverse of [`parse_cifar10_binary`] for 3×32×32 images.
pub fn encode_cifar10_binary<T: Scalar>(images: &[LabeledImage<T>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * CIFAR10_RECORD_LEN);
    for img in images {
        if img.pixels.dim() != (3, CIFAR10_SIDE, CIFAR10_SIDE) {
            return Err(Error::shape(&[3, CIFAR10_SIDE, CIFAR10_SIDE], img.pixels.shape()));
        }
        if img.label >= CIFAR10_CLASSES {
            return Err(Error::InvalidLabel {
                label: img.label,
                classes: CIFAR10_CLASSES,
            });
        }
        out.push(img.label as u8);
        out.extend(img.pixels.iter().map(|&v| unit_to_byte(v)));
    }
    Ok(out)
}

/// Reads the standard `cifar-10-batches-bin` directory into
/// `(train, test)` = 50,000 and 10,000 images.
/// Training images (the five data batches) and test images.
pub type CifarSplits<T> = (Vec<LabeledImage<T>>, Vec<LabeledImage<T>>);

pub fn load_cifar10_dir<T: Scalar>(dir: &Path) -> Result<CifarSplits<T>> {
    let read = |name: &str| -> Result<Vec<LabeledImage<T>>> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_records(&bytes, name.trim_end_matches(".bin"))
    };
    let mut train = Vec::with_capacity(50_000);
    for name in TRAIN_FILES {
        train.extend(read(name)?);
    }
    let test = read(TEST_FILE)?;
    Ok((train, test))
}
