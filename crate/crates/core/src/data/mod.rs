//! Datasets: labelled images, one-class-out splits, CIFAR-10 binaries,
//! image folders, sliding-window patches and batching.

mod batch;
mod cifar;
mod folder;
mod patches;
mod split;

use ndarray::Array3;

use crate::{Error, Result, Scalar};

pub use batch::{batch_iterator, stack, Batch, BatchIter, BatchMode};
pub use cifar::{
    encode_cifar10_binary, load_cifar10_dir, parse_cifar10_binary, parse_cifar10_labels, CIFAR10_CLASSES,
    CIFAR10_RECORD_LEN, CIFAR10_SIDE,
};
pub use folder::{load_image, load_image_folder, save_image, ABNORMAL_DIR, NORMAL_DIR, TEST_DIR, TRAIN_DIR};
pub use patches::extract_patches;
pub use split::{make_one_class_out_split, split_indices, SplitPlan, SplitSpec, TestSource};

/// Binary label of a normal sample.
pub const NORMAL: u32 = 0;
/// Binary label of an anomalous sample.
pub const ABNORMAL: u32 = 1;

/// Maps an 8-bit intensity to [-1, 1].
#[inline]
pub fn byte_to_unit<T: Scalar>(v: u8) -> T {
    T::lit(v as f64 / 127.5 - 1.0)
}

/// Inverse of [`byte_to_unit`], rounding to the nearest byte.
#[inline]
pub fn unit_to_byte<T: Scalar>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A `(channels, height, width)` image in [-1, 1] with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub pixels: Array3<T>,
    pub label: u32,
    pub origin: String,
}

impl<T: Scalar> LabeledImage<T> {
    pub fn new(pixels: Array3<T>, label: u32, origin: impl Into<String>) -> Result<Self> {
        let origin = origin.into();
        let (c, h, w) = pixels.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidDataset(format!("{origin}: empty image {c}×{h}×{w}")));
        }
        let lo = -T::one();
        if pixels.iter().any(|&v| !(v >= lo && v <= T::one())) {
            return Err(Error::InvalidDataset(format!("{origin}: pixel values outside [-1, 1]")));
        }
        Ok(LabeledImage { pixels, label, origin })
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = label;
        self
    }
}

/// Normal-only training images and a labelled mixed test set.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyDataset<T> {
    pub train: Vec<LabeledImage<T>>,
    pub test: Vec<LabeledImage<T>>,
}

impl<T: Scalar> AnomalyDataset<T> {
    /// Validates that training images are all normal and that the test set
    /// carries both binary labels.
    pub fn new(train: Vec<LabeledImage<T>>, test: Vec<LabeledImage<T>>) -> Result<Self> {
        if let Some(bad) = train.iter().find(|s| s.label != NORMAL) {
            return Err(Error::InvalidDataset(format!(
                "training sample {} is not labelled normal",
                bad.origin
            )));
        }
        if let Some(bad) = test.iter().find(|s| s.label > ABNORMAL) {
            return Err(Error::InvalidDataset(format!(
                "test sample {} has non-binary label {}",
                bad.origin, bad.label
            )));
        }
        let (normal, abnormal) = count_labels(&test);
        if normal == 0 || abnormal == 0 {
            return Err(Error::InvalidDataset(format!(
                "test set needs both labels (normal {normal}, abnormal {abnormal})"
            )));
        }
        Ok(AnomalyDataset { train, test })
    }

    /// `(normal, abnormal)` counts of the test split.
    pub fn test_counts(&self) -> (usize, usize) {
        count_labels(&self.test)
    }

    /// Applies [`extract_patches`] to every image of both splits.
    pub fn into_patches(self, window: usize, stride: usize) -> Result<Self> {
        let patch_all = |images: Vec<LabeledImage<T>>| -> Result<Vec<LabeledImage<T>>> {
            let mut out = Vec::new();
            for img in &images {
                out.extend(extract_patches(img, window, stride)?);
            }
            Ok(out)
        };
        AnomalyDataset::new(patch_all(self.train)?, patch_all(self.test)?)
    }

    /// `(channels, height, width)` shared by all images, if consistent.
    pub fn image_shape(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .train
            .first()
            .or(self.test.first())
            .ok_or_else(|| Error::InvalidDataset("dataset is empty".into()))?;
        let shape = first.pixels.dim();
        if let Some(bad) = self.train.iter().chain(&self.test).find(|s| s.pixels.dim() != shape) {
            return Err(Error::InvalidDataset(format!(
                "{} has shape {:?}, expected {:?}",
                bad.origin,
                bad.pixels.dim(),
                shape
            )));
        }
        Ok(shape)
    }
}

fn count_labels<T>(images: &[LabeledImage<T>]) -> (usize, usize) {
    let abnormal = images.iter().filter(|s| s.label == ABNORMAL).count();
    (images.len() - abnormal, abnormal)
}
