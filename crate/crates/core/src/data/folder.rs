//! Image-folder datasets laid out as
//! `root/train/normal`, `root/test/normal`, `root/test/abnormal`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::Array3;

use super::{byte_to_unit, unit_to_byte, AnomalyDataset, LabeledImage, ABNORMAL, NORMAL};
use crate::{Error, Result, Scalar};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const NORMAL_DIR: &str = "normal";
pub const ABNORMAL_DIR: &str = "abnormal";

/// Regular, non-hidden files of `dir` in lexicographic order.
fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::InvalidDataset(format!("missing directory {}", dir.display())));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Decodes one image: single-channel formats become 1 channel, everything
/// else 3 (alpha dropped).
pub fn load_image<T: Scalar>(path: &Path, label: u32) -> Result<LabeledImage<T>> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = matches!(
        decoded,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = if gray {
        let img = decoded.to_luma8();
        Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            byte_to_unit(img.get_pixel(x as u32, y as u32)[0])
        })
    } else {
        let img = decoded.to_rgb8();
        Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            byte_to_unit(img.get_pixel(x as u32, y as u32)[c])
        })
    };
    LabeledImage::new(pixels, label, path.display().to_string())
}

/// Encodes a 1- or 3-channel image as 8-bit PNG.
pub fn save_image<T: Scalar>(pixels: &Array3<T>, path: &Path) -> Result<()> {
    let (c, h, w) = pixels.dim();
    let result = match c {
        1 => GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([unit_to_byte(pixels[[0, y as usize, x as usize]])])
        })
        .save(path),
        3 => RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| unit_to_byte(pixels[[ch, y as usize, x as usize]]);
            image::Rgb([px(0), px(1), px(2)])
        })
        .save(path),
        _ => {
            return Err(Error::Config(format!("cannot encode a {c}-channel image")));
        }
    };
    result.map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_dir<T: Scalar>(dir: &Path, label: u32) -> Result<Vec<LabeledImage<T>>> {
    sorted_files(dir)?.iter().map(|p| load_image(p, label)).collect()
}

/// Loads the three-folder layout; labels come from the folder names.
pub fn load_image_folder<T: Scalar>(root: &Path) -> Result<AnomalyDataset<T>> {
    let train_dir = root.join(TRAIN_DIR).join(NORMAL_DIR);
    let train = load_dir(&train_dir, NORMAL)?;
    if train.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no normal training images in {}",
            train_dir.display()
        )));
    }
    let mut test = load_dir(&root.join(TEST_DIR).join(NORMAL_DIR), NORMAL)?;
    test.extend(load_dir(&root.join(TEST_DIR).join(ABNORMAL_DIR), ABNORMAL)?);
    AnomalyDataset::new(train, test)
}
