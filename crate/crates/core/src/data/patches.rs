use ndarray::s;

use super::LabeledImage;
use crate::{Error, Result, Scalar};

/// Square windows at offsets `0, stride, 2·stride, …` along each axis while
/// the window fits; `floor((dim − window)/stride) + 1` per axis, row-major.
/// Patches inherit the label; origins record the top-left offset.
pub fn extract_patches<T: Scalar>(
    image: &LabeledImage<T>,
    window: usize,
    stride: usize,
) -> Result<Vec<LabeledImage<T>>> {
    if stride == 0 || window == 0 {
        return Err(Error::Config("patch window and stride must be at least 1".into()));
    }
    let (_, h, w) = image.pixels.dim();
    if window > h || window > w {
        return Err(Error::Config(format!(
            "patch window {window} exceeds image size {h}×{w} of {}",
            image.origin
        )));
    }
    let mut out = Vec::with_capacity(((h - window) / stride + 1) * ((w - window) / stride + 1));
    for y in (0..=h - window).step_by(stride) {
        for x in (0..=w - window).step_by(stride) {
            out.push(LabeledImage {
                pixels: image.pixels.slice(s![.., y..y + window, x..x + window]).to_owned(),
                label: image.label,
                origin: format!("{}@{y},{x}", image.origin),
            });
        }
    }
    Ok(out)
}
