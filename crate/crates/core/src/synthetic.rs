//! Seeded synthetic anomaly data: smooth blob fields as normals, the same
//! fields with a high-contrast rectangle as anomalies.

use std::path::Path;

use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_image, AnomalyDataset, LabeledImage, ABNORMAL, ABNORMAL_DIR, NORMAL, NORMAL_DIR, TEST_DIR, TRAIN_DIR,
};
use crate::{Error, Result, Scalar};

fn d_size() -> usize {
    32
}
fn d_channels() -> usize {
    1
}
fn d_blobs() -> usize {
    4
}
fn d_sigma() -> (f64, f64) {
    (0.15, 0.3)
}
fn d_rect() -> (usize, usize) {
    (6, 12)
}
fn d_train() -> usize {
    256
}
fn d_test() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "d_size")]
    pub image_size: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    /// Gaussian blobs per normal field.
    #[serde(default = "d_blobs")]
    pub blobs: usize,
    /// Blob standard deviation range as a fraction of the image side.
    #[serde(default = "d_sigma")]
    pub blob_sigma: (f64, f64),
    /// Inclusive range of rectangle side lengths in pixels.
    #[serde(default = "d_rect")]
    pub rect_size: (usize, usize),
    #[serde(default = "d_train")]
    pub train_normal: usize,
    #[serde(default = "d_test")]
    pub test_normal: usize,
    #[serde(default = "d_test")]
    pub test_abnormal: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: d_size(),
            channels: d_channels(),
            blobs: d_blobs(),
            blob_sigma: d_sigma(),
            rect_size: d_rect(),
            train_normal: d_train(),
            test_normal: d_test(),
            test_abnormal: d_test(),
            seed: 0,
        }
    }
}

/// Top-left corner and size of an inserted rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.height).contains(&y) && (self.x..self.x + self.width).contains(&x)
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Train = 1,
    TestNormal = 2,
    TestAbnormal = 3,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.train_normal == 0 || self.test_normal == 0 || self.test_abnormal == 0 {
            return fail("synthetic counts must be positive".into());
        }
        if !matches!(self.channels, 1 | 3) {
            return fail(format!("synthetic channels must be 1 or 3, got {}", self.channels));
        }
        if self.blobs == 0 {
            return fail("synthetic fields need at least one blob".into());
        }
        let (lo, hi) = self.blob_sigma;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail(format!("invalid blob_sigma range {:?}", self.blob_sigma));
        }
        let (rmin, rmax) = self.rect_size;
        // the rectangle keeps a one-pixel margin from every border
        if rmin == 0 || rmin > rmax || rmax + 2 > self.image_size {
            return fail(format!(
                "rect_size {:?} does not fit strictly inside a {} image",
                self.rect_size, self.image_size
            ));
        }
        Ok(())
    }

    fn rng(&self, stream: Stream, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((stream as u64) << 48) | index as u64);
        rng
    }

    fn field<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Array3<T> {
        let n = self.image_size;
        let side = n as f64;
        let mut field = Array3::<f64>::zeros((self.channels, n, n));
        for mut plane in field.outer_iter_mut() {
            for _ in 0..self.blobs {
                let cy = rng.random_range(0.0..side);
                let cx = rng.random_range(0.0..side);
                let sigma = rng.random_range(self.blob_sigma.0..=self.blob_sigma.1) * side;
                let amp = rng.random_range(-1.0..1.0);
                let inv = 1.0 / (2.0 * sigma * sigma);
                for ((y, x), v) in plane.indexed_iter_mut() {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    *v += amp * (-(dy * dy + dx * dx) * inv).exp();
                }
            }
        }
        // soft squashing keeps extreme values for the anomalies
        field.mapv(|v| T::lit(0.8 * v.tanh()))
    }

    fn rect(&self, rng: &mut ChaCha8Rng) -> Rect {
        let n = self.image_size;
        let (lo, hi) = self.rect_size;
        let height = rng.random_range(lo..=hi);
        let width = rng.random_range(lo..=hi);
        Rect {
            y: rng.random_range(1..=n - 1 - height),
            x: rng.random_range(1..=n - 1 - width),
            height,
            width,
        }
    }

    fn normal<T: Scalar>(&self, stream: Stream, index: usize) -> Array3<T> {
        self.field(&mut self.rng(stream, index))
    }

    /// A normal field and its anomalous counterpart.
    pub fn pair<T: Scalar>(&self, index: usize) -> (Array3<T>, Array3<T>, Rect) {
        let mut rng = self.rng(Stream::TestAbnormal, index);
        let normal = self.field::<T>(&mut rng);
        let rect = self.rect(&mut rng);
        let mut abnormal = normal.clone();
        let mut region = abnormal.slice_mut(s![.., rect.y..rect.y + rect.height, rect.x..rect.x + rect.width]);
        let mean = region.iter().map(|v| v.as_f64()).sum::<f64>() / region.len() as f64;
        // fill at the extreme opposite the local mean
        let fill = if mean > 0.0 { -T::one() } else { T::one() };
        region.fill(fill);
        (normal, abnormal, rect)
    }

    /// Builds the dataset in memory.
    pub fn generate<T: Scalar>(&self) -> Result<AnomalyDataset<T>> {
        self.validate()?;
        let train = (0..self.train_normal)
            .map(|i| LabeledImage::new(self.normal(Stream::Train, i), NORMAL, format!("train/normal/{i:05}")))
            .collect::<Result<Vec<_>>>()?;
        let mut test = (0..self.test_normal)
            .map(|i| {
                LabeledImage::new(
                    self.normal(Stream::TestNormal, i),
                    NORMAL,
                    format!("test/normal/{i:05}"),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..self.test_abnormal {
            let (_, abnormal, _) = self.pair(i);
            test.push(LabeledImage::new(abnormal, ABNORMAL, format!("test/abnormal/{i:05}"))?);
        }
        AnomalyDataset::new(train, test)
    }

    /// Writes the image-folder layout under `root` as PNG files.
    pub fn write_folder(&self, root: &Path) -> Result<()> {
        let ds = self.generate::<f32>()?;
        for dir in [
            root.join(TRAIN_DIR).join(NORMAL_DIR),
            root.join(TEST_DIR).join(NORMAL_DIR),
            root.join(TEST_DIR).join(ABNORMAL_DIR),
        ] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
        }
        for img in ds.train.iter().chain(&ds.test) {
            save_image(&img.pixels, &root.join(format!("{}.png", img.origin)))?;
        }
        Ok(())
    }
}
