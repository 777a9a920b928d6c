use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledImage;
use crate::{Error, Result, Scalar};

/// Training drops the final short batch (unless it is the only one);
/// scoring keeps it so that every sample gets a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    Training,
    Scoring,
}

#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Array4<T>,
    pub labels: Vec<u32>,
    /// Positions of the samples in the source slice.
    pub indices: Vec<usize>,
}

pub struct BatchIter<'a, T> {
    images: &'a [LabeledImage<T>],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    end: usize,
}

/// Iterates over `images` in batches, shuffled by `shuffle_seed` when
/// given. Every sample appears at most once per pass; exactly once in
/// scoring mode.
pub fn batch_iterator<T: Scalar>(
    images: &[LabeledImage<T>],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    mode: BatchMode,
) -> Result<BatchIter<'_, T>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if let Some(first) = images.first() {
        let shape = first.pixels.dim();
        if let Some(bad) = images.iter().find(|s| s.pixels.dim() != shape) {
            return Err(Error::InvalidDataset(format!(
                "{} has shape {:?}, expected {:?}",
                bad.origin,
                bad.pixels.dim(),
                shape
            )));
        }
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let n = images.len();
    let end = match mode {
        BatchMode::Scoring => n,
        BatchMode::Training if n >= batch_size => n - n % batch_size,
        BatchMode::Training => n,
    };
    Ok(BatchIter {
        images,
        order,
        batch_size,
        cursor: 0,
        end,
    })
}

/// Stacks `(C, H, W)` images into an `(N, C, H, W)` batch.
pub fn stack<T: Scalar>(images: &[&LabeledImage<T>]) -> Array4<T> {
    let views: Vec<_> = images.iter().map(|s| s.pixels.view()).collect();
    ndarray::stack(Axis(0), &views).expect("shapes validated")
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.cursor >= self.end {
            return None;
        }
        let stop = (self.cursor + self.batch_size).min(self.end);
        let indices = self.order[self.cursor..stop].to_vec();
        self.cursor = stop;
        let members: Vec<&LabeledImage<T>> = indices.iter().map(|&i| &self.images[i]).collect();
        Some(Batch {
            images: stack(&members),
            labels: members.iter().map(|s| s.label).collect(),
            indices,
        })
    }
}
