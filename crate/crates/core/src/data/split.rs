use serde::{Deserialize, Serialize};

use super::{AnomalyDataset, LabeledImage, ABNORMAL, NORMAL};
use crate::{Error, Result, Scalar};

/// Which class is treated as the anomaly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub anomalous_class: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestSource {
    Train,
    Test,
}

/// Index form of a one-class-out split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    /// Train-source indices of normal classes.
    pub train: Vec<usize>,
    /// Test entries as `(source, index, binary label)`.
    pub test: Vec<(TestSource, usize, u32)>,
}

impl SplitPlan {
    pub fn test_counts(&self) -> (usize, usize) {
        let abnormal = self.test.iter().filter(|t| t.2 == ABNORMAL).count();
        (self.test.len() - abnormal, abnormal)
    }
}

/// Train keeps every train-source sample not of the anomalous class; test
/// holds the test-source normals plus every anomalous sample from both
/// sources (test-source order first, then train-source anomalies).
pub fn split_indices(train_labels: &[u32], test_labels: &[u32], spec: SplitSpec) -> Result<SplitPlan> {
    let target = spec.anomalous_class;
    if !train_labels.iter().chain(test_labels).any(|&l| l == target) {
        return Err(Error::AbsentClass(target));
    }
    let train = train_labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != target)
        .map(|(i, _)| i)
        .collect();
    let mut test: Vec<(TestSource, usize, u32)> = test_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (TestSource::Test, i, if l == target { ABNORMAL } else { NORMAL }))
        .collect();
    test.extend(
        train_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == target)
            .map(|(i, _)| (TestSource::Train, i, ABNORMAL)),
    );
    Ok(SplitPlan { train, test })
}

/// Builds the leave-one-class-out anomaly dataset from multi-class
/// train/test sources.
pub fn make_one_class_out_split<T: Scalar>(
    train_source: &[LabeledImage<T>],
    test_source: &[LabeledImage<T>],
    spec: SplitSpec,
) -> Result<AnomalyDataset<T>> {
    let train_labels: Vec<u32> = train_source.iter().map(|s| s.label).collect();
    let test_labels: Vec<u32> = test_source.iter().map(|s| s.label).collect();
    let plan = split_indices(&train_labels, &test_labels, spec)?;
    let train = plan
        .train
        .iter()
        .map(|&i| train_source[i].clone().with_label(NORMAL))
        .collect();
    let test = plan
        .test
        .iter()
        .map(|&(src, i, label)| {
            let img = match src {
                TestSource::Train => &train_source[i],
                TestSource::Test => &test_source[i],
            };
            img.clone().with_label(label)
        })
        .collect();
    AnomalyDataset::new(train, test)
}
