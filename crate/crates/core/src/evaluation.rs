//! ROC/AUC, score histograms and discriminator-feature export.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, BatchMode, LabeledImage, ABNORMAL, NORMAL};
use crate::model::Discriminator;
use crate::scoring::ScoredSample;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at least this value are flagged anomalous.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Cumulative `(false positives, true positives, threshold)` after each
/// distinct score, descending, starting from `(0, 0, +inf)`.
struct RocCounts {
    steps: Vec<(u64, u64, f64)>,
    positives: u64,
    negatives: u64,
}

fn roc_counts(scores: &[f64], labels: &[u32]) -> Result<RocCounts> {
    if scores.len() != labels.len() {
        return Err(Error::shape(&[scores.len()], &[labels.len()]));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > ABNORMAL) {
        return Err(Error::InvalidLabel {
            label: *bad,
            classes: 2,
        });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::MalformedInput(format!("non-finite score {bad}")));
    }
    let positives = labels.iter().filter(|&&l| l == ABNORMAL).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::MalformedInput(format!(
            "ROC needs both labels (normal {negatives}, abnormal {positives})"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = vec![(0, 0, f64::INFINITY)];
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == ABNORMAL {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((fp, tp, threshold));
    }
    Ok(RocCounts {
        steps,
        positives,
        negatives,
    })
}

/// ROC curve sweeping the threshold over the distinct scores; higher
/// scores are more anomalous and ties share one point.
pub fn roc_curve(scores: &[f64], labels: &[u32]) -> Result<RocCurve> {
    let RocCounts {
        steps,
        positives: p,
        negatives: n,
    } = roc_counts(scores, labels)?;
    Ok(RocCurve {
        points: steps
            .into_iter()
            .map(|(fp, tp, threshold)| RocPoint {
                fpr: fp as f64 / n as f64,
                tpr: tp as f64 / p as f64,
                threshold,
            })
            .collect(),
    })
}

/// Trapezoidal area under the ROC curve, accumulated on integer counts.
pub fn auc(scores: &[f64], labels: &[u32]) -> Result<f64> {
    let RocCounts {
        steps,
        positives: p,
        negatives: n,
    } = roc_counts(scores, labels)?;
    // twice the area in units of one (positive, negative) pair
    let doubled: u128 = steps
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as u128 * (w[1].1 + w[0].1) as u128)
        .sum();
    Ok(doubled as f64 / (2.0 * p as f64 * n as f64))
}

/// Per-label counts over equal-width bins of [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub normal: Vec<usize>,
    pub abnormal: Vec<usize>,
}

/// Bins are left-closed and right-open except the last, which also holds 1.
pub fn histogram(scores: &[f64], labels: &[u32], n_bins: usize) -> Result<Histogram> {
    if n_bins < 1 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(&[scores.len()], &[labels.len()]));
    }
    let mut h = Histogram {
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        normal: vec![0; n_bins],
        abnormal: vec![0; n_bins],
    };
    for (&s, &l) in scores.iter().zip(labels) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::MalformedInput(format!("score {s} outside [0, 1]")));
        }
        let bin = ((s * n_bins as f64) as usize).min(n_bins - 1);
        match l {
            NORMAL => h.normal[bin] += 1,
            ABNORMAL => h.abnormal[bin] += 1,
            _ => return Err(Error::InvalidLabel { label: l, classes: 2 }),
        }
    }
    Ok(h)
}

/// Discriminator features with the label and id of each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
    pub features: Array2<f64>,
}

/// Feature rows for `images`, optionally restricted to a seeded uniform
/// subsample of `subsample` rows (kept in dataset order).
pub fn export_features<T: Scalar>(
    d: &Discriminator<T>,
    images: &[LabeledImage<T>],
    subsample: Option<(usize, u64)>,
    batch_size: usize,
) -> Result<FeatureTable> {
    let chosen: Vec<LabeledImage<T>> = match subsample {
        Some((k, seed)) if k < images.len() => {
            let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), images.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| images[i].clone()).collect()
        }
        _ => images.to_vec(),
    };
    let dim = d.feature_len();
    let mut features = Array2::zeros((chosen.len(), dim));
    for batch in batch_iterator(&chosen, batch_size, None, BatchMode::Scoring)? {
        let f = d.discriminate(&batch.images)?.features;
        for (k, &i) in batch.indices.iter().enumerate() {
            features.row_mut(i).assign(&f.row(k).mapv(|v| v.as_f64()));
        }
    }
    Ok(FeatureTable {
        ids: chosen.iter().map(|s| s.origin.clone()).collect(),
        labels: chosen.iter().map(|s| s.label).collect(),
        features,
    })
}

/// Summary of one scored test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub histogram: Histogram,
    /// Configuration that produced the scores, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// AUC on the scaled scores plus their histogram.
pub fn evaluate_scores(samples: &[ScoredSample], n_bins: usize) -> Result<EvalReport> {
    let scores: Vec<f64> = samples.iter().map(|s| s.a_hat).collect();
    let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
    let n_abnormal = labels.iter().filter(|&&l| l == ABNORMAL).count();
    Ok(EvalReport {
        auc: auc(&scores, &labels)?,
        n_normal: labels.len() - n_abnormal,
        n_abnormal,
        histogram: histogram(&scores, &labels, n_bins)?,
        config: None,
    })
}

/// Mean and range of AUC over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize_aucs(aucs: &[f64]) -> Result<AucSummary> {
    if aucs.is_empty() {
        return Err(Error::MalformedInput("no AUC values to summarise".into()));
    }
    Ok(AucSummary {
        aucs: aucs.to_vec(),
        mean: aucs.iter().sum::<f64>() / aucs.len() as f64,
        min: aucs.iter().copied().fold(f64::INFINITY, f64::min),
        max: aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::MalformedInput(e.to_string())
}

pub fn write_roc_csv<W: Write>(curve: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr", "threshold"]).map_err(csv_error)?;
    for p in &curve.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])
            .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<roc>", e))
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_start", "bin_end", "normal", "abnormal"])
        .map_err(csv_error)?;
    for i in 0..h.normal.len() {
        w.write_record([
            h.edges[i].to_string(),
            h.edges[i + 1].to_string(),
            h.normal[i].to_string(),
            h.abnormal[i].to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))
}

pub fn write_features_csv<W: Write>(t: &FeatureTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..t.features.ncols()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for (i, row) in t.features.rows().into_iter().enumerate() {
        let mut record = vec![t.ids[i].clone(), t.labels[i].to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))
}

/// Writes `report.json`, `roc.csv` and `histogram.csv` into `dir`.
pub fn save_report(report: &EvalReport, curve: &RocCurve, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::MalformedInput(e.to_string()))?;
    create("report.json")?
        .write_all(json.as_bytes())
        .map_err(|e| Error::io(dir.join("report.json"), e))?;
    write_roc_csv(curve, create("roc.csv")?)?;
    write_histogram_csv(&report.histogram, create("histogram.csv")?)
}
