//! Per-sample anomaly scores and min-max scaling over a test set.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, BatchMode, LabeledImage};
use crate::model::{Discriminator, Generator};
use crate::objectives::{contextual_per_sample, latent_per_sample, LatentNorm};
use crate::{Error, Result, Scalar};

/// Weight on the reconstruction score.
pub const DEFAULT_LAMBDA_SCORE: f64 = 0.9;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA_SCORE
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default = "default_lambda")]
    pub lambda_score: f64,
    #[serde(default)]
    pub latent_norm: LatentNorm,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            lambda_score: DEFAULT_LAMBDA_SCORE,
            latent_norm: LatentNorm::Mse,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_score) {
            return Err(Error::Config(format!(
                "lambda_score must lie in [0, 1], got {}",
                self.lambda_score
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub label: u32,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "A_hat")]
    pub a_hat: f64,
}

/// Reconstruction and latent scores of every sample in a batch.
pub fn score_batch<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    x: &Array4<T>,
    norm: LatentNorm,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let x_hat = g.reconstruct(x)?;
    let r = contextual_per_sample(x, &x_hat)?;
    let f_x = d.discriminate(x)?.features;
    let f_xhat = d.discriminate(&x_hat)?.features;
    let l = latent_per_sample(f_x.view(), f_xhat.view(), norm)?;
    Ok((r.mapv(|v| v.as_f64()), l.mapv(|v| v.as_f64())))
}

/// `(R, L)` of one `(C, H, W)` image.
pub fn score_sample<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    x: &ndarray::Array3<T>,
    norm: LatentNorm,
) -> Result<(f64, f64)> {
    let batch = x.clone().insert_axis(Axis(0));
    let (r, l) = score_batch(g, d, &batch, norm)?;
    Ok((r[0], l[0]))
}

/// `λ·R + (1 − λ)·L`.
pub fn combine_score(r: f64, l: f64, cfg: &ScoreConfig) -> Result<f64> {
    cfg.validate()?;
    let lambda = cfg.lambda_score;
    Ok(lambda * r + (1.0 - lambda) * l)
}

/// Min-max scaling to [0, 1]; a constant vector maps to zeros.
pub fn scale_scores(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::MalformedInput("cannot scale an empty score vector".into()));
    }
    if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::MalformedInput(format!("non-finite score {bad}")));
    }
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![0.0; a.len()]);
    }
    Ok(a.iter().map(|&v| ((v - min) / range).clamp(0.0, 1.0)).collect())
}

/// Scores every image in order, then scales `A` over the whole set.
pub fn score_dataset<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    images: &[LabeledImage<T>],
    cfg: &ScoreConfig,
    batch_size: usize,
) -> Result<Vec<ScoredSample>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidDataset("no samples to score".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for batch in batch_iterator(images, batch_size, None, BatchMode::Scoring)? {
        let (r, l) = score_batch(g, d, &batch.images, cfg.latent_norm)?;
        for (k, &i) in batch.indices.iter().enumerate() {
            out.push(ScoredSample {
                id: images[i].origin.clone(),
                label: images[i].label,
                r: r[k],
                l: l[k],
                a: combine_score(r[k], l[k], cfg)?,
                a_hat: 0.0,
            });
        }
    }
    let a: Vec<f64> = out.iter().map(|s| s.a).collect();
    let scaled = scale_scores(&a)?;
    for (s, v) in out.iter_mut().zip(scaled) {
        s.a_hat = v;
    }
    Ok(out)
}

pub const SCORES_HEADER: [&str; 6] = ["id", "label", "R", "L", "A", "A_hat"];

pub fn write_scores<W: Write>(samples: &[ScoredSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s).map_err(|e| Error::MalformedInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))
}

pub fn read_scores<R: Read>(reader: R) -> Result<Vec<ScoredSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != SCORES_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", SCORES_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in r.deserialize::<ScoredSample>() {
        let s = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn save_scores(samples: &[ScoredSample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores(samples, std::io::BufWriter::new(file))
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(std::io::BufReader::new(file))
}
