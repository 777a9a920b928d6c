//! Alternating adversarial optimisation, model selection and
//! checkpointing.

mod adam;
mod checkpoint;

use ndarray::Array4;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, AnomalyDataset, BatchMode};
use crate::model::{build_discriminator, build_generator, Discriminator, Generator, GeneratorConfig};
use crate::nn::Module;
use crate::objectives::{
    adversarial_loss_d_grad, adversarial_loss_g_grad, contextual_loss_grad, latent_loss_grad, total_generator_loss,
    LatentNorm, LossParts, LossReport, LossWeights,
};
use crate::{Error, Result, Scalar};

pub use adam::{Adam, AdamConfig, Moments};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};

/// Offset mixed into the seed for the discriminator's initialisation.
const DISCRIMINATOR_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn default_lr() -> f64 {
    2e-3
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epochs() -> usize {
    15
}
fn default_batch() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_patience() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
    /// Linear decay of the learning rate to zero over `max_epochs`.
    #[serde(default = "default_true")]
    pub lr_decay: bool,
    /// Evaluate every this many epochs; 0 disables evaluation.
    #[serde(default = "default_one")]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub latent_norm: LatentNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            max_epochs: default_epochs(),
            batch_size: default_batch(),
            weights: LossWeights::default(),
            seed: 0,
            lr_decay: true,
            eval_every: 1,
            patience: default_patience(),
            latent_norm: LatentNorm::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.weights.validate()
    }

    /// `lr·(1 − epoch/max_epochs)` with decay, `lr` otherwise.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.lr_decay {
            self.learning_rate * (1.0 - epoch as f64 / self.max_epochs as f64)
        } else {
            self.learning_rate
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Mean of the per-step losses.
    pub losses: LossReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub evaluations: Vec<EvalRecord>,
    /// Index into `evaluations` of the retained checkpoint.
    pub best_evaluation: Option<usize>,
    pub stopped_early: bool,
}

fn check_finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            term,
            epoch: None,
            history: None,
        })
    }
}

/// Clears the discriminator's gradients and accumulates those of
/// `−mean log D(x) − mean log(1 − D(x̂))`, with `x̂` treated as data.
pub fn discriminator_gradients<T: Scalar>(d: &mut Discriminator<T>, x: &Array4<T>, x_hat: &Array4<T>) -> Result<f64> {
    d.zero_grad();
    // separate passes so each batch is normalised with its own statistics
    let p_real = d.forward_train(x)?.probabilities;
    let (_, d_real, _) = adversarial_loss_d_grad(p_real.view(), p_real.view());
    d.backward(&d_real, None);
    let p_fake = d.forward_train(x_hat)?.probabilities;
    let (loss, _, d_fake) = adversarial_loss_d_grad(p_real.view(), p_fake.view());
    d.backward(&d_fake, None);
    Ok(loss.as_f64())
}

/// Given a generator that has just run `forward_train` on `x` producing
/// `x_hat`, clears the generator's gradients and accumulates those of the
/// weighted objective. `f(x)` is a constant target; the discriminator's own
/// gradients are cleared again before returning.
pub fn generator_backward<T: Scalar>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    x: &Array4<T>,
    x_hat: &Array4<T>,
    weights: &LossWeights,
    latent_norm: LatentNorm,
) -> Result<LossParts> {
    g.zero_grad();
    let target = d.forward_train(x)?.features;
    let fake = d.forward_train(x_hat)?;
    let (adv, mut d_prob) = adversarial_loss_g_grad(fake.probabilities.view());
    let (lat, mut d_feat) = latent_loss_grad(target.view(), fake.features.view(), latent_norm)?;
    let (con, d_con) = contextual_loss_grad(x.view(), x_hat.view())?;

    let mut d_xhat = d_con;
    d_xhat.mapv_inplace(|v| v * T::lit(weights.lambda_con));
    if weights.lambda_adv != 0.0 || weights.lambda_lat != 0.0 {
        d_prob.mapv_inplace(|v| v * T::lit(weights.lambda_adv));
        d_feat.mapv_inplace(|v| v * T::lit(weights.lambda_lat));
        d.zero_grad();
        d_xhat += &d.backward(&d_prob, Some(&d_feat));
    }
    d.zero_grad();
    g.backward(&d_xhat);
    Ok(LossParts {
        adv: adv.as_f64(),
        con: con.as_f64(),
        lat: lat.as_f64(),
    })
}

/// Forward pass plus [`generator_backward`]; used for gradient checks.
pub fn generator_gradients<T: Scalar>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    x: &Array4<T>,
    weights: &LossWeights,
    latent_norm: LatentNorm,
) -> Result<LossParts> {
    let out = g.forward_train(x)?;
    generator_backward(g, d, x, &out.reconstruction, weights, latent_norm)
}

/// Generator, discriminator and their optimisers.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &GeneratorConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = build_generator(model, config.seed)?;
        let discriminator = build_discriminator(model, config.seed ^ DISCRIMINATOR_SEED_SALT)?;
        Ok(Trainer {
            generator,
            discriminator,
            opt_g: Adam::new(config.adam()),
            opt_d: Adam::new(config.adam()),
            config: config.clone(),
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    /// Resumes from a checkpoint.
    pub fn from_checkpoint(c: Checkpoint<T>) -> Self {
        Trainer {
            generator: c.generator,
            discriminator: c.discriminator,
            opt_g: c.opt_g,
            opt_d: c.opt_d,
            config: c.train_config,
            epoch: c.epoch,
            rng: c.rng,
        }
    }

    pub fn checkpoint(&self, best_metric: Option<f64>) -> Checkpoint<T> {
        Checkpoint {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            opt_g: self.opt_g.clone(),
            opt_d: self.opt_d.clone(),
            epoch: self.epoch,
            best_metric,
            train_config: self.config.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt_g.set_learning_rate(lr);
        self.opt_d.set_learning_rate(lr);
    }

    /// One discriminator update on `(x, G(x))` followed by one generator
    /// update on the weighted objective.
    pub fn train_step(&mut self, x: &Array4<T>) -> Result<LossReport> {
        let out = self.generator.forward_train(x)?;
        let adv_d = discriminator_gradients(&mut self.discriminator, x, &out.reconstruction)?;
        check_finite("adversarial", adv_d)?;
        self.opt_d.step(&mut self.discriminator);

        let parts = generator_backward(
            &mut self.generator,
            &mut self.discriminator,
            x,
            &out.reconstruction,
            &self.config.weights,
            self.config.latent_norm,
        )?;
        let total_g = total_generator_loss(parts, &self.config.weights)?;
        self.opt_g.step(&mut self.generator);
        Ok(LossReport {
            adv_g: parts.adv,
            adv_d,
            con: parts.con,
            lat: parts.lat,
            total_g,
        })
    }

    /// Discriminator-only update; the generator is left untouched.
    pub fn discriminator_step(&mut self, x: &Array4<T>) -> Result<f64> {
        let x_hat = self.generator.forward_train(x)?.reconstruction;
        let adv_d = check_finite(
            "adversarial",
            discriminator_gradients(&mut self.discriminator, x, &x_hat)?,
        )?;
        self.opt_d.step(&mut self.discriminator);
        Ok(adv_d)
    }

    /// Runs one pass over the training split.
    pub fn train_epoch(&mut self, dataset: &AnomalyDataset<T>) -> Result<EpochRecord> {
        let lr = self.config.learning_rate_at(self.epoch);
        self.set_learning_rate(lr);
        let shuffle = self.rng.next_u64();
        let mut sum = LossReport::default();
        let mut steps = 0;
        for batch in batch_iterator(
            &dataset.train,
            self.config.batch_size,
            Some(shuffle),
            BatchMode::Training,
        )? {
            let r = self.train_step(&batch.images)?;
            sum.adv_g += r.adv_g;
            sum.adv_d += r.adv_d;
            sum.con += r.con;
            sum.lat += r.lat;
            sum.total_g += r.total_g;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            learning_rate: lr,
            steps,
            losses: LossReport {
                adv_g: sum.adv_g / k,
                adv_d: sum.adv_d / k,
                con: sum.con / k,
                lat: sum.lat / k,
                total_g: sum.total_g / k,
            },
        };
        self.epoch += 1;
        Ok(record)
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    /// Best-AUC checkpoint, or the final state when nothing was evaluated.
    pub checkpoint: Checkpoint<T>,
    pub history: TrainHistory,
}

/// Trains for at most `max_epochs`, calling `eval_hook` every
/// `eval_every` epochs. The checkpoint with the highest returned AUC is
/// retained; training stops once `patience` evaluations pass without
/// improvement.
pub fn fit<T, H>(
    dataset: &AnomalyDataset<T>,
    model: &GeneratorConfig,
    config: &TrainConfig,
    mut eval_hook: H,
) -> Result<FitOutcome<T>>
where
    T: Scalar,
    H: FnMut(&Generator<T>, &Discriminator<T>, usize) -> Result<f64>,
{
    if dataset.train.is_empty() {
        return Err(Error::InvalidDataset("training split is empty".into()));
    }
    let mut trainer = Trainer::new(model, config)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Checkpoint<T>)> = None;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        let record = match trainer.train_epoch(dataset) {
            Ok(r) => r,
            Err(Error::Divergence { term, .. }) => {
                return Err(Error::Divergence {
                    term,
                    epoch: Some(epoch),
                    history: Some(Box::new(history)),
                })
            }
            Err(e) => return Err(e),
        };
        log::info!(
            "epoch {epoch}: lr {:.2e} adv_d {:.4} adv_g {:.4} con {:.4} lat {:.4}",
            record.learning_rate,
            record.losses.adv_d,
            record.losses.adv_g,
            record.losses.con,
            record.losses.lat
        );
        history.epochs.push(record);

        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            let auc = eval_hook(&trainer.generator, &trainer.discriminator, epoch)?;
            log::info!("epoch {epoch}: auc {auc:.4}");
            history.evaluations.push(EvalRecord { epoch, auc });
            let improved = best.as_ref().is_none_or(|(b, _)| auc > *b);
            if improved {
                history.best_evaluation = Some(history.evaluations.len() - 1);
                best = Some((auc, trainer.checkpoint(Some(auc))));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    history.stopped_early = epoch + 1 < config.max_epochs;
                    break;
                }
            }
        }
    }

    let checkpoint = match best {
        Some((_, c)) => c,
        None => trainer.checkpoint(None),
    };
    Ok(FitOutcome { checkpoint, history })
}

#[cfg(test)]
mod tests;
