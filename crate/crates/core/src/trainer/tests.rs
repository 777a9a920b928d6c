use super::*;
use crate::data::LabeledImage;
use crate::model::GeneratorConfig;
use crate::synthetic::SyntheticSpec;
use ndarray::ArrayD;

fn tiny_model() -> GeneratorConfig {
    GeneratorConfig {
        nz: 8,
        base_filters: 4,
        ..GeneratorConfig::new(16, 1)
    }
}

fn tiny_data(train: usize) -> AnomalyDataset<f64> {
    SyntheticSpec {
        image_size: 16,
        rect_size: (4, 6),
        train_normal: train,
        test_normal: 4,
        test_abnormal: 4,
        seed: 3,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

fn batch(ds: &AnomalyDataset<f64>, n: usize) -> Array4<f64> {
    let refs: Vec<&LabeledImage<f64>> = ds.train.iter().take(n).collect();
    crate::data::stack(&refs)
}

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        seed: 11,
        ..Default::default()
    }
}

fn snapshot<M: Module<f64>>(m: &M) -> Vec<ArrayD<f64>> {
    let mut out = Vec::new();
    m.visit_tensors("", &mut |_, _, t| out.push(t.clone()));
    out
}

#[test]
fn config_validation_and_defaults() {
    let d = TrainConfig::default();
    assert_eq!(
        (d.learning_rate, d.beta1, d.beta2, d.max_epochs),
        (2e-3, 0.5, 0.999, 15)
    );
    assert_eq!((d.batch_size, d.patience), (64, 3));
    assert!(TrainConfig {
        learning_rate: 0.0,
        ..d.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        beta1: 1.0,
        ..d.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        max_epochs: 0,
        ..d.clone()
    }
    .validate()
    .is_err());
    let parsed: TrainConfig = serde_json::from_str(r#"{"max_epochs": 2}"#).unwrap();
    assert_eq!(parsed, TrainConfig { max_epochs: 2, ..d });
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 2}"#).is_err());
}

#[test]
fn learning_rate_schedule_is_exact() {
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        max_epochs: 15,
        ..Default::default()
    };
    for e in 0..15 {
        assert_eq!(cfg.learning_rate_at(e), 2e-3 * (1.0 - e as f64 / 15.0));
    }
    let flat = TrainConfig { lr_decay: false, ..cfg };
    assert_eq!(flat.learning_rate_at(7), 2e-3);
}

#[test]
fn train_step_is_deterministic() {
    let ds = tiny_data(8);
    let x = batch(&ds, 8);
    let run = || {
        let mut t = Trainer::<f64>::new(&tiny_model(), &config()).unwrap();
        (0..3).map(|_| t.train_step(&x).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn contextual_only_training_overfits() {
    let ds = tiny_data(8);
    let x = batch(&ds, 8);
    let cfg = TrainConfig {
        weights: LossWeights::new(0.0, 1.0, 0.0).unwrap(),
        ..config()
    };
    let mut t = Trainer::<f64>::new(&tiny_model(), &cfg).unwrap();
    let first = t.train_step(&x).unwrap().con;
    let mut last = first;
    for _ in 1..200 {
        last = t.train_step(&x).unwrap().con;
    }
    assert!(last <= 0.5 * first, "contextual loss {first} -> {last}");
}

#[test]
fn discriminator_learns_with_frozen_generator() {
    let ds = tiny_data(8);
    let x = batch(&ds, 8);
    let mut t = Trainer::<f64>::new(&tiny_model(), &config()).unwrap();
    let g_before = param_values(&mut t.generator);
    let first = t.discriminator_step(&x).unwrap();
    let mut last = first;
    for _ in 1..50 {
        last = t.discriminator_step(&x).unwrap();
    }
    assert!(last < first, "adv_d {first} -> {last}");
    assert_eq!(param_values(&mut t.generator), g_before);
}

fn param_values<M: Module<f64>>(m: &mut M) -> Vec<ArrayD<f64>> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.push(p.value.clone()));
    out
}

#[test]
fn half_steps_touch_only_their_own_network() {
    let ds = tiny_data(8);
    let x = batch(&ds, 8);
    let mut t = Trainer::<f64>::new(&tiny_model(), &config()).unwrap();
    t.train_step(&x).unwrap();

    let g0 = param_values(&mut t.generator);
    let d0 = param_values(&mut t.discriminator);
    let out = t.generator.forward_train(&x).unwrap();
    discriminator_gradients(&mut t.discriminator, &x, &out.reconstruction).unwrap();
    t.opt_d.step(&mut t.discriminator);
    assert_eq!(param_values(&mut t.generator), g0);
    assert_ne!(param_values(&mut t.discriminator), d0);

    let d1 = param_values(&mut t.discriminator);
    let out = t.generator.forward_train(&x).unwrap();
    generator_backward(
        &mut t.generator,
        &mut t.discriminator,
        &x,
        &out.reconstruction,
        &t.config.weights,
        LatentNorm::Mse,
    )
    .unwrap();
    t.opt_g.step(&mut t.generator);
    assert_eq!(param_values(&mut t.discriminator), d1);
    assert_ne!(param_values(&mut t.generator), g0);
}

#[test]
fn nan_parameter_raises_divergence() {
    let ds = tiny_data(8);
    let x = batch(&ds, 8);
    let mut t = Trainer::<f64>::new(&tiny_model(), &config()).unwrap();
    let mut first = true;
    t.generator.visit_params("", &mut |_, p| {
        if first {
            p.value.fill(f64::NAN);
            first = false;
        }
    });
    let err = t.train_step(&x).unwrap_err();
    assert!(err.is_divergence(), "{err}");
}

#[test]
fn single_epoch_history() {
    let ds = tiny_data(16);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..config()
    };
    let out = fit(&ds, &tiny_model(), &cfg, |_, _, _| Ok(0.5)).unwrap();
    assert_eq!(out.history.epochs.len(), 1);
    assert_eq!(out.history.evaluations.len(), 1);
    assert_eq!(out.history.epochs[0].steps, 2);
}

#[test]
fn best_evaluation_is_retained() {
    let ds = tiny_data(8);
    let aucs = [0.6, 0.8, 0.7];
    let mut calls = 0;
    let out = fit(&ds, &tiny_model(), &config(), |_, _, _| {
        calls += 1;
        Ok(aucs[calls - 1])
    })
    .unwrap();
    assert_eq!(out.history.best_evaluation, Some(1));
    assert_eq!(out.checkpoint.best_metric, Some(0.8));
    assert_eq!(out.checkpoint.epoch, 2);
}

#[test]
fn patience_stops_training() {
    let ds = tiny_data(8);
    let cfg = TrainConfig {
        patience: 1,
        max_epochs: 10,
        ..config()
    };
    let aucs = [0.6, 0.5];
    let mut calls = 0;
    let out = fit(&ds, &tiny_model(), &cfg, |_, _, _| {
        calls += 1;
        Ok(aucs[calls - 1])
    })
    .unwrap();
    assert_eq!(out.history.evaluations.len(), 2);
    assert!(out.history.stopped_early);
    assert_eq!(out.checkpoint.epoch, 1);
}

#[test]
fn fit_is_deterministic() {
    let ds = tiny_data(16);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..config()
    };
    let a = fit(&ds, &tiny_model(), &cfg, |_, _, _| Ok(0.5)).unwrap();
    let b = fit(&ds, &tiny_model(), &cfg, |_, _, _| Ok(0.5)).unwrap();
    assert_eq!(a.history, b.history);
}

#[test]
fn divergence_carries_history() {
    let ds = tiny_data(8);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        lr_decay: false,
        max_epochs: 50,
        ..config()
    };
    match fit(&ds, &tiny_model(), &cfg, |_, _, _| Ok(0.5)) {
        Err(Error::Divergence {
            epoch: Some(e),
            history: Some(h),
            ..
        }) => assert_eq!(h.epochs.len(), e),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn empty_training_split() {
    let mut ds = tiny_data(8);
    ds.train.clear();
    assert!(fit(&ds, &tiny_model(), &config(), |_, _, _| Ok(0.5)).is_err());
}

mod checkpoints {
    use super::*;
    use crate::scoring::{score_dataset, ScoreConfig};

    fn trained() -> Trainer<f64> {
        let ds = tiny_data(8);
        let mut t = Trainer::<f64>::new(&tiny_model(), &config()).unwrap();
        t.train_epoch(&ds).unwrap();
        t
    }

    #[test]
    fn roundtrip_preserves_every_tensor() {
        let t = trained();
        let c = t.checkpoint(Some(0.75));
        let back = decode_checkpoint::<f64>(&encode_checkpoint(&c).unwrap()).unwrap();
        assert_eq!(snapshot(&back.generator), snapshot(&c.generator));
        assert_eq!(snapshot(&back.discriminator), snapshot(&c.discriminator));
        assert_eq!(back.opt_g, c.opt_g);
        assert_eq!(back.opt_d, c.opt_d);
        assert_eq!((back.epoch, back.best_metric), (1, Some(0.75)));
        assert_eq!(back.train_config, c.train_config);
        assert_eq!(back.rng, c.rng);
    }

    #[test]
    fn reload_scores_bitwise() {
        let ds = tiny_data(8);
        let t = trained();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&t.checkpoint(None), &path).unwrap();
        let c = load_checkpoint::<f64>(&path).unwrap();
        let cfg = ScoreConfig::default();
        let before = score_dataset(&t.generator, &t.discriminator, &ds.test, &cfg, 4).unwrap();
        let after = score_dataset(&c.generator, &c.discriminator, &ds.test, &cfg, 4).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let ds = tiny_data(8);
        let mut a = trained();
        let mut b =
            Trainer::from_checkpoint(decode_checkpoint(&encode_checkpoint(&a.checkpoint(None)).unwrap()).unwrap());
        assert_eq!(a.train_epoch(&ds).unwrap(), b.train_epoch(&ds).unwrap());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = encode_checkpoint(&trained().checkpoint(None)).unwrap();
        for len in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint::<f64>(&bytes[..len]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(
            decode_checkpoint::<f64>(&flipped),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut versioned = bytes.clone();
        versioned[8] = 99;
        assert!(matches!(
            decode_checkpoint::<f64>(&versioned),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn config_mismatch_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&trained().checkpoint(None), &path).unwrap();
        assert!(load_checkpoint_for::<f64>(&path, &tiny_model()).is_ok());
        let other = GeneratorConfig { nz: 9, ..tiny_model() };
        assert!(matches!(
            load_checkpoint_for::<f64>(&path, &other),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(load_checkpoint::<f64>(&tmp.path().join("missing.ckpt")).is_err());
    }
}
