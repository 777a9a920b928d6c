//! Acceptance criteria. Run with `cargo test -p skip-ganomaly --test acceptance`.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//! Criterion 9 (CIFAR-10 reproduction) only runs when
//! `SKIPGANOMALY_REPRODUCE=1` and the archive is present.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skip_ganomaly::data::{
    load_cifar10_dir, make_one_class_out_split, parse_cifar10_labels, split_indices, stack, SplitSpec,
    CIFAR10_RECORD_LEN,
};
use skip_ganomaly::evaluation::auc;
use skip_ganomaly::nn::{Module, Param};
use skip_ganomaly::objectives::{
    adversarial_loss_d, adversarial_loss_g, contextual_loss, latent_loss, LatentNorm, LossWeights,
};
use skip_ganomaly::scoring::{scale_scores, score_dataset, ScoreConfig};
use skip_ganomaly::trainer::{discriminator_gradients, fit, generator_gradients, TrainConfig, Trainer};
use skip_ganomaly::{build_discriminator, build_generator, Discriminator, Generator, GeneratorConfig, SyntheticSpec};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// O(n²) Mann–Whitney statistic with ½ per tie.
fn pairwise_auc(scores: &[f64], labels: &[u32]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &a) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &b) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u32>) {
    let n = rng.random_range(2..=200);
    // coarse grid for some instances so that ties occur
    let levels = if rng.random_bool(0.5) {
        0
    } else {
        rng.random_range(2..12)
    };
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if levels == 0 {
                u
            } else {
                (u * levels as f64).floor() / levels as f64
            }
        })
        .collect();
    let mut labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let a = rng.random_range(0..n);
    let b = (a + 1 + rng.random_range(0..n - 1)) % n;
    labels[a] = 0;
    labels[b] = 1;
    (scores, labels)
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let (scores, labels) = random_instance(&mut rng);
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let diff = (got - pairwise_auc(&scores, &labels)).abs();
        worst = worst.max(diff);
        ensure(diff < 1e-9, format!("instance {k}: |Δ| = {diff:e}"))?;
    }
    Ok(format!("1000 instances, max |Δ| = {worst:.1e}"))
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

fn scaling_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..100 {
        let n = rng.random_range(2..=200);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let mut labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = scale_scores(&a).map_err(|e| e.to_string())?;
        let (imin, imax) = (argsort(&a)[0], argsort(&a)[n - 1]);
        ensure(
            s[imin] == 0.0 && s[imax] == 1.0,
            format!("vector {k}: endpoints {} {}", s[imin], s[imax]),
        )?;
        ensure(argsort(&a) == argsort(&s), format!("vector {k}: rank order changed"))?;
        let (x, y) = (auc(&a, &labels).unwrap(), auc(&s, &labels).unwrap());
        ensure(x == y, format!("vector {k}: AUC {x} vs {y}"))?;
    }
    Ok("100 vectors: endpoints exact, ranks and AUC preserved".into())
}

fn gradcheck_config() -> GeneratorConfig {
    GeneratorConfig {
        nz: 2,
        base_filters: 1,
        ..GeneratorConfig::new(8, 1)
    }
}

fn param_count<M: Module<f64>>(m: &mut M) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, p| n += p.len());
    n
}

fn with_param<M: Module<f64>, R>(m: &mut M, index: usize, f: impl FnOnce(&mut Param<f64>) -> R) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut k = 0;
    m.visit_params("", &mut |_, p| {
        if k == index {
            out = Some((f.take().unwrap())(p));
        }
        k += 1;
    });
    out.expect("parameter index in range")
}

fn tensor_sizes<M: Module<f64>>(m: &mut M) -> Vec<usize> {
    let mut v = Vec::new();
    m.visit_params("", &mut |_, p| v.push(p.len()));
    v
}

/// Generator objectives recomputed from scratch in training mode.
fn generator_objectives(
    g: &mut Generator<f64>,
    d: &mut Discriminator<f64>,
    x: &Array4<f64>,
    w: &LossWeights,
) -> [f64; 4] {
    let x_hat = g.forward_train(x).unwrap().reconstruction;
    let f_x = d.forward_train(x).unwrap().features;
    let fake = d.forward_train(&x_hat).unwrap();
    let adv = adversarial_loss_g(fake.probabilities.view());
    let con = contextual_loss(x.view(), x_hat.view()).unwrap();
    let lat = latent_loss(f_x.view(), fake.features.view(), LatentNorm::Mse).unwrap();
    [
        adv,
        con,
        lat,
        w.lambda_adv * adv + w.lambda_con * con + w.lambda_lat * lat,
    ]
}

fn discriminator_objective(d: &mut Discriminator<f64>, x: &Array4<f64>, x_hat: &Array4<f64>) -> f64 {
    let real = d.forward_train(x).unwrap().probabilities;
    let fake = d.forward_train(x_hat).unwrap().probabilities;
    adversarial_loss_d(real.view(), fake.view())
}

struct Probe {
    tensor: usize,
    element: usize,
}

fn probes(sizes: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<Probe> {
    let total: usize = sizes.iter().sum();
    (0..count)
        .map(|_| {
            let mut flat = rng.random_range(0..total);
            let mut tensor = 0;
            while flat >= sizes[tensor] {
                flat -= sizes[tensor];
                tensor += 1;
            }
            Probe { tensor, element: flat }
        })
        .collect()
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

const FD_STEP: f64 = 1e-6;

fn central_difference<M: Module<f64>>(m: &mut M, p: &Probe, mut loss: impl FnMut(&mut M) -> f64) -> f64 {
    let get = |m: &mut M| with_param(m, p.tensor, |q| q.value.as_slice().unwrap()[p.element]);
    let set = |m: &mut M, v: f64| with_param(m, p.tensor, |q| q.value.as_slice_mut().unwrap()[p.element] = v);
    let orig = get(m);
    set(m, orig + FD_STEP);
    let up = loss(m);
    set(m, orig - FD_STEP);
    let down = loss(m);
    set(m, orig);
    (up - down) / (2.0 * FD_STEP)
}

fn analytic(m: &mut impl Module<f64>, p: &Probe) -> f64 {
    with_param(m, p.tensor, |q| q.grad.as_slice().unwrap()[p.element])
}

fn gradient_checks() -> Outcome {
    let cfg = gradcheck_config();
    let mut g = build_generator::<f64>(&cfg, 7).map_err(|e| e.to_string())?;
    let mut d = build_discriminator::<f64>(&cfg, 8).map_err(|e| e.to_string())?;
    let params = param_count(&mut g) + param_count(&mut d);
    ensure(params <= 500, format!("network has {params} parameters"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array4::from_shape_fn((3, 1, 8, 8), |_| rng.random_range(-1.0..1.0));
    let x_hat = Array4::from_shape_fn((3, 1, 8, 8), |_| rng.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    // discriminator objective, reconstructions held fixed
    discriminator_gradients(&mut d, &x, &x_hat).map_err(|e| e.to_string())?;
    for p in probes(&tensor_sizes(&mut d), 50, &mut rng) {
        let a = analytic(&mut d, &p);
        let n = central_difference(&mut d, &p, |d| discriminator_objective(d, &x, &x_hat));
        let err = relative_error(a, n);
        worst = worst.max(err);
        ensure(
            err < 1e-4,
            format!("adv_d tensor {} element {}: {a} vs {n}", p.tensor, p.element),
        )?;
        checked += 1;
    }

    // each generator term alone, then the weighted total
    let terms = [
        ("adv_g", LossWeights::new(1.0, 0.0, 0.0).unwrap(), 0),
        ("con", LossWeights::new(0.0, 1.0, 0.0).unwrap(), 1),
        ("lat", LossWeights::new(0.0, 0.0, 1.0).unwrap(), 2),
        ("total", LossWeights::default(), 3),
    ];
    for (name, w, slot) in terms {
        generator_gradients(&mut g, &mut d, &x, &w, LatentNorm::Mse).map_err(|e| e.to_string())?;
        for p in probes(&tensor_sizes(&mut g), 50, &mut rng) {
            let a = analytic(&mut g, &p);
            let n = central_difference(&mut g, &p, |g| generator_objectives(g, &mut d, &x, &w)[slot]);
            let err = relative_error(a, n);
            worst = worst.max(err);
            ensure(
                err < 1e-4,
                format!("{name} tensor {} element {}: {a} vs {n}", p.tensor, p.element),
            )?;
            checked += 1;
        }
    }
    Ok(format!(
        "{params} parameters, {checked} probes, max relative error {worst:.1e}"
    ))
}

fn architecture() -> Outcome {
    ensure(GeneratorConfig::new(32, 1).nz == 100, "default nz is not 100")?;
    for size in [32, 64] {
        for channels in [1, 3] {
            let cfg = GeneratorConfig::new(size, channels);
            let g = build_generator::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
            g.validate_structure().map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let x = Array4::from_shape_fn((2, channels, size, size), |_| rng.random_range(-1.0f32..1.0));
            let out = g.forward_eval(&x).map_err(|e| e.to_string())?;
            ensure(
                out.reconstruction.dim() == x.dim(),
                format!("{size}x{size}x{channels}: output {:?}", out.reconstruction.dim()),
            )?;
            ensure(out.latent.dim() == (2, 100), format!("latent {:?}", out.latent.dim()))?;
            ensure(
                out.reconstruction.iter().all(|v| v.abs() <= 1.0),
                "output outside [-1, 1]",
            )?;
            let d = build_discriminator::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
            ensure(d.discriminate(&x).is_ok(), "discriminator rejects a valid batch")?;
        }
    }
    Ok("sizes {32, 64} x channels {1, 3}: shapes, skip accounting and nz = 100 hold".into())
}

fn desk_model() -> GeneratorConfig {
    GeneratorConfig {
        base_filters: 16,
        ..GeneratorConfig::new(32, 1)
    }
}

fn overfit_run(skips: bool) -> Result<(f64, f64), String> {
    let data = SyntheticSpec {
        train_normal: 8,
        test_normal: 1,
        test_abnormal: 1,
        seed: 21,
        ..Default::default()
    }
    .generate::<f32>()
    .map_err(|e| e.to_string())?;
    let x = stack(&data.train.iter().collect::<Vec<_>>());
    let cfg = TrainConfig {
        weights: LossWeights::new(1.0, 40.0, 1.0).unwrap(),
        batch_size: 8,
        seed: 5,
        ..Default::default()
    };
    let mut t = Trainer::<f32>::new(&desk_model(), &cfg).map_err(|e| e.to_string())?;
    t.generator.set_skips_enabled(skips);
    let first = t.train_step(&x).map_err(|e| e.to_string())?.con;
    let mut last = first;
    for _ in 1..200 {
        last = t.train_step(&x).map_err(|e| e.to_string())?.con;
    }
    Ok((first, last))
}

fn overfit() -> Outcome {
    let (first, last) = overfit_run(true)?;
    ensure(last <= 0.5 * first, format!("contextual loss {first:.4} -> {last:.4}"))?;
    Ok(format!(
        "contextual loss {first:.4} -> {last:.4} ({:.0}% drop)",
        100.0 * (1.0 - last / first)
    ))
}

fn skip_ablation() -> Outcome {
    let (_, with) = overfit_run(true)?;
    let (_, without) = overfit_run(false)?;
    ensure(
        without > with,
        format!("final contextual loss {with:.4} with skips, {without:.4} without"),
    )?;
    Ok(format!(
        "final contextual loss {with:.4} with skips, {without:.4} without"
    ))
}

fn desk_scale() -> Outcome {
    let data = SyntheticSpec {
        train_normal: 256,
        test_normal: 64,
        test_abnormal: 64,
        seed: 9,
        ..Default::default()
    }
    .generate::<f32>()
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 16,
        seed: 1,
        ..Default::default()
    };
    let score_cfg = ScoreConfig::default();
    let test = data.test.clone();
    let labels: Vec<u32> = test.iter().map(|s| s.label).collect();
    let outcome = fit(&data, &desk_model(), &cfg, |g, d, _| {
        let scores = score_dataset(g, d, &test, &score_cfg, 64)?;
        auc(&scores.iter().map(|s| s.a_hat).collect::<Vec<_>>(), &labels)
    })
    .map_err(|e| e.to_string())?;
    let c = outcome.checkpoint;
    let scores = score_dataset(&c.generator, &c.discriminator, &test, &score_cfg, 64).map_err(|e| e.to_string())?;
    let a_hat: Vec<f64> = scores.iter().map(|s| s.a_hat).collect();
    let value = auc(&a_hat, &labels).map_err(|e| e.to_string())?;
    let per_epoch: Vec<String> = outcome
        .history
        .evaluations
        .iter()
        .map(|e| format!("{:.3}", e.auc))
        .collect();
    let summary = format!("AUC {value:.4} (per epoch [{}])", per_epoch.join(", "));
    ensure(value >= 0.80, summary.clone())?;
    Ok(summary)
}

fn cifar_dir() -> Option<PathBuf> {
    let root = std::env::var_os("SKIPGANOMALY_DATA")?;
    let dir = PathBuf::from(root).join("cifar-10-batches-bin");
    dir.join("test_batch.bin").is_file().then_some(dir)
}

const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

/// A stand-in archive with CIFAR-10's exact per-class counts and blank
/// pixels, written in the binary record format.
fn write_stand_in_archive(dir: &std::path::Path) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut train: Vec<u8> = (0..50_000).map(|i| (i % 10) as u8).collect();
    let mut test: Vec<u8> = (0..10_000).map(|i| (i % 10) as u8).collect();
    use rand::seq::SliceRandom;
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let record = |label: u8| {
        let mut r = vec![0u8; CIFAR10_RECORD_LEN];
        r[0] = label;
        r
    };
    for (k, chunk) in train.chunks(10_000).enumerate() {
        std::fs::write(
            dir.join(CIFAR_FILES[k]),
            chunk.iter().flat_map(|&l| record(l)).collect::<Vec<_>>(),
        )?;
    }
    std::fs::write(
        dir.join(CIFAR_FILES[5]),
        test.iter().flat_map(|&l| record(l)).collect::<Vec<_>>(),
    )
}

fn read_labels(dir: &std::path::Path) -> Result<(Vec<u32>, Vec<u32>), String> {
    let mut train = Vec::new();
    for name in &CIFAR_FILES[..5] {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| e.to_string())?;
        train.extend(parse_cifar10_labels(&bytes).map_err(|e| e.to_string())?);
    }
    let bytes = std::fs::read(dir.join(CIFAR_FILES[5])).map_err(|e| e.to_string())?;
    Ok((train, parse_cifar10_labels(&bytes).map_err(|e| e.to_string())?))
}

fn cifar_split() -> Outcome {
    let tmp;
    let (dir, source) = match cifar_dir() {
        Some(d) => (d, "CIFAR-10 archive"),
        None => {
            tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
            write_stand_in_archive(tmp.path()).map_err(|e| e.to_string())?;
            (tmp.path().to_path_buf(), "stand-in archive with CIFAR-10 class counts")
        }
    };
    let (train, test) = read_labels(&dir)?;
    for class in 0..10 {
        let plan = split_indices(&train, &test, SplitSpec { anomalous_class: class }).map_err(|e| e.to_string())?;
        let counts = (plan.train.len(), plan.test_counts());
        ensure(counts == (45_000, (9_000, 6_000)), format!("class {class}: {counts:?}"))?;
    }
    Ok(format!("{source}: 45000 train, 9000:6000 test for all 10 classes"))
}

fn cifar_reproduction() -> Outcome {
    let dir = cifar_dir().ok_or("SKIPGANOMALY_DATA/cifar-10-batches-bin not found")?;
    let (train, test) = load_cifar10_dir::<f32>(&dir).map_err(|e| e.to_string())?;
    let data = make_one_class_out_split(&train, &test, SplitSpec { anomalous_class: 1 }).map_err(|e| e.to_string())?;
    drop((train, test));
    let labels: Vec<u32> = data.test.iter().map(|s| s.label).collect();
    let mut aucs = Vec::new();
    for seed in [0, 1, 2] {
        let cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        let out = fit(&data, &GeneratorConfig::new(32, 3), &cfg, |g, d, _| {
            let s = score_dataset(g, d, &data.test, &ScoreConfig::default(), 256)?;
            auc(&s.iter().map(|s| s.a_hat).collect::<Vec<_>>(), &labels)
        })
        .map_err(|e| e.to_string())?;
        aucs.push(out.checkpoint.best_metric.unwrap_or(0.0));
    }
    let summary = format!("car AUCs {aucs:.3?} (published 0.953)");
    ensure(aucs.iter().all(|&a| a >= 0.80), summary.clone())?;
    Ok(summary)
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "AUC oracle equivalence",
            budget: Duration::from_secs(10),
            run: auc_oracle,
        },
        Criterion {
            id: 2,
            name: "min-max scaling properties",
            budget: Duration::from_secs(5),
            run: scaling_properties,
        },
        Criterion {
            id: 3,
            name: "loss gradient checks",
            budget: Duration::from_secs(60),
            run: gradient_checks,
        },
        Criterion {
            id: 4,
            name: "architecture invariants",
            budget: Duration::from_secs(30),
            run: architecture,
        },
        Criterion {
            id: 5,
            name: "overfit smoke test",
            budget: Duration::from_secs(300),
            run: overfit,
        },
        Criterion {
            id: 6,
            name: "skip-connection ablation",
            budget: Duration::from_secs(600),
            run: skip_ablation,
        },
        Criterion {
            id: 7,
            name: "desk-scale end-to-end AUC",
            budget: Duration::from_secs(900),
            run: desk_scale,
        },
        Criterion {
            id: 8,
            name: "CIFAR-10 one-class-out split",
            budget: Duration::from_secs(30),
            run: cifar_split,
        },
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let over = elapsed > c.budget;
        let (status, detail) = match (&result, over) {
            (Ok(msg), false) => ("PASS", msg.clone()),
            (Ok(msg), true) => ("FAIL", format!("{msg}; exceeded {:?} budget", c.budget)),
            (Err(msg), _) => ("FAIL", msg.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "[{status}] {}. {} ({:.1}s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if std::env::var("SKIPGANOMALY_REPRODUCE").as_deref() == Ok("1") {
        let start = Instant::now();
        let (status, detail) = match cifar_reproduction() {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!(
            "[{status}] 9. CIFAR-10 car reproduction, optional ({:.0}s): {detail}",
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
