mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skip_ganomaly::evaluation::{evaluate_scores, roc_curve, save_report, summarize_aucs, DEFAULT_HISTOGRAM_BINS};
use skip_ganomaly::scoring::{load_scores, save_scores, score_dataset};
use skip_ganomaly::trainer::{fit, load_checkpoint, save_checkpoint};
use skip_ganomaly::{auc, AnomalyDataset, Error, ScoreConfig, SyntheticSpec};

use config::{DatasetConfig, ExperimentConfig};

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const HISTORY_FILE: &str = "history.json";
const CONFIG_FILE: &str = "config.toml";
const SCORE_BATCH: usize = 64;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or incompatible inputs.
    Config(String),
    /// Failures while loading data, training or writing results.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ConfigMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "skipganomaly",
    version,
    about = "Skip-GANomaly anomaly detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and write checkpoint, history and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's dataset: synthetic, image-folder:DIR or cifar10:CLASS[:DIR].
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Score the test split of a dataset with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Experiment config supplying the dataset and scoring settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        /// Scores file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute AUC, ROC and histograms from one or more scores files.
    Eval {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Directory for report.json, roc.csv and histogram.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Write a synthetic image-folder dataset.
    Synth {
        /// TOML file with synthetic dataset parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn check_shape(dataset: &AnomalyDataset<f32>, model: &skip_ganomaly::GeneratorConfig) -> Result<(), CliError> {
    let (c, h, w) = dataset.image_shape()?;
    if (c, h, w) != (model.in_channels, model.input_size, model.input_size) {
        return Err(CliError::Config(format!(
            "dataset images are {c}x{h}x{w}, model expects {}x{}x{}",
            model.in_channels, model.input_size, model.input_size
        )));
    }
    Ok(())
}

fn run_train(config: &Path, seeds: Vec<u64>, out: Option<PathBuf>, dataset: Option<String>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(spec) = dataset {
        cfg.dataset = DatasetConfig::from_spec(&spec)?;
    }
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    check_shape(&data, &cfg.model)?;
    let (normal, abnormal) = data.test_counts();
    log::info!(
        "{} training images, test {normal} normal / {abnormal} abnormal",
        data.train.len()
    );

    let labels: Vec<u32> = data.test.iter().map(|s| s.label).collect();
    for &seed in &cfg.seeds {
        let dir = cfg.output_dir.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let train = skip_ganomaly::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let outcome = fit(&data, &cfg.model, &train, |g, d, _| {
            let scores = score_dataset(g, d, &data.test, &cfg.score, SCORE_BATCH)?;
            auc(&scores.iter().map(|s| s.a_hat).collect::<Vec<_>>(), &labels)
        })?;
        save_checkpoint(&outcome.checkpoint, &dir.join(CHECKPOINT_FILE))?;
        let history = serde_json::to_string_pretty(&outcome.history).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&dir.join(HISTORY_FILE), history.as_bytes())?;
        let resolved = ExperimentConfig {
            seeds: vec![seed],
            train,
            ..cfg.clone()
        };
        write_file(&dir.join(CONFIG_FILE), resolved.to_toml()?.as_bytes())?;
        match outcome.checkpoint.best_metric {
            Some(a) => println!("seed {seed}: best AUC {a:.4} after {} epochs", outcome.checkpoint.epoch),
            None => println!("seed {seed}: trained {} epochs", outcome.checkpoint.epoch),
        }
    }
    Ok(())
}

fn run_score(checkpoint: &Path, config: Option<PathBuf>, dataset: Option<String>, out: &Path) -> Result<(), CliError> {
    let exp = config.as_deref().map(ExperimentConfig::load).transpose()?;
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let model = ckpt.generator.config().clone();
    if let Some(exp) = &exp {
        if exp.model != model {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with {model:?}, config specifies {:?}",
                checkpoint.display(),
                exp.model
            )));
        }
    }
    let dataset = match (dataset, &exp) {
        (Some(spec), _) => DatasetConfig::from_spec(&spec)?,
        (None, Some(exp)) => exp.dataset.clone(),
        (None, None) => return Err(CliError::Config("score needs --dataset or --config".into())),
    };
    let score_cfg = exp.as_ref().map(|e| e.score).unwrap_or_else(|| ScoreConfig {
        latent_norm: ckpt.train_config.latent_norm,
        ..ScoreConfig::default()
    });
    let data = dataset.load()?;
    check_shape(&data, &model)?;
    let scores = score_dataset(
        &ckpt.generator,
        &ckpt.discriminator,
        &data.test,
        &score_cfg,
        SCORE_BATCH,
    )?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_scores(&scores, out)?;
    println!("scored {} samples -> {}", scores.len(), out.display());
    Ok(())
}

fn run_eval(files: &[PathBuf], out: Option<PathBuf>, bins: usize) -> Result<(), CliError> {
    let mut aucs = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let samples = load_scores(path).map_err(|e| io_error(path, e))?;
        let report = evaluate_scores(&samples, bins).map_err(|e| io_error(path, e))?;
        println!(
            "{}: AUC {:.4} ({} normal, {} abnormal)",
            path.display(),
            report.auc,
            report.n_normal,
            report.n_abnormal
        );
        if let Some(out) = &out {
            let dir = if files.len() == 1 {
                out.clone()
            } else {
                out.join(format!("run-{i}"))
            };
            let scores: Vec<f64> = samples.iter().map(|s| s.a_hat).collect();
            let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
            save_report(&report, &roc_curve(&scores, &labels)?, &dir)?;
        }
        aucs.push(report.auc);
    }
    if files.len() > 1 {
        let summary = summarize_aucs(&aucs)?;
        println!(
            "AUC mean {:.4}, min {:.4}, max {:.4} over {} runs",
            summary.mean,
            summary.min,
            summary.max,
            aucs.len()
        );
        if let Some(out) = &out {
            let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
            create_dir(out)?;
            write_file(&out.join("summary.json"), json.as_bytes())?;
        }
    }
    Ok(())
}

fn run_synth(config: Option<PathBuf>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec: SyntheticSpec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    spec.write_folder(out)?;
    println!(
        "wrote {} train, {} + {} test images to {}",
        spec.train_normal,
        spec.test_normal,
        spec.test_abnormal,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            seeds,
            out,
            dataset,
        } => run_train(&config, seeds, out, dataset),
        Command::Score {
            checkpoint,
            config,
            dataset,
            out,
        } => run_score(&checkpoint, config, dataset, &out),
        Command::Eval { scores, out, bins } => run_eval(&scores, out, bins),
        Command::Synth { config, out, seed } => run_synth(config, &out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
