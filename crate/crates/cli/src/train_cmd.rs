use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use eat_core::checkpoint;
use eat_core::data::{digit_paths, load_idx, IdxDataset};
use eat_core::train::{eval_threads_from_env, evaluate, train, TrainOptions};
use eat_core::{EatConfig, EatModel};

use crate::cost::load_config;
use crate::{CliError, CliResult, Format, Global, Table};

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the train-/t10k- IDX files. Defaults to
    /// `$EAT_MNIST_DIR`, then `data/mnist`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Center images on a square canvas of this side (32 enables zorder/hilbert).
    #[arg(long)]
    pub pad_to: Option<usize>,
}

impl DataArgs {
    fn dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os("EAT_MNIST_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    fn load(&self, train_split: bool, limit: Option<usize>) -> CliResult<IdxDataset> {
        let (images, labels) = digit_paths(&self.dir(), train_split);
        let mut ds = load_idx(&images, &labels)?;
        if let Some(n) = limit {
            ds = ds.truncated(n);
        }
        if let Some(side) = self.pad_to {
            ds = ds.padded(side)?;
        }
        Ok(ds)
    }
}

/// Names the flag to change when data and config disagree on geometry.
fn check_geometry(cfg: &EatConfig, data: &IdxDataset, source: &str) -> CliResult {
    if data.height == cfg.image_size && data.width == cfg.image_size {
        return Ok(());
    }
    let hint = if data.height < cfg.image_size {
        format!("; pass --pad-to {}", cfg.image_size)
    } else {
        String::new()
    };
    Err(CliError::Invalid(format!(
        "{} holds {}x{} images but {source} expects {}x{}{hint}",
        data.images_path.display(),
        data.height,
        data.width,
        cfg.image_size,
        cfg.image_size
    )))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON model config; defaults to the micro configuration.
    #[arg(long, conflicts_with = "variant")]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Use only the first N training examples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test examples.
    #[arg(long)]
    test_limit: Option<usize>,
    /// Per-epoch CSV, appended to.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "eat.eatckpt")]
    checkpoint: PathBuf,
}

pub fn run_train(a: TrainArgs, g: &Global) -> CliResult {
    let mut cfg = if a.config.is_none() && a.variant.is_none() {
        EatConfig::micro()
    } else {
        load_config(a.config.as_ref(), a.variant.as_deref())?
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let source = a
        .config
        .as_ref()
        .map_or_else(|| format!("config {}", cfg.variant), |p| p.display().to_string());
    let train_set = a.data.load(true, a.train_limit)?;
    let test_set = a.data.load(false, a.test_limit)?;
    check_geometry(&cfg, &train_set, &source)?;
    let mut model = EatModel::<f32>::build(cfg.clone())?;
    g.progress(format!(
        "{}: {} params, {} train / {} test examples",
        cfg.variant,
        model.census(),
        train_set.len(),
        test_set.len()
    ));
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: cfg.seed,
        csv: a.csv.clone(),
        checkpoint: Some(a.checkpoint.clone()),
        eval_threads: eval_threads_from_env()?,
    };
    let report = train(&mut model, &train_set, &test_set, &opts, |e| {
        g.progress(format!(
            "epoch {}: loss {:.4}  train acc {:.4}  test acc {:.4}  ({:.1}s)",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy, e.seconds
        ))
    })?;
    let mut table = Table::new(["epoch", "train_loss", "train_accuracy", "test_accuracy", "seconds"]);
    for e in &report.epochs {
        table.row([
            e.epoch.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.train_accuracy),
            format!("{:.6}", e.test_accuracy),
            format!("{:.3}", e.seconds),
        ]);
    }
    print!("{}", table.render(g.format));
    g.progress(format!("checkpoint: {}", a.checkpoint.display()));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    #[arg(long)]
    limit: Option<usize>,
    /// Also write the confusion matrix CSV here.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

pub fn run_eval(a: EvalArgs, g: &Global) -> CliResult {
    let model = checkpoint::load::<f32>(&a.checkpoint)?.model;
    let data = a.data.load(a.split == Split::Train, a.limit)?;
    check_geometry(&model.cfg, &data, &a.checkpoint.display().to_string())?;
    let report = evaluate(&model, &data, eval_threads_from_env()?)?;
    let csv = report.confusion_csv();
    if let Some(path) = &a.confusion {
        write_file(path, csv.as_bytes())?;
    }
    match g.format {
        Format::Csv => {
            eprintln!("accuracy {:.6} ({}/{})", report.accuracy, report.correct, report.total);
            print!("{csv}");
        }
        Format::Table => {
            println!("accuracy {:.6} ({}/{})", report.accuracy, report.correct, report.total);
            let mut header = vec!["actual".to_string()];
            header.extend((0..report.confusion.len()).map(|c| format!("pred_{c}")));
            let mut table = Table::new(header);
            for (actual, row) in report.confusion.iter().enumerate() {
                table.row(std::iter::once(actual.to_string()).chain(row.iter().map(ToString::to_string)));
            }
            print!("{}", table.render(Format::Table));
        }
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
