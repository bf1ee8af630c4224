//! Single-threaded Adam training and multi-threaded evaluation on IDX
//! digit data.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::IdxDataset;
use crate::diff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, EatModel};

/// Examples per evaluation batch. Fixed so results never depend on the
/// thread count.
pub const EVAL_BATCH: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Per-epoch CSV, appended to.
    pub csv: Option<PathBuf>,
    /// Written after every epoch and once before the first.
    pub checkpoint: Option<PathBuf>,
    pub eval_threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 3,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            csv: None,
            checkpoint: None,
            eval_threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Loss of the very first batch.
    pub first_batch_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_accuracy)
    }
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_accuracy,test_accuracy,seconds";

fn append_csv(path: &Path, stats: &EpochStats) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str(EPOCH_CSV_HEADER);
        line.push('\n');
    }
    writeln!(
        line,
        "{},{:.6},{:.6},{:.6},{:.3}",
        stats.epoch, stats.train_loss, stats.train_accuracy, stats.test_accuracy, stats.seconds
    )
    .expect("string write");
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Checks that `data` fits the model's input geometry and class count.
pub fn check_compatible(model: &EatModel<f32>, data: &IdxDataset) -> Result<()> {
    let cfg = &model.cfg;
    if cfg.channels != 1 || data.height != cfg.image_size || data.width != cfg.image_size {
        return Err(Error::ShapeMismatch {
            op: "dataset vs config",
            lhs: vec![data.height, data.width, 1],
            rhs: vec![cfg.image_size, cfg.image_size, cfg.channels],
        });
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l as usize >= cfg.num_classes) {
        return Err(Error::InvalidConfig(format!(
            "label {bad} in {} exceeds num_classes {}",
            data.labels_path.display(),
            cfg.num_classes
        )));
    }
    Ok(())
}

/// Trains in place. `on_epoch` sees each epoch's statistics as they land.
pub fn train(
    model: &mut EatModel<f32>,
    train_set: &IdxDataset,
    test_set: &IdxDataset,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    check_compatible(model, train_set)?;
    check_compatible(model, test_set)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: opts.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    if let Some(path) = &opts.checkpoint {
        checkpoint::save(path, model, Some(&adam))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut first_batch_loss = None;
    for epoch in 0..opts.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for batch in order.chunks(opts.batch_size) {
            let pixels = train_set.pixels(batch);
            let labels = train_set.labels_of(batch);
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &pixels, None)?;
            let loss = tape.cross_entropy_mean(logits, &labels)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!("training diverged: loss {value} in epoch {epoch}")));
            }
            first_batch_loss.get_or_insert(value);
            loss_sum += value * batch.len() as f64;
            correct += argmax_rows(tape.value(logits))
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            seen += batch.len();
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store)?;
        }
        let test = evaluate(model, test_set, opts.eval_threads)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            test_accuracy: test.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(path) = &opts.csv {
            append_csv(path, &stats)?;
        }
        if let Some(path) = &opts.checkpoint {
            checkpoint::save(path, model, Some(&adam))?;
        }
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(TrainReport {
        epochs,
        first_batch_loss,
        checkpoint: opts.checkpoint.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    /// Header `actual,pred_0,...`, one row per actual class.
    pub fn confusion_csv(&self) -> String {
        let classes = self.confusion.len();
        let mut out = String::from("actual");
        for c in 0..classes {
            write!(out, ",pred_{c}").expect("string write");
        }
        out.push('\n');
        for (actual, row) in self.confusion.iter().enumerate() {
            write!(out, "{actual}").expect("string write");
            for v in row {
                write!(out, ",{v}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluation parallelism: `EAT_THREADS` if set to a positive integer,
/// otherwise the available cores.
pub fn eval_threads_from_env() -> Result<usize> {
    match std::env::var("EAT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::InvalidConfig(format!("EAT_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Accuracy and confusion matrix over all of `data`. Predictions break
/// ties toward the lowest class index.
pub fn evaluate(model: &EatModel<f32>, data: &IdxDataset, threads: usize) -> Result<EvalReport> {
    check_compatible(model, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let batches: Vec<&[usize]> = indices.chunks(EVAL_BATCH).collect();
    let threads = threads.clamp(1, batches.len().max(1));
    let mut per_batch: Vec<Option<Result<Vec<usize>>>> = (0..batches.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let slots: Vec<&mut [Option<Result<Vec<usize>>>]> =
            per_batch.chunks_mut(batches.len().div_ceil(threads).max(1)).collect();
        let mut first = 0;
        for slot in slots {
            let mine = &batches[first..first + slot.len()];
            first += slot.len();
            scope.spawn(move || {
                for (out, batch) in slot.iter_mut().zip(mine) {
                    *out = Some(model.predict(&data.pixels(batch)));
                }
            });
        }
    });
    let mut predictions = Vec::with_capacity(data.len());
    for r in per_batch {
        predictions.extend(r.expect("every batch evaluated")?);
    }
    let classes = model.cfg.num_classes;
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(&data.labels) {
        confusion[l as usize][p] += 1;
        correct += usize::from(p == l as usize);
    }
    Ok(EvalReport {
        accuracy: if data.is_empty() { 0.0 } else { correct as f64 / data.len() as f64 },
        correct,
        total: data.len(),
        confusion,
        predictions,
    })
}
