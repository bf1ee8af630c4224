//! Checks against the real digit corpus. Skipped when the IDX files are
//! missing (run `scripts/fetch_mnist.sh` or set `EAT_MNIST_DIR`).

use std::path::PathBuf;

use eat_core::data::{digit_paths, load_idx, IdxDataset};
use eat_core::train::evaluate;
use eat_core::{EatConfig, EatModel};

fn corpus(train: bool) -> Option<IdxDataset> {
    let dir = std::env::var_os("EAT_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let (images, labels) = digit_paths(&dir, train);
    if !images.exists() {
        eprintln!("skipping: {} not found", images.display());
        return None;
    }
    Some(load_idx(&images, &labels).unwrap())
}

#[test]
fn header_dimensions_and_first_label() {
    let Some(train) = corpus(true) else { return };
    assert_eq!((train.len(), train.height, train.width), (60_000, 28, 28));
    assert_eq!(train.labels[0], 5);
    let Some(test) = corpus(false) else { return };
    assert_eq!(test.len(), 10_000);
}

#[test]
fn untrained_model_is_at_chance_and_confusion_rows_count_classes() {
    let Some(test) = corpus(false) else { return };
    let model = EatModel::<f32>::build(EatConfig::micro()).unwrap();
    let report = evaluate(&model, &test, 4).unwrap();
    assert!((0.05..=0.2).contains(&report.accuracy), "{}", report.accuracy);
    let mut counts = [0u64; 10];
    for &l in &test.labels {
        counts[l as usize] += 1;
    }
    let rows: Vec<u64> = report.confusion.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(rows, counts.to_vec());
}
