//! End-to-end runs that cross module boundaries.

use qfedsim::config::{DatasetSpec, ExperimentKind, RunConfig};
use qfedsim::datasets::{write_idx_images, write_idx_labels, IdxImages};
use qfedsim::experiments::{run, train_runs, RunOptions};
use qfedsim::quantizer::Precision;

fn tiny_idx(dir: &std::path::Path, name: &str, count: usize) {
    let mut pixels = Vec::with_capacity(count * 16);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = (i % 4) as u8;
        for p in 0..16u8 {
            pixels.push(if p / 4 == class { 230 } else { 20 });
        }
        labels.push(class);
    }
    let images = IdxImages {
        count,
        rows: 4,
        cols: 4,
        pixels,
    };
    write_idx_images(&dir.join(format!("{name}-images")), &images).unwrap();
    write_idx_labels(&dir.join(format!("{name}-labels")), &labels).unwrap();
}

#[test]
fn idx_files_drive_training() {
    let dir = tempfile::tempdir().unwrap();
    tiny_idx(dir.path(), "train", 400);
    tiny_idx(dir.path(), "eval", 80);
    let toml = r#"
[train]
rounds = 8
drop_probs = [0.0]
clients_n = 10
selected_k = 4
hidden = [8]

[train.dataset]
kind = "idx"
train_images = "train-images"
train_labels = "train-labels"
eval_images = "eval-images"
eval_labels = "eval-labels"
"#;
    let path = dir.path().join("run.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let runs = train_runs(&cfg).unwrap();
    let last = runs[0].1.final_record().unwrap();
    assert!(last.val_accuracy > 0.9, "{}", last.val_accuracy);
    // Classes default to at least ten for IDX data.
    assert_eq!(runs[0].1.arch.num_classes(), 10);
}

#[test]
fn quantized_training_still_learns() {
    let mut cfg = RunConfig::default();
    cfg.train.drop_probs = vec![0.0];
    cfg.train.rounds = 20;
    cfg.train.precision = Precision::bits(8).unwrap();
    let runs = train_runs(&cfg).unwrap();
    let acc = runs[0].1.final_record().unwrap().val_accuracy;
    assert!(acc > 0.7, "{acc}");
}

#[test]
fn non_iid_shards_run() {
    let mut cfg = RunConfig::default();
    cfg.train.drop_probs = vec![0.1];
    cfg.train.rounds = 5;
    cfg.train.partition = qfedsim::datasets::PartitionMode::ShardNonIid;
    cfg.train.shards_per_client = 2;
    let runs = train_runs(&cfg).unwrap();
    assert_eq!(runs[0].1.records.len(), 5);
}

#[test]
fn subset_too_small_for_clients() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.dataset = DatasetSpec::default();
    let opts = RunOptions {
        seed: None,
        subset: Some(5),
    };
    let err = run(cfg, ExperimentKind::Train, opts, dir.path()).unwrap_err();
    assert_eq!(err.class(), "TooFewSamples");
}
