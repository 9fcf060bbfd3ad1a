//! Labeled data: IDX (MNIST) loading, synthetic Gaussian blobs, and client
//! partitioning.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{stream_rng, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        ensure(input_dim > 0, || "input dimension must be positive".into())?;
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} samples of dimension {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            input_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copies the given rows into a new dataset, keeping `num_classes`.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features,
            input_dim: self.input_dim,
            labels,
            num_classes: self.num_classes,
        }
    }
}

/// Raw IDX image tensor (`count x rows x cols` unsigned bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let chunk = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(&bytes[header..expected])
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_bytes(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let pixels = payload(&bytes, 16, count * rows * cols, path)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    Ok(payload(&bytes, 8, count, path)?.to_vec())
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for {}x{}x{} tensor",
            images.pixels.len(),
            images.count,
            images.rows,
            images.cols
        )));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair; pixels are scaled into `[0, 1]`.
///
/// The class count is `max(10, max_label + 1)`.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let input_dim = images.rows * images.cols;
    let features = images
        .pixels
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledDataset::new(features, input_dim, labels, num_classes)
}

/// Gaussian clusters around the vertices of a scaled simplex.
///
/// Class `c` is centred at `0.2 + 0.6 e_c` (needs `input_dim >= num_classes`);
/// samples are assigned classes round-robin and features are clamped to
/// `[0, 1]`.
pub fn synth_blobs(
    num_classes: usize,
    samples: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    ensure(num_classes > 0 && samples > 0 && input_dim > 0, || {
        "classes, samples and input dimension must be positive".into()
    })?;
    ensure(spread >= 0.0 && spread.is_finite(), || {
        format!("spread must be non-negative, got {spread}")
    })?;
    ensure(input_dim >= num_classes, || {
        format!("input_dim {input_dim} cannot host {num_classes} simplex vertices")
    })?;
    let mut rng = stream_rng(seed, Stream::Synthetic, 0, 0);
    let mut features = Vec::with_capacity(samples * input_dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % num_classes;
        for j in 0..input_dim {
            let centre = if j == class { 0.8 } else { 0.2 };
            let noise: f64 = rng.sample(StandardNormal);
            features.push((centre + spread * noise).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    LabeledDataset::new(features, input_dim, labels, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    ShardNonIid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    assignments: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl ClientPartition {
    pub fn from_assignments(assignments: Vec<Vec<usize>>) -> Result<Self> {
        let total: usize = assignments.iter().map(Vec::len).sum();
        ensure(total > 0, || "partition holds no samples".into())?;
        let weights = assignments
            .iter()
            .map(|a| a.len() as f64 / total as f64)
            .collect();
        Ok(Self {
            assignments,
            weights,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn indices(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Client weights `alpha_k = |D_k| / D`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Keeps at most `cap` samples per client (the first ones in each list)
    /// and recomputes the weights.
    pub fn capped(&self, cap: usize) -> Result<Self> {
        ensure(cap > 0, || "per-client cap must be positive".into())?;
        Self::from_assignments(
            self.assignments
                .iter()
                .map(|a| a[..a.len().min(cap)].to_vec())
                .collect(),
        )
    }

    /// All assigned indices, client by client.
    pub fn all_indices(&self) -> Vec<usize> {
        self.assignments.iter().flatten().copied().collect()
    }
}

fn split_even<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Splits `ds` across `num_clients`.
///
/// `Iid` shuffles and deals equal slices. `ShardNonIid` sorts by label, cuts
/// `num_clients * shards_per_client` contiguous shards and deals
/// `shards_per_client` random shards to every client.
pub fn partition(
    ds: &LabeledDataset,
    num_clients: usize,
    mode: PartitionMode,
    shards_per_client: usize,
    seed: u64,
) -> Result<ClientPartition> {
    ensure(num_clients >= 1, || "need at least one client".into())?;
    let mut rng = stream_rng(seed, Stream::Partition, 0, 0);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    match mode {
        PartitionMode::Iid => {
            if ds.len() < num_clients {
                return Err(Error::TooFewSamples {
                    samples: ds.len(),
                    clients: num_clients,
                });
            }
            ClientPartition::from_assignments(split_even(&order, num_clients))
        }
        PartitionMode::ShardNonIid => {
            ensure(shards_per_client >= 1, || {
                "shards_per_client must be >= 1".into()
            })?;
            let shards = num_clients * shards_per_client;
            if ds.len() < shards {
                return Err(Error::TooFewSamples {
                    samples: ds.len(),
                    clients: num_clients,
                });
            }
            order.sort_by_key(|&i| ds.label(i));
            let pieces = split_even(&order, shards);
            let mut shard_ids: Vec<usize> = (0..shards).collect();
            shard_ids.shuffle(&mut rng);
            let assignments = shard_ids
                .chunks(shards_per_client)
                .map(|ids| {
                    ids.iter()
                        .flat_map(|&s| pieces[s].iter().copied())
                        .collect()
                })
                .collect();
            ClientPartition::from_assignments(assignments)
        }
    }
}
