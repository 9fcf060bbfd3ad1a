//! Dense ReLU classifier with softmax cross-entropy, hand-written backprop,
//! and quantization-aware local SGD.
//!
//! Parameters live in one flat vector. Layer `l` maps `dims[l]` inputs to
//! `dims[l + 1]` outputs and owns a row-major `out x in` weight block
//! followed by `out` biases.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::datasets::LabeledDataset;
use crate::error::{ensure, Error, Result};
use crate::quantizer::{Precision, QuantConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        ensure(dims.len() >= 2, || {
            "need at least an input and an output layer".into()
        })?;
        ensure(dims.iter().all(|&d| d > 0), || {
            "layer widths must be positive".into()
        })?;
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiply-accumulates of one forward pass on one sample.
    pub fn macs_per_sample(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    biases: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }
}

/// Uniform initialization in `[-scale, scale]`.
pub fn init_params<R: Rng + ?Sized>(arch: &Architecture, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..arch.num_params())
        .map(|_| rng.gen_range(-scale..=scale))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Minibatch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        ensure(!labels.is_empty(), || {
            "minibatch must hold at least one sample".into()
        })?;
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} samples of dimension {input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            input_dim,
        })
    }

    pub fn from_indices(ds: &LabeledDataset, indices: &[usize]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len() * ds.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(ds.row(i));
            labels.push(ds.label(i));
        }
        Self::new(inputs, labels, ds.input_dim())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    // inputs[l] feeds layer l; inputs[0] is the batch itself.
    inputs: Vec<Vec<f64>>,
    // Pre-activations of hidden layers, for the ReLU mask.
    hidden_pre: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    /// Optional nearest-level fixed-point rounding of hidden activations,
    /// with a straight-through gradient. Off by default.
    activation_quant: Option<QuantConfig>,
}

impl Mlp {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            activation_quant: None,
        }
    }

    pub fn with_activation_quant(mut self, cfg: Option<QuantConfig>) -> Self {
        self.activation_quant = cfg;
        self
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    fn check(&self, w: &[f64], input_dim: usize) -> Result<()> {
        if w.len() != self.arch.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for an architecture with {}",
                w.len(),
                self.arch.num_params()
            )));
        }
        if input_dim != self.arch.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input dimension {input_dim}, model expects {}",
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    fn activate(&self, z: f64) -> f64 {
        let a = z.max(0.0);
        match self.activation_quant {
            None => a,
            Some(cfg) => {
                let g = cfg.gain() as f64;
                (a.min(cfg.upper_bound()) * g).round() / g
            }
        }
    }

    fn activation_passes_gradient(&self, z: f64) -> bool {
        match self.activation_quant {
            None => z > 0.0,
            Some(cfg) => z > 0.0 && z < cfg.upper_bound(),
        }
    }

    /// Mean cross-entropy over the batch, plus the cache for [`Mlp::backward`].
    pub fn forward_loss(&self, w: &[f64], batch: &Minibatch) -> Result<(f64, ForwardCache)> {
        self.check(w, batch.input_dim)?;
        let b = batch.size();
        let spans = self.arch.spans();
        let mut inputs = vec![batch.inputs.clone()];
        let mut hidden_pre = Vec::with_capacity(spans.len() - 1);
        let mut logits = Vec::new();
        for (l, span) in spans.iter().enumerate() {
            let a_in = &inputs[l];
            let mut z = vec![0.0; b * span.fan_out];
            for s in 0..b {
                let x = &a_in[s * span.fan_in..(s + 1) * span.fan_in];
                for o in 0..span.fan_out {
                    let row =
                        &w[span.weights + o * span.fan_in..span.weights + (o + 1) * span.fan_in];
                    let dot: f64 = row.iter().zip(x).map(|(a, c)| a * c).sum();
                    z[s * span.fan_out + o] = dot + w[span.biases + o];
                }
            }
            if l + 1 < spans.len() {
                let a: Vec<f64> = z.iter().map(|&v| self.activate(v)).collect();
                hidden_pre.push(z);
                inputs.push(a);
            } else {
                logits = z;
            }
        }

        let k = self.arch.num_classes();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for s in 0..b {
            let row = &logits[s * k..(s + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum.ln();
            for c in 0..k {
                probs[s * k + c] = (row[c] - log_norm).exp();
            }
            loss += log_norm - row[batch.labels[s]];
        }
        Ok((
            loss / b as f64,
            ForwardCache {
                inputs,
                hidden_pre,
                probs,
            },
        ))
    }

    /// Gradient of the mean cross-entropy with respect to every parameter.
    pub fn backward(&self, w: &[f64], cache: &ForwardCache, batch: &Minibatch) -> Vec<f64> {
        let b = batch.size();
        let k = self.arch.num_classes();
        let spans = self.arch.spans();
        let mut grad = vec![0.0; w.len()];

        let mut delta = cache.probs.clone();
        for s in 0..b {
            delta[s * k + batch.labels[s]] -= 1.0;
        }
        let inv_b = 1.0 / b as f64;
        delta.iter_mut().for_each(|d| *d *= inv_b);

        for l in (0..spans.len()).rev() {
            let span = spans[l];
            let a_in = &cache.inputs[l];
            for s in 0..b {
                let x = &a_in[s * span.fan_in..(s + 1) * span.fan_in];
                for o in 0..span.fan_out {
                    let d = delta[s * span.fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad
                        [span.weights + o * span.fan_in..span.weights + (o + 1) * span.fan_in];
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                    grad[span.biases + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            let pre = &cache.hidden_pre[l - 1];
            let mut prev = vec![0.0; b * span.fan_in];
            for s in 0..b {
                for o in 0..span.fan_out {
                    let d = delta[s * span.fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let row =
                        &w[span.weights + o * span.fan_in..span.weights + (o + 1) * span.fan_in];
                    for (i, wi) in row.iter().enumerate() {
                        prev[s * span.fan_in + i] += d * wi;
                    }
                }
            }
            for (p, &z) in prev.iter_mut().zip(pre) {
                if !self.activation_passes_gradient(z) {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        grad
    }

    pub fn loss_and_grad(&self, w: &[f64], batch: &Minibatch) -> Result<(f64, Vec<f64>)> {
        let (loss, cache) = self.forward_loss(w, batch)?;
        Ok((loss, self.backward(w, &cache, batch)))
    }

    /// Argmax accuracy and mean cross-entropy over a whole dataset.
    pub fn evaluate(&self, w: &[f64], ds: &LabeledDataset) -> Result<Evaluation> {
        self.check(w, ds.input_dim())?;
        ensure(!ds.is_empty(), || {
            "cannot evaluate on an empty dataset".into()
        })?;
        let k = self.arch.num_classes();
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(256) {
            let batch = Minibatch::from_indices(ds, chunk)?;
            let (loss, cache) = self.forward_loss(w, &batch)?;
            loss_sum += loss * chunk.len() as f64;
            for (s, &label) in batch.labels.iter().enumerate() {
                let row = &cache.probs[s * k..(s + 1) * k];
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (c, &p)| if p > acc.1 { (c, p) } else { acc },
                    )
                    .0;
                correct += usize::from(best == label);
            }
        }
        Ok(Evaluation {
            accuracy: correct as f64 / ds.len() as f64,
            loss: loss_sum / ds.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub local_iters: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub precision: Precision,
}

/// Runs `local_iters` SGD steps from `w0` on the client's shard and returns
/// the model delta `w_I - w_0`.
///
/// Each step draws a minibatch without replacement, evaluates the gradient
/// at a freshly quantized copy of the full-precision weights, applies it to
/// the full-precision weights and clips them to the representable range.
/// Batch sampling and stochastic rounding share `rng`, in that order.
pub fn local_train<R: Rng + ?Sized>(
    model: &Mlp,
    w0: &[f64],
    data: &LabeledDataset,
    shard: &[usize],
    cfg: &LocalTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    ensure(cfg.local_iters >= 1, || {
        "local iterations must be >= 1".into()
    })?;
    ensure(cfg.batch_size >= 1, || "batch size must be >= 1".into())?;
    model.check(w0, data.input_dim())?;
    let mut w = w0.to_vec();
    let take = cfg.batch_size.min(shard.len());
    for _ in 0..cfg.local_iters {
        let picks: Vec<usize> = sample(rng, shard.len(), take)
            .into_iter()
            .map(|i| shard[i])
            .collect();
        let batch = Minibatch::from_indices(data, &picks)?;
        let wq = cfg.precision.round_trip(&w, rng)?;
        let (_, grad) = model.loss_and_grad(&wq, &batch)?;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= cfg.learning_rate * gi;
        }
        cfg.precision.clip_in_place(&mut w);
    }
    Ok(w.iter().zip(w0).map(|(a, b)| a - b).collect())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"QFLW";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes `magic "QFLW" | u32 version | u32 layer count | u32 dims.. |
/// u32 bits (0 = full precision) | u64 parameter count | f64 params..`,
/// all little-endian.
pub fn write_checkpoint(
    path: &Path,
    arch: &Architecture,
    precision: Precision,
    w: &[f64],
) -> Result<()> {
    if w.len() != arch.num_params() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for an architecture with {}",
            w.len(),
            arch.num_params()
        )));
    }
    let mut out = Vec::with_capacity(32 + 8 * w.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.dims.len() as u32).to_le_bytes());
    for &d in &arch.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let bits = match precision {
        Precision::Full => 0,
        Precision::Fixed(cfg) => cfg.bits(),
    };
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for x in w {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Architecture, Precision, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |expected: usize| Error::TruncatedFile {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| truncated(off + 4))
    };
    if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Validation(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let version = u32_at(4)?;
    ensure(version == CHECKPOINT_VERSION, || {
        format!("unsupported checkpoint version {version}")
    })?;
    let layers = u32_at(8)? as usize;
    let mut off = 12;
    let mut dims = Vec::with_capacity(layers);
    for _ in 0..layers {
        dims.push(u32_at(off)? as usize);
        off += 4;
    }
    let arch = Architecture::new(dims)?;
    let bits = u32_at(off)?;
    off += 4;
    let precision = if bits == 0 {
        Precision::Full
    } else {
        Precision::bits(bits)?
    };
    let count = bytes
        .get(off..off + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or_else(|| truncated(off + 8))? as usize;
    off += 8;
    if count != arch.num_params() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint holds {count} parameters, architecture needs {}",
            arch.num_params()
        )));
    }
    let body = bytes
        .get(off..off + 8 * count)
        .ok_or_else(|| truncated(off + 8 * count))?;
    let w = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((arch, precision, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blobs;
    use crate::rng::seeded_rng;
    use rand_distr::StandardNormal;

    fn toy() -> Mlp {
        // 3*3 + 3 + 3*2 + 2 = 20 parameters.
        Mlp::new(Architecture::new(vec![3, 3, 2]).unwrap())
    }

    fn random_batch<R: Rng>(
        input_dim: usize,
        classes: usize,
        size: usize,
        rng: &mut R,
    ) -> Minibatch {
        let inputs = (0..size * input_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let labels = (0..size).map(|_| rng.gen_range(0..classes)).collect();
        Minibatch::new(inputs, labels, input_dim).unwrap()
    }

    fn central_difference(model: &Mlp, w: &[f64], batch: &Minibatch, h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|i| {
                let mut plus = w.to_vec();
                let mut minus = w.to_vec();
                plus[i] += h;
                minus[i] -= h;
                let lp = model.forward_loss(&plus, batch).unwrap().0;
                let lm = model.forward_loss(&minus, batch).unwrap().0;
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    #[test]
    fn parameter_count() {
        assert_eq!(toy().arch().num_params(), 20);
        let mnist = Architecture::new(vec![784, 32, 10]).unwrap();
        assert_eq!(mnist.num_params(), 784 * 32 + 32 + 32 * 10 + 10);
        assert!(Architecture::new(vec![3]).is_err());
        assert!(Architecture::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let model = Mlp::new(Architecture::new(vec![4, 10]).unwrap());
        let w = vec![0.0; model.arch().num_params()];
        let mut rng = seeded_rng(1);
        let batch = random_batch(4, 10, 8, &mut rng);
        let (loss, _) = model.forward_loss(&w, &batch).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let model = Mlp::new(Architecture::new(vec![1, 2]).unwrap());
        // Logit for class 1 is 100 above class 0.
        let w = vec![0.0, 0.0, 0.0, 100.0];
        let batch = Minibatch::new(vec![1.0], vec![1], 1).unwrap();
        let (loss, _) = model.forward_loss(&w, &batch).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn loss_ignores_batch_order() {
        let model = toy();
        let mut rng = seeded_rng(2);
        let w = init_params(model.arch(), 0.5, &mut rng);
        let batch = random_batch(3, 2, 6, &mut rng);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for s in (0..6).rev() {
            inputs.extend_from_slice(&batch.inputs[s * 3..(s + 1) * 3]);
            labels.push(batch.labels[s]);
        }
        let reversed = Minibatch::new(inputs, labels, 3).unwrap();
        let a = model.forward_loss(&w, &batch).unwrap().0;
        let b = model.forward_loss(&w, &reversed).unwrap().0;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let model = toy();
        let batch = Minibatch::new(vec![0.0; 4], vec![0], 4).unwrap();
        assert!(matches!(
            model.forward_loss(&[0.0; 20], &batch),
            Err(Error::DimensionMismatch(_))
        ));
        let batch = Minibatch::new(vec![0.0; 3], vec![0], 3).unwrap();
        assert!(matches!(
            model.forward_loss(&[0.0; 19], &batch),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(Minibatch::new(vec![0.0; 5], vec![0], 3).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = toy();
        let mut rng = seeded_rng(3);
        let w = init_params(model.arch(), 0.8, &mut rng);
        let batch = random_batch(3, 2, 5, &mut rng);
        let (_, grad) = model.loss_and_grad(&w, &batch).unwrap();
        let fd = central_difference(&model, &w, &batch, 1e-5);
        assert!(relative_error(&grad, &fd) < 1e-4);
    }

    #[test]
    fn zero_inputs_zero_first_layer_gradient() {
        let model = toy();
        let mut rng = seeded_rng(4);
        let w = init_params(model.arch(), 0.5, &mut rng);
        let batch = Minibatch::new(vec![0.0; 9], vec![0, 1, 1], 3).unwrap();
        let (_, grad) = model.loss_and_grad(&w, &batch).unwrap();
        assert!(grad[..9].iter().all(|&g| g == 0.0));
        assert!(grad[18..20].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let model = toy();
        let mut rng = seeded_rng(5);
        let w = init_params(model.arch(), 0.5, &mut rng);
        let batch = random_batch(3, 2, 4, &mut rng);
        let doubled = Minibatch::new(
            [batch.inputs.clone(), batch.inputs.clone()].concat(),
            [batch.labels.clone(), batch.labels.clone()].concat(),
            3,
        )
        .unwrap();
        let (_, g1) = model.loss_and_grad(&w, &batch).unwrap();
        let (_, g2) = model.loss_and_grad(&w, &doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_full_precision_step_is_plain_sgd() {
        let model = toy();
        let mut rng = seeded_rng(6);
        let w0 = init_params(model.arch(), 0.1, &mut rng);
        let ds = synth_blobs(2, 4, 3, 0.1, 1).unwrap();
        let shard = vec![0, 1, 2, 3];
        let cfg = LocalTrainConfig {
            local_iters: 1,
            learning_rate: 0.05,
            batch_size: 4,
            precision: Precision::Full,
        };
        let delta = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(7)).unwrap();
        // Whole shard in the batch, so the order of rows is irrelevant to the mean.
        let batch = Minibatch::from_indices(&ds, &shard).unwrap();
        let (_, grad) = model.loss_and_grad(&w0, &batch).unwrap();
        for (d, g) in delta.iter().zip(&grad) {
            assert!((d + 0.05 * g).abs() < 1e-15);
        }
    }

    #[test]
    fn local_train_is_seeded_and_clipped() {
        let model = toy();
        let ds = synth_blobs(2, 40, 3, 0.2, 1).unwrap();
        let shard: Vec<usize> = (0..40).collect();
        let cfg = LocalTrainConfig {
            local_iters: 5,
            learning_rate: 5.0,
            batch_size: 8,
            precision: Precision::bits(3).unwrap(),
        };
        let w0 = vec![0.5; 20];
        let a = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(8)).unwrap();
        let b = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(8)).unwrap();
        assert_eq!(a, b);
        for (d, w) in a.iter().zip(&w0) {
            let x = w + d;
            assert!((-1.0..=0.75 + 1e-15).contains(&x));
        }
        assert!(matches!(
            local_train(&model, &w0, &ds, &[], &cfg, &mut seeded_rng(8)),
            Err(Error::EmptyShard)
        ));
    }

    #[test]
    fn fine_quantization_approaches_full_precision() {
        let model = toy();
        let mut rng = seeded_rng(9);
        let w0 = init_params(model.arch(), 0.3, &mut rng);
        let ds = synth_blobs(2, 6, 3, 0.1, 1).unwrap();
        let shard: Vec<usize> = (0..6).collect();
        let mut cfg = LocalTrainConfig {
            local_iters: 1,
            learning_rate: 0.1,
            batch_size: 6,
            precision: Precision::Full,
        };
        let exact = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(0)).unwrap();
        cfg.precision = Precision::bits(16).unwrap();
        let trials = 200;
        let mut mean = vec![0.0; exact.len()];
        for t in 0..trials {
            let d = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(t)).unwrap();
            for (m, x) in mean.iter_mut().zip(&d) {
                *m += x / trials as f64;
            }
        }
        for (m, e) in mean.iter().zip(&exact) {
            assert!((m - e).abs() < 1e-3);
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let ds = synth_blobs(2, 200, 2, 0.0, 3).unwrap();
        let model = Mlp::new(Architecture::new(vec![2, 2]).unwrap());
        let w0 = vec![0.0; model.arch().num_params()];
        let shard: Vec<usize> = (0..200).collect();
        let cfg = LocalTrainConfig {
            local_iters: 50,
            learning_rate: 0.5,
            batch_size: 32,
            precision: Precision::Full,
        };
        let d = local_train(&model, &w0, &ds, &shard, &cfg, &mut seeded_rng(1)).unwrap();
        let w: Vec<f64> = w0.iter().zip(&d).map(|(a, b)| a + b).collect();
        let eval = model.evaluate(&w, &ds).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval, model.evaluate(&w, &ds).unwrap());
    }

    #[test]
    fn random_weights_are_near_chance() {
        let ds = synth_blobs(10, 2000, 10, 0.3, 4).unwrap();
        let model = Mlp::new(Architecture::new(vec![10, 16, 10]).unwrap());
        let mut total = 0.0;
        for seed in 0..10 {
            let w = init_params(model.arch(), 0.1, &mut seeded_rng(seed));
            total += model.evaluate(&w, &ds).unwrap().accuracy;
        }
        assert!((total / 10.0 - 0.1).abs() < 0.05);
    }

    #[test]
    fn activation_quant_stays_differentiable() {
        let model = toy().with_activation_quant(Some(QuantConfig::new(8).unwrap()));
        let mut rng = seeded_rng(10);
        let w = init_params(model.arch(), 0.5, &mut rng);
        let batch = random_batch(3, 2, 4, &mut rng);
        let (loss, grad) = model.loss_and_grad(&w, &batch).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let arch = Architecture::new(vec![3, 3, 2]).unwrap();
        let w = init_params(&arch, 0.1, &mut seeded_rng(11));
        let p = Precision::bits(8).unwrap();
        write_checkpoint(&path, &arch, p, &w).unwrap();
        assert_eq!(
            read_checkpoint(&path).unwrap(),
            (arch.clone(), p, w.clone())
        );
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 12 + 4 + 8 + 8 * 20);
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
