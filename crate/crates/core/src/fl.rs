//! Federated rounds with quantized local training, Bernoulli packet drops
//! and drop-aware weighted aggregation.
//!
//! Per round `t` the server samples `K` of `N` clients. Each selected client
//! quantizes the broadcast model, runs local SGD with gradients taken at
//! quantized weights, quantizes its delta at the same precision and sends
//! it over a fading uplink that loses the packet with probability `q`. The
//! server adds `sum_k alpha_k lambda_k delta_k / sum_k alpha_k` to the model,
//! with the denominator running over every selected client.
//!
//! All randomness comes from per-(round, client) streams, so client work can
//! be spread across threads without changing any result.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{achievable_rate, sample_rayleigh_gain, ChannelParams, RateQuery};
use crate::datasets::{ClientPartition, LabeledDataset};
use crate::energy::{compute_time, local_energy, uplink_cost, DeviceProfile};
use crate::error::{ensure, Error, Result};
use crate::nn::{init_params, local_train, Architecture, LocalTrainConfig, Mlp};
use crate::quantizer::{dequantize, quantize, Precision};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant {
        rate: f64,
    },
    /// `beta / (t + gamma)` at round `t` (1-based).
    Diminishing {
        beta: f64,
        gamma: f64,
    },
}

impl LrSchedule {
    pub fn at(&self, round: u64) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::Diminishing { beta, gamma } => beta / (round as f64 + gamma),
        }
    }
}

/// Denominator of the aggregation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// Sum of `alpha_k` over all selected clients, delivered or not.
    AllSelected,
    /// Sum over delivered clients only. An ablation, not the default.
    DeliveredOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub clients_n: usize,
    pub selected_k: usize,
    pub local_iters: u32,
    pub rounds: u64,
    /// Stop early once validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub precision: Precision,
    pub drop_prob: f64,
    pub learning_rate: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    pub channel: ChannelParams,
    pub tx_power_w: f64,
    /// Compute constants; model size and MAC counts are replaced by the
    /// simulated network's own.
    pub device: DeviceProfile,
    pub aggregation: AggregationRule,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    /// Quantize the broadcast model on receipt, before local training.
    pub quantize_on_receipt: bool,
    /// Error target used in the rate formula when `drop_prob` is zero,
    /// where `Qinv(0)` is unbounded.
    pub min_rate_error_prob: f64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients_n: 20,
            selected_k: 5,
            local_iters: 3,
            rounds: 30,
            target_accuracy: None,
            precision: Precision::Full,
            drop_prob: 0.0,
            learning_rate: LrSchedule::Constant { rate: 0.5 },
            batch_size: 32,
            seed: 0,
            channel: ChannelParams::default(),
            tx_power_w: 0.1,
            device: DeviceProfile::default(),
            aggregation: AggregationRule::AllSelected,
            hidden: vec![32],
            init_scale: 0.1,
            quantize_on_receipt: true,
            min_rate_error_prob: 1e-9,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            1 <= self.selected_k && self.selected_k <= self.clients_n,
            || {
                format!(
                    "need 1 <= K <= N, got K = {}, N = {}",
                    self.selected_k, self.clients_n
                )
            },
        )?;
        ensure((0.0..1.0).contains(&self.drop_prob), || {
            format!(
                "drop probability must lie in [0, 1), got {}",
                self.drop_prob
            )
        })?;
        ensure(self.local_iters >= 1, || "local_iters must be >= 1".into())?;
        ensure(self.rounds >= 1, || "rounds must be >= 1".into())?;
        ensure(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        ensure(self.tx_power_w > 0.0, || {
            "tx_power_w must be positive".into()
        })?;
        ensure(self.init_scale > 0.0 && self.init_scale <= 1.0, || {
            "init_scale must lie in (0, 1]".into()
        })?;
        ensure(
            self.min_rate_error_prob > 0.0 && self.min_rate_error_prob < 1.0,
            || "min_rate_error_prob must lie in (0, 1)".into(),
        )?;
        let lr_ok = match self.learning_rate {
            LrSchedule::Constant { rate } => rate > 0.0,
            LrSchedule::Diminishing { beta, gamma } => beta > 0.0 && gamma > -1.0,
        };
        ensure(lr_ok, || "learning rate must be positive".into())?;
        self.channel.validate()?;
        self.device.validate()
    }

    /// Bit-width charged in the energy model; full precision counts as 32.
    pub fn energy_bits(&self) -> u32 {
        match self.precision {
            Precision::Full => 32,
            Precision::Fixed(cfg) => cfg.bits(),
        }
    }
}

/// Uniform `K`-subset of `0..N`, in ascending order.
pub fn select_clients<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    ensure(k <= n, || format!("cannot select {k} of {n} clients"))?;
    let mut ids = sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery<T> {
    Delivered(T),
    Dropped,
}

impl<T> Delivery<T> {
    /// Reliability factor: 1 if delivered, else 0.
    pub fn lambda(&self) -> u8 {
        match self {
            Delivery::Delivered(_) => 1,
            Delivery::Dropped => 0,
        }
    }
}

/// Passes `payload` through an erasure channel that loses it with
/// probability `drop_prob`. Delivered payloads are untouched.
pub fn transmit<T, R: Rng + ?Sized>(
    payload: T,
    drop_prob: f64,
    rng: &mut R,
) -> Result<Delivery<T>> {
    ensure((0.0..1.0).contains(&drop_prob), || {
        format!("drop probability must lie in [0, 1), got {drop_prob}")
    })?;
    if rng.gen::<f64>() < drop_prob {
        Ok(Delivery::Dropped)
    } else {
        Ok(Delivery::Delivered(payload))
    }
}

/// One selected client's contribution to aggregation.
#[derive(Debug, Clone, Copy)]
pub struct ClientUpdate<'a> {
    pub alpha: f64,
    /// `None` when the packet was lost.
    pub delta: Option<&'a [f64]>,
}

/// `w + sum alpha_k lambda_k delta_k / denominator`, clipped to `precision`.
///
/// Updates are summed in the order given. A round with nothing delivered
/// returns `w` unchanged.
pub fn aggregate(
    w: &[f64],
    updates: &[ClientUpdate<'_>],
    rule: AggregationRule,
    precision: &Precision,
) -> Result<Vec<f64>> {
    ensure(updates.iter().all(|u| u.alpha > 0.0), || {
        "client weights must be positive".into()
    })?;
    if let Some(bad) = updates
        .iter()
        .filter_map(|u| u.delta)
        .find(|d| d.len() != w.len())
    {
        return Err(Error::DimensionMismatch(format!(
            "update of length {} for a model of {}",
            bad.len(),
            w.len()
        )));
    }
    let denominator: f64 = match rule {
        AggregationRule::AllSelected => updates.iter().map(|u| u.alpha).sum(),
        AggregationRule::DeliveredOnly => updates
            .iter()
            .filter(|u| u.delta.is_some())
            .map(|u| u.alpha)
            .sum(),
    };
    if updates.iter().all(|u| u.delta.is_none()) {
        return Ok(w.to_vec());
    }
    let mut numerator = vec![0.0; w.len()];
    for u in updates {
        if let Some(delta) = u.delta {
            for (acc, d) in numerator.iter_mut().zip(delta) {
                *acc += u.alpha * d;
            }
        }
    }
    let mut next: Vec<f64> = w
        .iter()
        .zip(&numerator)
        .map(|(wi, ni)| wi + ni / denominator)
        .collect();
    precision.clip_in_place(&mut next);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRound {
    pub client: usize,
    pub lambda: u8,
    /// The rate collapsed to zero, so the update was never sent.
    pub zero_rate: bool,
    pub gain_sq: f64,
    pub rate_bpcu: f64,
    pub local_j: f64,
    pub uplink_j: f64,
    pub tx_time_s: f64,
    pub comp_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub learning_rate: f64,
    pub clients: Vec<ClientRound>,
    pub update_norm: f64,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub round_energy_j: f64,
    pub cumulative_energy_j: f64,
    /// Slowest selected client's compute plus airtime.
    pub round_time_s: f64,
}

impl RoundRecord {
    pub fn delivered(&self) -> usize {
        self.clients.iter().filter(|c| c.lambda == 1).count()
    }

    pub fn zero_rate_count(&self) -> usize {
        self.clients.iter().filter(|c| c.zero_rate).count()
    }
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub arch: Architecture,
    pub records: Vec<RoundRecord>,
    pub weights: Vec<f64>,
}

impl FederationRun {
    /// First round whose validation accuracy reaches `threshold`.
    pub fn rounds_to_accuracy(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.val_accuracy >= threshold)
            .map(|r| r.round)
    }

    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

struct ClientOutcome {
    delta: Option<Vec<f64>>,
    record: ClientRound,
}

/// Runs federated training and returns one record per round.
pub fn run_federation(
    cfg: &FlConfig,
    partition: &ClientPartition,
    data: &LabeledDataset,
    eval: &LabeledDataset,
) -> Result<FederationRun> {
    cfg.validate()?;
    if partition.num_clients() != cfg.clients_n {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} clients, config has {}",
            partition.num_clients(),
            cfg.clients_n
        )));
    }
    if eval.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch(
            "train/eval input dimensions differ".into(),
        ));
    }
    let mut dims = vec![data.input_dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(data.num_classes().max(eval.num_classes()));
    let arch = Architecture::new(dims)?;
    let model = Mlp::new(arch.clone());

    let train_view = data.select(&partition.all_indices());
    let profile = DeviceProfile {
        model_params: arch.num_params() as f64,
        uplink_params: arch.num_params() as f64,
        macs_per_iteration: (arch.macs_per_sample() * cfg.batch_size) as f64,
        ..cfg.device
    };
    let bits = cfg.energy_bits();
    let rate_error_prob = cfg.drop_prob.max(cfg.min_rate_error_prob);

    let mut w = init_params(
        &arch,
        cfg.init_scale,
        &mut stream_rng(cfg.seed, Stream::ModelInit, 0, 0),
    );
    let mut records = Vec::new();
    let mut cumulative = 0.0;

    for round in 1..=cfg.rounds {
        let lr = cfg.learning_rate.at(round);
        let selected = select_clients(
            cfg.clients_n,
            cfg.selected_k,
            &mut stream_rng(cfg.seed, Stream::ClientSelection, round, 0),
        )?;
        let local_cfg = LocalTrainConfig {
            local_iters: cfg.local_iters,
            learning_rate: lr,
            batch_size: cfg.batch_size,
            precision: cfg.precision,
        };

        let outcomes: Vec<Result<ClientOutcome>> = selected
            .par_iter()
            .map(|&k| {
                let key = k as u64;
                let mut qrng = stream_rng(cfg.seed, Stream::Quantization, round, key);
                let start = if cfg.quantize_on_receipt {
                    cfg.precision.round_trip(&w, &mut qrng)?
                } else {
                    w.clone()
                };
                let mut brng = stream_rng(cfg.seed, Stream::Minibatch, round, key);
                let delta = local_train(
                    &model,
                    &start,
                    data,
                    partition.indices(k),
                    &local_cfg,
                    &mut brng,
                )?;
                let payload = match cfg.precision {
                    Precision::Full => delta,
                    Precision::Fixed(qc) => dequantize(&quantize(&delta, qc, &mut qrng)?),
                };

                let gain_sq =
                    sample_rayleigh_gain(&mut stream_rng(cfg.seed, Stream::Fading, round, key));
                let rate = achievable_rate(
                    &cfg.channel,
                    &RateQuery {
                        tx_power_w: cfg.tx_power_w,
                        error_prob: rate_error_prob,
                        gain_sq,
                    },
                )?;
                let local_j = local_energy(&profile, bits, cfg.local_iters)?;
                let comp_time_s = compute_time(&profile, cfg.local_iters);
                let (delivery, zero_rate, uplink_j, tx_time_s) = match uplink_cost(
                    &profile,
                    bits,
                    rate,
                    cfg.channel.bandwidth_hz,
                    cfg.tx_power_w,
                ) {
                    Ok(up) => {
                        let mut trng = stream_rng(cfg.seed, Stream::Transmission, round, key);
                        (
                            transmit(payload, cfg.drop_prob, &mut trng)?,
                            false,
                            up.energy_j,
                            up.time_s,
                        )
                    }
                    Err(Error::ZeroRate) => (Delivery::Dropped, true, 0.0, 0.0),
                    Err(e) => return Err(e),
                };
                let lambda = delivery.lambda();
                Ok(ClientOutcome {
                    delta: match delivery {
                        Delivery::Delivered(d) => Some(d),
                        Delivery::Dropped => None,
                    },
                    record: ClientRound {
                        client: k,
                        lambda,
                        zero_rate,
                        gain_sq,
                        rate_bpcu: rate,
                        local_j,
                        uplink_j,
                        tx_time_s,
                        comp_time_s,
                    },
                })
            })
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let updates: Vec<ClientUpdate<'_>> = outcomes
            .iter()
            .map(|o| ClientUpdate {
                alpha: partition.weights()[o.record.client],
                delta: o.delta.as_deref(),
            })
            .collect();
        let next = aggregate(&w, &updates, cfg.aggregation, &cfg.precision)?;
        let update_norm = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        w = next;

        let clients: Vec<ClientRound> = outcomes.into_iter().map(|o| o.record).collect();
        let round_energy_j: f64 = clients.iter().map(|c| c.local_j + c.uplink_j).sum();
        cumulative += round_energy_j;
        let round_time_s = clients
            .iter()
            .map(|c| c.comp_time_s + c.tx_time_s)
            .fold(0.0, f64::max);
        let train = model.evaluate(&w, &train_view)?;
        let val = model.evaluate(&w, eval)?;
        records.push(RoundRecord {
            round,
            learning_rate: lr,
            clients,
            update_norm,
            train_accuracy: train.accuracy,
            train_loss: train.loss,
            val_accuracy: val.accuracy,
            val_loss: val.loss,
            round_energy_j,
            cumulative_energy_j: cumulative,
            round_time_s,
        });
        if cfg
            .target_accuracy
            .is_some_and(|target| val.accuracy >= target)
        {
            break;
        }
    }
    Ok(FederationRun {
        arch,
        records,
        weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{partition, synth_blobs, PartitionMode};
    use crate::rng::seeded_rng;

    #[test]
    fn full_selection() {
        let ids = select_clients(7, 7, &mut seeded_rng(1)).unwrap();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
        assert!(select_clients(3, 4, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn selection_frequency() {
        let mut counts = vec![0usize; 100];
        let rounds = 100_000;
        for t in 0..rounds {
            let mut rng = stream_rng(5, Stream::ClientSelection, t, 0);
            for k in select_clients(100, 10, &mut rng).unwrap() {
                counts[k] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / rounds as f64 - 0.1).abs() < 0.005);
        }
    }

    #[test]
    fn selection_is_seeded() {
        let a: Vec<Vec<usize>> = (0..20)
            .map(|t| {
                select_clients(50, 5, &mut stream_rng(3, Stream::ClientSelection, t, 0)).unwrap()
            })
            .collect();
        let b: Vec<Vec<usize>> = (0..20)
            .map(|t| {
                select_clients(50, 5, &mut stream_rng(3, Stream::ClientSelection, t, 0)).unwrap()
            })
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn transmit_statistics() {
        let mut rng = seeded_rng(2);
        for _ in 0..1000 {
            assert_eq!(transmit((), 0.0, &mut rng).unwrap().lambda(), 1);
        }
        let trials = 100_000;
        let drops = (0..trials)
            .filter(|_| transmit((), 0.2, &mut rng).unwrap().lambda() == 0)
            .count();
        assert!((drops as f64 / trials as f64 - 0.2).abs() < 0.004);
        assert!(transmit((), 1.0, &mut rng).is_err());
    }

    #[test]
    fn delivered_payload_is_identical() {
        let payload = vec![0.25, -1.0, 0.1234567];
        match transmit(payload.clone(), 0.0, &mut seeded_rng(0)).unwrap() {
            Delivery::Delivered(p) => assert_eq!(p, payload),
            Delivery::Dropped => panic!("dropped at q = 0"),
        }
    }

    #[test]
    fn total_outage_keeps_model() {
        let w = vec![0.1, -0.2];
        let ups = [
            ClientUpdate {
                alpha: 0.5,
                delta: None,
            },
            ClientUpdate {
                alpha: 0.5,
                delta: None,
            },
        ];
        for rule in [AggregationRule::AllSelected, AggregationRule::DeliveredOnly] {
            assert_eq!(aggregate(&w, &ups, rule, &Precision::Full).unwrap(), w);
        }
    }

    #[test]
    fn equal_weights_reduce_to_plain_average() {
        let w = vec![0.0, 0.5, -0.5];
        let d1 = [0.1, 0.2, 0.3];
        let d2 = [0.3, -0.2, 0.1];
        let ups = [
            ClientUpdate {
                alpha: 0.25,
                delta: Some(&d1),
            },
            ClientUpdate {
                alpha: 0.25,
                delta: Some(&d2),
            },
        ];
        let next = aggregate(&w, &ups, AggregationRule::AllSelected, &Precision::Full).unwrap();
        for i in 0..3 {
            let plain = w[i] + (d1[i] + d2[i]) / 2.0;
            assert!((next[i] - plain).abs() < 1e-15);
        }
    }

    #[test]
    fn dropped_client_still_counts_in_denominator() {
        let w = vec![0.0, 0.0];
        let u = [0.4, -0.2];
        let ups = [
            ClientUpdate {
                alpha: 0.75,
                delta: Some(&u),
            },
            ClientUpdate {
                alpha: 0.25,
                delta: None,
            },
        ];
        let next = aggregate(&w, &ups, AggregationRule::AllSelected, &Precision::Full).unwrap();
        assert_eq!(next, vec![0.75 * 0.4, 0.75 * -0.2]);
        let renorm = aggregate(&w, &ups, AggregationRule::DeliveredOnly, &Precision::Full).unwrap();
        assert!((renorm[0] - 0.4).abs() < 1e-15 && (renorm[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn dropped_direction_is_masked() {
        // Client 2 alone moves along the last axis; dropping it leaves that axis fixed.
        let w = vec![0.1, 0.2, 0.3];
        let d1 = [0.05, 0.01, 0.0];
        let ups = [
            ClientUpdate {
                alpha: 0.5,
                delta: Some(&d1),
            },
            ClientUpdate {
                alpha: 0.5,
                delta: None,
            },
        ];
        let next = aggregate(&w, &ups, AggregationRule::AllSelected, &Precision::Full).unwrap();
        assert_eq!(next[2], w[2]);
    }

    #[test]
    fn aggregate_clips_and_checks() {
        let w = vec![0.9];
        let d = [0.5];
        let ups = [ClientUpdate {
            alpha: 1.0,
            delta: Some(&d),
        }];
        let p = Precision::bits(4).unwrap();
        assert_eq!(
            aggregate(&w, &ups, AggregationRule::AllSelected, &p).unwrap(),
            vec![0.875]
        );
        let bad = [ClientUpdate {
            alpha: 0.0,
            delta: Some(&d),
        }];
        assert!(aggregate(&w, &bad, AggregationRule::AllSelected, &p).is_err());
        let short: [f64; 0] = [];
        let bad = [ClientUpdate {
            alpha: 1.0,
            delta: Some(&short),
        }];
        assert!(matches!(
            aggregate(&w, &bad, AggregationRule::AllSelected, &p),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn small_setup() -> (FlConfig, ClientPartition, LabeledDataset, LabeledDataset) {
        let data = synth_blobs(4, 400, 6, 0.15, 1).unwrap();
        let eval = synth_blobs(4, 100, 6, 0.15, 2).unwrap();
        let part = partition(&data, 8, PartitionMode::Iid, 1, 3).unwrap();
        let cfg = FlConfig {
            clients_n: 8,
            selected_k: 3,
            rounds: 5,
            hidden: vec![8],
            learning_rate: LrSchedule::Constant { rate: 0.2 },
            batch_size: 10,
            seed: 42,
            ..FlConfig::default()
        };
        (cfg, part, data, eval)
    }

    #[test]
    fn runs_are_reproducible() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.precision = Precision::bits(8).unwrap();
        cfg.drop_prob = 0.3;
        let a = run_federation(&cfg, &part, &data, &eval).unwrap();
        let b = run_federation(&cfg, &part, &data, &eval).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn energy_ledger_adds_up() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.drop_prob = 0.2;
        let run = run_federation(&cfg, &part, &data, &eval).unwrap();
        let mut recomputed = 0.0;
        let mut prev = 0.0;
        for r in &run.records {
            recomputed += r
                .clients
                .iter()
                .map(|c| c.local_j + c.uplink_j)
                .sum::<f64>();
            assert!(r.cumulative_energy_j >= prev);
            prev = r.cumulative_energy_j;
            assert!(r.clients.iter().all(|c| c.lambda <= 1));
        }
        let last = run.final_record().unwrap().cumulative_energy_j;
        assert!((last - recomputed).abs() <= 1e-9 * recomputed);
    }

    #[test]
    fn dropped_clients_pay_energy() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.drop_prob = 0.9;
        let run = run_federation(&cfg, &part, &data, &eval).unwrap();
        let dropped: Vec<&ClientRound> = run
            .records
            .iter()
            .flat_map(|r| &r.clients)
            .filter(|c| c.lambda == 0)
            .collect();
        assert!(!dropped.is_empty());
        assert!(dropped.iter().all(|c| c.local_j > 0.0 && c.uplink_j > 0.0));
    }

    #[test]
    fn zero_rate_counts_as_drop() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.tx_power_w = 1e-12;
        cfg.channel.blocklength = 1;
        let run = run_federation(&cfg, &part, &data, &eval).unwrap();
        let first = &run.records[0];
        assert_eq!(first.zero_rate_count(), 3);
        assert_eq!(first.delivered(), 0);
        assert_eq!(first.update_norm, 0.0);
    }

    #[test]
    fn single_client_federation_is_local_sgd() {
        let (mut cfg, _, data, eval) = small_setup();
        cfg.clients_n = 1;
        cfg.selected_k = 1;
        cfg.rounds = 3;
        let part = ClientPartition::from_assignments(vec![(0..data.len()).collect()]).unwrap();
        let run = run_federation(&cfg, &part, &data, &eval).unwrap();

        let model = Mlp::new(run.arch.clone());
        let mut w = init_params(
            &run.arch,
            cfg.init_scale,
            &mut stream_rng(cfg.seed, Stream::ModelInit, 0, 0),
        );
        for round in 1..=3 {
            let local = LocalTrainConfig {
                local_iters: cfg.local_iters,
                learning_rate: cfg.learning_rate.at(round),
                batch_size: cfg.batch_size,
                precision: Precision::Full,
            };
            let mut brng = stream_rng(cfg.seed, Stream::Minibatch, round, 0);
            let d = local_train(&model, &w, &data, part.indices(0), &local, &mut brng).unwrap();
            for (wi, di) in w.iter_mut().zip(&d) {
                *wi = (*wi + 1.0 * di / 1.0).clamp(-1.0, 1.0);
            }
        }
        assert_eq!(run.weights, w);
    }

    #[test]
    fn target_accuracy_stops_early() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.rounds = 50;
        cfg.target_accuracy = Some(0.0);
        let run = run_federation(&cfg, &part, &data, &eval).unwrap();
        assert_eq!(run.records.len(), 1);
    }

    #[test]
    fn mismatched_partition_rejected() {
        let (mut cfg, part, data, eval) = small_setup();
        cfg.clients_n = 9;
        assert!(matches!(
            run_federation(&cfg, &part, &data, &eval),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn diminishing_schedule() {
        let s = LrSchedule::Diminishing {
            beta: 2.0,
            gamma: 2.0,
        };
        assert_eq!(s.at(1), 2.0 / 3.0);
        assert_eq!(LrSchedule::Constant { rate: 0.001 }.at(7), 0.001);
    }
}
