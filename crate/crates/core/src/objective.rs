//! Expected training energy as a function of transmit power and target
//! packet error rate, with the per-round latency budget as a quadratic
//! penalty, plus the analytic bit-width sweep.

use serde::{Deserialize, Serialize};

use crate::channel::{achievable_rate, ChannelParams, RateQuery};
use crate::convergence::{required_rounds, ConvergenceParams};
use crate::energy::{device_round, round_time, DeviceLink, DeviceProfile};
use crate::error::{ensure, Error, Result};

/// Value reported for points whose rate collapses to zero.
pub const ZERO_RATE_PENALTY: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyObjective {
    /// Template; `drop_prob` and `bits` are overwritten per evaluation.
    pub conv: ConvergenceParams,
    /// One profile per device, `conv.clients_n` in total.
    pub profiles: Vec<DeviceProfile>,
    pub channel: ChannelParams,
    pub bits: u32,
    pub tau_limit_s: f64,
    pub penalty_coeff: f64,
}

impl EnergyObjective {
    /// Homogeneous population of `conv.clients_n` copies of `profile`.
    pub fn homogeneous(
        conv: ConvergenceParams,
        profile: DeviceProfile,
        channel: ChannelParams,
        bits: u32,
    ) -> Self {
        let profiles = vec![profile; conv.clients_n];
        Self {
            conv,
            profiles,
            channel,
            bits,
            tau_limit_s: 1.0,
            penalty_coeff: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        self.channel.validate()?;
        if self.profiles.len() != self.conv.clients_n {
            return Err(Error::DimensionMismatch(format!(
                "{} device profiles for {} clients",
                self.profiles.len(),
                self.conv.clients_n
            )));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        ensure(
            (2..=crate::quantizer::MAX_BITS).contains(&self.bits),
            || format!("bit-width {} outside [2, 32]", self.bits),
        )?;
        ensure(self.tau_limit_s > 0.0, || {
            "tau_limit must be positive".into()
        })?;
        ensure(self.penalty_coeff >= 0.0, || {
            "penalty_coeff must be >= 0".into()
        })
    }

    fn at_bits(&self, bits: u32) -> Self {
        Self {
            bits,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Expected total energy over the continuous round budget.
    pub raw_energy_j: f64,
    /// Expected energy of one round, `(K/N) sum_k (e_l + e_u)`.
    pub round_energy_j: f64,
    pub tau_pr_s: f64,
    pub penalized: f64,
    /// `tau_pr - tau_limit`, positive when the budget is exceeded.
    pub violation_s: f64,
    pub rounds_raw: f64,
    /// Rate at nominal unit fading gain.
    pub rate_bpcu: f64,
}

impl ObjectiveValue {
    pub fn feasible(&self) -> bool {
        self.violation_s <= 0.0
    }

    fn zero_rate(rounds_raw: f64) -> Self {
        Self {
            raw_energy_j: ZERO_RATE_PENALTY,
            round_energy_j: ZERO_RATE_PENALTY,
            tau_pr_s: ZERO_RATE_PENALTY,
            penalized: ZERO_RATE_PENALTY,
            violation_s: ZERO_RATE_PENALTY,
            rounds_raw,
            rate_bpcu: 0.0,
        }
    }
}

/// Evaluates the penalized energy at `(p_tx, q)`.
///
/// The round count is the unrounded `T`, floored at zero so energy stays
/// non-negative.
pub fn objective_value(obj: &EnergyObjective, p_tx: f64, q: f64) -> Result<ObjectiveValue> {
    ensure(p_tx > 0.0 && p_tx.is_finite(), || {
        format!("transmit power must be positive, got {p_tx}")
    })?;
    ensure(q > 0.0 && q < 1.0, || {
        format!("q must lie in (0, 1), got {q}")
    })?;
    let conv = ConvergenceParams {
        drop_prob: q,
        bits: obj.bits,
        ..obj.conv.clone()
    };
    let rounds_raw = required_rounds(&conv)?.raw;
    let rate = achievable_rate(
        &obj.channel,
        &RateQuery {
            tx_power_w: p_tx,
            error_prob: q,
            gain_sq: 1.0,
        },
    )?;
    if rate == 0.0 {
        return Ok(ObjectiveValue::zero_rate(rounds_raw));
    }
    let link = DeviceLink {
        bandwidth_hz: obj.channel.bandwidth_hz,
        rate_bpcu: rate,
        tx_power_w: p_tx,
    };
    let links = vec![link; obj.profiles.len()];
    let k = conv.selected_k;
    let iters = conv.local_iters;
    let mut sum = 0.0;
    for profile in &obj.profiles {
        sum += device_round(profile, &link, obj.bits, iters)?.total_j();
    }
    let round_energy_j = k as f64 / obj.profiles.len() as f64 * sum;
    let raw_energy_j = rounds_raw.max(0.0) * round_energy_j;
    let tau_pr_s = round_time(&obj.profiles, &links, obj.bits, k, iters)?;
    let violation_s = tau_pr_s - obj.tau_limit_s;
    let excess = violation_s.max(0.0);
    Ok(ObjectiveValue {
        raw_energy_j,
        round_energy_j,
        tau_pr_s,
        penalized: raw_energy_j + obj.penalty_coeff * excess * excess,
        violation_s,
        rounds_raw,
        rate_bpcu: rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: u32,
    pub round_energy_j: f64,
    pub rounds_raw: f64,
    pub total_energy_j: f64,
    pub round_time_s: f64,
    /// `T * tau_pr`.
    pub total_time_s: f64,
    pub feasible: bool,
    /// Total-energy saving relative to the 32-bit row, in percent.
    pub savings_vs_32_pct: Option<f64>,
}

/// Analytic energy, time and round count at each bit-width.
pub fn sweep_bits(
    obj: &EnergyObjective,
    bit_levels: &[u32],
    p_tx: f64,
    q: f64,
) -> Result<Vec<SweepRow>> {
    ensure(!bit_levels.is_empty(), || "bit_levels is empty".into())?;
    let mut rows = Vec::with_capacity(bit_levels.len());
    for &bits in bit_levels {
        let o = obj.at_bits(bits);
        o.validate()?;
        let v = objective_value(&o, p_tx, q)?;
        rows.push(SweepRow {
            bits,
            round_energy_j: v.round_energy_j,
            rounds_raw: v.rounds_raw,
            total_energy_j: v.raw_energy_j,
            round_time_s: v.tau_pr_s,
            total_time_s: v.rounds_raw.max(0.0) * v.tau_pr_s,
            feasible: v.feasible(),
            savings_vs_32_pct: None,
        });
    }
    let baseline = match rows.iter().find(|r| r.bits == 32) {
        Some(r) => r.total_energy_j,
        None => objective_value(&obj.at_bits(32), p_tx, q)?.raw_energy_j,
    };
    for r in &mut rows {
        r.savings_vs_32_pct = Some(100.0 * (1.0 - r.total_energy_j / baseline));
    }
    Ok(rows)
}
