//! Per-device energy and latency for one federated round, and the
//! population-level expectations under uniform K-of-N client sampling.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::quantizer::MAX_BITS;

/// Compute and model-size constants of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceProfile {
    /// Effective switched capacitance, J per cycle per Hz^2.
    pub energy_beta: f64,
    /// CPU cycles per processed bit.
    pub cycles_per_bit: f64,
    pub clock_hz: f64,
    /// Computation capacity in FLOPs per second.
    pub compute_flops: f64,
    pub macs_per_iteration: f64,
    /// Number of trainable variables `d`.
    pub model_params: f64,
    /// Number of variables sent on the uplink `d^u`.
    pub uplink_params: f64,
    pub dataset_size: f64,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self {
            energy_beta: 1e-27,
            cycles_per_bit: 40.0,
            clock_hz: 1e9,
            compute_flops: 3.7e12,
            macs_per_iteration: 4_241_152.0,
            model_params: 421_642.0,
            uplink_params: 421_642.0,
            dataset_size: 600.0,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("energy_beta", self.energy_beta),
            ("cycles_per_bit", self.cycles_per_bit),
            ("clock_hz", self.clock_hz),
            ("compute_flops", self.compute_flops),
            ("macs_per_iteration", self.macs_per_iteration),
            ("model_params", self.model_params),
            ("uplink_params", self.uplink_params),
            ("dataset_size", self.dataset_size),
        ];
        for (name, value) in fields {
            ensure(value > 0.0 && value.is_finite(), || {
                format!("device profile field {name} must be positive, got {value}")
            })?;
        }
        Ok(())
    }
}

/// Uplink operating point of one device in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLink {
    pub bandwidth_hz: f64,
    /// Achievable rate in bits per channel use.
    pub rate_bpcu: f64,
    pub tx_power_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub local_j: f64,
    pub uplink_j: f64,
    pub tx_time_s: f64,
    pub comp_time_s: f64,
}

impl EnergyBreakdown {
    pub fn total_j(&self) -> f64 {
        self.local_j + self.uplink_j
    }

    pub fn total_time_s(&self) -> f64 {
        self.tx_time_s + self.comp_time_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkCost {
    pub energy_j: f64,
    pub time_s: f64,
}

fn check_bits(bits: u32) -> Result<()> {
    ensure((2..=MAX_BITS).contains(&bits), || {
        format!("bit-width {bits} outside [2, {MAX_BITS}]")
    })
}

/// Local training energy `beta * C * f^2 * (d * n) * I`.
pub fn local_energy(profile: &DeviceProfile, bits: u32, local_iters: u32) -> Result<f64> {
    check_bits(bits)?;
    ensure(local_iters >= 1, || "local iterations must be >= 1".into())?;
    Ok(local_energy_unchecked(profile, bits, local_iters))
}

fn local_energy_unchecked(profile: &DeviceProfile, bits: u32, local_iters: u32) -> f64 {
    let processed_bits = profile.model_params * bits as f64;
    profile.energy_beta
        * profile.cycles_per_bit
        * profile.clock_hz
        * profile.clock_hz
        * processed_bits
        * local_iters as f64
}

/// Uplink airtime `d^u n / (B r)` and its energy at transmit power `P_tx`.
pub fn uplink_cost(
    profile: &DeviceProfile,
    bits: u32,
    rate_bpcu: f64,
    bandwidth_hz: f64,
    tx_power_w: f64,
) -> Result<UplinkCost> {
    check_bits(bits)?;
    ensure(rate_bpcu >= 0.0 && !rate_bpcu.is_nan(), || {
        format!("rate must be non-negative, got {rate_bpcu}")
    })?;
    if rate_bpcu == 0.0 {
        return Err(Error::ZeroRate);
    }
    let payload_bits = profile.uplink_params * bits as f64;
    let time_s = payload_bits / (bandwidth_hz * rate_bpcu);
    Ok(UplinkCost {
        energy_j: time_s * tx_power_w,
        time_s,
    })
}

/// Local computation time `MacOps / C_comp * I`.
pub fn compute_time(profile: &DeviceProfile, local_iters: u32) -> f64 {
    profile.macs_per_iteration / profile.compute_flops * local_iters as f64
}

pub fn device_round(
    profile: &DeviceProfile,
    link: &DeviceLink,
    bits: u32,
    local_iters: u32,
) -> Result<EnergyBreakdown> {
    let local_j = local_energy(profile, bits, local_iters)?;
    let up = uplink_cost(
        profile,
        bits,
        link.rate_bpcu,
        link.bandwidth_hz,
        link.tx_power_w,
    )?;
    Ok(EnergyBreakdown {
        local_j,
        uplink_j: up.energy_j,
        tx_time_s: up.time_s,
        comp_time_s: compute_time(profile, local_iters),
    })
}

fn check_population(
    profiles: &[DeviceProfile],
    links: &[DeviceLink],
    selected: usize,
) -> Result<()> {
    ensure(!profiles.is_empty(), || "no devices".into())?;
    if profiles.len() != links.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} device profiles but {} links",
            profiles.len(),
            links.len()
        )));
    }
    ensure((1..=profiles.len()).contains(&selected), || {
        format!("selected count {selected} outside [1, {}]", profiles.len())
    })
}

/// Expected per-round latency `(K/N) * sum_k (tau_u,k + tau_comp,k)`.
///
/// This is the population average scaled by `K`, used in place of the
/// expected maximum over the selected set.
pub fn round_time(
    profiles: &[DeviceProfile],
    links: &[DeviceLink],
    bits: u32,
    selected: usize,
    local_iters: u32,
) -> Result<f64> {
    check_population(profiles, links, selected)?;
    let mut sum = 0.0;
    for (profile, link) in profiles.iter().zip(links) {
        let up = uplink_cost(
            profile,
            bits,
            link.rate_bpcu,
            link.bandwidth_hz,
            link.tx_power_w,
        )?;
        sum += up.time_s + compute_time(profile, local_iters);
    }
    Ok(selected as f64 / profiles.len() as f64 * sum)
}

/// Expected energy of `rounds` rounds: `(K T / N) * sum_k (e_l + e_u)`.
///
/// `rounds` is real-valued so the analytic objective can use the continuous
/// round count.
pub fn expected_total_energy(
    profiles: &[DeviceProfile],
    links: &[DeviceLink],
    bits: u32,
    selected: usize,
    rounds: f64,
    local_iters: u32,
) -> Result<f64> {
    check_population(profiles, links, selected)?;
    ensure(rounds >= 0.0, || {
        format!("round count must be >= 0, got {rounds}")
    })?;
    let mut sum = 0.0;
    for (profile, link) in profiles.iter().zip(links) {
        sum += device_round(profile, link, bits, local_iters)?.total_j();
    }
    Ok(selected as f64 * rounds / profiles.len() as f64 * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::seq::index::sample;
    use rand::Rng;

    fn nominal_link() -> DeviceLink {
        DeviceLink {
            bandwidth_hz: 1e7,
            rate_bpcu: 16.5,
            tx_power_w: 0.1,
        }
    }

    #[test]
    fn local_energy_reference() {
        let p = DeviceProfile::default();
        let direct = 1e-27 * 40.0 * 1e9 * 1e9 * 421_642.0 * 8.0 * 3.0;
        let e = local_energy(&p, 8, 3).unwrap();
        assert!((e - direct).abs() < 1e-15);
        assert!((e - 0.40478).abs() < 1e-5);
        assert_eq!(local_energy(&p, 16, 3).unwrap(), 2.0 * e);
        assert!(local_energy(&p, 8, 0).is_err());
        assert_eq!(local_energy_unchecked(&p, 8, 0), 0.0);
    }

    #[test]
    fn uplink_reference() {
        let p = DeviceProfile::default();
        let up = uplink_cost(&p, 8, 16.5, 1e7, 0.1).unwrap();
        assert!((up.time_s - 421_642.0 * 8.0 / (1e7 * 16.5)).abs() < 1e-15);
        assert!((up.time_s - 0.02044).abs() < 1e-5);
        assert!((up.energy_j - 2.044e-3).abs() < 1e-6);

        let doubled = uplink_cost(&p, 8, 16.5, 1e7, 0.2).unwrap();
        assert_eq!(doubled.time_s, up.time_s);
        assert!((doubled.energy_j - 2.0 * up.energy_j).abs() < 1e-18);

        let half = uplink_cost(&p, 4, 16.5, 1e7, 0.1).unwrap();
        assert!((half.time_s * 2.0 - up.time_s).abs() < 1e-18);
        assert!((half.energy_j * 2.0 - up.energy_j).abs() < 1e-18);
    }

    #[test]
    fn zero_rate_is_an_error() {
        let p = DeviceProfile::default();
        assert!(matches!(
            uplink_cost(&p, 8, 0.0, 1e7, 0.1),
            Err(Error::ZeroRate)
        ));
        let mut link = nominal_link();
        link.rate_bpcu = 0.0;
        assert!(matches!(
            round_time(&[p], &[link], 8, 1, 3),
            Err(Error::ZeroRate)
        ));
    }

    #[test]
    fn airtime_identity() {
        let p = DeviceProfile::default();
        for (bits, rate) in [(2, 0.3), (8, 16.5), (32, 7.25)] {
            let up = uplink_cost(&p, bits, rate, 1e7, 0.5).unwrap();
            let recovered = up.time_s * 1e7 * rate;
            assert!((recovered - p.uplink_params * bits as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn round_time_reference() {
        let profiles = vec![DeviceProfile::default(); 100];
        let links = vec![nominal_link(); 100];
        let comp = compute_time(&profiles[0], 3);
        assert!((comp - 4_241_152.0 / 3.7e12 * 3.0).abs() < 1e-18);
        assert!((comp - 3.44e-6).abs() < 1e-8);
        let tau = round_time(&profiles, &links, 8, 10, 3).unwrap();
        let per_device = 421_642.0 * 8.0 / (1e7 * 16.5) + comp;
        assert!((tau - 10.0 * per_device).abs() < 1e-12);
        assert!((tau - 0.2044).abs() < 1e-3);

        let all = round_time(&profiles, &links, 8, 100, 3).unwrap();
        assert!((all - 100.0 * per_device).abs() < 1e-10);

        let fast = vec![
            DeviceLink {
                rate_bpcu: 1e300,
                ..nominal_link()
            };
            100
        ];
        let limit = round_time(&profiles, &fast, 8, 10, 3).unwrap();
        assert!((limit - 10.0 * comp).abs() < 1e-15);
    }

    #[test]
    fn expected_energy_reference() {
        let profiles = vec![DeviceProfile::default(); 100];
        let links = vec![nominal_link(); 100];
        assert_eq!(
            expected_total_energy(&profiles, &links, 8, 10, 0.0, 3).unwrap(),
            0.0
        );
        let per = device_round(&profiles[0], &links[0], 8, 3)
            .unwrap()
            .total_j();
        let e = expected_total_energy(&profiles, &links, 8, 10, 3.0, 3).unwrap();
        assert!((e - 30.0 * per).abs() < 1e-10);
        assert!((e - 30.0 * (0.40478 + 0.002044)).abs() < 1e-3);
        assert!((e - 12.20).abs() < 0.01);
    }

    #[test]
    fn linear_in_bits() {
        let profiles = vec![DeviceProfile::default(); 5];
        let links = vec![nominal_link(); 5];
        let e4 = expected_total_energy(&profiles, &links, 4, 2, 3.0, 3).unwrap();
        let e12 = expected_total_energy(&profiles, &links, 12, 2, 3.0, 3).unwrap();
        assert!((e12 / e4 - 3.0).abs() < 1e-12);
        let t4 = round_time(&profiles, &links, 4, 2, 3).unwrap();
        let t12 = round_time(&profiles, &links, 12, 2, 3).unwrap();
        assert!(t12 > t4);
    }

    #[test]
    fn mismatched_population_rejected() {
        let profiles = vec![DeviceProfile::default(); 3];
        let links = vec![nominal_link(); 2];
        assert!(matches!(
            round_time(&profiles, &links, 8, 1, 3),
            Err(Error::DimensionMismatch(_))
        ));
        let links = vec![nominal_link(); 3];
        assert!(round_time(&profiles, &links, 8, 4, 3).is_err());
    }

    #[test]
    fn closed_form_matches_sampled_subsets() {
        let mut rng = seeded_rng(21);
        let n = 20;
        let k = 4;
        let profiles: Vec<DeviceProfile> = (0..n)
            .map(|_| DeviceProfile {
                clock_hz: rng.gen_range(0.5e9..1.5e9),
                uplink_params: rng.gen_range(1e5..5e5),
                ..DeviceProfile::default()
            })
            .collect();
        let links: Vec<DeviceLink> = (0..n)
            .map(|_| DeviceLink {
                bandwidth_hz: 1e7,
                rate_bpcu: rng.gen_range(1.0..20.0),
                tx_power_w: rng.gen_range(0.1..2.0),
            })
            .collect();
        let per: Vec<f64> = profiles
            .iter()
            .zip(&links)
            .map(|(p, l)| device_round(p, l, 8, 3).unwrap().total_j())
            .collect();
        let samples = 100_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            acc += sample(&mut rng, n, k).iter().map(|i| per[i]).sum::<f64>();
        }
        let mc = acc / samples as f64;
        let closed = expected_total_energy(&profiles, &links, 8, k, 1.0, 3).unwrap();
        assert!((mc - closed).abs() / closed < 0.01);
    }
}
