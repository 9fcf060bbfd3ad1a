//! Finite-blocklength uplink model over quasi-static Rayleigh fading.
//!
//! The achievable rate at blocklength `M` and decoding error target `q` is
//! the normal approximation `C(x) - sqrt(V(x)/M) * Qinv(q)`, floored at zero,
//! where `x` is the instantaneous SNR `rho * |h|^2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LOG2_E, SQRT_2};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    /// Blocklength `M` in channel uses.
    pub blocklength: u32,
    /// Multiplicative factor on `|h|^2`.
    pub pathloss: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            noise_psd_dbm_per_hz: -100.0,
            blocklength: 1000,
            pathloss: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite(),
            || format!("bandwidth_hz must be positive, got {}", self.bandwidth_hz),
        )?;
        ensure(self.noise_psd_dbm_per_hz.is_finite(), || {
            "noise_psd_dbm_per_hz must be finite".into()
        })?;
        ensure(self.blocklength >= 1, || "blocklength must be >= 1".into())?;
        ensure(self.pathloss > 0.0 && self.pathloss.is_finite(), || {
            format!("pathloss must be positive, got {}", self.pathloss)
        })
    }

    pub fn noise_psd_w_per_hz(&self) -> f64 {
        dbm_per_hz_to_w_per_hz(self.noise_psd_dbm_per_hz)
    }

    /// Transmit SNR `rho = P_tx / (N_0 B)`, before fading.
    pub fn snr(&self, tx_power_w: f64) -> f64 {
        tx_power_w / (self.noise_psd_w_per_hz() * self.bandwidth_hz)
    }

    /// Effective SNR `rho * |h|^2 * pathloss`.
    pub fn effective_snr(&self, query: &RateQuery) -> f64 {
        self.snr(query.tx_power_w) * query.gain_sq * self.pathloss
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuery {
    pub tx_power_w: f64,
    pub error_prob: f64,
    pub gain_sq: f64,
}

impl RateQuery {
    pub fn validate(&self) -> Result<()> {
        ensure(self.error_prob > 0.0 && self.error_prob < 1.0, || {
            format!(
                "error probability must lie in (0, 1), got {}",
                self.error_prob
            )
        })?;
        ensure(self.tx_power_w > 0.0 && self.tx_power_w.is_finite(), || {
            format!("tx power must be positive, got {}", self.tx_power_w)
        })?;
        ensure(self.gain_sq >= 0.0 && self.gain_sq.is_finite(), || {
            format!("|h|^2 must be non-negative, got {}", self.gain_sq)
        })
    }
}

pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Gaussian tail probability `P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Acklam's rational approximation to the standard normal quantile,
// relative error about 1.15e-9 before refinement.
fn normal_quantile_acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse of [`q_function`]: the `x` with `P(Z > x) = p`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("Q^-1 needs p in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return q_inverse(1.0 - p).map(|x| -x);
    }
    // Lower-tail quantile at 1 - p equals the upper-tail point we want.
    let mut x = -normal_quantile_acklam(p);
    for _ in 0..3 {
        let pdf = normal_pdf(x);
        if pdf < f64::MIN_POSITIVE {
            break;
        }
        let step = (q_function(x) - p) / pdf;
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Shannon capacity `log2(1 + x)` in bits per channel use.
pub fn capacity(snr: f64) -> f64 {
    snr.ln_1p() * LOG2_E
}

/// Channel dispersion `(1 - (1 + x)^-2) (log2 e)^2`.
pub fn dispersion(snr: f64) -> f64 {
    (1.0 - (1.0 + snr).powi(-2)) * LOG2_E * LOG2_E
}

/// Normal-approximation rate at a given effective SNR, without the floor.
pub fn normal_approx_rate(snr: f64, blocklength: u32, error_prob: f64) -> Result<f64> {
    let back_off = (dispersion(snr) / blocklength as f64).sqrt() * q_inverse(error_prob)?;
    Ok(capacity(snr) - back_off)
}

/// Achievable rate in bits per channel use, floored at zero.
pub fn achievable_rate(params: &ChannelParams, query: &RateQuery) -> Result<f64> {
    params.validate()?;
    query.validate()?;
    let snr = params.effective_snr(query);
    Ok(normal_approx_rate(snr, params.blocklength, query.error_prob)?.max(0.0))
}

/// Draws `|h|^2` for unit-power Rayleigh fading: the squared magnitude of a
/// circularly-symmetric complex Gaussian with unit variance.
pub fn sample_rayleigh_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    0.5 * (re * re + im * im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    // Composite Simpson on [x, x + 12] plus nothing beyond: the tail past 12
    // standard deviations is below 1e-32.
    fn q_by_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (x, x + 12.0);
        let h = (b - a) / n as f64;
        // Kahan-compensated sum keeps rounding well under the 1e-12 target.
        let (mut s, mut c) = (normal_pdf(a) + normal_pdf(b), 0.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            let y = w * normal_pdf(a + i as f64 * h) - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s * h / 3.0
    }

    fn q_inverse_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_function(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert_eq!(q_function(f64::INFINITY), 0.0);
        assert_eq!(q_function(f64::NEG_INFINITY), 1.0);
        let oracle = q_by_quadrature(1.0);
        assert!((oracle - 0.158_655).abs() < 1e-6);
        assert!((q_function(1.0) - oracle).abs() < 1e-12);
        for x in [-3.0, -0.5, 0.25, 2.0, 4.5] {
            assert!(
                (q_function(x) - q_by_quadrature(x)).abs() < 1e-12,
                "x = {x}"
            );
        }
    }

    #[test]
    fn q_inverse_values() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        let oracle = q_inverse_by_bisection(0.01);
        assert!((oracle - 2.3263).abs() < 1e-4);
        assert!((q_inverse(0.01).unwrap() - oracle).abs() < 1e-10);
        for p in [1e-12, 1e-6, 0.02425, 0.2, 0.7, 0.999_999] {
            let x = q_inverse(p).unwrap();
            assert!((q_function(x) - p).abs() <= 1e-10 * p.max(1e-6), "p = {p}");
        }
    }

    #[test]
    fn q_inverse_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inverse(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn q_round_trip_sweep() {
        let mut x = -6.0;
        while x <= 6.0 {
            let back = q_inverse(q_function(x)).unwrap();
            assert!((back - x).abs() < 1e-8, "x = {x}, back = {back}");
            x += 0.01;
        }
    }

    #[test]
    fn capacity_and_dispersion() {
        assert_eq!(capacity(0.0), 0.0);
        assert!((capacity(1.0) - 1.0).abs() < 1e-15);
        assert!((capacity(1e5) - (1.0f64 + 1e5).log2()).abs() < 1e-12);
        assert!((capacity(1e5) - 16.6096).abs() < 1e-4);
        assert_eq!(dispersion(0.0), 0.0);
        assert!((dispersion(1e12) - LOG2_E * LOG2_E).abs() < 1e-10);
        assert!((LOG2_E * LOG2_E - 2.0814).abs() < 1e-4);
        assert!((dispersion(1.0) - 0.75 * LOG2_E * LOG2_E).abs() < 1e-15);
        assert!((dispersion(1.0) - 1.5611).abs() < 1e-4);
    }

    #[test]
    fn noise_conversion() {
        assert!((dbm_per_hz_to_w_per_hz(-100.0) - 1e-13).abs() < 1e-25);
        let snr = ChannelParams::default().snr(0.1);
        assert!((snr - 1e5).abs() < 1e-6);
    }

    fn unit_snr_params() -> (ChannelParams, RateQuery) {
        let params = ChannelParams::default();
        // rho = 1 requires P_tx = N_0 B.
        let p = params.noise_psd_w_per_hz() * params.bandwidth_hz;
        let query = RateQuery {
            tx_power_w: p,
            error_prob: 0.01,
            gain_sq: 1.0,
        };
        (params, query)
    }

    #[test]
    fn rate_at_unit_snr() {
        let (params, query) = unit_snr_params();
        let oracle = 1.0 - (0.75 * LOG2_E * LOG2_E / 1000.0).sqrt() * q_inverse_by_bisection(0.01);
        let r = achievable_rate(&params, &query).unwrap();
        assert!((r - oracle).abs() < 1e-9);
        assert!((r - 0.9081).abs() < 1e-3);
    }

    #[test]
    fn rate_at_half_error_is_capacity() {
        let params = ChannelParams::default();
        let query = RateQuery {
            tx_power_w: 0.3,
            error_prob: 0.5,
            gain_sq: 0.7,
        };
        let r = achievable_rate(&params, &query).unwrap();
        assert_eq!(r, capacity(params.effective_snr(&query)));
    }

    #[test]
    fn rate_orders_with_error_target() {
        let (params, mut query) = unit_snr_params();
        let strict = achievable_rate(&params, &query).unwrap();
        query.error_prob = 0.2;
        assert!(strict < achievable_rate(&params, &query).unwrap());
    }

    #[test]
    fn rate_floors_at_zero() {
        let params = ChannelParams {
            blocklength: 1,
            ..ChannelParams::default()
        };
        let query = RateQuery {
            tx_power_w: 1e-9,
            error_prob: 1e-6,
            gain_sq: 1.0,
        };
        assert!(normal_approx_rate(params.effective_snr(&query), 1, 1e-6).unwrap() < 0.0);
        assert_eq!(achievable_rate(&params, &query).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let params = ChannelParams::default();
        let bad = RateQuery {
            tx_power_w: 0.1,
            error_prob: 1.0,
            gain_sq: 1.0,
        };
        assert!(achievable_rate(&params, &bad).is_err());
        let bad_params = ChannelParams {
            bandwidth_hz: 0.0,
            ..params
        };
        let ok = RateQuery {
            error_prob: 0.1,
            ..bad
        };
        assert!(achievable_rate(&bad_params, &ok).is_err());
    }

    #[test]
    fn rayleigh_moments() {
        let mut rng = seeded_rng(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut above = 0usize;
        for _ in 0..n {
            let g = sample_rayleigh_gain(&mut rng);
            sum += g;
            above += usize::from(g > 1.0);
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
        assert!((above as f64 / n as f64 - (-1.0f64).exp()).abs() < 0.005);
    }

    #[test]
    fn rayleigh_is_seeded() {
        let a: Vec<f64> = {
            let mut r = seeded_rng(5);
            (0..8).map(|_| sample_rayleigh_gain(&mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = seeded_rng(5);
            (0..8).map(|_| sample_rayleigh_gain(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn rate_monotone_where_positive(
            p in 0.01f64..2.0,
            q in 0.001f64..0.49,
            g in 0.01f64..5.0,
            m in 50u32..5000,
            scale in 1.01f64..3.0,
        ) {
            let params = ChannelParams { blocklength: m, ..ChannelParams::default() };
            let base = RateQuery { tx_power_w: p, error_prob: q, gain_sq: g };
            let r0 = achievable_rate(&params, &base).unwrap();
            prop_assume!(r0 > 0.0);
            let more_m = ChannelParams { blocklength: m * 2, ..params };
            prop_assert!(achievable_rate(&more_m, &base).unwrap() > r0);
            let more_q = RateQuery { error_prob: (q * scale).min(0.499), ..base };
            prop_assert!(achievable_rate(&params, &more_q).unwrap() > r0);
            let more_p = RateQuery { tx_power_w: p * scale, ..base };
            prop_assert!(achievable_rate(&params, &more_p).unwrap() > r0);
            let more_g = RateQuery { gain_sq: g * scale, ..base };
            prop_assert!(achievable_rate(&params, &more_g).unwrap() > r0);
            prop_assert!(r0 < capacity(params.effective_snr(&base)));
        }
    }
}
