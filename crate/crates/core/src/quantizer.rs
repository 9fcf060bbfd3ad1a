//! Stochastic fixed-point quantization of flat weight vectors.
//!
//! The format carries one sign/integer bit and `n - 1` fractional bits, so
//! representable values are `k / G` for integer `k` in `[-G, G - 1]` with
//! `G = 2^(n-1)`. Quantization clips into `[-1, 1 - 1/G]`, scales by `G`,
//! and rounds stochastically so the expectation of the result is the clipped
//! input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Widest supported bit-width.
pub const MAX_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QuantConfig {
    bits: u32,
}

impl QuantConfig {
    pub fn new(bits: u32) -> Result<Self> {
        Self::with_max(bits, MAX_BITS)
    }

    pub fn with_max(bits: u32, max_bits: u32) -> Result<Self> {
        ensure(max_bits <= MAX_BITS, || {
            format!("n_max = {max_bits} exceeds the supported {MAX_BITS}")
        })?;
        ensure((2..=max_bits).contains(&bits), || {
            format!("bit-width {bits} outside [2, {max_bits}]")
        })?;
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Quantization gain `G = 2^(n-1)`.
    pub fn gain(&self) -> i64 {
        1i64 << (self.bits - 1)
    }

    pub fn min_level(&self) -> i64 {
        -self.gain()
    }

    pub fn max_level(&self) -> i64 {
        self.gain() - 1
    }

    /// Largest representable value, `1 - 1/G`.
    pub fn upper_bound(&self) -> f64 {
        self.max_level() as f64 / self.gain() as f64
    }
}

impl TryFrom<u32> for QuantConfig {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        QuantConfig::new(bits)
    }
}

impl From<QuantConfig> for u32 {
    fn from(cfg: QuantConfig) -> u32 {
        cfg.bits
    }
}

/// Numeric precision used for weights and updates.
///
/// `Full` is the unquantized sentinel (`n = ∞`): values are only clipped to
/// `[-1, 1]` and never rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PrecisionRepr", into = "PrecisionRepr")]
pub enum Precision {
    Full,
    Fixed(QuantConfig),
}

/// Config-file form: a bit-width or the string `"full"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PrecisionRepr {
    Bits(u32),
    Name(String),
}

impl TryFrom<PrecisionRepr> for Precision {
    type Error = Error;

    fn try_from(r: PrecisionRepr) -> Result<Self> {
        match r {
            PrecisionRepr::Bits(n) => Precision::bits(n),
            PrecisionRepr::Name(s) if s == "full" => Ok(Precision::Full),
            PrecisionRepr::Name(s) => Err(Error::Validation(format!(
                "precision must be a bit-width or \"full\", got {s:?}"
            ))),
        }
    }
}

impl From<Precision> for PrecisionRepr {
    fn from(p: Precision) -> Self {
        match p {
            Precision::Full => PrecisionRepr::Name("full".into()),
            Precision::Fixed(cfg) => PrecisionRepr::Bits(cfg.bits),
        }
    }
}

impl Precision {
    pub fn bits(bits: u32) -> Result<Self> {
        QuantConfig::new(bits).map(Precision::Fixed)
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Precision::Full)
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            Precision::Full => 1.0,
            Precision::Fixed(cfg) => cfg.upper_bound(),
        }
    }

    pub fn clip_value(&self, x: f64) -> f64 {
        x.clamp(-1.0, self.upper_bound())
    }

    /// Clip in place without the NaN check; used on internal buffers.
    pub fn clip_in_place(&self, v: &mut [f64]) {
        let hi = self.upper_bound();
        for x in v {
            *x = x.clamp(-1.0, hi);
        }
    }

    /// Quantize-then-dequantize, or a plain clipped copy at full precision.
    pub fn round_trip<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Precision::Full => clip(v, self),
            Precision::Fixed(cfg) => Ok(dequantize(&quantize(v, *cfg, rng)?)),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Full => f.write_str("full"),
            Precision::Fixed(cfg) => write!(f, "{}", cfg.bits),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    levels: Vec<i64>,
    config: QuantConfig,
}

impl QuantizedVector {
    /// Builds a vector from raw grid indices, rejecting any outside `[-G, G-1]`.
    pub fn from_levels(levels: Vec<i64>, config: QuantConfig) -> Result<Self> {
        let (lo, hi) = (config.min_level(), config.max_level());
        if let Some(bad) = levels.iter().find(|&&l| l < lo || l > hi) {
            return Err(Error::Validation(format!(
                "level {bad} outside [{lo}, {hi}] for n = {}",
                config.bits
            )));
        }
        Ok(Self { levels, config })
    }

    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn reject_nan(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| x.is_nan()) {
        Some(i) => Err(Error::Validation(format!("NaN at index {i}"))),
        None => Ok(()),
    }
}

/// Saturates every component into the representable range of `precision`.
pub fn clip(v: &[f64], precision: &Precision) -> Result<Vec<f64>> {
    reject_nan(v)?;
    Ok(v.iter().map(|&x| precision.clip_value(x)).collect())
}

/// Rounds `x` down or up given a uniform draw `u` in `[0, 1)`: up iff `u` falls
/// below the fractional part.
pub fn stochastic_round_with(x: f64, u: f64) -> i64 {
    let floor = x.floor();
    let frac = x - floor;
    floor as i64 + i64::from(u < frac)
}

/// Unbiased stochastic rounding: `⌊x⌋ + 1` with probability equal to the
/// fractional part of `x`, else `⌊x⌋`.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> i64 {
    let floor = x.floor();
    if x == floor {
        // No draw on exact grid points keeps those values deterministic.
        return floor as i64;
    }
    stochastic_round_with(x, rng.gen::<f64>())
}

pub fn quantize<R: Rng + ?Sized>(
    v: &[f64],
    cfg: QuantConfig,
    rng: &mut R,
) -> Result<QuantizedVector> {
    reject_nan(v)?;
    let gain = cfg.gain() as f64;
    let hi = cfg.upper_bound();
    let levels = v
        .iter()
        .map(|&x| stochastic_round(x.clamp(-1.0, hi) * gain, rng))
        .collect();
    Ok(QuantizedVector {
        levels,
        config: cfg,
    })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    let gain = q.config.gain() as f64;
    q.levels.iter().map(|&l| l as f64 / gain).collect()
}

/// Nearest-level rounding. Test hook and activation path only; the training
/// path always rounds stochastically.
pub fn quantize_nearest(v: &[f64], cfg: QuantConfig) -> Result<QuantizedVector> {
    reject_nan(v)?;
    let gain = cfg.gain() as f64;
    let hi = cfg.upper_bound();
    let levels = v
        .iter()
        .map(|&x| (x.clamp(-1.0, hi) * gain).round() as i64)
        .map(|l| l.clamp(cfg.min_level(), cfg.max_level()))
        .collect();
    Ok(QuantizedVector {
        levels,
        config: cfg,
    })
}
