//! Closed-form convergence bound under client sampling, quantized updates
//! and packet drops.
//!
//! With step size `eta_t = step_beta / (t + gamma)` and `step_beta = 2/mu`,
//! the expected squared distance to the optimum obeys
//!
//! ```text
//! gap_{t+1} <= (1 - eta_t mu (1 - q)) gap_t + eta_t^2 E / (1 - q)
//! ```
//!
//! and the target envelope is `gap_t <= v / (t + gamma)`. The round budget
//! needed for an optimality gap of `eps` is `T = L v / (2 eps) - gamma`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Per-device gradient variance: one value for all devices, or one each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GradVariance {
    Uniform(f64),
    PerDevice(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceParams {
    pub smoothness_l: f64,
    pub strong_convexity_mu: f64,
    pub grad_var: GradVariance,
    pub non_iid_gamma: f64,
    pub grad_norm_bound_h: f64,
    pub local_iters: u32,
    pub quant_const_m: f64,
    pub initial_gap: f64,
    pub model_dim: f64,
    pub bits: u32,
    pub clients_n: usize,
    pub selected_k: usize,
    pub drop_prob: f64,
    pub target_eps: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self {
            smoothness_l: 0.097,
            strong_convexity_mu: 1.0,
            grad_var: GradVariance::Uniform(0.001),
            non_iid_gamma: 0.6,
            grad_norm_bound_h: 0.25,
            local_iters: 3,
            quant_const_m: 0.01,
            initial_gap: 0.01,
            model_dim: 421_642.0,
            bits: 8,
            clients_n: 100,
            selected_k: 10,
            drop_prob: 0.01,
            target_eps: 0.1,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.smoothness_l > 0.0, || "L must be > 0".into())?;
        ensure(self.strong_convexity_mu > 0.0, || "mu must be > 0".into())?;
        ensure((0.0..1.0).contains(&self.drop_prob), || {
            format!(
                "drop probability must lie in [0, 1), got {}",
                self.drop_prob
            )
        })?;
        ensure(self.target_eps > 0.0, || "target eps must be > 0".into())?;
        ensure(self.local_iters >= 1, || "I must be >= 1".into())?;
        ensure(
            2 <= self.selected_k && self.selected_k <= self.clients_n,
            || {
                format!(
                    "need 2 <= K <= N, got K = {}, N = {}",
                    self.selected_k, self.clients_n
                )
            },
        )?;
        ensure(self.bits >= 2, || "n must be >= 2".into())?;
        ensure(
            self.non_iid_gamma >= 0.0
                && self.grad_norm_bound_h >= 0.0
                && self.quant_const_m >= 0.0
                && self.initial_gap >= 0.0
                && self.model_dim > 0.0,
            || "Gamma, H, m, initial gap must be >= 0 and d > 0".into(),
        )?;
        match &self.grad_var {
            GradVariance::Uniform(s) => ensure(*s >= 0.0, || "sigma^2 must be >= 0".into()),
            GradVariance::PerDevice(v) => {
                if v.len() != self.clients_n {
                    return Err(Error::DimensionMismatch(format!(
                        "{} gradient variances for {} clients",
                        v.len(),
                        self.clients_n
                    )));
                }
                ensure(v.iter().all(|s| *s >= 0.0), || {
                    "sigma^2 must be >= 0".into()
                })
            }
        }
    }

    /// Step-size numerator, fixed at `2 / mu`.
    pub fn step_beta(&self) -> f64 {
        2.0 / self.strong_convexity_mu
    }

    fn grad_var_sum(&self) -> f64 {
        match &self.grad_var {
            GradVariance::Uniform(s) => s * self.clients_n as f64,
            GradVariance::PerDevice(v) => v.iter().sum(),
        }
    }
}

/// Variance bound `E` on the aggregated stochastic gradient.
pub fn variance_bound(p: &ConvergenceParams) -> Result<f64> {
    p.validate()?;
    Ok(variance_terms(p).iter().sum())
}

/// The four additive terms of `E`: gradient noise, non-IID drift,
/// local-step and sampling drift, quantization noise.
pub fn variance_terms(p: &ConvergenceParams) -> [f64; 4] {
    let n = p.clients_n as f64;
    let k = p.selected_k as f64;
    let i = p.local_iters as f64;
    let h2 = p.grad_norm_bound_h * p.grad_norm_bound_h;
    let noise = p.grad_var_sum() / (n * n);
    let drift = 6.0 * p.smoothness_l * p.non_iid_gamma;
    let local = (8.0 * (i - 1.0).powi(2) + 4.0 * (n - k) * i * i / (k * (n - 1.0))) * h2;
    let levels = 2f64.powi(p.bits as i32) - 1.0;
    let quant =
        4.0 * p.model_dim * i * i * p.quant_const_m * p.quant_const_m / (k * levels * levels);
    [noise, drift, local, quant]
}

/// Envelope constants `v` and `gamma` of `gap_t <= v / (t + gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub v: f64,
    pub gamma: f64,
}

/// `gamma = max(I, 8L / ((1-q) mu)) - 1`, then
/// `v = max(4E / ((1-q) mu^2), (gamma + 1) gap_1)`.
pub fn v_gamma(p: &ConvergenceParams) -> Result<DecaySchedule> {
    let e = variance_bound(p)?;
    let keep = 1.0 - p.drop_prob;
    let mu = p.strong_convexity_mu;
    let gamma = (p.local_iters as f64).max(8.0 * p.smoothness_l / (keep * mu)) - 1.0;
    let v = (4.0 * e / (keep * mu * mu)).max((gamma + 1.0) * p.initial_gap);
    Ok(DecaySchedule { v, gamma })
}

/// A `v` large enough for the drop-modified induction to close, valid for
/// `q < 1/2`: `4E / ((1-q)(1-2q) mu^2)`. Not used by the energy objective.
pub fn drop_consistent_schedule(p: &ConvergenceParams) -> Result<DecaySchedule> {
    ensure(p.drop_prob < 0.5, || {
        format!(
            "drop-consistent envelope needs q < 0.5, got {}",
            p.drop_prob
        )
    })?;
    let printed = v_gamma(p)?;
    let e = variance_bound(p)?;
    let keep = 1.0 - p.drop_prob;
    let mu = p.strong_convexity_mu;
    let v = (4.0 * e / (keep * (1.0 - 2.0 * p.drop_prob) * mu * mu))
        .max((printed.gamma + 1.0) * p.initial_gap);
    Ok(DecaySchedule {
        v,
        gamma: printed.gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundEstimate {
    /// `L v / (2 eps) - gamma`, unrounded and unclamped.
    pub raw: f64,
    /// `max(1, ceil(raw))`, for driving a simulation.
    pub rounds: u64,
}

pub fn required_rounds(p: &ConvergenceParams) -> Result<RoundEstimate> {
    let sched = v_gamma(p)?;
    let raw = p.smoothness_l * sched.v / (2.0 * p.target_eps) - sched.gamma;
    let rounds = if raw <= 1.0 { 1 } else { raw.ceil() as u64 };
    Ok(RoundEstimate { raw, rounds })
}

/// Optimality-gap bound `(L/2) v / (gamma + t)` after `t` rounds.
pub fn accuracy_gap(p: &ConvergenceParams, sched: &DecaySchedule, rounds: f64) -> f64 {
    0.5 * p.smoothness_l * sched.v / (sched.gamma + rounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: u64,
    pub gap: f64,
    pub envelope: f64,
}

/// Iterates the drop-modified recursion with equality from `gap_1`,
/// returning `(t, gap_t, v / (t + gamma))` for `t = 1..=horizon`.
pub fn gap_trajectory(
    p: &ConvergenceParams,
    sched: &DecaySchedule,
    horizon: u64,
) -> Result<Vec<GapPoint>> {
    p.validate()?;
    ensure(horizon >= 1, || "horizon must be >= 1".into())?;
    let e = variance_bound(p)?;
    let keep = 1.0 - p.drop_prob;
    let mu = p.strong_convexity_mu;
    let beta = p.step_beta();
    let mut gap = p.initial_gap;
    let mut out = Vec::with_capacity(horizon as usize);
    for t in 1..=horizon {
        let s = t as f64 + sched.gamma;
        out.push(GapPoint {
            t,
            gap,
            envelope: sched.v / s,
        });
        let eta = beta / s;
        gap = (1.0 - eta * mu * keep) * gap + eta * eta * e / keep;
    }
    Ok(out)
}

/// First round at which the recursion leaves the envelope, if any.
pub fn first_violation(
    p: &ConvergenceParams,
    sched: &DecaySchedule,
    horizon: u64,
) -> Result<Option<u64>> {
    Ok(gap_trajectory(p, sched, horizon)?
        .into_iter()
        .find(|pt| pt.gap > pt.envelope)
        .map(|pt| pt.t))
}

/// True iff `gap_t <= v / (t + gamma)` for every `t <= horizon`, using the
/// `v` and `gamma` returned by [`v_gamma`].
pub fn recursion_check(p: &ConvergenceParams, horizon: u64) -> Result<bool> {
    let sched = v_gamma(p)?;
    recursion_check_with(p, &sched, horizon)
}

pub fn recursion_check_with(
    p: &ConvergenceParams,
    sched: &DecaySchedule,
    horizon: u64,
) -> Result<bool> {
    Ok(first_violation(p, sched, horizon)?.is_none())
}
