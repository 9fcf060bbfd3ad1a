//! (mu_w, lambda)-CMA-ES over a box, searching in unit-cube coordinates.
//!
//! Candidates outside the box are evaluated at their clamped image plus a
//! quadratic repair term, and the unclamped sample drives the update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{stream_rng, Stream};

const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaConfig {
    /// `None` picks `4 + floor(3 ln dim)`.
    pub population_lambda: Option<usize>,
    /// Initial step as a fraction of the box width.
    pub sigma0: f64,
    pub max_generations: u64,
    pub tol_fun: f64,
    /// Step-size floor in unit-cube coordinates.
    pub tol_x: f64,
    pub bounds: Vec<[f64; 2]>,
    /// Starting mean; the box centre when `None`.
    pub initial: Option<Vec<f64>>,
    /// Weight of the squared unit-cube distance between a sample and its clamp.
    pub repair_coeff: f64,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population_lambda: None,
            sigma0: 0.3,
            max_generations: 1000,
            tol_fun: 1e-12,
            tol_x: 1e-12,
            bounds: vec![[0.0, 1.0]; 2],
            initial: None,
            repair_coeff: 1e3,
            seed: 0,
        }
    }
}

impl CmaConfig {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn lambda(&self) -> usize {
        self.population_lambda
            .unwrap_or_else(|| 4 + (3.0 * (self.dim() as f64).ln()).floor() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.bounds.is_empty(), || {
            "CMA-ES needs at least one dimension".into()
        })?;
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            ensure(lo.is_finite() && hi.is_finite() && lo < hi, || {
                format!("bounds[{i}] = [{lo}, {hi}] must satisfy low < high")
            })?;
        }
        ensure(self.lambda() >= 4, || {
            format!("population_lambda must be >= 4, got {}", self.lambda())
        })?;
        ensure(self.sigma0 > 0.0 && self.sigma0.is_finite(), || {
            "sigma0 must be positive".into()
        })?;
        ensure(self.max_generations >= 1, || {
            "max_generations must be >= 1".into()
        })?;
        ensure(self.tol_fun >= 0.0 && self.tol_x >= 0.0, || {
            "tolerances must be >= 0".into()
        })?;
        ensure(self.repair_coeff >= 0.0, || {
            "repair_coeff must be >= 0".into()
        })?;
        if let Some(x0) = &self.initial {
            ensure(x0.len() == self.dim(), || {
                format!(
                    "initial point has {} coordinates, bounds have {}",
                    x0.len(),
                    self.dim()
                )
            })?;
            for (i, (x, [lo, hi])) in x0.iter().zip(&self.bounds).enumerate() {
                ensure(lo <= x && x <= hi, || {
                    format!("initial[{i}] = {x} outside [{lo}, {hi}]")
                })?;
            }
        }
        Ok(())
    }

    fn to_box(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.bounds)
            .map(|(yi, [lo, hi])| lo + yi * (hi - lo))
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(xi, [lo, hi])| (xi - lo) / (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TolFun,
    TolX,
    MaxGenerations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub generation: u64,
    /// Distribution mean clamped into the box.
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// Best clamped-point value seen so far.
    pub best_value: f64,
    /// Lowest repaired fitness within this generation.
    pub generation_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub stop: StopReason,
    pub evaluations: u64,
    pub trace: Vec<Generation>,
}

/// Mutable search state, exposed for inspection in tests.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: u64,
    pub best: Option<(Vec<f64>, f64)>,
}

struct Strategy {
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Symmetrizes `cov` and lifts its spectrum when the condition number
/// exceeds the cap. Returns the eigendecomposition of the result.
fn condition(cov: &mut DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (&*cov + cov.transpose()) * 0.5;
    *cov = sym;
    let mut eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max / min > MAX_CONDITION {
        let lift = (max / MAX_CONDITION - min.min(0.0)).max(f64::MIN_POSITIVE);
        for i in 0..cov.nrows() {
            cov[(i, i)] += lift;
        }
        eig = SymmetricEigen::new(cov.clone());
    }
    debug_assert!(eig.eigenvalues.min() > 0.0, "covariance lost definiteness");
    eig
}

/// Repaired fitness: `f(clamp(x))` plus the quadratic distance penalty.
/// Also returns the clamped point (box coordinates) and its plain value.
fn repaired<F>(f: &F, cfg: &CmaConfig, y: &[f64]) -> (f64, Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let clamped: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let dist2: f64 = y.iter().zip(&clamped).map(|(a, b)| (a - b) * (a - b)).sum();
    let x = cfg.to_box(&clamped);
    let value = f(&x);
    (value + cfg.repair_coeff * dist2, x, value)
}

/// Minimizes `f` over the configured box.
///
/// Candidate evaluations run in parallel; results are consumed in sample
/// order, so the outcome depends only on the seed.
pub fn cma_minimize<F>(f: F, cfg: &CmaConfig) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.dim();
    let s = Strategy::new(n, cfg.lambda());
    let x0 = cfg
        .initial
        .clone()
        .unwrap_or_else(|| cfg.bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect());
    let mut state = CmaState {
        mean: DVector::from_vec(cfg.to_unit(&x0)),
        sigma: cfg.sigma0,
        cov: DMatrix::identity(n, n),
        p_sigma: DVector::zeros(n),
        p_c: DVector::zeros(n),
        generation: 0,
        best: None,
    };
    let mut rng = stream_rng(cfg.seed, Stream::Optimizer, 0, 0);
    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let history_len = 10 + (30.0 * n as f64 / s.lambda as f64).ceil() as usize;
    let mut history: Vec<f64> = Vec::new();
    let mut stop = StopReason::MaxGenerations;

    while state.generation < cfg.max_generations {
        let eig = condition(&mut state.cov);
        let b = &eig.eigenvectors;
        let d = eig.eigenvalues.map(f64::sqrt);
        let bd = b * DMatrix::from_diagonal(&d);
        let inv_sqrt = b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();

        let steps: Vec<DVector<f64>> = (0..s.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &bd * z
            })
            .collect();
        let samples: Vec<Vec<f64>> = steps
            .iter()
            .map(|y| (&state.mean + y * state.sigma).iter().copied().collect())
            .collect();
        let evals: Vec<(f64, Vec<f64>, f64)> =
            samples.par_iter().map(|y| repaired(&f, cfg, y)).collect();
        evaluations += s.lambda as u64;

        for (_, x, value) in &evals {
            if state.best.as_ref().is_none_or(|(_, b)| value < b) {
                state.best = Some((x.clone(), *value));
            }
        }
        let mut order: Vec<usize> = (0..s.lambda).collect();
        order.sort_by(|&a, &b| evals[a].0.total_cmp(&evals[b].0).then(a.cmp(&b)));

        let mut y_w = DVector::zeros(n);
        for (w, &i) in s.weights.iter().zip(&order) {
            y_w += &steps[i] * *w;
        }
        state.mean += &y_w * state.sigma;

        let cs = s.c_sigma;
        state.p_sigma =
            &state.p_sigma * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * s.mu_eff).sqrt();
        let g = (state.generation + 1) as f64;
        let ps_norm = state.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * s.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        state.p_c =
            &state.p_c * (1.0 - s.c_c) + &y_w * (hs * (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt());
        let delta_h = (1.0 - hs) * s.c_c * (2.0 - s.c_c);

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, &i) in s.weights.iter().zip(&order) {
            rank_mu += &steps[i] * steps[i].transpose() * *w;
        }
        state.cov = &state.cov * (1.0 + s.c_1 * delta_h - s.c_1 - s.c_mu)
            + &state.p_c * state.p_c.transpose() * s.c_1
            + rank_mu * s.c_mu;
        state.sigma *= ((cs / s.d_sigma) * (ps_norm / s.chi_n - 1.0)).exp();
        state.generation += 1;

        let generation_best = evals[order[0]].0;
        let best_value = state.best.as_ref().map_or(f64::INFINITY, |b| b.1);
        let mean_unit: Vec<f64> = state.mean.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        trace.push(Generation {
            generation: state.generation,
            mean: cfg.to_box(&mean_unit),
            sigma: state.sigma,
            best_value,
            generation_best,
        });

        history.push(generation_best);
        if history.len() > history_len {
            history.remove(0);
        }
        let spread = |v: &[f64]| {
            let (lo, hi) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(*x), hi.max(*x))
                });
            hi - lo
        };
        let gen_values: Vec<f64> = evals.iter().map(|e| e.0).collect();
        if history.len() == history_len && spread(&history).max(spread(&gen_values)) <= cfg.tol_fun
        {
            stop = StopReason::TolFun;
            break;
        }
        let max_sd = (0..n).map(|i| state.cov[(i, i)].sqrt()).fold(0.0, f64::max);
        if state.sigma * max_sd < cfg.tol_x {
            stop = StopReason::TolX;
            break;
        }
    }
    let (best_point, best_value) = state.best.expect("at least one generation ran");
    Ok(CmaResult {
        best_point,
        best_value,
        stop,
        evaluations,
        trace,
    })
}
