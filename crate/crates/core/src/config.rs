//! Run configuration: one TOML file with nested sections, or the `config`
//! object of a previously emitted JSON summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::cma::CmaConfig;
use crate::convergence::ConvergenceParams;
use crate::datasets::PartitionMode;
use crate::energy::DeviceProfile;
use crate::error::{ensure, Error, Result};
use crate::fl::{AggregationRule, LrSchedule};
use crate::quantizer::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Optimize,
    Train,
    Sweep,
    Bounds,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::Train => "train",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Bounds => "bounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Must agree with the CLI subcommand when present.
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub convergence: ConvergenceParams,
    pub device: DeviceProfile,
    pub channel: ChannelParams,
    pub objective: ObjectiveSection,
    pub optimize: OptimizeSection,
    pub sweep: SweepSection,
    pub bounds: BoundsSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    /// Bit-width used by `optimize`.
    pub bits: u32,
    pub tau_limit_s: f64,
    pub penalty_coeff: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            bits: 8,
            tau_limit_s: 1.0,
            penalty_coeff: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub initial_p_tx: Vec<f64>,
    pub initial_q: f64,
    pub p_tx_bounds: [f64; 2],
    pub q_bounds: [f64; 2],
    pub population_lambda: Option<usize>,
    pub sigma0: f64,
    pub max_generations: u64,
    pub tol_fun: f64,
    pub tol_x: f64,
    pub repair_coeff: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let cma = CmaConfig::default();
        Self {
            initial_p_tx: vec![0.5, 1.0, 1.5, 2.0],
            initial_q: 0.5,
            p_tx_bounds: [0.1, 2.0],
            q_bounds: [0.01, 0.99],
            population_lambda: cma.population_lambda,
            sigma0: cma.sigma0,
            max_generations: cma.max_generations,
            tol_fun: cma.tol_fun,
            tol_x: cma.tol_x,
            repair_coeff: cma.repair_coeff,
        }
    }
}

impl OptimizeSection {
    /// CMA-ES settings for the run started at `p_tx0`.
    pub fn cma_config(&self, p_tx0: f64, seed: u64) -> CmaConfig {
        CmaConfig {
            population_lambda: self.population_lambda,
            sigma0: self.sigma0,
            max_generations: self.max_generations,
            tol_fun: self.tol_fun,
            tol_x: self.tol_x,
            bounds: vec![self.p_tx_bounds, self.q_bounds],
            initial: Some(vec![p_tx0, self.initial_q]),
            repair_coeff: self.repair_coeff,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub bits: Vec<u32>,
    /// Operating point; when either is absent it comes from an optimizer
    /// run at the first initial power.
    pub p_tx: Option<f64>,
    pub q: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            bits: vec![4, 8, 16, 32],
            p_tx: None,
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub horizon: u64,
    pub q_values: Vec<f64>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            q_values: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.49],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        dim: usize,
        train_samples: usize,
        eval_samples: usize,
        spread: f64,
    },
    /// Paths are resolved against the config file's directory on load.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval_images: PathBuf,
        eval_labels: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            classes: 10,
            dim: 20,
            train_samples: 2000,
            eval_samples: 1000,
            spread: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub drop_probs: Vec<f64>,
    pub clients_n: usize,
    pub selected_k: usize,
    pub local_iters: u32,
    pub rounds: u64,
    pub target_accuracy: Option<f64>,
    /// Threshold reported as rounds-to-accuracy in the summary.
    pub accuracy_threshold: f64,
    pub precision: Precision,
    pub learning_rate: LrSchedule,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub tx_power_w: f64,
    pub aggregation: AggregationRule,
    pub quantize_on_receipt: bool,
    pub min_rate_error_prob: f64,
    pub partition: PartitionMode,
    pub shards_per_client: usize,
    /// Cap on samples per client after partitioning.
    pub samples_per_client: Option<usize>,
    /// Use only the first `subset` training samples.
    pub subset: Option<usize>,
    pub dataset: DatasetSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            drop_probs: vec![0.0, 0.1, 0.2],
            clients_n: 20,
            selected_k: 5,
            local_iters: 3,
            rounds: 30,
            target_accuracy: None,
            accuracy_threshold: 0.8,
            precision: Precision::Full,
            learning_rate: LrSchedule::Constant { rate: 0.5 },
            batch_size: 32,
            hidden: vec![32],
            init_scale: 0.1,
            tx_power_w: 0.1,
            aggregation: AggregationRule::AllSelected,
            quantize_on_receipt: true,
            min_rate_error_prob: 1e-9,
            partition: PartitionMode::Iid,
            shards_per_client: 2,
            samples_per_client: None,
            subset: None,
            dataset: DatasetSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text. Errors carry the line and column of the problem.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a `.toml` config or the `config` field of a `.json` summary.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let inner = value.get("config").cloned().ok_or_else(|| {
                Error::Config(format!("{}: summary has no config object", path.display()))
            })?;
            serde_json::from_value(inner)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml_str(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        };
        if let DatasetSpec::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
        } = &mut cfg.train.dataset
        {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [train_images, train_labels, eval_images, eval_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks the sections used by `kind`.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(declared) = self.experiment {
            if declared != kind {
                return Err(Error::Config(format!(
                    "config declares experiment {:?} but {:?} was requested",
                    declared.name(),
                    kind.name()
                )));
            }
        }
        self.convergence.validate()?;
        self.device.validate()?;
        self.channel.validate()?;
        match kind {
            ExperimentKind::Optimize => self.validate_optimize(),
            ExperimentKind::Sweep => {
                self.validate_optimize()?;
                let s = &self.sweep;
                ensure(!s.bits.is_empty(), || "sweep.bits is empty".into())?;
                ensure(s.bits.iter().all(|b| (2..=32).contains(b)), || {
                    "sweep.bits entries must lie in [2, 32]".into()
                })?;
                if let Some(p) = s.p_tx {
                    ensure(p > 0.0, || "sweep.p_tx must be positive".into())?;
                }
                if let Some(q) = s.q {
                    ensure(q > 0.0 && q < 1.0, || "sweep.q must lie in (0, 1)".into())?;
                }
                Ok(())
            }
            ExperimentKind::Bounds => {
                ensure(self.bounds.horizon >= 1, || {
                    "bounds.horizon must be >= 1".into()
                })?;
                ensure(
                    self.bounds.q_values.iter().all(|q| (0.0..1.0).contains(q)),
                    || "bounds.q_values entries must lie in [0, 1)".into(),
                )
            }
            ExperimentKind::Train => {
                let t = &self.train;
                ensure(!t.drop_probs.is_empty(), || {
                    "train.drop_probs is empty".into()
                })?;
                ensure(t.drop_probs.iter().all(|q| (0.0..1.0).contains(q)), || {
                    "train.drop_probs entries must lie in [0, 1)".into()
                })?;
                ensure((0.0..=1.0).contains(&t.accuracy_threshold), || {
                    "train.accuracy_threshold must lie in [0, 1]".into()
                })?;
                ensure(t.subset.is_none_or(|n| n > 0), || {
                    "train.subset must be positive".into()
                })?;
                ensure(t.shards_per_client >= 1, || {
                    "train.shards_per_client must be >= 1".into()
                })?;
                if let DatasetSpec::Synthetic {
                    classes,
                    dim,
                    train_samples,
                    eval_samples,
                    spread,
                } = t.dataset
                {
                    ensure(classes >= 2 && dim >= classes, || {
                        "synthetic dataset needs classes >= 2 and dim >= classes".into()
                    })?;
                    ensure(train_samples > 0 && eval_samples > 0, || {
                        "sample counts must be positive".into()
                    })?;
                    ensure(spread >= 0.0, || "spread must be >= 0".into())?;
                }
                Ok(())
            }
        }
    }

    fn validate_optimize(&self) -> Result<()> {
        let o = &self.optimize;
        ensure(!o.initial_p_tx.is_empty(), || {
            "optimize.initial_p_tx is empty".into()
        })?;
        ensure(o.p_tx_bounds[0] > 0.0, || {
            "optimize.p_tx_bounds must be positive".into()
        })?;
        ensure(o.q_bounds[0] > 0.0 && o.q_bounds[1] < 1.0, || {
            "optimize.q_bounds must lie inside (0, 1)".into()
        })?;
        ensure(self.objective.tau_limit_s > 0.0, || {
            "objective.tau_limit_s must be positive".into()
        })?;
        ensure((2..=32).contains(&self.objective.bits), || {
            "objective.bits must lie in [2, 32]".into()
        })?;
        for &p in &o.initial_p_tx {
            o.cma_config(p, 0).validate()?;
        }
        Ok(())
    }
}
