//! The four CLI experiments. Each writes CSV tables and a JSON summary into
//! an output directory; wall time goes to a separate `timing.json` so the
//! other files are byte-identical across reruns.
//!
//! Every CSV starts with a `# schema=... config_sha256=... seed=...` line
//! followed by a header row.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cma::{cma_minimize, CmaResult};
use crate::config::{DatasetSpec, ExperimentKind, RunConfig};
use crate::convergence::{
    drop_consistent_schedule, first_violation, gap_trajectory, required_rounds, v_gamma,
    variance_bound, variance_terms, ConvergenceParams,
};
use crate::datasets::{partition, read_idx, synth_blobs, ClientPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::fl::{run_federation, FederationRun, FlConfig};
use crate::objective::{objective_value, sweep_bits, EnergyObjective, ZERO_RATE_PENALTY};
use crate::rng::{derive_seed, Stream};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub subset: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub summary: Value,
    /// Human-readable lines for the terminal.
    pub report: Vec<String>,
}

/// Applies CLI overrides, pins the experiment kind and validates.
pub fn resolve(mut cfg: RunConfig, kind: ExperimentKind, opts: RunOptions) -> Result<RunConfig> {
    cfg.validate(kind)?;
    cfg.experiment = Some(kind);
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(n) = opts.subset {
        cfg.train.subset = Some(n);
    }
    cfg.validate(kind)?;
    Ok(cfg)
}

/// SHA-256 of the canonical JSON form of a resolved config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs `kind` and writes its outputs into `out`.
pub fn run(
    cfg: RunConfig,
    kind: ExperimentKind,
    opts: RunOptions,
    out: &Path,
) -> Result<Artifacts> {
    let cfg = resolve(cfg, kind, opts)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let artifacts = match kind {
        ExperimentKind::Optimize => cmd_optimize(&cfg, out)?,
        ExperimentKind::Train => cmd_train(&cfg, out)?,
        ExperimentKind::Sweep => cmd_sweep(&cfg, out)?,
        ExperimentKind::Bounds => cmd_bounds(&cfg, out)?,
    };
    let timing = out.join("timing.json");
    let body = json!({ "experiment": kind.name(), "wall_time_s": start.elapsed().as_secs_f64() });
    write_text(
        &timing,
        &format!("{}\n", serde_json::to_string_pretty(&body)?),
    )?;
    Ok(artifacts)
}

struct Writer<'a> {
    out: &'a Path,
    kind: ExperimentKind,
    hash: String,
    seed: u64,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(cfg: &RunConfig, out: &'a Path) -> Self {
        Self {
            out,
            kind: cfg.experiment.expect("resolved config"),
            hash: config_hash(cfg),
            seed: cfg.seed,
            files: Vec::new(),
        }
    }

    fn csv<R: AsRef<[String]>>(
        &mut self,
        name: &str,
        table: &str,
        header: &[&str],
        rows: &[R],
    ) -> Result<()> {
        let path = self.out.join(name);
        let mut text = format!(
            "# schema=qfedsim.{}.{table}.v{CSV_SCHEMA_VERSION} config_sha256={} seed={}\n",
            self.kind.name(),
            self.hash,
            self.seed
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.as_ref())?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?;
        text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        write_text(&path, &text)?;
        self.files.push(path);
        Ok(())
    }

    fn summary(&mut self, cfg: &RunConfig, results: Value) -> Result<Value> {
        let path = self.out.join(format!("{}_summary.json", self.kind.name()));
        let body = json!({
            "schema": format!("qfedsim.{}.summary.v{CSV_SCHEMA_VERSION}", self.kind.name()),
            "config_sha256": self.hash,
            "seed": self.seed,
            "config": cfg,
            "results": results,
        });
        write_text(
            &path,
            &format!("{}\n", serde_json::to_string_pretty(&body)?),
        )?;
        self.files.push(path);
        Ok(body)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    Ok(serde_json::to_value(x)?)
}

/// The energy objective described by `cfg` at `bits`.
pub fn build_objective(cfg: &RunConfig, bits: u32) -> Result<EnergyObjective> {
    let mut obj =
        EnergyObjective::homogeneous(cfg.convergence.clone(), cfg.device, cfg.channel, bits);
    obj.tau_limit_s = cfg.objective.tau_limit_s;
    obj.penalty_coeff = cfg.objective.penalty_coeff;
    obj.validate()?;
    Ok(obj)
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeRun {
    pub initial_p_tx: f64,
    pub best_p_tx: f64,
    pub best_q: f64,
    pub best_value: f64,
    pub raw_energy_j: f64,
    pub tau_pr_s: f64,
    pub feasible: bool,
    pub stop: crate::cma::StopReason,
    pub generations: usize,
    pub evaluations: u64,
}

/// Runs CMA-ES from one initial power and returns the raw result.
pub fn optimize_from(cfg: &RunConfig, obj: &EnergyObjective, index: usize) -> Result<CmaResult> {
    let p0 = cfg.optimize.initial_p_tx[index];
    let seed = derive_seed(cfg.seed, Stream::Optimizer, index as u64, 0);
    let cma = cfg.optimize.cma_config(p0, seed);
    cma_minimize(
        |x| objective_value(obj, x[0], x[1]).map_or(ZERO_RATE_PENALTY, |v| v.penalized),
        &cma,
    )
}

fn summarize_run(obj: &EnergyObjective, p0: f64, r: &CmaResult) -> Result<OptimizeRun> {
    let at = objective_value(obj, r.best_point[0], r.best_point[1])?;
    Ok(OptimizeRun {
        initial_p_tx: p0,
        best_p_tx: r.best_point[0],
        best_q: r.best_point[1],
        best_value: r.best_value,
        raw_energy_j: at.raw_energy_j,
        tau_pr_s: at.tau_pr_s,
        feasible: at.feasible(),
        stop: r.stop,
        generations: r.trace.len(),
        evaluations: r.evaluations,
    })
}

pub fn cmd_optimize(cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let obj = build_objective(cfg, cfg.objective.bits)?;
    let mut w = Writer::new(cfg, out);
    let mut runs = Vec::new();
    let header = [
        "generation",
        "mean_ptx",
        "mean_q",
        "best_value",
        "raw_energy_j",
        "tau_pr_s",
        "constraint_violation_s",
        "sigma",
    ];
    for (i, &p0) in cfg.optimize.initial_p_tx.iter().enumerate() {
        let r = optimize_from(cfg, &obj, i)?;
        let mut rows = Vec::with_capacity(r.trace.len());
        for g in &r.trace {
            let at = objective_value(&obj, g.mean[0], g.mean[1])?;
            rows.push(vec![
                g.generation.to_string(),
                f(g.mean[0]),
                f(g.mean[1]),
                f(g.best_value),
                f(at.raw_energy_j),
                f(at.tau_pr_s),
                f(at.violation_s.max(0.0)),
                f(g.sigma),
            ]);
        }
        w.csv(
            &format!("optimize_trace_init{i}.csv"),
            "trace",
            &header,
            &rows,
        )?;
        runs.push(summarize_run(&obj, p0, &r)?);
    }
    let best = runs
        .iter()
        .min_by(|a, b| a.best_value.total_cmp(&b.best_value))
        .expect("at least one initialization")
        .clone();
    let report = runs
        .iter()
        .map(|r| {
            format!(
                "init P_tx={}: P_tx={:.4} q={:.4} energy={:.6} J tau_pr={:.4} s ({:?})",
                r.initial_p_tx, r.best_p_tx, r.best_q, r.raw_energy_j, r.tau_pr_s, r.stop
            )
        })
        .collect();
    let summary = w.summary(
        cfg,
        json!({ "bits": cfg.objective.bits, "runs": to_value(&runs)?, "best": to_value(&best)? }),
    )?;
    Ok(Artifacts {
        files: w.files,
        summary,
        report,
    })
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let (p_tx, q, source) = match (cfg.sweep.p_tx, cfg.sweep.q) {
        (Some(p), Some(q)) => (p, q, "config"),
        _ => {
            let obj = build_objective(cfg, cfg.objective.bits)?;
            let r = optimize_from(cfg, &obj, 0)?;
            (
                cfg.sweep.p_tx.unwrap_or(r.best_point[0]),
                cfg.sweep.q.unwrap_or(r.best_point[1]),
                "optimizer",
            )
        }
    };
    let obj = build_objective(cfg, cfg.objective.bits)?;
    let rows = sweep_bits(&obj, &cfg.sweep.bits, p_tx, q)?;
    let mut w = Writer::new(cfg, out);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.bits.to_string(),
                f(r.round_energy_j),
                f(r.rounds_raw),
                f(r.total_energy_j),
                f(r.round_time_s),
                f(r.total_time_s),
                r.feasible.to_string(),
                r.savings_vs_32_pct.map(f).unwrap_or_default(),
            ]
        })
        .collect();
    w.csv(
        "sweep.csv",
        "sweep",
        &[
            "bits",
            "round_energy_j",
            "rounds_raw",
            "total_energy_j",
            "round_time_s",
            "total_time_s",
            "feasible",
            "savings_vs_32_pct",
        ],
        &table,
    )?;
    let report = rows
        .iter()
        .map(|r| {
            format!(
                "n={:>2}: energy={:.6} J time={:.6} s T={:.4} savings={:.2}%",
                r.bits,
                r.total_energy_j,
                r.total_time_s,
                r.rounds_raw,
                r.savings_vs_32_pct.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let summary = w.summary(
        cfg,
        json!({ "p_tx": p_tx, "q": q, "operating_point": source, "rows": to_value(&rows)? }),
    )?;
    Ok(Artifacts {
        files: w.files,
        summary,
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsRow {
    pub q: f64,
    pub variance_e: f64,
    pub v: f64,
    pub gamma: f64,
    pub rounds_raw: f64,
    pub rounds: u64,
    pub envelope_holds: bool,
    pub first_violation: Option<u64>,
}

fn bounds_row(p: &ConvergenceParams, horizon: u64) -> Result<BoundsRow> {
    let sched = v_gamma(p)?;
    let t = required_rounds(p)?;
    let violation = first_violation(p, &sched, horizon)?;
    Ok(BoundsRow {
        q: p.drop_prob,
        variance_e: variance_bound(p)?,
        v: sched.v,
        gamma: sched.gamma,
        rounds_raw: t.raw,
        rounds: t.rounds,
        envelope_holds: violation.is_none(),
        first_violation: violation,
    })
}

pub fn cmd_bounds(cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let p = &cfg.convergence;
    let horizon = cfg.bounds.horizon;
    let head = bounds_row(p, horizon)?;
    let sched = v_gamma(p)?;
    let consistent = if p.drop_prob < 0.5 {
        Some(drop_consistent_schedule(p)?)
    } else {
        None
    };
    let traj = gap_trajectory(p, &sched, horizon)?;
    let mut w = Writer::new(cfg, out);
    let rows: Vec<Vec<String>> = traj
        .iter()
        .map(|pt| {
            vec![
                pt.t.to_string(),
                f(pt.gap),
                f(pt.envelope),
                consistent
                    .map(|s| f(s.v / (pt.t as f64 + s.gamma)))
                    .unwrap_or_default(),
            ]
        })
        .collect();
    w.csv(
        "bounds_trajectory.csv",
        "trajectory",
        &["t", "gap", "envelope", "drop_consistent_envelope"],
        &rows,
    )?;
    let mut sweep = Vec::new();
    for &q in &cfg.bounds.q_values {
        let pq = ConvergenceParams {
            drop_prob: q,
            ..p.clone()
        };
        sweep.push(bounds_row(&pq, horizon)?);
    }
    let table: Vec<Vec<String>> = sweep
        .iter()
        .map(|r| {
            vec![
                f(r.q),
                f(r.variance_e),
                f(r.v),
                f(r.gamma),
                f(r.rounds_raw),
                r.rounds.to_string(),
                r.envelope_holds.to_string(),
                r.first_violation.map(|t| t.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    w.csv(
        "bounds_q_sweep.csv",
        "q_sweep",
        &[
            "q",
            "variance_e",
            "v",
            "gamma",
            "rounds_raw",
            "rounds",
            "envelope_holds",
            "first_violation",
        ],
        &table,
    )?;
    let terms = variance_terms(p);
    let mut report = vec![
        format!("E     = {}", head.variance_e),
        format!("v     = {}", head.v),
        format!("gamma = {}", head.gamma),
        format!("T     = {} (raw {})", head.rounds, head.rounds_raw),
    ];
    match head.first_violation {
        None => report.push(format!("envelope holds to t = {horizon}")),
        Some(t) => report.push(format!("envelope first exceeded at t = {t}")),
    }
    let summary = w.summary(
        cfg,
        json!({
            "variance_e": head.variance_e,
            "variance_terms": terms,
            "v": head.v,
            "gamma": head.gamma,
            "rounds_raw": head.rounds_raw,
            "rounds": head.rounds,
            "horizon": horizon,
            "envelope_holds": head.envelope_holds,
            "first_violation": head.first_violation,
            "drop_consistent_v": consistent.map(|s| s.v),
            "q_sweep": to_value(&sweep)?,
        }),
    )?;
    Ok(Artifacts {
        files: w.files,
        summary,
        report,
    })
}

/// Loads or generates train/eval data and partitions it over the clients.
pub fn load_train_data(
    cfg: &RunConfig,
) -> Result<(LabeledDataset, LabeledDataset, ClientPartition)> {
    let t = &cfg.train;
    let (mut data, eval) = match &t.dataset {
        DatasetSpec::Synthetic {
            classes,
            dim,
            train_samples,
            eval_samples,
            spread,
        } => (
            synth_blobs(
                *classes,
                *train_samples,
                *dim,
                *spread,
                derive_seed(cfg.seed, Stream::Synthetic, 1, 0),
            )?,
            synth_blobs(
                *classes,
                *eval_samples,
                *dim,
                *spread,
                derive_seed(cfg.seed, Stream::Synthetic, 2, 0),
            )?,
        ),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
        } => (
            read_idx(train_images, train_labels)?,
            read_idx(eval_images, eval_labels)?,
        ),
    };
    if let Some(n) = t.subset {
        if n < data.len() {
            data = data.select(&(0..n).collect::<Vec<_>>());
        }
    }
    let mut part = partition(
        &data,
        t.clients_n,
        t.partition,
        t.shards_per_client,
        cfg.seed,
    )?;
    if let Some(cap) = t.samples_per_client {
        part = part.capped(cap)?;
    }
    Ok((data, eval, part))
}

/// Simulator settings for one drop probability.
pub fn fl_config(cfg: &RunConfig, drop_prob: f64) -> FlConfig {
    let t = &cfg.train;
    FlConfig {
        clients_n: t.clients_n,
        selected_k: t.selected_k,
        local_iters: t.local_iters,
        rounds: t.rounds,
        target_accuracy: t.target_accuracy,
        precision: t.precision,
        drop_prob,
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        seed: cfg.seed,
        channel: cfg.channel,
        tx_power_w: t.tx_power_w,
        device: cfg.device,
        aggregation: t.aggregation,
        hidden: t.hidden.clone(),
        init_scale: t.init_scale,
        quantize_on_receipt: t.quantize_on_receipt,
        min_rate_error_prob: t.min_rate_error_prob,
    }
}

/// One federation per configured drop probability, in config order.
pub fn train_runs(cfg: &RunConfig) -> Result<Vec<(f64, FederationRun)>> {
    let (data, eval, part) = load_train_data(cfg)?;
    cfg.train
        .drop_probs
        .iter()
        .map(|&q| Ok((q, run_federation(&fl_config(cfg, q), &part, &data, &eval)?)))
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let runs = train_runs(cfg)?;
    let mut w = Writer::new(cfg, out);
    let threshold = cfg.train.accuracy_threshold;
    let quantization_disabled = cfg.train.precision.is_full();

    for (q, run) in &runs {
        let rounds: Vec<Vec<String>> = run
            .records
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    f(r.learning_rate),
                    r.delivered().to_string(),
                    r.zero_rate_count().to_string(),
                    f(r.update_norm),
                    f(r.train_accuracy),
                    f(r.train_loss),
                    f(r.val_accuracy),
                    f(r.val_loss),
                    f(r.round_energy_j),
                    f(r.cumulative_energy_j),
                    f(r.round_time_s),
                ]
            })
            .collect();
        w.csv(
            &format!("train_rounds_q{q}.csv"),
            "rounds",
            &[
                "round",
                "learning_rate",
                "delivered",
                "zero_rate",
                "update_norm",
                "train_accuracy",
                "train_loss",
                "val_accuracy",
                "val_loss",
                "round_energy_j",
                "cumulative_energy_j",
                "round_time_s",
            ],
            &rounds,
        )?;
        let clients: Vec<Vec<String>> = run
            .records
            .iter()
            .flat_map(|r| {
                r.clients.iter().map(move |c| {
                    vec![
                        r.round.to_string(),
                        c.client.to_string(),
                        c.lambda.to_string(),
                        c.zero_rate.to_string(),
                        f(c.gain_sq),
                        f(c.rate_bpcu),
                        f(c.local_j),
                        f(c.uplink_j),
                        f(c.tx_time_s),
                        f(c.comp_time_s),
                    ]
                })
            })
            .collect();
        w.csv(
            &format!("train_clients_q{q}.csv"),
            "clients",
            &[
                "round",
                "client",
                "lambda",
                "zero_rate",
                "gain_sq",
                "rate_bpcu",
                "local_j",
                "uplink_j",
                "tx_time_s",
                "comp_time_s",
            ],
            &clients,
        )?;
    }

    type Metric = fn(&crate::fl::RoundRecord) -> f64;
    let curves: [(&str, Metric); 4] = [
        ("train_accuracy", |r| r.train_accuracy),
        ("train_loss", |r| r.train_loss),
        ("val_accuracy", |r| r.val_accuracy),
        ("val_loss", |r| r.val_loss),
    ];
    for (name, metric) in curves {
        let rows: Vec<Vec<String>> = runs
            .iter()
            .flat_map(|(q, run)| {
                run.records
                    .iter()
                    .map(move |r| vec![f(*q), r.round.to_string(), f(metric(r))])
            })
            .collect();
        w.csv(
            &format!("curve_{name}.csv"),
            name,
            &["q", "round", "value"],
            &rows,
        )?;
    }

    let mut per_q = Vec::new();
    let mut report = Vec::new();
    for (q, run) in &runs {
        let last = run.final_record().expect("at least one round");
        let to_threshold = run.rounds_to_accuracy(threshold);
        report.push(format!(
            "q={q}: final val acc={:.4} loss={:.4} rounds-to-{threshold}={} energy={:.6} J",
            last.val_accuracy,
            last.val_loss,
            to_threshold.map_or("never".into(), |t| t.to_string()),
            last.cumulative_energy_j
        ));
        per_q.push(json!({
            "q": q,
            "rounds_run": run.records.len(),
            "final_train_accuracy": last.train_accuracy,
            "final_val_accuracy": last.val_accuracy,
            "final_val_loss": last.val_loss,
            "rounds_to_threshold": to_threshold,
            "total_energy_j": last.cumulative_energy_j,
            "delivered_updates": run.records.iter().map(|r| r.delivered()).sum::<usize>(),
            "model_params": run.arch.num_params(),
        }));
    }
    if quantization_disabled {
        report.push("quantization disabled (full precision)".into());
    }
    let summary = w.summary(
        cfg,
        json!({
            "precision": cfg.train.precision,
            "quantization_disabled": quantization_disabled,
            "accuracy_threshold": threshold,
            "runs": per_q,
        }),
    )?;
    Ok(Artifacts {
        files: w.files,
        summary,
        report,
    })
}
