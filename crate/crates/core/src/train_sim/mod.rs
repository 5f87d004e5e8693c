//! Deterministic simulated data-parallel training: several workers
//! compute gradients on disjoint shards, per-layer compression is
//! applied with optional error feedback, the decoded gradients are
//! averaged, and one optimizer steps the shared model. Planning
//! schemes periodically rebuild error/size tables from accumulated
//! gradients and swap in a new per-layer assignment.

mod checkpoint;
mod dataset;
mod model;
mod stats;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{minibatch_indices, Dataset, DatasetConfig};
pub use model::{mlp_layer_specs, Mlp, Sgd};
pub use stats::{metric_correlation, pearson, spearman};

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::comm_model::{assign_buckets, collect_timing_samples, fit_timing, BucketLayout, TimingModel};
use crate::compressors::{
    compress, global_topk, CompressionParam, CompressorConfig, MethodFamily,
};
use crate::error::{Error, Result};
use crate::error_tables::{
    build_tables, ErrorSizeTable, GradientAccumulator, MethodRange, TableParams,
};
use crate::layer::LayerSpec;
use crate::planner::{bucket_priority_plan, dp_plan, kmeans_plan, time_weighted_plan, Plan};
use crate::seeds::{derive_seed, stream_rng, Stream};
use crate::trace::GradientTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// No compression at all.
    None,
    /// Every layer keeps the default parameter.
    Uniform,
    /// Budgeted per-layer planning, size objective.
    Lgreco,
    /// Budgeted planning weighted by fitted per-bucket time costs.
    LgrecoTime,
    /// Budgeted planning weighted by bucket position.
    LgrecoBucket,
    /// Layers clustered by size and default error, one parameter per
    /// cluster.
    Kmeans,
    /// One magnitude top-k over the concatenation of all layers.
    GlobalTopk,
    /// A caller-supplied per-layer assignment, never replanned.
    FixedPlan,
}

impl Scheme {
    pub fn compresses(self) -> bool {
        self != Scheme::None
    }

    /// Schemes that rebuild error/size tables at window boundaries.
    pub fn needs_tables(self) -> bool {
        matches!(
            self,
            Scheme::Lgreco | Scheme::LgrecoTime | Scheme::LgrecoBucket | Scheme::Kmeans
        )
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(Scheme::None),
            "uniform" => Ok(Scheme::Uniform),
            "lgreco" => Ok(Scheme::Lgreco),
            "lgreco_time" => Ok(Scheme::LgrecoTime),
            "lgreco_bucket" => Ok(Scheme::LgrecoBucket),
            "kmeans" => Ok(Scheme::Kmeans),
            "global_topk" => Ok(Scheme::GlobalTopk),
            "fixed_plan" => Ok(Scheme::FixedPlan),
            other => Err(Error::InvalidParameter(format!("unknown scheme {other}"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::None => "none",
            Scheme::Uniform => "uniform",
            Scheme::Lgreco => "lgreco",
            Scheme::LgrecoTime => "lgreco_time",
            Scheme::LgrecoBucket => "lgreco_bucket",
            Scheme::Kmeans => "kmeans",
            Scheme::GlobalTopk => "global_topk",
            Scheme::FixedPlan => "fixed_plan",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
        }
    }
}

/// Synthetic link parameters used to fit a timing model for the
/// time-weighted scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub bandwidth_bits_per_s: f64,
    pub backward_s_per_element: f64,
    pub n_samples: usize,
    pub ratio_range: (f64, f64),
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            bandwidth_bits_per_s: 10e9,
            backward_s_per_element: 2e-9,
            n_samples: 256,
            ratio_range: (1.0, 64.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansConfig {
    pub clusters: usize,
    /// One parameter per cluster, coarsest first; clusters are ordered
    /// by mean default error, so the lowest-error cluster compresses
    /// hardest.
    pub params: Vec<CompressionParam>,
}

/// A default compression parameter plus the candidate list planning
/// may pick from.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub default: CompressionParam,
    /// Explicit candidates; derived from the default when absent.
    pub candidates: Option<Vec<CompressionParam>>,
}

impl MethodSpec {
    pub fn new(default: CompressionParam) -> Self {
        Self {
            default,
            candidates: None,
        }
    }

    pub fn resolve(&self) -> Result<(MethodRange, CompressionParam)> {
        let range = match &self.candidates {
            Some(c) => MethodRange::explicit(c.clone())?,
            None => MethodRange::from_default(&self.default)?,
        };
        if range.position_of(&self.default).is_none() {
            return Err(Error::InvalidParameter(format!(
                "default {} is not among the candidates",
                self.default
            )));
        }
        Ok((range, self.default))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub workers: usize,
    /// Full width chain, input first, classes last.
    pub widths: Vec<usize>,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size_per_worker: usize,
    pub total_steps: u64,
    /// Steps trained uncompressed before any compression starts.
    pub warmup_steps: u64,
    pub replan_period_steps: u64,
    /// 0 disables accuracy evaluation.
    pub eval_every_steps: u64,
    /// Fixed prefix of the dataset used for accuracy and probe loss.
    pub eval_samples: usize,
    pub scheme: Scheme,
    pub method: Option<MethodSpec>,
    /// Error budget resolution for table building.
    pub budget_steps: u32,
    pub bucket_capacity_bytes: u64,
    pub timing: Option<TimingConfig>,
    pub kmeans: Option<KmeansConfig>,
    pub fixed_assignment: Option<Vec<CompressionParam>>,
    /// Completed-step counts at which to snapshot the model.
    pub checkpoint_steps: Vec<u64>,
    pub seed: u64,
}

impl SimConfig {
    /// The default desk-scale workload: a heterogeneous classifier on
    /// a seeded Gaussian-mixture task. Label noise pins the loss floor
    /// well above zero so converged runs are comparable across schemes.
    pub fn toy(scheme: Scheme, seed: u64) -> Self {
        Self {
            workers: 4,
            widths: vec![64, 512, 32, 512, 32, 256, 16, 10],
            dataset: DatasetConfig {
                label_noise: 0.3,
                ..DatasetConfig::default()
            },
            optimizer: OptimizerConfig {
                learning_rate: 0.003,
                momentum: 0.9,
            },
            batch_size_per_worker: 16,
            total_steps: 500,
            warmup_steps: 100,
            replan_period_steps: 100,
            eval_every_steps: 0,
            eval_samples: 1024,
            scheme,
            method: None,
            budget_steps: 10_000,
            bucket_capacity_bytes: 64 * 1024,
            timing: None,
            kmeans: None,
            fixed_assignment: None,
            checkpoint_steps: Vec::new(),
            seed,
        }
    }

    pub fn n_tensors(&self) -> usize {
        2 * (self.widths.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.batch_size_per_worker == 0 {
            return Err(Error::InvalidParameter(
                "need at least one worker and a positive batch size".into(),
            ));
        }
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter(format!(
                "need at least two positive layer widths, got {:?}",
                self.widths
            )));
        }
        self.dataset.validate()?;
        if self.dataset.n_features != self.widths[0] {
            return Err(Error::ShapeMismatch(format!(
                "dataset has {} features but the model expects {}",
                self.dataset.n_features, self.widths[0]
            )));
        }
        if self.dataset.n_classes != *self.widths.last().unwrap() {
            return Err(Error::ShapeMismatch(format!(
                "dataset has {} classes but the model emits {}",
                self.dataset.n_classes,
                self.widths.last().unwrap()
            )));
        }
        if self.dataset.n_samples < self.workers {
            return Err(Error::InvalidParameter(
                "fewer samples than workers leaves empty shards".into(),
            ));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(o.momentum.is_finite() && (0.0..1.0).contains(&o.momentum)) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return Err(Error::InvalidParameter(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.replan_period_steps == 0 {
            return Err(Error::InvalidParameter("replan period must be positive".into()));
        }
        if self.budget_steps == 0 {
            return Err(Error::InvalidParameter("budget resolution must be positive".into()));
        }
        if self.bucket_capacity_bytes == 0 {
            return Err(Error::InvalidParameter("bucket capacity must be positive".into()));
        }
        if self.eval_every_steps > 0 && self.eval_samples == 0 {
            return Err(Error::InvalidParameter(
                "evaluation enabled but eval_samples is zero".into(),
            ));
        }
        match self.scheme {
            Scheme::None => {}
            Scheme::FixedPlan => {
                let fixed = self.fixed_assignment.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("fixed_plan scheme needs an assignment".into())
                })?;
                if fixed.len() != self.n_tensors() {
                    return Err(Error::ShapeMismatch(format!(
                        "assignment covers {} tensors, model has {}",
                        fixed.len(),
                        self.n_tensors()
                    )));
                }
                for p in fixed {
                    p.validate()?;
                }
            }
            Scheme::GlobalTopk => {
                let m = self.require_method()?;
                if m.default.family() != MethodFamily::Sparsify {
                    return Err(Error::InvalidParameter(
                        "global_topk needs a sparsify default".into(),
                    ));
                }
            }
            _ => {
                let m = self.require_method()?;
                m.resolve()?;
            }
        }
        if let Some(k) = &self.kmeans {
            if k.clusters == 0 || k.params.len() != k.clusters {
                return Err(Error::InvalidParameter(format!(
                    "kmeans config needs one parameter per cluster, got {} for {}",
                    k.params.len(),
                    k.clusters
                )));
            }
        }
        if let Some(&s) = self.checkpoint_steps.iter().find(|&&s| s > self.total_steps) {
            return Err(Error::InvalidParameter(format!(
                "checkpoint step {s} lies beyond the run ({})",
                self.total_steps
            )));
        }
        Ok(())
    }

    fn require_method(&self) -> Result<&MethodSpec> {
        self.method.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "scheme {} needs a compression method",
                self.scheme
            ))
        })
    }
}

/// A change of active per-layer assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEvent {
    pub applied_from_step: u64,
    /// Gradient window the plan was computed from; `None` for static
    /// assignments and empty-window fallbacks.
    pub source_window: Option<u64>,
    pub assignment: Vec<CompressionParam>,
    pub plan: Option<Plan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub window_id: u64,
    pub start_step: u64,
    /// Exclusive.
    pub end_step: u64,
    pub uncompressed_bits: u64,
    pub transmitted_bits: u64,
    pub compression_ratio: f64,
    /// Wire elements per bucket, summed over steps and workers.
    pub bucket_elements: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    pub step_loss: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub windows: Vec<WindowMetrics>,
    pub plan_events: Vec<PlanEvent>,
}

/// Wall-clock accounting; the only non-deterministic output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    pub wall_s: f64,
    pub table_s: f64,
    pub plan_s: f64,
    pub replans: u32,
}

pub struct TrainResult {
    pub metrics: MetricsSeries,
    pub stats: RunStats,
    pub checkpoints: Vec<Checkpoint>,
    pub final_loss: f64,
}

pub fn run_training(config: &SimConfig) -> Result<TrainResult> {
    run_impl(config, false).map(|(result, _)| result)
}

/// Like `run_training`, but also records every gradient window and
/// writes the trace to `out_path`.
pub fn capture_trace(config: &SimConfig, out_path: impl AsRef<Path>) -> Result<TrainResult> {
    let (result, trace) = run_impl(config, true)?;
    trace.save(out_path)?;
    Ok(result)
}

struct Planner<'a> {
    cfg: &'a SimConfig,
    layers: &'a [LayerSpec],
    layout: &'a BucketLayout,
    range: MethodRange,
    default: CompressionParam,
    table_params: TableParams,
    timing_model: Option<TimingModel>,
    kmeans: Option<KmeansConfig>,
}

impl<'a> Planner<'a> {
    fn new(cfg: &'a SimConfig, layers: &'a [LayerSpec], layout: &'a BucketLayout) -> Result<Self> {
        let (range, default) = cfg.require_method()?.resolve()?;
        let table_params = TableParams {
            budget_steps: cfg.budget_steps,
            seed: cfg.seed,
            ..TableParams::default()
        };
        let timing_model = if cfg.scheme == Scheme::LgrecoTime {
            let timing = cfg.timing.clone().unwrap_or_default();
            let backward_s: Vec<f64> = layers
                .iter()
                .map(|l| l.element_count() as f64 * timing.backward_s_per_element)
                .collect();
            let samples = collect_timing_samples(
                layout,
                layers,
                timing.bandwidth_bits_per_s,
                &backward_s,
                timing.n_samples,
                timing.ratio_range,
                cfg.seed,
            )?;
            Some(fit_timing(&samples)?)
        } else {
            None
        };
        let kmeans = if cfg.scheme == Scheme::Kmeans {
            Some(cfg.kmeans.clone().unwrap_or_else(|| {
                let candidates = range.candidates();
                KmeansConfig {
                    clusters: 3,
                    params: vec![candidates[0], default, *candidates.last().unwrap()],
                }
            }))
        } else {
            None
        };
        Ok(Self {
            cfg,
            layers,
            layout,
            range,
            default,
            table_params,
            timing_model,
            kmeans,
        })
    }

    fn default_assignment(&self) -> Vec<CompressionParam> {
        vec![self.default; self.layers.len()]
    }

    fn build_table(&self, acc: &GradientAccumulator) -> Result<ErrorSizeTable> {
        let defaults = self.default_assignment();
        build_tables(self.layers, acc, &self.range, &defaults, &self.table_params)
    }

    fn plan_from_table(&self, table: &ErrorSizeTable, window: u64) -> Result<Plan> {
        match self.cfg.scheme {
            Scheme::Lgreco => dp_plan(table),
            Scheme::LgrecoTime => {
                time_weighted_plan(table, self.timing_model.as_ref().unwrap(), self.layout)
            }
            Scheme::LgrecoBucket => bucket_priority_plan(table, self.layout),
            Scheme::Kmeans => {
                let k = self.kmeans.as_ref().unwrap();
                kmeans_plan(
                    table,
                    k.clusters,
                    &k.params,
                    derive_seed(self.cfg.seed, Stream::Kmeans, &[window]),
                )
            }
            _ => unreachable!("plan_from_table is only called for table schemes"),
        }
    }
}

struct ActiveCompression {
    assignment: Vec<CompressionParam>,
    /// Set for the global top-k scheme, which ignores the per-layer
    /// assignment and thresholds across the concatenation.
    global_density: Option<f64>,
}

fn mean_over_workers(parts: &[Vec<Vec<f64>>], sizes: &[usize]) -> Vec<Vec<f64>> {
    let scale = 1.0 / parts.len() as f64;
    let mut out: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for worker in parts {
        for (dst, src) in out.iter_mut().zip(worker) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    for layer in out.iter_mut() {
        for v in layer.iter_mut() {
            *v *= scale;
        }
    }
    out
}

fn run_impl(cfg: &SimConfig, capture: bool) -> Result<(TrainResult, GradientTrace)> {
    cfg.validate()?;
    let run_start = Instant::now();

    let dataset = Dataset::generate(&cfg.dataset, cfg.seed)?;
    let mut model = Mlp::init(&cfg.widths, cfg.seed)?;
    let mut layers = model.layer_specs();
    let layout = assign_buckets(&layers, cfg.bucket_capacity_bytes)?;
    layout.stamp(&mut layers);
    let tensor_sizes: Vec<usize> = layers.iter().map(|l| l.element_count()).collect();
    let model_bits: u64 = layers.iter().map(|l| l.uncompressed_bits()).sum();
    let uncompressed_bucket_elements: Vec<u64> = {
        let mut v = vec![0u64; layout.bucket_count()];
        for l in &layers {
            v[layout.bucket_of(l.index)] += l.element_count() as u64;
        }
        v
    };
    let compressor_cfg = CompressorConfig::default();

    let planner = if cfg.scheme.needs_tables() {
        Some(Planner::new(cfg, &layers, &layout)?)
    } else {
        None
    };

    let mut opt = Sgd::new(
        cfg.optimizer.learning_rate,
        cfg.optimizer.momentum,
        &tensor_sizes,
    );
    let mut ef: Vec<Vec<Vec<f64>>> = (0..cfg.workers)
        .map(|_| tensor_sizes.iter().map(|&n| vec![0.0; n]).collect())
        .collect();
    let mut acc = GradientAccumulator::new(&layers);
    let mut trace = GradientTrace::new(layers.clone());
    let mut metrics = MetricsSeries::default();
    let mut stats = RunStats::default();
    let mut checkpoints = Vec::new();
    let needs_accumulate = cfg.scheme.needs_tables() || capture;

    let mut active: Option<ActiveCompression> = None;
    let mut window_start: u64 = 0;
    let mut win_uncompressed: u64 = 0;
    let mut win_transmitted: u64 = 0;
    let mut win_bucket_elements = vec![0u64; layout.bucket_count()];

    let static_assignment = |cfg: &SimConfig| -> Result<ActiveCompression> {
        match cfg.scheme {
            Scheme::Uniform => Ok(ActiveCompression {
                assignment: vec![cfg.require_method()?.default; cfg.n_tensors()],
                global_density: None,
            }),
            Scheme::GlobalTopk => {
                let default = cfg.require_method()?.default;
                let CompressionParam::Sparsify { density } = default else {
                    unreachable!("validated to be sparsify");
                };
                Ok(ActiveCompression {
                    assignment: vec![default; cfg.n_tensors()],
                    global_density: Some(density),
                })
            }
            Scheme::FixedPlan => Ok(ActiveCompression {
                assignment: cfg.fixed_assignment.clone().unwrap(),
                global_density: None,
            }),
            _ => unreachable!("static assignment for static schemes only"),
        }
    };

    let zero_switched_residuals =
        |ef: &mut Vec<Vec<Vec<f64>>>, old: Option<&[CompressionParam]>, new: &[CompressionParam]| {
            for (l, new_param) in new.iter().enumerate() {
                let switched = old.map_or(true, |o| o[l].family() != new_param.family());
                if switched {
                    for worker in ef.iter_mut() {
                        worker[l].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        };

    let activate = |active: &mut Option<ActiveCompression>,
                        ef: &mut Vec<Vec<Vec<f64>>>,
                        next: ActiveCompression,
                        applied_from: u64,
                        source_window: Option<u64>,
                        plan: Option<Plan>,
                        metrics: &mut MetricsSeries| {
        zero_switched_residuals(
            ef,
            active.as_ref().map(|a| a.assignment.as_slice()),
            &next.assignment,
        );
        metrics.plan_events.push(PlanEvent {
            applied_from_step: applied_from,
            source_window,
            assignment: next.assignment.clone(),
            plan,
        });
        *active = Some(next);
    };

    if cfg.checkpoint_steps.contains(&0) {
        checkpoints.push(snapshot(cfg.seed, 0, &layers, &model));
    }

    if cfg.total_steps > 0 && cfg.warmup_steps == 0 && cfg.scheme.compresses() {
        let next = match &planner {
            Some(p) => ActiveCompression {
                assignment: p.default_assignment(),
                global_density: None,
            },
            None => static_assignment(cfg)?,
        };
        activate(&mut active, &mut ef, next, 0, None, None, &mut metrics);
    }

    for t in 0..cfg.total_steps {
        let mut worker_losses = Vec::with_capacity(cfg.workers);
        let mut worker_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.workers);
        for w in 0..cfg.workers {
            let idx = minibatch_indices(
                cfg.seed,
                t,
                w,
                dataset.shard(w, cfg.workers),
                cfg.batch_size_per_worker,
            );
            let (x, labels) = dataset.train_batch(cfg.seed, t, w, &idx);
            let (loss, grads) = model.backward(&x, &labels);
            worker_losses.push(loss);
            worker_grads.push(grads);
        }
        let loss = worker_losses.iter().sum::<f64>() / cfg.workers as f64;
        metrics.step_loss.push(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: t, loss });
        }

        if needs_accumulate {
            let mean = mean_over_workers(&worker_grads, &tensor_sizes);
            acc.accumulate(&mean)?;
        }

        let agg = match &active {
            Some(comp) => {
                let mut decoded_parts: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.workers);
                for (w, grads) in worker_grads.iter().enumerate() {
                    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
                    for (l, g) in grads.iter().enumerate() {
                        let family = comp.assignment[l].family();
                        if matches!(family, MethodFamily::Sparsify | MethodFamily::LowRank) {
                            inputs.push(g.iter().zip(&ef[w][l]).map(|(a, b)| a + b).collect());
                        } else {
                            inputs.push(g.clone());
                        }
                    }
                    let encoded = match comp.global_density {
                        Some(density) => global_topk(&layers, &inputs, density)?,
                        None => {
                            let mut per_layer = Vec::with_capacity(layers.len());
                            for (l, input) in inputs.iter().enumerate() {
                                let mut rng = stream_rng(
                                    cfg.seed,
                                    Stream::StepCompression,
                                    &[t, w as u64, l as u64],
                                );
                                per_layer.push(compress(
                                    &layers[l],
                                    input,
                                    &comp.assignment[l],
                                    &compressor_cfg,
                                    &mut rng,
                                )?);
                            }
                            per_layer
                        }
                    };
                    let mut decoded: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
                    for (l, enc) in encoded.iter().enumerate() {
                        win_transmitted += enc.coded_bits();
                        win_bucket_elements[layout.bucket_of(l)] += enc.transmitted_elements();
                        let d = enc.decode();
                        let family = comp.assignment[l].family();
                        if matches!(family, MethodFamily::Sparsify | MethodFamily::LowRank) {
                            for ((r, &i), &o) in ef[w][l].iter_mut().zip(&inputs[l]).zip(&d) {
                                *r = i - o;
                            }
                        }
                        decoded.push(d);
                    }
                    win_uncompressed += model_bits;
                    decoded_parts.push(decoded);
                }
                mean_over_workers(&decoded_parts, &tensor_sizes)
            }
            None => {
                win_uncompressed += model_bits * cfg.workers as u64;
                win_transmitted += model_bits * cfg.workers as u64;
                for (b, &n) in win_bucket_elements.iter_mut().zip(&uncompressed_bucket_elements) {
                    *b += n * cfg.workers as u64;
                }
                mean_over_workers(&worker_grads, &tensor_sizes)
            }
        };

        opt.step(&mut model, &agg);

        let completed = t + 1;
        if cfg.eval_every_steps > 0 && completed % cfg.eval_every_steps == 0 {
            let (x, labels) = dataset.eval_batch(cfg.eval_samples);
            metrics.evals.push(EvalPoint {
                step: completed,
                accuracy: model.accuracy(&x, &labels),
            });
        }
        if cfg.checkpoint_steps.contains(&completed) {
            checkpoints.push(snapshot(cfg.seed, completed, &layers, &model));
        }

        let at_period = completed >= cfg.warmup_steps
            && (completed - cfg.warmup_steps) % cfg.replan_period_steps == 0;
        if at_period || completed == cfg.total_steps {
            let window_id = acc.window_id();
            if completed > window_start {
                metrics.windows.push(WindowMetrics {
                    window_id,
                    start_step: window_start,
                    end_step: completed,
                    uncompressed_bits: win_uncompressed,
                    transmitted_bits: win_transmitted,
                    compression_ratio: win_uncompressed as f64 / win_transmitted as f64,
                    bucket_elements: std::mem::replace(
                        &mut win_bucket_elements,
                        vec![0u64; layout.bucket_count()],
                    ),
                });
                win_uncompressed = 0;
                win_transmitted = 0;
                window_start = completed;
            }
            if capture && acc.step_count() > 0 {
                trace.push_window(&acc)?;
            }
            if completed < cfg.total_steps && cfg.scheme.compresses() {
                match &planner {
                    Some(p) => {
                        let (next, plan, source) = if acc.step_count() == 0 {
                            (
                                ActiveCompression {
                                    assignment: p.default_assignment(),
                                    global_density: None,
                                },
                                None,
                                None,
                            )
                        } else {
                            let t0 = Instant::now();
                            let table = p.build_table(&acc)?;
                            stats.table_s += t0.elapsed().as_secs_f64();
                            let t1 = Instant::now();
                            let plan = p.plan_from_table(&table, window_id)?;
                            stats.plan_s += t1.elapsed().as_secs_f64();
                            stats.replans += 1;
                            (
                                ActiveCompression {
                                    assignment: plan.assignment.clone(),
                                    global_density: None,
                                },
                                Some(plan),
                                Some(window_id),
                            )
                        };
                        activate(&mut active, &mut ef, next, completed, source, plan, &mut metrics);
                    }
                    None => {
                        if active.is_none() {
                            let next = static_assignment(cfg)?;
                            activate(&mut active, &mut ef, next, completed, None, None, &mut metrics);
                        }
                    }
                }
            }
            acc.reset(window_id + 1);
        }
    }

    stats.wall_s = run_start.elapsed().as_secs_f64();
    let (eval_x, eval_labels) = dataset.eval_batch(cfg.eval_samples.max(1));
    let final_loss = model.loss(&eval_x, &eval_labels);
    Ok((
        TrainResult {
            metrics,
            stats,
            checkpoints,
            final_loss,
        },
        trace,
    ))
}

fn snapshot(base_seed: u64, step: u64, layers: &[LayerSpec], model: &Mlp) -> Checkpoint {
    Checkpoint {
        base_seed,
        step,
        tensors: layers.to_vec(),
        values: model
            .params_flat()
            .into_iter()
            .map(|t| t.into_iter().map(|v| v as f32).collect())
            .collect(),
    }
}

/// Plain single-process SGD on the concatenation of all workers'
/// batches; an independent baseline the distributed path must match.
/// All workers' step-`t` batches stacked in worker order.
fn concatenated_train_batch(
    dataset: &Dataset,
    base_seed: u64,
    step: u64,
    workers: usize,
    batch_size: usize,
) -> (DMatrix<f64>, Vec<usize>) {
    let mut parts = Vec::with_capacity(workers);
    let mut labels = Vec::with_capacity(workers * batch_size);
    for w in 0..workers {
        let idx = minibatch_indices(base_seed, step, w, dataset.shard(w, workers), batch_size);
        let (x, l) = dataset.train_batch(base_seed, step, w, &idx);
        parts.push(x);
        labels.extend(l);
    }
    let mut x = DMatrix::zeros(labels.len(), dataset.n_features());
    let mut row = 0;
    for part in parts {
        x.rows_mut(row, part.nrows()).copy_from(&part);
        row += part.nrows();
    }
    (x, labels)
}

pub fn run_reference_sgd(config: &SimConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let dataset = Dataset::generate(&config.dataset, config.seed)?;
    let init = Mlp::init(&config.widths, config.seed)?;
    let flats = init.params_flat();
    let depth = config.widths.len() - 1;

    let mut weights: Vec<DMatrix<f64>> = (0..depth)
        .map(|i| {
            DMatrix::from_row_slice(config.widths[i + 1], config.widths[i], &flats[2 * i])
        })
        .collect();
    let mut biases: Vec<DVector<f64>> =
        (0..depth).map(|i| DVector::from_column_slice(&flats[2 * i + 1])).collect();
    let mut vel_w: Vec<DMatrix<f64>> = weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    let mut vel_b: Vec<DVector<f64>> = biases.iter().map(|b| DVector::zeros(b.len())).collect();

    let mut losses = Vec::with_capacity(config.total_steps as usize);
    for t in 0..config.total_steps {
        let (x, labels) = concatenated_train_batch(
            &dataset,
            config.seed,
            t,
            config.workers,
            config.batch_size_per_worker,
        );
        let b = x.nrows();

        let mut acts: Vec<DMatrix<f64>> = vec![x];
        let mut pre: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
        for i in 0..depth {
            let mut z = &acts[i] * weights[i].transpose();
            for r in 0..z.nrows() {
                for c in 0..z.ncols() {
                    z[(r, c)] += biases[i][c];
                }
            }
            pre.push(z.clone());
            if i + 1 < depth {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }

        let logits = &pre[depth - 1];
        let mut g = DMatrix::zeros(b, config.dataset.n_classes);
        let mut loss = 0.0;
        for r in 0..b {
            let row = logits.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            loss += z.ln() + m - logits[(r, labels[r])];
            for (c, &e) in exps.iter().enumerate() {
                g[(r, c)] = e / z / b as f64;
            }
            g[(r, labels[r])] -= 1.0 / b as f64;
        }
        loss /= b as f64;
        losses.push(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: t, loss });
        }

        for i in (0..depth).rev() {
            let gw = g.tr_mul(&acts[i]);
            let gb = g.row_sum().transpose();
            if i > 0 {
                let mut gx = &g * &weights[i];
                gx.zip_apply(&pre[i - 1], |v, z| {
                    if z <= 0.0 {
                        *v = 0.0;
                    }
                });
                g = gx;
            }
            vel_w[i] *= config.optimizer.momentum;
            vel_w[i] += gw;
            vel_b[i] *= config.optimizer.momentum;
            vel_b[i] += gb;
            weights[i] -= &vel_w[i] * config.optimizer.learning_rate;
            biases[i] -= &vel_b[i] * config.optimizer.learning_rate;
        }
    }
    Ok(losses)
}

/// Builds the error/size table for one recorded gradient window,
/// exactly as the live run would have.
pub fn table_from_trace(
    trace: &GradientTrace,
    window: usize,
    method: &MethodSpec,
    params: &TableParams,
) -> Result<ErrorSizeTable> {
    if trace.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let acc = trace.accumulator_for(window)?;
    let (range, default) = method.resolve()?;
    let defaults = vec![default; trace.layers().len()];
    build_tables(trace.layers(), &acc, &range, &defaults, params)
}

/// Offline planning from a recorded trace; byte-identical to the live
/// plan for the same window, method, and table parameters.
pub fn replay_plan_from_trace(
    path: impl AsRef<Path>,
    window: usize,
    method: &MethodSpec,
    params: &TableParams,
) -> Result<Plan> {
    let trace = GradientTrace::load(path)?;
    let table = table_from_trace(&trace, window, method, params)?;
    dp_plan(&table)
}

/// Final-loss difference after `probe_steps` short training steps from
/// a checkpoint: compressed arm (only `layer` compressed with `param`,
/// no error feedback) minus the uncompressed arm. Both arms replay the
/// same batches.
pub fn measure_loss_sensitivity(
    config: &SimConfig,
    checkpoint: &Checkpoint,
    layer: usize,
    param: CompressionParam,
    probe_steps: u32,
) -> Result<f64> {
    if probe_steps == 0 || probe_steps > 50 {
        return Err(Error::InvalidParameter(format!(
            "probe length must be 1..=50 steps, got {probe_steps}"
        )));
    }
    param.validate()?;
    config.dataset.validate()?;
    let n_tensors = config.n_tensors();
    if layer >= n_tensors {
        return Err(Error::InvalidParameter(format!(
            "layer {layer} out of range for {n_tensors} tensors"
        )));
    }
    if checkpoint.values.len() != n_tensors {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, model needs {n_tensors}",
            checkpoint.values.len()
        )));
    }
    let dataset = Dataset::generate(&config.dataset, checkpoint.base_seed)?;
    let params_f64: Vec<Vec<f64>> = checkpoint
        .values
        .iter()
        .map(|t| t.iter().map(|&v| v as f64).collect())
        .collect();
    let layers = Mlp::init(&config.widths, checkpoint.base_seed)?.layer_specs();
    let compressor_cfg = CompressorConfig::default();
    let (eval_x, eval_labels) = dataset.eval_batch(config.eval_samples.max(1));

    let run_arm = |compressed: bool| -> Result<f64> {
        let mut model = Mlp::init(&config.widths, checkpoint.base_seed)?;
        model.set_params_flat(&params_f64)?;
        let sizes: Vec<usize> = layers.iter().map(|l| l.element_count()).collect();
        let mut opt = Sgd::new(
            config.optimizer.learning_rate,
            config.optimizer.momentum,
            &sizes,
        );
        for k in 0..probe_steps {
            let t = checkpoint.step + k as u64;
            let (x, labels) = concatenated_train_batch(
                &dataset,
                checkpoint.base_seed,
                t,
                config.workers,
                config.batch_size_per_worker,
            );
            let (loss, mut grads) = model.backward(&x, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { step: t, loss });
            }
            if compressed {
                let mut rng =
                    stream_rng(checkpoint.base_seed, Stream::Probe, &[t, layer as u64]);
                let enc = compress(&layers[layer], &grads[layer], &param, &compressor_cfg, &mut rng)?;
                grads[layer] = enc.decode();
            }
            opt.step(&mut model, &grads);
        }
        Ok(model.loss(&eval_x, &eval_labels))
    };

    let clean = run_arm(false)?;
    let probed = run_arm(true)?;
    Ok(probed - clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny(scheme: Scheme, seed: u64) -> SimConfig {
        SimConfig {
            workers: 2,
            widths: vec![8, 32, 4],
            dataset: DatasetConfig {
                n_samples: 128,
                n_features: 8,
                n_classes: 4,
                ..DatasetConfig::default()
            },
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                momentum: 0.9,
            },
            batch_size_per_worker: 8,
            total_steps: 40,
            warmup_steps: 10,
            replan_period_steps: 10,
            eval_every_steps: 0,
            eval_samples: 64,
            scheme,
            method: None,
            budget_steps: 500,
            bucket_capacity_bytes: 600,
            timing: None,
            kmeans: None,
            fixed_assignment: None,
            checkpoint_steps: Vec::new(),
            seed,
        }
    }

    fn quant(bits: u8) -> MethodSpec {
        MethodSpec::new(CompressionParam::Quantize { bits })
    }

    fn sparse(density: f64) -> MethodSpec {
        MethodSpec::new(CompressionParam::Sparsify { density })
    }

    #[test]
    fn scheme_parsing_round_trips() {
        for s in [
            Scheme::None,
            Scheme::Uniform,
            Scheme::Lgreco,
            Scheme::LgrecoTime,
            Scheme::LgrecoBucket,
            Scheme::Kmeans,
            Scheme::GlobalTopk,
            Scheme::FixedPlan,
        ] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("lgreco-time".parse::<Scheme>().unwrap(), Scheme::LgrecoTime);
        assert!("nope".parse::<Scheme>().is_err());
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut c = tiny(Scheme::None, 0);
        c.dataset.n_features = 9;
        assert!(c.validate().is_err());

        let mut c = tiny(Scheme::None, 0);
        c.warmup_steps = c.total_steps;
        assert!(c.validate().is_err());

        let c = tiny(Scheme::Lgreco, 0);
        assert!(c.validate().is_err(), "planning scheme without a method");

        let mut c = tiny(Scheme::GlobalTopk, 0);
        c.method = Some(quant(4));
        assert!(c.validate().is_err(), "global topk needs sparsify");

        let mut c = tiny(Scheme::FixedPlan, 0);
        c.fixed_assignment = Some(vec![CompressionParam::Lossless; 3]);
        assert!(c.validate().is_err(), "assignment length mismatch");
    }

    #[test]
    fn identical_configs_give_identical_metrics() {
        let mut cfg = tiny(Scheme::Lgreco, 3);
        cfg.method = Some(quant(4));
        let a = run_training(&cfg).unwrap();
        let b = run_training(&cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.plan_events.iter().any(|e| e.plan.is_some()));
    }

    #[test]
    fn distributed_run_matches_reference_sgd() {
        let mut cfg = tiny(Scheme::None, 7);
        cfg.total_steps = 60;
        cfg.workers = 2;
        let sim = run_training(&cfg).unwrap();
        let reference = run_reference_sgd(&cfg).unwrap();
        assert_eq!(sim.metrics.step_loss.len(), reference.len());
        for (t, (a, b)) in sim.metrics.step_loss.iter().zip(&reference).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
            assert!(rel < 1e-5, "step {t}: sim {a} vs reference {b} (rel {rel:.2e})");
        }
    }

    #[test]
    fn uniform_lossless_equals_none_bitwise() {
        let cfg_none = tiny(Scheme::None, 11);
        let mut cfg_lossless = tiny(Scheme::Uniform, 11);
        cfg_lossless.method = Some(MethodSpec::new(CompressionParam::Lossless));
        let a = run_training(&cfg_none).unwrap();
        let b = run_training(&cfg_lossless).unwrap();
        assert_eq!(a.metrics.step_loss, b.metrics.step_loss);
        for w in &b.metrics.windows {
            assert_eq!(w.compression_ratio, 1.0);
        }
    }

    #[test]
    fn full_density_topk_keeps_residuals_invisible() {
        let cfg_none = tiny(Scheme::None, 13);
        let mut cfg_dense = tiny(Scheme::Uniform, 13);
        cfg_dense.method = Some(sparse(1.0));
        let a = run_training(&cfg_none).unwrap();
        let b = run_training(&cfg_dense).unwrap();
        assert_eq!(a.metrics.step_loss, b.metrics.step_loss);
    }

    #[test]
    fn warmup_is_honored() {
        let mut cfg = tiny(Scheme::Uniform, 5);
        cfg.method = Some(quant(2));
        let r = run_training(&cfg).unwrap();
        let first = &r.metrics.windows[0];
        assert_eq!((first.start_step, first.end_step), (0, 10));
        assert_eq!(first.uncompressed_bits, first.transmitted_bits);
        assert_eq!(first.compression_ratio, 1.0);
        let event = &r.metrics.plan_events[0];
        assert_eq!(event.applied_from_step, cfg.warmup_steps);
        for w in &r.metrics.windows[1..] {
            assert!(w.compression_ratio > 1.0, "window {:?}", w.window_id);
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let mut cfg = tiny(Scheme::None, 2);
        cfg.optimizer.learning_rate = 1e8;
        cfg.total_steps = 50;
        cfg.warmup_steps = 0;
        match run_training(&cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step < 50),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.final_loss)),
        }
    }

    #[test]
    fn capture_then_replay_matches_live_plans() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.grt");
        let mut cfg = tiny(Scheme::Lgreco, 17);
        cfg.method = Some(sparse(0.1));
        let result = capture_trace(&cfg, &path).unwrap();
        let table_params = TableParams {
            budget_steps: cfg.budget_steps,
            seed: cfg.seed,
            ..TableParams::default()
        };
        let planned: Vec<&PlanEvent> = result
            .metrics
            .plan_events
            .iter()
            .filter(|e| e.plan.is_some())
            .collect();
        assert!(!planned.is_empty());
        for event in planned {
            let window = event.source_window.unwrap() as usize;
            let replayed = replay_plan_from_trace(
                &path,
                window,
                cfg.method.as_ref().unwrap(),
                &table_params,
            )
            .unwrap();
            assert_eq!(&replayed, event.plan.as_ref().unwrap());
        }
    }

    #[test]
    fn replaying_an_empty_trace_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.grt");
        let layers = Mlp::init(&[8, 32, 4], 0).unwrap().layer_specs();
        GradientTrace::new(layers).save(&path).unwrap();
        match replay_plan_from_trace(&path, 0, &sparse(0.1), &TableParams::default()) {
            Err(Error::InsufficientSamples { .. }) => {}
            other => panic!("expected insufficient samples, got {:?}", other.err()),
        }
    }

    #[test]
    fn planned_windows_never_transmit_more_than_uniform() {
        let mut uni = tiny(Scheme::Uniform, 23);
        uni.method = Some(sparse(0.1));
        let mut lg = tiny(Scheme::Lgreco, 23);
        lg.method = Some(sparse(0.1));
        let a = run_training(&uni).unwrap();
        let b = run_training(&lg).unwrap();
        assert_eq!(a.metrics.windows.len(), b.metrics.windows.len());
        for (u, l) in a.metrics.windows.iter().zip(&b.metrics.windows) {
            assert_eq!(u.uncompressed_bits, l.uncompressed_bits);
            assert!(
                l.transmitted_bits <= u.transmitted_bits,
                "window {}: planned {} vs uniform {}",
                u.window_id,
                l.transmitted_bits,
                u.transmitted_bits
            );
        }
        assert!(b.stats.replans >= 1);
    }

    #[test]
    fn global_topk_compresses_and_stays_stable() {
        let mut cfg = tiny(Scheme::GlobalTopk, 29);
        cfg.method = Some(sparse(0.1));
        let r = run_training(&cfg).unwrap();
        for w in &r.metrics.windows[1..] {
            assert!(w.compression_ratio > 1.0);
        }
        assert!(r.final_loss.is_finite());
    }

    #[test]
    fn bucket_and_time_and_kmeans_schemes_run() {
        for scheme in [Scheme::LgrecoBucket, Scheme::LgrecoTime, Scheme::Kmeans] {
            let mut cfg = tiny(scheme, 31);
            cfg.method = Some(quant(4));
            let r = run_training(&cfg).unwrap();
            assert!(
                r.metrics.plan_events.iter().any(|e| e.plan.is_some()),
                "{scheme} produced no plan"
            );
        }
    }

    #[test]
    fn fixed_plan_scheme_applies_given_assignment() {
        let mut cfg = tiny(Scheme::FixedPlan, 37);
        let n = cfg.n_tensors();
        let mut assignment = vec![CompressionParam::Quantize { bits: 4 }; n];
        assignment[0] = CompressionParam::Sparsify { density: 0.25 };
        cfg.fixed_assignment = Some(assignment.clone());
        let r = run_training(&cfg).unwrap();
        let events = &r.metrics.plan_events;
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].assignment, assignment);
        assert!(events[0].plan.is_none());
    }

    #[test]
    fn checkpoints_snapshot_requested_steps() {
        let mut cfg = tiny(Scheme::None, 41);
        cfg.checkpoint_steps = vec![0, 5, 40];
        let r = run_training(&cfg).unwrap();
        let steps: Vec<u64> = r.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 5, 40]);
        assert_ne!(r.checkpoints[0].values, r.checkpoints[1].values);
        assert_eq!(r.checkpoints[0].tensors.len(), cfg.n_tensors());
    }

    #[test]
    fn zero_step_run_is_empty_and_ok() {
        let mut cfg = tiny(Scheme::None, 43);
        cfg.total_steps = 0;
        cfg.warmup_steps = 0;
        let r = run_training(&cfg).unwrap();
        assert!(r.metrics.step_loss.is_empty());
        assert!(r.metrics.windows.is_empty());
    }

    #[test]
    fn eval_points_track_learning() {
        let mut cfg = tiny(Scheme::None, 47);
        cfg.total_steps = 120;
        cfg.warmup_steps = 20;
        cfg.eval_every_steps = 60;
        let r = run_training(&cfg).unwrap();
        assert_eq!(r.metrics.evals.len(), 2);
        let last = r.metrics.evals.last().unwrap();
        assert!(last.accuracy > 0.5, "accuracy {}", last.accuracy);
    }

    #[test]
    fn sensitivity_of_lossless_probe_is_exactly_zero() {
        let mut cfg = tiny(Scheme::None, 53);
        cfg.checkpoint_steps = vec![20];
        let r = run_training(&cfg).unwrap();
        let delta = measure_loss_sensitivity(
            &cfg,
            &r.checkpoints[0],
            0,
            CompressionParam::Lossless,
            10,
        )
        .unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn harsher_probe_hurts_at_least_as_much_usually() {
        // Probe mid-descent on an overlapping-class task; after convergence the
        // quantization noise ball makes the delta sign a coin flip.
        let mut wins = 0;
        let trials = 20;
        for seed in 0..trials {
            let mut cfg = tiny(Scheme::None, 100 + seed);
            cfg.total_steps = 30;
            cfg.eval_samples = 128;
            cfg.dataset.mean_scale = 0.4;
            cfg.checkpoint_steps = vec![0];
            let r = run_training(&cfg).unwrap();
            let coarse = measure_loss_sensitivity(
                &cfg,
                &r.checkpoints[0],
                2,
                CompressionParam::Quantize { bits: 1 },
                12,
            )
            .unwrap();
            let fine = measure_loss_sensitivity(
                &cfg,
                &r.checkpoints[0],
                2,
                CompressionParam::Quantize { bits: 8 },
                12,
            )
            .unwrap();
            if coarse >= fine {
                wins += 1;
            }
        }
        assert!(wins * 5 >= trials * 4, "only {wins}/{trials} ordered");
    }

    #[test]
    fn probe_length_is_bounded() {
        let cfg = tiny(Scheme::None, 59);
        let ckpt = Checkpoint {
            base_seed: 59,
            step: 0,
            tensors: Mlp::init(&cfg.widths, 59).unwrap().layer_specs(),
            values: Mlp::init(&cfg.widths, 59)
                .unwrap()
                .params_flat()
                .into_iter()
                .map(|t| t.into_iter().map(|v| v as f32).collect())
                .collect(),
        };
        assert!(measure_loss_sensitivity(&cfg, &ckpt, 0, CompressionParam::Lossless, 51).is_err());
        assert!(measure_loss_sensitivity(&cfg, &ckpt, 0, CompressionParam::Lossless, 0).is_err());
    }
}

#[cfg(test)]
mod toy_probe {
    use super::*;

    fn traj(tag: &str, r: &TrainResult, secs: f64) {
        let sl = &r.metrics.step_loss;
        let pick = |i: usize| sl[i.min(sl.len() - 1)];
        println!(
            "{tag}: {secs:.2}s loss@0 {:.3} @100 {:.3} @500 {:.3} @1000 {:.3} final {:.4}",
            pick(0),
            pick(100),
            pick(500),
            pick(1000),
            r.final_loss
        );
    }

    #[test]
    #[ignore]
    fn toy_speed_probe() {
        let t0 = std::time::Instant::now();
        let mut cfg = SimConfig::toy(Scheme::None, 7);
        cfg.total_steps = 2000;
        let r = run_training(&cfg).unwrap();
        traj("none 2000", &r, t0.elapsed().as_secs_f64());

        for density in [0.1, 0.01] {
            let t = std::time::Instant::now();
            let mut c = SimConfig::toy(Scheme::Uniform, 7);
            c.method = Some(MethodSpec::new(CompressionParam::Sparsify { density }));
            c.total_steps = 2000;
            let r = run_training(&c).unwrap();
            traj(&format!("uniform topk {density}"), &r, t.elapsed().as_secs_f64());
        }

        let t2 = std::time::Instant::now();
        let mut cfg2 = SimConfig::toy(Scheme::Lgreco, 7);
        cfg2.method = Some(MethodSpec::new(CompressionParam::Sparsify { density: 0.01 }));
        cfg2.total_steps = 2000;
        cfg2.replan_period_steps = 200;
        let r2 = run_training(&cfg2).unwrap();
        traj("lgreco topk 0.01", &r2, t2.elapsed().as_secs_f64());
        println!(
            "  replans {} table_s {:.2} plan_s {:.2} wall_s {:.2}",
            r2.stats.replans, r2.stats.table_s, r2.stats.plan_s, r2.stats.wall_s
        );
    }
}
