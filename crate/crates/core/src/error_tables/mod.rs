//! Per-layer compression error and size tables over a candidate grid.
//!
//! A window of accumulated gradients is compressed at every candidate
//! parameter to measure the L2 error it would suffer; together with
//! exact coded sizes this forms the planner's input. Errors are
//! discretized to integer budget steps by flooring against
//! `step = emax / d`, where `emax` is the total error of the default
//! assignment. Flooring keeps the default itself feasible: the sum of
//! its discretized errors can never exceed `d`.

mod lowrank_error;

pub use lowrank_error::{
    lowrank_error_power, lowrank_error_svd, select_lowrank_error_method, LowRankErrorMethod,
};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressors::{
    coded_size, compression_error, CompressionParam, CompressorConfig, MethodFamily,
};
use crate::error::{Error, Result};
use crate::layer::{check_gradient_shapes, LayerSpec};
use crate::seeds::{stream_rng, Stream};

/// Sentinel for discretized errors that cannot fit any budget.
const INFEASIBLE: u64 = u64::MAX;

/// Error norm the tables are built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ErrorMetric {
    /// Plain L2 distance.
    #[default]
    L2,
    /// Squared L2 distance, for ablations; changes the trade-off
    /// curve but none of the plumbing.
    SquaredL2,
}

impl ErrorMetric {
    fn apply(&self, l2: f64) -> f64 {
        match self {
            ErrorMetric::L2 => l2,
            ErrorMetric::SquaredL2 => l2 * l2,
        }
    }
}

/// Settings for one table construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableParams {
    /// Budget resolution: the default assignment's total error maps
    /// to this many integer steps.
    pub budget_steps: u32,
    /// Base seed for the per-cell compression RNG streams.
    pub seed: u64,
    pub metric: ErrorMetric,
    pub compressor: CompressorConfig,
}

impl Default for TableParams {
    fn default() -> Self {
        Self {
            budget_steps: 10_000,
            seed: 0,
            metric: ErrorMetric::L2,
            compressor: CompressorConfig::default(),
        }
    }
}

impl TableParams {
    pub fn validate(&self) -> Result<()> {
        if self.budget_steps == 0 {
            return Err(Error::InvalidParameter("budget_steps must be >= 1".into()));
        }
        self.compressor.validate()
    }
}

/// Running sum of per-step gradients within one planning window.
///
/// Sums are held in fp32: traces store windows at fp32, and keeping
/// the live accumulator at the same precision makes planning from a
/// captured trace reproduce the live run bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    sums: Vec<Vec<f32>>,
    step_count: u32,
    window_id: u64,
}

impl GradientAccumulator {
    pub fn new(layers: &[LayerSpec]) -> Self {
        Self {
            sums: layers.iter().map(|l| vec![0.0; l.element_count()]).collect(),
            step_count: 0,
            window_id: 0,
        }
    }

    /// Rebuilds an accumulator from stored window data.
    pub fn from_sums(sums: Vec<Vec<f32>>, step_count: u32, window_id: u64) -> Self {
        Self {
            sums,
            step_count,
            window_id,
        }
    }

    /// Adds one step's per-layer gradients to the running sums.
    pub fn accumulate(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.sums.len() {
            return Err(Error::ShapeMismatch(format!(
                "accumulator has {} layers, got {} gradients",
                self.sums.len(),
                grads.len()
            )));
        }
        for (sum, g) in self.sums.iter_mut().zip(grads) {
            if sum.len() != g.len() {
                return Err(Error::ShapeMismatch(format!(
                    "accumulator layer has {} elements, gradient has {}",
                    sum.len(),
                    g.len()
                )));
            }
            for (s, &x) in sum.iter_mut().zip(g) {
                *s += x as f32;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Clears the sums and moves to the next window.
    pub fn reset(&mut self, window_id: u64) {
        for sum in &mut self.sums {
            sum.fill(0.0);
        }
        self.step_count = 0;
        self.window_id = window_id;
    }

    pub fn layer_count(&self) -> usize {
        self.sums.len()
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn window_id(&self) -> u64 {
        self.window_id
    }

    pub fn layer_sum(&self, layer: usize) -> &[f32] {
        &self.sums[layer]
    }

    pub fn sums(&self) -> &[Vec<f32>] {
        &self.sums
    }

    fn layer_sum_f64(&self, layer: usize) -> Vec<f64> {
        self.sums[layer].iter().map(|&x| x as f64).collect()
    }
}

/// Candidate parameter grid for one method family, ordered by
/// ascending fidelity (coarsest compression first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRange {
    family: MethodFamily,
    candidates: Vec<CompressionParam>,
}

impl MethodRange {
    /// Standard grid around a default parameter: quantization bits
    /// and ranks span [default/2, 2*default] in unit steps (bits
    /// clipped to 1..=16); densities span [default/10, 10*default] in
    /// steps of default/10, clipped to at most 1.
    pub fn from_default(default: &CompressionParam) -> Result<Self> {
        default.validate()?;
        let candidates = match *default {
            CompressionParam::Quantize { bits } => {
                let lo = (bits / 2).max(1);
                let hi = (bits.saturating_mul(2)).min(16);
                (lo..=hi)
                    .map(|bits| CompressionParam::Quantize { bits })
                    .collect()
            }
            CompressionParam::Sparsify { density } => {
                let mut out: Vec<CompressionParam> = Vec::new();
                for i in 1..=100u32 {
                    // i == 10 is the default itself; keep it exact.
                    let v = if i == 10 {
                        density
                    } else {
                        (density * i as f64 / 10.0).min(1.0)
                    };
                    if let Some(&CompressionParam::Sparsify { density: last }) = out.last() {
                        if last == v {
                            continue;
                        }
                    }
                    out.push(CompressionParam::Sparsify { density: v });
                }
                out
            }
            CompressionParam::LowRank { rank } => {
                let lo = (rank / 2).max(1);
                (lo..=rank * 2)
                    .map(|rank| CompressionParam::LowRank { rank })
                    .collect()
            }
            CompressionParam::Lossless => vec![CompressionParam::Lossless],
        };
        Ok(Self {
            family: default.family(),
            candidates,
        })
    }

    /// Uses an explicit candidate list. All candidates must share one
    /// family; they are sorted by fidelity and deduplicated.
    pub fn explicit(mut candidates: Vec<CompressionParam>) -> Result<Self> {
        let family = match candidates.first() {
            Some(c) => c.family(),
            None => {
                return Err(Error::InvalidParameter(
                    "candidate list must be non-empty".into(),
                ))
            }
        };
        for c in &candidates {
            c.validate()?;
            if c.family() != family {
                return Err(Error::InvalidParameter(format!(
                    "mixed method families in candidate list: {family} and {}",
                    c.family()
                )));
            }
        }
        candidates.sort_by(|a, b| a.fidelity().total_cmp(&b.fidelity()));
        candidates.dedup();
        Ok(Self { family, candidates })
    }

    pub fn family(&self) -> MethodFamily {
        self.family
    }

    pub fn candidates(&self) -> &[CompressionParam] {
        &self.candidates
    }

    pub fn position_of(&self, param: &CompressionParam) -> Option<usize> {
        self.candidates.iter().position(|c| c == param)
    }
}

/// Seed words identifying one (window, layer, candidate) cell.
fn cell_words(window_id: u64, layer_index: usize, param: &CompressionParam) -> [u64; 4] {
    let (tag, value) = match *param {
        CompressionParam::Quantize { bits } => (0, bits as u64),
        CompressionParam::Sparsify { density } => (1, density.to_bits()),
        CompressionParam::LowRank { rank } => (2, rank as u64),
        CompressionParam::Lossless => (3, 0),
    };
    [window_id, layer_index as u64, tag, value]
}

fn cell_rng(params: &TableParams, window_id: u64, layer_index: usize, param: &CompressionParam) -> ChaCha8Rng {
    stream_rng(params.seed, Stream::TableCell, &cell_words(window_id, layer_index, param))
}

fn discretize(raw: f64, step: f64) -> u64 {
    if raw == 0.0 {
        0
    } else if step <= 0.0 || !step.is_finite() {
        INFEASIBLE
    } else {
        let q = (raw / step).floor();
        if q >= INFEASIBLE as f64 {
            INFEASIBLE
        } else {
            q as u64
        }
    }
}

/// Per-layer compression errors and coded sizes over a shared
/// candidate grid, plus the discretized errors the planner consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSizeTable {
    layers: Vec<LayerSpec>,
    candidates: Vec<CompressionParam>,
    default_idx: Vec<usize>,
    errors_raw: Vec<Vec<f64>>,
    costs_bits: Vec<Vec<u64>>,
    errors_disc: Vec<Vec<u64>>,
    emax: f64,
    budget_steps: u32,
    step: f64,
    metric: ErrorMetric,
    /// Error route chosen per layer when the family is low-rank.
    lowrank_methods: Vec<Option<LowRankErrorMethod>>,
}

impl ErrorSizeTable {
    /// Assembles a table from measured values. `emax` must be the
    /// error budget in raw units; entries are discretized against
    /// `step = emax / budget_steps`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw_parts(
        layers: Vec<LayerSpec>,
        candidates: Vec<CompressionParam>,
        default_idx: Vec<usize>,
        errors_raw: Vec<Vec<f64>>,
        costs_bits: Vec<Vec<u64>>,
        emax: f64,
        budget_steps: u32,
        metric: ErrorMetric,
    ) -> Result<Self> {
        if budget_steps == 0 {
            return Err(Error::InvalidParameter("budget_steps must be >= 1".into()));
        }
        if !emax.is_finite() || emax < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "error budget must be finite and non-negative, got {emax}"
            )));
        }
        let step = emax / budget_steps as f64;
        Self::assemble(
            layers, candidates, default_idx, errors_raw, costs_bits, emax, budget_steps, step,
            metric,
        )
    }

    /// Like [`Self::from_raw_parts`] but with an explicit step size,
    /// so budgets can grow at fixed discretization.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw_parts_with_step(
        layers: Vec<LayerSpec>,
        candidates: Vec<CompressionParam>,
        default_idx: Vec<usize>,
        errors_raw: Vec<Vec<f64>>,
        costs_bits: Vec<Vec<u64>>,
        step: f64,
        budget_steps: u32,
        metric: ErrorMetric,
    ) -> Result<Self> {
        if budget_steps == 0 {
            return Err(Error::InvalidParameter("budget_steps must be >= 1".into()));
        }
        if !step.is_finite() || step < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "step must be finite and non-negative, got {step}"
            )));
        }
        let emax = step * budget_steps as f64;
        Self::assemble(
            layers, candidates, default_idx, errors_raw, costs_bits, emax, budget_steps, step,
            metric,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        layers: Vec<LayerSpec>,
        candidates: Vec<CompressionParam>,
        default_idx: Vec<usize>,
        errors_raw: Vec<Vec<f64>>,
        costs_bits: Vec<Vec<u64>>,
        emax: f64,
        budget_steps: u32,
        step: f64,
        metric: ErrorMetric,
    ) -> Result<Self> {
        let (l, k) = (layers.len(), candidates.len());
        if l == 0 || k == 0 {
            return Err(Error::InvalidParameter(
                "table needs at least one layer and one candidate".into(),
            ));
        }
        if default_idx.len() != l || errors_raw.len() != l || costs_bits.len() != l {
            return Err(Error::ShapeMismatch(format!(
                "expected {l} rows in defaults, errors, and costs"
            )));
        }
        for li in 0..l {
            if errors_raw[li].len() != k || costs_bits[li].len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "layer {li} row does not have {k} candidates"
                )));
            }
            if default_idx[li] >= k {
                return Err(Error::InvalidParameter(format!(
                    "layer {li} default index {} out of range",
                    default_idx[li]
                )));
            }
            if let Some(bad) = errors_raw[li].iter().position(|e| !e.is_finite() || *e < 0.0) {
                return Err(Error::NonFinite {
                    context: format!("error table row {li}"),
                    index: bad,
                });
            }
        }

        let errors_disc: Vec<Vec<u64>> = errors_raw
            .iter()
            .map(|row| row.iter().map(|&e| discretize(e, step)).collect())
            .collect();

        let default_total: u64 = (0..l)
            .map(|li| errors_disc[li][default_idx[li]])
            .fold(0u64, u64::saturating_add);
        if default_total > budget_steps as u64 {
            return Err(Error::Infeasible(format!(
                "default assignment needs {default_total} budget steps but only {budget_steps} exist"
            )));
        }

        Ok(Self {
            lowrank_methods: vec![None; l],
            layers,
            candidates,
            default_idx,
            errors_raw,
            costs_bits,
            errors_disc,
            emax,
            budget_steps,
            step,
            metric,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn candidates(&self) -> &[CompressionParam] {
        &self.candidates
    }

    pub fn default_index(&self, layer: usize) -> usize {
        self.default_idx[layer]
    }

    pub fn error_raw(&self, layer: usize, candidate: usize) -> f64 {
        self.errors_raw[layer][candidate]
    }

    pub fn cost_bits(&self, layer: usize, candidate: usize) -> u64 {
        self.costs_bits[layer][candidate]
    }

    /// Discretized error in budget steps; `None` when this candidate
    /// alone would blow the whole budget.
    pub fn disc_error(&self, layer: usize, candidate: usize) -> Option<u64> {
        let e = self.errors_disc[layer][candidate];
        (e <= self.budget_steps as u64).then_some(e)
    }

    /// Total error of the default assignment, in raw metric units.
    pub fn emax(&self) -> f64 {
        self.emax
    }

    pub fn budget_steps(&self) -> u32 {
        self.budget_steps
    }

    /// Raw error units per budget step.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn metric(&self) -> ErrorMetric {
        self.metric
    }

    pub fn lowrank_method(&self, layer: usize) -> Option<LowRankErrorMethod> {
        self.lowrank_methods[layer]
    }

    /// Total uncompressed size of all layers, in bits.
    pub fn uncompressed_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.uncompressed_bits()).sum()
    }

    /// Checks that errors never increase and costs never decrease
    /// with fidelity; returns a description of every violation.
    /// Stochastic measurements should be averaged before calling.
    pub fn monotonicity_violations(&self, tolerance: f64) -> Vec<String> {
        let mut out = Vec::new();
        for li in 0..self.layer_count() {
            for j in 1..self.candidate_count() {
                let (e0, e1) = (self.errors_raw[li][j - 1], self.errors_raw[li][j]);
                if e1 > e0 + tolerance {
                    out.push(format!(
                        "layer {li}: error rose {e0} -> {e1} between candidates {} and {j}",
                        j - 1
                    ));
                }
                let (c0, c1) = (self.costs_bits[li][j - 1], self.costs_bits[li][j]);
                if c1 < c0 {
                    out.push(format!(
                        "layer {li}: cost fell {c0} -> {c1} between candidates {} and {j}",
                        j - 1
                    ));
                }
            }
        }
        out
    }
}

struct LayerRow {
    errors: Vec<f64>,
    costs: Vec<u64>,
    lowrank_method: Option<LowRankErrorMethod>,
}

fn build_row(
    layer: &LayerSpec,
    grad: &[f64],
    range: &MethodRange,
    params: &TableParams,
    window_id: u64,
) -> Result<LayerRow> {
    let candidates = range.candidates();
    let costs = candidates
        .iter()
        .map(|c| coded_size(layer, c, &params.compressor))
        .collect::<Result<Vec<u64>>>()?;

    let mut lowrank_method = None;
    let errors = if range.family() == MethodFamily::LowRank {
        match layer.matrix_view() {
            Some((rows, cols)) => {
                let r_max = candidates
                    .iter()
                    .map(|c| match c {
                        CompressionParam::LowRank { rank } => *rank,
                        _ => 0,
                    })
                    .max()
                    .unwrap_or(1);
                let method = select_lowrank_error_method(rows, cols, r_max);
                lowrank_method = Some(method);
                match method {
                    LowRankErrorMethod::Svd => {
                        let sv = lowrank_error::singular_values_desc(grad, rows, cols)?;
                        candidates
                            .iter()
                            .map(|c| match c {
                                CompressionParam::LowRank { rank } if *rank < rows.min(cols) => {
                                    Ok(lowrank_error::svd_tail_error(&sv, *rank))
                                }
                                _ => Ok(0.0),
                            })
                            .collect::<Result<Vec<f64>>>()?
                    }
                    LowRankErrorMethod::PowerIteration => candidates
                        .iter()
                        .map(|c| {
                            let mut rng = cell_rng(params, window_id, layer.index, c);
                            compression_error(layer, grad, c, &params.compressor, &mut rng)
                        })
                        .collect::<Result<Vec<f64>>>()?,
                }
            }
            // Vector layers pass through the low-rank compressor
            // unchanged, so their error is exactly zero.
            None => vec![0.0; candidates.len()],
        }
    } else {
        candidates
            .iter()
            .map(|c| {
                let mut rng = cell_rng(params, window_id, layer.index, c);
                compression_error(layer, grad, c, &params.compressor, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?
    };

    Ok(LayerRow {
        errors: errors.into_iter().map(|e| params.metric.apply(e)).collect(),
        costs,
        lowrank_method,
    })
}

/// Measures errors and sizes for every (layer, candidate) cell and
/// discretizes them against the default assignment's total error.
///
/// Work is parallelized across layers; cell RNG streams are keyed by
/// (window, layer, candidate), so the result does not depend on the
/// number of threads.
pub fn build_tables(
    layers: &[LayerSpec],
    acc: &GradientAccumulator,
    range: &MethodRange,
    defaults: &[CompressionParam],
    params: &TableParams,
) -> Result<ErrorSizeTable> {
    params.validate()?;
    check_gradient_shapes(layers, acc.sums())?;
    if acc.step_count() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if defaults.len() != layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers but {} defaults",
            layers.len(),
            defaults.len()
        )));
    }
    let default_idx = defaults
        .iter()
        .map(|d| {
            range.position_of(d).ok_or_else(|| {
                Error::InvalidParameter(format!("default {d} is not among the candidates"))
            })
        })
        .collect::<Result<Vec<usize>>>()?;

    let window_id = acc.window_id();
    let rows: Vec<LayerRow> = layers
        .par_iter()
        .enumerate()
        .map(|(li, layer)| build_row(layer, &acc.layer_sum_f64(li), range, params, window_id))
        .collect::<Result<Vec<LayerRow>>>()?;

    let emax: f64 = rows
        .iter()
        .zip(&default_idx)
        .map(|(row, &di)| row.errors[di])
        .sum();
    let step = emax / params.budget_steps as f64;

    let mut errors_raw = Vec::with_capacity(layers.len());
    let mut costs_bits = Vec::with_capacity(layers.len());
    let mut lowrank_methods = Vec::with_capacity(layers.len());
    for row in rows {
        errors_raw.push(row.errors);
        costs_bits.push(row.costs);
        lowrank_methods.push(row.lowrank_method);
    }

    let mut table = ErrorSizeTable::assemble(
        layers.to_vec(),
        range.candidates().to_vec(),
        default_idx,
        errors_raw,
        costs_bits,
        emax,
        params.budget_steps,
        step,
        params.metric,
    )?;
    table.lowrank_methods = lowrank_methods;
    Ok(table)
}

/// Total error of compressing every layer at its default parameter,
/// measured on the accumulated gradients with the same RNG streams a
/// table build would use.
pub fn compute_emax(
    layers: &[LayerSpec],
    acc: &GradientAccumulator,
    defaults: &[CompressionParam],
    params: &TableParams,
) -> Result<f64> {
    params.validate()?;
    check_gradient_shapes(layers, acc.sums())?;
    if defaults.len() != layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers but {} defaults",
            layers.len(),
            defaults.len()
        )));
    }
    let mut total = 0.0;
    for (li, (layer, param)) in layers.iter().zip(defaults).enumerate() {
        let grad = acc.layer_sum_f64(li);
        let err = match (*param, layer.matrix_view()) {
            (CompressionParam::LowRank { rank }, Some((rows, cols))) => {
                match select_lowrank_error_method(rows, cols, rank) {
                    LowRankErrorMethod::Svd => lowrank_error_svd(&grad, rows, cols, rank)?,
                    LowRankErrorMethod::PowerIteration => {
                        let mut rng = cell_rng(params, acc.window_id(), layer.index, param);
                        lowrank_error_power(
                            &grad,
                            rows,
                            cols,
                            rank,
                            params.compressor.power_steps,
                            &mut rng,
                        )?
                    }
                }
            }
            _ => {
                let mut rng = cell_rng(params, acc.window_id(), layer.index, param);
                compression_error(layer, &grad, param, &params.compressor, &mut rng)?
            }
        };
        total += params.metric.apply(err);
    }
    Ok(total)
}
