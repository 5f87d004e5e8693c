//! Budgeted per-layer compression planning.
//!
//! Given an error/size table, the planner picks one candidate per
//! layer minimizing total weighted coded size subject to the sum of
//! discretized errors staying within the budget. The dynamic program
//! runs over exact error levels: `dp[l][e]` is the cheapest cost of
//! the first `l` layers at total discretized error exactly `e`, and
//! the final answer is the cheapest level, breaking ties toward the
//! smallest error. Candidate ties within a cell keep the first
//! candidate in list order, which is the lowest fidelity.

mod kmeans;

pub use kmeans::kmeans_plan;

use serde::{Deserialize, Serialize};

use crate::comm_model::{BucketLayout, TimingModel};
use crate::compressors::CompressionParam;
use crate::error::{Error, Result};
use crate::error_tables::ErrorSizeTable;

/// A per-layer compression assignment with its cost accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub assignment: Vec<CompressionParam>,
    pub per_layer_bits: Vec<u64>,
    pub total_bits: u64,
    pub uncompressed_bits: u64,
    /// Uncompressed over compressed size.
    pub compression_ratio: f64,
    /// Sum of discretized per-layer errors, in budget steps.
    pub total_disc_error: u64,
    /// Sum of raw per-layer table errors.
    pub total_raw_error: f64,
    /// Weighted size the optimizer minimized.
    pub objective_value: f64,
}

impl Plan {
    fn from_assignment(table: &ErrorSizeTable, indices: &[usize], objective_value: f64) -> Self {
        let assignment: Vec<CompressionParam> = indices
            .iter()
            .map(|&j| table.candidates()[j])
            .collect();
        let per_layer_bits: Vec<u64> = indices
            .iter()
            .enumerate()
            .map(|(li, &j)| table.cost_bits(li, j))
            .collect();
        let total_bits: u64 = per_layer_bits.iter().sum();
        let uncompressed_bits = table.uncompressed_bits();
        let total_disc_error = indices
            .iter()
            .enumerate()
            .map(|(li, &j)| table.disc_error(li, j).unwrap_or(u64::MAX))
            .fold(0u64, u64::saturating_add);
        let total_raw_error = indices
            .iter()
            .enumerate()
            .map(|(li, &j)| table.error_raw(li, j))
            .sum();
        Plan {
            assignment,
            per_layer_bits,
            total_bits,
            uncompressed_bits,
            compression_ratio: uncompressed_bits as f64 / total_bits as f64,
            total_disc_error,
            total_raw_error,
            objective_value,
        }
    }

    /// The default assignment: used when no gradient data exists yet.
    pub fn default_assignment(table: &ErrorSizeTable) -> Self {
        let indices: Vec<usize> = (0..table.layer_count())
            .map(|li| table.default_index(li))
            .collect();
        let objective: f64 = indices
            .iter()
            .enumerate()
            .map(|(li, &j)| table.cost_bits(li, j) as f64)
            .sum();
        Self::from_assignment(table, &indices, objective)
    }
}

/// Checks planner weights: finite, positive, one per layer; rescales
/// them so the largest is exactly 1. Equal weights all become 1.0,
/// making weighted planning coincide with unweighted bit for bit.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter("weights must be non-empty".into()));
    }
    let mut max = 0.0f64;
    for &w in weights {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weights must be finite and positive, got {w}"
            )));
        }
        max = max.max(w);
    }
    Ok(weights.iter().map(|&w| w / max).collect())
}

/// Exact-level dynamic program; returns the chosen candidate indices
/// and the objective value.
fn dp_core(table: &ErrorSizeTable, weights: &[f64]) -> Result<(Vec<usize>, f64)> {
    let l = table.layer_count();
    let k = table.candidate_count();
    let d = table.budget_steps() as usize;
    if weights.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "{l} layers but {} weights",
            weights.len()
        )));
    }

    const UNSET: u32 = u32::MAX;
    let mut prev = vec![f64::INFINITY; d + 1];
    prev[0] = 0.0;
    let mut choice = vec![UNSET; l * (d + 1)];
    for li in 0..l {
        let row = &mut choice[li * (d + 1)..(li + 1) * (d + 1)];
        let mut cur = vec![f64::INFINITY; d + 1];
        for j in 0..k {
            let Some(de) = table.disc_error(li, j) else {
                continue;
            };
            let de = de as usize;
            let cost = weights[li] * table.cost_bits(li, j) as f64;
            for e in de..=d {
                let base = prev[e - de];
                if base.is_finite() {
                    let v = base + cost;
                    if v < cur[e] {
                        cur[e] = v;
                        row[e] = j as u32;
                    }
                }
            }
        }
        prev = cur;
    }

    let mut best_e = usize::MAX;
    let mut best = f64::INFINITY;
    for (e, &v) in prev.iter().enumerate() {
        if v < best {
            best = v;
            best_e = e;
        }
    }
    if best_e == usize::MAX {
        return Err(Error::Infeasible(
            "no candidate assignment fits the error budget".into(),
        ));
    }

    let mut indices = vec![0usize; l];
    let mut e = best_e;
    for li in (0..l).rev() {
        let j = choice[li * (d + 1) + e];
        debug_assert_ne!(j, UNSET);
        indices[li] = j as usize;
        e -= table.disc_error(li, j as usize).expect("backtracked through infeasible cell") as usize;
    }
    Ok((indices, best))
}

/// Minimizes total coded size within the error budget.
pub fn dp_plan(table: &ErrorSizeTable) -> Result<Plan> {
    dp_plan_weighted(table, &vec![1.0; table.layer_count()])
}

/// Minimizes weighted coded size within the error budget. Weights
/// must already be positive; they are used as given.
pub fn dp_plan_weighted(table: &ErrorSizeTable, weights: &[f64]) -> Result<Plan> {
    for &w in weights {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weights must be finite and positive, got {w}"
            )));
        }
    }
    let (indices, objective) = dp_core(table, weights)?;
    Ok(Plan::from_assignment(table, &indices, objective))
}

/// Weighs each layer's size by its bucket's fitted time-per-bit, so
/// the program minimizes (a proxy for) sync time instead of bytes.
/// Coefficients are rescaled by their maximum; equal coefficients
/// reproduce the plain size plan exactly.
pub fn time_weighted_plan(
    table: &ErrorSizeTable,
    model: &TimingModel,
    layout: &BucketLayout,
) -> Result<Plan> {
    if layout.layer_count() != table.layer_count() {
        return Err(Error::ShapeMismatch(format!(
            "table has {} layers, layout has {}",
            table.layer_count(),
            layout.layer_count()
        )));
    }
    if model.coefficients.len() != layout.bucket_count() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} coefficients, layout has {} buckets",
            model.coefficients.len(),
            layout.bucket_count()
        )));
    }
    let raw: Vec<f64> = (0..table.layer_count())
        .map(|li| model.coefficients[layout.bucket_of(li)])
        .collect();
    dp_plan_weighted(table, &normalize_weights(&raw)?)
}

/// Weighs each layer by `1 + bucket_index`: later buckets sit closer
/// to the end of the serialized link schedule, so shrinking them
/// shortens the tail. A single-bucket layout degenerates to the plain
/// size plan.
pub fn bucket_priority_plan(table: &ErrorSizeTable, layout: &BucketLayout) -> Result<Plan> {
    if layout.layer_count() != table.layer_count() {
        return Err(Error::ShapeMismatch(format!(
            "table has {} layers, layout has {}",
            table.layer_count(),
            layout.layer_count()
        )));
    }
    let raw: Vec<f64> = (0..table.layer_count())
        .map(|li| (1 + layout.bucket_of(li)) as f64)
        .collect();
    dp_plan_weighted(table, &normalize_weights(&raw)?)
}

/// Reference optimizer: enumerates every assignment. Only for tables
/// with at most `10^6` combinations.
pub fn brute_force_plan(table: &ErrorSizeTable, weights: &[f64]) -> Result<Plan> {
    let l = table.layer_count();
    let k = table.candidate_count();
    if weights.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "{l} layers but {} weights",
            weights.len()
        )));
    }
    let combos = (k as u64).checked_pow(l as u32);
    if combos.is_none_or(|c| c > 1_000_000) {
        return Err(Error::InvalidParameter(format!(
            "brute force over {k}^{l} assignments is too large"
        )));
    }

    let budget = table.budget_steps() as u64;
    let mut counter = vec![0usize; l];
    let mut best: Option<(f64, Vec<usize>)> = None;
    'outer: loop {
        let mut err = 0u64;
        let mut feasible = true;
        for li in 0..l {
            match table.disc_error(li, counter[li]) {
                Some(e) => err += e,
                None => {
                    feasible = false;
                    break;
                }
            }
            if err > budget {
                feasible = false;
                break;
            }
        }
        if feasible {
            // Same left-to-right summation order as the DP, so ties
            // compare exactly.
            let mut obj = 0.0;
            for li in 0..l {
                obj += weights[li] * table.cost_bits(li, counter[li]) as f64;
            }
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, counter.clone()));
            }
        }
        for li in (0..l + 1).rev() {
            if li == 0 {
                break 'outer;
            }
            counter[li - 1] += 1;
            if counter[li - 1] < k {
                break;
            }
            counter[li - 1] = 0;
        }
    }

    let (objective, indices) = best.ok_or_else(|| {
        Error::Infeasible("no candidate assignment fits the error budget".into())
    })?;
    Ok(Plan::from_assignment(table, &indices, objective))
}
