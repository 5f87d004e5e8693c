//! Low-rank approximation error, by exact SVD or by running the
//! actual power-iteration compressor.

use nalgebra::{DMatrix, SVD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compressors::{compress_matrix, l2_distance};
use crate::error::{Error, Result};

/// How a table measures low-rank errors for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LowRankErrorMethod {
    /// One exact decomposition per layer; error read off the tail of
    /// the spectrum.
    Svd,
    /// One power-iteration compression per candidate rank.
    PowerIteration,
}

/// Picks the cheaper error route for a layer: power iteration costs
/// about rank^2 of the work of a full decomposition, so it wins while
/// `r_max^2 < min(rows, cols)`.
pub fn select_lowrank_error_method(rows: usize, cols: usize, r_max: usize) -> LowRankErrorMethod {
    if r_max * r_max < rows.min(cols) {
        LowRankErrorMethod::PowerIteration
    } else {
        LowRankErrorMethod::Svd
    }
}

/// Descending singular values of the `rows x cols` row-major matrix.
pub(crate) fn singular_values_desc(g: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if g.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "matrix {rows}x{cols} expects {} elements, got {}",
            rows * cols,
            g.len()
        )));
    }
    let m = DMatrix::from_row_slice(rows, cols, g);
    let svd = SVD::try_new(m, false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Frobenius error of the best rank-`rank` approximation: the norm of
/// the dropped spectrum tail, summed smallest-first.
pub(crate) fn svd_tail_error(svals_desc: &[f64], rank: usize) -> f64 {
    svals_desc[rank.min(svals_desc.len())..]
        .iter()
        .rev()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

/// Exact best-approximation error at `rank`, zero once the rank
/// covers the full spectrum.
pub fn lowrank_error_svd(g: &[f64], rows: usize, cols: usize, rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be >= 1".into()));
    }
    if rank >= rows.min(cols) {
        // The compressor passes such layers through unchanged.
        if g.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} expects {} elements, got {}",
                rows * cols,
                g.len()
            )));
        }
        return Ok(0.0);
    }
    let sv = singular_values_desc(g, rows, cols)?;
    Ok(svd_tail_error(&sv, rank))
}

/// Error reached by the deployed power-iteration compressor at `rank`.
pub fn lowrank_error_power(
    g: &[f64],
    rows: usize,
    cols: usize,
    rank: usize,
    power_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let decoded = compress_matrix(g, rows, cols, rank, power_steps, rng)?.decode();
    Ok(l2_distance(g, &decoded))
}
