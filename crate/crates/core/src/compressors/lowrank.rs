//! Low-rank gradient factorization via subspace power iteration.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compressors::{CompressionParam, EncodedGradient, Payload};
use crate::error::{Error, Result};

/// Orthonormalizes the columns of `m` in place by modified
/// Gram-Schmidt. Columns that collapse to (near) zero are zeroed so
/// they drop out of the projector instead of blowing up.
pub(crate) fn orthonormalize_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let proj = m.column(i).dot(&m.column(j));
            let basis = m.column(i).clone_owned();
            m.column_mut(j).axpy(-proj, &basis, 1.0);
        }
        let norm = m.column(j).norm();
        if norm > 1e-12 {
            m.column_mut(j).unscale_mut(norm);
        } else {
            m.column_mut(j).fill(0.0);
        }
    }
}

/// Factorizes the `rows x cols` matrix stored row-major in `g` into
/// rank-`rank` factors `P (rows x rank)` and `Q (cols x rank)` with
/// `P Q^T` approximating the input. `power_steps` rounds of
/// orthogonalized power iteration refine the subspace.
///
/// When `rank >= min(rows, cols)` the factorization cannot beat the
/// dense encoding, so the gradient passes through unchanged at 32
/// bits per element. Otherwise the coded size is
/// `32 * rank * (rows + cols)`.
pub fn compress_matrix(
    g: &[f64],
    rows: usize,
    cols: usize,
    rank: usize,
    power_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EncodedGradient> {
    let param = CompressionParam::LowRank { rank };
    param.validate()?;
    if power_steps == 0 {
        return Err(Error::InvalidParameter("power_steps must be >= 1".into()));
    }
    if g.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "matrix {rows}x{cols} expects {} elements, got {}",
            rows * cols,
            g.len()
        )));
    }
    if rank >= rows.min(cols) {
        return Ok(EncodedGradient::new(
            param,
            32 * g.len() as u64,
            Payload::Raw {
                values: g.to_vec(),
            },
        ));
    }

    let m = DMatrix::from_row_slice(rows, cols, g);
    let mut right = DMatrix::from_fn(cols, rank, |_, _| rng.random::<f64>() - 0.5);
    let mut left = DMatrix::zeros(rows, rank);
    for _ in 0..power_steps {
        left = &m * &right;
        orthonormalize_columns(&mut left);
        right = m.transpose() * &left;
    }

    Ok(EncodedGradient::new(
        param,
        32 * rank as u64 * (rows + cols) as u64,
        Payload::Factors {
            rows,
            cols,
            left,
            right,
        },
    ))
}
