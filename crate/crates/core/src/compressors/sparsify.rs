//! Magnitude top-k sparsification.

use crate::compressors::{CompressionParam, EncodedGradient, Payload};
use crate::error::{Error, Result};

/// Number of entries kept at `density`: ceil(density * n), at least 1.
pub fn sparsify_k(n: usize, density: f64) -> usize {
    ((density * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Keeps the `k` largest-magnitude entries of `g`, zeroing the rest.
/// Magnitude ties keep the lower index. Each kept entry costs a
/// 32-bit index plus a 32-bit value.
pub fn topk(g: &[f64], density: f64) -> Result<EncodedGradient> {
    CompressionParam::Sparsify { density }.validate()?;
    if g.is_empty() {
        return Err(Error::InvalidParameter("cannot sparsify an empty gradient".into()));
    }
    if g.len() > u32::MAX as usize {
        return Err(Error::InvalidParameter(
            "gradient too large for 32-bit sparse indices".into(),
        ));
    }

    let k = sparsify_k(g.len(), density);
    let mut order: Vec<u32> = (0..g.len() as u32).collect();
    if k < g.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| {
            g[b as usize]
                .abs()
                .total_cmp(&g[a as usize].abs())
                .then(a.cmp(&b))
        });
    }
    let mut indices: Vec<u32> = order[..k].to_vec();
    indices.sort_unstable();
    let values: Vec<f64> = indices.iter().map(|&i| g[i as usize]).collect();

    Ok(EncodedGradient::new(
        CompressionParam::Sparsify { density },
        64 * k as u64,
        Payload::Sparse {
            len: g.len(),
            indices,
            values,
        },
    ))
}
