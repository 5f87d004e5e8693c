//! Stochastic uniform quantization over per-group max-norm grids.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compressors::{CompressionParam, EncodedGradient, Payload};
use crate::error::{Error, Result};

/// Grid levels per side: 2^(bits-1) - 1, except 1-bit which keeps a
/// single level at the group max.
fn levels(bits: u8) -> f64 {
    if bits == 1 {
        1.0
    } else {
        ((1u32 << (bits - 1)) - 1) as f64
    }
}

/// Quantizes `g` in groups of `group_size` elements.
///
/// Each group uses the symmetric grid `{-L..L} * delta` with
/// `delta = max|g_i| / L`, and every element rounds stochastically to
/// one of its two neighbouring grid points with probabilities that
/// make the reconstruction unbiased. Elements already on the grid
/// never move, and an all-zero group encodes to zero codes with a
/// zero scale.
///
/// Coded size: `bits` per element plus one fp32 scale per group.
pub fn quantize(
    g: &[f64],
    bits: u8,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EncodedGradient> {
    CompressionParam::Quantize { bits }.validate()?;
    if group_size == 0 {
        return Err(Error::InvalidParameter("group_size must be >= 1".into()));
    }
    if g.is_empty() {
        return Err(Error::InvalidParameter("cannot quantize an empty gradient".into()));
    }

    let levels = levels(bits);
    let mut codes = Vec::with_capacity(g.len());
    let mut scales = Vec::with_capacity(g.len().div_ceil(group_size));
    for group in g.chunks(group_size) {
        let amax = group.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if amax == 0.0 {
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0i16, group.len()));
            continue;
        }
        let delta = amax / levels;
        scales.push(delta);
        for &x in group {
            let scaled = x / delta;
            let lo = scaled.floor();
            let frac = scaled - lo;
            let up = rng.random::<f64>() < frac;
            // |scaled| <= levels <= 32767, so the code fits in i16.
            codes.push((lo as i32 + up as i32) as i16);
        }
    }

    let groups = g.len().div_ceil(group_size) as u64;
    let coded_bits = g.len() as u64 * bits as u64 + groups * 32;
    Ok(EncodedGradient::new(
        CompressionParam::Quantize { bits },
        coded_bits,
        Payload::Quantized {
            codes,
            scales,
            group_size,
        },
    ))
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grid_points_encode_exactly() {
        // bits=2 has one level per side, so the grid is {-max, 0, max}.
        let g = [1.0, -1.0, 0.0];
        for seed in 0..8 {
            let enc = quantize(&g, 2, 3, &mut rng(seed)).unwrap();
            assert_eq!(enc.decode(), g);
        }
    }

    #[test]
    fn zero_gradient_encodes_to_zero() {
        let g = [0.0; 10];
        let enc = quantize(&g, 4, 4, &mut rng(0)).unwrap();
        assert_eq!(enc.decode(), g);
    }

    #[test]
    fn codes_stay_on_the_grid_bounds() {
        let g: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let enc = quantize(&g, 3, 16, &mut rng(9)).unwrap();
        let max_abs = enc
            .decode()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let input_max = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max_abs <= input_max + 1e-12);
    }

    #[test]
    fn midpoint_rounds_to_mean_half() {
        // 0.5 against a companion 1.0 on a 1-level grid rounds up or
        // down with equal probability.
        let n = 100_000;
        let mut g = vec![0.5; n];
        g[0] = 1.0;
        let enc = quantize(&g, 2, n, &mut rng(42)).unwrap();
        let mean = enc.decode()[1..].iter().sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn one_bit_uses_the_group_max_as_scale() {
        let g = [0.5, -1.0];
        let enc = quantize(&g, 1, 2, &mut rng(3)).unwrap();
        for v in enc.decode() {
            assert!(v == 0.0 || v.abs() == 1.0, "off-grid value {v}");
        }
    }

    #[test]
    fn coded_bits_count_codes_and_scales() {
        let g = vec![1.0; 1000];
        let enc = quantize(&g, 4, 128, &mut rng(0)).unwrap();
        assert_eq!(enc.coded_bits(), 1000 * 4 + 8 * 32);
    }

    #[test]
    fn same_seed_same_payload() {
        let g: Vec<f64> = (0..512).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = quantize(&g, 4, 64, &mut rng(11)).unwrap();
        let b = quantize(&g, 4, 64, &mut rng(11)).unwrap();
        assert_eq!(a, b);
        let c = quantize(&g, 4, 64, &mut rng(12)).unwrap();
        assert_ne!(a.decode(), c.decode());
    }
}
