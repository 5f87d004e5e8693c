//! Gradient compressors and their exact coded-size accounting.
//!
//! All compressors share one contract: `decode(compress(g))` has the
//! same length as `g`, `coded_bits` matches [`coded_size`] exactly,
//! and identical seeds produce identical payloads. Sizes are modelled
//! in bits at fp32 wire precision (32 bits per raw element, 32 bits
//! per quantization scale, 32+32 bits per sparse entry).

mod lowrank;
mod quantize;
mod sparsify;

pub use lowrank::compress_matrix;
pub use quantize::quantize;
pub use sparsify::{sparsify_k, topk};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{check_gradient_shapes, LayerSpec};

/// Compression method families. Plans never mix families across
/// layers; only the per-layer parameter varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodFamily {
    Quantize,
    Sparsify,
    LowRank,
    Lossless,
}

impl fmt::Display for MethodFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodFamily::Quantize => "quantize",
            MethodFamily::Sparsify => "sparsify",
            MethodFamily::LowRank => "lowrank",
            MethodFamily::Lossless => "lossless",
        };
        f.write_str(s)
    }
}

impl FromStr for MethodFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantize" => Ok(MethodFamily::Quantize),
            "sparsify" => Ok(MethodFamily::Sparsify),
            "lowrank" => Ok(MethodFamily::LowRank),
            "lossless" => Ok(MethodFamily::Lossless),
            other => Err(Error::InvalidParameter(format!(
                "unknown method family {other:?}"
            ))),
        }
    }
}

/// One concrete compression setting for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompressionParam {
    /// Stochastic uniform quantization to `bits` bits per element.
    Quantize { bits: u8 },
    /// Magnitude top-k keeping `density * n` elements.
    Sparsify { density: f64 },
    /// Rank-`rank` factorization via power iteration.
    LowRank { rank: usize },
    /// Identity; full fp32 payload.
    Lossless,
}

impl CompressionParam {
    pub fn family(&self) -> MethodFamily {
        match self {
            CompressionParam::Quantize { .. } => MethodFamily::Quantize,
            CompressionParam::Sparsify { .. } => MethodFamily::Sparsify,
            CompressionParam::LowRank { .. } => MethodFamily::LowRank,
            CompressionParam::Lossless => MethodFamily::Lossless,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressionParam::Quantize { bits } => {
                if !(1..=16).contains(&bits) {
                    return Err(Error::InvalidParameter(format!(
                        "quantization bits must be in 1..=16, got {bits}"
                    )));
                }
            }
            CompressionParam::Sparsify { density } => {
                if !density.is_finite() || density <= 0.0 || density > 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "sparsify density must be in (0, 1], got {density}"
                    )));
                }
            }
            CompressionParam::LowRank { rank } => {
                if rank == 0 {
                    return Err(Error::InvalidParameter("low-rank rank must be >= 1".into()));
                }
            }
            CompressionParam::Lossless => {}
        }
        Ok(())
    }

    /// Compression fidelity within a family; higher keeps more signal.
    /// Used only to order candidate lists, never compared across
    /// families.
    pub fn fidelity(&self) -> f64 {
        match *self {
            CompressionParam::Quantize { bits } => bits as f64,
            CompressionParam::Sparsify { density } => density,
            CompressionParam::LowRank { rank } => rank as f64,
            CompressionParam::Lossless => f64::INFINITY,
        }
    }
}

impl fmt::Display for CompressionParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CompressionParam::Quantize { bits } => write!(f, "quantize:{bits}"),
            CompressionParam::Sparsify { density } => write!(f, "sparsify:{density}"),
            CompressionParam::LowRank { rank } => write!(f, "lowrank:{rank}"),
            CompressionParam::Lossless => f.write_str("lossless"),
        }
    }
}

impl FromStr for CompressionParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |s: &str| Error::InvalidParameter(format!("unparsable compression param {s:?}"));
        let param = if s == "lossless" {
            CompressionParam::Lossless
        } else if let Some(v) = s.strip_prefix("quantize:") {
            CompressionParam::Quantize {
                bits: v.parse().map_err(|_| bad(s))?,
            }
        } else if let Some(v) = s.strip_prefix("sparsify:") {
            CompressionParam::Sparsify {
                density: v.parse().map_err(|_| bad(s))?,
            }
        } else if let Some(v) = s.strip_prefix("lowrank:") {
            CompressionParam::LowRank {
                rank: v.parse().map_err(|_| bad(s))?,
            }
        } else {
            return Err(bad(s));
        };
        param.validate()?;
        Ok(param)
    }
}

/// Knobs shared by all compressor invocations of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    /// Elements per quantization scale group.
    pub quant_group_size: usize,
    /// Power-iteration refinement steps for low-rank compression.
    pub power_steps: usize,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self {
            quant_group_size: 1024,
            power_steps: 5,
        }
    }
}

impl CompressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quant_group_size == 0 {
            return Err(Error::InvalidParameter(
                "quant_group_size must be >= 1".into(),
            ));
        }
        if self.power_steps == 0 {
            return Err(Error::InvalidParameter("power_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    Quantized {
        codes: Vec<i16>,
        scales: Vec<f64>,
        group_size: usize,
    },
    Sparse {
        len: usize,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
    Factors {
        rows: usize,
        cols: usize,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
    },
    Raw {
        values: Vec<f64>,
    },
}

/// A compressed gradient together with its exact wire cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGradient {
    param: CompressionParam,
    coded_bits: u64,
    payload: Payload,
}

impl EncodedGradient {
    pub(crate) fn new(param: CompressionParam, coded_bits: u64, payload: Payload) -> Self {
        Self {
            param,
            coded_bits,
            payload,
        }
    }

    pub fn param(&self) -> &CompressionParam {
        &self.param
    }

    /// Exact size of the encoded payload in bits.
    pub fn coded_bits(&self) -> u64 {
        self.coded_bits
    }

    /// Number of scalar values the payload carries on the wire.
    pub fn transmitted_elements(&self) -> u64 {
        match &self.payload {
            Payload::Quantized { codes, .. } => codes.len() as u64,
            Payload::Sparse { values, .. } => values.len() as u64,
            Payload::Factors { left, right, .. } => (left.len() + right.len()) as u64,
            Payload::Raw { values } => values.len() as u64,
        }
    }

    /// Reconstructs the dense gradient this payload stands for.
    pub fn decode(&self) -> Vec<f64> {
        match &self.payload {
            Payload::Quantized {
                codes,
                scales,
                group_size,
            } => codes
                .iter()
                .enumerate()
                .map(|(i, &c)| c as f64 * scales[i / group_size])
                .collect(),
            Payload::Sparse {
                len,
                indices,
                values,
            } => {
                let mut out = vec![0.0; *len];
                for (&i, &v) in indices.iter().zip(values) {
                    out[i as usize] = v;
                }
                out
            }
            Payload::Factors {
                rows,
                cols,
                left,
                right,
            } => {
                let rec = left * right.transpose();
                let mut out = Vec::with_capacity(rows * cols);
                for i in 0..*rows {
                    for j in 0..*cols {
                        out.push(rec[(i, j)]);
                    }
                }
                out
            }
            Payload::Raw { values } => values.clone(),
        }
    }
}

fn check_finite(g: &[f64], context: &str) -> Result<()> {
    if let Some(index) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: context.to_string(),
            index,
        });
    }
    Ok(())
}

fn raw_payload(g: &[f64], param: CompressionParam) -> EncodedGradient {
    EncodedGradient::new(
        param,
        32 * g.len() as u64,
        Payload::Raw {
            values: g.to_vec(),
        },
    )
}

/// Compresses one layer's gradient with the given parameter.
///
/// Low-rank compression falls back to the raw payload when the layer
/// is a vector or when the rank cannot beat the dense size.
pub fn compress(
    layer: &LayerSpec,
    g: &[f64],
    param: &CompressionParam,
    cfg: &CompressorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EncodedGradient> {
    param.validate()?;
    cfg.validate()?;
    if g.len() != layer.element_count() {
        return Err(Error::ShapeMismatch(format!(
            "layer {} expects {} elements, got {}",
            layer.name,
            layer.element_count(),
            g.len()
        )));
    }
    check_finite(g, &layer.name)?;
    match *param {
        CompressionParam::Quantize { bits } => quantize(g, bits, cfg.quant_group_size, rng),
        CompressionParam::Sparsify { density } => topk(g, density),
        CompressionParam::LowRank { rank } => match layer.matrix_view() {
            Some((rows, cols)) => compress_matrix(g, rows, cols, rank, cfg.power_steps, rng),
            None => Ok(raw_payload(g, *param)),
        },
        CompressionParam::Lossless => Ok(raw_payload(g, CompressionParam::Lossless)),
    }
}

/// Exact coded size in bits, without touching gradient data.
pub fn coded_size(layer: &LayerSpec, param: &CompressionParam, cfg: &CompressorConfig) -> Result<u64> {
    param.validate()?;
    cfg.validate()?;
    let n = layer.element_count() as u64;
    let bits = match *param {
        CompressionParam::Quantize { bits } => {
            let groups = (n + cfg.quant_group_size as u64 - 1) / cfg.quant_group_size as u64;
            n * bits as u64 + groups * 32
        }
        CompressionParam::Sparsify { density } => {
            64 * sparsify_k(layer.element_count(), density) as u64
        }
        CompressionParam::LowRank { rank } => match layer.matrix_view() {
            Some((rows, cols)) if rank < rows.min(cols) => 32 * rank as u64 * (rows + cols) as u64,
            _ => 32 * n,
        },
        CompressionParam::Lossless => 32 * n,
    };
    Ok(bits)
}

/// L2 distance between a gradient and its compressed reconstruction.
pub fn compression_error(
    layer: &LayerSpec,
    g: &[f64],
    param: &CompressionParam,
    cfg: &CompressorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let decoded = compress(layer, g, param, cfg, rng)?.decode();
    Ok(l2_distance(g, &decoded))
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Magnitude top-k over the concatenation of all layers: one global
/// k = ceil(density * total_elements) split across layers by where
/// the surviving entries live.
pub fn global_topk(
    layers: &[LayerSpec],
    grads: &[Vec<f64>],
    density: f64,
) -> Result<Vec<EncodedGradient>> {
    CompressionParam::Sparsify { density }.validate()?;
    check_gradient_shapes(layers, grads)?;
    let total: usize = layers.iter().map(|l| l.element_count()).sum();
    if total == 0 {
        return Err(Error::InvalidParameter(
            "global top-k needs at least one element".into(),
        ));
    }
    for (layer, g) in layers.iter().zip(grads) {
        check_finite(g, &layer.name)?;
    }

    let offsets: Vec<usize> = layers
        .iter()
        .scan(0usize, |acc, l| {
            let start = *acc;
            *acc += l.element_count();
            Some(start)
        })
        .collect();
    let value_at = |global: usize| {
        // Offsets are sorted; find the owning layer.
        let li = match offsets.binary_search(&global) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (li, grads[li][global - offsets[li]])
    };

    let k = ((density * total as f64).ceil() as usize).clamp(1, total);
    let mut order: Vec<usize> = (0..total).collect();
    let magnitude = |i: usize| value_at(i).1.abs();
    if k < total {
        // Largest magnitude first; ties keep the lower global index.
        order.select_nth_unstable_by(k - 1, |&a, &b| {
            magnitude(b)
                .total_cmp(&magnitude(a))
                .then(a.cmp(&b))
        });
    }
    let mut kept_per_layer: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for &gidx in &order[..k] {
        let (li, _) = value_at(gidx);
        kept_per_layer[li].push(gidx - offsets[li]);
    }

    let mut out = Vec::with_capacity(layers.len());
    for (li, mut kept) in kept_per_layer.into_iter().enumerate() {
        kept.sort_unstable();
        let indices: Vec<u32> = kept.iter().map(|&i| i as u32).collect();
        let values: Vec<f64> = kept.iter().map(|&i| grads[li][i]).collect();
        let coded_bits = 64 * values.len() as u64;
        out.push(EncodedGradient::new(
            CompressionParam::Sparsify { density },
            coded_bits,
            Payload::Sparse {
                len: layers[li].element_count(),
                indices,
                values,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;

    fn layer(n: usize) -> LayerSpec {
        LayerSpec::new(0, "t", vec![n]).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn param_strings_round_trip() {
        let params = [
            CompressionParam::Quantize { bits: 4 },
            CompressionParam::Sparsify { density: 0.01 },
            CompressionParam::LowRank { rank: 4 },
            CompressionParam::Lossless,
        ];
        for p in params {
            let s = p.to_string();
            assert_eq!(s.parse::<CompressionParam>().unwrap(), p);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CompressionParam::Quantize { bits: 0 }.validate().is_err());
        assert!(CompressionParam::Quantize { bits: 17 }.validate().is_err());
        assert!(CompressionParam::Sparsify { density: 0.0 }.validate().is_err());
        assert!(CompressionParam::Sparsify { density: 1.5 }.validate().is_err());
        assert!(CompressionParam::LowRank { rank: 0 }.validate().is_err());
        assert!("sparsify:2.0".parse::<CompressionParam>().is_err());
        assert!("mystery:1".parse::<CompressionParam>().is_err());
    }

    #[test]
    fn lossless_is_exact_and_32n_bits() {
        let l = layer(100);
        let g: Vec<f64> = (0..100).map(|i| i as f64 * 0.25 - 10.0).collect();
        let enc = compress(&l, &g, &CompressionParam::Lossless, &CompressorConfig::default(), &mut rng(0)).unwrap();
        assert_eq!(enc.coded_bits(), 3200);
        assert_eq!(enc.decode(), g);
        assert_eq!(
            compression_error(&l, &g, &CompressionParam::Lossless, &CompressorConfig::default(), &mut rng(0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn non_finite_input_is_reported_with_its_index() {
        let l = layer(3);
        let g = [1.0, f64::NAN, 0.0];
        let err = compress(&l, &g, &CompressionParam::Lossless, &CompressorConfig::default(), &mut rng(0)).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn coded_size_matches_dispatch_examples() {
        let cfg = CompressorConfig::default();
        let million = layer(1_000_000);
        // 4-bit codes plus one fp32 scale per 1024-element group.
        assert_eq!(
            coded_size(&million, &CompressionParam::Quantize { bits: 4 }, &cfg).unwrap(),
            4_000_000 + 977 * 32
        );
        assert_eq!(
            coded_size(&layer(100), &CompressionParam::Lossless, &cfg).unwrap(),
            3200
        );
        let mat = LayerSpec::new(0, "m", vec![100, 100]).unwrap();
        assert_eq!(
            coded_size(&mat, &CompressionParam::LowRank { rank: 4 }, &cfg).unwrap(),
            32 * 4 * 200
        );
    }

    #[test]
    fn lowrank_on_vector_passes_through() {
        let l = layer(64);
        let g: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let cfg = CompressorConfig::default();
        let enc = compress(&l, &g, &CompressionParam::LowRank { rank: 4 }, &cfg, &mut rng(1)).unwrap();
        assert_eq!(enc.coded_bits(), 32 * 64);
        assert_eq!(enc.decode(), g);
        assert_eq!(
            coded_size(&l, &CompressionParam::LowRank { rank: 4 }, &cfg).unwrap(),
            32 * 64
        );
    }

    #[test]
    fn global_topk_keeps_the_largest_entries_across_layers() {
        let layers = vec![
            LayerSpec::new(0, "a", vec![4]).unwrap(),
            LayerSpec::new(1, "b", vec![4]).unwrap(),
        ];
        let grads = vec![vec![10.0, 0.1, -0.2, 0.05], vec![0.3, -3.0, 0.2, 0.01]];
        // density 0.25 of 8 elements keeps 2: the 10.0 and the -3.0.
        let encs = global_topk(&layers, &grads, 0.25).unwrap();
        assert_eq!(encs[0].decode(), vec![10.0, 0.0, 0.0, 0.0]);
        assert_eq!(encs[1].decode(), vec![0.0, -3.0, 0.0, 0.0]);
        assert_eq!(encs[0].coded_bits() + encs[1].coded_bits(), 2 * 64);
    }

    #[test]
    fn global_topk_density_one_is_identity() {
        let layers = vec![
            LayerSpec::new(0, "a", vec![3]).unwrap(),
            LayerSpec::new(1, "b", vec![2]).unwrap(),
        ];
        let grads = vec![vec![1.0, -2.0, 0.0], vec![4.0, 5.0]];
        let encs = global_topk(&layers, &grads, 1.0).unwrap();
        assert_eq!(encs[0].decode(), grads[0]);
        assert_eq!(encs[1].decode(), grads[1]);
    }

    #[test]
    fn global_topk_matches_per_layer_topk_on_equal_scales() {
        // With one layer, global and per-layer selection must agree.
        let layers = vec![LayerSpec::new(0, "a", vec![6]).unwrap()];
        let grads = vec![vec![5.0, -4.0, 3.0, -2.0, 1.0, 0.5]];
        let global = global_topk(&layers, &grads, 0.5).unwrap();
        let local = topk(&grads[0], 0.5).unwrap();
        assert_eq!(global[0].decode(), local.decode());
    }
}
