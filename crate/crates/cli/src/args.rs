//! Flag values shared by the plan and simulate subcommands.

use clap::ValueEnum;
use greco_core::compressors::CompressionParam;

use crate::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Stochastic uniform quantization; --default is bits per element.
    Quant,
    /// Magnitude top-k; --default is the kept density in (0, 1].
    Topk,
    /// Power-iteration low rank; --default is the rank.
    Lowrank,
    /// Full fp32 payload, zero error.
    Lossless,
}

/// Combines `--method` and `--default` into one compression setting.
pub fn param_for(method: MethodArg, default: Option<&str>) -> CliResult<CompressionParam> {
    let param = match method {
        MethodArg::Lossless => {
            if default.is_some() {
                return Err(usage("--method lossless does not take --default"));
            }
            CompressionParam::Lossless
        }
        MethodArg::Quant => {
            let v = default.ok_or_else(|| usage("--method quant requires --default <bits>"))?;
            let bits = v
                .parse()
                .map_err(|_| usage(format!("--default must be an integer bit width, got {v:?}")))?;
            CompressionParam::Quantize { bits }
        }
        MethodArg::Topk => {
            let v = default.ok_or_else(|| usage("--method topk requires --default <density>"))?;
            let density = v
                .parse()
                .map_err(|_| usage(format!("--default must be a density, got {v:?}")))?;
            CompressionParam::Sparsify { density }
        }
        MethodArg::Lowrank => {
            let v = default.ok_or_else(|| usage("--method lowrank requires --default <rank>"))?;
            let rank = v
                .parse()
                .map_err(|_| usage(format!("--default must be an integer rank, got {v:?}")))?;
            CompressionParam::LowRank { rank }
        }
    };
    param.validate().map_err(|e| usage(e.to_string()))?;
    Ok(param)
}

/// Parses a `LO:HI:STEP` candidate range. Integer methods require
/// integer endpoints and step; the range must include the default.
pub fn parse_range(spec: &str, method: MethodArg) -> CliResult<Vec<CompressionParam>> {
    if method == MethodArg::Lossless {
        return Err(usage("--method lossless does not take --range"));
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(usage(format!("--range expects LO:HI:STEP, got {spec:?}")));
    };
    let parse = |s: &str| -> CliResult<f64> {
        s.parse()
            .map_err(|_| usage(format!("--range has a non-numeric part {s:?}")))
    };
    let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
    if !(step > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(usage(format!("--range needs LO <= HI and STEP > 0, got {spec:?}")));
    }
    let count = ((hi - lo) / step).floor() as u64 + 1;
    if count > 10_000 {
        return Err(usage(format!("--range {spec:?} yields {count} candidates")));
    }

    let integral = |v: f64| v.fract() == 0.0;
    let candidates: Vec<CompressionParam> = match method {
        MethodArg::Quant | MethodArg::Lowrank => {
            if ![lo, hi, step].iter().all(|&v| integral(v)) {
                return Err(usage(format!("--range for this method must be integers: {spec:?}")));
            }
            let (lo, hi, step) = (lo as u64, hi as u64, step as u64);
            let values = (lo..=hi).step_by(step as usize);
            if method == MethodArg::Quant {
                values
                    .map(|b| CompressionParam::Quantize { bits: b as u8 })
                    .collect()
            } else {
                values
                    .map(|r| CompressionParam::LowRank { rank: r as usize })
                    .collect()
            }
        }
        MethodArg::Topk => (0..count)
            .map(|i| lo + i as f64 * step)
            .take_while(|&v| v <= hi * (1.0 + 1e-12))
            .map(|density| CompressionParam::Sparsify { density })
            .collect(),
        MethodArg::Lossless => unreachable!(),
    };
    for c in &candidates {
        c.validate().map_err(|e| usage(e.to_string()))?;
    }
    Ok(candidates)
}
