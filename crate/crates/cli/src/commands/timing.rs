//! `greco timing-collect` and `greco timing-fit`: synthetic bucket
//! timing samples and the linear model fitted to them.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use crate::csvio::{column, parse_field, read_csv, write_csv};
use crate::docs::{write_toml, TimingModelDoc};
use crate::manifest::{manifest_path, sha256_file, RunManifest};
use crate::{usage, CliResult};
use greco_core::comm_model::{assign_buckets, collect_timing_samples, fit_timing, TimingSample};
use greco_core::train_sim::{mlp_layer_specs, SimConfig};

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Full width chain of the model whose buckets are timed.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 64 * 1024)]
    bucket_capacity: u64,
    /// Link bandwidth in bits per second.
    #[arg(long, default_value_t = 10e9)]
    bandwidth: f64,
    /// Simulated backward-pass cost per gradient element.
    #[arg(long, default_value_t = 2e-9)]
    backward_s_per_element: f64,
    /// Number of samples to draw.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Compression ratio range LO:HI sampled log-uniformly.
    #[arg(long, default_value = "1:64")]
    ratio_range: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct CollectSemantics {
    widths: Vec<usize>,
    bucket_capacity_bytes: u64,
    bandwidth_bits_per_s: f64,
    backward_s_per_element: f64,
    n_samples: usize,
    ratio_lo: f64,
    ratio_hi: f64,
    seed: u64,
}

pub fn collect(args: &CollectArgs) -> CliResult<()> {
    let widths = args
        .widths
        .clone()
        .unwrap_or_else(|| SimConfig::toy(greco_core::train_sim::Scheme::None, 0).widths);
    let (lo, hi) = parse_ratio_range(&args.ratio_range)?;

    let layers = mlp_layer_specs(&widths)?;
    let layout = assign_buckets(&layers, args.bucket_capacity)?;
    let backward: Vec<f64> = layers
        .iter()
        .map(|l| l.element_count() as f64 * args.backward_s_per_element)
        .collect();
    let samples = collect_timing_samples(
        &layout,
        &layers,
        args.bandwidth,
        &backward,
        args.n,
        (lo, hi),
        args.seed,
    )?;

    let mut manifest = RunManifest::new(CollectSemantics {
        widths,
        bucket_capacity_bytes: args.bucket_capacity,
        bandwidth_bits_per_s: args.bandwidth,
        backward_s_per_element: args.backward_s_per_element,
        n_samples: args.n,
        ratio_lo: lo,
        ratio_hi: hi,
        seed: args.seed,
    })?;

    let header: String = (0..layout.bucket_count())
        .map(|b| format!("bucket_{b}_bits"))
        .chain(std::iter::once("sync_time_s".into()))
        .collect::<Vec<_>>()
        .join(",");
    let rows: Vec<String> = samples
        .iter()
        .map(|s| {
            s.bucket_bits
                .iter()
                .map(|b| b.to_string())
                .chain(std::iter::once(s.sync_time_s.to_string()))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_csv(&args.out, &manifest.manifest_digest, &header, &rows)?;
    manifest.record_output("samples", &args.out)?;
    manifest.write(&manifest_path(&args.out))?;

    println!(
        "collected {} samples over {} buckets",
        samples.len(),
        layout.bucket_count()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_ratio_range(spec: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(usage(format!("--ratio-range expects LO:HI, got {spec:?}")));
    };
    let parse = |s: &str| -> CliResult<f64> {
        s.parse()
            .map_err(|_| usage(format!("--ratio-range has a non-numeric part {s:?}")))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo >= 1.0 && hi >= lo) {
        return Err(usage(format!("--ratio-range needs 1 <= LO <= HI, got {spec:?}")));
    }
    Ok((lo, hi))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Timing samples CSV from timing-collect.
    #[arg(long)]
    samples: PathBuf,
    /// Output model document, usable as plan --timing-model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FitSemantics {
    samples_digest: String,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let samples = read_samples(&args.samples)?;
    let model = fit_timing(&samples)?;

    let samples_digest = sha256_file(&args.samples)?;
    let mut manifest = RunManifest::new(FitSemantics {
        samples_digest: samples_digest.clone(),
    })?;
    manifest.inputs.insert("samples".into(), samples_digest);

    let doc = TimingModelDoc::from_model(&model, manifest.manifest_digest.clone());
    write_toml(&args.out, &doc)?;
    manifest.record_output("model", &args.out)?;
    manifest.write(&manifest_path(&args.out))?;

    println!("R^2 = {:.6}", model.fit_score);
    println!("intercept_s = {:e}", model.intercept_s);
    for (b, c) in model.coefficients.iter().enumerate() {
        println!("bucket_{b} s_per_bit = {c:e}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn read_samples(path: &Path) -> CliResult<Vec<TimingSample>> {
    let (header, rows) = read_csv(path)?;
    let time_col = column(&header, "sync_time_s", path)?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut bucket_bits = Vec::with_capacity(header.len() - 1);
        for (i, field) in row.iter().enumerate() {
            if i == time_col {
                continue;
            }
            bucket_bits.push(parse_field(field, &header[i], path)?);
        }
        samples.push(TimingSample {
            bucket_bits,
            sync_time_s: parse_field(&row[time_col], "sync_time_s", path)?,
        });
    }
    Ok(samples)
}
