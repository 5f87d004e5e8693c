//! `greco plan`: budgeted per-layer compression from a gradient trace.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::args::{param_for, parse_range, MethodArg};
use crate::docs::{read_toml, PlanDoc, PlanLayerDoc, TimingModelDoc};
use crate::manifest::{manifest_path, sha256_file, RunManifest};
use crate::{usage, CliError, CliResult};
use greco_core::comm_model::assign_buckets;
use greco_core::compressors::CompressionParam;
use greco_core::error_tables::{build_tables, TableParams};
use greco_core::planner::{dp_plan_weighted, normalize_weights, Plan};
use greco_core::trace::GradientTrace;
use greco_core::train_sim::MethodSpec;
use greco_core::{Error, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Minimize total coded bits.
    Size,
    /// Weigh each layer by its bucket's fitted seconds per bit.
    Time,
    /// Weigh later buckets more, shrinking the schedule tail.
    Bucket,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Recorded gradient trace to plan from.
    #[arg(long)]
    trace: PathBuf,
    /// Window index within the trace; defaults to the last one.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Default parameter value for the chosen method.
    #[arg(long)]
    default: Option<String>,
    /// File with one compression parameter per layer, overriding the
    /// uniform default.
    #[arg(long)]
    per_layer_defaults: Option<PathBuf>,
    /// Error budget resolution in integer steps.
    #[arg(long, default_value_t = 10_000)]
    d_factor: u32,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Size)]
    objective: ObjectiveArg,
    /// Fitted timing model; required for --objective time.
    #[arg(long)]
    timing_model: Option<PathBuf>,
    /// Bucket capacity for the time and bucket objectives.
    #[arg(long, default_value_t = 64 * 1024)]
    bucket_capacity: u64,
    /// Candidate override as LO:HI:STEP; must include the default.
    #[arg(long)]
    range: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output plan document.
    #[arg(long)]
    out: PathBuf,
}

/// Resolved inputs the manifest digest covers.
#[derive(Debug, Serialize)]
struct PlanSemantics {
    trace_digest: String,
    window_id: u64,
    budget_steps: u32,
    seed: u64,
    candidates: Vec<String>,
    defaults: Vec<String>,
    weights: Vec<f64>,
}

pub fn run(args: &PlanArgs) -> CliResult<()> {
    let default = param_for(args.method, args.default.as_deref())?;
    let candidates = args
        .range
        .as_deref()
        .map(|spec| parse_range(spec, args.method))
        .transpose()?;
    if args.objective == ObjectiveArg::Time && args.timing_model.is_none() {
        return Err(usage("--objective time requires --timing-model"));
    }

    let trace = GradientTrace::load(&args.trace).map_err(|e| match e {
        Error::Io(io) => CliError::Core(Error::InvalidParameter(format!(
            "{}: {io}",
            args.trace.display()
        ))),
        other => CliError::Core(other),
    })?;
    if trace.is_empty() {
        return Err(CliError::Core(Error::InvalidParameter(format!(
            "{}: trace has no windows",
            args.trace.display()
        ))));
    }
    let window = args.window.unwrap_or(trace.windows().len() - 1);
    let acc = trace.accumulator_for(window)?;
    let window_id = trace.windows()[window].window_id;

    let (range, default) = MethodSpec {
        default,
        candidates,
    }
    .resolve()?;
    let defaults = match &args.per_layer_defaults {
        Some(path) => read_per_layer_defaults(path, trace.layers().len())?,
        None => vec![default; trace.layers().len()],
    };

    let params = TableParams {
        budget_steps: args.d_factor,
        seed: args.seed,
        ..TableParams::default()
    };
    let table = build_tables(trace.layers(), &acc, &range, &defaults, &params)?;
    let weights = resolve_weights(args, trace.layers(), table.layer_count())?;
    let plan = dp_plan_weighted(&table, &weights)?;

    let trace_digest = sha256_file(&args.trace)?;
    let mut manifest = RunManifest::new(PlanSemantics {
        trace_digest: trace_digest.clone(),
        window_id,
        budget_steps: args.d_factor,
        seed: args.seed,
        candidates: table.candidates().iter().map(|c| c.to_string()).collect(),
        defaults: defaults.iter().map(|d| d.to_string()).collect(),
        weights,
    })?;
    manifest.inputs.insert("trace".into(), trace_digest);
    if let Some(path) = &args.timing_model {
        manifest.record_input("timing_model", path)?;
    }

    let doc = plan_doc(
        &plan,
        trace.layers(),
        &defaults,
        window_id,
        args,
        manifest.manifest_digest.clone(),
    );
    crate::docs::write_toml(&args.out, &doc)?;
    manifest.record_output("plan", &args.out)?;
    manifest.write(&manifest_path(&args.out))?;

    print_summary(&doc, &args.out);
    Ok(())
}

fn resolve_weights(args: &PlanArgs, layers: &[LayerSpec], n: usize) -> CliResult<Vec<f64>> {
    match args.objective {
        ObjectiveArg::Size => Ok(vec![1.0; n]),
        ObjectiveArg::Time => {
            let path = args
                .timing_model
                .as_ref()
                .ok_or_else(|| usage("--objective time requires --timing-model"))?;
            let doc: TimingModelDoc = read_toml(path)?;
            let layout = assign_buckets(layers, args.bucket_capacity)?;
            if doc.coefficients.len() != layout.bucket_count() {
                return Err(CliError::Core(Error::ShapeMismatch(format!(
                    "timing model has {} coefficients, layout has {} buckets",
                    doc.coefficients.len(),
                    layout.bucket_count()
                ))));
            }
            let raw: Vec<f64> = (0..n)
                .map(|li| doc.coefficients[layout.bucket_of(li)])
                .collect();
            Ok(normalize_weights(&raw)?)
        }
        ObjectiveArg::Bucket => {
            let layout = assign_buckets(layers, args.bucket_capacity)?;
            let raw: Vec<f64> = (0..n).map(|li| (1 + layout.bucket_of(li)) as f64).collect();
            Ok(normalize_weights(&raw)?)
        }
    }
}

/// One parameter per line; blank lines and `#` comments are skipped.
fn read_per_layer_defaults(path: &Path, layer_count: usize) -> CliResult<Vec<CompressionParam>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!("{}: {e}", path.display())))
    })?;
    let params: Vec<CompressionParam> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<CompressionParam>())
        .collect::<greco_core::Result<_>>()?;
    if params.len() != layer_count {
        return Err(CliError::Core(Error::ShapeMismatch(format!(
            "{}: {} defaults for {} layers",
            path.display(),
            params.len(),
            layer_count
        ))));
    }
    Ok(params)
}

fn plan_doc(
    plan: &Plan,
    layers: &[LayerSpec],
    defaults: &[CompressionParam],
    window_id: u64,
    args: &PlanArgs,
    manifest_digest: String,
) -> PlanDoc {
    PlanDoc {
        manifest_digest,
        window_id,
        budget_steps: args.d_factor,
        seed: args.seed,
        total_bits: plan.total_bits,
        uncompressed_bits: plan.uncompressed_bits,
        compression_ratio: plan.compression_ratio,
        total_disc_error: plan.total_disc_error,
        total_raw_error: plan.total_raw_error,
        objective_value: plan.objective_value,
        layers: layers
            .iter()
            .zip(&plan.assignment)
            .zip(&plan.per_layer_bits)
            .zip(defaults)
            .map(|(((layer, param), &bits), default)| PlanLayerDoc {
                name: layer.name.clone(),
                shape: layer.shape.clone(),
                default: default.to_string(),
                param: param.to_string(),
                bits,
            })
            .collect(),
    }
}

fn print_summary(doc: &PlanDoc, out: &Path) {
    for layer in &doc.layers {
        println!(
            "{} {:?}: {} ({} bits)",
            layer.name, layer.shape, layer.param, layer.bits
        );
    }
    println!(
        "total {} of {} bits ({:.2}x), error {}/{} steps",
        doc.total_bits,
        doc.uncompressed_bits,
        doc.compression_ratio,
        doc.total_disc_error,
        doc.budget_steps
    );
    println!("wrote {}", out.display());
}
