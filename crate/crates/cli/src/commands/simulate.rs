//! `greco simulate`: the deterministic data-parallel training run.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::args::{param_for, parse_range, MethodArg};
use crate::csvio::write_csv;
use crate::docs::{read_toml, write_toml, PlanDoc, PlanEventDoc, PlanHistoryDoc, StatsDoc};
use crate::manifest::RunManifest;
use crate::{usage, CliError, CliResult};
use greco_core::compressors::CompressionParam;
use greco_core::train_sim::{
    capture_trace, mlp_layer_specs, run_training, KmeansConfig, MethodSpec, Scheme, SimConfig,
    TimingConfig, TrainResult,
};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// none | uniform | lgreco | lgreco_time | lgreco_bucket | kmeans
    /// | global_topk | fixed_plan
    #[arg(long, default_value = "lgreco")]
    scheme: String,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Default parameter value for the chosen method.
    #[arg(long)]
    default: Option<String>,
    /// Candidate override as LO:HI:STEP; must include the default.
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Full width chain, input first, classes last.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<u64>,
    /// Steps trained uncompressed before compression starts.
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    replan_every: Option<u64>,
    /// 0 disables accuracy evaluation.
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training set size.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Error budget resolution in integer steps.
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    bucket_capacity: Option<u64>,
    /// Comma-separated per-cluster parameters for the kmeans scheme,
    /// coarsest first.
    #[arg(long)]
    kmeans_params: Option<String>,
    /// Plan document supplying the assignment for the fixed_plan
    /// scheme.
    #[arg(long)]
    fixed_plan: Option<PathBuf>,
    /// Also record every gradient window to this trace file, for
    /// offline planning.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Resolved run configuration the manifest digest covers.
#[derive(Debug, Serialize)]
struct SimulateSemantics {
    scheme: String,
    workers: usize,
    widths: Vec<usize>,
    n_samples: usize,
    mean_scale: f64,
    noise: f64,
    label_noise: f64,
    eval_pool: usize,
    learning_rate: f64,
    momentum: f64,
    batch_size_per_worker: usize,
    total_steps: u64,
    warmup_steps: u64,
    replan_period_steps: u64,
    eval_every_steps: u64,
    eval_samples: usize,
    budget_steps: u32,
    bucket_capacity_bytes: u64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    method_default: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kmeans_params: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_assignment: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_bandwidth_bits_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_backward_s_per_element: Option<f64>,
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let cfg = build_config(args)?;
    let semantics = semantics_of(&cfg);
    let mut manifest = RunManifest::new(semantics)?;
    if let Some(path) = &args.fixed_plan {
        manifest.record_input("fixed_plan", path)?;
    }
    let digest = manifest.manifest_digest.clone();

    let result = match &args.trace_out {
        Some(path) => {
            let result = capture_trace(&cfg, path)?;
            manifest.record_output("trace", path)?;
            result
        }
        None => run_training(&cfg)?,
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Core(e.into()))?;
    write_outputs(args, &cfg, &result, &digest, &mut manifest)?;
    manifest.write(&args.out_dir.join("manifest.toml"))?;

    let m = &result.metrics;
    println!(
        "{} steps, final loss {:.6}, {} replans",
        m.step_loss.len(),
        result.final_loss,
        result.stats.replans
    );
    if let Some(w) = m.windows.last() {
        println!(
            "last window ratio {:.2}x over steps {}..{}",
            w.compression_ratio, w.start_step, w.end_step
        );
    }
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn build_config(args: &SimulateArgs) -> CliResult<SimConfig> {
    let scheme: Scheme = args
        .scheme
        .parse()
        .map_err(|e: greco_core::Error| usage(e.to_string()))?;
    let mut cfg = SimConfig::toy(scheme, args.seed);

    if let Some(widths) = &args.widths {
        if widths.len() < 2 {
            return Err(usage("--widths needs at least input and output sizes"));
        }
        cfg.dataset.n_features = widths[0];
        cfg.dataset.n_classes = *widths.last().expect("len checked");
        cfg.widths = widths.clone();
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = args.replan_every {
        cfg.replan_period_steps = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every_steps = v;
    }
    if let Some(v) = args.eval_samples {
        cfg.eval_samples = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size_per_worker = v;
    }
    if let Some(v) = args.samples {
        cfg.dataset.n_samples = v;
    }
    if let Some(v) = args.label_noise {
        cfg.dataset.label_noise = v;
    }
    if let Some(v) = args.lr {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.optimizer.momentum = v;
    }
    if let Some(v) = args.budget {
        cfg.budget_steps = v;
    }
    if let Some(v) = args.bucket_capacity {
        cfg.bucket_capacity_bytes = v;
    }

    cfg.method = match args.method {
        Some(method) => {
            let default = param_for(method, args.default.as_deref())?;
            let candidates = args
                .range
                .as_deref()
                .map(|spec| parse_range(spec, method))
                .transpose()?;
            Some(MethodSpec {
                default,
                candidates,
            })
        }
        None => {
            if args.default.is_some() || args.range.is_some() {
                return Err(usage("--default and --range require --method"));
            }
            None
        }
    };

    if let Some(list) = &args.kmeans_params {
        let params: Vec<CompressionParam> = list
            .split(',')
            .map(|s| s.trim().parse::<CompressionParam>())
            .collect::<greco_core::Result<_>>()
            .map_err(|e| usage(e.to_string()))?;
        cfg.kmeans = Some(KmeansConfig {
            clusters: params.len(),
            params,
        });
    } else if scheme == Scheme::Kmeans {
        return Err(usage("--scheme kmeans requires --kmeans-params"));
    }

    if let Some(path) = &args.fixed_plan {
        let doc: PlanDoc = read_toml(path)?;
        let assignment: Vec<CompressionParam> = doc
            .layers
            .iter()
            .map(|l| l.param.parse::<CompressionParam>())
            .collect::<greco_core::Result<_>>()?;
        cfg.fixed_assignment = Some(assignment);
    } else if scheme == Scheme::FixedPlan {
        return Err(usage("--scheme fixed_plan requires --fixed-plan"));
    }

    if scheme == Scheme::LgrecoTime {
        cfg.timing = Some(TimingConfig::default());
    }
    Ok(cfg)
}

fn semantics_of(cfg: &SimConfig) -> SimulateSemantics {
    SimulateSemantics {
        scheme: cfg.scheme.to_string(),
        workers: cfg.workers,
        widths: cfg.widths.clone(),
        n_samples: cfg.dataset.n_samples,
        mean_scale: cfg.dataset.mean_scale,
        noise: cfg.dataset.noise,
        label_noise: cfg.dataset.label_noise,
        eval_pool: cfg.dataset.eval_pool,
        learning_rate: cfg.optimizer.learning_rate,
        momentum: cfg.optimizer.momentum,
        batch_size_per_worker: cfg.batch_size_per_worker,
        total_steps: cfg.total_steps,
        warmup_steps: cfg.warmup_steps,
        replan_period_steps: cfg.replan_period_steps,
        eval_every_steps: cfg.eval_every_steps,
        eval_samples: cfg.eval_samples,
        budget_steps: cfg.budget_steps,
        bucket_capacity_bytes: cfg.bucket_capacity_bytes,
        seed: cfg.seed,
        method_default: cfg.method.as_ref().map(|m| m.default.to_string()),
        candidates: cfg.method.as_ref().and_then(|m| {
            m.candidates
                .as_ref()
                .map(|c| c.iter().map(|p| p.to_string()).collect())
        }),
        kmeans_params: cfg
            .kmeans
            .as_ref()
            .map(|k| k.params.iter().map(|p| p.to_string()).collect()),
        fixed_assignment: cfg
            .fixed_assignment
            .as_ref()
            .map(|a| a.iter().map(|p| p.to_string()).collect()),
        timing_bandwidth_bits_per_s: cfg.timing.as_ref().map(|t| t.bandwidth_bits_per_s),
        timing_backward_s_per_element: cfg.timing.as_ref().map(|t| t.backward_s_per_element),
    }
}

fn write_outputs(
    args: &SimulateArgs,
    cfg: &SimConfig,
    result: &TrainResult,
    digest: &str,
    manifest: &mut RunManifest<SimulateSemantics>,
) -> CliResult<()> {
    let dir = &args.out_dir;
    let m = &result.metrics;

    let rows: Vec<String> = m
        .step_loss
        .iter()
        .enumerate()
        .map(|(step, loss)| format!("{step},{loss}"))
        .collect();
    write_csv(&dir.join("metrics.csv"), digest, "step,loss", &rows)?;

    let rows: Vec<String> = m
        .evals
        .iter()
        .map(|e| format!("{},{}", e.step, e.accuracy))
        .collect();
    write_csv(&dir.join("evals.csv"), digest, "step,accuracy", &rows)?;

    let rows: Vec<String> = m
        .windows
        .iter()
        .map(|w| {
            format!(
                "{},{},{},{},{},{}",
                w.window_id,
                w.start_step,
                w.end_step,
                w.uncompressed_bits,
                w.transmitted_bits,
                w.compression_ratio
            )
        })
        .collect();
    write_csv(
        &dir.join("windows.csv"),
        digest,
        "window_id,start_step,end_step,uncompressed_bits,transmitted_bits,compression_ratio",
        &rows,
    )?;

    let rows: Vec<String> = m
        .windows
        .iter()
        .flat_map(|w| {
            w.bucket_elements
                .iter()
                .enumerate()
                .map(move |(b, &n)| format!("{},{b},{n}", w.window_id))
        })
        .collect();
    write_csv(
        &dir.join("buckets.csv"),
        digest,
        "window_id,bucket_index,transmitted_elements",
        &rows,
    )?;

    let history = PlanHistoryDoc {
        manifest_digest: digest.to_string(),
        layer_names: mlp_layer_specs(&cfg.widths)?
            .into_iter()
            .map(|l| l.name)
            .collect(),
        events: m
            .plan_events
            .iter()
            .map(|e| PlanEventDoc {
                applied_from_step: e.applied_from_step,
                source_window: e.source_window,
                assignment: e.assignment.iter().map(|p| p.to_string()).collect(),
                total_bits: e.plan.as_ref().map(|p| p.total_bits),
                compression_ratio: e.plan.as_ref().map(|p| p.compression_ratio),
            })
            .collect(),
    };
    write_toml(&dir.join("plans.toml"), &history)?;

    let stats = StatsDoc {
        manifest_digest: digest.to_string(),
        final_loss: result.final_loss,
        replans: result.stats.replans,
        wall_s: result.stats.wall_s,
        table_s: result.stats.table_s,
        plan_s: result.stats.plan_s,
    };
    write_toml(&dir.join("stats.toml"), &stats)?;

    for name in [
        "metrics.csv",
        "evals.csv",
        "windows.csv",
        "buckets.csv",
        "plans.toml",
        "stats.toml",
    ] {
        manifest.record_output(name, &dir.join(name))?;
    }
    Ok(())
}
