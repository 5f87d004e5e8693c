//! `greco report`: CSV summaries of a simulation run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::csvio::{column, parse_field, read_csv, render_csv, write_csv};
use crate::docs::{read_toml, PlanHistoryDoc, StatsDoc};
use crate::manifest::{manifest_path, sha256_file, RunManifest};
use crate::{CliError, CliResult};
use greco_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// Compression ratio per replanning window.
    RatioOverTime,
    /// Total transmitted elements per bucket.
    BucketProfile,
    /// Every applied per-layer assignment, one row per layer.
    LayerProfile,
    /// Wall-clock split between training and planning.
    Overhead,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by a simulate run.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ReportSemantics {
    kind: String,
    run_digest: String,
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let run_manifest = args.run_dir.join("manifest.toml");
    let run_digest = run_manifest_digest(&run_manifest)?;

    let (header, rows) = match args.kind {
        ReportKind::RatioOverTime => ratio_over_time(&args.run_dir)?,
        ReportKind::BucketProfile => bucket_profile(&args.run_dir)?,
        ReportKind::LayerProfile => layer_profile(&args.run_dir)?,
        ReportKind::Overhead => overhead(&args.run_dir)?,
    };

    let kind = args
        .kind
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    let mut manifest = RunManifest::new(ReportSemantics {
        kind,
        run_digest: run_digest.clone(),
    })?;
    manifest.inputs.insert("run_manifest".into(), sha256_file(&run_manifest)?);

    match &args.out {
        Some(out) => {
            write_csv(out, &manifest.manifest_digest, &header, &rows)?;
            manifest.record_output("report", out)?;
            manifest.write(&manifest_path(out))?;
            println!("wrote {}", out.display());
        }
        None => print!("{}", render_csv(&manifest.manifest_digest, &header, &rows)),
    }
    Ok(())
}

fn run_manifest_digest(path: &Path) -> CliResult<String> {
    let value: toml::Value = read_toml(path)?;
    value
        .get("manifest_digest")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| {
            CliError::Core(Error::InvalidParameter(format!(
                "{}: missing manifest_digest",
                path.display()
            )))
        })
}

fn ratio_over_time(dir: &Path) -> CliResult<(String, Vec<String>)> {
    let path = dir.join("windows.csv");
    let (header, rows) = read_csv(&path)?;
    let id = column(&header, "window_id", &path)?;
    let end = column(&header, "end_step", &path)?;
    let ratio = column(&header, "compression_ratio", &path)?;
    let out = rows
        .iter()
        .map(|r| format!("{},{},{}", r[id], r[end], r[ratio]))
        .collect();
    Ok(("window_id,end_step,compression_ratio".into(), out))
}

fn bucket_profile(dir: &Path) -> CliResult<(String, Vec<String>)> {
    let path = dir.join("buckets.csv");
    let (header, rows) = read_csv(&path)?;
    let bucket = column(&header, "bucket_index", &path)?;
    let elems = column(&header, "transmitted_elements", &path)?;
    let mut totals: BTreeMap<u64, u64> = BTreeMap::new();
    for r in &rows {
        let b: u64 = parse_field(&r[bucket], "bucket_index", &path)?;
        let n: u64 = parse_field(&r[elems], "transmitted_elements", &path)?;
        *totals.entry(b).or_default() += n;
    }
    let out = totals
        .iter()
        .map(|(b, n)| format!("{b},{n}"))
        .collect();
    Ok(("bucket_index,transmitted_elements".into(), out))
}

fn layer_profile(dir: &Path) -> CliResult<(String, Vec<String>)> {
    let doc: PlanHistoryDoc = read_toml(&dir.join("plans.toml"))?;
    let mut out = Vec::new();
    for event in &doc.events {
        if event.assignment.len() != doc.layer_names.len() {
            return Err(CliError::Core(Error::ShapeMismatch(format!(
                "plan at step {} has {} entries for {} layers",
                event.applied_from_step,
                event.assignment.len(),
                doc.layer_names.len()
            ))));
        }
        for (name, param) in doc.layer_names.iter().zip(&event.assignment) {
            out.push(format!("{},{name},{param}", event.applied_from_step));
        }
    }
    Ok(("applied_from_step,layer,param".into(), out))
}

fn overhead(dir: &Path) -> CliResult<(String, Vec<String>)> {
    let doc: StatsDoc = read_toml(&dir.join("stats.toml"))?;
    let pct = |part: f64| {
        if doc.wall_s > 0.0 {
            100.0 * part / doc.wall_s
        } else {
            0.0
        }
    };
    let row = format!(
        "{},{},{},{},{},{}",
        doc.wall_s,
        doc.table_s,
        doc.plan_s,
        pct(doc.table_s + doc.plan_s),
        pct(doc.table_s),
        pct(doc.plan_s)
    );
    Ok((
        "wall_s,table_s,plan_s,overhead_pct,error_pct,dp_pct".into(),
        vec![row],
    ))
}
