//! Clustering baseline: group layers by size and default error, then
//! give every layer in a cluster the same compression parameter.

use rand::seq::SliceRandom;

use crate::compressors::CompressionParam;
use crate::error::{Error, Result};
use crate::error_tables::ErrorSizeTable;
use crate::planner::Plan;
use crate::seeds::{stream_rng, Stream};

const MAX_ITERS: usize = 100;
const MAX_RESTARTS: u64 = 10;

/// Features per layer: log element count and the table's default
/// error, both z-scored across layers. Constant features zero out.
fn features(table: &ErrorSizeTable) -> Vec<[f64; 2]> {
    let l = table.layer_count();
    let mut raw: Vec<[f64; 2]> = (0..l)
        .map(|li| {
            [
                (table.layers()[li].element_count() as f64).ln(),
                table.error_raw(li, table.default_index(li)),
            ]
        })
        .collect();
    for dim in 0..2 {
        let mean = raw.iter().map(|f| f[dim]).sum::<f64>() / l as f64;
        let var = raw.iter().map(|f| (f[dim] - mean).powi(2)).sum::<f64>() / l as f64;
        let std = var.sqrt();
        for f in raw.iter_mut() {
            f[dim] = if std > 0.0 { (f[dim] - mean) / std } else { 0.0 };
        }
    }
    raw
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lloyd's iterations from a seeded sample of distinct layers.
/// Returns per-layer cluster ids or None when a cluster emptied.
fn lloyd(points: &[[f64; 2]], n_clusters: usize, seed: u64, attempt: u64) -> Option<Vec<usize>> {
    let mut rng = stream_rng(seed, Stream::Kmeans, &[attempt]);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let mut centers: Vec<[f64; 2]> = order[..n_clusters].iter().map(|&i| points[i]).collect();

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (pi, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            if assignment[pi] != best {
                assignment[pi] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; n_clusters];
        let mut sums = vec![[0.0f64; 2]; n_clusters];
        for (pi, &ci) in assignment.iter().enumerate() {
            counts[ci] += 1;
            sums[ci][0] += points[pi][0];
            sums[ci][1] += points[pi][1];
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        for ci in 0..n_clusters {
            centers[ci] = [
                sums[ci][0] / counts[ci] as f64,
                sums[ci][1] / counts[ci] as f64,
            ];
        }
        if !changed {
            break;
        }
    }
    Some(assignment)
}

/// Clusters layers on (log size, default error) and maps
/// `cluster_params[i]` onto the cluster with the i-th smallest mean
/// default error. Ignores the error budget: this is the baseline the
/// budgeted planner is compared against.
pub fn kmeans_plan(
    table: &ErrorSizeTable,
    n_clusters: usize,
    cluster_params: &[CompressionParam],
    seed: u64,
) -> Result<Plan> {
    let l = table.layer_count();
    if n_clusters == 0 || n_clusters > l {
        return Err(Error::InvalidParameter(format!(
            "need 1..={l} clusters, got {n_clusters}"
        )));
    }
    if cluster_params.len() != n_clusters {
        return Err(Error::InvalidParameter(format!(
            "{n_clusters} clusters but {} cluster parameters",
            cluster_params.len()
        )));
    }
    let param_idx: Vec<usize> = cluster_params
        .iter()
        .map(|p| {
            table
                .candidates()
                .iter()
                .position(|c| c == p)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("cluster parameter {p} is not a candidate"))
                })
        })
        .collect::<Result<Vec<usize>>>()?;

    let points = features(table);
    let mut assignment = None;
    for attempt in 0..MAX_RESTARTS {
        if let Some(a) = lloyd(&points, n_clusters, seed, attempt) {
            assignment = Some(a);
            break;
        }
    }
    let assignment = assignment.ok_or_else(|| {
        Error::Numerical(format!(
            "k-means kept producing empty clusters after {MAX_RESTARTS} restarts"
        ))
    })?;

    // Order clusters by mean default error, ascending; ties keep the
    // lower cluster id.
    let mut err_sum = vec![0.0f64; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (li, &ci) in assignment.iter().enumerate() {
        err_sum[ci] += table.error_raw(li, table.default_index(li));
        counts[ci] += 1;
    }
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&a, &b| {
        let ea = err_sum[a] / counts[a] as f64;
        let eb = err_sum[b] / counts[b] as f64;
        ea.total_cmp(&eb).then(a.cmp(&b))
    });
    let mut cluster_to_candidate = vec![0usize; n_clusters];
    for (rank, &ci) in order.iter().enumerate() {
        cluster_to_candidate[ci] = param_idx[rank];
    }

    let indices: Vec<usize> = assignment
        .iter()
        .map(|&ci| cluster_to_candidate[ci])
        .collect();
    let objective: f64 = indices
        .iter()
        .enumerate()
        .map(|(li, &j)| table.cost_bits(li, j) as f64)
        .sum();
    Ok(Plan::from_assignment(table, &indices, objective))
}
