//! Bucketed all-reduce communication model.
//!
//! Gradients are communicated in fixed-capacity buckets filled in
//! reverse layer order, matching how data-parallel trainers overlap
//! communication with the backward pass: the last layers finish their
//! gradients first and go out in bucket 0. A bucket becomes ready
//! when its lowest-index member finishes backward; the link then
//! serves buckets first-in-first-out. Fitting a linear model of sync
//! time against per-bucket payload bits recovers per-bucket time
//! coefficients usable as planner weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::seeds::{stream_rng, Stream};

/// One communication bucket: a contiguous run of layers, in reverse
/// model order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: usize,
    /// Member layers, ascending by layer index.
    pub layer_indices: Vec<usize>,
    /// Uncompressed payload at 4 bytes per element.
    pub uncompressed_bytes: u64,
}

/// Assignment of every layer to a communication bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketLayout {
    buckets: Vec<Bucket>,
    layer_to_bucket: Vec<usize>,
    capacity_bytes: u64,
}

/// Default bucket capacity: 25 MiB of uncompressed gradient.
pub const DEFAULT_BUCKET_CAPACITY_BYTES: u64 = 25 * 1024 * 1024;

/// Packs layers into buckets of at most `capacity_bytes` uncompressed
/// bytes, walking layers in reverse order so bucket 0 holds the
/// layers whose gradients appear first. A single layer larger than
/// the capacity gets a bucket of its own.
pub fn assign_buckets(layers: &[LayerSpec], capacity_bytes: u64) -> Result<BucketLayout> {
    if layers.is_empty() {
        return Err(Error::InvalidParameter("no layers to bucket".into()));
    }
    if capacity_bytes == 0 {
        return Err(Error::InvalidParameter("bucket capacity must be >= 1 byte".into()));
    }

    let mut buckets: Vec<Bucket> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut bytes = 0u64;
    for (li, layer) in layers.iter().enumerate().rev() {
        let layer_bytes = 4 * layer.element_count() as u64;
        if !members.is_empty() && bytes + layer_bytes > capacity_bytes {
            members.sort_unstable();
            buckets.push(Bucket {
                index: buckets.len(),
                layer_indices: std::mem::take(&mut members),
                uncompressed_bytes: bytes,
            });
            bytes = 0;
        }
        members.push(li);
        bytes += layer_bytes;
    }
    members.sort_unstable();
    buckets.push(Bucket {
        index: buckets.len(),
        layer_indices: members,
        uncompressed_bytes: bytes,
    });

    let mut layer_to_bucket = vec![0; layers.len()];
    for bucket in &buckets {
        for &li in &bucket.layer_indices {
            layer_to_bucket[li] = bucket.index;
        }
    }
    Ok(BucketLayout {
        buckets,
        layer_to_bucket,
        capacity_bytes,
    })
}

impl BucketLayout {
    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn layer_count(&self) -> usize {
        self.layer_to_bucket.len()
    }

    pub fn bucket_of(&self, layer_index: usize) -> usize {
        self.layer_to_bucket[layer_index]
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    /// Writes each layer's bucket index into its spec.
    pub fn stamp(&self, layers: &mut [LayerSpec]) {
        for (li, layer) in layers.iter_mut().enumerate() {
            layer.bucket_id = self.layer_to_bucket[li];
        }
    }

    /// Sums per-layer payload bits into per-bucket totals.
    pub fn bucket_bits(&self, per_layer_bits: &[u64]) -> Result<Vec<u64>> {
        if per_layer_bits.len() != self.layer_to_bucket.len() {
            return Err(Error::ShapeMismatch(format!(
                "layout has {} layers, got {} bit counts",
                self.layer_to_bucket.len(),
                per_layer_bits.len()
            )));
        }
        let mut out = vec![0u64; self.buckets.len()];
        for (li, &bits) in per_layer_bits.iter().enumerate() {
            out[self.layer_to_bucket[li]] += bits;
        }
        Ok(out)
    }
}

/// Transmission schedule of one bucket within a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketTiming {
    /// Backward completion of the bucket's lowest-index layer.
    pub ready_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// Timing of one simulated training step's gradient exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncTimeline {
    pub per_bucket: Vec<BucketTiming>,
    /// Total backward compute time.
    pub compute_s: f64,
    /// First bucket ready to last bucket done.
    pub sync_s: f64,
    /// Communication not hidden behind compute.
    pub exposed_comm_s: f64,
    /// Backward start to last bucket done.
    pub total_step_s: f64,
}

/// Plays one step through the overlap model: layers finish backward
/// in reverse index order at their cumulative compute times, buckets
/// become ready with their lowest-index member, and a FIFO link
/// transmits `bits / bandwidth` per bucket.
pub fn simulate_sync_time(
    per_layer_bits: &[u64],
    layout: &BucketLayout,
    bandwidth_bits_per_s: f64,
    per_layer_backward_s: &[f64],
) -> Result<SyncTimeline> {
    if per_layer_bits.len() != layout.layer_count()
        || per_layer_backward_s.len() != layout.layer_count()
    {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} layers, got {} bit counts and {} backward times",
            layout.layer_count(),
            per_layer_bits.len(),
            per_layer_backward_s.len()
        )));
    }
    if bandwidth_bits_per_s <= 0.0 || bandwidth_bits_per_s.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth_bits_per_s}"
        )));
    }
    if per_layer_backward_s.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidParameter(
            "backward times must be finite and non-negative".into(),
        ));
    }

    // Layer l's gradient lands once all layers behind it are done:
    // ready(l) = sum of backward times from l to the end.
    let n = per_layer_backward_s.len();
    let mut layer_ready = vec![0.0; n];
    let mut acc = 0.0;
    for li in (0..n).rev() {
        acc += per_layer_backward_s[li];
        layer_ready[li] = acc;
    }
    let compute_s = acc;

    let bucket_bits = layout.bucket_bits(per_layer_bits)?;
    let mut per_bucket = Vec::with_capacity(layout.bucket_count());
    let mut link_free = 0.0f64;
    for bucket in layout.buckets() {
        let ready_s = bucket
            .layer_indices
            .iter()
            .map(|&li| layer_ready[li])
            .fold(0.0f64, f64::max);
        let start_s = ready_s.max(link_free);
        let end_s = start_s + bucket_bits[bucket.index] as f64 / bandwidth_bits_per_s;
        link_free = end_s;
        per_bucket.push(BucketTiming {
            ready_s,
            start_s,
            end_s,
        });
    }

    let total_step_s = link_free.max(compute_s);
    Ok(SyncTimeline {
        sync_s: link_free - per_bucket[0].ready_s,
        exposed_comm_s: total_step_s - compute_s,
        compute_s,
        total_step_s,
        per_bucket,
    })
}

/// One observation for the timing regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub bucket_bits: Vec<u64>,
    pub sync_time_s: f64,
}

/// Linear model of sync time: per-bucket seconds per bit plus an
/// intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub coefficients: Vec<f64>,
    pub intercept_s: f64,
    /// R-squared on the held-out fifth of the samples.
    pub fit_score: f64,
}

impl TimingModel {
    pub fn predict(&self, bucket_bits: &[u64]) -> f64 {
        self.coefficients
            .iter()
            .zip(bucket_bits)
            .map(|(c, &b)| c * b as f64)
            .sum::<f64>()
            + self.intercept_s
    }
}

/// Floor on fitted coefficients; negative estimates clamp here so
/// planner weights stay positive.
pub const MIN_COEFFICIENT_S_PER_BIT: f64 = 1e-15;

fn column_name(j: usize, buckets: usize) -> String {
    if j < buckets {
        format!("bucket_{j}")
    } else {
        "intercept".to_string()
    }
}

/// Columns whose scaled versions are (near) linear combinations of
/// earlier ones, found by modified Gram-Schmidt.
fn collinear_columns(x: &DMatrix<f64>, buckets: usize) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let mut col = x.column(j).clone_owned();
        let scale = col.norm();
        if scale == 0.0 {
            out.push(column_name(j, buckets));
            continue;
        }
        col.unscale_mut(scale);
        for b in &basis {
            let proj = b.dot(&col);
            col.axpy(-proj, b, 1.0);
        }
        let residual = col.norm();
        if residual < 1e-8 {
            out.push(column_name(j, buckets));
        } else {
            col.unscale_mut(residual);
            basis.push(col);
        }
    }
    out
}

/// Fits sync time as a linear function of per-bucket bits.
///
/// The first 80% of the samples train the coefficients by
/// column-scaled SVD least squares; the last 20% (at least one
/// sample) score the fit. Negative per-bucket coefficients clamp to
/// [`MIN_COEFFICIENT_S_PER_BIT`] with a warning, since a bucket
/// cannot speed up a step by growing.
pub fn fit_timing(samples: &[TimingSample]) -> Result<TimingModel> {
    let buckets = match samples.first() {
        Some(s) => s.bucket_bits.len(),
        None => {
            return Err(Error::InsufficientSamples { needed: 2, got: 0 });
        }
    };
    if buckets == 0 {
        return Err(Error::InvalidParameter("samples have zero buckets".into()));
    }
    if samples.iter().any(|s| s.bucket_bits.len() != buckets) {
        return Err(Error::ShapeMismatch(
            "samples disagree on bucket count".into(),
        ));
    }
    let needed = 2 * (buckets + 1);
    if samples.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: samples.len(),
        });
    }
    if samples
        .iter()
        .any(|s| !s.sync_time_s.is_finite())
    {
        return Err(Error::InvalidParameter("non-finite sync time in samples".into()));
    }

    let n_test = (samples.len() / 5).max(1);
    let n_train = samples.len() - n_test;
    let (train, test) = samples.split_at(n_train);

    let cols = buckets + 1;
    let mut x = DMatrix::zeros(n_train, cols);
    let mut y = DVector::zeros(n_train);
    for (i, s) in train.iter().enumerate() {
        for j in 0..buckets {
            x[(i, j)] = s.bucket_bits[j] as f64;
        }
        x[(i, buckets)] = 1.0;
        y[i] = s.sync_time_s;
    }

    // Scale columns to unit max before decomposing; bit counts dwarf
    // the intercept column otherwise.
    let mut scales = vec![0.0f64; cols];
    for j in 0..cols {
        scales[j] = x.column(j).amax();
    }
    if scales.iter().any(|&s| s == 0.0) {
        return Err(Error::RankDeficient {
            columns: collinear_columns(&x, buckets),
        });
    }
    let mut xs = x;
    for j in 0..cols {
        xs.column_mut(j).unscale_mut(scales[j]);
    }

    let svd = xs.clone().svd_unordered(true, true);
    let sigma_max = svd.singular_values.amax();
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if sigma_max == 0.0 || sigma_min / sigma_max < 1e-10 {
        return Err(Error::RankDeficient {
            columns: collinear_columns(&xs, buckets),
        });
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;

    let mut coefficients: Vec<f64> = (0..buckets).map(|j| beta[j] / scales[j]).collect();
    let intercept_s = beta[buckets] / scales[buckets];
    for (j, c) in coefficients.iter_mut().enumerate() {
        if *c < 0.0 {
            log::warn!(
                "bucket {j} fitted a negative time coefficient ({c:.3e} s/bit); clamping to {MIN_COEFFICIENT_S_PER_BIT:.0e}"
            );
            *c = MIN_COEFFICIENT_S_PER_BIT;
        }
    }

    let model = TimingModel {
        coefficients,
        intercept_s,
        fit_score: 0.0,
    };
    let mean_y: f64 = test.iter().map(|s| s.sync_time_s).sum::<f64>() / test.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in test {
        let err = s.sync_time_s - model.predict(&s.bucket_bits);
        ss_res += err * err;
        let dev = s.sync_time_s - mean_y;
        ss_tot += dev * dev;
    }
    let fit_score = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };

    Ok(TimingModel { fit_score, ..model })
}

/// Generates timing observations by pushing randomized per-bucket
/// compression ratios through the overlap simulator. Ratios are drawn
/// log-uniformly from `ratio_range`; a degenerate range replays one
/// fixed plan.
pub fn collect_timing_samples(
    layout: &BucketLayout,
    layers: &[LayerSpec],
    bandwidth_bits_per_s: f64,
    per_layer_backward_s: &[f64],
    n_samples: usize,
    ratio_range: (f64, f64),
    seed: u64,
) -> Result<Vec<TimingSample>> {
    if layers.len() != layout.layer_count() {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} layers, got {}",
            layout.layer_count(),
            layers.len()
        )));
    }
    let (lo, hi) = ratio_range;
    if !(lo.is_finite() && hi.is_finite()) || lo < 1.0 || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "ratio range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
        )));
    }

    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = stream_rng(seed, Stream::TimingSamples, &[i as u64]);
        let mut ratios = vec![1.0f64; layout.bucket_count()];
        for r in ratios.iter_mut() {
            let u: f64 = rng.random();
            *r = lo * (hi / lo).powf(u);
        }
        let per_layer_bits: Vec<u64> = layers
            .iter()
            .enumerate()
            .map(|(li, l)| {
                (l.uncompressed_bits() as f64 / ratios[layout.bucket_of(li)]).ceil() as u64
            })
            .collect();
        let timeline =
            simulate_sync_time(&per_layer_bits, layout, bandwidth_bits_per_s, per_layer_backward_s)?;
        out.push(TimingSample {
            bucket_bits: layout.bucket_bits(&per_layer_bits)?,
            sync_time_s: timeline.sync_s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers(sizes: &[usize]) -> Vec<LayerSpec> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| LayerSpec::new(i, format!("l{i}"), vec![n]).unwrap())
            .collect()
    }

    #[test]
    fn everything_fits_in_one_bucket() {
        let ls = layers(&[10, 20, 30]);
        let layout = assign_buckets(&ls, 1 << 20).unwrap();
        assert_eq!(layout.bucket_count(), 1);
        assert_eq!(layout.buckets()[0].layer_indices, vec![0, 1, 2]);
        assert_eq!(layout.buckets()[0].uncompressed_bytes, 4 * 60);
    }

    #[test]
    fn tight_capacity_splits_in_reverse_order() {
        // Three 1-element layers, 4 bytes each, capacity 4: one layer
        // per bucket, last layer first.
        let ls = layers(&[1, 1, 1]);
        let layout = assign_buckets(&ls, 4).unwrap();
        assert_eq!(layout.bucket_count(), 3);
        assert_eq!(layout.buckets()[0].layer_indices, vec![2]);
        assert_eq!(layout.buckets()[1].layer_indices, vec![1]);
        assert_eq!(layout.buckets()[2].layer_indices, vec![0]);
        assert_eq!(layout.bucket_of(2), 0);
    }

    #[test]
    fn oversize_layer_gets_its_own_bucket() {
        let ls = layers(&[2, 100, 2]);
        let layout = assign_buckets(&ls, 16).unwrap();
        assert_eq!(layout.bucket_count(), 3);
        assert_eq!(layout.buckets()[1].layer_indices, vec![1]);
        assert_eq!(layout.buckets()[1].uncompressed_bytes, 400);
    }

    #[test]
    fn mixed_packing_respects_capacity() {
        // From the tail: l4 (8B) + l3 (8B) fill a 16B bucket, then
        // l2 (12B) + l1 (4B), then l0 (16B).
        let ls = layers(&[4, 1, 3, 2, 2]);
        let layout = assign_buckets(&ls, 16).unwrap();
        let groups: Vec<Vec<usize>> = layout.buckets().iter().map(|b| b.layer_indices.clone()).collect();
        assert_eq!(groups, vec![vec![3, 4], vec![1, 2], vec![0]]);
    }

    #[test]
    fn single_bucket_sync_is_transfer_time() {
        let ls = layers(&[100, 100]);
        let layout = assign_buckets(&ls, 1 << 20).unwrap();
        let timeline =
            simulate_sync_time(&[3200, 3200], &layout, 6400.0, &[0.5, 0.25]).unwrap();
        assert_eq!(timeline.compute_s, 0.75);
        // Ready when layer 0 (the last to finish) lands.
        assert_eq!(timeline.per_bucket[0].ready_s, 0.75);
        assert_eq!(timeline.sync_s, 1.0);
        assert_eq!(timeline.exposed_comm_s, 1.0);
        assert_eq!(timeline.total_step_s, 1.75);
    }

    #[test]
    fn infinite_bandwidth_hides_all_communication() {
        let ls = layers(&[10, 10, 10]);
        let layout = assign_buckets(&ls, 40).unwrap();
        let timeline = simulate_sync_time(
            &[320, 320, 320],
            &layout,
            f64::INFINITY,
            &[0.1, 0.1, 0.1],
        )
        .unwrap();
        assert_eq!(timeline.exposed_comm_s, 0.0);
        assert_eq!(timeline.total_step_s, timeline.compute_s);
    }

    #[test]
    fn fifo_link_serializes_buckets() {
        // Two buckets: bucket 0 = layer 1, bucket 1 = layer 0.
        let ls = layers(&[1, 1]);
        let layout = assign_buckets(&ls, 4).unwrap();
        let timeline =
            simulate_sync_time(&[100, 100], &layout, 100.0, &[1.0, 1.0]).unwrap();
        // Layer 1 ready at 1.0, transmits 1.0..2.0; layer 0 ready at
        // 2.0 > link 2.0, transmits 2.0..3.0.
        assert_eq!(timeline.per_bucket[0].start_s, 1.0);
        assert_eq!(timeline.per_bucket[0].end_s, 2.0);
        assert_eq!(timeline.per_bucket[1].start_s, 2.0);
        assert_eq!(timeline.per_bucket[1].end_s, 3.0);
        assert_eq!(timeline.sync_s, 2.0);
        assert_eq!(timeline.exposed_comm_s, 1.0);
    }

    #[test]
    fn link_contention_delays_later_buckets() {
        // Big first bucket keeps the link busy past the second
        // bucket's ready time.
        let ls = layers(&[1, 1]);
        let layout = assign_buckets(&ls, 4).unwrap();
        let timeline =
            simulate_sync_time(&[10, 1000], &layout, 100.0, &[0.1, 0.1]).unwrap();
        assert_eq!(timeline.per_bucket[0].start_s, 0.1);
        assert!((timeline.per_bucket[0].end_s - 10.1).abs() < 1e-12);
        // Bucket 1 was ready at 0.2 but waits for the link.
        assert_eq!(timeline.per_bucket[1].ready_s, 0.2);
        assert_eq!(timeline.per_bucket[1].start_s, timeline.per_bucket[0].end_s);
    }

    #[test]
    fn fewer_bits_never_slow_the_step() {
        let ls = layers(&[64, 32, 16, 8]);
        let layout = assign_buckets(&ls, 128).unwrap();
        let backward = [0.2, 0.1, 0.05, 0.025];
        let base = simulate_sync_time(&[2048, 1024, 512, 256], &layout, 1e4, &backward).unwrap();
        let smaller = simulate_sync_time(&[1024, 512, 256, 128], &layout, 1e4, &backward).unwrap();
        assert!(smaller.total_step_s <= base.total_step_s);
        assert!(smaller.sync_s <= base.sync_s);
    }

    #[test]
    fn noiseless_fit_recovers_the_generating_model() {
        let truth = TimingModel {
            coefficients: vec![2e-9, 1e-9, 3e-9],
            intercept_s: 5e-3,
            fit_score: 1.0,
        };
        let mut samples = Vec::new();
        for i in 0..40u64 {
            let bits = vec![
                1_000_000 + 37_000 * i,
                500_000 + 11_000 * ((i * 7) % 13),
                2_000_000 + 53_000 * ((i * 3) % 17),
            ];
            samples.push(TimingSample {
                sync_time_s: truth.predict(&bits),
                bucket_bits: bits,
            });
        }
        let model = fit_timing(&samples).unwrap();
        for (got, want) in model.coefficients.iter().zip(&truth.coefficients) {
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
        assert!((model.intercept_s - truth.intercept_s).abs() <= 1e-12 * truth.intercept_s);
        assert!((model.fit_score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_exposed_bucket_recovers_inverse_bandwidth() {
        let ls = layers(&[1000]);
        let layout = assign_buckets(&ls, 1 << 20).unwrap();
        let bandwidth = 1e6;
        let samples =
            collect_timing_samples(&layout, &ls, bandwidth, &[0.01], 30, (1.0, 64.0), 7).unwrap();
        let model = fit_timing(&samples).unwrap();
        let slope = model.coefficients[0];
        assert!(
            (slope - 1.0 / bandwidth).abs() < 0.01 / bandwidth,
            "slope {slope}"
        );
    }

    #[test]
    fn duplicate_bucket_columns_are_reported() {
        let mut samples = Vec::new();
        for i in 0..20u64 {
            let b = 1000 + 17 * i;
            samples.push(TimingSample {
                bucket_bits: vec![b, 2 * b],
                sync_time_s: 1e-6 * b as f64,
            });
        }
        match fit_timing(&samples).unwrap_err() {
            Error::RankDeficient { columns } => {
                assert!(columns.contains(&"bucket_1".to_string()), "{columns:?}");
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let samples = vec![
            TimingSample {
                bucket_bits: vec![100],
                sync_time_s: 0.1,
            };
            3
        ];
        assert!(matches!(
            fit_timing(&samples),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn negative_coefficients_clamp_to_the_floor() {
        // sync = 1e-6*b0 - 1e-9*b1 + 0.01: bucket 1 helps, which the
        // model refuses to believe.
        let mut samples = Vec::new();
        for i in 0..30u64 {
            let b0 = 1_000 + 13 * ((i * 5) % 29);
            let b1 = 2_000 + 7 * ((i * 11) % 23);
            samples.push(TimingSample {
                bucket_bits: vec![b0, b1],
                sync_time_s: 1e-6 * b0 as f64 - 1e-9 * b1 as f64 + 0.01,
            });
        }
        let model = fit_timing(&samples).unwrap();
        assert_eq!(model.coefficients[1], MIN_COEFFICIENT_S_PER_BIT);
        assert!(model.coefficients[0] > 0.0);
    }

    #[test]
    fn fixed_ratio_samples_repeat_exactly() {
        let ls = layers(&[100, 50, 25]);
        let layout = assign_buckets(&ls, 300).unwrap();
        let samples =
            collect_timing_samples(&layout, &ls, 1e5, &[0.01, 0.01, 0.01], 5, (4.0, 4.0), 3)
                .unwrap();
        assert_eq!(samples.len(), 5);
        for s in &samples[1..] {
            assert_eq!(s, &samples[0]);
        }
        assert!(collect_timing_samples(&layout, &ls, 1e5, &[0.01; 3], 0, (1.0, 8.0), 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn collection_is_seed_deterministic() {
        let ls = layers(&[64, 32]);
        let layout = assign_buckets(&ls, 200).unwrap();
        let a = collect_timing_samples(&layout, &ls, 1e6, &[0.02, 0.01], 12, (1.0, 64.0), 9).unwrap();
        let b = collect_timing_samples(&layout, &ls, 1e6, &[0.02, 0.01], 12, (1.0, 64.0), 9).unwrap();
        assert_eq!(a, b);
        let c = collect_timing_samples(&layout, &ls, 1e6, &[0.02, 0.01], 12, (1.0, 64.0), 10).unwrap();
        assert_ne!(a, c);
    }
}
