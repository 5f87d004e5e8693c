//! Seeded synthetic classification data: a Gaussian mixture with one
//! spherical component per class, labels assigned round-robin so every
//! contiguous shard sees every class.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Scale of the class means relative to unit sample noise.
    pub mean_scale: f64,
    pub noise: f64,
    /// Fraction of training labels replaced by a fresh uniform class draw at
    /// every visit. Per-visit draws cannot be memorized, so the loss floor
    /// they induce is irreducible. Held-out labels get one fixed draw.
    pub label_noise: f64,
    /// Held-out samples drawn from the same mixture, used for evaluation.
    pub eval_pool: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            n_features: 64,
            n_classes: 10,
            mean_scale: 1.0,
            noise: 1.0,
            label_noise: 0.0,
            eval_pool: 1024,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_features == 0 || self.n_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "dataset needs samples, features and at least two classes, got {self:?}"
            )));
        }
        if !(self.mean_scale.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidParameter(
                "dataset scales must be finite and noise non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidParameter(format!(
                "label_noise must lie in [0, 1], got {}",
                self.label_noise
            )));
        }
        if self.eval_pool == 0 {
            return Err(Error::InvalidParameter(
                "eval_pool must hold at least one sample".into(),
            ));
        }
        Ok(())
    }
}

pub struct Dataset {
    /// One sample per row.
    features: DMatrix<f64>,
    labels: Vec<usize>,
    eval_features: DMatrix<f64>,
    eval_labels: Vec<usize>,
    n_classes: usize,
    label_noise: f64,
}

fn flip_labels(labels: &mut [usize], p: f64, n_classes: usize, rng: &mut impl Rng) {
    for label in labels {
        let flip = rng.random::<f64>() < p;
        let draw = rng.random_range(0..n_classes);
        if flip {
            *label = draw;
        }
    }
}

fn mixture_split(
    cfg: &DatasetConfig,
    means: &[Vec<f64>],
    n: usize,
    mut sample_rng: impl Rng,
) -> (DMatrix<f64>, Vec<usize>) {
    let mut features = DMatrix::zeros(n, cfg.n_features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % cfg.n_classes;
        labels.push(label);
        for j in 0..cfg.n_features {
            let z: f64 = StandardNormal.sample(&mut sample_rng);
            features[(i, j)] = means[label][j] + cfg.noise * z;
        }
    }
    (features, labels)
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig, base_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut mean_rng = stream_rng(base_seed, Stream::Dataset, &[0]);
        let means: Vec<Vec<f64>> = (0..cfg.n_classes)
            .map(|_| {
                (0..cfg.n_features)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut mean_rng);
                        cfg.mean_scale * z
                    })
                    .collect()
            })
            .collect();
        let (features, labels) = mixture_split(
            cfg,
            &means,
            cfg.n_samples,
            stream_rng(base_seed, Stream::Dataset, &[1]),
        );
        let (eval_features, mut eval_labels) = mixture_split(
            cfg,
            &means,
            cfg.eval_pool,
            stream_rng(base_seed, Stream::Dataset, &[3]),
        );
        if cfg.label_noise > 0.0 {
            let mut rng = stream_rng(base_seed, Stream::Dataset, &[4]);
            flip_labels(&mut eval_labels, cfg.label_noise, cfg.n_classes, &mut rng);
        }
        Ok(Self {
            features,
            labels,
            eval_features,
            eval_labels,
            n_classes: cfg.n_classes,
            label_noise: cfg.label_noise,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Contiguous per-worker shard; sizes differ by at most one.
    pub fn shard(&self, worker: usize, n_workers: usize) -> Range<usize> {
        let n = self.len();
        let base = n / n_workers;
        let extra = n % n_workers;
        let start = worker * base + worker.min(extra);
        let len = base + usize::from(worker < extra);
        start..start + len
    }

    pub fn batch(&self, indices: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(indices.len(), self.n_features(), |r, c| {
            self.features[(indices[r], c)]
        });
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (x, labels)
    }

    /// Training batch as one worker sees it at one step: per-visit label
    /// flips drawn from a stream keyed on (step, worker).
    pub fn train_batch(
        &self,
        base_seed: u64,
        step: u64,
        worker: usize,
        indices: &[usize],
    ) -> (DMatrix<f64>, Vec<usize>) {
        let (x, mut labels) = self.batch(indices);
        if self.label_noise > 0.0 {
            let mut rng = stream_rng(base_seed, Stream::LabelNoise, &[step, worker as u64]);
            flip_labels(&mut labels, self.label_noise, self.n_classes, &mut rng);
        }
        (x, labels)
    }

    /// The whole dataset (or its first `limit` rows) as one batch.
    pub fn full_batch(&self, limit: usize) -> (DMatrix<f64>, Vec<usize>) {
        let n = self.len().min(limit);
        let x = self.features.rows(0, n).into_owned();
        (x, self.labels[..n].to_vec())
    }

    /// Held-out evaluation batch; never overlaps the training shards.
    pub fn eval_batch(&self, limit: usize) -> (DMatrix<f64>, Vec<usize>) {
        let n = self.eval_labels.len().min(limit);
        let x = self.eval_features.rows(0, n).into_owned();
        (x, self.eval_labels[..n].to_vec())
    }
}

/// Uniform with-replacement draw from a shard; one stream per
/// (step, worker) so schedules are independent of execution order.
pub fn minibatch_indices(
    base_seed: u64,
    step: u64,
    worker: usize,
    shard: Range<usize>,
    batch_size: usize,
) -> Vec<usize> {
    let mut rng = stream_rng(base_seed, Stream::BatchSchedule, &[step, worker as u64]);
    (0..batch_size)
        .map(|_| rng.random_range(shard.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = DatasetConfig {
            n_samples: 40,
            n_features: 4,
            n_classes: 4,
            ..DatasetConfig::default()
        };
        let a = Dataset::generate(&cfg, 3).unwrap();
        let b = Dataset::generate(&cfg, 3).unwrap();
        assert_eq!(a.features, b.features);
        assert_ne!(
            a.features,
            Dataset::generate(&cfg, 4).unwrap().features
        );
    }

    #[test]
    fn shards_partition_the_data() {
        let cfg = DatasetConfig {
            n_samples: 41,
            n_features: 2,
            n_classes: 2,
            ..DatasetConfig::default()
        };
        let d = Dataset::generate(&cfg, 0).unwrap();
        let mut covered = 0;
        for w in 0..3 {
            let shard = d.shard(w, 3);
            assert_eq!(shard.start, covered);
            covered = shard.end;
        }
        assert_eq!(covered, 41);
    }

    #[test]
    fn every_shard_sees_every_class() {
        let d = Dataset::generate(&DatasetConfig::default(), 1).unwrap();
        for w in 0..4 {
            let shard = d.shard(w, 4);
            let mut seen = vec![false; d.n_classes()];
            for i in shard {
                seen[d.labels[i]] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn class_means_are_separated() {
        let cfg = DatasetConfig::default();
        let d = Dataset::generate(&cfg, 5).unwrap();
        let mut centroids = vec![vec![0.0; cfg.n_features]; cfg.n_classes];
        let mut counts = vec![0usize; cfg.n_classes];
        for i in 0..d.len() {
            counts[d.labels[i]] += 1;
            for j in 0..cfg.n_features {
                centroids[d.labels[i]][j] += d.features[(i, j)];
            }
        }
        for (c, count) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= *count as f64;
            }
        }
        let dist: f64 = centroids[0]
            .iter()
            .zip(&centroids[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 3.0, "class centroids too close: {dist}");
    }

    #[test]
    fn minibatches_stay_in_shard_and_replay() {
        let a = minibatch_indices(9, 14, 2, 100..150, 16);
        let b = minibatch_indices(9, 14, 2, 100..150, 16);
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| (100..150).contains(&i)));
        assert_ne!(a, minibatch_indices(9, 15, 2, 100..150, 16));
    }
}
