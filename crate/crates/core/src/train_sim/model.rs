//! Small fully connected classifier used as the simulation workload.
//!
//! Layer widths are deliberately spread over more than an order of
//! magnitude so per-layer compression choices have something to trade
//! off. Weights for layer `i` live in tensor `fc{i}.weight` with shape
//! `[out, in]`, biases in `fc{i}.bias`; flat views are row-major.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::seeds::{stream_rng, Stream};

pub struct Mlp {
    widths: Vec<usize>,
    /// Per linear layer, stored input-major (`in x out`) so the flat
    /// column-major view matches the `[out, in]` row-major tensor.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Tensor layout of an MLP with the given widths: per linear layer a
/// `[out, in]` weight followed by an `[out]` bias.
pub fn mlp_layer_specs(widths: &[usize]) -> Result<Vec<LayerSpec>> {
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(Error::InvalidParameter(format!(
            "need at least two positive layer widths, got {widths:?}"
        )));
    }
    let mut specs = Vec::with_capacity(2 * (widths.len() - 1));
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        specs.push(LayerSpec::new(2 * i, format!("fc{i}.weight"), vec![fan_out, fan_in])?);
        specs.push(LayerSpec::new(2 * i + 1, format!("fc{i}.bias"), vec![fan_out])?);
    }
    Ok(specs)
}

impl Mlp {
    /// He-uniform weight init, zero biases; one RNG stream per tensor.
    pub fn init(widths: &[usize], base_seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter(format!(
                "need at least two positive layer widths, got {widths:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = stream_rng(base_seed, Stream::ModelInit, &[i as u64]);
            weights.push(DMatrix::from_fn(fan_in, fan_out, |_, _| {
                (rng.random::<f64>() * 2.0 - 1.0) * bound
            }));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_linear(&self) -> usize {
        self.widths.len() - 1
    }

    /// Two tensors per linear layer: weight then bias.
    pub fn n_tensors(&self) -> usize {
        2 * self.n_linear()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        mlp_layer_specs(&self.widths).expect("widths validated at init")
    }

    /// Row-major flat copy of tensor `t`.
    pub fn tensor(&self, t: usize) -> Vec<f64> {
        if t % 2 == 0 {
            self.weights[t / 2].as_slice().to_vec()
        } else {
            self.biases[t / 2].clone()
        }
    }

    pub fn tensor_mut(&mut self, t: usize) -> &mut [f64] {
        if t % 2 == 0 {
            self.weights[t / 2].as_mut_slice()
        } else {
            &mut self.biases[t / 2]
        }
    }

    pub fn params_flat(&self) -> Vec<Vec<f64>> {
        (0..self.n_tensors()).map(|t| self.tensor(t)).collect()
    }

    pub fn set_params_flat(&mut self, params: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.n_tensors() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} tensors, got {}",
                self.n_tensors(),
                params.len()
            )));
        }
        for (t, p) in params.iter().enumerate() {
            let dst = self.tensor_mut(t);
            if dst.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {t} has {} elements, got {}",
                    dst.len(),
                    p.len()
                )));
            }
            dst.copy_from_slice(p);
        }
        Ok(())
    }

    fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = &a * w;
            add_bias_rows(&mut z, b);
            if i + 1 < self.weights.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        softmax_loss_grad(&self.logits(x), labels).0
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let logits = self.logits(x);
        let mut hits = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0usize;
            for c in 1..row.ncols() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best == label {
                hits += 1;
            }
        }
        hits as f64 / labels.len().max(1) as f64
    }

    /// Mean-loss gradient for every tensor, flattened in tensor order.
    pub fn backward(&self, x: &DMatrix<f64>, labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
        let depth = self.n_linear();
        let mut pre = Vec::with_capacity(depth);
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(x.clone());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts.last().unwrap() * w;
            add_bias_rows(&mut z, b);
            pre.push(z.clone());
            if i + 1 < depth {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }

        let (loss, mut g) = softmax_loss_grad(&pre[depth - 1], labels);
        let mut grads = vec![Vec::new(); self.n_tensors()];
        for i in (0..depth).rev() {
            let gw = acts[i].tr_mul(&g);
            grads[2 * i] = gw.as_slice().to_vec();
            grads[2 * i + 1] = g.row_sum().iter().copied().collect();
            if i > 0 {
                let mut gx = &g * self.weights[i].transpose();
                gx.zip_apply(&pre[i - 1], |v, z| {
                    if z <= 0.0 {
                        *v = 0.0;
                    }
                });
                g = gx;
            }
        }
        (loss, grads)
    }
}

fn add_bias_rows(z: &mut DMatrix<f64>, bias: &[f64]) {
    for mut row in z.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Stable mean softmax cross-entropy and its logit gradient (already
/// divided by the batch size).
fn softmax_loss_grad(logits: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let b = logits.nrows();
    assert_eq!(labels.len(), b, "one label per batch row");
    let inv_b = 1.0 / b as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let mut row = grad.row_mut(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        loss += sum.ln() + m - logits[(r, label)];
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[label] -= 1.0;
        row *= inv_b;
    }
    (loss * inv_b, grad)
}

/// Plain SGD with momentum on flat tensor views.
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, tensor_sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &[Vec<f64>]) {
        for (t, g) in grads.iter().enumerate() {
            let v = &mut self.velocity[t];
            let p = model.tensor_mut(t);
            for ((vi, pi), &gi) in v.iter_mut().zip(p.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Mlp {
        Mlp::init(&[3, 5, 2], 7).unwrap()
    }

    #[test]
    fn tensor_layout_matches_specs() {
        let m = tiny();
        let specs = m.layer_specs();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].shape, vec![5, 3]);
        assert_eq!(specs[1].shape, vec![5]);
        assert_eq!(specs[2].shape, vec![2, 5]);
        for (t, spec) in specs.iter().enumerate() {
            assert_eq!(m.tensor(t).len(), spec.element_count());
        }
    }

    #[test]
    fn flat_view_is_row_major() {
        let mut m = tiny();
        let flat = m.tensor(0);
        m.tensor_mut(0)[1] = 42.0;
        let w = &m.weights[0];
        assert_eq!(w[(1, 0)], 42.0);
        assert_eq!(flat[3], w[(0, 1)]);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let m = tiny();
        let x = DMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let labels = [0usize, 1, 1, 0];
        let (_, grads) = m.backward(&x, &labels);

        let eps = 1e-6;
        for t in 0..m.n_tensors() {
            let flat = m.tensor(t);
            for probe in [0, flat.len() / 2, flat.len() - 1] {
                let mut bumped = Mlp::init(&[3, 5, 2], 7).unwrap();
                bumped.tensor_mut(t)[probe] += eps;
                let up = bumped.loss(&x, &labels);
                bumped.tensor_mut(t)[probe] -= 2.0 * eps;
                let down = bumped.loss(&x, &labels);
                let fd = (up - down) / (2.0 * eps);
                assert!(
                    (fd - grads[t][probe]).abs() < 1e-6,
                    "tensor {t} elem {probe}: fd {fd} vs analytic {}",
                    grads[t][probe]
                );
            }
        }
    }

    #[test]
    fn softmax_loss_matches_hand_computation() {
        let logits = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (loss, grad) = softmax_loss_grad(&logits, &[0]);
        let p0 = 1.0f64 / (1.0 + (-1.0f64).exp());
        assert!((loss + p0.ln()).abs() < 1e-12);
        assert!((grad[(0, 0)] - (p0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Mlp::init(&[4, 8, 3], 11).unwrap();
        let b = Mlp::init(&[4, 8, 3], 11).unwrap();
        let c = Mlp::init(&[4, 8, 3], 12).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut m = tiny();
        let before = m.tensor(1)[0];
        let mut opt = Sgd::new(0.1, 0.5, &[15, 5, 10, 2]);
        let mut grads: Vec<Vec<f64>> = vec![vec![0.0; 15], vec![0.0; 5], vec![0.0; 10], vec![0.0; 2]];
        grads[1][0] = 1.0;
        opt.step(&mut m, &grads);
        opt.step(&mut m, &grads);
        let expected = before - 0.1 * (1.0 + 1.5);
        assert!((m.tensor(1)[0] - expected).abs() < 1e-15);
    }
}
