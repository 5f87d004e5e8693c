//! Static description of one gradient tensor in the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and identity of one parameter tensor whose gradient gets
/// compressed. `index` is the position in backward-pass production
/// order (layer 0 produces its gradient last).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub name: String,
    pub shape: Vec<usize>,
    /// Communication bucket this layer is assigned to; 0 until a
    /// bucket layout stamps it.
    pub bucket_id: usize,
}

impl LayerSpec {
    pub fn new(index: usize, name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "layer shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        Ok(Self {
            index,
            name: name.into(),
            shape,
            bucket_id: 0,
        })
    }

    /// Total number of gradient elements.
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Matrix interpretation for low-rank compression: first dim by
    /// the product of the rest. Vectors have no matrix view.
    pub fn matrix_view(&self) -> Option<(usize, usize)> {
        if self.shape.len() < 2 {
            return None;
        }
        let rows = self.shape[0];
        let cols = self.shape[1..].iter().product();
        Some((rows, cols))
    }

    /// Size of the uncompressed gradient on the wire, in bits, at 32
    /// bits per element.
    pub fn uncompressed_bits(&self) -> u64 {
        32 * self.element_count() as u64
    }
}

/// Checks that `grads` has one slice per layer with matching lengths.
pub fn check_gradient_shapes<T>(layers: &[LayerSpec], grads: &[impl AsRef<[T]>]) -> Result<()> {
    if layers.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers but {} gradient tensors",
            layers.len(),
            grads.len()
        )));
    }
    for (layer, g) in layers.iter().zip(grads) {
        if layer.element_count() != g.as_ref().len() {
            return Err(Error::ShapeMismatch(format!(
                "layer {} ({}) has {} elements but gradient has {}",
                layer.index,
                layer.name,
                layer.element_count(),
                g.as_ref().len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_view_folds_trailing_dims() {
        let l = LayerSpec::new(0, "conv", vec![8, 3, 5, 5]).unwrap();
        assert_eq!(l.element_count(), 600);
        assert_eq!(l.matrix_view(), Some((8, 75)));
    }

    #[test]
    fn vectors_have_no_matrix_view() {
        let l = LayerSpec::new(1, "bias", vec![32]).unwrap();
        assert_eq!(l.matrix_view(), None);
        assert_eq!(l.uncompressed_bits(), 32 * 32);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(LayerSpec::new(0, "bad", vec![4, 0]).is_err());
        assert!(LayerSpec::new(0, "bad", vec![]).is_err());
    }
}
