//! Correlation between the loss-probe sensitivity values and the
//! cheap reconstruction-error metric, used to justify planning on the
//! cheap one.

use crate::error::{Error, Result};

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("correlation input is not finite".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Numerical(
            "correlation undefined for zero-variance input".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Average ranks (ties share the mean of their positions), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("correlation input is not finite".into()));
    }
    pearson(&ranks(a), &ranks(b))
}

/// Flattened Pearson and Spearman coefficients between two
/// layers-by-params matrices of sensitivity measurements.
pub fn metric_correlation(
    loss_deltas: &[Vec<f64>],
    error_norms: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if loss_deltas.len() != error_norms.len()
        || loss_deltas
            .iter()
            .zip(error_norms)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::ShapeMismatch(
            "sensitivity matrices must have identical shapes".into(),
        ));
    }
    let a: Vec<f64> = loss_deltas.iter().flatten().copied().collect();
    let b: Vec<f64> = error_norms.iter().flatten().copied().collect();
    if a.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: a.len(),
        });
    }
    Ok((pearson(&a, &b)?, spearman(&a, &b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_perfect_correlation() {
        let m = vec![vec![0.1, 0.4], vec![0.2, 0.9]];
        let (p, s) = metric_correlation(&m, &m).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_inputs_give_perfect_anticorrelation() {
        let a = vec![vec![0.1, 0.4], vec![0.2, 0.9]];
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().map(|v| -v).collect())
            .collect();
        let (p, s) = metric_correlation(&a, &b).unwrap();
        assert!((p + 1.0).abs() < 1e-12);
        assert!((s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let a = vec![vec![1.0, 1.0, 1.0]];
        let b = vec![vec![0.1, 0.2, 0.3]];
        assert!(matches!(
            metric_correlation(&a, &b),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = vec![vec![1.0, 2.0]];
        let b = vec![vec![1.0, 2.0, 3.0]];
        assert!(metric_correlation(&a, &b).is_err());
        assert!(metric_correlation(&a[..0].to_vec(), &[]).is_err());
    }

    #[test]
    fn too_few_entries_is_an_error() {
        let a = vec![vec![1.0, 2.0]];
        assert!(matches!(
            metric_correlation(&a, &a),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn spearman_is_rank_based() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 10.0, 100.0, 1000.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let p = pearson(&a, &b).unwrap();
        assert!(p < 0.95, "pearson should see the nonlinearity: {p}");
    }

    #[test]
    fn tied_ranks_average() {
        let r = ranks(&[5.0, 1.0, 5.0, 0.0]);
        assert_eq!(r, vec![3.5, 2.0, 3.5, 1.0]);
    }

    #[test]
    fn monotone_noisy_relation_is_positive() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30)
            .map(|i| i as f64 + if i % 2 == 0 { 3.0 } else { -3.0 })
            .collect();
        assert!(pearson(&a, &b).unwrap() > 0.9);
        assert!(spearman(&a, &b).unwrap() > 0.8);
    }
}
