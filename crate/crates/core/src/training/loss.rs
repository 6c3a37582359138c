use crate::error::{Error, Result};
use crate::nn::{cast, Real, Tensor};

/// Weight on positive (target = 1) bins.
pub const DEFAULT_OMEGA: f64 = 5.0;
/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weighted binary cross-entropy between `pred` and 0/1 `target`, both
/// `N x T x B`:
///
/// ```text
/// L = -(1/N) sum_{n,t,b} [ w y log p + (1 - y) log(1 - p) ]
/// ```
///
/// Returns the loss and `dL/dpred`.
pub fn weighted_bce<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    omega: f64,
) -> Result<(f64, Tensor<T>)> {
    pred.check_same_shape(target)?;
    if pred.rank() == 0 || pred.shape()[0] == 0 {
        return Err(Error::Shape("loss needs at least one batch item".into()));
    }
    let n = pred.shape()[0] as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let (p, y) = (p.to_f64().unwrap(), y.to_f64().unwrap());
        let (l, d) = term(p, y, omega);
        loss += l;
        *g = cast(d / n);
    }
    Ok((loss / n, grad))
}

/// Loss of a single row set (no batch averaging).
pub fn weighted_bce_sum(pred: &[f64], target: &[f64], omega: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| term(p, y, omega).0)
        .sum())
}

/// Loss contribution and its derivative for one entry.
#[inline]
fn term(p: f64, y: f64, omega: f64) -> (f64, f64) {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(omega * y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = -(omega * y / p - (1.0 - y) / (1.0 - p));
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn uniform_prediction_values() {
        let mut y = vec![0.0; 360];
        let p = vec![0.5; 360];
        assert!((weighted_bce_sum(&p, &y, 5.0).unwrap() - 360.0 * LN_2).abs() < 1e-9);
        y[100] = 1.0;
        assert!((weighted_bce_sum(&p, &y, 5.0).unwrap() - 364.0 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let mut y = vec![0.0; 360];
        y[7] = 1.0;
        assert!(weighted_bce_sum(&y, &y, 5.0).unwrap() <= 360.0 * 1e-6);
    }

    #[test]
    fn batch_mean() {
        let p = Tensor::<f64>::full(&[2, 1, 360], 0.5);
        let y = Tensor::zeros(&[2, 1, 360]);
        let (l, g) = weighted_bce(&p, &y, 5.0).unwrap();
        assert!((l - 360.0 * LN_2).abs() < 1e-9);
        // d/dp of -log(1 - p) at 0.5 is 2, halved by the batch mean
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch() {
        assert!(weighted_bce_sum(&[0.5], &[0.0, 1.0], 5.0).is_err());
    }
}
