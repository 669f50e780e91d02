use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

/// Mean categorical cross-entropy of softmax outputs against integer labels.
///
/// Also returns the gradient of the mean loss with respect to the logits
/// that produced `probs`: `(probs - onehot) / N`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(LossValue, Tensor)> {
    let [n, k] = probs.dims2("cross_entropy probs")?;
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} outside 0..{k}")));
    }
    let p = probs.data();
    let per_sample: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -p[i * k + l].max(PROB_FLOOR).ln())
        .collect();
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    let mut grad = p.to_vec();
    for (i, &l) in labels.iter().enumerate() {
        grad[i * k + l] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((LossValue { mean, per_sample }, Tensor::new(&[n, k], grad)?))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let preds = crate::network::argmax_rows(probs);
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = Tensor::new(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy(&p, &[1, 0]).unwrap();
        assert_eq!(loss.per_sample, vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_four_class_is_ln4() {
        let p = Tensor::full(&[3, 4], 0.25);
        let (loss, grad) = cross_entropy(&p, &[0, 1, 3]).unwrap();
        for l in &loss.per_sample {
            assert!((l - 4f64.ln()).abs() < 1e-15);
        }
        assert!((loss.mean - 1.3863).abs() < 1e-4);
        for row in grad.data().chunks(4) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn floor_keeps_confident_mistakes_finite() {
        let p = softmax(&Tensor::new(&[1, 2], vec![0.0, 2000.0]).unwrap()).unwrap();
        let (loss, _) = cross_entropy(&p, &[0]).unwrap();
        assert!((loss.mean - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_label() {
        let p = Tensor::full(&[1, 4], 0.25);
        assert!(matches!(cross_entropy(&p, &[4]), Err(Error::Label(_))));
    }
}
