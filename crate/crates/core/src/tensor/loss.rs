use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::map::ActionnessMap;

/// Probabilities are clamped to at least this value before taking the log.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossResult<T = f32> {
    pub loss: T,
    /// Gradient with respect to the pre-softmax logits.
    pub gradient: Tensor<T>,
}

/// Summed per-pixel cross-entropy between softmax probabilities and integer
/// class labels (one label per spatial position, row-major).
///
/// `probs` must be the output of [`channel_softmax`](super::channel_softmax);
/// the returned gradient is `softmax − onehot`, i.e. the derivative of the
/// loss with respect to the logits that produced `probs`.
pub fn softmax_cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<LossResult<T>> {
    let (h, w, c) = probs.shape();
    if labels.len() != h * w {
        return Err(Error::shape(format!(
            "{} labels for a {h}x{w} prediction",
            labels.len()
        )));
    }
    let eps = T::lit(PROB_EPSILON);
    let mut loss = T::zero();
    let mut gradient = probs.clone();
    for (px, &label) in gradient.data_mut().chunks_exact_mut(c).zip(labels) {
        if label >= c {
            return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
        }
        loss = loss - px[label].max(eps).ln();
        px[label] = px[label] - T::one();
    }
    Ok(LossResult { loss, gradient })
}

/// Cross-entropy of a two-channel probability map against a binary target;
/// channel 1 is the foreground (action) class.
pub fn pixel_cross_entropy<T: Real>(pred: &Tensor<T>, target: &ActionnessMap) -> Result<LossResult<T>> {
    if pred.channels() != 2 {
        return Err(Error::ChannelMismatch {
            expected: 2,
            actual: pred.channels(),
        });
    }
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    let labels = target
        .values()
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            v => Err(Error::invalid(format!("target value {v} is not binary"))),
        })
        .collect::<Result<Vec<_>>>()?;
    softmax_cross_entropy(pred, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::channel_softmax;

    fn uniform(h: usize, w: usize) -> Tensor<f64> {
        Tensor::filled(h, w, 2, 0.5)
    }

    #[test]
    fn uniform_prediction_costs_ln2_per_pixel() {
        let target = ActionnessMap::from_fn(5, 7, |r, c| ((r + c) % 3 == 0) as u8 as f32);
        let res = pixel_cross_entropy(&uniform(5, 7), &target).unwrap();
        assert!((res.loss - 35.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn exact_prediction_is_near_zero() {
        let target = ActionnessMap::from_fn(4, 4, |r, _| (r < 2) as u8 as f32);
        let pred = Tensor::<f64>::from_fn(4, 4, 2, |r, _, ch| {
            let fg = (r < 2) as u8 as f64;
            if ch == 1 {
                fg
            } else {
                1.0 - fg
            }
        });
        let res = pixel_cross_entropy(&pred, &target).unwrap();
        assert!(res.loss <= 16.0 * -(1.0 - PROB_EPSILON).ln() + 1e-12);
    }

    #[test]
    fn rejects_bad_targets() {
        let pred = uniform(2, 2);
        let t = ActionnessMap::new(2, 2, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
        assert!(pixel_cross_entropy(&pred, &t).is_err());
        let t = ActionnessMap::zeros(2, 3);
        assert!(matches!(pixel_cross_entropy(&pred, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let logits = Tensor::<f64>::new(1, 2, 2, vec![0.3, -0.2, 1.0, 2.0]).unwrap();
        let p = channel_softmax(&logits);
        let t = ActionnessMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let res = pixel_cross_entropy(&p, &t).unwrap();
        let g = res.gradient.data();
        assert!((g[0] - p.data()[0]).abs() < 1e-15);
        assert!((g[1] - (p.data()[1] - 1.0)).abs() < 1e-15);
        assert!((g[2] - (p.data()[2] - 1.0)).abs() < 1e-15);
    }
}
