use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::map::ActionnessMap;
use crate::tensor::{bilinear_resize, channel_softmax, softmax_cross_entropy, Tensor};

/// Mini-batch SGD schedule.
///
/// Learning rates are piecewise constant: milestone `(i, r)` sets the rate to
/// `r` from iteration `i` on. The first `frozen_layers` parameterised layers
/// are never updated and the next `reduced_lr_layers` train at
/// `reduced_lr_multiplier` times the current rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub momentum: f32,
    pub milestones: Vec<(usize, f32)>,
    pub total_iterations: usize,
    pub frozen_layers: usize,
    pub reduced_lr_layers: usize,
    pub reduced_lr_multiplier: f32,
    pub input_size: [usize; 2],
    pub target_size: [usize; 2],
}

impl TrainSchedule {
    /// Fine-tuning schedule for the full-size networks: batch 100, momentum
    /// 0.9, rate 1e-2 → 1e-3 at 1000 → 1e-4 at 2000, stop at 3000, first
    /// three conv layers frozen, conv4/conv5 at 0.1×, 224² inputs, 14² maps.
    pub fn full_scale() -> Self {
        TrainSchedule {
            batch_size: 100,
            momentum: 0.9,
            milestones: vec![(0, 1e-2), (1000, 1e-3), (2000, 1e-4)],
            total_iterations: 3000,
            frozen_layers: 3,
            reduced_lr_layers: 2,
            reduced_lr_multiplier: 0.1,
            input_size: [224, 224],
            target_size: [14, 14],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        match self.milestones.first() {
            Some((0, _)) => {}
            _ => return Err(Error::invalid("the first learning-rate milestone must be at iteration 0")),
        }
        if self.milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        if self.milestones.iter().any(|&(_, r)| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.reduced_lr_multiplier >= 0.0) {
            return Err(Error::invalid("reduced_lr_multiplier must be non-negative"));
        }
        if self.input_size.contains(&0) || self.target_size.contains(&0) {
            return Err(Error::invalid("input and target sizes must be positive"));
        }
        Ok(())
    }

    pub fn rate_at(&self, iteration: usize) -> f32 {
        self.milestones
            .iter()
            .take_while(|(i, _)| *i <= iteration)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(0.0)
    }

    /// Per-layer learning rates for base rate `base` (zero for layers that
    /// must not move).
    pub fn layer_rates(&self, net: &Network, base: f32) -> Vec<f32> {
        let mut rates = vec![0.0; net.layers().len()];
        for (k, idx) in net.spec().param_layers().into_iter().enumerate() {
            let l = &net.spec().layers[idx];
            if !l.trainable || k < self.frozen_layers {
                continue;
            }
            let mult = if k < self.frozen_layers + self.reduced_lr_layers {
                self.reduced_lr_multiplier
            } else {
                1.0
            };
            rates[idx] = base * mult * l.lr_mult;
        }
        rates
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-pixel cross-entropy of each iteration's mini-batch.
    pub losses: Vec<f32>,
}

/// Fine-tune an actionness network on `(input, binary target)` pairs.
///
/// Inputs are resized to `schedule.input_size`; targets are resized with
/// nearest-neighbour sampling to `schedule.target_size`, which must equal the
/// network's output size. Each iteration draws `batch_size` samples with
/// replacement from a ChaCha8 stream seeded with `seed` and minimises the mean
/// per-pixel cross-entropy.
pub fn fine_tune(
    net: Network,
    dataset: &[(Tensor<f32>, ActionnessMap)],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(Network, TrainReport)> {
    fine_tune_with(net, dataset, schedule, seed, Exec::default())
}

pub fn fine_tune_with(
    net: Network,
    dataset: &[(Tensor<f32>, ActionnessMap)],
    schedule: &TrainSchedule,
    seed: u64,
    exec: Exec,
) -> Result<(Network, TrainReport)> {
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let [ih, iw] = schedule.input_size;
    let [th, tw] = schedule.target_size;
    match net.output_size(ih, iw) {
        Some(out) if out == (th, tw) => {}
        out => {
            return Err(Error::shape(format!(
                "network {} maps {ih}x{iw} to {out:?}, schedule targets are {th}x{tw}",
                net.spec().name
            )))
        }
    }
    let samples = exec.try_map(dataset, |(x, t)| -> Result<(Tensor<f32>, Vec<usize>)> {
        let x = if (x.height(), x.width()) == (ih, iw) {
            x.clone()
        } else {
            bilinear_resize(x, ih, iw)?
        };
        let t = t.resize_nearest(th, tw)?;
        let labels = t
            .values()
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(Error::invalid(format!("target value {v} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((x, labels))
    })?;
    train_labels(net, &samples, schedule, seed, exec)
}

/// Train a classifier on `(crop, class)` pairs; every output position is
/// assigned the crop's class.
pub fn train_classifier(
    net: Network,
    dataset: &[(Tensor<f32>, usize)],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(Network, TrainReport)> {
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let samples = dataset
        .iter()
        .map(|(x, class)| {
            let (oh, ow) = net.output_size(x.height(), x.width()).ok_or_else(|| {
                Error::EmptyOutput(format!("{}x{} crop is too small", x.height(), x.width()))
            })?;
            Ok((x.clone(), vec![*class; oh * ow]))
        })
        .collect::<Result<Vec<_>>>()?;
    train_labels(net, &samples, schedule, seed, Exec::default())
}

fn train_labels(
    mut net: Network,
    samples: &[(Tensor<f32>, Vec<usize>)],
    schedule: &TrainSchedule,
    seed: u64,
    exec: Exec,
) -> Result<(Network, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TrainReport::default();
    for it in 0..schedule.total_iterations {
        let batch: Vec<usize> = (0..schedule.batch_size)
            .map(|_| rng.random_range(0..samples.len()))
            .collect();
        let results = exec.try_map(&batch, |&i| -> Result<(f64, usize, Gradients)> {
            let (x, labels) = &samples[i];
            let (logits, trace) = net.forward_trace(x.clone())?;
            let probs = channel_softmax(&logits);
            let loss = softmax_cross_entropy(&probs, labels)?;
            let grads = net.backward(&trace, &loss.gradient)?;
            Ok((loss.loss as f64, labels.len(), grads))
        })?;

        let mut total = Gradients::zeros_like(&net);
        let (mut loss_sum, mut pixels) = (0.0f64, 0usize);
        for (loss, n, g) in &results {
            total.accumulate(g);
            loss_sum += loss;
            pixels += n;
        }
        total.scale(1.0 / pixels as f32);
        if !total.is_finite() || !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!("training iteration {it}")));
        }
        let rate = schedule.rate_at(it);
        let rates = schedule.layer_rates(&net, rate);
        net.apply_gradients(&total, &rates, schedule.momentum)?;
        let mean_loss = (loss_sum / pixels as f64) as f32;
        log::debug!("iter {it} lr {rate} loss {mean_loss}");
        report.losses.push(mean_loss);
    }
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_network, NetworkSpec};

    fn toy_schedule(iters: usize) -> TrainSchedule {
        TrainSchedule {
            batch_size: 4,
            momentum: 0.9,
            milestones: vec![(0, 0.05)],
            total_iterations: iters,
            frozen_layers: 0,
            reduced_lr_layers: 0,
            reduced_lr_multiplier: 1.0,
            input_size: [64, 64],
            target_size: [4, 4],
        }
    }

    fn tiny_dataset() -> Vec<(Tensor<f32>, ActionnessMap)> {
        (0..3)
            .map(|i| {
                let x = Tensor::from_fn(64, 64, 3, |r, c, ch| ((r * 3 + c * (i + 1) + ch) % 9) as f32 / 9.0);
                let t = ActionnessMap::from_fn(64, 64, |r, c| ((r / 16 + c / 16 + i) % 2) as f32);
                (x, t)
            })
            .collect()
    }

    #[test]
    fn full_scale_schedule_rates() {
        let s = TrainSchedule::full_scale();
        s.validate().unwrap();
        assert_eq!(s.rate_at(0), 1e-2);
        assert_eq!(s.rate_at(999), 1e-2);
        assert_eq!(s.rate_at(1000), 1e-3);
        assert_eq!(s.rate_at(2500), 1e-4);
        let net = build_network(&NetworkSpec::toy_stride16(), 0).unwrap();
        let rates = s.layer_rates(&net, 1.0);
        let params = net.spec().param_layers();
        let conv_rates: Vec<f32> = params.iter().map(|&i| rates[i]).collect();
        assert_eq!(conv_rates, vec![0.0, 0.0, 0.0, 0.1, 0.1, 1.0, 1.0]);
    }

    #[test]
    fn schedule_validation() {
        let mut s = toy_schedule(1);
        s.milestones = vec![(0, 0.1), (0, 0.01)];
        assert!(s.validate().is_err());
        s.milestones = vec![(5, 0.1)];
        assert!(s.validate().is_err());
        s.milestones = vec![(0, 0.1)];
        s.momentum = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_iterations_leave_network_unchanged() {
        let net = build_network(&NetworkSpec::toy_stride16(), 2).unwrap();
        let (out, report) = fine_tune(net.clone(), &tiny_dataset(), &toy_schedule(0), 1).unwrap();
        assert_eq!(out, net);
        assert!(report.losses.is_empty());
    }

    #[test]
    fn errors_on_empty_or_mismatched() {
        let net = build_network(&NetworkSpec::toy_stride16(), 2).unwrap();
        assert!(fine_tune(net.clone(), &[], &toy_schedule(1), 1).is_err());
        let mut s = toy_schedule(1);
        s.target_size = [5, 5];
        assert!(matches!(fine_tune(net, &tiny_dataset(), &s, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn frozen_layers_stay_bitwise_identical() {
        let net = build_network(&NetworkSpec::toy_stride16(), 5).unwrap();
        let mut s = toy_schedule(100);
        s.batch_size = 2;
        s.frozen_layers = 3;
        s.reduced_lr_layers = 2;
        s.reduced_lr_multiplier = 0.1;
        let (trained, _) = fine_tune(net.clone(), &tiny_dataset(), &s, 3).unwrap();
        let params = net.spec().param_layers();
        for (k, &i) in params.iter().enumerate() {
            if k < 3 {
                assert_eq!(trained.kernel(i), net.kernel(i), "layer {i} moved");
            } else {
                assert_ne!(trained.kernel(i), net.kernel(i), "layer {i} did not train");
            }
        }
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let net = build_network(&NetworkSpec::toy_stride16(), 6).unwrap();
        let s = toy_schedule(5);
        let a = fine_tune_with(net.clone(), &tiny_dataset(), &s, 9, Exec::Parallel).unwrap();
        let b = fine_tune_with(net, &tiny_dataset(), &s, 9, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
