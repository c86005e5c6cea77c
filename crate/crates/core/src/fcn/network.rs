use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{channel_softmax, ConvKernel, Layer, LayerCache, Tensor};

/// A parameterised network built from a [`NetworkSpec`].
///
/// The last layer is a convolution whose output is passed through a channel
/// softmax; [`Network::forward`] returns those probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer<f32>>,
    velocities: Vec<Option<Velocity>>,
}

/// Momentum buffers for one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Activations cached by [`Network::forward_trace`].
#[derive(Clone, Debug, Default)]
pub struct Trace {
    caches: Vec<LayerCache<f32>>,
}

/// Parameter gradients for every layer (`None` for parameter-free layers).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv { kernel, .. } => {
                        Some((vec![0.0; kernel.weights.len()], vec![0.0; kernel.bias.len()]))
                    }
                    _ => None,
                })
                .collect(),
        }
    }

    /// `self += other`, layer by layer.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a, b) {
                for (x, y) in aw.iter_mut().zip(bw) {
                    *x += *y;
                }
                for (x, y) in ab.iter_mut().zip(bb) {
                    *x += *y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }
}

/// Build a network with He-initialised weights (`N(0, 2 / fan_in)`) and zero
/// biases. Weights are drawn layer by layer from a ChaCha8 stream seeded with
/// `seed`, so the same seed always yields the same parameters.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let layer = match l.kind {
            LayerKind::Conv | LayerKind::SoftmaxHead => {
                let fan_in = (l.kernel * l.kernel * l.in_channels) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                let n = l.kernel * l.kernel * l.in_channels * l.out_channels;
                let weights = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
                let kernel = ConvKernel::new(
                    l.kernel,
                    l.stride,
                    l.in_channels,
                    l.out_channels,
                    weights,
                    vec![0.0; l.out_channels],
                )?;
                Layer::Conv {
                    kernel,
                    padding: l.padding,
                }
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Maxpool => Layer::MaxPool {
                size: l.kernel,
                stride: l.stride,
                padding: l.padding,
            },
            LayerKind::Avgpool => Layer::AvgPool {
                size: l.kernel,
                stride: l.stride,
                padding: l.padding,
            },
        };
        layers.push(layer);
    }
    let velocities = vec![None; layers.len()];
    Ok(Network {
        spec: spec.clone(),
        layers,
        velocities,
    })
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<f32>] {
        &self.layers
    }

    /// Kernel of layer `index`, if it is a convolution.
    pub fn kernel(&self, index: usize) -> Option<&ConvKernel<f32>> {
        match self.layers.get(index) {
            Some(Layer::Conv { kernel, .. }) => Some(kernel),
            _ => None,
        }
    }

    pub fn kernel_mut(&mut self, index: usize) -> Option<&mut ConvKernel<f32>> {
        match self.layers.get_mut(index) {
            Some(Layer::Conv { kernel, .. }) => Some(kernel),
            _ => None,
        }
    }

    /// `(layer name, kernel)` for every parameterised layer, in order.
    pub fn named_kernels(&self) -> impl Iterator<Item = (&str, &ConvKernel<f32>)> {
        self.spec
            .layers
            .iter()
            .zip(&self.layers)
            .filter_map(|(s, l)| match l {
                Layer::Conv { kernel, .. } => Some((s.name.as_str(), kernel)),
                _ => None,
            })
    }

    pub fn velocity(&self, index: usize) -> Option<&Velocity> {
        self.velocities.get(index).and_then(Option::as_ref)
    }

    /// Drop momentum state.
    pub fn reset_velocities(&mut self) {
        self.velocities.iter_mut().for_each(|v| *v = None);
    }

    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        self.spec.output_size(height, width)
    }

    fn check_input(&self, input: &Tensor<f32>) -> Result<()> {
        if input.channels() != self.spec.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.spec.input_channels,
                actual: input.channels(),
            });
        }
        if self.output_size(input.height(), input.width()).is_none() {
            return Err(Error::EmptyOutput(format!(
                "{}x{} input is too small for network {}",
                input.height(),
                input.width(),
                self.spec.name
            )));
        }
        Ok(())
    }

    /// Pre-softmax output of the head.
    pub fn forward_logits(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("output of network {}", self.spec.name)));
        }
        Ok(x)
    }

    /// Softmax probabilities of the head.
    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(channel_softmax(&self.forward_logits(input)?))
    }

    /// Forward pass that keeps every layer's cache; returns the logits.
    pub fn forward_trace(&self, input: Tensor<f32>) -> Result<(Tensor<f32>, Trace)> {
        self.check_input(&input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            let (y, cache) = layer.forward_cached(x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Trace { caches }))
    }

    /// Backpropagate the gradient with respect to the logits through a trace
    /// recorded by [`Network::forward_trace`].
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor<f32>) -> Result<Gradients> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::MissingCache(format!(
                "trace has {} layers, network {} has {}",
                trace.caches.len(),
                self.spec.name,
                self.layers.len()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let out = if i == 0 {
                layer.backward_params_only(cache, &g)?
            } else {
                layer.backward(cache, &g)?
            };
            if let (Some(w), Some(b)) = (out.weights, out.bias) {
                grads[i] = Some((w, b));
            }
            if i == 0 {
                break;
            }
            g = out.input;
        }
        Ok(Gradients { layers: grads })
    }

    /// One momentum-SGD update. `rates[i]` is the learning rate of layer `i`;
    /// layers with a zero rate are left bitwise untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients, rates: &[f32], momentum: f32) -> Result<()> {
        if grads.layers.len() != self.layers.len() || rates.len() != self.layers.len() {
            return Err(Error::shape("gradient/rate count does not match the layer count"));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (Layer::Conv { kernel, .. }, Some((gw, gb))) = (layer, &grads.layers[i]) else {
                continue;
            };
            if rates[i] <= 0.0 {
                continue;
            }
            let vel = self.velocities[i].get_or_insert_with(|| Velocity {
                weights: vec![0.0; kernel.weights.len()],
                bias: vec![0.0; kernel.bias.len()],
            });
            crate::tensor::sgd_momentum_update(&mut kernel.weights, &mut vel.weights, gw, rates[i], momentum)?;
            crate::tensor::sgd_momentum_update(&mut kernel.bias, &mut vel.bias, gb, rates[i], momentum)?;
        }
        Ok(())
    }

    /// Replace every parameter of the layer named `name`.
    pub fn set_params(&mut self, name: &str, weights: Vec<f32>, bias: Vec<f32>) -> Result<()> {
        let idx = self
            .spec
            .layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::invalid(format!("no layer named {name}")))?;
        let kernel = self
            .kernel_mut(idx)
            .ok_or_else(|| Error::invalid(format!("layer {name} has no parameters")))?;
        if weights.len() != kernel.weights.len() || bias.len() != kernel.bias.len() {
            return Err(Error::shape(format!("parameter size mismatch for layer {name}")));
        }
        kernel.weights = weights;
        kernel.bias = bias;
        Ok(())
    }

    /// Set the head's weights and bias to zero (equal logits everywhere).
    pub fn zero_head(&mut self) {
        let last = self.layers.len() - 1;
        if let Some(k) = self.kernel_mut(last) {
            k.weights.fill(0.0);
            k.bias.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::LayerSpec;

    #[test]
    fn same_seed_same_parameters() {
        let spec = NetworkSpec::toy_stride16();
        let a = build_network(&spec, 7).unwrap();
        let b = build_network(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = build_network(&spec, 8).unwrap();
        assert_ne!(a, c);
        for (_, k) in a.named_kernels() {
            assert!(k.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn toy_output_shape() {
        let net = build_network(&NetworkSpec::toy_stride16(), 1).unwrap();
        let x = Tensor::<f32>::filled(64, 64, 3, 0.5);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), (4, 4, 2));
        assert!(matches!(
            net.forward(&Tensor::<f32>::filled(64, 64, 4, 0.5)),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(matches!(
            net.forward(&Tensor::<f32>::filled(3, 3, 3, 0.5)),
            Err(Error::EmptyOutput(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_on_tiny_net() {
        let spec = NetworkSpec {
            name: "tiny".into(),
            input_channels: 2,
            output_stride: 2,
            input_size: None,
            layers: vec![
                LayerSpec::conv("c1", 3, 1, 1, 2, 3),
                LayerSpec::relu("r1"),
                LayerSpec::maxpool("p1", 2, 2, 0),
                LayerSpec::head("h", 1, 3, 2),
            ],
        };
        let net = build_network(&spec, 3).unwrap();
        let x = Tensor::<f32>::from_fn(6, 6, 2, |r, c, ch| ((r * 5 + c * 3 + ch * 7) % 11) as f32 / 11.0 - 0.4);
        // loss = sum of logits * fixed weights
        let (logits, trace) = net.forward_trace(x.clone()).unwrap();
        let upstream = Tensor::<f32>::from_fn(logits.height(), logits.width(), 2, |r, c, ch| {
            0.3 + r as f32 * 0.1 - c as f32 * 0.2 + ch as f32 * 0.5
        });
        let grads = net.backward(&trace, &upstream).unwrap();
        let objective = |n: &Network| -> f64 {
            let l = n.forward_logits(&x).unwrap();
            l.data().iter().zip(upstream.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (gw, _) = grads.layers[0].as_ref().unwrap();
        for idx in [0usize, 5, 17, 40, 53] {
            let mut plus = net.clone();
            plus.kernel_mut(0).unwrap().weights[idx] += 1e-2;
            let mut minus = net.clone();
            minus.kernel_mut(0).unwrap().weights[idx] -= 1e-2;
            let fd = (objective(&plus) - objective(&minus)) / 2e-2;
            assert!((fd - gw[idx] as f64).abs() < 1e-2 * (1.0 + fd.abs()), "idx {idx}: {fd} vs {}", gw[idx]);
        }
    }

    #[test]
    fn backward_without_trace_fails() {
        let net = build_network(&NetworkSpec::toy_stride16(), 1).unwrap();
        let g = Tensor::<f32>::zeros(4, 4, 2);
        assert!(matches!(net.backward(&Trace::default(), &g), Err(Error::MissingCache(_))));
    }
}
