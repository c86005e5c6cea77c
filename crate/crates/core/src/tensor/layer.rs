use super::ops::{avgpool, conv2d, conv_output_dim, maxpool_padded, relu};
use super::{ConvKernel, Real, Tensor};
use crate::error::{Error, Result};

/// One differentiable layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv { kernel: ConvKernel<T>, padding: usize },
    Relu,
    MaxPool { size: usize, stride: usize, padding: usize },
    AvgPool { size: usize, stride: usize, padding: usize },
}

/// State saved by [`Layer::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T = f32> {
    Conv { input: Tensor<T> },
    Relu { input: Tensor<T> },
    MaxPool { input_shape: (usize, usize, usize), output_shape: (usize, usize, usize), argmax: Vec<usize> },
    AvgPool { input_shape: (usize, usize, usize), output_shape: (usize, usize, usize) },
}

#[derive(Clone, Debug)]
pub struct LayerGrad<T = f32> {
    pub input: Tensor<T>,
    /// Parameter gradients, present for convolution layers only.
    pub weights: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::AvgPool { .. } => "avgpool",
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv { kernel, padding } => conv2d(input, kernel, *padding),
            Layer::Relu => Ok(relu(input)),
            Layer::MaxPool { size, stride, padding } => {
                maxpool_padded(input, *size, *stride, *padding).map(|(t, _)| t)
            }
            Layer::AvgPool { size, stride, padding } => avgpool(input, *size, *stride, *padding),
        }
    }

    pub fn forward_cached(&self, input: Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self {
            Layer::Conv { kernel, padding } => {
                let out = conv2d(&input, kernel, *padding)?;
                Ok((out, LayerCache::Conv { input }))
            }
            Layer::Relu => Ok((relu(&input), LayerCache::Relu { input })),
            Layer::MaxPool { size, stride, padding } => {
                let (out, argmax) = maxpool_padded(&input, *size, *stride, *padding)?;
                let output_shape = out.shape();
                Ok((
                    out,
                    LayerCache::MaxPool {
                        input_shape: input.shape(),
                        output_shape,
                        argmax,
                    },
                ))
            }
            Layer::AvgPool { size, stride, padding } => {
                let out = avgpool(&input, *size, *stride, *padding)?;
                let output_shape = out.shape();
                Ok((
                    out,
                    LayerCache::AvgPool {
                        input_shape: input.shape(),
                        output_shape,
                    },
                ))
            }
        }
    }

    /// Propagate `grad_out` (gradient of the loss with respect to this
    /// layer's output) back to the input and, for convolutions, to the
    /// parameters.
    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<LayerGrad<T>> {
        self.backward_impl(cache, grad_out, true)
    }

    /// Backward pass that skips the input gradient of a convolution (it is
    /// returned as zeros). Used for the first layer of a network.
    pub fn backward_params_only(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<LayerGrad<T>> {
        self.backward_impl(cache, grad_out, false)
    }

    fn backward_impl(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>, need_input: bool) -> Result<LayerGrad<T>> {
        match (self, cache) {
            (Layer::Conv { kernel, padding }, LayerCache::Conv { input }) => {
                conv_backward(input, kernel, *padding, grad_out, need_input)
            }
            (Layer::Relu, LayerCache::Relu { input }) => {
                expect_shape(grad_out, input.shape())?;
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                Ok(LayerGrad {
                    input: g,
                    weights: None,
                    bias: None,
                })
            }
            (
                Layer::MaxPool { .. },
                LayerCache::MaxPool {
                    input_shape,
                    output_shape,
                    argmax,
                },
            ) => {
                expect_shape(grad_out, *output_shape)?;
                let (h, w, c) = *input_shape;
                let mut g = Tensor::zeros(h, w, c);
                for (&src, &gv) in argmax.iter().zip(grad_out.data()) {
                    g.data_mut()[src] = g.data()[src] + gv;
                }
                Ok(LayerGrad {
                    input: g,
                    weights: None,
                    bias: None,
                })
            }
            (
                Layer::AvgPool { size, stride, padding },
                LayerCache::AvgPool {
                    input_shape,
                    output_shape,
                },
            ) => {
                expect_shape(grad_out, *output_shape)?;
                Ok(LayerGrad {
                    input: avgpool_backward(*input_shape, *size, *stride, *padding, grad_out),
                    weights: None,
                    bias: None,
                })
            }
            _ => Err(Error::MissingCache(format!(
                "cache does not belong to a {} layer",
                self.name()
            ))),
        }
    }
}

fn expect_shape<T: Real>(t: &Tensor<T>, shape: (usize, usize, usize)) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::MissingCache(format!(
            "upstream gradient is {:?}, cached forward produced {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(())
}

fn conv_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    padding: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<LayerGrad<T>> {
    let (h, w, ic) = input.shape();
    let (k, s, oc) = (kernel.size, kernel.stride, kernel.out_channels);
    let oh = conv_output_dim(h, k, s, padding).unwrap_or(0);
    let ow = conv_output_dim(w, k, s, padding).unwrap_or(0);
    expect_shape(grad_out, (oh, ow, oc))?;

    let mut gin = vec![T::zero(); h * w * ic];
    let mut gw = vec![T::zero(); kernel.weights.len()];
    let mut gb = vec![T::zero(); oc];
    let x = input.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let g = grad_out.pixel(oy, ox);
            for (b, &gv) in gb.iter_mut().zip(g) {
                *b = *b + gv;
            }
            for ky in 0..k {
                let pos_y = oy * s + ky;
                if pos_y < padding || pos_y - padding >= h {
                    continue;
                }
                let iy = pos_y - padding;
                for kx in 0..k {
                    let pos_x = ox * s + kx;
                    if pos_x < padding || pos_x - padding >= w {
                        continue;
                    }
                    let ix = pos_x - padding;
                    let base_in = (iy * w + ix) * ic;
                    let wbase = (ky * k + kx) * ic * oc;
                    for c in 0..ic {
                        let xv = x[base_in + c];
                        if !need_input {
                            if xv != T::zero() {
                                let gwrow = &mut gw[wbase + c * oc..wbase + (c + 1) * oc];
                                for (gwv, &gv) in gwrow.iter_mut().zip(g) {
                                    *gwv = *gwv + xv * gv;
                                }
                            }
                            continue;
                        }
                        let wrow = &kernel.weights[wbase + c * oc..wbase + (c + 1) * oc];
                        let gwrow = &mut gw[wbase + c * oc..wbase + (c + 1) * oc];
                        let mut acc = T::zero();
                        for o in 0..oc {
                            gwrow[o] = gwrow[o] + xv * g[o];
                            acc = acc + wrow[o] * g[o];
                        }
                        gin[base_in + c] = gin[base_in + c] + acc;
                    }
                }
            }
        }
    }
    Ok(LayerGrad {
        input: Tensor::new(h, w, ic, gin)?,
        weights: Some(gw),
        bias: Some(gb),
    })
}

fn avgpool_backward<T: Real>(
    input_shape: (usize, usize, usize),
    k: usize,
    s: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w, c) = input_shape;
    let mut g = Tensor::zeros(h, w, c);
    let (oh, ow, _) = grad_out.shape();
    let valid = |o: usize, kk: usize, dim: usize| {
        let pos = o * s + kk;
        (pos >= padding && pos - padding < dim).then(|| pos - padding)
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let cells: Vec<(usize, usize)> = (0..k)
                .filter_map(|ky| valid(oy, ky, h))
                .flat_map(|iy| (0..k).filter_map(move |kx| valid(ox, kx, w).map(|ix| (iy, ix))))
                .collect();
            let n = T::lit(cells.len() as f64);
            for ch in 0..c {
                let share = grad_out.get(oy, ox, ch) / n;
                for &(iy, ix) in &cells {
                    let i = g.index(iy, ix, ch);
                    g.data_mut()[i] = g.data()[i] + share;
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_passes_positive_gradient() {
        let x = Tensor::<f64>::from_fn(3, 3, 2, |r, c, ch| 0.1 + (r + c + ch) as f64);
        let layer = Layer::Relu;
        let (_, cache) = layer.forward_cached(x).unwrap();
        let g = Tensor::<f64>::from_fn(3, 3, 2, |r, c, ch| (r as f64) - (c * ch) as f64);
        let out = layer.backward(&cache, &g).unwrap();
        assert_eq!(out.input, g);
        assert!(out.weights.is_none());
    }

    #[test]
    fn maxpool_routes_to_argmax_and_conserves_mass() {
        let x = Tensor::<f64>::from_fn(6, 6, 2, |r, c, ch| ((r * 37 + c * 11 + ch * 5) % 17) as f64);
        let layer = Layer::MaxPool {
            size: 3,
            stride: 2,
            padding: 1,
        };
        let (y, cache) = layer.forward_cached(x.clone()).unwrap();
        let g = Tensor::<f64>::from_fn(y.height(), y.width(), 2, |r, c, ch| 1.0 + (r * 3 + c + ch) as f64);
        let back = layer.backward(&cache, &g).unwrap();
        assert!((back.input.sum() - g.sum()).abs() < 1e-12);
        // every nonzero input gradient sits on a value that won some window
        for r in 0..6 {
            for c in 0..6 {
                for ch in 0..2 {
                    if back.input.get(r, c, ch) != 0.0 {
                        assert!(y.data().contains(&x.get(r, c, ch)));
                    }
                }
            }
        }
    }

    #[test]
    fn backward_needs_matching_cache() {
        let x = Tensor::<f32>::zeros(4, 4, 1);
        let (_, relu_cache) = Layer::Relu.forward_cached(x.clone()).unwrap();
        let conv = Layer::Conv {
            kernel: ConvKernel::zeros(3, 1, 1, 1),
            padding: 1,
        };
        let g = Tensor::<f32>::zeros(4, 4, 1);
        assert!(matches!(conv.backward(&relu_cache, &g), Err(Error::MissingCache(_))));
        let (_, conv_cache) = conv.forward_cached(x).unwrap();
        let wrong = Tensor::<f32>::zeros(3, 3, 1);
        assert!(matches!(conv.backward(&conv_cache, &wrong), Err(Error::MissingCache(_))));
    }

    fn random(seed: u64, h: usize, w: usize, c: usize) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    proptest::proptest! {
        #[test]
        fn maxpool_backward_conserves_mass(
            seed in 0u64..1000, h in 2usize..9, w in 2usize..9, k in 2usize..4, s in 1usize..3, pad in 0usize..2,
        ) {
            proptest::prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
            let layer = Layer::MaxPool { size: k, stride: s, padding: pad };
            let (out, cache) = layer.forward_cached(random(seed, h, w, 2)).unwrap();
            let g = random(seed + 1, out.height(), out.width(), 2);
            let back = layer.backward(&cache, &g).unwrap();
            let total = |t: &Tensor<f64>| t.data().iter().sum::<f64>();
            proptest::prop_assert!((total(&back.input) - total(&g)).abs() < 1e-9);
        }

        #[test]
        fn conv_shape_follows_floor_formula_and_is_deterministic(
            seed in 0u64..1000, h in 1usize..10, w in 1usize..10, k in 1usize..4, s in 1usize..3, pad in 0usize..3,
        ) {
            proptest::prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
            let mut kernel = ConvKernel::zeros(k, s, 2, 3);
            let weights = random(seed + 7, k * k * 2, 3, 1);
            kernel.weights.copy_from_slice(weights.data());
            let x = random(seed, h, w, 2);
            let layer = Layer::Conv { kernel, padding: pad };
            let y = layer.forward(&x).unwrap();
            proptest::prop_assert_eq!(y.shape(), ((h + 2 * pad - k) / s + 1, (w + 2 * pad - k) / s + 1, 3));
            proptest::prop_assert!(y.data().iter().all(|v| v.is_finite()));
            proptest::prop_assert_eq!(y, layer.forward(&x).unwrap());
        }
    }
}
