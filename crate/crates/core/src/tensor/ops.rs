use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Convolution weights laid out as `[ky][kx][in_channel][out_channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    pub size: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(
        size: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if size == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("kernel size, stride and channel counts must be positive"));
        }
        if weights.len() != size * size * in_channels * out_channels {
            return Err(Error::shape(format!(
                "kernel weights have length {}, expected {}",
                weights.len(),
                size * size * in_channels * out_channels
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "kernel bias has length {}, expected {out_channels}",
                bias.len()
            )));
        }
        Ok(ConvKernel {
            size,
            stride,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn zeros(size: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvKernel {
            size,
            stride,
            in_channels,
            out_channels,
            weights: vec![T::zero(); size * size * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ic: usize, oc: usize) -> usize {
        ((ky * self.size + kx) * self.in_channels + ic) * self.out_channels + oc
    }

    pub fn cast<U: Real>(&self) -> ConvKernel<U> {
        ConvKernel {
            size: self.size,
            stride: self.stride,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            weights: self.weights.iter().map(|&v| U::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// `floor((dim + 2·padding − k) / stride) + 1`, or `None` if the window does not fit.
pub fn conv_output_dim(dim: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = dim + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Pooling windows use the same size formula as convolution.
pub fn pool_output_dim(dim: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    conv_output_dim(dim, kernel, stride, padding)
}

#[inline]
fn source_coord(out: usize, stride: usize, k: usize, padding: usize, dim: usize) -> Option<usize> {
    let pos = out * stride + k;
    if pos < padding || pos - padding >= dim {
        None
    } else {
        Some(pos - padding)
    }
}

/// Zero-padded 2D convolution.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &ConvKernel<T>, padding: usize) -> Result<Tensor<T>> {
    if input.channels() != kernel.in_channels {
        return Err(Error::ChannelMismatch {
            expected: kernel.in_channels,
            actual: input.channels(),
        });
    }
    let (h, w, ic) = input.shape();
    let (k, s, oc) = (kernel.size, kernel.stride, kernel.out_channels);
    let (oh, ow) = match (
        conv_output_dim(h, k, s, padding),
        conv_output_dim(w, k, s, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::EmptyOutput(format!(
                "{h}x{w} input with padding {padding} is smaller than a {k}x{k} kernel"
            )))
        }
    };

    let mut out = vec![T::zero(); oh * ow * oc];
    let x = input.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * oc..(oy * ow + ox + 1) * oc];
            acc.copy_from_slice(&kernel.bias);
            for ky in 0..k {
                let Some(iy) = source_coord(oy, s, ky, padding, h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = source_coord(ox, s, kx, padding, w) else {
                        continue;
                    };
                    let xin = &x[(iy * w + ix) * ic..(iy * w + ix + 1) * ic];
                    let wbase = (ky * k + kx) * ic * oc;
                    for (c, &xv) in xin.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &kernel.weights[wbase + c * oc..wbase + (c + 1) * oc];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a = *a + xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(oh, ow, oc, out)
}

/// Max pooling without padding.
pub fn maxpool<T: Real>(input: &Tensor<T>, k: usize, s: usize) -> Result<Tensor<T>> {
    maxpool_padded(input, k, s, 0).map(|(t, _)| t)
}

/// Max pooling where padded positions never win. Also returns, for every
/// output element, the flat input index that produced it (first maximum in
/// window scan order).
pub fn maxpool_padded<T: Real>(
    input: &Tensor<T>,
    k: usize,
    s: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if padding >= k {
        return Err(Error::invalid("pool padding must be smaller than the window"));
    }
    let (h, w, c) = input.shape();
    let (oh, ow) = pool_dims(h, w, k, s, padding)?;
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let Some(iy) = source_coord(oy, s, ky, padding, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = source_coord(ox, s, kx, padding, w) else {
                            continue;
                        };
                        let idx = (iy * w + ix) * c + ch;
                        let v = input.data()[idx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(oh, ow, c, out)?, argmax))
}

/// Average pooling over the in-bounds part of each window.
pub fn avgpool<T: Real>(input: &Tensor<T>, k: usize, s: usize, padding: usize) -> Result<Tensor<T>> {
    if padding >= k {
        return Err(Error::invalid("pool padding must be smaller than the window"));
    }
    let (h, w, c) = input.shape();
    let (oh, ow) = pool_dims(h, w, k, s, padding)?;
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut sum = T::zero();
                let mut n = 0usize;
                for ky in 0..k {
                    let Some(iy) = source_coord(oy, s, ky, padding, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = source_coord(ox, s, kx, padding, w) else {
                            continue;
                        };
                        sum = sum + input.get(iy, ix, ch);
                        n += 1;
                    }
                }
                out.push(sum / T::lit(n as f64));
            }
        }
    }
    Tensor::new(oh, ow, c, out)
}

fn pool_dims(h: usize, w: usize, k: usize, s: usize, padding: usize) -> Result<(usize, usize)> {
    match (
        pool_output_dim(h, k, s, padding),
        pool_output_dim(w, k, s, padding),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::EmptyOutput(format!(
            "pool window {k}x{k} is larger than the {h}x{w} input"
        ))),
    }
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Softmax across channels at every spatial position, stabilised by
/// subtracting the per-position maximum.
pub fn channel_softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let c = input.channels();
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let m = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in px.iter_mut() {
            *v = *v / z;
        }
    }
    out
}

/// Corner-aligned bilinear resampling: output sample `i` reads source
/// coordinate `i·(H−1)/(H'−1)`. A single output row or column samples the
/// source centre.
pub fn bilinear_resize<T: Real>(input: &Tensor<T>, new_height: usize, new_width: usize) -> Result<Tensor<T>> {
    if new_height == 0 || new_width == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    let (h, w, c) = input.shape();
    let ys: Vec<(usize, usize, T)> = (0..new_height).map(|i| sample_axis(i, h, new_height)).collect();
    let xs: Vec<(usize, usize, T)> = (0..new_width).map(|j| sample_axis(j, w, new_width)).collect();
    let mut out = Vec::with_capacity(new_height * new_width * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let a = input.get(y0, x0, ch);
                let b = input.get(y0, x1, ch);
                let top = a + (b - a) * tx;
                let a = input.get(y1, x0, ch);
                let b = input.get(y1, x1, ch);
                let bottom = a + (b - a) * tx;
                out.push(top + (bottom - top) * ty);
            }
        }
    }
    Tensor::new(new_height, new_width, c, out)
}

fn sample_axis<T: Real>(i: usize, src: usize, dst: usize) -> (usize, usize, T) {
    let pos = if dst == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    };
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, T::lit(pos - lo as f64))
}
