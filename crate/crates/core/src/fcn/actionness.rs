use super::network::Network;
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::map::ActionnessMap;
use crate::tensor::{bilinear_resize, Tensor};

/// Pyramid scales used at test time: 1/√2, 1, √2, 2.
pub const DEFAULT_SCALES: [f64; 4] = [
    std::f64::consts::FRAC_1_SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
    2.0,
];

/// Foreground probability of a two-way softmax network, at the network's
/// output resolution.
pub fn forward_actionness(net: &Network, input: &Tensor<f32>) -> Result<ActionnessMap> {
    if net.spec().classes() != 2 {
        return Err(Error::InvalidSpec(format!(
            "actionness needs a two-way head, network {} has {} outputs",
            net.spec().name,
            net.spec().classes()
        )));
    }
    let probs = net.forward(input)?;
    ActionnessMap::from_tensor_channel(&probs, 1)
}

/// Run the network on a resized copy of `input` for every scale, bring each
/// map back to the input's spatial size and average them with equal weight.
pub fn multiscale_estimate(net: &Network, input: &Tensor<f32>, scales: &[f64]) -> Result<ActionnessMap> {
    if scales.is_empty() {
        return Err(Error::invalid("at least one scale is required"));
    }
    let (h, w) = (input.height(), input.width());
    let mut sum = vec![0.0f32; h * w];
    for &s in scales {
        let map = scaled_estimate(net, input, s)?;
        for (acc, &v) in sum.iter_mut().zip(map.values()) {
            *acc += v;
        }
    }
    let n = scales.len() as f32;
    ActionnessMap::new(h, w, sum.into_iter().map(|v| (v / n).clamp(0.0, 1.0)).collect())
}

/// Single-scale estimate upsampled to the size of `input`.
pub fn scaled_estimate(net: &Network, input: &Tensor<f32>, scale: f64) -> Result<ActionnessMap> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("scale {scale} must be positive")));
    }
    let (h, w) = (input.height(), input.width());
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    if net.output_size(sh, sw).is_none() {
        return Err(Error::EmptyOutput(format!(
            "scale {scale} shrinks the {h}x{w} input below the receptive field of {}",
            net.spec().name
        )));
    }
    let scaled = if (sh, sw) == (h, w) {
        input.clone()
    } else {
        bilinear_resize(input, sh, sw)?
    };
    forward_actionness(net, &scaled)?.resize(h, w)
}

/// Elementwise mean of the appearance and motion maps.
pub fn hybrid_fuse(appearance: &ActionnessMap, motion: &ActionnessMap) -> Result<ActionnessMap> {
    if (appearance.height(), appearance.width()) != (motion.height(), motion.width()) {
        return Err(Error::shape(format!(
            "appearance map is {}x{}, motion map is {}x{}",
            appearance.height(),
            appearance.width(),
            motion.height(),
            motion.width()
        )));
    }
    let values = appearance
        .values()
        .iter()
        .zip(motion.values())
        .map(|(&a, &m)| (a + m) / 2.0)
        .collect();
    ActionnessMap::new(appearance.height(), appearance.width(), values)
}

/// Binary weak-supervision target: 1 inside the union of `boxes` (clipped to
/// the image), 0 elsewhere.
pub fn boxes_to_binary_map(boxes: &[BBox], height: usize, width: usize) -> ActionnessMap {
    let mut values = vec![0.0f32; height * width];
    for b in boxes {
        let b = b.clamp(height, width);
        for y in b.y1..b.y2 {
            let row = y as usize * width;
            values[row + b.x1 as usize..row + b.x2 as usize].fill(1.0);
        }
    }
    ActionnessMap::new(height, width, values).expect("binary values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_network, LayerSpec, NetworkSpec};

    fn zero_head_net() -> Network {
        let mut net = build_network(&NetworkSpec::toy_stride16(), 4).unwrap();
        net.zero_head();
        net
    }

    fn ramp(h: usize, w: usize, c: usize) -> Tensor<f32> {
        Tensor::from_fn(h, w, c, |r, col, ch| ((r * 31 + col * 17 + ch * 7) % 23) as f32 / 23.0)
    }

    #[test]
    fn zero_head_gives_half() {
        let net = zero_head_net();
        let m = forward_actionness(&net, &ramp(64, 64, 3)).unwrap();
        assert_eq!((m.height(), m.width()), (4, 4));
        assert!(m.values().iter().all(|&v| v == 0.5));
        let ms = multiscale_estimate(&net, &ramp(64, 64, 3), &DEFAULT_SCALES).unwrap();
        assert!(ms.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_channel_count() {
        let net = zero_head_net();
        assert!(matches!(
            forward_actionness(&net, &ramp(64, 64, 4)),
            Err(Error::ChannelMismatch { expected: 3, actual: 4 })
        ));
    }

    #[test]
    fn multiscale_identity_scale() {
        let net = build_network(&NetworkSpec::toy_stride16(), 9).unwrap();
        let x = ramp(64, 48, 3);
        let single = forward_actionness(&net, &x).unwrap().resize(64, 48).unwrap();
        let ms = multiscale_estimate(&net, &x, &[1.0]).unwrap();
        assert_eq!(single, ms);
    }

    #[test]
    fn multiscale_is_mean_of_scales() {
        let net = build_network(&NetworkSpec::toy_stride16(), 11).unwrap();
        let x = ramp(64, 64, 3);
        let ms = multiscale_estimate(&net, &x, &DEFAULT_SCALES).unwrap();
        let per_scale: Vec<ActionnessMap> = DEFAULT_SCALES
            .iter()
            .map(|&s| {
                let sh = (64.0 * s).round() as usize;
                let scaled = bilinear_resize(&x, sh, sh).unwrap();
                forward_actionness(&net, &scaled).unwrap().resize(64, 64).unwrap()
            })
            .collect();
        for i in 0..64 * 64 {
            let mean: f64 = per_scale.iter().map(|m| m.values()[i] as f64).sum::<f64>() / 4.0;
            assert!((ms.values()[i] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn multiscale_rejects_tiny_scale() {
        let net = zero_head_net();
        assert!(multiscale_estimate(&net, &ramp(64, 64, 3), &[0.1]).is_err());
        assert!(multiscale_estimate(&net, &ramp(64, 64, 3), &[]).is_err());
    }

    #[test]
    fn hybrid_cases() {
        let ones = ActionnessMap::filled(3, 4, 1.0);
        let zeros = ActionnessMap::zeros(3, 4);
        assert!(hybrid_fuse(&ones, &zeros).unwrap().values().iter().all(|&v| v == 0.5));
        let m = ActionnessMap::from_fn(3, 4, |r, c| (r * 4 + c) as f32 / 11.0);
        assert_eq!(hybrid_fuse(&m, &m).unwrap(), m);
        assert!(hybrid_fuse(&m, &ActionnessMap::zeros(4, 3)).is_err());
    }

    #[test]
    fn binary_map_cases() {
        let full = boxes_to_binary_map(&[BBox::new(0, 0, 8, 8)], 8, 8);
        assert!(full.values().iter().all(|&v| v == 1.0));
        assert!(boxes_to_binary_map(&[], 8, 8).values().iter().all(|&v| v == 0.0));
        let b = boxes_to_binary_map(&[BBox::new(2, 2, 4, 4)], 8, 8);
        assert_eq!(b.values().iter().filter(|&&v| v == 1.0).count(), 4);
        let clipped = boxes_to_binary_map(&[BBox::new(-3, 6, 2, 20), BBox::new(5, 5, 5, 8)], 8, 8);
        assert_eq!(clipped.values().iter().filter(|&&v| v == 1.0).count(), 4);
    }

    fn random_spec(layers: &[(usize, usize, usize, bool)]) -> NetworkSpec {
        let mut spec = NetworkSpec::toy_local();
        spec.layers.clear();
        let mut channels = 3;
        let mut stride = 1;
        for (i, &(k, s, p, pool)) in layers.iter().enumerate() {
            if pool {
                spec.layers.push(LayerSpec::maxpool(&format!("pool{i}"), k, s, p.min(k - 1)));
            } else {
                spec.layers.push(LayerSpec::conv(&format!("conv{i}"), k, s, p, channels, 4));
                spec.layers.push(LayerSpec::relu(&format!("relu{i}")));
                channels = 4;
            }
            stride *= s;
        }
        spec.layers.push(LayerSpec::head("score", 1, channels, 2));
        spec.output_stride = stride;
        spec.input_size = None;
        spec
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn output_size_matches_forward_and_stays_in_unit_range(
            layers in proptest::collection::vec((1usize..4, 1usize..3, 0usize..2, proptest::bool::ANY), 1..4),
            h in 6usize..20, w in 6usize..20, seed in 0u64..100,
        ) {
            let spec = random_spec(&layers);
            spec.validate().unwrap();
            let net = build_network(&spec, seed).unwrap();
            let x = Tensor::from_fn(h, w, 3, |r, c, ch| ((r * 13 + c * 7 + ch * 3 + seed as usize) % 17) as f32 / 17.0);
            match spec.output_size(h, w) {
                Some((oh, ow)) => {
                    let map = forward_actionness(&net, &x).unwrap();
                    proptest::prop_assert_eq!((map.height(), map.width()), (oh, ow));
                    proptest::prop_assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
                }
                None => proptest::prop_assert!(forward_actionness(&net, &x).is_err()),
            }
        }

        #[test]
        fn hybrid_is_commutative_idempotent_and_bounded(seed in 0u64..1000, h in 1usize..8, w in 1usize..8) {
            let f = |salt: u64| ActionnessMap::from_fn(h, w, |r, c| ((r as u64 * 31 + c as u64 * 17 + seed * salt) % 101) as f32 / 100.0);
            let (a, m) = (f(3), f(5));
            let fused = hybrid_fuse(&a, &m).unwrap();
            proptest::prop_assert_eq!(&fused, &hybrid_fuse(&m, &a).unwrap());
            proptest::prop_assert_eq!(hybrid_fuse(&a, &a).unwrap(), a);
            proptest::prop_assert!(fused.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
