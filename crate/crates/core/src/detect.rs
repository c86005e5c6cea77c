//! Proposal classification and temporal linking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcn::Network;
use crate::geom::{iou, BBox};
use crate::proposal::{nms_sample, ScoredBox};
use crate::tensor::{bilinear_resize, channel_softmax, Tensor};

/// Proposals overlapping every ground-truth box by less than this are
/// background examples.
pub const NEGATIVE_IOU: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video: usize,
    pub frame: usize,
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

/// One box per frame over the contiguous range `start..start + boxes.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub video: usize,
    pub class: usize,
    pub start: usize,
    pub boxes: Vec<BBox>,
    pub score: f64,
}

impl Tube {
    pub fn end(&self) -> usize {
        self.start + self.boxes.len()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame.checked_sub(self.start).and_then(|i| self.boxes.get(i))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TubeScoreMode {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Weight of the overlap between consecutive boxes.
    pub lambda: f64,
    pub score_mode: TubeScoreMode,
    /// Tubes per class and video for [`link_tubes`].
    pub max_tubes: usize,
    /// [`link_tubes`] stops once a tube scores below this.
    pub min_score: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            lambda: 1.0,
            score_mode: TubeScoreMode::Mean,
            max_tubes: 1,
            min_score: 0.0,
        }
    }
}

/// Bilinear resample of the part of `box` inside `frame`.
pub fn crop_and_resize(frame: &Tensor<f32>, b: &BBox, out_height: usize, out_width: usize) -> Result<Tensor<f32>> {
    let c = b.clamp(frame.height(), frame.width());
    if c.is_empty() {
        return Err(Error::EmptyOutput(format!(
            "box {b:?} misses the {}x{} frame",
            frame.height(),
            frame.width()
        )));
    }
    let (x1, y1) = (c.x1 as usize, c.y1 as usize);
    let crop = Tensor::from_fn(c.height() as usize, c.width() as usize, frame.channels(), |r, col, ch| {
        frame.get(y1 + r, x1 + col, ch)
    });
    if (crop.height(), crop.width()) == (out_height, out_width) {
        return Ok(crop);
    }
    bilinear_resize(&crop, out_height, out_width)
}

/// Positives are the ground-truth boxes themselves; negatives are proposals
/// whose best IoU with any ground-truth box is below [`NEGATIVE_IOU`].
pub fn select_training_examples(proposals: &[BBox], gt: &[BBox]) -> (Vec<BBox>, Vec<BBox>) {
    let negatives = proposals
        .iter()
        .filter(|p| gt.iter().all(|g| iou(p, g) < NEGATIVE_IOU))
        .copied()
        .collect();
    (gt.to_vec(), negatives)
}

/// Softmax class probabilities for each crop (averaged over output positions
/// when the classifier's output is larger than 1×1).
pub fn classify_proposals(classifier: &Network, crops: &[Tensor<f32>]) -> Result<Vec<Vec<f32>>> {
    classify_one_by_one(classifier, crops)
}

fn classify_one_by_one(classifier: &Network, crops: &[Tensor<f32>]) -> Result<Vec<Vec<f32>>> {
    crops
        .iter()
        .map(|crop| {
            if let Some([h, w]) = classifier.spec().input_size {
                if (crop.height(), crop.width()) != (h, w) {
                    return Err(Error::shape(format!(
                        "crop is {}x{}, classifier {} expects {h}x{w}",
                        crop.height(),
                        crop.width(),
                        classifier.spec().name
                    )));
                }
            }
            let logits = classifier.forward_logits(crop)?;
            let probs = channel_softmax(&logits);
            let n = (probs.height() * probs.width()) as f32;
            let mut out = vec![0.0f32; probs.channels()];
            for r in 0..probs.height() {
                for c in 0..probs.width() {
                    for (o, &p) in out.iter_mut().zip(probs.pixel(r, c)) {
                        *o += p;
                    }
                }
            }
            out.iter_mut().for_each(|o| *o /= n);
            Ok(out)
        })
        .collect()
}

/// Elementwise mean of spatial and temporal class probabilities.
pub fn fuse_streams(spatial: &[Vec<f32>], temporal: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    if spatial.len() != temporal.len() {
        return Err(Error::shape(format!(
            "{} spatial and {} temporal score vectors",
            spatial.len(),
            temporal.len()
        )));
    }
    spatial
        .iter()
        .zip(temporal)
        .map(|(s, t)| {
            if s.len() != t.len() {
                return Err(Error::shape(format!("score vectors of length {} and {}", s.len(), t.len())));
            }
            Ok(s.iter().zip(t).map(|(a, b)| (a + b) / 2.0).collect())
        })
        .collect()
}

/// One detection per proposal and action class (`0..classes`; index
/// `classes` is background). With `nms`, each class is reduced by greedy NMS
/// at that IoU.
pub fn detect_frame(
    video: usize,
    frame: usize,
    proposals: &[BBox],
    scores: &[Vec<f32>],
    classes: usize,
    nms: Option<f64>,
) -> Result<Vec<Detection>> {
    if proposals.len() != scores.len() {
        return Err(Error::shape(format!(
            "{} proposals but {} score vectors",
            proposals.len(),
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != classes + 1) {
        return Err(Error::shape(format!(
            "score vector of length {} for {classes} classes plus background",
            s.len()
        )));
    }
    let mut out = Vec::new();
    for k in 0..classes {
        let per_class: Vec<ScoredBox> = proposals
            .iter()
            .zip(scores)
            .map(|(b, s)| ScoredBox { bbox: *b, score: s[k] })
            .collect();
        let kept = match nms {
            Some(thr) => nms_sample(&per_class, per_class.len(), thr),
            None => per_class,
        };
        out.extend(kept.into_iter().map(|s| Detection {
            video,
            frame,
            bbox: s.bbox,
            class: k,
            score: s.score as f64,
        }));
    }
    Ok(out)
}

/// Best path through one candidate per frame maximising
/// `Σ score + λ Σ IoU(consecutive boxes)`, by forward dynamic programming.
/// Ties keep the lower candidate index.
///
/// All detections must share video and class; frame `t` of the tube is
/// `frames[t]`, starting at the frame of the first candidate list.
pub fn link_tube(frames: &[Vec<Detection>], config: &LinkConfig) -> Result<Tube> {
    let (path, _) = best_path(frames, config)?;
    let first = &frames[0][path[0]];
    let chosen: Vec<&Detection> = path.iter().zip(frames).map(|(&j, f)| &f[j]).collect();
    let total: f64 = chosen.iter().map(|d| d.score).sum();
    let score = match config.score_mode {
        TubeScoreMode::Mean => total / chosen.len() as f64,
        TubeScoreMode::Sum => total,
    };
    Ok(Tube {
        video: first.video,
        class: first.class,
        start: first.frame,
        boxes: chosen.iter().map(|d| d.bbox).collect(),
        score,
    })
}

/// Chosen index per frame and the objective value.
pub fn best_path(frames: &[Vec<Detection>], config: &LinkConfig) -> Result<(Vec<usize>, f64)> {
    if !(config.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if frames.is_empty() {
        return Err(Error::invalid("cannot link an empty frame list"));
    }
    if let Some(t) = frames.iter().position(|f| f.is_empty()) {
        return Err(Error::invalid(format!("frame {t} has no candidate detections")));
    }
    let mut value: Vec<f64> = frames[0].iter().map(|d| d.score).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames.len());
    for t in 1..frames.len() {
        let mut next = Vec::with_capacity(frames[t].len());
        let mut from = Vec::with_capacity(frames[t].len());
        for d in &frames[t] {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (i, p) in frames[t - 1].iter().enumerate() {
                let v = value[i] + config.lambda * iou(&p.bbox, &d.bbox);
                if v > best.1 {
                    best = (i, v);
                }
            }
            next.push(best.1 + d.score);
            from.push(best.0);
        }
        value = next;
        back.push(from);
    }
    let mut j = 0;
    for (i, &v) in value.iter().enumerate() {
        if v > value[j] {
            j = i;
        }
    }
    let objective = value[j];
    let mut path = vec![j; frames.len()];
    for t in (1..frames.len()).rev() {
        j = back[t - 1][j];
        path[t - 1] = j;
    }
    Ok((path, objective))
}

/// Extract up to `config.max_tubes` tubes: link the best path, drop its
/// detections, repeat while every frame still has candidates and tube scores
/// stay at or above `config.min_score`.
pub fn link_tubes(frames: &[Vec<Detection>], config: &LinkConfig) -> Result<Vec<Tube>> {
    let mut pool: Vec<Vec<Detection>> = frames.to_vec();
    let mut tubes = Vec::new();
    while tubes.len() < config.max_tubes && !pool.is_empty() && pool.iter().all(|f| !f.is_empty()) {
        let (path, _) = best_path(&pool, config)?;
        let tube = link_tube(&pool, config)?;
        if tube.score < config.min_score {
            break;
        }
        for (f, &j) in pool.iter_mut().zip(&path) {
            f.remove(j);
        }
        tubes.push(tube);
    }
    Ok(tubes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_network, NetworkSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(frame: usize, b: BBox, score: f64) -> Detection {
        Detection {
            video: 0,
            frame,
            bbox: b,
            class: 0,
            score,
        }
    }

    fn random_frames(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Vec<Vec<Detection>> {
        (0..t)
            .map(|f| {
                (0..k)
                    .map(|_| {
                        let x = rng.random_range(0..12);
                        let y = rng.random_range(0..12);
                        let b = BBox::new(x, y, x + rng.random_range(2..8), y + rng.random_range(2..8));
                        det(f, b, rng.random_range(0..100) as f64 / 100.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// Exhaustive search; among equal objectives keep the lexicographically
    /// smallest index path read from the last frame backwards, which is the
    /// order the DP's lower-index tie-break produces.
    fn brute_force(frames: &[Vec<Detection>], lambda: f64) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut idx = vec![0usize; frames.len()];
        loop {
            let mut v = 0.0;
            for t in 0..frames.len() {
                if t > 0 {
                    v += lambda * iou(&frames[t - 1][idx[t - 1]].bbox, &frames[t][idx[t]].bbox);
                }
                v += frames[t][idx[t]].score;
            }
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((idx.clone(), v));
            }
            let mut t = 0;
            loop {
                if t == frames.len() {
                    return best.unwrap();
                }
                idx[t] += 1;
                if idx[t] < frames[t].len() {
                    break;
                }
                idx[t] = 0;
                t += 1;
            }
        }
    }

    #[test]
    fn crop_cases() {
        let frame = Tensor::from_fn(8, 10, 3, |r, c, ch| (r * 10 + c + ch) as f32);
        let full = crop_and_resize(&frame, &BBox::new(0, 0, 10, 8), 8, 10).unwrap();
        assert_eq!(full, frame);
        let constant = Tensor::filled(8, 8, 2, 0.25f32);
        let c = crop_and_resize(&constant, &BBox::new(1, 2, 7, 6), 5, 3).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.25));
        assert!(crop_and_resize(&frame, &BBox::new(20, 20, 30, 30), 4, 4).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::from_fn(12, 12, 1, |_, _, _| rng.random::<f32>());
        let crop = crop_and_resize(&f, &BBox::new(2, 2, 10, 10), 4, 4).unwrap();
        // corner-aligned: output i samples source 2 + i * 7 / 3
        for i in 0..4 {
            for j in 0..4 {
                let sy = i as f64 * 7.0 / 3.0;
                let sx = j as f64 * 7.0 / 3.0;
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(7), (x0 + 1).min(7));
                let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                let g = |y: usize, x: usize| f.get(2 + y, 2 + x, 0) as f64;
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x1) * tx;
                let bot = g(y1, x0) * (1.0 - tx) + g(y1, x1) * tx;
                let want = top * (1.0 - ty) + bot * ty;
                assert!((crop.get(i, j, 0) as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn training_example_selection() {
        let gt = [BBox::new(0, 0, 10, 10)];
        let (pos, neg) = select_training_examples(&[BBox::new(0, 0, 10, 10)], &gt);
        assert_eq!(pos, gt.to_vec());
        assert!(neg.is_empty());
        let (_, neg) = select_training_examples(&[BBox::new(20, 20, 30, 30)], &gt);
        assert_eq!(neg.len(), 1);
        // 10x10 box against a 5x10 sub-box shifted to share 25 of 100 pixels:
        // intersection 5x5 = 25, union 100 + 25 - 25 = 100 -> IoU 0.25
        let edge = BBox::new(5, 5, 10, 10);
        assert_eq!(iou(&edge, &gt[0]), 0.25);
        let (_, neg) = select_training_examples(&[edge], &gt);
        assert!(neg.is_empty());
    }

    #[test]
    fn classifier_outputs() {
        let mut net = build_network(&NetworkSpec::toy_classifier(), 1).unwrap();
        net.zero_head();
        let crops = vec![Tensor::filled(16, 16, 3, 0.3f32); 2];
        for s in classify_proposals(&net, &crops).unwrap() {
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-6));
        }
        let net = build_network(&NetworkSpec::toy_classifier(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let crops: Vec<Tensor<f32>> = (0..5).map(|_| Tensor::from_fn(16, 16, 3, |_, _, _| rng.random())).collect();
        for s in classify_proposals(&net, &crops).unwrap() {
            assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert!(classify_proposals(&net, &[Tensor::zeros(20, 16, 3)]).is_err());
    }

    #[test]
    fn fusion_cases() {
        let a = vec![vec![0.2f32, 0.5, 0.3]];
        assert_eq!(fuse_streams(&a, &a).unwrap(), a);
        let uniform = vec![vec![1.0f32 / 3.0; 3]];
        let peaked = vec![vec![0.1f32, 0.7, 0.2]];
        let f = fuse_streams(&uniform, &peaked).unwrap();
        let argmax = f[0].iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(argmax, 1);
        assert!(fuse_streams(&a, &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f32>> = (0..6).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let y: Vec<Vec<f32>> = (0..6).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let f = fuse_streams(&x, &y).unwrap();
        for i in 0..6 {
            for k in 0..4 {
                assert_eq!(f[i][k], (x[i][k] + y[i][k]) / 2.0);
            }
        }
    }

    #[test]
    fn detect_frame_cases() {
        assert!(detect_frame(0, 0, &[], &[], 2, None).unwrap().is_empty());
        let b = BBox::new(0, 0, 4, 4);
        let d = detect_frame(0, 3, &[b], &[vec![0.2, 0.3, 0.4, 0.1]], 3, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.iter().map(|x| x.class).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(d.iter().all(|x| x.frame == 3));
        let dup = detect_frame(0, 0, &[b, b, b], &vec![vec![0.5, 0.3, 0.2]; 3], 2, Some(0.5)).unwrap();
        assert_eq!(dup.len(), 2);
        assert!(detect_frame(0, 0, &[b], &[vec![0.5, 0.5]], 2, None).is_err());
        assert!(detect_frame(0, 0, &[b, b], &[vec![0.5, 0.3, 0.2]], 2, None).is_err());
    }

    #[test]
    fn link_simple_cases() {
        let frames: Vec<Vec<Detection>> = (0..4).map(|t| vec![det(t, BBox::new(t as i32, 0, 5, 5), 0.5)]).collect();
        let tube = link_tube(&frames, &LinkConfig::default()).unwrap();
        assert_eq!(tube.boxes.len(), 4);
        assert_eq!(tube.score, 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = random_frames(&mut rng, 5, 4);
        let cfg = LinkConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let (path, _) = best_path(&frames, &cfg).unwrap();
        for (t, &j) in path.iter().enumerate() {
            let max = frames[t].iter().map(|d| d.score).fold(f64::MIN, f64::max);
            assert_eq!(frames[t][j].score, max);
        }
        assert!(link_tube(&[], &cfg).is_err());
        assert!(link_tube(&[vec![], frames[0].clone()], &cfg).is_err());
    }

    #[test]
    fn link_three_by_three_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let frames = random_frames(&mut rng, 3, 3);
            let cfg = LinkConfig::default();
            let (path, v) = best_path(&frames, &cfg).unwrap();
            let (bp, bv) = brute_force(&frames, 1.0);
            assert!((v - bv).abs() < 1e-12);
            assert_eq!(path, bp);
        }
    }

    #[test]
    fn multiple_tubes() {
        let a = BBox::new(0, 0, 5, 5);
        let b = BBox::new(10, 10, 15, 15);
        let frames: Vec<Vec<Detection>> = (0..3).map(|t| vec![det(t, a, 0.9), det(t, b, 0.4)]).collect();
        let cfg = LinkConfig {
            max_tubes: 5,
            min_score: 0.1,
            ..Default::default()
        };
        let tubes = link_tubes(&frames, &cfg).unwrap();
        assert_eq!(tubes.len(), 2);
        assert_eq!(tubes[0].boxes, vec![a; 3]);
        assert_eq!(tubes[1].boxes, vec![b; 3]);
        let strict = LinkConfig { min_score: 0.5, ..cfg };
        assert_eq!(link_tubes(&frames, &strict).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn dp_equals_exhaustive(seed in 0u64..5000, t in 1usize..=5, k in 1usize..=4, lambda in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = random_frames(&mut rng, t, k);
            let (path, v) = best_path(&frames, &LinkConfig { lambda, ..Default::default() }).unwrap();
            let (_, bv) = brute_force(&frames, lambda);
            prop_assert!((v - bv).abs() < 1e-9);
            let mut pv = 0.0;
            for i in 0..t {
                pv += frames[i][path[i]].score;
                if i > 0 {
                    pv += lambda * iou(&frames[i - 1][path[i - 1]].bbox, &frames[i][path[i]].bbox);
                }
            }
            prop_assert!((pv - v).abs() < 1e-9);
        }

        #[test]
        fn objective_monotone_in_scores(seed in 0u64..2000, bump in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut frames = random_frames(&mut rng, 4, 3);
            let cfg = LinkConfig::default();
            let (_, before) = best_path(&frames, &cfg).unwrap();
            let t = rng.random_range(0..4);
            let j = rng.random_range(0..3);
            frames[t][j].score += bump;
            let (_, after) = best_path(&frames, &cfg).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn fusion_stays_on_simplex(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut simplex = || {
                let v: Vec<f32> = (0..3).map(|_| rng.random::<f32>() + 1e-3).collect();
                let s: f32 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect::<Vec<f32>>()
            };
            let a = vec![simplex()];
            let b = vec![simplex()];
            let f = fuse_streams(&a, &b).unwrap();
            prop_assert!((f[0].iter().sum::<f32>() - 1.0).abs() < 1e-5);
            prop_assert!(f[0].iter().all(|&p| p >= 0.0));
        }
    }
}
