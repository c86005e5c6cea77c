//! Evaluation protocols: grid actionness AP, proposal recall, frame-AP and
//! video-AP.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detect::{Detection, Tube};
use crate::error::{Error, Result};
use crate::geom::{iou, BBox};
use crate::map::ActionnessMap;

pub const MATCH_IOU: f64 = 0.5;

/// Precision/recall after each group of equally scored items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` at the end of each score group, best first.
    pub points: Vec<(f64, f64)>,
    /// True positives gained in each group.
    pub gains: Vec<usize>,
    /// `(true positives, items seen)` at the end of each group.
    pub counts: Vec<(usize, usize)>,
    pub positives: usize,
}

/// Rank items by descending score. Items with equal scores form one group
/// and are all evaluated at the group's end, so the result does not depend on
/// their order.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("detection scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let positives = labels.iter().filter(|&&l| l).count();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut gains = Vec::new();
    let mut counts = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut gained = 0;
        while i < order.len() && scores[order[i]] == s {
            gained += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += gained;
        let recall = if positives > 0 { tp as f64 / positives as f64 } else { 0.0 };
        points.push((recall, tp as f64 / seen as f64));
        gains.push(gained);
        counts.push((tp, seen));
    }
    Ok(PrCurve {
        points,
        gains,
        counts,
        positives,
    })
}

/// Non-interpolated AP: the mean, over positives, of the precision at the
/// point where each positive is retrieved. Positives never retrieved count
/// as zero.
pub fn average_precision(curve: &PrCurve) -> Result<f64> {
    if curve.positives == 0 {
        return Err(Error::Undefined("average precision without positive examples".into()));
    }
    if let Some(exact) = exact_ap(curve) {
        return Ok(exact);
    }
    let total: f64 = curve
        .points
        .iter()
        .zip(&curve.gains)
        .map(|(&(_, p), &g)| g as f64 * p)
        .sum();
    Ok(total / curve.positives as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// AP as an exact fraction, so that hand-computed values compare equal.
/// `None` when the fraction outgrows 128 bits.
fn exact_ap(curve: &PrCurve) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for (&g, &(tp, seen)) in curve.gains.iter().zip(&curve.counts) {
        if g == 0 {
            continue;
        }
        // num/den + g·tp/seen
        let (n2, d2) = ((g as u128).checked_mul(tp as u128)?, seen as u128);
        let l = (den / gcd(den, d2)).checked_mul(d2)?;
        num = num.checked_mul(l / den)?.checked_add(n2.checked_mul(l / d2)?)?;
        den = l;
        let k = gcd(num, den);
        (num, den) = (num / k, den / k);
    }
    den = den.checked_mul(curve.positives as u128)?;
    let k = gcd(num, den).max(1);
    (num, den) = (num / k, den / k);
    const EXACT: u128 = 1 << 53;
    (num < EXACT && den < EXACT).then(|| num as f64 / den as f64)
}

pub fn ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    average_precision(&pr_curve(scores, labels)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridCriterion {
    /// Cell is positive when the fraction of it covered by ground truth
    /// exceeds the threshold.
    #[default]
    Coverage,
    /// Cell is positive when its IoU with the ground-truth region exceeds
    /// the threshold.
    LiteralIou,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridProtocolConfig {
    pub grid_x: usize,
    pub grid_y: usize,
    pub temporal_bins: usize,
    pub positive_threshold: f64,
    pub criterion: GridCriterion,
}

impl Default for GridProtocolConfig {
    fn default() -> Self {
        GridProtocolConfig {
            grid_x: 16,
            grid_y: 16,
            temporal_bins: 4,
            positive_threshold: 0.5,
            criterion: GridCriterion::Coverage,
        }
    }
}

impl GridProtocolConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_x == 0 || self.grid_y == 0 || self.temporal_bins == 0 {
            return Err(Error::invalid("grid sizes must be positive"));
        }
        if !(self.positive_threshold > 0.0 && self.positive_threshold <= 1.0) {
            return Err(Error::invalid("positive_threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Boundaries of `n` equal parts of `0..dim`, the remainder going to the last.
pub fn partition(dim: usize, n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 || dim < n {
        return Err(Error::invalid(format!("cannot split {dim} into {n} non-empty parts")));
    }
    let size = dim / n;
    Ok((0..n)
        .map(|i| (i * size, if i + 1 == n { dim } else { (i + 1) * size }))
        .collect())
}

fn gt_mask(boxes: &[BBox], h: usize, w: usize) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for b in boxes {
        let b = b.clamp(h, w);
        for y in b.y1..b.y2 {
            m[y as usize * w + b.x1 as usize..y as usize * w + b.x2 as usize].fill(true);
        }
    }
    m
}

/// Score and label of every cell (cuboid) of a clip.
fn grid_cells(maps: &[ActionnessMap], gt: &[Vec<BBox>], bins: usize, cfg: &GridProtocolConfig) -> Result<(Vec<f64>, Vec<bool>)> {
    cfg.validate()?;
    if maps.is_empty() || maps.len() != gt.len() {
        return Err(Error::shape(format!("{} maps but {} annotation frames", maps.len(), gt.len())));
    }
    let (h, w) = (maps[0].height(), maps[0].width());
    if maps.iter().any(|m| (m.height(), m.width()) != (h, w)) {
        return Err(Error::shape("maps in a clip differ in size"));
    }
    if gt.iter().all(|g| g.is_empty()) {
        return Err(Error::invalid("no ground truth to evaluate against"));
    }
    let masks: Vec<Vec<bool>> = gt.iter().map(|g| gt_mask(g, h, w)).collect();
    let gt_volume: usize = masks.iter().map(|m| m.iter().filter(|&&x| x).count()).sum();
    let rows = partition(h, cfg.grid_y)?;
    let cols = partition(w, cfg.grid_x)?;
    let times = partition(maps.len(), bins)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &(t0, t1) in &times {
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let (mut sum, mut covered) = (0.0f64, 0usize);
                for t in t0..t1 {
                    for r in r0..r1 {
                        for c in c0..c1 {
                            sum += maps[t].get(r, c) as f64;
                            covered += masks[t][r * w + c] as usize;
                        }
                    }
                }
                let volume = (t1 - t0) * (r1 - r0) * (c1 - c0);
                let overlap = match cfg.criterion {
                    GridCriterion::Coverage => covered as f64 / volume as f64,
                    GridCriterion::LiteralIou => covered as f64 / (volume + gt_volume - covered) as f64,
                };
                scores.push(sum / volume as f64);
                labels.push(overlap > cfg.positive_threshold);
            }
        }
    }
    Ok((scores, labels))
}

/// AP of the grid cells of one image.
pub fn grid_actionness_ap(map: &ActionnessMap, gt: &[BBox], cfg: &GridProtocolConfig) -> Result<f64> {
    let (s, l) = grid_cells(std::slice::from_ref(map), &[gt.to_vec()], 1, cfg)?;
    ap(&s, &l)
}

/// AP of the spatio-temporal cuboids of one clip.
pub fn grid_actionness_ap_video(maps: &[ActionnessMap], gt: &[Vec<BBox>], cfg: &GridProtocolConfig) -> Result<f64> {
    let (s, l) = grid_cells(maps, gt, cfg.temporal_bins, cfg)?;
    ap(&s, &l)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("mean of an empty set".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Fraction of ground-truth boxes matched (IoU ≥ `threshold`) by one of the
/// first `count` proposals of their image.
pub fn proposal_recall(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], count: usize, threshold: f64) -> Result<f64> {
    if proposals.len() != gt.len() {
        return Err(Error::shape(format!("{} proposal lists for {} images", proposals.len(), gt.len())));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold {threshold} outside (0, 1]")));
    }
    let total: usize = gt.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::invalid("no ground-truth boxes"));
    }
    let covered: usize = proposals
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let top = &p[..count.min(p.len())];
            g.iter().filter(|gb| top.iter().any(|pb| iou(pb, gb) >= threshold)).count()
        })
        .sum();
    Ok(covered as f64 / total as f64)
}

/// `(count, recall)` at a fixed IoU threshold.
pub fn recall_vs_count(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], counts: &[usize], threshold: f64) -> Result<Vec<(f64, f64)>> {
    counts
        .iter()
        .map(|&n| Ok((n as f64, proposal_recall(proposals, gt, n, threshold)?)))
        .collect()
}

/// `(threshold, recall)` at a fixed proposal count.
pub fn recall_vs_iou(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], count: usize, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    thresholds
        .iter()
        .map(|&t| Ok((t, proposal_recall(proposals, gt, count, t)?)))
        .collect()
}

/// A labelled ground-truth box in one frame of one video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video: usize,
    pub frame: usize,
    pub bbox: BBox,
    pub class: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    /// Zero when the class has no ground truth.
    pub ap: f64,
    pub positives: usize,
}

/// Mean AP over classes that have ground truth.
pub fn mean_ap(per_class: &[ClassAp]) -> Result<f64> {
    let v: Vec<f64> = per_class.iter().filter(|c| c.positives > 0).map(|c| c.ap).collect();
    mean(&v)
}

/// Greedy matching in descending score order (stable): each prediction takes
/// the best-overlapping ground truth if that overlap exceeds `threshold` and
/// the ground truth is still free; otherwise it is a false positive.
fn match_and_score<P, G>(
    preds: &[&P],
    gts: &[&G],
    score: impl Fn(&P) -> f64,
    overlap: impl Fn(&P, &G) -> Option<f64>,
    threshold: f64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| score(preds[b]).partial_cmp(&score(preds[a])).unwrap_or(Ordering::Equal));
    let mut taken = vec![false; gts.len()];
    let mut labels = vec![false; preds.len()];
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if let Some(o) = overlap(preds[i], g) {
                if best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((j, o));
                }
            }
        }
        if let Some((j, o)) = best {
            if o > threshold && !taken[j] {
                taken[j] = true;
                labels[i] = true;
            }
        }
    }
    let scores: Vec<f64> = preds.iter().map(|p| score(p)).collect();
    let mut curve = pr_curve(&scores, &labels)?;
    curve.positives = gts.len();
    average_precision(&curve)
}

/// Per-class frame-AP: a detection is correct when its class matches and its
/// IoU with a free ground-truth box in the same frame exceeds `threshold`.
pub fn frame_ap(detections: &[Detection], gt: &[GroundTruth], classes: usize, threshold: f64) -> Result<Vec<ClassAp>> {
    (0..classes)
        .map(|k| {
            let preds: Vec<&Detection> = detections.iter().filter(|d| d.class == k).collect();
            let gts: Vec<&GroundTruth> = gt.iter().filter(|g| g.class == k).collect();
            let ap = if gts.is_empty() {
                0.0
            } else {
                match_and_score(
                    &preds,
                    &gts,
                    |d| d.score,
                    |d, g| (d.video == g.video && d.frame == g.frame).then(|| iou(&d.bbox, &g.bbox)),
                    threshold,
                )?
            };
            Ok(ClassAp {
                class: k,
                ap,
                positives: gts.len(),
            })
        })
        .collect()
}

/// Spatio-temporal overlap: mean per-frame IoU over the union of the two
/// frame ranges; frames covered by only one tube count as zero.
pub fn tube_overlap(a: &Tube, b: &Tube) -> f64 {
    let (start, end) = (a.start.min(b.start), a.end().max(b.end()));
    if end <= start {
        return 0.0;
    }
    let total: f64 = (start..end)
        .map(|f| match (a.box_at(f), b.box_at(f)) {
            (Some(x), Some(y)) => iou(x, y),
            _ => 0.0,
        })
        .sum();
    total / (end - start) as f64
}

/// Per-class video-AP with [`tube_overlap`] as the matching overlap.
pub fn video_ap(tubes: &[Tube], gt: &[Tube], classes: usize, threshold: f64) -> Result<Vec<ClassAp>> {
    (0..classes)
        .map(|k| {
            let preds: Vec<&Tube> = tubes.iter().filter(|t| t.class == k).collect();
            let gts: Vec<&Tube> = gt.iter().filter(|t| t.class == k).collect();
            let ap = if gts.is_empty() {
                0.0
            } else {
                match_and_score(
                    &preds,
                    &gts,
                    |t| t.score,
                    |t, g| (t.video == g.video).then(|| tube_overlap(t, g)),
                    threshold,
                )?
            };
            Ok(ClassAp {
                class: k,
                ap,
                positives: gts.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(video: usize, frame: usize, b: BBox, class: usize, score: f64) -> Detection {
        Detection {
            video,
            frame,
            bbox: b,
            class,
            score,
        }
    }

    #[test]
    fn long_curves_fall_back_to_float_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let got = ap(&scores, &labels).unwrap();
        let (mut tp, mut sum) = (0usize, 0.0f64);
        for (i, &l) in labels.iter().enumerate() {
            if l {
                tp += 1;
                sum += tp as f64 / (i + 1) as f64;
            }
        }
        assert!((got - sum / tp as f64).abs() < 1e-12);
    }

    fn tube(class: usize, boxes: Vec<BBox>, score: f64) -> Tube {
        Tube {
            video: 0,
            class,
            start: 0,
            boxes,
            score,
        }
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(ap(&[0.9, 0.8, 0.1, 0.05], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(ap(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap(), 5.0 / 6.0);
        assert_eq!(ap(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(ap(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
        assert!(matches!(ap(&[0.3, 0.2], &[false, false]), Err(Error::Undefined(_))));
    }

    #[test]
    fn ties_are_evaluated_as_a_group() {
        let labels = [true, false, false, true, false];
        assert!((ap(&[0.5; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
        let curve = pr_curve(&[0.5; 5], &labels).unwrap();
        assert_eq!(curve.points, vec![(1.0, 0.4)]);
    }

    #[test]
    fn grid_cases() {
        let cfg = GridProtocolConfig::default();
        let gt = [BBox::new(8, 12, 40, 36)];
        let mask = crate::fcn::boxes_to_binary_map(&gt, 64, 64);
        assert_eq!(grid_actionness_ap(&mask, &gt, &cfg).unwrap(), 1.0);
        let (_, labels) = grid_cells(&[mask.clone()], &[gt.to_vec()], 1, &cfg).unwrap();
        let frac = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        let constant = ActionnessMap::filled(64, 64, 0.3);
        assert!((grid_actionness_ap(&constant, &gt, &cfg).unwrap() - frac).abs() < 1e-12);
        assert!(grid_actionness_ap(&constant, &[], &cfg).is_err());
        // one 4x4 cell against a 4x4 box: literal IoU 1
        let lit = GridProtocolConfig {
            criterion: GridCriterion::LiteralIou,
            ..cfg
        };
        let small = [BBox::new(4, 4, 8, 8)];
        let (_, l) = grid_cells(&[mask], &[small.to_vec()], 1, &lit).unwrap();
        assert_eq!(l.iter().filter(|&&x| x).count(), 1);
    }

    #[test]
    fn video_grid_partition() {
        let cfg = GridProtocolConfig::default();
        let maps = vec![ActionnessMap::filled(64, 64, 0.5); 8];
        let gt = vec![vec![BBox::new(0, 0, 32, 32)]; 8];
        let (s, _) = grid_cells(&maps, &gt, cfg.temporal_bins, &cfg).unwrap();
        assert_eq!(s.len(), 16 * 16 * 4);
        assert_eq!(partition(8, 4).unwrap(), vec![(0, 2), (2, 4), (4, 6), (6, 8)]);
        assert_eq!(partition(10, 4).unwrap(), vec![(0, 2), (2, 4), (4, 6), (6, 10)]);
        assert!(partition(3, 4).is_err());
    }

    #[test]
    fn recall_cases() {
        let gt = vec![vec![BBox::new(0, 0, 10, 10), BBox::new(20, 20, 30, 30)]];
        assert_eq!(proposal_recall(&gt, &gt, 5, 1.0).unwrap(), 1.0);
        assert_eq!(proposal_recall(&[vec![]], &gt, 5, 0.5).unwrap(), 0.0);
        // 10x6 box inside the first gt: IoU 0.6
        let p = vec![vec![BBox::new(0, 0, 10, 6)]];
        assert!((iou(&p[0][0], &gt[0][0]) - 0.6).abs() < 1e-12);
        assert_eq!(proposal_recall(&p, &gt, 5, 0.5).unwrap(), 0.5);
        assert_eq!(proposal_recall(&p, &gt, 5, 0.7).unwrap(), 0.0);
        assert!(proposal_recall(&p, &[vec![]], 5, 0.5).is_err());
    }

    #[test]
    fn frame_ap_cases() {
        let b = BBox::new(0, 0, 10, 10);
        let gt = [GroundTruth {
            video: 0,
            frame: 0,
            bbox: b,
            class: 0,
        }];
        let r = frame_ap(&[det(0, 0, b, 0, 0.9)], &gt, 2, 0.5).unwrap();
        assert_eq!(r[0].ap, 1.0);
        assert_eq!(mean_ap(&r).unwrap(), 1.0);

        let wrong = frame_ap(&[det(0, 0, b, 1, 0.9)], &gt, 2, 0.5).unwrap();
        assert_eq!((wrong[0].ap, wrong[1].ap), (0.0, 0.0));
        assert_eq!(wrong[1].positives, 0);

        let dup = frame_ap(&[det(0, 0, b, 0, 0.9), det(0, 0, b, 0, 0.8)], &gt, 1, 0.5).unwrap();
        assert_eq!(dup[0].ap, 1.0);
        // duplicate ranked first still steals nothing: the gt is matched once
        let other_frame = frame_ap(&[det(0, 1, b, 0, 0.9)], &gt, 1, 0.5).unwrap();
        assert_eq!(other_frame[0].ap, 0.0);
    }

    #[test]
    fn video_ap_cases() {
        let a = BBox::new(0, 0, 10, 10);
        let far = BBox::new(50, 50, 60, 60);
        let g = tube(0, vec![a; 4], 1.0);
        assert_eq!(video_ap(&[g.clone()], &[g.clone()], 1, 0.5).unwrap()[0].ap, 1.0);
        let half = tube(0, vec![a, a, far, far], 0.9);
        assert_eq!(tube_overlap(&half, &g), 0.5);
        assert_eq!(video_ap(&[half], &[g.clone()], 1, 0.5).unwrap()[0].ap, 0.0);

        // per-frame IoUs 0.9, 0.6, 0.3 against 10x10 boxes
        let gt3 = tube(0, vec![a; 3], 1.0);
        let p = tube(0, vec![BBox::new(0, 0, 10, 9), BBox::new(0, 0, 10, 6), BBox::new(0, 0, 10, 3)], 0.7);
        assert!((tube_overlap(&p, &gt3) - 0.6).abs() < 1e-12);
        assert_eq!(video_ap(&[p], &[gt3], 1, 0.5).unwrap()[0].ap, 1.0);

        let shifted = Tube { start: 2, ..g.clone() };
        assert!((tube_overlap(&shifted, &g) - 2.0 / 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ap_bounded_and_rank_only(seed in 0u64..2000, n in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            let a = ap(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
            prop_assert!((ap(&transformed, &labels).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn recall_curves_monotone(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rb = || {
                let x = rng.random_range(0..40);
                let y = rng.random_range(0..40);
                BBox::new(x, y, x + rng.random_range(4..20), y + rng.random_range(4..20))
            };
            let gt: Vec<Vec<BBox>> = (0..4).map(|_| vec![rb(), rb()]).collect();
            let props: Vec<Vec<BBox>> = (0..4).map(|_| (0..12).map(|_| rb()).collect()).collect();
            let by_count = recall_vs_count(&props, &gt, &[1, 2, 4, 8, 12], 0.3).unwrap();
            prop_assert!(by_count.windows(2).all(|w| w[0].1 <= w[1].1));
            let by_iou = recall_vs_iou(&props, &gt, 8, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
            prop_assert!(by_iou.windows(2).all(|w| w[0].1 >= w[1].1));
        }

        #[test]
        fn frame_matching_is_one_to_one(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BBox::new(0, 0, 10, 10);
            let gt = vec![GroundTruth { video: 0, frame: 0, bbox: b, class: 0 }];
            let k = rng.random_range(1..6);
            let dets: Vec<Detection> = (0..k).map(|_| det(0, 0, b, 0, rng.random())).collect();
            let r = frame_ap(&dets, &gt, 1, 0.5).unwrap();
            // exactly one true positive, ranked first
            prop_assert_eq!(r[0].ap, 1.0);
        }

        #[test]
        fn grid_mask_is_perfect(x in 0i32..40, y in 0i32..40, w in 8i32..24, h in 8i32..24) {
            let gt = [BBox::new(x, y, x + w, y + h)];
            let mask = crate::fcn::boxes_to_binary_map(&gt, 64, 64);
            prop_assert_eq!(grid_actionness_ap(&mask, &gt, &GridProtocolConfig::default()).unwrap(), 1.0);
        }
    }
}
