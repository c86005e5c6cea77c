//! Actionness map → ranked box proposals.
//!
//! Boxes on the lattice use the half-open [`BBox`] convention: a box spanning
//! cells `c1..=c2` is stored as `c1..c2 + 1`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox};
use crate::map::ActionnessMap;

/// Side of the square scoring lattice.
pub const LATTICE: usize = 32;

pub const DEFAULT_SUPPRESS_IOU: f64 = 0.7;
pub const DEFAULT_PROPOSALS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    /// Mean actionness inside the box.
    pub score: f32,
}

/// Proposal parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub count: usize,
    pub suppress_iou: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            count: DEFAULT_PROPOSALS,
            suppress_iou: DEFAULT_SUPPRESS_IOU,
        }
    }
}

pub fn resize_map_to_lattice(map: &ActionnessMap) -> Result<ActionnessMap> {
    map.resize(LATTICE, LATTICE)
}

/// Summed-area table with a zero first row and column.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralImage {
    height: usize,
    width: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(map: &ActionnessMap) -> Self {
        let (h, w) = (map.height(), map.width());
        let stride = w + 1;
        let mut table = vec![0.0f64; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += map.get(r, c) as f64;
                table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + row;
            }
        }
        IntegralImage {
            height: h,
            width: w,
            table,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Sum of map values in rows `< i` and columns `< j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.table[i * (self.width + 1) + j]
    }

    fn box_sum_unchecked(&self, b: &BBox) -> f64 {
        let (x1, y1, x2, y2) = (b.x1 as usize, b.y1 as usize, b.x2 as usize, b.y2 as usize);
        self.at(y2, x2) - self.at(y1, x2) - self.at(y2, x1) + self.at(y1, x1)
    }

    pub fn box_sum(&self, b: &BBox) -> Result<f64> {
        self.check(b)?;
        Ok(self.box_sum_unchecked(b))
    }

    fn check(&self, b: &BBox) -> Result<()> {
        let inside = b.x1 >= 0
            && b.y1 >= 0
            && b.x2 as i64 <= self.width as i64
            && b.y2 as i64 <= self.height as i64
            && b.x1 < b.x2
            && b.y1 < b.y2;
        if inside {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "box {b:?} is empty or outside the {}x{} lattice",
                self.height, self.width
            )))
        }
    }
}

/// Mean map value inside a lattice box.
pub fn box_mean_score(ii: &IntegralImage, b: &BBox) -> Result<f64> {
    Ok(ii.box_sum(b)? / b.area() as f64)
}

fn mean_score(ii: &IntegralImage, b: &BBox) -> f32 {
    // rounding can push a plateau mean a hair past the map's range
    ((ii.box_sum_unchecked(b) / b.area() as f64) as f32).clamp(0.0, 1.0)
}

/// Every box on the lattice, in row-major order of `(y1, x1, y2, x2)`.
pub fn enumerate_scored_boxes(ii: &IntegralImage) -> Vec<ScoredBox> {
    let (h, w) = (ii.height as i32, ii.width as i32);
    let count = (h * (h + 1) / 2) as usize * (w * (w + 1) / 2) as usize;
    let mut out = Vec::with_capacity(count);
    for y1 in 0..h {
        for x1 in 0..w {
            for y2 in y1 + 1..=h {
                for x2 in x1 + 1..=w {
                    let bbox = BBox::new(x1, y1, x2, y2);
                    out.push(ScoredBox {
                        bbox,
                        score: mean_score(ii, &bbox),
                    });
                }
            }
        }
    }
    out
}

/// Selection order: higher score first, then larger area, then `(y1, x1, y2, x2)`.
pub fn selection_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.bbox.area().cmp(&a.bbox.area()))
        .then_with(|| (a.bbox.y1, a.bbox.x1, a.bbox.y2, a.bbox.x2).cmp(&(b.bbox.y1, b.bbox.x1, b.bbox.y2, b.bbox.x2)))
}

/// Greedy non-maximum suppression: visit boxes in [`selection_order`] and keep
/// a box unless its IoU with an already kept box exceeds `suppress_iou`.
pub fn nms_sample(boxes: &[ScoredBox], n: usize, suppress_iou: f64) -> Vec<ScoredBox> {
    let mut order: Vec<&ScoredBox> = boxes.iter().collect();
    order.sort_unstable_by(|a, b| selection_order(a, b));
    let mut kept: Vec<ScoredBox> = Vec::with_capacity(n.min(boxes.len()));
    for cand in order {
        if kept.len() >= n {
            break;
        }
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= suppress_iou) {
            kept.push(*cand);
        }
    }
    kept
}

/// Scale lattice cell boundaries to pixel coordinates, rounding half up.
pub fn project_box(b: &BBox, height: usize, width: usize) -> BBox {
    project_box_from(b, LATTICE, LATTICE, height, width)
}

pub fn project_box_from(b: &BBox, lh: usize, lw: usize, height: usize, width: usize) -> BBox {
    let scale = |c: i32, dim: usize, l: usize| ((c as i64 * dim as i64 * 2 + l as i64) / (2 * l as i64)) as i32;
    BBox::new(
        scale(b.x1, width, lw),
        scale(b.y1, height, lh),
        scale(b.x2, width, lw),
        scale(b.y2, height, lh),
    )
}

/// Map a pixel box back to the lattice (nearest cell boundaries).
pub fn unproject_box(b: &BBox, height: usize, width: usize) -> BBox {
    project_box_from(b, height, width, LATTICE, LATTICE)
}

/// Full proposal procedure for one map: lattice resize, exhaustive scoring,
/// greedy NMS, projection to a `height × width` image.
pub fn generate_proposals(map: &ActionnessMap, config: &ProposalConfig, height: usize, width: usize) -> Result<Vec<ScoredBox>> {
    if config.count == 0 {
        return Err(Error::invalid("proposal count must be positive"));
    }
    if !(config.suppress_iou > 0.0 && config.suppress_iou <= 1.0) {
        return Err(Error::invalid(format!("suppress_iou {} outside (0, 1]", config.suppress_iou)));
    }
    let lattice = resize_map_to_lattice(map)?;
    let ii = IntegralImage::new(&lattice);
    let boxes = enumerate_scored_boxes(&ii);
    Ok(nms_sample(&boxes, config.count, config.suppress_iou)
        .into_iter()
        .map(|s| ScoredBox {
            bbox: project_box(&s.bbox, height, width),
            score: s.score,
        })
        .collect())
}
