//! Axis-aligned integer boxes.

use serde::{Deserialize, Serialize};

/// A rectangle covering the half-open ranges `x1..x2` and `y1..y2`.
///
/// The same type is used for pixel boxes and for boxes on the proposal
/// lattice; a lattice box spanning cells `c1..=c2` is stored as `c1..c2 + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BBox {
    pub const fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    #[inline]
    pub fn width(&self) -> i64 {
        (self.x2 as i64 - self.x1 as i64).max(0)
    }

    #[inline]
    pub fn height(&self) -> i64 {
        (self.y2 as i64 - self.y1 as i64).max(0)
    }

    #[inline]
    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn intersection(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
            x2: self.x2.min(other.x2),
            y2: self.y2.min(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        self.intersection(other).area()
    }

    /// Clip to `0..width` × `0..height`.
    pub fn clamp(&self, height: usize, width: usize) -> BBox {
        let (h, w) = (height as i32, width as i32);
        BBox {
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
            x2: self.x2.clamp(0, w),
            y2: self.y2.clamp(0, h),
        }
    }

    pub fn translate(&self, dx: i32, dy: i32) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// Intersection over union; `0` for disjoint or empty boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}
