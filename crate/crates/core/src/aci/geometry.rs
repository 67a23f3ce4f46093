use serde::{Deserialize, Serialize};

/// Axis-aligned pixel rectangle. Width and height are unsigned, so a box can
/// be degenerate (zero area) but never inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    fn right(&self) -> i64 {
        i64::from(self.x) + i64::from(self.w)
    }

    fn bottom(&self) -> i64 {
        i64::from(self.y) + i64::from(self.h)
    }

    /// Integer center, rounding toward the top-left.
    pub fn center(&self) -> (i32, i32) {
        (
            (i64::from(self.x) + i64::from(self.w / 2)) as i32,
            (i64::from(self.y) + i64::from(self.h / 2)) as i32,
        )
    }

    /// Half-open containment: the right and bottom edges are outside.
    pub fn contains(&self, px: i32, py: i32) -> bool {
        let (px, py) = (i64::from(px), i64::from(py));
        px >= i64::from(self.x)
            && px < self.right()
            && py >= i64::from(self.y)
            && py < self.bottom()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let left = i64::from(self.x).max(i64::from(other.x));
        let top = i64::from(self.y).max(i64::from(other.y));
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        if right <= left || bottom <= top {
            return 0;
        }
        ((right - left) as u64) * ((bottom - top) as u64)
    }
}

/// Intersection over union. Zero when the union is empty.
pub fn compute_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}
