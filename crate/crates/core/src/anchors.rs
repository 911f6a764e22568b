//! One preset horizontal anchor per feature-map location.

use serde::{Deserialize, Serialize};

use crate::geometry::HorizontalBox;

/// Sub-cell position of an anchor center: cell `(i, j)` on a level with
/// stride `S` is centered at `((j + 0.5) S, (i + 0.5) S)`.
pub const ANCHOR_CENTER_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLevelSpec {
    /// Pixels per feature cell.
    pub stride: f64,
    pub height: usize,
    pub width: usize,
}

impl FeatureLevelSpec {
    pub fn new(stride: f64, height: usize, width: usize) -> Self {
        Self {
            stride,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel position of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + ANCHOR_CENTER_OFFSET) * self.stride,
            (row as f64 + ANCHOR_CENTER_OFFSET) * self.stride,
        )
    }
}

/// Anchors of all pyramid levels, concatenated level by level and row-major
/// over `(y, x)` within a level.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    levels: Vec<FeatureLevelSpec>,
    offsets: Vec<usize>,
    boxes: Vec<HorizontalBox>,
}

impl AnchorGrid {
    pub fn levels(&self) -> &[FeatureLevelSpec] {
        &self.levels
    }

    /// All anchors in flat order.
    pub fn boxes(&self) -> &[HorizontalBox] {
        &self.boxes
    }

    /// Anchors of one level.
    pub fn level(&self, idx: usize) -> &[HorizontalBox] {
        &self.boxes[self.offsets[idx]..self.offsets[idx + 1]]
    }

    /// Flat index range of one level.
    pub fn level_range(&self, idx: usize) -> std::ops::Range<usize> {
        self.offsets[idx]..self.offsets[idx + 1]
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Each anchor has `w = stride * scale * sqrt(ratio)` and
/// `h = stride * scale / sqrt(ratio)`.
pub fn generate_anchors(levels: &[FeatureLevelSpec], scale: f64, ratio: f64) -> AnchorGrid {
    assert!(scale > 0.0 && ratio > 0.0, "anchor scale and ratio must be positive");
    let total: usize = levels.iter().map(FeatureLevelSpec::len).sum();
    let mut boxes = Vec::with_capacity(total);
    let mut offsets = vec![0];
    let sr = ratio.sqrt();
    for lvl in levels {
        let w = lvl.stride * scale * sr;
        let h = lvl.stride * scale / sr;
        for row in 0..lvl.height {
            for col in 0..lvl.width {
                let (cx, cy) = lvl.cell_center(row, col);
                boxes.push(HorizontalBox::new(cx, cy, w, h));
            }
        }
        offsets.push(boxes.len());
    }
    AnchorGrid {
        levels: levels.to_vec(),
        offsets,
        boxes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_grid() {
        let g = generate_anchors(&[FeatureLevelSpec::new(8.0, 2, 2)], 4.0, 1.0);
        let expected = [(4.0, 4.0), (12.0, 4.0), (4.0, 12.0), (12.0, 12.0)];
        assert_eq!(g.len(), 4);
        for (b, (cx, cy)) in g.boxes().iter().zip(expected) {
            assert_eq!((b.cx, b.cy, b.w, b.h), (cx, cy, 32.0, 32.0));
        }
    }

    #[test]
    fn scale_six() {
        let g = generate_anchors(&[FeatureLevelSpec::new(8.0, 1, 1)], 6.0, 1.0);
        assert_eq!((g.boxes()[0].w, g.boxes()[0].h), (48.0, 48.0));
    }

    #[test]
    fn one_anchor_per_location_and_spacing() {
        let levels = [
            FeatureLevelSpec::new(4.0, 5, 7),
            FeatureLevelSpec::new(8.0, 3, 4),
            FeatureLevelSpec::new(16.0, 2, 2),
        ];
        let g = generate_anchors(&levels, 4.0, 2.0);
        assert_eq!(g.len(), 35 + 12 + 4);
        for (li, lvl) in levels.iter().enumerate() {
            let a = g.level(li);
            for b in a {
                assert!((b.w / b.h - 2.0).abs() < 1e-12);
            }
            for row in 0..lvl.height {
                for col in 1..lvl.width {
                    let d = a[row * lvl.width + col].cx - a[row * lvl.width + col - 1].cx;
                    assert_eq!(d, lvl.stride);
                }
            }
        }
        let sq = generate_anchors(&levels, 3.0, 1.0);
        assert!(sq.boxes().iter().all(|b| b.w == b.h));
    }
}
