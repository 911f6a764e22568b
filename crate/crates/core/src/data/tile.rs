//! Cropping large images into overlapping windows.

use serde::{Deserialize, Serialize};

use super::Object;
use crate::geometry::{convex_intersection_area, obb_to_polygon, HorizontalBox};

/// Fraction of an object's area that must fall inside a window for the
/// object to be kept in it.
pub const KEEP_AREA_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Window origins along one axis: steps of `stride` while a window still
/// fits, then one last window flush with the edge.
pub fn tile_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    assert!(tile >= stride && stride > 0, "need tile >= stride > 0");
    if extent <= tile {
        return vec![0];
    }
    let mut v = Vec::new();
    let mut o = 0;
    while o + tile < extent {
        v.push(o);
        o += stride;
    }
    let last = extent - tile;
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

/// Windows in row-major order, each with the objects that keep at least
/// [`KEEP_AREA_FRACTION`] of their area inside it, shifted into window
/// coordinates.
pub fn tile_image(
    width: usize,
    height: usize,
    tile: usize,
    stride: usize,
    objects: &[Object],
) -> Vec<(Window, Vec<Object>)> {
    let xs = tile_origins(width, tile, stride);
    let ys = tile_origins(height, tile, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            let win = Window {
                x0,
                y0,
                width: tile.min(width),
                height: tile.min(height),
            };
            let rect = HorizontalBox::from_corners(
                x0 as f64,
                y0 as f64,
                (x0 + win.width) as f64,
                (y0 + win.height) as f64,
            )
            .to_oriented();
            let wpoly = obb_to_polygon(&rect);
            let kept = objects
                .iter()
                .filter(|o| {
                    let inside = convex_intersection_area(&obb_to_polygon(&o.obb), &wpoly);
                    inside >= KEEP_AREA_FRACTION * o.obb.area()
                })
                .map(|o| Object {
                    obb: o.obb.shifted(-(x0 as f64), -(y0 as f64)),
                    ..*o
                })
                .collect();
            out.push((win, kept));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox;

    #[test]
    fn origins() {
        assert_eq!(tile_origins(1024, 1024, 824), vec![0]);
        assert_eq!(tile_origins(2000, 1024, 824), vec![0, 824, 976]);
        assert_eq!(tile_origins(1848, 1024, 824), vec![0, 824]);
        assert_eq!(tile_image(2000, 2000, 1024, 824, &[]).len(), 9);
    }

    #[test]
    fn object_shifted_into_window() {
        let o = Object::new(OrientedBox::new(1500.0, 100.0, 40.0, 20.0, 0.2), 2);
        let tiles = tile_image(2000, 1024, 1024, 824, &[o]);
        let hits: Vec<_> = tiles.iter().filter(|t| !t.1.is_empty()).collect();
        assert_eq!(hits.len(), 2);
        for (w, objs) in hits {
            assert!((objs[0].obb.cx - (1500.0 - w.x0 as f64)).abs() < 1e-9);
        }
    }
}
