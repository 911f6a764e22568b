//! Slow reference implementations used to check the fast paths.
//!
//! Nothing here shares code with the routines it checks: IoU is measured by
//! counting grid points, NMS rescans every box each round, the
//! orientation-aware convolution is a direct sum with its own interpolation,
//! and AP recomputes the matching for every score cut-off.

use crate::anchors::FeatureLevelSpec;
use crate::data::{ApMetric, Object};
use crate::geometry::{HorizontalBox, OrientedBox};
use crate::heads::Detection;

fn inside(b: &OrientedBox, x: f64, y: f64) -> bool {
    let (s, c) = b.theta.sin_cos();
    let dx = x - b.cx;
    let dy = y - b.cy;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.w / 2.0 && v.abs() <= b.h / 2.0
}

fn bounds(b: &OrientedBox) -> (f64, f64, f64, f64) {
    let (s, c) = b.theta.sin_cos();
    let ex = (c * b.w).abs() / 2.0 + (s * b.h).abs() / 2.0;
    let ey = (s * b.w).abs() / 2.0 + (c * b.h).abs() / 2.0;
    (b.cx - ex, b.cy - ey, b.cx + ex, b.cy + ey)
}

/// IoU estimated on an `n x n` grid of cell-center points spanning the
/// union of both boxes' extents.
pub fn raster_iou(a: &OrientedBox, b: &OrientedBox, n: usize) -> f64 {
    let (ax0, ay0, ax1, ay1) = bounds(a);
    let (bx0, by0, bx1, by1) = bounds(b);
    let (x0, y0) = (ax0.min(bx0), ay0.min(by0));
    let (x1, y1) = (ax1.max(bx1), ay1.max(by1));
    let sx = (x1 - x0) / n as f64;
    let sy = (y1 - y0) / n as f64;
    let (mut inter, mut uni) = (0usize, 0usize);
    for i in 0..n {
        let y = y0 + (i as f64 + 0.5) * sy;
        for j in 0..n {
            let x = x0 + (j as f64 + 0.5) * sx;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            uni += (ia || ib) as usize;
        }
    }
    if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}

/// Greedy NMS by repeated scans: pick the highest remaining score (lowest
/// index on ties), drop everything overlapping it by more than `thr`.
pub fn quadratic_nms(n: usize, scores: &[f64], thr: f64, iou: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut alive = vec![true; n];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        keep.push(b);
        alive[b] = false;
        for j in 0..n {
            if alive[j] && iou(b, j) > thr {
                alive[j] = false;
            }
        }
    }
    keep
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn grid_value(plane: &[f64], h: usize, w: usize, r: i64, c: i64) -> f64 {
    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
        0.0
    } else {
        plane[r as usize * w + c as usize]
    }
}

/// Bilinear read at `(x, y)` cells with zeros outside the grid.
pub fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let c0 = x.floor();
    let r0 = y.floor();
    let (ax, ay) = (x - c0, y - r0);
    let (c0, r0) = (c0 as i64, r0 as i64);
    grid_value(plane, h, w, r0, c0) * (1.0 - ax) * (1.0 - ay)
        + grid_value(plane, h, w, r0, c0 + 1) * ax * (1.0 - ay)
        + grid_value(plane, h, w, r0 + 1, c0) * (1.0 - ax) * ay
        + grid_value(plane, h, w, r0 + 1, c0 + 1) * ax * ay
}

/// Orientation-aware convolution as a direct sum. Tap `(i, j)` of the
/// kernel at location `(row, col)` reads the input at the image point
/// `anchor center + R(theta) ((j - c) w / k, (i - c) h / k)`, converted to
/// cells by `/ stride - 0.5`. `x` is `(C, H, W)` and `weight`
/// `(Cout, C, k, k)`, both row-major.
#[allow(clippy::too_many_arguments)]
pub fn naive_oaconv(
    x: &[f64],
    channels: usize,
    weight: &[f64],
    bias: &[f64],
    anchors: &[HorizontalBox],
    thetas: &[f64],
    level: &FeatureLevelSpec,
    k: usize,
) -> Vec<f64> {
    let (h, w) = (level.height, level.width);
    let cout = bias.len();
    let half = (k / 2) as f64;
    let mut out = vec![0.0; cout * h * w];
    for row in 0..h {
        for col in 0..w {
            let loc = row * w + col;
            let a = anchors[loc];
            let (s, c) = thetas[loc].sin_cos();
            for co in 0..cout {
                let mut acc = bias[co];
                for i in 0..k {
                    for j in 0..k {
                        let lx = (j as f64 - half) * a.w / k as f64;
                        let ly = (i as f64 - half) * a.h / k as f64;
                        let px = a.cx + c * lx - s * ly;
                        let py = a.cy + s * lx + c * ly;
                        let cx = px / level.stride - 0.5;
                        let cy = py / level.stride - 0.5;
                        for ci in 0..channels {
                            let plane = &x[ci * h * w..(ci + 1) * h * w];
                            let wv = weight[((co * channels + ci) * k + i) * k + j];
                            acc += wv * bilinear(plane, h, w, cx, cy);
                        }
                    }
                }
                out[co * h * w + loc] = acc;
            }
        }
    }
    out
}

/// AP by brute force: for every prefix of the score-sorted detections the
/// matching is redone from scratch, then the VOC definitions are applied
/// literally. `dets` are `(image, detection)` pairs of one class, already in
/// the order the evaluator should consume them.
pub fn brute_force_ap(
    dets: &[(usize, Detection)],
    gts: &[Vec<Object>],
    class_id: usize,
    iou_thr: f64,
    metric: ApMetric,
    iou: impl Fn(&OrientedBox, &OrientedBox) -> f64,
) -> Option<f64> {
    let npos = gts.iter().flatten().filter(|o| o.class_id == class_id && !o.difficult).count();
    if npos == 0 {
        return None;
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    for k in 1..=dets.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut last_counted = false;
        for (idx, (img, d)) in dets[..k].iter().enumerate() {
            let mut best = (None, f64::NEG_INFINITY);
            for (j, o) in gts[*img].iter().enumerate() {
                if o.class_id != class_id {
                    continue;
                }
                let v = iou(&d.obb, &o.obb);
                if v > best.1 {
                    best = (Some(j), v);
                }
            }
            let counted = match best {
                (Some(j), v) if v >= iou_thr => {
                    if gts[*img][j].difficult {
                        false
                    } else if used[*img][j] {
                        fp += 1;
                        true
                    } else {
                        used[*img][j] = true;
                        tp += 1;
                        true
                    }
                }
                _ => {
                    fp += 1;
                    true
                }
            };
            if idx + 1 == k {
                last_counted = counted;
            }
        }
        if last_counted {
            points.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
        } else if let Some(&p) = points.last() {
            points.push(p);
        }
    }
    let envelope = |r: f64| {
        points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    };
    Some(match metric {
        ApMetric::Voc07 => (0..=10).map(|t| envelope(t as f64 / 10.0)).sum::<f64>() / 11.0,
        ApMetric::Voc12 => {
            let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
            recalls.push(0.0);
            recalls.sort_by(f64::total_cmp);
            recalls.dedup();
            recalls.windows(2).map(|w| (w[1] - w[0]) * envelope(w[1])).sum()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_of_identical_boxes_is_one() {
        let b = OrientedBox::new(3.0, 4.0, 10.0, 2.0, 0.7);
        assert!((raster_iou(&b, &b, 200) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raster_half_overlap() {
        let a = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = OrientedBox::new(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((raster_iou(&a, &b, 600) - 1.0 / 3.0).abs() < 5e-3);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let keep = quadratic_nms(3, &[0.5, 0.9, 0.5], 0.5, |_, _| 0.0);
        assert_eq!(keep, vec![1, 0, 2]);
    }
}
