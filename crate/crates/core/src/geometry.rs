//! Rotated-rectangle geometry.
//!
//! Oriented boxes use the long-edge convention: `w >= h` and
//! `theta` in `[-pi/2, pi/2)`, measured from the +x axis towards +y.
//! All routines work in `f64` image pixels.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intersections smaller than this (px^2) are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

/// A rotated rectangle `(cx, cy, w, h, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

/// An axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Four vertices. Polygons built by this module are convex and
/// counter-clockwise (positive shoelace area in `(x, y)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polygon4 {
    pub pts: [Point; 4],
}

/// Wraps an angle into `[-pi/2, pi/2)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// `R(alpha)` as a row-major 2x2 matrix: `[[cos, -sin], [sin, cos]]`.
pub fn rotation_matrix(alpha: f64) -> [[f64; 2]; 2] {
    let (s, c) = alpha.sin_cos();
    [[c, -s], [s, c]]
}

impl OrientedBox {
    /// Builds a box and brings it to canonical long-edge form.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { cx, cy, w, h, theta }.canonical()
    }

    pub fn canonical(self) -> Self {
        let (mut w, mut h, mut theta) = (self.w, self.h, self.theta);
        if w < h {
            std::mem::swap(&mut w, &mut h);
            theta += FRAC_PI_2;
        }
        Self {
            w,
            h,
            theta: wrap_angle(theta),
            ..self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.w >= self.h
            && self.h > 0.0
            && (-FRAC_PI_2..FRAC_PI_2).contains(&self.theta)
            && [self.cx, self.cy, self.w, self.h, self.theta]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_polygon(&self) -> Polygon4 {
        obb_to_polygon(self)
    }

    pub fn rectangularize(&self) -> HorizontalBox {
        rectangularize(self)
    }

    /// Mirror about the vertical line `x = width / 2`.
    pub fn flip_horizontal(&self, width: f64) -> Self {
        Self::new(width - self.cx, self.cy, self.w, self.h, -self.theta)
    }

    /// Translate by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// The equivalent parameterization `(w', h', theta')` whose angle lies in
    /// `[-pi/4, pi/4)`. `w'` may be the short edge.
    pub fn near_axis_form(&self) -> (f64, f64, f64) {
        let t = wrap_angle(self.theta);
        if t >= PI / 4.0 {
            (self.h, self.w, t - FRAC_PI_2)
        } else if t < -PI / 4.0 {
            (self.h, self.w, t + FRAC_PI_2)
        } else {
            (self.w, self.h, t)
        }
    }

    fn key(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }
}

impl HorizontalBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn x1(&self) -> f64 {
        self.cx - 0.5 * self.w
    }
    pub fn y1(&self) -> f64 {
        self.cy - 0.5 * self.h
    }
    pub fn x2(&self) -> f64 {
        self.cx + 0.5 * self.w
    }
    pub fn y2(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }

    /// Clamp to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let x1 = self.x1().clamp(0.0, width);
        let x2 = self.x2().clamp(0.0, width);
        let y1 = self.y1().clamp(0.0, height);
        let y2 = self.y2().clamp(0.0, height);
        Self::from_corners(x1, y1, x2, y2)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1() && x <= self.x2() && y >= self.y1() && y <= self.y2()
    }

    /// Same rectangle as an oriented box with `theta = 0` (canonicalized).
    pub fn to_oriented(&self) -> OrientedBox {
        OrientedBox::new(self.cx, self.cy, self.w, self.h, 0.0)
    }
}

impl Polygon4 {
    pub fn new(pts: [Point; 4]) -> Self {
        Self { pts }
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.pts)
    }

    pub fn centroid(&self) -> Point {
        let (sx, sy) = self
            .pts
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / 4.0, sy / 4.0)
    }

    /// Convex with counter-clockwise winding and positive area.
    pub fn is_convex_ccw(&self) -> bool {
        (0..4).all(|i| {
            let a = self.pts[i];
            let b = self.pts[(i + 1) % 4];
            let c = self.pts[(i + 2) % 4];
            b.sub(a).cross(c.sub(b)) >= 0.0
        }) && self.signed_area() > 0.0
    }

    /// Reorders the vertices counter-clockwise by angle about the centroid,
    /// starting from the vertex with the smallest `atan2` angle.
    pub fn ccw_ordered(&self) -> Self {
        let c = self.centroid();
        let mut pts = self.pts;
        pts.sort_by(|a, b| {
            let ta = (a.y - c.y).atan2(a.x - c.x);
            let tb = (b.y - c.y).atan2(b.x - c.x);
            ta.partial_cmp(&tb).unwrap_or(Ordering::Equal)
        });
        Self { pts }
    }
}

fn shoelace(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub fn obb_to_polygon(b: &OrientedBox) -> Polygon4 {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (0.5 * b.w, 0.5 * b.h);
    let corner = |lx: f64, ly: f64| Point::new(b.cx + c * lx - s * ly, b.cy + s * lx + c * ly);
    Polygon4::new([
        corner(hw, hh),
        corner(-hw, hh),
        corner(-hw, -hh),
        corner(hw, -hh),
    ])
}

/// Inverse of [`obb_to_polygon`] for rectangular input.
pub fn polygon_to_obb(poly: &Polygon4) -> Result<OrientedBox> {
    min_area_rect(poly)
}

/// The minimal axis-aligned box enclosing `b`.
pub fn rectangularize(b: &OrientedBox) -> HorizontalBox {
    let (s, c) = b.theta.sin_cos();
    let (s, c) = (s.abs(), c.abs());
    HorizontalBox::new(b.cx, b.cy, b.w * c + b.h * s, b.w * s + b.h * c)
}

pub fn horizontal_iou(a: &HorizontalBox, b: &HorizontalBox) -> f64 {
    let iw = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let ih = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    if inter < AREA_EPS {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

/// A box with its polygon and bounding radius cached, for repeated IoU queries.
#[derive(Debug, Clone, Copy)]
pub struct PreparedBox {
    obb: OrientedBox,
    poly: Polygon4,
    radius: f64,
}

impl PreparedBox {
    pub fn new(obb: &OrientedBox) -> Self {
        Self {
            obb: *obb,
            poly: obb_to_polygon(obb),
            radius: 0.5 * obb.w.hypot(obb.h),
        }
    }

    pub fn obb(&self) -> &OrientedBox {
        &self.obb
    }

    /// Rotated IoU against another prepared box.
    pub fn iou(&self, other: &PreparedBox) -> f64 {
        let dx = self.obb.cx - other.obb.cx;
        let dy = self.obb.cy - other.obb.cy;
        let reach = self.radius + other.radius;
        if dx * dx + dy * dy >= reach * reach {
            return 0.0;
        }
        // Fixed operand order makes the result exactly symmetric.
        let (first, second) = match lex_cmp(&self.obb.key(), &other.obb.key()) {
            Ordering::Greater => (other, self),
            _ => (self, other),
        };
        let inter = convex_intersection_area(&first.poly, &second.poly);
        if inter < AREA_EPS {
            return 0.0;
        }
        let union = self.obb.area() + other.obb.area() - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

fn lex_cmp(a: &[f64; 5], b: &[f64; 5]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Small fixed-capacity vertex buffer for clipping intermediates.
#[derive(Clone, Copy)]
struct VertexBuf {
    pts: [Point; 16],
    len: usize,
}

impl VertexBuf {
    fn new() -> Self {
        Self {
            pts: [Point::default(); 16],
            len: 0,
        }
    }

    fn push(&mut self, p: Point) {
        // A quad clipped by four half-planes has at most eight vertices.
        if self.len < self.pts.len() {
            self.pts[self.len] = p;
            self.len += 1;
        }
    }

    fn as_slice(&self) -> &[Point] {
        &self.pts[..self.len]
    }
}

/// Sutherland-Hodgman clipping of convex CCW `subject` by convex CCW `clip`,
/// followed by the shoelace area of the result.
pub fn convex_intersection_area(subject: &Polygon4, clip: &Polygon4) -> f64 {
    let mut cur = VertexBuf::new();
    for p in subject.pts {
        cur.push(p);
    }
    for i in 0..4 {
        let c1 = clip.pts[i];
        let c2 = clip.pts[(i + 1) % 4];
        let d = c2.sub(c1);
        let input = cur;
        cur = VertexBuf::new();
        let pts = input.as_slice();
        let n = pts.len();
        if n == 0 {
            break;
        }
        for j in 0..n {
            let s = pts[(j + n - 1) % n];
            let e = pts[j];
            let ss = d.cross(s.sub(c1));
            let se = d.cross(e.sub(c1));
            if se >= 0.0 {
                if ss < 0.0 {
                    cur.push(segment_cut(s, e, ss, se));
                }
                cur.push(e);
            } else if ss >= 0.0 {
                cur.push(segment_cut(s, e, ss, se));
            }
        }
    }
    shoelace(cur.as_slice()).max(0.0)
}

fn segment_cut(s: Point, e: Point, ss: f64, se: f64) -> Point {
    let t = ss / (ss - se);
    Point::new(s.x + t * (e.x - s.x), s.y + t * (e.y - s.y))
}

/// Rotated IoU by convex polygon clipping.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    PreparedBox::new(a).iou(&PreparedBox::new(b))
}

/// Indices sorted by descending score; equal scores keep ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));
    order
}

/// Greedy rotated non-maximum suppression. Returns kept indices in
/// descending score order.
pub fn rotated_nms(boxes: &[OrientedBox], scores: &[f64], iou_thr: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "boxes and scores differ in length");
    let prepared: Vec<PreparedBox> = boxes.iter().map(PreparedBox::new).collect();
    let mut suppressed = vec![false; boxes.len()];
    let order = descending_order(scores);
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && prepared[i].iou(&prepared[j]) > iou_thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Greedy axis-aligned non-maximum suppression with the same ordering rules
/// as [`rotated_nms`].
pub fn horizontal_nms(boxes: &[HorizontalBox], scores: &[f64], iou_thr: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "boxes and scores differ in length");
    let order = descending_order(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && horizontal_iou(&boxes[i], &boxes[j]) > iou_thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(b)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Smallest-area enclosing rotated rectangle (rotating calipers over hull
/// edges), canonicalized.
pub fn min_area_rect(poly: &Polygon4) -> Result<OrientedBox> {
    let hull = convex_hull(&poly.pts);
    let extent = poly
        .pts
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0f64, f64::max);
    if hull.len() < 3 || shoelace(&hull) <= 1e-12 * extent * extent {
        return Err(Error::Degenerate(
            "polygon is collinear or has zero area".into(),
        ));
    }
    let n = hull.len();
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..n {
        let e = hull[(i + 1) % n].sub(hull[i]);
        let len = e.dot(e).sqrt();
        if len == 0.0 {
            continue;
        }
        let u = Point::new(e.x / len, e.y / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let pu = p.dot(u);
            let pv = p.dot(v);
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let mu = 0.5 * (umin + umax);
            let mv = 0.5 * (vmin + vmax);
            let obb = OrientedBox::new(
                mu * u.x + mv * v.x,
                mu * u.y + mv * v.y,
                umax - umin,
                vmax - vmin,
                u.y.atan2(u.x),
            );
            best = Some((area, obb));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::Degenerate("polygon has no usable edge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn rotation_matrix_cases() {
        let r0 = rotation_matrix(0.0);
        assert_eq!(r0, [[1.0, -0.0], [0.0, 1.0]]);
        let r = rotation_matrix(FRAC_PI_2);
        assert_abs_diff_eq!(r[0][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[0][1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1][1], 0.0, epsilon = 1e-15);
        for k in 0..50 {
            let r = rotation_matrix(k as f64 * 0.37 - 9.0);
            for i in 0..2 {
                for j in 0..2 {
                    let v: f64 = (0..2).map(|m| r[i][m] * r[j][m]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
                }
            }
            let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
            assert_abs_diff_eq!(det, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_form() {
        let b = OrientedBox::new(0.0, 0.0, 1.0, 2.0, 0.0);
        assert_eq!((b.w, b.h), (2.0, 1.0));
        assert_abs_diff_eq!(b.theta, -FRAC_PI_2, epsilon = 1e-15);
        let c = OrientedBox::new(0.0, 0.0, 2.0, 1.0, FRAC_PI_2);
        assert_abs_diff_eq!(c.theta, -FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(c.canonical(), c);
        assert!(OrientedBox::new(0.0, 0.0, 3.0, 1.0, 7.0).is_canonical());
    }

    #[test]
    fn polygon_corners() {
        let p = obb_to_polygon(&OrientedBox::new(0.0, 0.0, 2.0, 1.0, 0.0));
        assert_eq!(
            p.pts,
            [
                Point::new(1.0, 0.5),
                Point::new(-1.0, 0.5),
                Point::new(-1.0, -0.5),
                Point::new(1.0, -0.5)
            ]
        );
        assert!(p.is_convex_ccw());
        let q = obb_to_polygon(&OrientedBox::new(0.0, 0.0, 2.0, 2.0, FRAC_PI_4));
        for v in q.pts {
            assert_abs_diff_eq!(v.x.hypot(v.y), 2f64.sqrt(), epsilon = 1e-12);
            assert!(v.x.abs() < 1e-12 || v.y.abs() < 1e-12);
        }
    }

    #[test]
    fn iou_hand_cases() {
        let a = OrientedBox::new(0.0, 0.0, 2.0, 1.0, 0.0);
        assert_abs_diff_eq!(rotated_iou(&a, &a), 1.0, epsilon = 1e-12);
        let b = OrientedBox::new(0.0, 0.0, 2.0, 1.0, FRAC_PI_2);
        assert_abs_diff_eq!(rotated_iou(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
        let far = OrientedBox::new(10.0, 0.0, 2.0, 1.0, 0.3);
        assert_eq!(rotated_iou(&a, &far), 0.0);
        // touching edges only
        let touch = OrientedBox::new(2.0, 0.0, 2.0, 1.0, 0.0);
        assert_eq!(rotated_iou(&a, &touch), 0.0);
    }

    #[test]
    fn horizontal_iou_cases() {
        let a = HorizontalBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(horizontal_iou(&a, &a), 1.0);
        let b = HorizontalBox::new(1.0, 1.0, 2.0, 2.0);
        // (0,0,2,2) vs (2,2,2,2) in corner form: centers (1,1) and (2,2)? use corner boxes
        let c1 = HorizontalBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let c2 = HorizontalBox::from_corners(1.0, 1.0, 3.0, 3.0);
        assert_abs_diff_eq!(horizontal_iou(&c1, &c2), 1.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(horizontal_iou(&a, &b), 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn rectangularize_cases() {
        let h = rectangularize(&OrientedBox::new(3.0, 4.0, 5.0, 2.0, 0.0));
        assert_eq!(h, HorizontalBox::new(3.0, 4.0, 5.0, 2.0));
        let v = rectangularize(&OrientedBox::new(0.0, 0.0, 2.0, 1.0, FRAC_PI_2));
        assert_abs_diff_eq!(v.w, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.h, 2.0, epsilon = 1e-12);
        let d = rectangularize(&OrientedBox::new(0.0, 0.0, 2.0, 2.0, FRAC_PI_4));
        assert_abs_diff_eq!(d.w, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.h, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn min_area_rect_fixed_points() {
        let r = OrientedBox::new(5.0, -3.0, 7.0, 2.0, 0.4);
        let got = min_area_rect(&obb_to_polygon(&r)).unwrap();
        assert_abs_diff_eq!(got.cx, r.cx, epsilon = 1e-9);
        assert_abs_diff_eq!(got.cy, r.cy, epsilon = 1e-9);
        assert_abs_diff_eq!(got.w, r.w, epsilon = 1e-9);
        assert_abs_diff_eq!(got.h, r.h, epsilon = 1e-9);
        assert_abs_diff_eq!(got.theta, r.theta, epsilon = 1e-9);

        let sq = Polygon4::new([
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]);
        let b = min_area_rect(&sq).unwrap();
        assert_abs_diff_eq!(b.cx, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.cy, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.h, 1.0, epsilon = 1e-12);
        assert!(b.is_canonical());
    }

    #[test]
    fn min_area_rect_rejects_collinear() {
        let line = Polygon4::new([
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(3.0, 3.0),
        ]);
        assert!(matches!(min_area_rect(&line), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nms_basics() {
        let a = OrientedBox::new(0.0, 0.0, 4.0, 2.0, 0.2);
        assert_eq!(rotated_nms(&[a], &[0.3], 0.5), vec![0]);
        assert_eq!(rotated_nms(&[a, a], &[0.8, 0.9], 0.5), vec![1]);
        // ties: lower index wins
        assert_eq!(rotated_nms(&[a, a], &[0.5, 0.5], 0.5), vec![0]);
        let h = HorizontalBox::new(0.0, 0.0, 4.0, 2.0);
        assert_eq!(horizontal_nms(&[h, h], &[0.9, 0.8], 0.5), vec![0]);
    }

    #[test]
    fn ccw_reordering() {
        let p = Polygon4::new([
            Point::new(0.0, 0.0),
            Point::new(10.0, 5.0),
            Point::new(10.0, 0.0),
            Point::new(0.0, 5.0),
        ]);
        let q = p.ccw_ordered();
        assert!(q.is_convex_ccw());
        assert_abs_diff_eq!(q.signed_area(), 50.0, epsilon = 1e-12);
    }
}
